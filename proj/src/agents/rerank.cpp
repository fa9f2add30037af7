#include <cmath>

#include "refgame/agents.hpp"
#include "refgame/error.hpp"

namespace refgame::agents {

void init_reranker(ParamStore& store, const Sizes& sizes, const Vocabulary& vocab, Rng& rng) {
    nn::add_embedding(store, "rr.embed", kRerank, vocab.caption_size(), sizes.rerank_word_dim, rng);
    nn::add_dense(store, "rr.bow", kRerank, sizes.rerank_word_dim, sizes.message_embed, rng);
    nn::add_dense(store, "rr.combine", kRerank, 2 * sizes.adapter_dim, sizes.message_embed, rng);
    nn::add_dense(store, "rr.image", kRerank, sizes.adapter_dim, sizes.message_embed, rng);
}

Tensor bag_of_words(const std::vector<const Message*>& messages, const Vocabulary& vocab,
                    int* skipped) {
    Tensor counts = Tensor::Zero(static_cast<long>(messages.size()), vocab.caption_size());
    for (size_t i = 0; i < messages.size(); ++i)
        for (int t : messages[i]->tokens) {
            if (t < 2 || !vocab.is_caption_token(t)) {
                if (skipped) ++*skipped;
                continue;
            }
            if (!vocab.is_stopword(t)) counts(static_cast<long>(i), t) += 1.0;
        }
    return counts;
}

Var bow_embed(Graph& g, const ParamStore& store, const Tensor& counts) {
    Var summed = nn::matmul(g.constant(counts), g.param(store, "rr.embed.table"));
    return nn::tanh(nn::dense(g, store, "rr.bow", summed));
}

std::vector<double> bow_embed(const ParamStore& store, const Message& message,
                              const Vocabulary& vocab, int* skipped) {
    Graph g(false);
    const Tensor v = bow_embed(g, store, bag_of_words({&message}, vocab, skipped)).value();
    return std::vector<double>(v.data(), v.data() + v.size());
}

namespace {

// Scene adapter of the base captioner, shared by both rerankers.
Var speaker_adapter(Graph& g, const ParamStore& store, const Tensor& u) {
    return nn::tanh(nn::dense(g, store, "captioner.adapter", g.constant(u)));
}

struct Shape {
    int batch;
    int per;
};

Shape check_batch(const RerankBatch& batch) {
    const int b = static_cast<int>(batch.target_index.size());
    require(b > 0, ErrorCode::invalid_argument, "empty rerank batch");
    require(batch.counts.rows() % b == 0 && batch.counts.rows() > 0, ErrorCode::shape_mismatch,
            "candidate rows are not a multiple of the batch");
    const int n = static_cast<int>(batch.counts.rows() / b);
    require(batch.base_logprobs.rows() == b && batch.base_logprobs.cols() == n,
            ErrorCode::shape_mismatch, "base log-probs must be [batch x candidates]");
    require(batch.candidate_features.size() >= 2, ErrorCode::invalid_argument,
            "reranking needs at least two images");
    for (const auto& f : batch.candidate_features)
        require(f.rows() == b, ErrorCode::shape_mismatch, "candidate features must have one row per instance");
    for (int t : batch.target_index)
        require(t >= 0 && t < static_cast<int>(batch.candidate_features.size()),
                ErrorCode::invalid_argument, "target index out of range");
    require(batch.bias.size() == 0 || (batch.bias.rows() == b && batch.bias.cols() == n),
            ErrorCode::shape_mismatch, "candidate bias must be [batch x candidates]");
    return {b, n};
}

std::vector<int> expand_ids(int batch, int per) {
    std::vector<int> ids(static_cast<size_t>(batch) * per);
    for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i) / per;
    return ids;
}

Var finish(Graph& g, Var logits, const RerankBatch& batch) {
    if (batch.bias.size() != 0) logits = nn::add(logits, g.constant(batch.bias));
    return nn::log_softmax(logits);
}

}  // namespace

Var poe_log_policy(Graph& g, const ParamStore& store, const RerankBatch& batch, double lambda_f,
                   double lambda_s) {
    const Shape s = check_batch(batch);
    const long f = batch.candidate_features[0].cols();
    Tensor ut(s.batch, f), ud = Tensor::Zero(s.batch, f);
    const double n_distractors = static_cast<double>(batch.candidate_features.size() - 1);
    for (int b = 0; b < s.batch; ++b)
        for (size_t c = 0; c < batch.candidate_features.size(); ++c) {
            if (static_cast<int>(c) == batch.target_index[b])
                ut.row(b) = batch.candidate_features[c].row(b);
            else
                ud.row(b) += batch.candidate_features[c].row(b) / n_distractors;
        }
    Var parts[] = {speaker_adapter(g, store, ut), speaker_adapter(g, store, ud)};
    Var combined = nn::dense(g, store, "rr.combine", nn::concat_cols(parts));
    const auto ids = expand_ids(s.batch, s.per);
    Var task = nn::row_dot(nn::gather_rows(combined, ids), bow_embed(g, store, batch.counts));
    Var task_lp = nn::log_softmax(nn::reshape(task, s.batch, s.per));
    Var base_lp = nn::log_softmax(g.constant(batch.base_logprobs));
    return finish(g, nn::add(nn::scale(task_lp, lambda_f), nn::scale(base_lp, lambda_s)), batch);
}

Var noisy_channel_log_policy(Graph& g, const ParamStore& store, const RerankBatch& batch) {
    const Shape s = check_batch(batch);
    const auto ids = expand_ids(s.batch, s.per);
    Var bow = bow_embed(g, store, batch.counts);
    std::vector<Var> per_image;
    for (const auto& u : batch.candidate_features) {
        Var img = nn::dense(g, store, "rr.image", speaker_adapter(g, store, u));
        per_image.push_back(nn::row_dot(bow, nn::gather_rows(img, ids)));
    }
    Var listener_lp = nn::log_softmax(nn::concat_cols(per_image));  // [B*N x C]
    std::vector<int> target_rows(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) target_rows[i] = batch.target_index[ids[i]];
    Var p_t = nn::reshape(nn::pick(listener_lp, target_rows), s.batch, s.per);
    Var prior = nn::log_softmax(g.constant(batch.base_logprobs));
    return finish(g, nn::add(p_t, prior), batch);
}

std::vector<double> poe_policy_from_scores(const std::vector<double>& task,
                                           const std::vector<double>& base, double lambda_f,
                                           double lambda_s) {
    require(task.size() == base.size() && !task.empty(), ErrorCode::shape_mismatch,
            "task scores and base log-probs differ in length");
    Graph g(false);
    Tensor t(1, static_cast<long>(task.size())), b(1, static_cast<long>(base.size()));
    for (size_t i = 0; i < task.size(); ++i) {
        t(0, static_cast<long>(i)) = task[i];
        b(0, static_cast<long>(i)) = base[i];
    }
    Var lp = nn::log_softmax(nn::add(nn::scale(nn::log_softmax(g.constant(t)), lambda_f),
                                     nn::scale(nn::log_softmax(g.constant(b)), lambda_s)));
    std::vector<double> out(task.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(lp.value()(0, static_cast<long>(i)));
    return out;
}

std::vector<double> noisy_channel_policy_from_scores(
    const std::vector<std::vector<double>>& image_scores, int target,
    const std::vector<double>& base) {
    require(image_scores.size() == base.size() && !base.empty(), ErrorCode::shape_mismatch,
            "image scores and base log-probs differ in length");
    Graph g(false);
    const long n = static_cast<long>(base.size());
    const long c = static_cast<long>(image_scores[0].size());
    require(target >= 0 && target < c, ErrorCode::invalid_argument, "target index out of range");
    Tensor s(n, c), b(1, n);
    for (long i = 0; i < n; ++i) {
        require(static_cast<long>(image_scores[i].size()) == c, ErrorCode::shape_mismatch,
                "ragged image scores");
        for (long j = 0; j < c; ++j) s(i, j) = image_scores[i][j];
        b(0, i) = base[i];
    }
    std::vector<int> rows(static_cast<size_t>(n), target);
    Var p_t = nn::reshape(nn::pick(nn::log_softmax(g.constant(s)), rows), 1, static_cast<int>(n));
    Var lp = nn::log_softmax(nn::add(p_t, nn::log_softmax(g.constant(b))));
    std::vector<double> out(base.size());
    for (long i = 0; i < n; ++i) out[i] = std::exp(lp.value()(0, i));
    return out;
}

namespace {

RerankBatch single_batch(const std::vector<Candidate>& candidates, const Vocabulary& vocab,
                         const std::vector<std::vector<double>>& features, int target_index) {
    require(!candidates.empty(), ErrorCode::invalid_argument, "no candidates to rerank");
    RerankBatch batch;
    std::vector<const Message*> msgs;
    batch.base_logprobs.resize(1, static_cast<long>(candidates.size()));
    for (size_t i = 0; i < candidates.size(); ++i) {
        require(candidates[i].base_logprob.has_value(), ErrorCode::invalid_argument,
                "candidate " + std::to_string(i) + " has no base log-prob");
        batch.base_logprobs(0, static_cast<long>(i)) = *candidates[i].base_logprob;
        msgs.push_back(&candidates[i].message);
    }
    batch.counts = bag_of_words(msgs, vocab);
    for (const auto& f : features) batch.candidate_features.push_back(feature_rows({&f}));
    batch.target_index = {target_index};
    return batch;
}

RerankResult select(Var log_policy, bool greedy, Rng& rng) {
    RerankResult r;
    const Tensor& lp = log_policy.value();
    for (long i = 0; i < lp.cols(); ++i) r.policy.push_back(std::exp(lp(0, i)));
    r.chosen = greedy ? argmax_lowest(r.policy) : rng.categorical(r.policy);
    return r;
}

}  // namespace

RerankResult poe_rerank(const SpeakerPolicy& policy, const Vocabulary& vocab,
                        const std::vector<Candidate>& candidates,
                        const std::vector<double>& target, const std::vector<double>& distractor,
                        bool greedy, Rng& rng) {
    RerankBatch batch = single_batch(candidates, vocab, {target, distractor}, 0);
    Graph g(false);
    return select(poe_log_policy(g, policy.params, batch, policy.rerank.lambda_f,
                                 policy.rerank.lambda_s),
                  greedy, rng);
}

RerankResult noisy_channel_rerank(const SpeakerPolicy& policy, const Vocabulary& vocab,
                                  const std::vector<Candidate>& candidates,
                                  const std::vector<std::vector<double>>& candidate_features,
                                  int target_index, bool greedy, Rng& rng) {
    RerankBatch batch = single_batch(candidates, vocab, candidate_features, target_index);
    Graph g(false);
    return select(noisy_channel_log_policy(g, policy.params, batch), greedy, rng);
}

}  // namespace refgame::agents
