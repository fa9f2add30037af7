#include <algorithm>
#include <cmath>

#include "refgame/agents.hpp"
#include "refgame/error.hpp"

namespace refgame::agents {

DecoderSpec captioner_spec(const Sizes& sizes, const Vocabulary& vocab) {
    return {"captioner", kSpeakerAdapter, kSpeakerLstm, sizes.feature_dim, vocab.caption_size(),
            0, sizes.max_caption_length, true};
}

// The unconditional LM is the captioner architecture fed a constant zero
// scene vector of width 1.
DecoderSpec language_model_spec(const Sizes& sizes, const Vocabulary& vocab) {
    return {"lm", kLanguageModel, kLanguageModel, 1, vocab.caption_size(), 0,
            sizes.max_caption_length, true};
}

DecoderSpec emergent_spec(const Sizes& sizes, const Vocabulary& vocab) {
    return {"emergent", kSpeakerAdapter, kSpeakerLstm, 2 * sizes.feature_dim, vocab.emergent_size(),
            vocab.emergent_offset(), sizes.emergent_length, false};
}

void init_decoder(ParamStore& store, const DecoderSpec& spec, const Sizes& sizes, Rng& rng) {
    require(spec.cond_dim > 0 && spec.output_vocab > 0 && spec.max_length > 0,
            ErrorCode::invalid_argument, "decoder '" + spec.prefix + "' has empty dimensions");
    const std::string& p = spec.prefix;
    nn::add_dense(store, p + ".adapter", spec.adapter_group, spec.cond_dim, sizes.adapter_dim, rng);
    nn::add_embedding(store, p + ".embed", spec.lstm_group, spec.output_vocab + 1, sizes.word_dim, rng);
    store.add_uniform(p + ".cond.w", spec.lstm_group, sizes.adapter_dim, 4 * sizes.hidden,
                      1.0 / std::sqrt(static_cast<double>(sizes.adapter_dim)), rng);
    nn::add_lstm(store, p + ".cell", spec.lstm_group, sizes.word_dim, sizes.hidden, rng);
    nn::add_dense(store, p + ".out", spec.lstm_group, sizes.hidden, spec.output_vocab, rng);
}

namespace {

struct Conditioning {
    Var gates;  // [B x 4H]
    int hidden;
};

Conditioning condition(Graph& g, const ParamStore& store, const DecoderSpec& spec,
                       const Tensor& cond) {
    if (cond.cols() != spec.cond_dim)
        fail(ErrorCode::shape_mismatch, "decoder '" + spec.prefix + "': conditioning width " +
                                            std::to_string(cond.cols()) + " but expects " +
                                            std::to_string(spec.cond_dim));
    Var a = nn::tanh(nn::dense(g, store, spec.prefix + ".adapter", g.constant(cond)));
    Var gates = nn::matmul(a, g.param(store, spec.prefix + ".cond.w"));
    return {gates, nn::lstm_hidden(store, spec.prefix + ".cell")};
}

Var step_log_probs(Graph& g, const ParamStore& store, const DecoderSpec& spec,
                   const std::vector<int>& input, nn::LstmState& state, Var gates) {
    Var x = nn::embed(g, store, spec.prefix + ".embed", input);
    state = nn::lstm_step(g, store, spec.prefix + ".cell", x, state, gates);
    return nn::log_softmax(nn::dense(g, store, spec.prefix + ".out", state.h));
}

int argmax_row(const Tensor& t, long row) {
    int best = 0;
    for (long j = 1; j < t.cols(); ++j)
        if (t(row, j) > t(row, best)) best = static_cast<int>(j);
    return best;
}

}  // namespace

std::vector<int> to_local(const std::vector<int>& tokens, const DecoderSpec& spec) {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (int t : tokens) {
        const int l = t - spec.token_offset;
        const bool ok = l >= 0 && l < spec.output_vocab && !(spec.has_eos && l == 0);
        out.push_back(ok ? l : -1);
    }
    return out;
}

TeacherForced decoder_teacher_forced(Graph& g, const ParamStore& store, const DecoderSpec& spec,
                                     const Tensor& cond,
                                     const std::vector<std::vector<int>>& sequences,
                                     const std::vector<bool>* eos_terminated) {
    const int batch = static_cast<int>(sequences.size());
    require(batch > 0 && cond.rows() == batch, ErrorCode::shape_mismatch,
            "decoder '" + spec.prefix + "': " + std::to_string(sequences.size()) +
                " sequences for " + std::to_string(cond.rows()) + " conditioning rows");
    require(!eos_terminated || static_cast<int>(eos_terminated->size()) == batch,
            ErrorCode::shape_mismatch, "eos flags do not match the batch");
    std::vector<int> scored(batch);  // steps scored per row
    int steps = 0;
    for (int b = 0; b < batch; ++b) {
        for (int tok : sequences[b])
            require(tok >= 0 && tok < spec.output_vocab && !(spec.has_eos && tok == 0),
                    ErrorCode::invalid_argument,
                    "token " + std::to_string(tok) + " outside the vocabulary of '" +
                        spec.prefix + "'");
        const bool eos = spec.has_eos && (!eos_terminated || (*eos_terminated)[b]);
        scored[b] = static_cast<int>(sequences[b].size()) + (eos ? 1 : 0);
        steps = std::max(steps, scored[b]);
    }

    TeacherForced out;
    out.mask = Tensor::Zero(batch, steps);
    Conditioning c = condition(g, store, spec, cond);
    nn::LstmState state = nn::lstm_zero_state(g, batch, c.hidden);
    Var total;
    std::vector<int> input(batch, spec.bos());
    for (int t = 0; t < steps; ++t) {
        Var lp = step_log_probs(g, store, spec, input, state, c.gates);
        std::vector<int> target(batch, 0);
        Tensor m(batch, 1);
        for (int b = 0; b < batch; ++b) {
            const auto& s = sequences[b];
            if (t < static_cast<int>(s.size())) target[b] = s[t];
            m(b, 0) = t < scored[b] ? 1.0 : 0.0;
            out.mask(b, t) = m(b, 0);
            input[b] = target[b];
        }
        Var picked = nn::mul(nn::pick(lp, target), g.constant(m));
        total = total.valid() ? nn::add(total, picked) : picked;
        out.step_log_probs.push_back(lp);
        out.targets.push_back(std::move(target));
    }
    out.sequence_logprob = total.valid() ? total : g.constant(Tensor::Zero(batch, 1));
    return out;
}

Rollout decoder_rollout(Graph& g, const ParamStore& store, const DecoderSpec& spec,
                        const Tensor& cond, double temperature, bool greedy, Rng& rng) {
    const int batch = static_cast<int>(cond.rows());
    require(batch > 0, ErrorCode::invalid_argument, "empty rollout batch");
    require(greedy || temperature > 0.0, ErrorCode::invalid_argument,
            "sampling temperature must be positive");
    Conditioning c = condition(g, store, spec, cond);
    nn::LstmState state = nn::lstm_zero_state(g, batch, c.hidden);

    Rollout out;
    out.sequences.assign(batch, {});
    out.eos_terminated.assign(batch, false);
    std::vector<bool> done(batch, false);
    std::vector<Tensor> masks;
    Var total;
    std::vector<int> input(batch, spec.bos());
    std::vector<double> weights(spec.output_vocab);
    for (int t = 0; t < spec.max_length; ++t) {
        Var lp = step_log_probs(g, store, spec, input, state, c.gates);
        const Tensor& v = lp.value();
        std::vector<int> tok(batch, 0);
        Tensor m = Tensor::Zero(batch, 1);
        for (int b = 0; b < batch; ++b) {
            if (done[b]) continue;
            m(b, 0) = 1.0;
            if (greedy) {
                tok[b] = argmax_row(v, b);
            } else {
                double mx = v(b, 0) / temperature;
                for (int j = 1; j < spec.output_vocab; ++j) mx = std::max(mx, v(b, j) / temperature);
                for (int j = 0; j < spec.output_vocab; ++j)
                    weights[j] = std::exp(v(b, j) / temperature - mx);
                tok[b] = rng.categorical(weights);
            }
            if (spec.has_eos && tok[b] == 0) {
                done[b] = true;
                out.eos_terminated[b] = true;
            } else {
                out.sequences[b].push_back(tok[b]);
            }
        }
        Var picked = nn::mul(nn::pick(lp, tok), g.constant(m));
        total = total.valid() ? nn::add(total, picked) : picked;
        out.step_log_probs.push_back(lp);
        out.step_tokens.push_back(tok);
        masks.push_back(std::move(m));
        input = tok;
        if (std::all_of(done.begin(), done.end(), [](bool d) { return d; })) break;
    }
    out.mask.resize(batch, static_cast<long>(masks.size()));
    for (size_t t = 0; t < masks.size(); ++t) out.mask.col(static_cast<long>(t)) = masks[t].col(0);
    out.sequence_logprob = total;
    return out;
}

Message to_message(const std::vector<int>& local, const std::vector<double>& step_logprobs,
                   bool eos_terminated, const DecoderSpec& spec, const Vocabulary& vocab) {
    Message m;
    for (int l : local) m.tokens.push_back(l + spec.token_offset);
    m.text = vocab.detokenize(m.tokens);
    m.token_logprobs = step_logprobs;
    m.eos_terminated = eos_terminated;
    return m;
}

namespace {

std::vector<Message> rollout_messages(const ParamStore& store, const DecoderSpec& spec,
                                      const Vocabulary& vocab, const Tensor& cond,
                                      double temperature, bool greedy, Rng& rng) {
    Graph g(false);
    Rollout r = decoder_rollout(g, store, spec, cond, temperature, greedy, rng);
    std::vector<Message> out;
    out.reserve(r.sequences.size());
    for (size_t b = 0; b < r.sequences.size(); ++b) {
        std::vector<double> lps;
        for (size_t t = 0; t < r.step_tokens.size(); ++t)
            if (r.mask(static_cast<long>(b), static_cast<long>(t)) > 0.0)
                lps.push_back(r.step_log_probs[t].value()(static_cast<long>(b), r.step_tokens[t][b]));
        out.push_back(to_message(r.sequences[b], lps, r.eos_terminated[b], spec, vocab));
    }
    return out;
}

}  // namespace

std::vector<Message> decode_greedy(const ParamStore& store, const DecoderSpec& spec,
                                   const Vocabulary& vocab, const Tensor& cond) {
    Rng unused(0);
    return rollout_messages(store, spec, vocab, cond, 1.0, true, unused);
}

std::vector<Message> decode_samples(const ParamStore& store, const DecoderSpec& spec,
                                    const Vocabulary& vocab, const Tensor& cond,
                                    double temperature, Rng& rng) {
    return rollout_messages(store, spec, vocab, cond, temperature, false, rng);
}

std::vector<double> score_messages(const ParamStore& store, const DecoderSpec& spec,
                                   const Tensor& cond, const std::vector<Message>& messages) {
    std::vector<std::vector<int>> seqs;
    std::vector<bool> eos;
    for (const auto& m : messages) {
        seqs.push_back(to_local(m.tokens, spec));
        eos.push_back(m.eos_terminated);
    }
    Graph g(false);
    TeacherForced tf = decoder_teacher_forced(g, store, spec, cond, seqs, &eos);
    const Tensor& v = tf.sequence_logprob.value();
    return std::vector<double>(v.data(), v.data() + v.rows());
}

}  // namespace refgame::agents
