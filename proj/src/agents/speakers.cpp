#include <algorithm>
#include <set>

#include "refgame/agents.hpp"
#include "refgame/error.hpp"

namespace refgame::agents {

std::vector<std::string> default_stopwords() {
    return {"a", "an", "the", "is", "are", "of", "and", "by", "on", "in", "with", "to"};
}

Vocabulary::Vocabulary(const world::Catalog& catalog, int emergent_symbols)
    : stopwords_(default_stopwords()) {
    require(emergent_symbols >= 0, ErrorCode::invalid_argument, "negative emergent vocabulary");
    words_ = {"<eos>", "<unk>"};
    for (auto& w : world::caption_words(catalog)) words_.push_back(w);
    caption_size_ = static_cast<int>(words_.size());
    for (int i = 0; i < emergent_symbols; ++i) words_.push_back("s" + std::to_string(i));
    stop_mask_.assign(words_.size(), false);
    for (const auto& w : stopwords_)
        if (int i = id(w); i >= 0) stop_mask_[i] = true;
}

const std::string& Vocabulary::word(int i) const {
    require(i >= 0 && i < size(), ErrorCode::invalid_argument,
            "token id " + std::to_string(i) + " outside vocabulary");
    return words_[i];
}

int Vocabulary::id(std::string_view w) const {
    for (int i = 0; i < size(); ++i)
        if (words_[i] == w) return i;
    return -1;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& words) const {
    std::vector<int> out;
    out.reserve(words.size());
    for (const auto& w : words) {
        const int i = id(w);
        require(i >= 2 && i < caption_size_, ErrorCode::invalid_argument,
                "word '" + w + "' is not in the caption vocabulary");
        out.push_back(i);
    }
    return out;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
    std::string s;
    for (int i : ids) {
        if (!s.empty()) s += ' ';
        s += word(i);
    }
    return s;
}

bool Vocabulary::is_stopword(int i) const { return i >= 0 && i < size() && stop_mask_[i]; }

double Message::logprob() const {
    double s = 0.0;
    for (double x : token_logprobs) s += x;
    return s;
}

namespace {

constexpr std::pair<SpeakerVariant, const char*> kVariantNames[] = {
    {SpeakerVariant::emergent, "emergent"},
    {SpeakerVariant::captioner_greedy, "captioner_greedy"},
    {SpeakerVariant::captioner_sample, "captioner_sample"},
    {SpeakerVariant::finetuned, "finetuned"},
    {SpeakerVariant::multitask, "multitask"},
    {SpeakerVariant::poe_reranker, "poe"},
    {SpeakerVariant::noisy_channel, "noisy_channel"},
    {SpeakerVariant::oracle_random, "oracle_random"},
    {SpeakerVariant::oracle_discriminative, "oracle_discriminative"},
};

}  // namespace

const char* variant_name(SpeakerVariant v) {
    for (auto& [k, n] : kVariantNames)
        if (k == v) return n;
    return "unknown";
}

SpeakerVariant parse_variant(std::string_view name) {
    for (auto& [k, n] : kVariantNames)
        if (name == n) return k;
    fail(ErrorCode::invalid_argument, "unknown speaker variant '" + std::string(name) + "'");
}

const char* regime_name(ListenerRegime r) { return r == ListenerRegime::joint ? "joint" : "fixed"; }

Tensor feature_rows(const std::vector<const std::vector<double>*>& rows) {
    require(!rows.empty(), ErrorCode::invalid_argument, "no feature rows");
    const long f = static_cast<long>(rows.front()->size());
    Tensor t(static_cast<long>(rows.size()), f);
    for (size_t i = 0; i < rows.size(); ++i) {
        require(static_cast<long>(rows[i]->size()) == f, ErrorCode::shape_mismatch,
                "feature rows differ in length");
        for (long j = 0; j < f; ++j) t(static_cast<long>(i), j) = (*rows[i])[j];
    }
    return t;
}

// ---- decoder-backed speakers -----------------------------------------------------

Message speak_emergent(const SpeakerPolicy& policy, const Sizes& sizes, const Vocabulary& vocab,
                       const std::vector<double>& target, const std::vector<double>& distractor,
                       bool greedy, Rng& rng) {
    require(policy.variant == SpeakerVariant::emergent, ErrorCode::invalid_argument,
            "speak_emergent needs an emergent policy");
    std::vector<double> u = target;
    u.insert(u.end(), distractor.begin(), distractor.end());
    const DecoderSpec spec = emergent_spec(sizes, vocab);
    Graph g(false);
    Rollout r = decoder_rollout(g, policy.params, spec, feature_rows({&u}), 1.0, greedy, rng);
    std::vector<double> lps;
    for (size_t t = 0; t < r.step_tokens.size(); ++t)
        lps.push_back(r.step_log_probs[t].value()(0, r.step_tokens[t][0]));
    return to_message(r.sequences[0], lps, r.eos_terminated[0], spec, vocab);
}

Message speak_caption_greedy(const SpeakerPolicy& policy, const Sizes& sizes,
                             const Vocabulary& vocab, const std::vector<double>& target) {
    return decode_greedy(policy.params, captioner_spec(sizes, vocab), vocab,
                         feature_rows({&target}))[0];
}

Message speak_caption_sample(const SpeakerPolicy& policy, const Sizes& sizes,
                             const Vocabulary& vocab, const std::vector<double>& target, int k,
                             double tau, Rng& rng) {
    require(k >= 1, ErrorCode::invalid_argument, "k must be at least 1");
    std::vector<const std::vector<double>*> rows(static_cast<size_t>(k), &target);
    const auto samples =
        decode_samples(policy.params, captioner_spec(sizes, vocab), vocab, feature_rows(rows), tau, rng);
    size_t best = 0;
    for (size_t i = 1; i < samples.size(); ++i)
        if (samples[i].logprob() > samples[best].logprob()) best = i;
    return samples[best];
}

// ---- oracles -------------------------------------------------------------------------

Message caption_message(const world::Caption& caption, const Vocabulary& vocab) {
    Message m;
    m.tokens = vocab.encode(caption.tokens);
    m.text = caption.text();
    m.eos_terminated = true;
    return m;
}

Message oracle_random(const std::vector<world::Caption>& target_captions,
                      const Vocabulary& vocab, Rng& rng) {
    require(!target_captions.empty(), ErrorCode::invalid_argument, "target has no captions");
    return caption_message(target_captions[rng.below(target_captions.size())], vocab);
}

std::optional<int> discriminative_choice(const std::vector<world::Caption>& target_captions,
                                         const std::vector<world::Caption>& distractor_captions,
                                         const std::vector<std::string>& stopwords) {
    require(!target_captions.empty() && !distractor_captions.empty(), ErrorCode::invalid_argument,
            "discriminative oracle needs target and distractor captions");
    const std::set<std::string> stop(stopwords.begin(), stopwords.end());
    auto content = [&](const world::Caption& c) {
        std::set<std::string> s;
        for (const auto& w : c.tokens)
            if (!stop.count(w)) s.insert(w);
        return s;
    };
    std::vector<std::set<std::string>> dist;
    for (const auto& d : distractor_captions) dist.push_back(content(d));

    std::optional<int> best;
    double best_score = 0.0;
    for (size_t i = 0; i < target_captions.size(); ++i) {
        const auto c = content(target_captions[i]);
        if (c.empty()) continue;
        double score = 0.0;
        for (const auto& d : dist) {
            int shared = 0;
            for (const auto& w : c) shared += static_cast<int>(d.count(w));
            score = std::max(score, static_cast<double>(shared) / static_cast<double>(c.size()));
        }
        if (!best || score < best_score) {
            best = static_cast<int>(i);
            best_score = score;
        }
    }
    return best;
}

Message oracle_discriminative(const std::vector<world::Caption>& target_captions,
                              const std::vector<world::Caption>& distractor_captions,
                              const Vocabulary& vocab, Rng& rng) {
    const auto pick = discriminative_choice(target_captions, distractor_captions, vocab.stopwords());
    if (!pick) return oracle_random(target_captions, vocab, rng);
    return caption_message(target_captions[*pick], vocab);
}

}  // namespace refgame::agents
