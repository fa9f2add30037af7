#include "refgame/drift.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "refgame/error.hpp"

namespace refgame::drift {

LmScore score_under(const nn::ParamStore& model, const agents::DecoderSpec& spec,
                    const nn::Tensor& cond, const std::vector<Message>& messages) {
    require(cond.rows() == static_cast<long>(messages.size()), ErrorCode::shape_mismatch,
            "one conditioning row per message expected");
    LmScore out;
    if (messages.empty()) return out;
    const double floor = std::log(kFloorProbability);
    std::vector<Message> kept(messages.size());
    std::vector<double> penalty(messages.size(), 0.0);
    for (size_t i = 0; i < messages.size(); ++i) {
        kept[i].eos_terminated = messages[i].eos_terminated;
        const auto local = agents::to_local(messages[i].tokens, spec);
        long oov = 0;
        for (size_t t = 0; t < local.size(); ++t) {
            if (local[t] < 0) ++oov;
            else kept[i].tokens.push_back(messages[i].tokens[t]);
        }
        penalty[i] = floor * static_cast<double>(oov);
        out.oov_tokens += oov;
        out.flagged_messages += oov > 0;
    }
    // Score in chunks to bound graph size.
    constexpr size_t kChunk = 64;
    for (size_t start = 0; start < kept.size(); start += kChunk) {
        const size_t end = std::min(kept.size(), start + kChunk);
        const std::vector<Message> chunk(kept.begin() + static_cast<long>(start),
                                         kept.begin() + static_cast<long>(end));
        const auto s = agents::score_messages(
            model, spec, cond.middleRows(static_cast<long>(start), static_cast<long>(end - start)),
            chunk);
        for (size_t i = 0; i < s.size(); ++i) out.per_message.push_back(s[i] + penalty[start + i]);
    }
    double total = 0.0;
    for (double x : out.per_message) total += x;
    out.mean_logprob = total / static_cast<double>(out.per_message.size());
    return out;
}

LmScore structural_drift(const nn::ParamStore& language_model, const agents::Sizes& sizes,
                         const Vocabulary& vocab, const std::vector<Message>& messages) {
    return score_under(language_model, agents::language_model_spec(sizes, vocab),
                       nn::Tensor::Zero(static_cast<long>(messages.size()), 1), messages);
}

LmScore semantic_drift(const nn::ParamStore& captioner, const agents::Sizes& sizes,
                       const Vocabulary& vocab, const std::vector<Message>& messages,
                       const nn::Tensor& targets) {
    return score_under(captioner, agents::captioner_spec(sizes, vocab), targets, messages);
}

Overlap ngram_overlap(const std::vector<std::string>& message,
                      const std::vector<std::vector<std::string>>& captions, int n,
                      const std::vector<std::string>& stopwords) {
    require(n >= 1, ErrorCode::invalid_argument, "n-gram order must be positive");
    std::vector<std::string> words;
    if (n == 1) {
        const std::set<std::string> stop(stopwords.begin(), stopwords.end());
        for (const auto& w : message)
            if (!stop.count(w)) words.push_back(w);
    } else {
        words = message;
    }
    using Gram = std::vector<std::string>;
    std::set<Gram> reference;
    for (const auto& c : captions)
        for (size_t i = 0; i + n <= c.size(); ++i) reference.insert(Gram(c.begin() + i, c.begin() + i + n));
    if (words.size() < static_cast<size_t>(n)) return {0.0, true};
    long hits = 0, total = 0;
    for (size_t i = 0; i + n <= words.size(); ++i, ++total)
        hits += reference.count(Gram(words.begin() + i, words.begin() + i + n)) != 0;
    return {static_cast<double>(hits) / static_cast<double>(total), false};
}

double pragmatic_gap(double joint, double reference) {
    require(joint >= 0.0 && joint <= 1.0 && reference >= 0.0 && reference <= 1.0,
            ErrorCode::invalid_argument, "accuracies must lie in [0, 1]");
    return joint - reference;
}

double pragmatic_gap(const Accuracy& joint, const Accuracy& reference) {
    require(joint.instance_ids == reference.instance_ids, ErrorCode::invalid_argument,
            "joint and reference accuracies were measured on different instances");
    return pragmatic_gap(joint.value, reference.value);
}

DriftReport drift_report(const ReportInputs& in, const nn::ParamStore& language_model,
                         const nn::ParamStore& captioner, const agents::Sizes& sizes,
                         const Vocabulary& vocab) {
    require(in.messages != nullptr, ErrorCode::invalid_argument, "no messages to report on");
    const auto& msgs = *in.messages;
    require(in.captions.size() == msgs.size(), ErrorCode::shape_mismatch,
            "one caption set per message expected");
    DriftReport r;
    r.speaker = in.speaker;
    const LmScore s = structural_drift(language_model, sizes, vocab, msgs);
    const LmScore c = semantic_drift(captioner, sizes, vocab, msgs, in.target_features);
    r.log_p_m = s.mean_logprob;
    r.log_p_m_given_i = c.mean_logprob;
    r.oov_tokens = s.oov_tokens;
    double o1 = 0.0, o3 = 0.0;
    for (size_t i = 0; i < msgs.size(); ++i) {
        std::vector<std::string> words;
        for (int t : msgs[i].tokens) words.push_back(vocab.word(t));
        const Overlap a = ngram_overlap(words, in.captions[i], 1, vocab.stopwords());
        const Overlap b = ngram_overlap(words, in.captions[i], 3, vocab.stopwords());
        o1 += a.value;
        o3 += b.value;
        r.empty_ngram_messages += a.empty || b.empty;
    }
    if (!msgs.empty()) {
        r.overlap1 = o1 / static_cast<double>(msgs.size());
        r.overlap3 = o3 / static_cast<double>(msgs.size());
    }
    r.joint_accuracy = in.joint.value;
    r.reference_accuracy = in.reference.value;
    r.gap = pragmatic_gap(in.joint, in.reference);
    return r;
}

std::string report_csv_header() {
    return "speaker,log_p_m,log_p_m_given_i,overlap1,overlap3,joint_accuracy,reference_accuracy,"
           "gap,oov_tokens,empty_ngram_messages";
}

std::string report_csv_row(const DriftReport& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%ld,%ld", r.speaker.c_str(),
                  r.log_p_m, r.log_p_m_given_i, r.overlap1, r.overlap3, r.joint_accuracy,
                  r.reference_accuracy, r.gap, r.oov_tokens, r.empty_ngram_messages);
    return buf;
}

}  // namespace refgame::drift
