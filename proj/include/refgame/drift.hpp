#pragma once

// Language-drift measures: structural (unconditional LM), semantic
// (conditional LM and n-gram overlap) and pragmatic (accuracy gap).

#include <cstdint>
#include <string>
#include <vector>

#include "refgame/agents.hpp"

namespace refgame::drift {

using agents::Message;
using agents::Vocabulary;

inline constexpr double kFloorProbability = 1e-10;

struct LmScore {
    double mean_logprob = 0.0;
    std::vector<double> per_message;
    long oov_tokens = 0;     // tokens the LM cannot emit, each scored at the floor
    long flagged_messages = 0;  // messages with at least one such token
};

// Sequence log-probability of each message (incl. <eos> when the message
// terminated) under `spec`. Tokens outside the decoder's range are dropped
// from the scored sequence and contribute log(kFloorProbability) each.
// `cond` has one row per message.
LmScore score_under(const nn::ParamStore& model, const agents::DecoderSpec& spec,
                    const nn::Tensor& cond, const std::vector<Message>& messages);

// Mean log p(m) under the frozen unconditional language model.
LmScore structural_drift(const nn::ParamStore& language_model, const agents::Sizes& sizes,
                         const Vocabulary& vocab, const std::vector<Message>& messages);

// Mean log p(m | target) under the frozen captioner; `targets` holds the
// target scene features, one row per message.
LmScore semantic_drift(const nn::ParamStore& captioner, const agents::Sizes& sizes,
                       const Vocabulary& vocab, const std::vector<Message>& messages,
                       const nn::Tensor& targets);

struct Overlap {
    double value = 0.0;
    bool empty = false;  // the message had no n-grams; value is 0
};

// Fraction of the message's n-grams (by position) that occur in any of the
// captions. For n = 1 stop words are removed from the message first.
Overlap ngram_overlap(const std::vector<std::string>& message,
                      const std::vector<std::vector<std::string>>& captions, int n,
                      const std::vector<std::string>& stopwords);

struct Accuracy {
    double value = 0.0;
    std::vector<int64_t> instance_ids;
};

double pragmatic_gap(double joint, double reference);
// Checks that both accuracies were measured on the same instances.
double pragmatic_gap(const Accuracy& joint, const Accuracy& reference);

struct DriftReport {
    std::string speaker;
    double log_p_m = 0.0;
    double log_p_m_given_i = 0.0;
    double overlap1 = 0.0;
    double overlap3 = 0.0;
    double joint_accuracy = 0.0;
    double reference_accuracy = 0.0;
    double gap = 0.0;
    long oov_tokens = 0;
    long empty_ngram_messages = 0;
};

struct ReportInputs {
    std::string speaker;
    const std::vector<Message>* messages = nullptr;
    nn::Tensor target_features;                                   // one row per message
    std::vector<std::vector<std::vector<std::string>>> captions;  // ground truth per message
    Accuracy joint;
    Accuracy reference;
};

DriftReport drift_report(const ReportInputs& in, const nn::ParamStore& language_model,
                         const nn::ParamStore& captioner, const agents::Sizes& sizes,
                         const Vocabulary& vocab);

std::string report_csv_header();
std::string report_csv_row(const DriftReport& r);

}  // namespace refgame::drift
