#pragma once

// Losses and the training phases for every speaker regime.

#include <array>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "refgame/agents.hpp"
#include "refgame/world.hpp"

namespace refgame::training {

using agents::DecoderSpec;
using agents::ListenerRegime;
using agents::Message;
using agents::SpeakerPolicy;
using agents::SpeakerVariant;
using nn::Graph;
using nn::ParamStore;
using nn::Tensor;
using nn::Var;

// ---- data ------------------------------------------------------------------------

struct DataConfig {
    world::Catalog catalog;
    int scenes = 10000;
    int captions_per_scene = 6;
    uint64_t seed = 1;
    std::array<double, 3> ratios = {0.8, 0.1, 0.1};
    int pairs_per_split = 200;
};

// Corpus, splits and everything derived from them that training reuses.
struct Dataset {
    world::Corpus corpus;
    world::DatasetSplits splits;
    agents::Vocabulary vocab;
    agents::Sizes sizes;
    std::vector<std::vector<double>> features;               // by scene id
    std::vector<std::vector<std::vector<int>>> caption_ids;  // by scene id

    const std::vector<double>& u(int64_t id) const { return features.at(static_cast<size_t>(id)); }
};

Dataset make_dataset(const DataConfig& config, const agents::Sizes& sizes);
Dataset assemble_dataset(world::Corpus corpus, world::DatasetSplits splits,
                         const agents::Sizes& sizes);

// ---- losses ------------------------------------------------------------------------

// Mean over active (row, step) cells of the per-step policy entropy.
Var masked_mean_entropy(Graph& g, const std::vector<Var>& step_log_probs, const Tensor& mask);

// Exponential moving average of rewards; value() is 0 when disabled.
class Baseline {
public:
    Baseline(bool enabled, double decay) : enabled_(enabled), decay_(decay) {}
    double value() const { return enabled_ ? value_ : 0.0; }
    void update(const std::vector<double>& rewards);

private:
    bool enabled_;
    double decay_;
    double value_ = 0.0;
    bool started_ = false;
};

// -mean[(r - b) * log p(m)] - entropy_coeff * entropy. `sequence_logprob`
// is [B x 1]; `entropy` a scalar.
Var reinforce_loss(Var sequence_logprob, Var entropy, const std::vector<double>& rewards,
                   double entropy_coeff, double baseline);

struct StructuralLoss {
    Var sequence_nll;  // mean over captions of the summed token NLL (incl. <eos>)
    Var token_nll;     // mean NLL per scored token
};
StructuralLoss structural_loss(Graph& g, const ParamStore& store, const DecoderSpec& spec,
                               const Tensor& cond,
                               const std::vector<std::vector<int>>& captions);

// Mean over active cells of KL(current || pretrained) between full
// next-token distributions. `pretrained` holds log-probabilities.
Var kl_regularizer(Graph& g, const std::vector<Var>& current, const std::vector<Tensor>& pretrained,
                   const Tensor& mask);

Var multitask_loss(Var functional, Var structural, double lambda_f, double lambda_s);

// ---- metrics -------------------------------------------------------------------------

struct MetricRow {
    long step = 0;
    std::string phase;
    double loss = 0.0;
    double functional = 0.0;
    double structural = 0.0;
    double kl = 0.0;
    double entropy = 0.0;
    double reward = 0.0;
    double accuracy = 0.0;
};

// Append-only CSV; rows are also kept in memory.
class MetricsLog {
public:
    MetricsLog() = default;
    explicit MetricsLog(const std::filesystem::path& path);
    void write(const MetricRow& row);
    const std::vector<MetricRow>& rows() const { return rows_; }

private:
    std::unique_ptr<std::ofstream> out_;
    std::vector<MetricRow> rows_;
};

// ---- pretraining -------------------------------------------------------------------------

struct PretrainConfig {
    int captioner_epochs = 6;
    int lm_epochs = 4;
    int listener_steps = 3000;
    int batch_size = 64;
    double learning_rate = 3e-3;
    double listener_learning_rate = 3e-3;
};

ParamStore pretrain_captioner(const Dataset& data, const PretrainConfig& config, uint64_t seed,
                              MetricsLog* log = nullptr);
ParamStore pretrain_language_model(const Dataset& data, const PretrainConfig& config,
                                   uint64_t seed, MetricsLog* log = nullptr);
// Cross-entropy best response to the discriminative oracle on training
// pairs; returned with every group frozen.
ParamStore pretrain_fixed_listener(const Dataset& data, const PretrainConfig& config,
                                   uint64_t seed, MetricsLog* log = nullptr);

// ---- speaker phases ------------------------------------------------------------------------

enum class UnfreezeSet { rerank_only, speaker_adapter, both_adapters };
const char* unfreeze_name(UnfreezeSet u);
UnfreezeSet parse_unfreeze(std::string_view name);

struct TrainingConfig {
    double lambda_f = 1.0;
    double lambda_s = 0.0;
    double kl_weight = 0.1;
    double entropy_coeff = 0.1;
    bool baseline = true;
    double baseline_decay = 0.95;
    int episodes = 1000;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double listener_learning_rate = 1e-3;
    ListenerRegime listener = ListenerRegime::joint;
    // Caption-language joint listeners start as a copy of the fixed listener
    // instead of a fresh message encoder.
    bool listener_warm_start = false;
    UnfreezeSet unfreeze = UnfreezeSet::rerank_only;
    agents::DecodingConfig decoding;
    agents::RerankConfig rerank;
};

struct Pretrained {
    std::optional<ParamStore> captioner;
    std::optional<ParamStore> language_model;
    std::optional<ParamStore> fixed_listener;
};

struct PhaseResult {
    SpeakerPolicy speaker;
    ParamStore listener;  // the joint listener after training (or the fixed one)
};

// Trains (or assembles, for parameter-free and captioner-only variants)
// the speaker for one regime. Throws ErrorCode::dependency when a required
// pretrained component is missing.
PhaseResult run_phase(const Dataset& data, const Pretrained& pre, SpeakerVariant variant,
                      const TrainingConfig& config, uint64_t seed, MetricsLog* log = nullptr);

// Which pretrained components a regime needs.
struct Requirements {
    bool captioner = false;
    bool fixed_listener = true;
};
Requirements requirements(SpeakerVariant variant);

// ---- speaking ------------------------------------------------------------------------------

// Deterministic evaluation-time messages for a batch of instances (greedy
// decoding, argmax reranking; stochastic components draw from `rng`).
std::vector<Message> speak(const SpeakerPolicy& speaker, const Dataset& data,
                           const std::vector<world::ReferentialInstance>& instances, Rng& rng);

// Candidate pools for rerankers: |S| samples from the frozen captioner per
// instance, or the target's ground-truth captions scored by the captioner
// (padded to a common count with masked copies).
struct CandidateSet {
    std::vector<Message> messages;  // B * N, grouped by instance
    Tensor base_logprobs;           // [B x N]
    Tensor bias;                    // [B x N] 0 or -1e9 for padding; empty when unpadded
    int per_instance = 0;
};
CandidateSet sample_candidates(const SpeakerPolicy& speaker, const Dataset& data,
                               const std::vector<world::ReferentialInstance>& instances,
                               int count, double temperature, Rng& rng);
CandidateSet gold_candidates(const SpeakerPolicy& speaker, const Dataset& data,
                             const std::vector<world::ReferentialInstance>& instances);

agents::RerankBatch rerank_batch(const Dataset& data, const CandidateSet& candidates,
                                 const std::vector<world::ReferentialInstance>& instances);

std::vector<Tensor> candidate_features(const Dataset& data,
                                       const std::vector<world::ReferentialInstance>& instances);

}  // namespace refgame::training
