#pragma once

// Experiment orchestration: configuration, on-disk layout, evaluation
// against joint/fixed listeners, result tables and the pragmatic ablation.

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "refgame/drift.hpp"
#include "refgame/training.hpp"

namespace refgame::harness {

namespace fs = std::filesystem;
using agents::RewardRecord;
using training::Dataset;
using training::PhaseResult;
using training::Pretrained;

// ---- configuration -------------------------------------------------------------------

// A named speaker regime: variant plus its training settings (which also
// name the listener it trains against).
struct RegimeSpec {
    std::string name;
    agents::SpeakerVariant variant = agents::SpeakerVariant::captioner_greedy;
    training::TrainingConfig training;
};

struct AblationConfig {
    int episodes = 1000;
    std::string split = "difficult";
    std::vector<training::UnfreezeSet> sets = {training::UnfreezeSet::rerank_only,
                                               training::UnfreezeSet::speaker_adapter,
                                               training::UnfreezeSet::both_adapters};
};

// Human evaluation sessions. Groups bundle similar speakers so one
// annotator sees them interleaved.
struct ServiceConfig {
    std::map<std::string, std::vector<std::string>> groups = {
        {"captioners", {"captioner_greedy", "captioner_sample", "oracle_discriminative", "oracle_random"}},
        {"finetuned", {"emergent", "finetune_kl", "finetune_nokl", "multitask"}},
        {"rerankers", {"poe", "noisy_channel"}}};
    std::string split = "difficult";
    int rounds = 40;
    uint64_t seed = 1;  // which trained cell serves, and the round-plan stream
    std::string host = "127.0.0.1";
    int port = 8080;
};

struct ExperimentConfig {
    training::DataConfig data;
    agents::Sizes sizes;
    training::PretrainConfig pretrain;
    uint64_t pretrain_seed = 1;
    training::TrainingConfig training;  // defaults every regime starts from
    std::vector<RegimeSpec> regimes;
    std::vector<std::string> splits = {"easy", "difficult"};
    std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
    AblationConfig ablation;
    ServiceConfig service;
    fs::path out = "runs";
    int workers = 1;
};

// Table-2 regimes trained against the joint listener.
std::vector<RegimeSpec> default_regimes(const training::TrainingConfig& base);
ExperimentConfig default_config();

// Unknown keys anywhere in the tree are rejected with invalid_argument.
// Regime entries override the top-level "training" section.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const fs::path& path);

const RegimeSpec& find_regime(const ExperimentConfig& c, const std::string& name);

// Hash of everything that determines the data and pretrained models.
uint64_t pretrain_fingerprint(const ExperimentConfig& c);
// ... plus one regime's training settings.
uint64_t regime_fingerprint(const ExperimentConfig& c, const RegimeSpec& r);

// ---- layout ------------------------------------------------------------------------------

struct Layout {
    fs::path root;

    fs::path corpus() const { return root / "data" / "corpus.jsonl"; }
    fs::path splits() const { return root / "data" / "splits.json"; }
    fs::path pretrain_dir() const { return root / "pretrain"; }
    fs::path captioner() const { return pretrain_dir() / "captioner.ckpt"; }
    fs::path language_model() const { return pretrain_dir() / "language_model.ckpt"; }
    fs::path fixed_listener() const { return pretrain_dir() / "fixed_listener.ckpt"; }
    fs::path cell(const std::string& regime, uint64_t seed) const {
        return root / regime / std::to_string(seed);
    }
    fs::path tables() const { return root / "tables"; }
    fs::path human() const { return root / "human"; }
};

// ---- pipeline stages -----------------------------------------------------------------------

using Progress = std::function<void(const std::string&)>;

Dataset generate_data(const ExperimentConfig& c);
// Reads the persisted corpus and splits; dependency error when absent.
Dataset load_data(const ExperimentConfig& c);

Pretrained pretrain_all(const ExperimentConfig& c, const Dataset& data, const Progress& progress = {});
// Loads whichever pretrained checkpoints exist (missing ones stay empty);
// version_mismatch when they were produced by a different configuration.
Pretrained load_pretrained(const ExperimentConfig& c);

PhaseResult train_cell(const ExperimentConfig& c, const Dataset& data, const Pretrained& pre,
                       const RegimeSpec& regime, uint64_t seed);
PhaseResult load_cell(const ExperimentConfig& c, const RegimeSpec& regime, uint64_t seed);

// ---- evaluation ----------------------------------------------------------------------------

struct Evaluation {
    double accuracy = 0.0;
    std::vector<RewardRecord> records;
    std::vector<agents::Message> messages;
};

// Frozen agents, argmax listener; stochastic speakers draw from `seed`.
Evaluation evaluate(const agents::SpeakerPolicy& speaker, const nn::ParamStore& listener,
                    const Dataset& data, const std::vector<world::ReferentialInstance>& instances,
                    uint64_t seed, const std::string& speaker_name);

void write_records(const fs::path& path, const std::vector<RewardRecord>& records);
std::vector<RewardRecord> read_records(const fs::path& path);
// Accuracy recomputed from a persisted record file.
double reaggregate(const fs::path& path);

const std::vector<world::ReferentialInstance>& split_instances(const Dataset& data,
                                                              const std::string& split);

struct CellResult {
    std::string regime;
    uint64_t seed = 0;
    std::map<std::string, double> values;       // column -> value
    std::map<std::string, fs::path> records;    // column -> record file
    drift::DriftReport drift;
};

// Evaluates one trained cell on every configured split against its own
// (joint) listener and the fixed listener, and writes records and a drift
// row under the cell directory.
CellResult evaluate_cell(const ExperimentConfig& c, const Dataset& data, const Pretrained& pre,
                         const RegimeSpec& regime, uint64_t seed, const PhaseResult& phase);

// ---- tables --------------------------------------------------------------------------------

struct Cell {
    double mean = 0.0;
    double std = 0.0;
    std::vector<double> values;           // one per seed, in seed order
    std::vector<std::string> provenance;  // record files relative to the output root
};

struct ResultRow {
    std::string regime;
    std::string status = "ok";  // or the error message of a failed regime
    std::string human_source = "fixed_proxy";  // or "annotators"
    std::map<std::string, Cell> cells;
};

struct ResultTable {
    std::vector<std::string> columns;
    std::vector<ResultRow> rows;

    const ResultRow& row(const std::string& regime) const;
    void write(const fs::path& csv, const fs::path& provenance) const;
};

std::vector<std::string> result_columns(const ExperimentConfig& c);
ResultTable aggregate(const ExperimentConfig& c, const std::vector<CellResult>& cells,
                      const std::map<std::string, std::string>& failures);

// Human accuracies from eval-service exports (out/human/<regime>.jsonl),
// when present, replace the fixed-listener proxy in the human column.
void apply_human_exports(const ExperimentConfig& c, ResultTable& table);

// Trains and evaluates every regime x seed (cells in parallel on
// `workers` threads). A failing regime marks its row and the rest proceed.
ResultTable run_matrix(const ExperimentConfig& c, const Dataset& data, const Pretrained& pre,
                       const Progress& progress = {});

// Evaluates already-trained cells (no training) and writes the tables.
ResultTable evaluate_matrix(const ExperimentConfig& c, const Dataset& data, const Pretrained& pre,
                            const Progress& progress = {});

std::vector<drift::DriftReport> drift_rows(const ExperimentConfig& c, const ResultTable& table);

// ---- pragmatic ablation ---------------------------------------------------------------------

struct AblationRow {
    training::UnfreezeSet set = training::UnfreezeSet::rerank_only;
    std::vector<double> joint, fixed, delta;  // per seed
    double joint_median = 0.0, fixed_median = 0.0, delta_median = 0.0;
};

// PoE over the targets' ground-truth captions, trained with the joint
// listener under each unfreeze set; evaluated on the ablation split.
std::vector<AblationRow> run_pragmatic_ablation(const ExperimentConfig& c, const Dataset& data,
                                                const Pretrained& pre, const Progress& progress = {});
void write_ablation(const fs::path& csv, const std::vector<AblationRow>& rows);

double median(std::vector<double> v);

}  // namespace refgame::harness
