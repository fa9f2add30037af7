#pragma once

// Minimal reverse-mode differentiation over dense matrices. Rows are batch
// elements throughout; a [B x 1] tensor is a per-example scalar.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "refgame/rng.hpp"

namespace refgame::nn {

using Tensor = Eigen::MatrixXd;
using Gradients = std::map<std::string, Tensor>;

struct Param {
    std::string group;
    Tensor value;
};

// Named parameter arrays grouped for freezing. Values are kept exactly
// representable as 32-bit floats so checkpoints round-trip bit-exactly.
class ParamStore {
public:
    Tensor& add(const std::string& name, const std::string& group, int rows, int cols);
    // Uniform(-scale, scale) initialisation, rounded to float precision.
    Tensor& add_uniform(const std::string& name, const std::string& group, int rows, int cols,
                        double scale, Rng& rng);

    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    const Tensor& value(const std::string& name) const;
    Tensor& mutable_value(const std::string& name);
    const Param& param(const std::string& name) const;
    const std::map<std::string, Param>& params() const { return params_; }

    void freeze(const std::string& group) { frozen_.insert(group); }
    void unfreeze(const std::string& group) { frozen_.erase(group); }
    bool group_frozen(const std::string& group) const { return frozen_.count(group) != 0; }
    bool frozen(const std::string& name) const { return group_frozen(param(name).group); }
    const std::set<std::string>& frozen_groups() const { return frozen_; }
    std::set<std::string> groups() const;

    // Copy every parameter of `group` from another store (adds missing names).
    void copy_group(const ParamStore& from, const std::string& group);
    // Merge all parameters and frozen flags from another store.
    void merge(const ParamStore& from);

    // FNV-1a over names, groups, shapes and float32 payloads.
    uint64_t checksum() const;
    uint64_t group_checksum(const std::string& group) const;
    size_t size() const;

    void round_to_float();

private:
    std::map<std::string, Param> params_;
    std::set<std::string> frozen_;
};

class Graph;

struct Var {
    Graph* graph = nullptr;
    int id = -1;

    bool valid() const { return graph != nullptr && id >= 0; }
    const Tensor& value() const;
    long rows() const { return value().rows(); }
    long cols() const { return value().cols(); }
    double scalar() const { return value()(0, 0); }
};

// Records a forward computation for one backward pass. With gradients
// disabled it is a plain evaluator and keeps no backward closures.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, int self)>;

    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value);
    Var constant_scalar(double value);
    // Leaf bound to a stored parameter; frozen parameters become constants.
    Var param(const ParamStore& store, const std::string& name);
    // Trainable leaf not backed by a store (used by tests and toy problems).
    Var variable(Tensor value);

    Var record(Tensor value, bool requires_grad, BackwardFn fn);

    void backward(Var loss);

    bool grad_enabled() const { return grad_enabled_; }
    bool requires_grad(int id) const { return nodes_[id].requires_grad; }
    const Tensor& value(int id) const { return nodes_[id].value; }
    const Tensor& grad(int id) const { return nodes_[id].grad; }
    const Tensor& grad(Var v) const { return nodes_[v.id].grad; }
    void accumulate(int id, const Tensor& g);

    Gradients param_gradients() const;
    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        BackwardFn backward;
    };

    bool grad_enabled_;
    bool backward_done_ = false;
    std::vector<Node> nodes_;
    std::unordered_map<std::string, int> param_nodes_;
    std::vector<std::pair<std::string, int>> param_order_;
};

// ---- primitive operations -------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
// a [B x n] + row [1 x n] broadcast over rows.
Var add_row(Var a, Var row);
// a [B x n] * col [B x 1] broadcast over columns.
Var mul_col(Var a, Var col);
Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, int start, int count);
// Row-major reshape: element k of the row-major flattening keeps its position.
Var reshape(Var a, int rows, int cols);
Var gather_rows(Var table, std::span<const int> ids);
Var log_softmax(Var a);
Var softmax(Var a);
// [B x 1] with a(i, ids[i]).
Var pick(Var a, std::span<const int> ids);
Var row_sum(Var a);
Var row_dot(Var a, Var b);
Var sum(Var a);
Var mean(Var a);
// Per-row entropy of the distribution given by row-wise log-probabilities.
Var entropy_from_log_probs(Var log_probs);

// ---- layers ---------------------------------------------------------------

// Parameters `<prefix>.w` [in x out] and `<prefix>.b` [1 x out].
void add_dense(ParamStore& store, const std::string& prefix, const std::string& group, int in,
               int out, Rng& rng);
Var dense(Graph& g, const ParamStore& store, const std::string& prefix, Var x);

// Parameter `<prefix>.table` [vocab x dim].
void add_embedding(ParamStore& store, const std::string& prefix, const std::string& group,
                   int vocab, int dim, Rng& rng);
Var embed(Graph& g, const ParamStore& store, const std::string& prefix, std::span<const int> ids);

struct LstmState {
    Var h;
    Var c;
};

// Gate layout [input | forget | cell | output]; `<prefix>.wx` [in x 4H],
// `<prefix>.wh` [H x 4H], `<prefix>.b` [1 x 4H] (forget bias initialised to 1).
void add_lstm(ParamStore& store, const std::string& prefix, const std::string& group, int in,
              int hidden, Rng& rng);
int lstm_hidden(const ParamStore& store, const std::string& prefix);
LstmState lstm_zero_state(Graph& g, int batch, int hidden);
LstmState lstm_step(Graph& g, const ParamStore& store, const std::string& prefix, Var x,
                    const LstmState& state);
// Same cell with an extra [B x 4H] term added to the gate pre-activations;
// used to inject a per-sequence conditioning vector computed once.
LstmState lstm_step(Graph& g, const ParamStore& store, const std::string& prefix, Var x,
                    const LstmState& state, Var gate_input);
// Rows whose mask entry is 0 keep their previous state.
LstmState lstm_masked_step(Graph& g, const ParamStore& store, const std::string& prefix, Var x,
                           const LstmState& state, Var mask_col);

// Mean of -log p(target) over rows.
Var cross_entropy(Var log_probs, std::span<const int> targets);

// ---- optimisation ---------------------------------------------------------

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double clip_norm = 0.0;  // global-norm clipping, 0 disables
};

class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    // Applies one bias-corrected adaptive-moment step; frozen groups and
    // parameters without gradients are skipped.
    void step(ParamStore& store, const Gradients& grads);

    const AdamConfig& config() const { return config_; }
    long steps() const { return t_; }

private:
    struct Moments {
        Tensor m;
        Tensor v;
    };
    AdamConfig config_;
    long t_ = 0;
    std::map<std::string, Moments> moments_;
};

double global_norm(const Gradients& grads);

// ---- checkpoints ----------------------------------------------------------

inline constexpr uint32_t kCheckpointSchemaVersion = 1;

struct CheckpointHeader {
    uint32_t schema_version = kCheckpointSchemaVersion;
    uint64_t fingerprint = 0;
    uint64_t seed = 0;
};

void save_checkpoint(const ParamStore& store, const CheckpointHeader& header,
                     const std::filesystem::path& path);
// Throws version_mismatch when the stored fingerprint differs from
// `expected_fingerprint`.
ParamStore load_checkpoint(const std::filesystem::path& path, uint64_t expected_fingerprint,
                           CheckpointHeader* header = nullptr);
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);
uint64_t file_checksum(const std::filesystem::path& path);

uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL);
inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a(s.data(), s.size(), h);
}

}  // namespace refgame::nn
