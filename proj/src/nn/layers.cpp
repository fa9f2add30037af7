#include <cmath>

#include "refgame/error.hpp"
#include "refgame/nn.hpp"

namespace refgame::nn {

void add_dense(ParamStore& store, const std::string& prefix, const std::string& group, int in,
               int out, Rng& rng) {
    const double k = 1.0 / std::sqrt(static_cast<double>(in));
    store.add_uniform(prefix + ".w", group, in, out, k, rng);
    store.add(prefix + ".b", group, 1, out);
}

Var dense(Graph& g, const ParamStore& store, const std::string& prefix, Var x) {
    const Tensor& w = store.value(prefix + ".w");
    if (x.cols() != w.rows())
        fail(ErrorCode::shape_mismatch, "dense '" + prefix + "': input width " +
                                            std::to_string(x.cols()) + " but layer expects " +
                                            std::to_string(w.rows()));
    return add_row(matmul(x, g.param(store, prefix + ".w")), g.param(store, prefix + ".b"));
}

void add_embedding(ParamStore& store, const std::string& prefix, const std::string& group,
                   int vocab, int dim, Rng& rng) {
    store.add_uniform(prefix + ".table", group, vocab, dim, 0.1, rng);
}

Var embed(Graph& g, const ParamStore& store, const std::string& prefix,
          std::span<const int> ids) {
    return gather_rows(g.param(store, prefix + ".table"), ids);
}

void add_lstm(ParamStore& store, const std::string& prefix, const std::string& group, int in,
              int hidden, Rng& rng) {
    const double k = 1.0 / std::sqrt(static_cast<double>(hidden));
    store.add_uniform(prefix + ".wx", group, in, 4 * hidden, k, rng);
    store.add_uniform(prefix + ".wh", group, hidden, 4 * hidden, k, rng);
    Tensor& b = store.add(prefix + ".b", group, 1, 4 * hidden);
    b.middleCols(hidden, hidden).setOnes();
}

int lstm_hidden(const ParamStore& store, const std::string& prefix) {
    return static_cast<int>(store.value(prefix + ".wh").rows());
}

LstmState lstm_zero_state(Graph& g, int batch, int hidden) {
    return {g.constant(Tensor::Zero(batch, hidden)), g.constant(Tensor::Zero(batch, hidden))};
}

LstmState lstm_step(Graph& g, const ParamStore& store, const std::string& prefix, Var x,
                    const LstmState& state) {
    return lstm_step(g, store, prefix, x, state, Var{});
}

LstmState lstm_step(Graph& g, const ParamStore& store, const std::string& prefix, Var x,
                    const LstmState& state, Var gate_input) {
    const Tensor& wx = store.value(prefix + ".wx");
    const int hidden = static_cast<int>(wx.cols() / 4);
    if (x.cols() != wx.rows())
        fail(ErrorCode::shape_mismatch, "lstm '" + prefix + "': input width " +
                                            std::to_string(x.cols()) + " but cell expects " +
                                            std::to_string(wx.rows()));
    if (state.h.cols() != hidden)
        fail(ErrorCode::shape_mismatch, "lstm '" + prefix + "': state width " +
                                            std::to_string(state.h.cols()) +
                                            " but hidden size is " + std::to_string(hidden));
    Var gates = add_row(add(matmul(x, g.param(store, prefix + ".wx")),
                            matmul(state.h, g.param(store, prefix + ".wh"))),
                        g.param(store, prefix + ".b"));
    if (gate_input.valid()) {
        if (gate_input.cols() != 4 * hidden || gate_input.rows() != gates.rows())
            fail(ErrorCode::shape_mismatch, "lstm '" + prefix + "': gate input shape mismatch");
        gates = add(gates, gate_input);
    }
    Var i = sigmoid(slice_cols(gates, 0, hidden));
    Var f = sigmoid(slice_cols(gates, hidden, hidden));
    Var c_hat = tanh(slice_cols(gates, 2 * hidden, hidden));
    Var o = sigmoid(slice_cols(gates, 3 * hidden, hidden));
    Var c = add(mul(f, state.c), mul(i, c_hat));
    Var h = mul(o, tanh(c));
    return {h, c};
}

LstmState lstm_masked_step(Graph& g, const ParamStore& store, const std::string& prefix, Var x,
                           const LstmState& state, Var mask_col) {
    LstmState next = lstm_step(g, store, prefix, x, state);
    Var keep = add_scalar(scale(mask_col, -1.0), 1.0);
    return {add(mul_col(next.h, mask_col), mul_col(state.h, keep)),
            add(mul_col(next.c, mask_col), mul_col(state.c, keep))};
}

}  // namespace refgame::nn
