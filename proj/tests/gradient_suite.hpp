#pragma once

// One finite-difference case per layer/primitive. Shared by the unit tests
// and the acceptance runner.

#include <functional>
#include <string>
#include <vector>

#include "fd_oracle.hpp"
#include "refgame/nn.hpp"

namespace gradient_suite {

using refgame::Rng;
using namespace refgame::nn;

struct Case {
    std::string name;
    std::function<fd::Report()> run;
};

inline Tensor random_tensor(Rng& rng, int r, int c, double s = 1.0) {
    Tensor t(r, c);
    for (long j = 0; j < c; ++j)
        for (long i = 0; i < r; ++i) t(i, j) = rng.uniform(-s, s);
    return t;
}

// Builds the loss on a fresh graph, backpropagates once, then compares with
// the finite-difference oracle.
inline fd::Report check_store(ParamStore& store, const std::function<Var(Graph&, const ParamStore&)>& build) {
    Graph g;
    Var loss = build(g, store);
    g.backward(loss);
    const Gradients grads = g.param_gradients();
    return fd::check(store, grads, [&](const ParamStore& s) {
        Graph eval(false);
        return build(eval, s).scalar();
    });
}

// Random fixed projection to a scalar so every output entry matters.
inline Var project(Graph& g, Var x, uint64_t seed) {
    Rng rng(seed);
    return sum(mul(x, g.constant(random_tensor(rng, static_cast<int>(x.rows()),
                                               static_cast<int>(x.cols())))));
}

inline std::vector<Case> cases() {
    std::vector<Case> out;

    out.push_back({"dense", [] {
                       Rng rng(1);
                       ParamStore s;
                       add_dense(s, "d", "g", 5, 4, rng);
                       s.mutable_value("d.b") = random_tensor(rng, 1, 4, 0.5);
                       const Tensor x = random_tensor(rng, 3, 5);
                       return check_store(s, [&](Graph& g, const ParamStore& st) {
                           return project(g, dense(g, st, "d", g.constant(x)), 11);
                       });
                   }});

    out.push_back({"two_layer_net_cross_entropy", [] {
                       Rng rng(2);
                       ParamStore s;
                       add_dense(s, "l1", "g", 6, 8, rng);
                       add_dense(s, "l2", "g", 8, 5, rng);
                       const Tensor x = random_tensor(rng, 4, 6);
                       const std::vector<int> y = {0, 3, 4, 1};
                       return check_store(s, [&](Graph& g, const ParamStore& st) {
                           Var hdn = tanh(dense(g, st, "l1", g.constant(x)));
                           return cross_entropy(log_softmax(dense(g, st, "l2", hdn)), y);
                       });
                   }});

    out.push_back({"embedding", [] {
                       Rng rng(3);
                       ParamStore s;
                       add_embedding(s, "e", "g", 7, 4, rng);
                       const std::vector<int> ids = {1, 5, 1, 6};
                       return check_store(s, [&](Graph& g, const ParamStore& st) {
                           return project(g, tanh(embed(g, st, "e", ids)), 12);
                       });
                   }});

    out.push_back({"lstm_unrolled", [] {
                       Rng rng(4);
                       ParamStore s;
                       add_lstm(s, "cell", "g", 3, 5, rng);
                       std::vector<Tensor> xs;
                       for (int t = 0; t < 4; ++t) xs.push_back(random_tensor(rng, 2, 3));
                       return check_store(s, [&](Graph& g, const ParamStore& st) {
                           LstmState state = lstm_zero_state(g, 2, 5);
                           Var acc = g.constant_scalar(0.0);
                           for (size_t t = 0; t < xs.size(); ++t) {
                               state = lstm_step(g, st, "cell", g.constant(xs[t]), state);
                               acc = add(acc, project(g, state.h, 20 + t));
                           }
                           return add(acc, project(g, state.c, 30));
                       });
                   }});

    out.push_back({"lstm_gate_input", [] {
                       Rng rng(10);
                       ParamStore s;
                       add_lstm(s, "cell", "g", 3, 4, rng);
                       s.add_uniform("cond", "g", 2, 16, 0.5, rng);
                       const Tensor u = random_tensor(rng, 2, 2);
                       std::vector<Tensor> xs;
                       for (int t = 0; t < 3; ++t) xs.push_back(random_tensor(rng, 2, 3));
                       return check_store(s, [&](Graph& g, const ParamStore& st) {
                           Var extra = matmul(g.constant(u), g.param(st, "cond"));
                           LstmState state = lstm_zero_state(g, 2, 4);
                           for (const auto& x : xs)
                               state = lstm_step(g, st, "cell", g.constant(x), state, extra);
                           return project(g, state.h, 41);
                       });
                   }});

    out.push_back({"lstm_masked", [] {
                       Rng rng(5);
                       ParamStore s;
                       add_lstm(s, "cell", "g", 2, 4, rng);
                       std::vector<Tensor> xs;
                       for (int t = 0; t < 3; ++t) xs.push_back(random_tensor(rng, 3, 2));
                       Tensor mask(3, 3);
                       mask << 1, 1, 1, 1, 0, 0, 1, 1, 0;  // row = step, col = example
                       return check_store(s, [&](Graph& g, const ParamStore& st) {
                           LstmState state = lstm_zero_state(g, 3, 4);
                           for (int t = 0; t < 3; ++t)
                               state = lstm_masked_step(g, st, "cell", g.constant(xs[t]), state,
                                                        g.constant(mask.row(t).transpose()));
                           return project(g, state.h, 40);
                       });
                   }});

    out.push_back({"softmax_entropy", [] {
                       Rng rng(6);
                       ParamStore s;
                       s.add_uniform("z", "g", 3, 5, 1.5, rng);
                       return check_store(s, [&](Graph& g, const ParamStore& st) {
                           Var lp = log_softmax(g.param(st, "z"));
                           return add(sum(entropy_from_log_probs(lp)),
                                      project(g, softmax(g.param(st, "z")), 13));
                       });
                   }});

    out.push_back({"elementwise_and_shape_ops", [] {
                       Rng rng(7);
                       ParamStore s;
                       s.add_uniform("a", "g", 3, 4, 1.0, rng);
                       s.add_uniform("b", "g", 3, 4, 1.0, rng);
                       s.add_uniform("r", "g", 1, 4, 1.0, rng);
                       s.add_uniform("c", "g", 3, 1, 1.0, rng);
                       return check_store(s, [&](Graph& g, const ParamStore& st) {
                           Var a = g.param(st, "a"), b = g.param(st, "b");
                           Var parts[] = {sigmoid(a), exp(scale(b, 0.5))};
                           Var cat = concat_cols(parts);
                           Var sl = slice_cols(cat, 2, 4);
                           Var m = mul_col(add_row(sub(sl, mul(a, b)), g.param(st, "r")),
                                           g.param(st, "c"));
                           return add(project(g, m, 14), mean(row_dot(a, add_scalar(b, 0.3))));
                       });
                   }});

    out.push_back({"matmul_gather_pick", [] {
                       Rng rng(8);
                       ParamStore s;
                       s.add_uniform("t", "g", 5, 3, 1.0, rng);
                       s.add_uniform("w", "g", 3, 6, 1.0, rng);
                       const std::vector<int> ids = {4, 0, 4};
                       const std::vector<int> cols = {5, 2, 0};
                       return check_store(s, [&](Graph& g, const ParamStore& st) {
                           Var rows = gather_rows(g.param(st, "t"), ids);
                           Var lp = log_softmax(matmul(rows, g.param(st, "w")));
                           return sum(pick(lp, cols));
                       });
                   }});

    out.push_back({"reshape", [] {
                       Rng rng(9);
                       ParamStore s;
                       s.add_uniform("a", "g", 6, 2, 1.0, rng);
                       return check_store(s, [&](Graph& g, const ParamStore& st) {
                           return project(g, log_softmax(reshape(g.param(st, "a"), 3, 4)), 15);
                       });
                   }});

    return out;
}

}  // namespace gradient_suite
