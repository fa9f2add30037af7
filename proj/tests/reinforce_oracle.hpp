#pragma once

// REINFORCE oracles on bandits. Shared by the unit tests and the
// acceptance runner.

#include <cmath>
#include <vector>

#include "refgame/nn.hpp"
#include "refgame/training.hpp"

namespace reinforce_oracle {

using namespace refgame;
using namespace refgame::nn;

inline Var log_policy(Graph& g, const ParamStore& store) { return nn::log_softmax(g.param(store, "theta")); }

// Largest |E_a[score-function gradient] - exact gradient of -E[r]| over a
// 4-armed bandit, enumerating every arm, for the given baseline.
inline double exhaustive_gradient_error(double baseline) {
    const std::vector<double> rewards = {0.3, -1.0, 2.5, 0.7};
    ParamStore store;
    store.add("theta", "bandit", 1, 4) << 0.2, -0.4, 0.1, 0.9;

    Graph exact;
    Var lp = log_policy(exact, store);
    Var r = exact.constant(Eigen::Map<const Eigen::RowVectorXd>(rewards.data(), 4));
    exact.backward(nn::scale(nn::sum(nn::mul(nn::exp(lp), r)), -1.0));
    const Tensor truth = exact.param_gradients().at("theta");

    Tensor estimate = Tensor::Zero(1, 4);
    const Tensor probs = [&] {
        Graph g(false);
        return Tensor(log_policy(g, store).value().array().exp());
    }();
    for (int arm = 0; arm < 4; ++arm) {
        Graph g;
        const std::vector<int> pick = {arm};
        Var seq = nn::pick(log_policy(g, store), pick);
        g.backward(training::reinforce_loss(seq, Var{}, {rewards[arm]}, 0.0, baseline));
        estimate += probs(0, arm) * g.param_gradients().at("theta");
    }
    return (estimate - truth).cwiseAbs().maxCoeff();
}

// Fraction of independent runs of a Bernoulli 3-armed bandit (means 0.2,
// 0.5, 0.8; rewards +-1) whose final policy prefers the best arm.
inline double bandit_success_rate(int trials) {
    const double means[3] = {0.2, 0.5, 0.8};
    int optimal = 0;
    for (int trial = 0; trial < trials; ++trial) {
        Rng rng(1000 + trial);
        ParamStore store;
        store.add("theta", "bandit", 1, 3).setZero();
        nn::Adam adam({0.05});
        training::Baseline baseline(true, 0.9);
        for (int step = 0; step < 300; ++step) {
            Graph g;
            Var lp = log_policy(g, store);
            std::vector<double> w(3);
            for (int k = 0; k < 3; ++k) w[k] = std::exp(lp.value()(0, k));
            std::vector<int> arms;
            std::vector<double> rewards;
            for (int b = 0; b < 8; ++b) {
                arms.push_back(rng.categorical(w));
                rewards.push_back(rng.uniform() < means[arms.back()] ? 1.0 : -1.0);
            }
            Var picked = nn::reshape(nn::pick(nn::gather_rows(lp, std::vector<int>(8, 0)), arms), 8, 1);
            g.backward(training::reinforce_loss(picked, Var{}, rewards, 0.0, baseline.value()));
            adam.step(store, g.param_gradients());
            baseline.update(rewards);
        }
        const Tensor& th = store.value("theta");
        optimal += th(0, 2) > th(0, 0) && th(0, 2) > th(0, 1);
    }
    return static_cast<double>(optimal) / trials;
}

}  // namespace reinforce_oracle
