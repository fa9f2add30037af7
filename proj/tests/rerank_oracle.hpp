#pragma once

// Brute-force reranker distributions computed straight from the stored
// weights in probability space (no graph, no log-sum-exp). Shared by the
// unit tests and the acceptance runner.

#include <cmath>
#include <vector>

#include "refgame/agents.hpp"

namespace rerank_oracle {

using refgame::nn::ParamStore;
using refgame::nn::Tensor;
using Row = Eigen::RowVectorXd;

inline Row adapter(const ParamStore& s, const Row& u) {
    return (u * s.value("captioner.adapter.w") + s.value("captioner.adapter.b")).array().tanh();
}

inline Row bow(const ParamStore& s, const Row& counts) {
    const Row summed = counts * s.value("rr.embed.table");
    return (summed * s.value("rr.bow.w") + s.value("rr.bow.b")).array().tanh();
}

inline std::vector<double> normalise(std::vector<double> w) {
    double z = 0.0;
    for (double x : w) z += x;
    for (double& x : w) x /= z;
    return w;
}

// pi(s) = p(s|u,t)^lf * p_norm(s|u_t)^ls / Z
inline std::vector<double> poe(const ParamStore& s, const Tensor& counts, const Row& ut,
                               const Row& ud, const std::vector<double>& base, double lf,
                               double ls) {
    Row cat(2 * s.value("captioner.adapter.w").cols());
    cat << adapter(s, ut), adapter(s, ud);
    const Row combined = cat * s.value("rr.combine.w") + s.value("rr.combine.b");
    std::vector<double> task, prior;
    for (long i = 0; i < counts.rows(); ++i) {
        task.push_back(std::exp(combined.dot(bow(s, counts.row(i)))));
        prior.push_back(std::exp(base[i]));
    }
    task = normalise(task);
    prior = normalise(prior);
    std::vector<double> w;
    for (size_t i = 0; i < task.size(); ++i) w.push_back(std::pow(task[i], lf) * std::pow(prior[i], ls));
    return normalise(w);
}

// pi(s) = p(t|s,u) * p_norm(s|u_t) / Z with p(t|s,u) a softmax over images.
inline std::vector<double> noisy_channel(const ParamStore& s, const Tensor& counts,
                                         const std::vector<Row>& images, int target,
                                         const std::vector<double>& base) {
    std::vector<Row> proj;
    for (const auto& u : images)
        proj.push_back(adapter(s, u) * s.value("rr.image.w") + s.value("rr.image.b"));
    std::vector<double> prior;
    for (double b : base) prior.push_back(std::exp(b));
    prior = normalise(prior);
    std::vector<double> w;
    for (long i = 0; i < counts.rows(); ++i) {
        const Row e = bow(s, counts.row(i));
        std::vector<double> per;
        for (const auto& p : proj) per.push_back(std::exp(e.dot(p)));
        w.push_back(normalise(per)[target] * prior[i]);
    }
    return normalise(w);
}

}  // namespace rerank_oracle
