#include <cmath>

#include "refgame/error.hpp"
#include "refgame/nn.hpp"

namespace refgame::nn {

double global_norm(const Gradients& grads) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) sq += g.squaredNorm();
    return std::sqrt(sq);
}

void Adam::step(ParamStore& store, const Gradients& grads) {
    ++t_;
    double clip = 1.0;
    if (config_.clip_norm > 0.0) {
        const double n = global_norm(grads);
        if (n > config_.clip_norm) clip = config_.clip_norm / n;
    }
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (const auto& [name, grad] : grads) {
        if (store.frozen(name)) continue;
        Tensor& w = store.mutable_value(name);
        if (grad.rows() != w.rows() || grad.cols() != w.cols())
            fail(ErrorCode::shape_mismatch, "optimizer: gradient shape differs for '" + name + "'");
        auto [it, inserted] = moments_.try_emplace(name);
        Moments& mo = it->second;
        if (inserted) {
            mo.m = Tensor::Zero(w.rows(), w.cols());
            mo.v = Tensor::Zero(w.rows(), w.cols());
        }
        const Tensor g = grad * clip;
        mo.m = config_.beta1 * mo.m + (1.0 - config_.beta1) * g;
        mo.v = config_.beta2 * mo.v + (1.0 - config_.beta2) * g.cwiseProduct(g);
        const auto m_hat = mo.m.array() / bc1;
        const auto v_hat = mo.v.array() / bc2;
        w.array() -= config_.learning_rate * m_hat / (v_hat.sqrt() + config_.epsilon);
        w = w.cast<float>().cast<double>();
    }
}

}  // namespace refgame::nn
