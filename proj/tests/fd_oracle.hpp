#pragma once

// Central finite-difference oracle for gradient checks. Independent of the
// reverse-mode path: it only evaluates the forward loss.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "refgame/nn.hpp"

namespace fd {

struct Report {
    double max_rel_error = 0.0;
    std::string worst;
    int checked = 0;
};

inline double rel_error(double a, double n) {
    const double denom = std::abs(a) + std::abs(n);
    if (denom < 1e-7) return 0.0;
    return std::abs(a - n) / denom;
}

// `loss` builds a fresh graph from the store and returns the scalar value.
inline Report check(refgame::nn::ParamStore& store, const refgame::nn::Gradients& analytic,
                    const std::function<double(const refgame::nn::ParamStore&)>& loss,
                    double h = 1e-5) {
    Report r;
    for (const auto& [name, grad] : analytic) {
        auto& w = store.mutable_value(name);
        for (long i = 0; i < w.rows(); ++i)
            for (long j = 0; j < w.cols(); ++j) {
                const double orig = w(i, j);
                w(i, j) = orig + h;
                const double up = loss(store);
                w(i, j) = orig - h;
                const double down = loss(store);
                w(i, j) = orig;
                const double numeric = (up - down) / (2.0 * h);
                const double e = rel_error(grad(i, j), numeric);
                ++r.checked;
                if (e > r.max_rel_error) {
                    r.max_rel_error = e;
                    r.worst = name + "(" + std::to_string(i) + "," + std::to_string(j) + ")";
                }
            }
    }
    return r;
}

}  // namespace fd
