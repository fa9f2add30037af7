#pragma once

#include <vector>

#include "refgame/training.hpp"

namespace refgame::training {

// Running mean over a reporting window.
class WindowMean {
public:
    void add(double x) {
        sum_ += x;
        ++n_;
    }
    double take() {
        const double m = n_ ? sum_ / n_ : 0.0;
        sum_ = 0.0;
        n_ = 0;
        return m;
    }

private:
    double sum_ = 0.0;
    long n_ = 0;
};

// Random target/distractor pairs from `pool` with shuffled candidate order.
std::vector<world::ReferentialInstance> draw_instances(const Dataset& data,
                                                       const std::vector<int64_t>& pool, int count,
                                                       Rng& rng);

double argmax_accuracy(const Tensor& log_probs, const std::vector<int>& targets);

// Listener input for a message: the lone <eos> token stands in for an
// empty utterance.
std::vector<int> listener_input(const Message& m);

}  // namespace refgame::training
