#pragma once

#include <random>

#include "rnlab/random.hpp"
#include "rnlab/tensor.hpp"

namespace rnlab::testing {

inline Tensor randn(Shape shape, Rng& rng, double mean = 0.0, double sd = 1.0) {
    std::normal_distribution<double> d(mean, sd);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = d(rng);
    return t;
}

inline Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = d(rng);
    return t;
}

}  // namespace rnlab::testing
