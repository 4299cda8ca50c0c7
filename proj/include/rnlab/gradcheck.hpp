#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rnlab/normlayers.hpp"
#include "rnlab/numerics.hpp"

namespace rnlab {

struct GradCheckOptions {
    NormKind kind = NormKind::RN;
    std::size_t channels = 4;
    std::size_t batch = 8;
    std::size_t spatial = 1;  // H = W; values above 1 exercise the spatial reductions
    double tol = 1e-4;
    double step = 1e-6;
    std::uint64_t seed = 0;
    NormOptions norm;
};

struct GradCheckEntry {
    std::string name;  // "x_s", "x_t" or a parameter name
    GradDiscrepancy worst;
    bool passed = false;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    /// TN only: largest gradient magnitude reaching the attention statistics (must be exactly 0).
    double attention_stat_grad = 0.0;
    bool passed = false;

    const GradCheckEntry& worst() const;
};

/// Checks the analytic input and parameter gradients of one train-mode layer forward
/// (random weighted sum of both domain outputs) against central differences.
GradCheckReport check_layer_gradients(const GradCheckOptions& options);

}  // namespace rnlab
