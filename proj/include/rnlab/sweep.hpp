#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "rnlab/config.hpp"

namespace rnlab {

/// normalizer: bn, autodial, dsbn, tn, rn. gate: RN with g fixed at 0.5, 0.75, 1 or learnable.
/// measure: the RC score functions. ablation: bn, RN without RC (ra_only), full RN.
enum class SweepAxis { Normalizer, Gate, Measure, Ablation };

SweepAxis parse_sweep_axis(std::string_view s);
std::string to_string(SweepAxis a);

struct SweepVariant {
    std::string name;
    ExperimentConfig config;
};

std::vector<SweepVariant> sweep_variants(const ExperimentConfig& base, SweepAxis axis);

struct SweepRow {
    std::string variant;
    std::string seed;  // a seed, or "median" / "mean"
    double source_accuracy = 0.0;
    double target_accuracy = 0.0;
};

/// Runs every variant for every seed of base.sweep_seeds(). Each run writes into
/// out_dir/<variant>/seed_<s>/ when out_dir is non-empty. Returns per-seed rows followed by
/// a median and a mean row per variant.
std::vector<SweepRow> run_sweep(const ExperimentConfig& base, SweepAxis axis, const std::filesystem::path& out_dir,
                                std::size_t threads);

std::string summary_csv(const std::vector<SweepRow>& rows);

/// RNLAB_THREADS if set and positive, otherwise the hardware concurrency.
std::size_t sweep_threads();

double median(std::vector<double> v);

}  // namespace rnlab
