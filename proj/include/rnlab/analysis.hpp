#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "rnlab/data.hpp"
#include "rnlab/normlayers.hpp"

namespace rnlab {

struct TheoryReport {
    double a_distance = 0.0;           // in [0, 2]
    double lambda_risk = 0.0;          // >= 0
    double discriminator_error = 0.0;  // in [0, 1]
};

struct ChannelDistanceReport {
    double distance_sum = 0.0;
    double corresponding_ratio = 0.0;  // percent of target channels whose nearest source channel has the same index
    std::vector<std::size_t> nearest;  // nearest source channel per target channel
};

/// Small classifier used by the diagnostics: one hidden layer of width 32, no normalization.
struct DiagnosticOptions {
    std::size_t hidden = 32;
    std::size_t epochs = 20;
    std::size_t batch = 64;
    double lr = 0.05;
    double momentum = 0.9;
    double test_fraction = 0.2;
};

/// 2 (1 - 2 min(eps, 0.5)).
double a_distance_from_error(double error);

struct ADistanceEstimate {
    double error = 0.0;
    double a_distance = 0.0;
};

/// Trains a fresh domain classifier on a seeded 80/20 split and reports its held-out error.
ADistanceEstimate estimate_a_distance(const Tensor& features_s, const Tensor& features_t, std::uint64_t seed,
                                      const DiagnosticOptions& options = {});

/// Risk of a single classifier trained on both labeled domains: mean of its held-out
/// source and target errors.
double estimate_lambda(const DomainDataset& source, const DomainDataset& target, std::uint64_t seed,
                       const DiagnosticOptions& options = {});

/// Nearest source channel for every target channel under |mu_t/sqrt(var_t) - mu_s/sqrt(var_s)|.
ChannelDistanceReport nearest_channel_distances(const DomainStats& source, const DomainStats& target);

/// Reads a training run directory and writes analysis.json and features.csv into out_dir
/// (the run directory when empty). The diagnostics use the run's seed unless one is given.
nlohmann::json export_reports(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir = {},
                              std::optional<std::uint64_t> seed = std::nullopt,
                              const DiagnosticOptions& options = {});

}  // namespace rnlab
