#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnlab/config.hpp"
#include "rnlab/data.hpp"
#include "rnlab/models.hpp"

namespace rnlab {

struct SgdOptions {
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

/// Momentum SGD followed by projection of bounded parameters into their interval.
/// Parameters with trainable = false are skipped; decay = false disables weight decay.
class Sgd {
   public:
    Sgd(std::vector<Parameter*> params, SgdOptions options);

    void zero_grad();
    /// Throws NumericalError naming the parameter if any gradient is non-finite.
    void step();
    const SgdOptions& options() const { return options_; }

   private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> velocity_;
    SgdOptions options_;
};

struct MetricsRow {
    std::size_t epoch = 0;
    std::string split;  // train_s, eval_s or eval_t
    double cls_loss = 0.0;
    double dom_loss = 0.0;
    double accuracy = 0.0;
    double wall_time = 0.0;
};

struct EvalResult {
    double accuracy = 0.0;
    double loss = 0.0;
};

/// Argmax accuracy and mean cross-entropy in eval mode. Leaves the model untouched.
EvalResult evaluate(const Mlp& model, const DomainDataset& data);

struct Checkpoint {
    std::size_t epoch = 0;
    std::vector<std::optional<CorrelationReport>> reports;  // one per normalization layer
    nlohmann::json model;
    std::optional<nlohmann::json> discriminator;
};

struct TrainResult {
    Mlp model;
    std::optional<Discriminator> discriminator;
    std::vector<MetricsRow> metrics;
    std::vector<Checkpoint> checkpoints;
};

/// Trains on labeled source and unlabeled target batches. target_eval, when given, is only
/// used for the eval_t metric rows. When out_dir is non-empty the run writes config.txt,
/// metrics.csv, checkpoints/epoch_NNN.json and model.json there as it goes.
TrainResult train(const ExperimentConfig& config, const DomainDataset& source, const UnlabeledDataset& target,
                  const DomainDataset* target_eval = nullptr);

/// Generates the configured data and trains.
TrainResult train_run(const ExperimentConfig& config);

std::string metrics_csv(const std::vector<MetricsRow>& rows, bool include_wall_time = true);
nlohmann::json checkpoint_to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

/// Checkpoint files of a run directory in epoch order.
std::vector<std::filesystem::path> list_checkpoints(const std::filesystem::path& run_dir);

std::string format_number(double v);

}  // namespace rnlab
