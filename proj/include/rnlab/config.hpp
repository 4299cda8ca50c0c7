#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rnlab/data.hpp"
#include "rnlab/models.hpp"
#include "rnlab/normlayers.hpp"

namespace rnlab {

enum class Generator { ChannelPermuted, ShiftedGaussians, TwoMoons, Csv };
enum class LambdaSchedule { Constant, Annealed };

std::string to_string(Generator g);
std::string to_string(LambdaSchedule s);

/// Thrown for malformed config text; carries the offending line and field.
class ConfigError : public InvalidInput {
   public:
    ConfigError(std::size_t line, std::string field, const std::string& message);
    std::size_t line() const { return line_; }
    const std::string& field() const { return field_; }

   private:
    std::size_t line_;
    std::string field_;
};

struct DataConfig {
    Generator generator = Generator::ChannelPermuted;
    std::size_t classes = 4;
    std::size_t dims = 16;
    std::size_t per_class = 500;
    std::vector<double> shift{2.0};
    std::vector<double> scale{1.0};
    double center_scale = 3.0;
    std::size_t permutation_block = 2;
    double pattern_jitter = -1.0;  // negative: independent class centres
    std::size_t samples = 1000;  // two moons
    double angle_degrees = 30.0;
    double noise = 0.1;
    std::filesystem::path csv_path;
};

struct OptimizerConfig {
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    bool norm_weight_decay = false;  // apply weight decay to gamma, beta, gates and mixes
    double norm_lr_scale = 1.0;      // learning-rate multiplier for normalizer parameters
};

struct ExperimentConfig {
    DataConfig data;
    std::vector<std::size_t> hidden{32, 32};
    NormKind normalizer = NormKind::RN;
    NormOptions norm;
    OptimizerConfig optimizer;
    std::size_t epochs = 30;
    std::size_t batch_size = 64;
    double dann_lambda = 0.1;
    LambdaSchedule lambda_schedule = LambdaSchedule::Constant;
    std::size_t discriminator_hidden = 32;
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> seeds;  // sweep seed set; empty means 5 seeds starting at seed
    std::filesystem::path out_dir;

    void validate() const;
    /// Range checks that involve a single field each.
    void validate_values() const;
    MlpSpec model_spec(std::size_t input_width, std::size_t classes) const;
    std::vector<std::uint64_t> sweep_seeds() const;
};

/// Flat `key = value` text. Blank lines and `#` comments are ignored; unknown keys are errors.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Round-trips through parse_config.
std::string format_config(const ExperimentConfig& config);

/// Generates (or reads) the source/target pair described by the data section.
DomainPair make_datasets(const DataConfig& data, std::uint64_t seed);

}  // namespace rnlab
