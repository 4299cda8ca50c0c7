#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <json.hpp>

#include "rnlab/normlayers.hpp"
#include "rnlab/random.hpp"
#include "rnlab/tape.hpp"

namespace rnlab {

/// Feed-forward classifier layout: widths = {input, hidden..., classes}.
/// Every hidden layer is Linear -> normalizer -> ReLU.
struct MlpSpec {
    std::vector<std::size_t> widths;
    NormKind norm = NormKind::None;
    NormOptions norm_options;

    void validate() const;
    std::size_t input_width() const { return widths.front(); }
    std::size_t classes() const { return widths.back(); }
    std::size_t hidden_layers() const { return widths.size() - 2; }
    std::size_t feature_width() const { return widths[widths.size() - 2]; }
};

struct DiscriminatorSpec {
    std::size_t feature_width = 1;
    std::size_t hidden = 32;

    void validate() const;
};

/// y = x W + b with W stored [in, out].
struct Linear {
    Parameter weight;
    Parameter bias;

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng);

    Var forward(Var x);
    Var forward_eval(Var x) const;
    nlohmann::json to_json() const;
    void load_json(const nlohmann::json& j);
};

/// Stride-1 valid convolution, used to produce [N, C, H, W] features.
struct Conv2d {
    Parameter weight;  // [out, in, k, k]
    Parameter bias;

    Conv2d(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng);
    Var forward(Var x);
};

struct DomainOutputs {
    Var logits_s, logits_t;
    Var features_s, features_t;  // last hidden activation, input to the discriminator
};

struct EvalOutput {
    Var logits;
    Var features;
};

class Mlp {
   public:
    Mlp(MlpSpec spec, std::uint64_t seed);
    Mlp(const Mlp& other);
    Mlp& operator=(const Mlp& other);
    Mlp(Mlp&&) noexcept = default;
    Mlp& operator=(Mlp&&) noexcept = default;

    /// Train mode: both domains pass jointly through every normalizer.
    DomainOutputs forward_train(Var xs, Var xt, std::vector<LayerTrace>* traces = nullptr);
    /// Eval mode: the domain flag selects running statistics. Never mutates the model.
    EvalOutput forward_eval(Var x, Domain domain) const;

    std::vector<Parameter*> parameters();
    std::vector<Normalizer*> normalizers();
    std::vector<const Normalizer*> normalizers() const;
    const MlpSpec& spec() const { return spec_; }

    void set_freeze_running(bool freeze);

    nlohmann::json to_json() const;
    static Mlp from_json(const nlohmann::json& j);

   private:
    Mlp() = default;
    void check_input(Var x) const;

    MlpSpec spec_;
    std::vector<Linear> linears_;
    std::vector<std::unique_ptr<Normalizer>> norms_;
};

/// Two-layer domain classifier producing 2-way logits (0 = source, 1 = target).
class Discriminator {
   public:
    Discriminator(DiscriminatorSpec spec, std::uint64_t seed);

    Var forward(Var features);
    Var forward_eval(Var features) const;
    std::vector<Parameter*> parameters();
    const DiscriminatorSpec& spec() const { return spec_; }

    nlohmann::json to_json() const;
    static Discriminator from_json(const nlohmann::json& j);

   private:
    DiscriminatorSpec spec_;
    Linear hidden_, out_;
};

/// DANN coefficient schedule 2 / (1 + exp(-10 p)) - 1 over training progress p in [0, 1].
double annealed_lambda(double progress);

}  // namespace rnlab
