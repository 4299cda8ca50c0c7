#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rnlab/tape.hpp"
#include "rnlab/tensor.hpp"

namespace rnlab {

enum class Domain { Source, Target };
enum class NormKind { None, BN, AdaBN, AutoDIAL, DSBN, DSBNShared, TN, RN };
/// Correlation measure used to score cross-domain channel pairs.
enum class Measure { NegL2, NegL1, NegCosine };

std::string to_string(Domain d);
std::string to_string(NormKind k);
std::string to_string(Measure m);
Domain parse_domain(std::string_view s);
NormKind parse_norm_kind(std::string_view s);
Measure parse_measure(std::string_view s);

/// True for normalizers that keep separate statistics per domain.
bool is_dual_domain(NormKind k);

inline constexpr Interval kGateRange{0.5, 1.0};

struct DomainStats {
    Tensor mu;
    Tensor var;

    static DomainStats defaults(std::size_t channels);  // mu = 0, var = 1
    std::size_t channels() const { return mu.size(); }
    void validate() const;
};

struct GateParams {
    Tensor g_mu_s, g_var_s, g_mu_t, g_var_t;

    static GateParams filled(std::size_t channels, double value);
};

/// Everything RC/RA computed in one training forward pass.
struct CorrelationReport {
    Tensor rho_mu_ts, rho_var_ts, rho_mu_st, rho_var_st;  // [C, C], rows sum to 1
    DomainStats cc_s, cc_t;                                // compensatory statistics
    DomainStats agg_s, agg_t;                              // gated aggregates used for normalization
    GateParams gates;
};

struct NormOptions {
    double epsilon = 1e-5;
    double alpha = 0.1;  // EMA momentum, (0, 1]
    std::size_t group_size = 512;
    Measure measure = Measure::NegL2;
    std::optional<double> fixed_gate;  // freeze RN gates at this value
    bool reciprocal = true;            // false: RN compensates with the corresponding channel only (rho = I)

    void validate() const;
};

// ---- graph-level building blocks -----------------------------------------

struct StatVars {
    Var mu;
    Var var;
};

struct CompensationVars {
    struct Block {
        std::size_t begin;
        Var rho_mu_ts, rho_var_ts, rho_mu_st, rho_var_st;
    };
    std::vector<Block> blocks;  // one per channel group
    StatVars cc_s, cc_t;
};

/// Reciprocal compensation on tape variables. Differentiable in all four statistics.
CompensationVars rc_compensate(StatVars source, StatVars target, Measure measure, std::size_t group_size);

/// Gated aggregation g * z + (1 - g) * z_cc for the mean and the variance.
StatVars ra_aggregate(StatVars stats, StatVars cc, Var g_mu, Var g_var);

// ---- tensor-level contracts ---------------------------------------------

CorrelationReport rc_compensate(const DomainStats& source, const DomainStats& target, Measure measure,
                                std::size_t group_size);
DomainStats ra_aggregate(const DomainStats& stats, const Tensor& cc_mu, const Tensor& cc_var, const Tensor& g_mu,
                         const Tensor& g_var);
DomainStats ema_update(const DomainStats& running, const DomainStats& batch, double alpha);

/// Diagnostics a train-mode forward can optionally capture.
struct LayerTrace {
    std::optional<CorrelationReport> report;
    std::vector<Var> stat_nodes;            // batch statistics that feed normalization
    std::vector<Var> attention_stat_nodes;  // TN: statistics that feed the detached attention
};

/// A normalization layer with a dual-domain train path and a per-domain eval path.
class Normalizer {
   public:
    Normalizer(std::size_t channels, NormOptions options);
    virtual ~Normalizer() = default;

    virtual NormKind kind() const = 0;
    virtual std::unique_ptr<Normalizer> clone() const = 0;

    /// Train-mode forward over a paired source/target batch. Updates running statistics
    /// unless `freeze_running()` is set.
    virtual std::pair<Var, Var> forward_train(Var xs, Var xt, LayerTrace* trace = nullptr) = 0;

    /// Eval-mode forward; read-only.
    virtual Var forward_eval(Var x, Domain domain) const = 0;

    virtual std::vector<Parameter*> parameters() = 0;

    /// Running statistics used for the given domain at inference.
    virtual DomainStats running(Domain domain) const = 0;

    nlohmann::json to_json() const;
    void load_json(const nlohmann::json& j);

    std::size_t channels() const { return channels_; }
    const NormOptions& options() const { return options_; }

    void set_freeze_running(bool freeze) { freeze_running_ = freeze; }
    bool freeze_running() const { return freeze_running_; }

   protected:
    virtual void write_json(nlohmann::json& j) const = 0;
    virtual void read_json(const nlohmann::json& j) = 0;
    void check_train_inputs(Var xs, Var xt) const;
    void check_eval_input(Var x) const;

    std::size_t channels_;
    NormOptions options_;
    bool freeze_running_ = false;
};

/// Passes features through unchanged.
class Identity final : public Normalizer {
   public:
    explicit Identity(std::size_t channels) : Normalizer(channels, {}) {}
    NormKind kind() const override { return NormKind::None; }
    std::unique_ptr<Normalizer> clone() const override { return std::make_unique<Identity>(*this); }
    std::pair<Var, Var> forward_train(Var xs, Var xt, LayerTrace* trace) override;
    Var forward_eval(Var x, Domain domain) const override;
    std::vector<Parameter*> parameters() override { return {}; }
    DomainStats running(Domain) const override { return DomainStats::defaults(channels_); }

   protected:
    void write_json(nlohmann::json&) const override {}
    void read_json(const nlohmann::json&) override {}
};

/// Standard batch normalization over the concatenated source and target batch.
class BatchNorm : public Normalizer {
   public:
    BatchNorm(std::size_t channels, NormOptions options);
    NormKind kind() const override { return NormKind::BN; }
    std::unique_ptr<Normalizer> clone() const override { return std::make_unique<BatchNorm>(*this); }
    std::pair<Var, Var> forward_train(Var xs, Var xt, LayerTrace* trace) override;
    Var forward_eval(Var x, Domain domain) const override;
    std::vector<Parameter*> parameters() override { return {&gamma_, &beta_}; }
    DomainStats running(Domain) const override { return running_; }

   protected:
    void write_json(nlohmann::json& j) const override;
    void read_json(const nlohmann::json& j) override;

    Parameter gamma_, beta_;
    DomainStats running_;
};

/// BN in training; target examples are normalized with target-only statistics at inference.
class AdaBN final : public BatchNorm {
   public:
    AdaBN(std::size_t channels, NormOptions options);
    NormKind kind() const override { return NormKind::AdaBN; }
    std::unique_ptr<Normalizer> clone() const override { return std::make_unique<AdaBN>(*this); }
    std::pair<Var, Var> forward_train(Var xs, Var xt, LayerTrace* trace) override;
    Var forward_eval(Var x, Domain domain) const override;
    DomainStats running(Domain domain) const override { return domain == Domain::Target ? running_t_ : running_; }

   protected:
    void write_json(nlohmann::json& j) const override;
    void read_json(const nlohmann::json& j) override;

   private:
    DomainStats running_t_;
};

/// Shared-affine base for the normalizers that keep per-domain running statistics.
class DualDomainNorm : public Normalizer {
   public:
    DualDomainNorm(std::size_t channels, NormOptions options);
    Var forward_eval(Var x, Domain domain) const override;
    DomainStats running(Domain domain) const override { return domain == Domain::Source ? running_s_ : running_t_; }

    Parameter& gamma() { return gamma_; }
    Parameter& beta() { return beta_; }

   protected:
    void write_json(nlohmann::json& j) const override;
    void read_json(const nlohmann::json& j) override;
    void track(const Tensor& mu_s, const Tensor& var_s, const Tensor& mu_t, const Tensor& var_t);
    std::pair<Var, Var> normalize_pair(Var xs, Var xt, StatVars s, StatVars t);

    Parameter gamma_, beta_;
    DomainStats running_s_, running_t_;
};

/// Per-channel mixing of the two domains' statistics with one learnable weight in [0.5, 1].
class AutoDial final : public DualDomainNorm {
   public:
    AutoDial(std::size_t channels, NormOptions options);
    NormKind kind() const override { return NormKind::AutoDIAL; }
    std::unique_ptr<Normalizer> clone() const override { return std::make_unique<AutoDial>(*this); }
    std::pair<Var, Var> forward_train(Var xs, Var xt, LayerTrace* trace) override;
    std::vector<Parameter*> parameters() override { return {&gamma_, &beta_, &mix_}; }
    Parameter& mix() { return mix_; }

   protected:
    void write_json(nlohmann::json& j) const override;
    void read_json(const nlohmann::json& j) override;

   private:
    Parameter mix_;
};

/// Domain-specific BN. With `shared_affine` the two domains share gamma and beta.
class DomainSpecificBN final : public DualDomainNorm {
   public:
    DomainSpecificBN(std::size_t channels, NormOptions options, bool shared_affine);
    NormKind kind() const override { return shared_affine_ ? NormKind::DSBNShared : NormKind::DSBN; }
    std::unique_ptr<Normalizer> clone() const override { return std::make_unique<DomainSpecificBN>(*this); }
    std::pair<Var, Var> forward_train(Var xs, Var xt, LayerTrace* trace) override;
    Var forward_eval(Var x, Domain domain) const override;
    std::vector<Parameter*> parameters() override;

   protected:
    void write_json(nlohmann::json& j) const override;
    void read_json(const nlohmann::json& j) override;

   private:
    bool shared_affine_;
    Parameter gamma_t_, beta_t_;  // target affine when not shared
};

/// Transferable normalization: per-domain BN followed by a (1 + a) channel attention
/// computed from detached statistics.
class TransferNorm final : public DualDomainNorm {
   public:
    TransferNorm(std::size_t channels, NormOptions options);
    NormKind kind() const override { return NormKind::TN; }
    std::unique_ptr<Normalizer> clone() const override { return std::make_unique<TransferNorm>(*this); }
    std::pair<Var, Var> forward_train(Var xs, Var xt, LayerTrace* trace) override;
    Var forward_eval(Var x, Domain domain) const override;
    std::vector<Parameter*> parameters() override { return {&gamma_, &beta_}; }

    /// a_j = C (1 + d_j)^-1 / sum_k (1 + d_k)^-1 with d_j = |mu_s/sd_s - mu_t/sd_t|.
    static Tensor attention(const DomainStats& s, const DomainStats& t, double eps);

    /// Holds the attention at a fixed value instead of recomputing it from the batch
    /// (finite-difference probes of the detached branch).
    void pin_attention(std::optional<Tensor> attention) { pinned_ = std::move(attention); }

   private:
    std::optional<Tensor> pinned_;
};

/// Reciprocal normalization.
class ReciprocalNorm final : public DualDomainNorm {
   public:
    ReciprocalNorm(std::size_t channels, NormOptions options);
    NormKind kind() const override { return NormKind::RN; }
    std::unique_ptr<Normalizer> clone() const override { return std::make_unique<ReciprocalNorm>(*this); }
    std::pair<Var, Var> forward_train(Var xs, Var xt, LayerTrace* trace) override;
    std::vector<Parameter*> parameters() override;

    GateParams gates() const;
    void set_gates(const GateParams& g);
    Parameter& gate(std::size_t i) { return gates_[i]; }  // order: mu_s, var_s, mu_t, var_t

   protected:
    void write_json(nlohmann::json& j) const override;
    void read_json(const nlohmann::json& j) override;

   private:
    Parameter gates_[4];
};

std::unique_ptr<Normalizer> make_normalizer(NormKind kind, std::size_t channels, const NormOptions& options = {});
std::unique_ptr<Normalizer> normalizer_from_json(const nlohmann::json& j);

// JSON helpers shared by the checkpoint writers.
nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j, const Shape& shape);
nlohmann::json stats_to_json(const DomainStats& s);
DomainStats stats_from_json(const nlohmann::json& j, std::size_t channels);
nlohmann::json report_to_json(const CorrelationReport& r);
CorrelationReport report_from_json(const nlohmann::json& j);

}  // namespace rnlab
