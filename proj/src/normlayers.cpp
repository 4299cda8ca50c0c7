#include "rnlab/normlayers.hpp"

#include <algorithm>
#include <cmath>

#include "rnlab/numerics.hpp"
#include "rnlab/ops.hpp"

namespace rnlab {

using nlohmann::json;

// ---- names ----------------------------------------------------------------

std::string to_string(Domain d) { return d == Domain::Source ? "s" : "t"; }

std::string to_string(NormKind k) {
    switch (k) {
        case NormKind::None: return "none";
        case NormKind::BN: return "bn";
        case NormKind::AdaBN: return "adabn";
        case NormKind::AutoDIAL: return "autodial";
        case NormKind::DSBN: return "dsbn";
        case NormKind::DSBNShared: return "dsbn_shared";
        case NormKind::TN: return "tn";
        case NormKind::RN: return "rn";
    }
    return "?";
}

std::string to_string(Measure m) {
    switch (m) {
        case Measure::NegL2: return "neg_l2";
        case Measure::NegL1: return "neg_l1";
        case Measure::NegCosine: return "neg_cosine";
    }
    return "?";
}

Domain parse_domain(std::string_view s) {
    if (s == "s" || s == "source") return Domain::Source;
    if (s == "t" || s == "target") return Domain::Target;
    throw InvalidInput("unknown domain '" + std::string(s) + "' (expected s or t)");
}

NormKind parse_norm_kind(std::string_view s) {
    for (auto k : {NormKind::None, NormKind::BN, NormKind::AdaBN, NormKind::AutoDIAL, NormKind::DSBN,
                   NormKind::DSBNShared, NormKind::TN, NormKind::RN})
        if (to_string(k) == s) return k;
    throw InvalidInput("unknown normalizer '" + std::string(s) +
                       "' (expected none|bn|adabn|autodial|dsbn|dsbn_shared|tn|rn)");
}

Measure parse_measure(std::string_view s) {
    for (auto m : {Measure::NegL2, Measure::NegL1, Measure::NegCosine})
        if (to_string(m) == s) return m;
    throw InvalidInput("unknown measure '" + std::string(s) + "' (expected neg_l2|neg_l1|neg_cosine)");
}

bool is_dual_domain(NormKind k) {
    return k == NormKind::AutoDIAL || k == NormKind::DSBN || k == NormKind::DSBNShared || k == NormKind::TN ||
           k == NormKind::RN;
}

// ---- value types ------------------------------------------------------------

DomainStats DomainStats::defaults(std::size_t channels) {
    return {Tensor(Shape{channels}, 0.0), Tensor(Shape{channels}, 1.0)};
}

void DomainStats::validate() const {
    if (mu.rank() != 1 || var.rank() != 1 || mu.size() != var.size() || mu.size() == 0)
        throw InvalidInput("domain stats need mu and var vectors of equal length >= 1");
    for (double v : var.data())
        if (!(v >= 0.0)) throw InvalidInput("domain stats: negative or NaN variance");
}

GateParams GateParams::filled(std::size_t channels, double value) {
    Tensor g(Shape{channels}, value);
    return {g, g, g, g};
}

void NormOptions::validate() const {
    if (!(epsilon > 0.0)) throw InvalidInput("epsilon must be > 0");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidInput("alpha must lie in (0, 1]");
    if (group_size == 0) throw InvalidInput("group_size must be >= 1");
    if (fixed_gate && !(*fixed_gate >= kGateRange.lo && *fixed_gate <= kGateRange.hi))
        throw InvalidInput("fixed gate must lie in [0.5, 1]");
}

// ---- RC / RA ----------------------------------------------------------------

namespace {

Var logits_block(StatVars s, StatVars t, Measure measure, bool for_var) {
    switch (measure) {
        case Measure::NegL2: return for_var ? ops::pairwise_neg_sq(t.var, s.var) : ops::pairwise_neg_sq(t.mu, s.mu);
        case Measure::NegL1: return for_var ? ops::pairwise_neg_abs(t.var, s.var) : ops::pairwise_neg_abs(t.mu, s.mu);
        case Measure::NegCosine:
            return ops::pairwise_neg_cosine(ops::stack_columns(t.mu, t.var), ops::stack_columns(s.mu, s.var));
    }
    throw InvalidInput("unknown measure");
}

}  // namespace

CompensationVars rc_compensate(StatVars source, StatVars target, Measure measure, std::size_t group_size) {
    const std::size_t c = source.mu.size();
    if (source.var.size() != c || target.mu.size() != c || target.var.size() != c)
        throw InvalidInput("rc_compensate: channel counts differ between domains");
    if (c == 0) throw InvalidInput("rc_compensate: no channels");
    if (group_size == 0) throw InvalidInput("rc_compensate: group_size must be >= 1");

    CompensationVars out;
    std::vector<Var> cc_s_mu, cc_s_var, cc_t_mu, cc_t_var;
    for (std::size_t begin = 0; begin < c; begin += group_size) {
        const std::size_t end = std::min(c, begin + group_size);
        StatVars s = source, t = target;
        if (begin != 0 || end != c) {
            s = {ops::slice(source.mu, begin, end), ops::slice(source.var, begin, end)};
            t = {ops::slice(target.mu, begin, end), ops::slice(target.var, begin, end)};
        }
        // E_{s->t} is the transpose of E_{t->s}
        Var e_mu_ts = logits_block(s, t, measure, false);
        Var e_var_ts = measure == Measure::NegCosine ? e_mu_ts : logits_block(s, t, measure, true);
        CompensationVars::Block b{begin, ops::softmax_rows(e_mu_ts), {}, ops::softmax_rows(ops::transpose(e_mu_ts)), {}};
        if (measure == Measure::NegCosine) {
            b.rho_var_ts = b.rho_mu_ts;
            b.rho_var_st = b.rho_mu_st;
        } else {
            b.rho_var_ts = ops::softmax_rows(e_var_ts);
            b.rho_var_st = ops::softmax_rows(ops::transpose(e_var_ts));
        }
        cc_t_mu.push_back(ops::matvec(b.rho_mu_ts, s.mu));
        cc_t_var.push_back(ops::matvec(b.rho_var_ts, s.var));
        cc_s_mu.push_back(ops::matvec(b.rho_mu_st, t.mu));
        cc_s_var.push_back(ops::matvec(b.rho_var_st, t.var));
        out.blocks.push_back(b);
    }
    if (out.blocks.size() == 1) {
        out.cc_s = {cc_s_mu[0], cc_s_var[0]};
        out.cc_t = {cc_t_mu[0], cc_t_var[0]};
    } else {
        out.cc_s = {ops::concat(cc_s_mu), ops::concat(cc_s_var)};
        out.cc_t = {ops::concat(cc_t_mu), ops::concat(cc_t_var)};
    }
    return out;
}

StatVars ra_aggregate(StatVars stats, StatVars cc, Var g_mu, Var g_var) {
    Var mu = ops::add(ops::mul(g_mu, stats.mu), ops::mul(ops::one_minus(g_mu), cc.mu));
    Var var = ops::add(ops::mul(g_var, stats.var), ops::mul(ops::one_minus(g_var), cc.var));
    return {mu, var};
}

namespace {

Tensor assemble_rho(const CompensationVars& comp, std::size_t c, Var CompensationVars::Block::*member) {
    Tensor full(Shape{c, c});
    for (const auto& b : comp.blocks) {
        const Tensor& r = (b.*member).value();
        const std::size_t n = r.dim(0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) full(b.begin + i, b.begin + j) = r(i, j);
    }
    return full;
}

void fill_report(CorrelationReport& r, const CompensationVars& comp, std::size_t c) {
    r.rho_mu_ts = assemble_rho(comp, c, &CompensationVars::Block::rho_mu_ts);
    r.rho_var_ts = assemble_rho(comp, c, &CompensationVars::Block::rho_var_ts);
    r.rho_mu_st = assemble_rho(comp, c, &CompensationVars::Block::rho_mu_st);
    r.rho_var_st = assemble_rho(comp, c, &CompensationVars::Block::rho_var_st);
    r.cc_s = {comp.cc_s.mu.value(), comp.cc_s.var.value()};
    r.cc_t = {comp.cc_t.mu.value(), comp.cc_t.var.value()};
}

CompensationVars identity_compensation(StatVars s, StatVars t) {
    Tape& tape = *s.mu.tape;
    const std::size_t c = s.mu.size();
    Tensor eye(Shape{c, c});
    for (std::size_t i = 0; i < c; ++i) eye(i, i) = 1.0;
    Var e = tape.constant(eye);
    CompensationVars comp;
    comp.blocks.push_back({0, e, e, e, e});
    comp.cc_s = t;
    comp.cc_t = s;
    return comp;
}

}  // namespace

CorrelationReport rc_compensate(const DomainStats& source, const DomainStats& target, Measure measure,
                                std::size_t group_size) {
    source.validate();
    target.validate();
    if (source.channels() != target.channels()) throw InvalidInput("rc_compensate: channel counts differ");
    Tape tape;
    StatVars s{tape.constant(source.mu), tape.constant(source.var)};
    StatVars t{tape.constant(target.mu), tape.constant(target.var)};
    CorrelationReport r;
    fill_report(r, rc_compensate(s, t, measure, group_size), source.channels());
    return r;
}

DomainStats ra_aggregate(const DomainStats& stats, const Tensor& cc_mu, const Tensor& cc_var, const Tensor& g_mu,
                         const Tensor& g_var) {
    stats.validate();
    const std::size_t c = stats.channels();
    for (const Tensor* t : {&cc_mu, &cc_var, &g_mu, &g_var})
        if (t->rank() != 1 || t->size() != c) throw InvalidInput("ra_aggregate: length mismatch");
    Tape tape;
    auto out = ra_aggregate({tape.constant(stats.mu), tape.constant(stats.var)},
                            {tape.constant(cc_mu), tape.constant(cc_var)}, tape.constant(g_mu), tape.constant(g_var));
    return {out.mu.value(), out.var.value()};
}

DomainStats ema_update(const DomainStats& running, const DomainStats& batch, double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidInput("ema_update: alpha must lie in (0, 1]");
    require_same_shape(running.mu, batch.mu, "ema_update(mu)");
    require_same_shape(running.var, batch.var, "ema_update(var)");
    DomainStats out = running;
    for (std::size_t c = 0; c < out.mu.size(); ++c) {
        out.mu[c] = (1.0 - alpha) * running.mu[c] + alpha * batch.mu[c];
        out.var[c] = (1.0 - alpha) * running.var[c] + alpha * batch.var[c];
    }
    return out;
}

// ---- Normalizer base ------------------------------------------------------

Normalizer::Normalizer(std::size_t channels, NormOptions options) : channels_(channels), options_(options) {
    if (channels == 0) throw InvalidInput("normalizer needs at least one channel");
    options_.validate();
}

void Normalizer::check_train_inputs(Var xs, Var xt) const {
    for (Var x : {xs, xt}) {
        check_eval_input(x);
        if (x.shape()[0] == 0) throw InvalidInput("normalizer: empty batch");
    }
    if (xs.tape != xt.tape) throw InvalidInput("normalizer: batches recorded on different tapes");
}

void Normalizer::check_eval_input(Var x) const {
    if (x.value().rank() < 2 || x.shape()[1] != channels_)
        throw InvalidInput("normalizer expects [N, " + std::to_string(channels_) + ", ...], got " +
                           shape_string(x.shape()));
}

json Normalizer::to_json() const {
    json j;
    j["kind"] = to_string(kind());
    j["C"] = channels_;
    j["epsilon"] = options_.epsilon;
    j["alpha"] = options_.alpha;
    j["group_size"] = options_.group_size;
    j["measure"] = to_string(options_.measure);
    j["fixed_gate"] = options_.fixed_gate ? json(*options_.fixed_gate) : json(nullptr);
    j["reciprocal"] = options_.reciprocal;
    write_json(j);
    return j;
}

void Normalizer::load_json(const json& j) {
    if (j.at("kind").get<std::string>() != to_string(kind())) throw InvalidInput("checkpoint layer kind mismatch");
    if (j.at("C").get<std::size_t>() != channels_) throw InvalidInput("checkpoint channel count mismatch");
    read_json(j);
}

std::pair<Var, Var> Identity::forward_train(Var xs, Var xt, LayerTrace*) {
    check_train_inputs(xs, xt);
    return {xs, xt};
}

Var Identity::forward_eval(Var x, Domain) const {
    check_eval_input(x);
    return x;
}

// ---- JSON helpers ---------------------------------------------------------

json tensor_to_json(const Tensor& t) { return json(t.values()); }

Tensor tensor_from_json(const json& j, const Shape& shape) {
    auto v = j.get<std::vector<double>>();
    if (v.size() != shape_size(shape))
        throw InvalidInput("checkpoint array has " + std::to_string(v.size()) + " values, expected " +
                           std::to_string(shape_size(shape)));
    return Tensor(shape, std::move(v));
}

json stats_to_json(const DomainStats& s) { return {{"mu", tensor_to_json(s.mu)}, {"var", tensor_to_json(s.var)}}; }

DomainStats stats_from_json(const json& j, std::size_t channels) {
    DomainStats s{tensor_from_json(j.at("mu"), {channels}), tensor_from_json(j.at("var"), {channels})};
    s.validate();
    return s;
}

namespace {

json matrix_to_json(const Tensor& m) {
    json rows = json::array();
    if (m.rank() != 2) return rows;
    for (std::size_t i = 0; i < m.dim(0); ++i) {
        std::vector<double> row(m.data().begin() + static_cast<std::ptrdiff_t>(i * m.dim(1)),
                                m.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * m.dim(1)));
        rows.push_back(row);
    }
    return rows;
}

json gates_to_json(const GateParams& g) {
    return {{"g_mu_s", tensor_to_json(g.g_mu_s)},
            {"g_var_s", tensor_to_json(g.g_var_s)},
            {"g_mu_t", tensor_to_json(g.g_mu_t)},
            {"g_var_t", tensor_to_json(g.g_var_t)}};
}

}  // namespace

json report_to_json(const CorrelationReport& r) {
    return {{"rho_mu_ts", matrix_to_json(r.rho_mu_ts)},   {"rho_var_ts", matrix_to_json(r.rho_var_ts)},
            {"rho_mu_st", matrix_to_json(r.rho_mu_st)},   {"rho_var_st", matrix_to_json(r.rho_var_st)},
            {"cc_s", stats_to_json(r.cc_s)},              {"cc_t", stats_to_json(r.cc_t)},
            {"agg_s", stats_to_json(r.agg_s)},            {"agg_t", stats_to_json(r.agg_t)},
            {"gates", gates_to_json(r.gates)}};
}

namespace {

Tensor matrix_from_json(const json& rows, std::size_t c) {
    if (!rows.is_array() || rows.size() != c) throw InvalidInput("checkpoint correlation matrix must have C rows");
    std::vector<double> v;
    v.reserve(c * c);
    for (const auto& row : rows) {
        auto r = row.get<std::vector<double>>();
        if (r.size() != c) throw InvalidInput("checkpoint correlation matrix must be square");
        v.insert(v.end(), r.begin(), r.end());
    }
    return Tensor({c, c}, std::move(v));
}

}  // namespace

CorrelationReport report_from_json(const json& j) {
    const std::size_t c = j.at("rho_mu_ts").size();
    CorrelationReport r;
    r.rho_mu_ts = matrix_from_json(j.at("rho_mu_ts"), c);
    r.rho_var_ts = matrix_from_json(j.at("rho_var_ts"), c);
    r.rho_mu_st = matrix_from_json(j.at("rho_mu_st"), c);
    r.rho_var_st = matrix_from_json(j.at("rho_var_st"), c);
    r.cc_s = stats_from_json(j.at("cc_s"), c);
    r.cc_t = stats_from_json(j.at("cc_t"), c);
    r.agg_s = stats_from_json(j.at("agg_s"), c);
    r.agg_t = stats_from_json(j.at("agg_t"), c);
    const auto& g = j.at("gates");
    r.gates = {tensor_from_json(g.at("g_mu_s"), {c}), tensor_from_json(g.at("g_var_s"), {c}),
               tensor_from_json(g.at("g_mu_t"), {c}), tensor_from_json(g.at("g_var_t"), {c})};
    return r;
}

// ---- BN / AdaBN -----------------------------------------------------------

namespace {

Parameter affine_param(const char* name, std::size_t c, double v) {
    Parameter p(name, Tensor(Shape{c}, v));
    p.decay = false;
    return p;
}

DomainStats moments_of(const Tensor& x) {
    auto [mu, var] = channel_moments(x);
    return {std::move(mu), std::move(var)};
}

Var affine(Var x, const Parameter& gamma, const Parameter& beta) {
    // eval path: parameters enter as constants
    Tape& t = *x.tape;
    return ops::channel_affine(x, t.constant(gamma.value), t.constant(beta.value));
}

}  // namespace

BatchNorm::BatchNorm(std::size_t channels, NormOptions options)
    : Normalizer(channels, options),
      gamma_(affine_param("gamma", channels, 1.0)),
      beta_(affine_param("beta", channels, 0.0)),
      running_(DomainStats::defaults(channels)) {}

std::pair<Var, Var> BatchNorm::forward_train(Var xs, Var xt, LayerTrace* trace) {
    check_train_inputs(xs, xt);
    Tape& tape = *xs.tape;
    Var joint = ops::concat_batch(xs, xt);
    auto m = ops::channel_moments(joint);
    Var y = ops::channel_affine(ops::normalize_channels(joint, m.mu, m.var, options_.epsilon),
                                tape.parameter(gamma_), tape.parameter(beta_));
    const std::size_t ns = xs.shape()[0];
    if (!freeze_running_) running_ = ema_update(running_, {m.mu.value(), m.var.value()}, options_.alpha);
    if (trace) trace->stat_nodes = {m.mu, m.var};
    return {ops::slice_batch(y, 0, ns), ops::slice_batch(y, ns, y.shape()[0])};
}

Var BatchNorm::forward_eval(Var x, Domain) const {
    check_eval_input(x);
    Tape& t = *x.tape;
    return affine(ops::normalize_channels(x, t.constant(running_.mu), t.constant(running_.var), options_.epsilon),
                  gamma_, beta_);
}

void BatchNorm::write_json(json& j) const {
    j["gamma"] = tensor_to_json(gamma_.value);
    j["beta"] = tensor_to_json(beta_.value);
    j["running"] = stats_to_json(running_);
}

void BatchNorm::read_json(const json& j) {
    gamma_.value = tensor_from_json(j.at("gamma"), {channels_});
    beta_.value = tensor_from_json(j.at("beta"), {channels_});
    running_ = stats_from_json(j.at("running"), channels_);
}

AdaBN::AdaBN(std::size_t channels, NormOptions options)
    : BatchNorm(channels, options), running_t_(DomainStats::defaults(channels)) {}

std::pair<Var, Var> AdaBN::forward_train(Var xs, Var xt, LayerTrace* trace) {
    auto out = BatchNorm::forward_train(xs, xt, trace);
    if (!freeze_running_) running_t_ = ema_update(running_t_, moments_of(xt.value()), options_.alpha);
    return out;
}

Var AdaBN::forward_eval(Var x, Domain domain) const {
    if (domain == Domain::Source) return BatchNorm::forward_eval(x, domain);
    check_eval_input(x);
    Tape& t = *x.tape;
    return affine(
        ops::normalize_channels(x, t.constant(running_t_.mu), t.constant(running_t_.var), options_.epsilon), gamma_,
        beta_);
}

void AdaBN::write_json(json& j) const {
    BatchNorm::write_json(j);
    j["running_t"] = stats_to_json(running_t_);
}

void AdaBN::read_json(const json& j) {
    BatchNorm::read_json(j);
    running_t_ = stats_from_json(j.at("running_t"), channels_);
}

// ---- dual-domain family ---------------------------------------------------

DualDomainNorm::DualDomainNorm(std::size_t channels, NormOptions options)
    : Normalizer(channels, options),
      gamma_(affine_param("gamma", channels, 1.0)),
      beta_(affine_param("beta", channels, 0.0)),
      running_s_(DomainStats::defaults(channels)),
      running_t_(DomainStats::defaults(channels)) {}

Var DualDomainNorm::forward_eval(Var x, Domain domain) const {
    check_eval_input(x);
    Tape& t = *x.tape;
    const DomainStats& r = domain == Domain::Source ? running_s_ : running_t_;
    return affine(ops::normalize_channels(x, t.constant(r.mu), t.constant(r.var), options_.epsilon), gamma_, beta_);
}

void DualDomainNorm::track(const Tensor& mu_s, const Tensor& var_s, const Tensor& mu_t, const Tensor& var_t) {
    if (freeze_running_) return;
    running_s_ = ema_update(running_s_, {mu_s, var_s}, options_.alpha);
    running_t_ = ema_update(running_t_, {mu_t, var_t}, options_.alpha);
}

std::pair<Var, Var> DualDomainNorm::normalize_pair(Var xs, Var xt, StatVars s, StatVars t) {
    Tape& tape = *xs.tape;
    Var gamma = tape.parameter(gamma_);
    Var beta = tape.parameter(beta_);
    const double eps = options_.epsilon;
    return {ops::channel_affine(ops::normalize_channels(xs, s.mu, s.var, eps), gamma, beta),
            ops::channel_affine(ops::normalize_channels(xt, t.mu, t.var, eps), gamma, beta)};
}

void DualDomainNorm::write_json(json& j) const {
    j["gamma"] = tensor_to_json(gamma_.value);
    j["beta"] = tensor_to_json(beta_.value);
    j["running_s"] = stats_to_json(running_s_);
    j["running_t"] = stats_to_json(running_t_);
}

void DualDomainNorm::read_json(const json& j) {
    gamma_.value = tensor_from_json(j.at("gamma"), {channels_});
    beta_.value = tensor_from_json(j.at("beta"), {channels_});
    running_s_ = stats_from_json(j.at("running_s"), channels_);
    running_t_ = stats_from_json(j.at("running_t"), channels_);
}

// AutoDIAL

AutoDial::AutoDial(std::size_t channels, NormOptions options)
    : DualDomainNorm(channels, options), mix_("mix", Tensor(Shape{channels}, 1.0)) {
    mix_.bounds = kGateRange;
    mix_.decay = false;
}

std::pair<Var, Var> AutoDial::forward_train(Var xs, Var xt, LayerTrace* trace) {
    check_train_inputs(xs, xt);
    auto ms = ops::channel_moments(xs);
    auto mt = ops::channel_moments(xt);
    StatVars s{ms.mu, ms.var}, t{mt.mu, mt.var};
    Var a = xs.tape->parameter(mix_);
    // corresponding-channel mixing: the other domain's stats play the compensatory role
    StatVars agg_s = ra_aggregate(s, t, a, a);
    StatVars agg_t = ra_aggregate(t, s, a, a);
    auto out = normalize_pair(xs, xt, agg_s, agg_t);
    track(agg_s.mu.value(), agg_s.var.value(), agg_t.mu.value(), agg_t.var.value());
    if (trace) trace->stat_nodes = {ms.mu, ms.var, mt.mu, mt.var};
    return out;
}

void AutoDial::write_json(json& j) const {
    DualDomainNorm::write_json(j);
    j["mix"] = tensor_to_json(mix_.value);
}

void AutoDial::read_json(const json& j) {
    DualDomainNorm::read_json(j);
    mix_.value = tensor_from_json(j.at("mix"), {channels_});
}

// DSBN

DomainSpecificBN::DomainSpecificBN(std::size_t channels, NormOptions options, bool shared_affine)
    : DualDomainNorm(channels, options),
      shared_affine_(shared_affine),
      gamma_t_(affine_param("gamma_t", channels, 1.0)),
      beta_t_(affine_param("beta_t", channels, 0.0)) {
    if (!shared_affine_) {
        gamma_.name = "gamma_s";
        beta_.name = "beta_s";
    }
}

std::vector<Parameter*> DomainSpecificBN::parameters() {
    if (shared_affine_) return {&gamma_, &beta_};
    return {&gamma_, &beta_, &gamma_t_, &beta_t_};
}

std::pair<Var, Var> DomainSpecificBN::forward_train(Var xs, Var xt, LayerTrace* trace) {
    check_train_inputs(xs, xt);
    auto ms = ops::channel_moments(xs);
    auto mt = ops::channel_moments(xt);
    track(ms.mu.value(), ms.var.value(), mt.mu.value(), mt.var.value());
    if (trace) trace->stat_nodes = {ms.mu, ms.var, mt.mu, mt.var};
    if (shared_affine_) return normalize_pair(xs, xt, {ms.mu, ms.var}, {mt.mu, mt.var});
    Tape& tape = *xs.tape;
    const double eps = options_.epsilon;
    return {ops::channel_affine(ops::normalize_channels(xs, ms.mu, ms.var, eps), tape.parameter(gamma_),
                                tape.parameter(beta_)),
            ops::channel_affine(ops::normalize_channels(xt, mt.mu, mt.var, eps), tape.parameter(gamma_t_),
                                tape.parameter(beta_t_))};
}

Var DomainSpecificBN::forward_eval(Var x, Domain domain) const {
    if (shared_affine_ || domain == Domain::Source) return DualDomainNorm::forward_eval(x, domain);
    check_eval_input(x);
    Tape& t = *x.tape;
    return affine(
        ops::normalize_channels(x, t.constant(running_t_.mu), t.constant(running_t_.var), options_.epsilon),
        gamma_t_, beta_t_);
}

void DomainSpecificBN::write_json(json& j) const {
    DualDomainNorm::write_json(j);
    if (!shared_affine_) {
        j["gamma_t"] = tensor_to_json(gamma_t_.value);
        j["beta_t"] = tensor_to_json(beta_t_.value);
    }
}

void DomainSpecificBN::read_json(const json& j) {
    DualDomainNorm::read_json(j);
    if (!shared_affine_) {
        gamma_t_.value = tensor_from_json(j.at("gamma_t"), {channels_});
        beta_t_.value = tensor_from_json(j.at("beta_t"), {channels_});
    }
}

// TN

TransferNorm::TransferNorm(std::size_t channels, NormOptions options) : DualDomainNorm(channels, options) {}

Tensor TransferNorm::attention(const DomainStats& s, const DomainStats& t, double eps) {
    const std::size_t c = s.channels();
    Tensor inv(Shape{c});
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
        const double d = std::abs(s.mu[j] / std::sqrt(s.var[j] + eps) - t.mu[j] / std::sqrt(t.var[j] + eps));
        inv[j] = 1.0 / (1.0 + d);
        total += inv[j];
    }
    Tensor a(Shape{c});
    for (std::size_t j = 0; j < c; ++j) a[j] = static_cast<double>(c) * inv[j] / total;
    return a;
}

std::pair<Var, Var> TransferNorm::forward_train(Var xs, Var xt, LayerTrace* trace) {
    check_train_inputs(xs, xt);
    Tape& tape = *xs.tape;
    auto ms = ops::channel_moments(xs);
    auto mt = ops::channel_moments(xt);
    auto as = ops::channel_moments(xs);
    auto at = ops::channel_moments(xt);
    Var ds_mu = ops::detach(as.mu), ds_var = ops::detach(as.var);
    Var dt_mu = ops::detach(at.mu), dt_var = ops::detach(at.var);
    Tensor a = pinned_ ? *pinned_
                       : attention({ds_mu.value(), ds_var.value()}, {dt_mu.value(), dt_var.value()}, options_.epsilon);
    for (double& v : a.data()) v += 1.0;
    Var boost = tape.constant(std::move(a));
    auto [ys, yt] = normalize_pair(xs, xt, {ms.mu, ms.var}, {mt.mu, mt.var});
    track(ms.mu.value(), ms.var.value(), mt.mu.value(), mt.var.value());
    if (trace) {
        trace->stat_nodes = {ms.mu, ms.var, mt.mu, mt.var};
        trace->attention_stat_nodes = {as.mu, as.var, at.mu, at.var};
    }
    return {ops::channel_scale(ys, boost), ops::channel_scale(yt, boost)};
}

Var TransferNorm::forward_eval(Var x, Domain domain) const {
    Var y = DualDomainNorm::forward_eval(x, domain);
    Tensor a = attention(running_s_, running_t_, options_.epsilon);
    for (double& v : a.data()) v += 1.0;
    return ops::channel_scale(y, x.tape->constant(std::move(a)));
}

// RN

ReciprocalNorm::ReciprocalNorm(std::size_t channels, NormOptions options) : DualDomainNorm(channels, options) {
    const char* names[4] = {"g_mu_s", "g_var_s", "g_mu_t", "g_var_t"};
    const double init = options_.fixed_gate.value_or(1.0);
    for (std::size_t i = 0; i < 4; ++i) {
        gates_[i] = Parameter(names[i], Tensor(Shape{channels}, init));
        gates_[i].bounds = kGateRange;
        gates_[i].decay = false;
        gates_[i].trainable = !options_.fixed_gate.has_value();
    }
}

std::vector<Parameter*> ReciprocalNorm::parameters() {
    return {&gamma_, &beta_, &gates_[0], &gates_[1], &gates_[2], &gates_[3]};
}

GateParams ReciprocalNorm::gates() const {
    return {gates_[0].value, gates_[1].value, gates_[2].value, gates_[3].value};
}

void ReciprocalNorm::set_gates(const GateParams& g) {
    const Tensor* src[4] = {&g.g_mu_s, &g.g_var_s, &g.g_mu_t, &g.g_var_t};
    for (std::size_t i = 0; i < 4; ++i) {
        if (src[i]->rank() != 1 || src[i]->size() != channels_) throw InvalidInput("set_gates: length mismatch");
        gates_[i].value = *src[i];
    }
}

std::pair<Var, Var> ReciprocalNorm::forward_train(Var xs, Var xt, LayerTrace* trace) {
    check_train_inputs(xs, xt);
    Tape& tape = *xs.tape;
    auto ms = ops::channel_moments(xs);
    auto mt = ops::channel_moments(xt);
    StatVars s{ms.mu, ms.var}, t{mt.mu, mt.var};
    CompensationVars comp = options_.reciprocal ? rc_compensate(s, t, options_.measure, options_.group_size)
                                                : identity_compensation(s, t);
    Var g[4];
    for (std::size_t i = 0; i < 4; ++i) g[i] = tape.parameter(gates_[i]);
    StatVars agg_s = ra_aggregate(s, comp.cc_s, g[0], g[1]);
    StatVars agg_t = ra_aggregate(t, comp.cc_t, g[2], g[3]);
    auto out = normalize_pair(xs, xt, agg_s, agg_t);
    track(agg_s.mu.value(), agg_s.var.value(), agg_t.mu.value(), agg_t.var.value());
    if (trace) {
        CorrelationReport r;
        fill_report(r, comp, channels_);
        r.agg_s = {agg_s.mu.value(), agg_s.var.value()};
        r.agg_t = {agg_t.mu.value(), agg_t.var.value()};
        r.gates = gates();
        trace->report = std::move(r);
        trace->stat_nodes = {ms.mu, ms.var, mt.mu, mt.var};
    }
    return out;
}

void ReciprocalNorm::write_json(json& j) const {
    DualDomainNorm::write_json(j);
    j["gates"] = gates_to_json(gates());
}

void ReciprocalNorm::read_json(const json& j) {
    DualDomainNorm::read_json(j);
    const json& g = j.at("gates");
    set_gates({tensor_from_json(g.at("g_mu_s"), {channels_}), tensor_from_json(g.at("g_var_s"), {channels_}),
               tensor_from_json(g.at("g_mu_t"), {channels_}), tensor_from_json(g.at("g_var_t"), {channels_})});
}

// ---- factory ----------------------------------------------------------------

std::unique_ptr<Normalizer> make_normalizer(NormKind kind, std::size_t channels, const NormOptions& options) {
    switch (kind) {
        case NormKind::None: return std::make_unique<Identity>(channels);
        case NormKind::BN: return std::make_unique<BatchNorm>(channels, options);
        case NormKind::AdaBN: return std::make_unique<AdaBN>(channels, options);
        case NormKind::AutoDIAL: return std::make_unique<AutoDial>(channels, options);
        case NormKind::DSBN: return std::make_unique<DomainSpecificBN>(channels, options, false);
        case NormKind::DSBNShared: return std::make_unique<DomainSpecificBN>(channels, options, true);
        case NormKind::TN: return std::make_unique<TransferNorm>(channels, options);
        case NormKind::RN: return std::make_unique<ReciprocalNorm>(channels, options);
    }
    throw InvalidInput("unknown normalizer kind");
}

std::unique_ptr<Normalizer> normalizer_from_json(const json& j) {
    NormOptions o;
    o.epsilon = j.at("epsilon").get<double>();
    o.alpha = j.at("alpha").get<double>();
    o.group_size = j.at("group_size").get<std::size_t>();
    o.measure = parse_measure(j.at("measure").get<std::string>());
    if (j.contains("fixed_gate") && !j["fixed_gate"].is_null()) o.fixed_gate = j["fixed_gate"].get<double>();
    if (j.contains("reciprocal")) o.reciprocal = j["reciprocal"].get<bool>();
    auto layer = make_normalizer(parse_norm_kind(j.at("kind").get<std::string>()), j.at("C").get<std::size_t>(), o);
    layer->load_json(j);
    return layer;
}

}  // namespace rnlab
