#include "rnlab/models.hpp"

#include <cmath>

#include "rnlab/ops.hpp"
#include "rnlab/random.hpp"

namespace rnlab {

using nlohmann::json;

void MlpSpec::validate() const {
    if (widths.size() < 3) throw InvalidInput("MLP needs an input width, at least one hidden width and a class count");
    for (auto w : widths)
        if (w == 0) throw InvalidInput("MLP widths must be >= 1");
    norm_options.validate();
}

void DiscriminatorSpec::validate() const {
    if (feature_width == 0 || hidden == 0) throw InvalidInput("discriminator widths must be >= 1");
}

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (double& v : t.data()) v = dist(rng);
    return t;
}

}  // namespace

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight("weight", he_normal({in, out}, in, rng)), bias("bias", Tensor(Shape{out})) {
    bias.decay = false;
}

Var Linear::forward(Var x) {
    Tape& t = *x.tape;
    return ops::add_bias(ops::matmul(x, t.parameter(weight)), t.parameter(bias));
}

Var Linear::forward_eval(Var x) const {
    Tape& t = *x.tape;
    return ops::add_bias(ops::matmul(x, t.constant(weight.value)), t.constant(bias.value));
}

json Linear::to_json() const {
    return {{"in", weight.value.dim(0)},
            {"out", weight.value.dim(1)},
            {"weight", tensor_to_json(weight.value)},
            {"bias", tensor_to_json(bias.value)}};
}

void Linear::load_json(const json& j) {
    const std::size_t in = j.at("in").get<std::size_t>(), out = j.at("out").get<std::size_t>();
    if (weight.value.shape() != Shape{in, out}) throw InvalidInput("checkpoint linear layer shape mismatch");
    weight.value = tensor_from_json(j.at("weight"), {in, out});
    bias.value = tensor_from_json(j.at("bias"), {out});
}

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng)
    : weight("conv_weight", he_normal({out, in, kernel, kernel}, in * kernel * kernel, rng)),
      bias("conv_bias", Tensor(Shape{out})) {}

Var Conv2d::forward(Var x) {
    Tape& t = *x.tape;
    return ops::conv2d(x, t.parameter(weight), t.parameter(bias));
}

// ---- Mlp ----------------------------------------------------------------------

Mlp::Mlp(MlpSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng(derive_seed(seed, streams::kInit));
    const std::size_t layers = spec_.widths.size() - 1;
    linears_.reserve(layers);
    for (std::size_t l = 0; l < layers; ++l) linears_.emplace_back(spec_.widths[l], spec_.widths[l + 1], rng);
    for (std::size_t l = 0; l < spec_.hidden_layers(); ++l)
        norms_.push_back(make_normalizer(spec_.norm, spec_.widths[l + 1], spec_.norm_options));
}

Mlp::Mlp(const Mlp& other) : spec_(other.spec_), linears_(other.linears_) {
    for (const auto& n : other.norms_) norms_.push_back(n->clone());
}

Mlp& Mlp::operator=(const Mlp& other) {
    if (this != &other) {
        Mlp copy(other);
        *this = std::move(copy);
    }
    return *this;
}

void Mlp::check_input(Var x) const {
    if (x.value().rank() != 2 || x.shape()[1] != spec_.input_width())
        throw InvalidInput("MLP expects [N, " + std::to_string(spec_.input_width()) + "] input, got " +
                           shape_string(x.shape()));
}

DomainOutputs Mlp::forward_train(Var xs, Var xt, std::vector<LayerTrace>* traces) {
    check_input(xs);
    check_input(xt);
    if (traces) traces->assign(norms_.size(), LayerTrace{});
    Var hs = xs, ht = xt;
    for (std::size_t l = 0; l < norms_.size(); ++l) {
        Linear& lin = linears_[l];
        Tape& t = *xs.tape;
        Var w = t.parameter(lin.weight);
        Var b = t.parameter(lin.bias);
        hs = ops::add_bias(ops::matmul(hs, w), b);
        ht = ops::add_bias(ops::matmul(ht, w), b);
        std::tie(hs, ht) = norms_[l]->forward_train(hs, ht, traces ? &(*traces)[l] : nullptr);
        hs = ops::relu(hs);
        ht = ops::relu(ht);
    }
    Linear& head = linears_.back();
    Tape& t = *xs.tape;
    Var w = t.parameter(head.weight);
    Var b = t.parameter(head.bias);
    return {ops::add_bias(ops::matmul(hs, w), b), ops::add_bias(ops::matmul(ht, w), b), hs, ht};
}

EvalOutput Mlp::forward_eval(Var x, Domain domain) const {
    check_input(x);
    Var h = x;
    for (std::size_t l = 0; l < norms_.size(); ++l) {
        h = linears_[l].forward_eval(h);
        h = ops::relu(norms_[l]->forward_eval(h, domain));
    }
    return {linears_.back().forward_eval(h), h};
}

std::vector<Parameter*> Mlp::parameters() {
    std::vector<Parameter*> out;
    for (auto& l : linears_) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    for (auto& n : norms_)
        for (Parameter* p : n->parameters()) out.push_back(p);
    return out;
}

std::vector<Normalizer*> Mlp::normalizers() {
    std::vector<Normalizer*> out;
    for (auto& n : norms_) out.push_back(n.get());
    return out;
}

std::vector<const Normalizer*> Mlp::normalizers() const {
    std::vector<const Normalizer*> out;
    for (const auto& n : norms_) out.push_back(n.get());
    return out;
}

void Mlp::set_freeze_running(bool freeze) {
    for (auto& n : norms_) n->set_freeze_running(freeze);
}

json Mlp::to_json() const {
    json j;
    j["widths"] = spec_.widths;
    j["normalizer"] = to_string(spec_.norm);
    j["linears"] = json::array();
    for (const auto& l : linears_) j["linears"].push_back(l.to_json());
    j["layers"] = json::array();
    for (const auto& n : norms_) j["layers"].push_back(n->to_json());
    return j;
}

Mlp Mlp::from_json(const json& j) {
    Mlp m;
    m.spec_.widths = j.at("widths").get<std::vector<std::size_t>>();
    m.spec_.norm = parse_norm_kind(j.at("normalizer").get<std::string>());
    m.spec_.validate();
    const auto& lin = j.at("linears");
    if (lin.size() != m.spec_.widths.size() - 1) throw InvalidInput("checkpoint has wrong number of linear layers");
    Rng unused(0);
    for (std::size_t l = 0; l < lin.size(); ++l) {
        m.linears_.emplace_back(m.spec_.widths[l], m.spec_.widths[l + 1], unused);
        m.linears_.back().load_json(lin[l]);
    }
    const auto& layers = j.at("layers");
    if (layers.size() != m.spec_.hidden_layers()) throw InvalidInput("checkpoint has wrong number of norm layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto n = normalizer_from_json(layers[l]);
        if (n->channels() != m.spec_.widths[l + 1]) throw InvalidInput("checkpoint norm layer width mismatch");
        if (l == 0) m.spec_.norm_options = n->options();
        m.norms_.push_back(std::move(n));
    }
    return m;
}

// ---- Discriminator ----------------------------------------------------------

namespace {
Rng seeded(std::uint64_t seed) { return Rng(derive_seed(seed, streams::kDiscriminator)); }
}  // namespace

Discriminator::Discriminator(DiscriminatorSpec spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    Rng rng = seeded(seed);
    hidden_ = Linear(spec_.feature_width, spec_.hidden, rng);
    out_ = Linear(spec_.hidden, 2, rng);
}

Var Discriminator::forward(Var features) {
    if (features.value().rank() != 2 || features.shape()[1] != spec_.feature_width)
        throw InvalidInput("discriminator expects [N, " + std::to_string(spec_.feature_width) + "] features, got " +
                           shape_string(features.shape()));
    return out_.forward(ops::relu(hidden_.forward(features)));
}

Var Discriminator::forward_eval(Var features) const {
    if (features.value().rank() != 2 || features.shape()[1] != spec_.feature_width)
        throw InvalidInput("discriminator expects [N, " + std::to_string(spec_.feature_width) + "] features, got " +
                           shape_string(features.shape()));
    return out_.forward_eval(ops::relu(hidden_.forward_eval(features)));
}

std::vector<Parameter*> Discriminator::parameters() {
    return {&hidden_.weight, &hidden_.bias, &out_.weight, &out_.bias};
}

json Discriminator::to_json() const {
    return {{"feature_width", spec_.feature_width},
            {"hidden", spec_.hidden},
            {"layers", json::array({hidden_.to_json(), out_.to_json()})}};
}

Discriminator Discriminator::from_json(const json& j) {
    DiscriminatorSpec spec{j.at("feature_width").get<std::size_t>(), j.at("hidden").get<std::size_t>()};
    Discriminator d(spec, 0);
    d.hidden_.load_json(j.at("layers").at(0));
    d.out_.load_json(j.at("layers").at(1));
    return d;
}

double annealed_lambda(double progress) { return 2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0; }

}  // namespace rnlab
