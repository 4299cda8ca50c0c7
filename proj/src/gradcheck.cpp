#include "rnlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "rnlab/ops.hpp"
#include "rnlab/random.hpp"

namespace rnlab {

const GradCheckEntry& GradCheckReport::worst() const {
    if (entries.empty()) throw InvalidInput("empty gradient check report");
    return *std::max_element(entries.begin(), entries.end(),
                             [](const auto& a, const auto& b) { return a.worst.error < b.worst.error; });
}

namespace {

Tensor random_tensor(const Shape& shape, double mean, double sd, Rng& rng) {
    Tensor t(shape);
    std::normal_distribution<double> dist(mean, sd);
    for (double& v : t.data()) v = dist(rng);
    return t;
}

void randomize_parameters(Normalizer& layer, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (Parameter* p : layer.parameters()) {
        if (!p->trainable) continue;
        for (double& v : p->value.data()) {
            if (p->bounds) {
                const double span = p->bounds->hi - p->bounds->lo;
                v = p->bounds->lo + span * (0.1 + 0.8 * unit(rng));
            } else {
                v = p->name.starts_with("gamma") ? 0.5 + unit(rng) : unit(rng) - 0.5;
            }
        }
    }
}

}  // namespace

GradCheckReport check_layer_gradients(const GradCheckOptions& o) {
    if (o.channels == 0 || o.batch == 0 || o.spatial == 0) throw InvalidInput("channels, batch and spatial must be >= 1");
    if (o.tol < 0.0) throw InvalidInput("tolerance must be >= 0");
    if (!(o.step > 0.0)) throw InvalidInput("finite-difference step must be > 0");

    Rng rng(derive_seed(o.seed, streams::kProbe));
    auto layer = make_normalizer(o.kind, o.channels, o.norm);
    layer->set_freeze_running(true);
    randomize_parameters(*layer, rng);

    const Shape shape = o.spatial > 1 ? Shape{o.batch, o.channels, o.spatial, o.spatial} : Shape{o.batch, o.channels};
    const Tensor xs = random_tensor(shape, 0.0, 1.0, rng);
    const Tensor xt = random_tensor(shape, 0.5, 1.5, rng);
    const Tensor ws = random_tensor(shape, 0.0, 1.0, rng);
    const Tensor wt = random_tensor(shape, 0.0, 1.0, rng);

    auto loss_of = [&](Var a, Var b, LayerTrace* trace) {
        auto [ys, yt] = layer->forward_train(a, b, trace);
        return ops::add(ops::weighted_sum(ys, ws), ops::weighted_sum(yt, wt));
    };

    GradCheckReport report;
    std::vector<Parameter*> params;
    for (Parameter* p : layer->parameters())
        if (p->trainable) params.push_back(p);

    Tape tape;
    Var vs = tape.variable(xs);
    Var vt = tape.variable(xt);
    LayerTrace trace;
    Var loss = loss_of(vs, vt, &trace);
    for (Parameter* p : params) p->zero_grad();
    tape.backward(loss);
    for (Var a : trace.attention_stat_nodes) {
        const Tensor g = tape.grad(a);
        for (double v : g.data()) report.attention_stat_grad = std::max(report.attention_stat_grad, std::abs(v));
    }

    if (auto* tn = dynamic_cast<TransferNorm*>(layer.get())) {
        auto [mu_s, var_s] = channel_moments(xs);
        auto [mu_t, var_t] = channel_moments(xt);
        tn->pin_attention(TransferNorm::attention({mu_s, var_s}, {mu_t, var_t}, o.norm.epsilon));
    }

    auto eval_with = [&](const Tensor& a, const Tensor& b) {
        Tape t;
        return loss_of(t.constant(a), t.constant(b), nullptr).value().item();
    };
    auto add_entry = [&](std::string name, const Tensor& analytic, const Tensor& numeric) {
        GradCheckEntry e{std::move(name), compare_gradients(analytic, numeric), false};
        e.passed = e.worst.error <= o.tol;
        report.entries.push_back(std::move(e));
    };

    add_entry("x_s", tape.grad(vs), finite_diff_grad([&](const Tensor& x) { return eval_with(x, xt); }, xs, o.step));
    add_entry("x_t", tape.grad(vt), finite_diff_grad([&](const Tensor& x) { return eval_with(xs, x); }, xt, o.step));
    for (Parameter* p : params) {
        const Tensor original = p->value;
        const Tensor numeric = finite_diff_grad(
            [&](const Tensor& v) {
                p->value = v;
                return eval_with(xs, xt);
            },
            original, o.step);
        p->value = original;
        add_entry(p->name, p->grad, numeric);
    }

    report.passed = report.attention_stat_grad == 0.0 &&
                    std::all_of(report.entries.begin(), report.entries.end(), [](const auto& e) { return e.passed; });
    return report;
}

}  // namespace rnlab
