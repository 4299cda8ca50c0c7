#include "rnlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "rnlab/config.hpp"
#include "rnlab/models.hpp"
#include "rnlab/ops.hpp"
#include "rnlab/train.hpp"

namespace rnlab {

namespace fs = std::filesystem;
using nlohmann::json;

double a_distance_from_error(double error) {
    if (!(error >= 0.0 && error <= 1.0)) throw InvalidInput("classifier error must be in [0, 1]");
    return 2.0 * (1.0 - 2.0 * std::min(error, 0.5));
}

namespace {

struct Split {
    std::vector<std::size_t> train, test;
};

Split split_indices(std::size_t n, double test_fraction, Rng& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    if (n_test == 0 || n_test >= n)
        throw InvalidInput("too few examples (" + std::to_string(n) + ") for a train/test split");
    return {{order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end()},
            {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test)}};
}

/// Classifier plus the input standardization fitted on its training rows.
struct Fitted {
    Mlp model;
    std::vector<double> mean, inv_std;

    Tensor prepare(const Tensor& x) const {
        Tensor out = x;
        const std::size_t f = mean.size();
        auto v = out.data();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = (v[i] - mean[i % f]) * inv_std[i % f];
        return out;
    }

    double error(const Tensor& x, const std::vector<int>& y) const {
        Tape tape;
        const Tensor logits = model.forward_eval(tape.constant(prepare(x)), Domain::Source).logits.value();
        std::size_t wrong = 0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < logits.dim(1); ++c)
                if (logits(i, c) > logits(i, best)) best = c;
            if (static_cast<int>(best) != y[i]) ++wrong;
        }
        return static_cast<double>(wrong) / static_cast<double>(y.size());
    }
};

Fitted fit_classifier(const Tensor& x, const std::vector<int>& y, std::size_t classes, std::uint64_t seed,
                      const DiagnosticOptions& opts) {
    const std::size_t n = x.dim(0), f = x.dim(1);
    Fitted fit{Mlp(MlpSpec{{f, opts.hidden, classes}, NormKind::None, {}}, seed), std::vector<double>(f, 0.0),
               std::vector<double>(f, 0.0)};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) fit.mean[j] += x(i, j);
    for (double& m : fit.mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) fit.inv_std[j] += (x(i, j) - fit.mean[j]) * (x(i, j) - fit.mean[j]);
    for (double& s : fit.inv_std) s = 1.0 / std::sqrt(s / static_cast<double>(n) + 1e-12);
    const Tensor xn = fit.prepare(x);

    Sgd opt(fit.model.parameters(), {opts.lr, opts.momentum, 0.0});
    Rng rng(derive_seed(seed, streams::kBatches));
    const std::size_t batch = std::min(opts.batch, n);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t b = 0; b + batch <= n; b += batch) {
            const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(b),
                                                order.begin() + static_cast<std::ptrdiff_t>(b + batch));
            Tape tape;
            Var xb = tape.constant(gather_rows(xn, rows));
            DomainOutputs out = fit.model.forward_train(xb, xb);
            Var loss = ops::cross_entropy(out.logits_s, gather(y, rows));
            opt.zero_grad();
            tape.backward(loss);
            opt.step();
        }
    }
    return fit;
}

Tensor stack_rows(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw InvalidInput("feature sets must be [M, F] with equal F, got " + shape_string(a.shape()) + " and " +
                           shape_string(b.shape()));
    std::vector<double> v(a.data().begin(), a.data().end());
    v.insert(v.end(), b.data().begin(), b.data().end());
    return Tensor({a.dim(0) + b.dim(0), a.dim(1)}, std::move(v));
}

}  // namespace

ADistanceEstimate estimate_a_distance(const Tensor& features_s, const Tensor& features_t, std::uint64_t seed,
                                      const DiagnosticOptions& options) {
    if (features_s.empty() || features_t.empty()) throw InvalidInput("both feature sets must be nonempty");
    const Tensor x = stack_rows(features_s, features_t);
    std::vector<int> y(x.dim(0), 0);
    std::fill(y.begin() + static_cast<std::ptrdiff_t>(features_s.dim(0)), y.end(), 1);

    Rng rng(derive_seed(seed, streams::kSplit));
    const Split split = split_indices(x.dim(0), options.test_fraction, rng);
    const Fitted fit = fit_classifier(gather_rows(x, split.train), gather(y, split.train), 2, seed, options);
    const double err = fit.error(gather_rows(x, split.test), gather(y, split.test));
    return {err, a_distance_from_error(err)};
}

double estimate_lambda(const DomainDataset& source, const DomainDataset& target, std::uint64_t seed,
                       const DiagnosticOptions& options) {
    source.validate();
    target.validate();
    const int classes = std::max(source.classes(), target.classes());
    for (const DomainDataset* d : {&source, &target}) {
        std::vector<bool> present(static_cast<std::size_t>(classes), false);
        for (int y : d->labels) present[static_cast<std::size_t>(y)] = true;
        for (int k = 0; k < classes; ++k)
            if (!present[static_cast<std::size_t>(k)])
                throw InvalidInput("class " + std::to_string(k) + " is missing from the " + to_string(d->domain) +
                                   " domain");
    }
    Rng rng(derive_seed(seed, streams::kSplit));
    const Split ss = split_indices(source.size(), options.test_fraction, rng);
    const Split st = split_indices(target.size(), options.test_fraction, rng);

    const Tensor x = stack_rows(gather_rows(source.features, ss.train), gather_rows(target.features, st.train));
    std::vector<int> y = gather(source.labels, ss.train);
    const auto yt = gather(target.labels, st.train);
    y.insert(y.end(), yt.begin(), yt.end());
    const Fitted fit = fit_classifier(x, y, static_cast<std::size_t>(classes), seed, options);

    const double err_s = fit.error(gather_rows(source.features, ss.test), gather(source.labels, ss.test));
    const double err_t = fit.error(gather_rows(target.features, st.test), gather(target.labels, st.test));
    return 0.5 * (err_s + err_t);
}

ChannelDistanceReport nearest_channel_distances(const DomainStats& source, const DomainStats& target) {
    const std::size_t c = source.channels();
    if (c == 0 || target.channels() != c) throw InvalidInput("source and target must have the same nonzero channel count");
    std::vector<double> sig_s(c), sig_t(c);
    for (std::size_t j = 0; j < c; ++j) {
        if (!(source.var[j] > 0.0) || !(target.var[j] > 0.0))
            throw InvalidInput("channel " + std::to_string(j) + " has zero variance");
        sig_s[j] = source.mu[j] / std::sqrt(source.var[j]);
        sig_t[j] = target.mu[j] / std::sqrt(target.var[j]);
    }
    ChannelDistanceReport r;
    r.nearest.resize(c);
    std::size_t matches = 0;
    for (std::size_t i = 0; i < c; ++i) {
        std::size_t best = 0;
        double best_d = std::abs(sig_t[i] - sig_s[0]);
        for (std::size_t j = 1; j < c; ++j) {
            const double d = std::abs(sig_t[i] - sig_s[j]);
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        r.nearest[i] = best;
        r.distance_sum += best_d;
        if (best == i) ++matches;
    }
    r.corresponding_ratio = 100.0 * static_cast<double>(matches) / static_cast<double>(c);
    return r;
}

// ---- export ------------------------------------------------------------------------

namespace {

json distance_to_json(const ChannelDistanceReport& r) {
    return {{"distance_sum", r.distance_sum}, {"corresponding_ratio", r.corresponding_ratio}, {"nearest", r.nearest}};
}

json layer_entry(const json& layer_json, const std::optional<CorrelationReport>& report, std::size_t index) {
    auto norm = normalizer_from_json(layer_json);
    json entry{{"layer", index}, {"kind", to_string(norm->kind())}};
    entry["gates"] = nullptr;
    if (auto* rn = dynamic_cast<ReciprocalNorm*>(norm.get())) {
        const GateParams g = rn->gates();
        entry["gates"] = {{"g_mu_s", tensor_to_json(g.g_mu_s)},
                          {"g_var_s", tensor_to_json(g.g_var_s)},
                          {"g_mu_t", tensor_to_json(g.g_mu_t)},
                          {"g_var_t", tensor_to_json(g.g_var_t)}};
    }
    entry["correlation"] = report ? report_to_json(*report) : json(nullptr);
    entry["channel_distance"] = nullptr;
    if (is_dual_domain(norm->kind()))
        entry["channel_distance"] =
            distance_to_json(nearest_channel_distances(norm->running(Domain::Source), norm->running(Domain::Target)));
    return entry;
}

}  // namespace

json export_reports(const fs::path& run_dir, const fs::path& out_dir, std::optional<std::uint64_t> seed,
                    const DiagnosticOptions& options) {
    const auto files = list_checkpoints(run_dir);
    const fs::path config_path = run_dir / "config.txt";
    if (!fs::exists(config_path)) throw InvalidInput("run directory " + run_dir.string() + " has no config.txt");
    const ExperimentConfig config = load_config(config_path);

    json out;
    out["format"] = "rnlab-analysis";
    out["run"] = run_dir.string();
    out["checkpoints"] = json::array();
    std::optional<Checkpoint> last;
    for (const auto& file : files) {
        std::ifstream in(file, std::ios::binary);
        Checkpoint ckpt = checkpoint_from_json(json::parse(in));
        const auto& layers = ckpt.model.at("layers");
        json snap{{"epoch", ckpt.epoch}, {"layers", json::array()}};
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::optional<CorrelationReport> none;
            snap["layers"].push_back(layer_entry(layers[l], l < ckpt.reports.size() ? ckpt.reports[l] : none, l));
        }
        out["checkpoints"].push_back(std::move(snap));
        last = std::move(ckpt);
    }

    DomainPair data = make_datasets(config.data, config.seed);
    const Mlp model = Mlp::from_json(last->model);
    Tape tape;
    DomainDataset fs_set{model.forward_eval(tape.constant(data.source.features), Domain::Source).features.value(),
                         data.source.labels, Domain::Source};
    DomainDataset ft_set{model.forward_eval(tape.constant(data.target.features), Domain::Target).features.value(),
                         data.target.labels, Domain::Target};

    const std::uint64_t diag_seed = seed.value_or(config.seed);
    const ADistanceEstimate a = estimate_a_distance(fs_set.features, ft_set.features, diag_seed, options);
    TheoryReport theory{a.a_distance, estimate_lambda(fs_set, ft_set, diag_seed, options), a.error};
    out["theory"] = {{"a_distance", theory.a_distance},
                     {"discriminator_error", theory.discriminator_error},
                     {"lambda_risk", theory.lambda_risk},
                     {"epoch", last->epoch}};
    const fs::path dest = out_dir.empty() ? run_dir : out_dir;
    fs::create_directories(dest);
    write_csv(dest / "features.csv", {&fs_set, &ft_set});
    out["features_csv"] = "features.csv";

    std::ofstream(dest / "analysis.json", std::ios::binary) << out.dump(2) << '\n';
    return out;
}

}  // namespace rnlab
