// rnlab: gradient checks, training runs, evaluation, analysis export and sweeps.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "rnlab/analysis.hpp"
#include "rnlab/config.hpp"
#include "rnlab/gradcheck.hpp"
#include "rnlab/sweep.hpp"
#include "rnlab/train.hpp"

namespace fs = std::filesystem;
using namespace rnlab;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kVerificationFailure = 1;
constexpr int kUsageError = 2;

struct Common {
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--seed", c.seed, "Random seed");
    cmd->add_option("--out", c.out, "Output directory");
}

ExperimentConfig config_with_overrides(const std::string& path, const Common& c) {
    ExperimentConfig config = load_config(path);
    if (c.seed) config.seed = *c.seed;
    if (!c.out.empty()) config.out_dir = c.out;
    return config;
}

int run_gradcheck(const std::string& layer, std::size_t channels, std::size_t batch, std::size_t spatial, double tol,
                  const Common& c) {
    GradCheckOptions o;
    o.kind = parse_norm_kind(layer);
    o.channels = channels;
    o.batch = batch;
    o.spatial = spatial;
    o.tol = tol;
    o.seed = c.seed.value_or(0);
    const GradCheckReport r = check_layer_gradients(o);

    json j{{"layer", layer}, {"channels", channels}, {"batch", batch}, {"tol", tol}, {"passed", r.passed}};
    j["entries"] = json::array();
    for (const auto& e : r.entries) {
        std::printf("%-8s %-6s max_rel_error %.3e\n", e.name.c_str(), e.passed ? "ok" : "FAIL", e.worst.error);
        j["entries"].push_back({{"name", e.name},
                                {"error", e.worst.error},
                                {"index", e.worst.index},
                                {"analytic", e.worst.analytic},
                                {"numeric", e.worst.numeric},
                                {"passed", e.passed}});
    }
    const auto& w = r.worst();
    std::printf("worst: %s[%zu] analytic %.12e numeric %.12e rel_error %.3e (tol %.1e)\n", w.name.c_str(),
                w.worst.index, w.worst.analytic, w.worst.numeric, w.worst.error, tol);
    if (o.kind == NormKind::TN) {
        std::printf("attention statistics gradient: %.3e\n", r.attention_stat_grad);
        j["attention_stat_grad"] = r.attention_stat_grad;
    }
    std::printf("%s\n", r.passed ? "PASS" : "FAIL");
    if (!c.out.empty()) {
        fs::create_directories(c.out);
        std::ofstream(fs::path(c.out) / "gradcheck.json", std::ios::binary) << j.dump(2) << '\n';
    }
    return r.passed ? kOk : kVerificationFailure;
}

int run_train(const std::string& config_path, const Common& c) {
    const ExperimentConfig config = config_with_overrides(config_path, c);
    const TrainResult r = train_run(config);
    for (const auto& m : r.metrics)
        if (m.epoch == config.epochs)
            std::printf("epoch %zu %-7s accuracy %.4f cls_loss %.4f\n", m.epoch, m.split.c_str(), m.accuracy,
                        m.cls_loss);
    if (!config.out_dir.empty()) std::printf("wrote %s\n", config.out_dir.string().c_str());
    return kOk;
}

json load_json_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw InvalidInput("cannot open " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InvalidInput(p.string() + ": " + e.what());
    }
}

int run_eval(const std::string& checkpoint, const std::string& data, const std::string& config_path, const Common& c) {
    const json j = load_json_file(checkpoint);
    const std::string format = j.value("format", "");
    if (format != "rnlab-checkpoint" && format != "rnlab-model")
        throw InvalidInput(checkpoint + " is neither a checkpoint nor a model file");
    const Mlp model = Mlp::from_json(j.at("model"));

    DomainPair pair;
    if (!data.empty()) {
        pair = read_csv(data);
    } else if (!config_path.empty()) {
        const ExperimentConfig config = config_with_overrides(config_path, c);
        pair = make_datasets(config.data, config.seed);
    } else {
        throw InvalidInput("eval needs --data or --config");
    }
    std::string csv = "domain,accuracy,loss\n";
    for (const DomainDataset* d : {&pair.source, &pair.target}) {
        const EvalResult r = evaluate(model, *d);
        std::printf("%s accuracy %.4f loss %.4f\n", to_string(d->domain).c_str(), r.accuracy, r.loss);
        csv += to_string(d->domain) + "," + format_number(r.accuracy) + "," + format_number(r.loss) + "\n";
    }
    if (!c.out.empty()) {
        fs::create_directories(c.out);
        std::ofstream(fs::path(c.out) / "eval.csv", std::ios::binary) << csv;
    }
    return kOk;
}

int run_analyze(const std::string& run, const Common& c) {
    const json out = export_reports(run, c.out, c.seed);
    const auto& t = out.at("theory");
    std::printf("a_distance %.4f (domain classifier error %.4f), lambda %.4f\n", t.at("a_distance").get<double>(),
                t.at("discriminator_error").get<double>(), t.at("lambda_risk").get<double>());
    std::printf("wrote %s\n", (fs::path(c.out.empty() ? run : c.out) / "analysis.json").string().c_str());
    return kOk;
}

int run_sweep_cmd(const std::string& config_path, const std::string& vary, const std::string& seeds,
                  const Common& c) {
    ExperimentConfig base = config_with_overrides(config_path, c);
    if (!seeds.empty()) base.seeds = parse_config("seeds = " + seeds + "\n").seeds;
    else if (c.seed) base.seeds.clear();
    const SweepAxis axis = parse_sweep_axis(vary);
    const fs::path out = base.out_dir;
    base.out_dir.clear();
    const auto rows = run_sweep(base, axis, out, sweep_threads());
    std::cout << summary_csv(rows);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reciprocal normalization lab"};
    app.require_subcommand(1);
    app.fallthrough(false);

    Common common;

    auto* gc = app.add_subcommand("gradcheck", "Compare analytic and finite-difference layer gradients");
    std::string layer = "rn";
    std::size_t channels = 4, batch = 8, spatial = 1;
    double tol = 1e-4;
    gc->add_option("--layer", layer, "Normalizer kind")->capture_default_str();
    gc->add_option("--channels", channels, "Channel count")->capture_default_str()->check(CLI::PositiveNumber);
    gc->add_option("--batch", batch, "Batch size per domain")->capture_default_str()->check(CLI::PositiveNumber);
    gc->add_option("--spatial", spatial, "Spatial extent H = W")->capture_default_str()->check(CLI::PositiveNumber);
    gc->add_option("--tol", tol, "Relative error tolerance")->capture_default_str()->check(CLI::NonNegativeNumber);
    add_common(gc, common);

    auto* tr = app.add_subcommand("train", "Train one configuration");
    std::string config_path;
    tr->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    add_common(tr, common);

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on both domains");
    std::string checkpoint, data, eval_config;
    ev->add_option("--checkpoint", checkpoint, "Checkpoint or model JSON")->required()->check(CLI::ExistingFile);
    ev->add_option("--data", data, "CSV with f0..,label,domain columns")->check(CLI::ExistingFile);
    ev->add_option("--config", eval_config, "Regenerate data from this config instead")->check(CLI::ExistingFile);
    add_common(ev, common);

    auto* an = app.add_subcommand("analyze", "Export gates, correlations, channel distances and theory diagnostics");
    std::string run_dir;
    an->add_option("--run", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
    add_common(an, common);

    auto* sw = app.add_subcommand("sweep", "Run a variant sweep over a shared seed set");
    std::string sweep_config, vary, seeds;
    sw->add_option("--config", sweep_config, "Base config file")->required()->check(CLI::ExistingFile);
    sw->add_option("--vary", vary, "normalizer, gate, measure or ablation")
        ->required()
        ->check(CLI::IsMember({"normalizer", "gate", "measure", "ablation"}));
    sw->add_option("--seeds", seeds, "Comma-separated seed list");
    add_common(sw, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsageError;
    }

    try {
        if (*gc) return run_gradcheck(layer, channels, batch, spatial, tol, common);
        if (*tr) return run_train(config_path, common);
        if (*ev) return run_eval(checkpoint, data, eval_config, common);
        if (*an) return run_analyze(run_dir, common);
        if (*sw) return run_sweep_cmd(sweep_config, vary, seeds, common);
    } catch (const InvalidInput& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsageError;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return kVerificationFailure;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kVerificationFailure;
    }
    return kUsageError;
}
