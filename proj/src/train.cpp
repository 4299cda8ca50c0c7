#include "rnlab/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "rnlab/ops.hpp"

namespace rnlab {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---- optimizer ------------------------------------------------------------------

Sgd::Sgd(std::vector<Parameter*> params, SgdOptions options) : params_(std::move(params)), options_(options) {
    if (!(options_.lr > 0.0)) throw InvalidInput("learning rate must be > 0");
    if (options_.momentum < 0.0 || options_.momentum >= 1.0) throw InvalidInput("momentum must be in [0, 1)");
    if (options_.weight_decay < 0.0) throw InvalidInput("weight decay must be >= 0");
    for (Parameter* p : params_) velocity_.emplace_back(p->value.shape());
}

void Sgd::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

void Sgd::step() {
    for (Parameter* p : params_) {
        if (!p->trainable) continue;
        if (!p->grad.all_finite()) throw NumericalError("non-finite gradient in parameter '" + p->name + "'");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        if (!p.trainable) continue;
        const double wd = p.decay ? options_.weight_decay : 0.0;
        const double lr = options_.lr * p.lr_scale;
        auto v = velocity_[i].data();
        auto x = p.value.data();
        auto g = p.grad.data();
        for (std::size_t k = 0; k < x.size(); ++k) {
            v[k] = options_.momentum * v[k] + g[k] + wd * x[k];
            x[k] -= lr * v[k];
            if (p.bounds) x[k] = std::clamp(x[k], p.bounds->lo, p.bounds->hi);
        }
    }
}

// ---- evaluation -------------------------------------------------------------------

namespace {

double accuracy_of(const Tensor& logits, std::span<const int> labels) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c)
            if (logits(i, c) > logits(i, best)) best = c;
        if (static_cast<int>(best) == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace

EvalResult evaluate(const Mlp& model, const DomainDataset& data) {
    data.validate();
    if (data.classes() > static_cast<int>(model.spec().classes()))
        throw InvalidInput("dataset labels exceed the model's class count");
    Tape tape;
    EvalOutput out = model.forward_eval(tape.constant(data.features), data.domain);
    Var loss = ops::cross_entropy(out.logits, data.labels);
    return {accuracy_of(out.logits.value(), data.labels), loss.value().item()};
}

// ---- checkpoints --------------------------------------------------------------------

json checkpoint_to_json(const Checkpoint& c) {
    json j;
    j["format"] = "rnlab-checkpoint";
    j["epoch"] = c.epoch;
    j["model"] = c.model;
    j["discriminator"] = c.discriminator ? *c.discriminator : json(nullptr);
    j["reports"] = json::array();
    for (const auto& r : c.reports) j["reports"].push_back(r ? report_to_json(*r) : json(nullptr));
    return j;
}

Checkpoint checkpoint_from_json(const json& j) {
    if (j.value("format", "") != "rnlab-checkpoint") throw InvalidInput("not an rnlab checkpoint");
    Checkpoint c;
    c.epoch = j.at("epoch").get<std::size_t>();
    c.model = j.at("model");
    if (!j.at("discriminator").is_null()) c.discriminator = j.at("discriminator");
    for (const auto& r : j.at("reports"))
        c.reports.push_back(r.is_null() ? std::nullopt : std::optional<CorrelationReport>(report_from_json(r)));
    return c;
}

std::vector<fs::path> list_checkpoints(const fs::path& run_dir) {
    const fs::path dir = run_dir / "checkpoints";
    if (!fs::is_directory(dir)) throw InvalidInput("run directory " + run_dir.string() + " has no checkpoints/");
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".json" && e.path().stem().string().starts_with("epoch_")) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    if (out.empty()) throw InvalidInput("run directory " + run_dir.string() + " has no checkpoint files");
    return out;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows, bool include_wall_time) {
    std::string out = include_wall_time ? "epoch,split,cls_loss,dom_loss,accuracy,wall_time\n"
                                        : "epoch,split,cls_loss,dom_loss,accuracy\n";
    for (const auto& r : rows) {
        out += std::to_string(r.epoch) + "," + r.split + "," + format_number(r.cls_loss) + "," +
               format_number(r.dom_loss) + "," + format_number(r.accuracy);
        if (include_wall_time) out += "," + format_number(r.wall_time);
        out += "\n";
    }
    return out;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write " + path.string());
    out << text;
}

std::string epoch_name(std::size_t epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "epoch_%03zu.json", epoch);
    return buf;
}

double domain_loss(const Discriminator& disc, Var features, int domain_label) {
    std::vector<int> labels(features.shape()[0], domain_label);
    return ops::cross_entropy(disc.forward_eval(features), labels).value().item();
}

}  // namespace

// ---- training -------------------------------------------------------------------------

TrainResult train(const ExperimentConfig& config, const DomainDataset& source, const UnlabeledDataset& target,
                  const DomainDataset* target_eval) {
    config.validate();
    source.validate();
    if (target.features().rank() != 2 || target.features().dim(1) != source.width())
        throw InvalidInput("source and target feature widths differ");
    const auto clock_start = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count(); };

    const std::size_t classes = static_cast<std::size_t>(std::max(source.classes(), 2));
    Mlp model(config.model_spec(source.width(), classes), config.seed);
    std::optional<Discriminator> disc;
    if (config.dann_lambda > 0.0)
        disc.emplace(DiscriminatorSpec{model.spec().feature_width(), config.discriminator_hidden}, config.seed);

    std::vector<Parameter*> params = model.parameters();
    for (Normalizer* n : model.normalizers())
        for (Parameter* p : n->parameters()) {
            p->decay = config.optimizer.norm_weight_decay;
            p->lr_scale = config.optimizer.norm_lr_scale;
        }
    if (disc)
        for (Parameter* p : disc->parameters()) params.push_back(p);
    Sgd opt(params, {config.optimizer.lr, config.optimizer.momentum, config.optimizer.weight_decay});

    const bool write = !config.out_dir.empty();
    if (write) {
        fs::create_directories(config.out_dir / "checkpoints");
        write_text(config.out_dir / "config.txt", format_config(config));
    }

    BatchIterator batches(source.size(), target.size(), config.batch_size, config.seed);
    const std::size_t total_steps = config.epochs * batches.batches_per_epoch();
    std::vector<int> domain_labels(2 * config.batch_size, 0);
    std::fill(domain_labels.begin() + static_cast<std::ptrdiff_t>(config.batch_size), domain_labels.end(), 1);

    TrainResult result{model, std::nullopt, {}, {}};
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto steps = batches.next_epoch();
        double cls_sum = 0.0, dom_sum = 0.0, acc_sum = 0.0;
        std::vector<LayerTrace> traces;
        for (std::size_t b = 0; b < steps.size(); ++b, ++step) {
            Tape tape;
            Var xs = tape.constant(gather_rows(source.features, steps[b].source));
            Var xt = tape.constant(gather_rows(target.features(), steps[b].target));
            const std::vector<int> ys = gather(source.labels, steps[b].source);
            const bool last = b + 1 == steps.size();
            DomainOutputs out = model.forward_train(xs, xt, last ? &traces : nullptr);

            Var cls = ops::cross_entropy(out.logits_s, ys);
            Var loss = cls;
            double dom = 0.0;
            if (disc) {
                double lambda = config.dann_lambda;
                if (config.lambda_schedule == LambdaSchedule::Annealed)
                    lambda *= annealed_lambda(static_cast<double>(step) / static_cast<double>(total_steps));
                Var features = ops::gradient_reversal(ops::concat_batch(out.features_s, out.features_t), 1.0);
                Var dl = ops::cross_entropy(disc->forward(features), domain_labels);
                dom = dl.value().item();
                loss = ops::add(cls, ops::scale(dl, lambda));
            }
            if (!std::isfinite(loss.value().item()))
                throw NumericalError("loss diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(b));
            opt.zero_grad();
            tape.backward(loss);
            opt.step();

            cls_sum += cls.value().item();
            dom_sum += dom;
            acc_sum += accuracy_of(out.logits_s.value(), ys);
        }

        const double n = static_cast<double>(steps.size());
        result.metrics.push_back({epoch, "train_s", cls_sum / n, dom_sum / n, acc_sum / n, elapsed()});
        auto eval_row = [&](const DomainDataset& data, const char* split) {
            EvalResult r = evaluate(model, data);
            double dom = 0.0;
            if (disc) {
                Tape tape;
                Var f = model.forward_eval(tape.constant(data.features), data.domain).features;
                dom = domain_loss(*disc, f, data.domain == Domain::Source ? 0 : 1);
            }
            result.metrics.push_back({epoch, split, r.loss, dom, r.accuracy, elapsed()});
        };
        eval_row(source, "eval_s");
        if (target_eval) eval_row(*target_eval, "eval_t");

        Checkpoint ckpt;
        ckpt.epoch = epoch;
        for (auto& t : traces) ckpt.reports.push_back(std::move(t.report));
        ckpt.model = model.to_json();
        if (disc) ckpt.discriminator = disc->to_json();
        if (write) {
            write_text(config.out_dir / "checkpoints" / epoch_name(epoch), checkpoint_to_json(ckpt).dump());
            write_text(config.out_dir / "metrics.csv", metrics_csv(result.metrics));
        }
        result.checkpoints.push_back(std::move(ckpt));
    }

    if (write) {
        json final_model{{"format", "rnlab-model"}, {"model", model.to_json()}};
        if (disc) final_model["discriminator"] = disc->to_json();
        write_text(config.out_dir / "model.json", final_model.dump());
    }
    result.model = std::move(model);
    result.discriminator = std::move(disc);
    return result;
}

TrainResult train_run(const ExperimentConfig& config) {
    config.validate();
    DomainPair data = make_datasets(config.data, config.seed);
    data.source.validate();
    data.target.validate();
    return train(config, data.source, UnlabeledDataset(data.target), &data.target);
}

}  // namespace rnlab
