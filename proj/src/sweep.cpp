#include "rnlab/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include "rnlab/train.hpp"

namespace rnlab {

namespace fs = std::filesystem;

SweepAxis parse_sweep_axis(std::string_view s) {
    if (s == "normalizer") return SweepAxis::Normalizer;
    if (s == "gate") return SweepAxis::Gate;
    if (s == "measure") return SweepAxis::Measure;
    if (s == "ablation") return SweepAxis::Ablation;
    throw InvalidInput("unknown sweep axis '" + std::string(s) + "' (normalizer, gate, measure, ablation)");
}

std::string to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::Normalizer: return "normalizer";
        case SweepAxis::Gate: return "gate";
        case SweepAxis::Measure: return "measure";
        case SweepAxis::Ablation: return "ablation";
    }
    return "?";
}

std::vector<SweepVariant> sweep_variants(const ExperimentConfig& base, SweepAxis axis) {
    std::vector<SweepVariant> out;
    auto add = [&](std::string name, auto edit) {
        ExperimentConfig c = base;
        edit(c);
        out.push_back({std::move(name), std::move(c)});
    };
    switch (axis) {
        case SweepAxis::Normalizer:
            for (NormKind k : {NormKind::BN, NormKind::AutoDIAL, NormKind::DSBN, NormKind::TN, NormKind::RN})
                add(to_string(k), [k](ExperimentConfig& c) { c.normalizer = k; });
            break;
        case SweepAxis::Gate:
            for (const char* g : {"0.5", "0.75", "1"})
                add(std::string("g=") + g, [g](ExperimentConfig& c) {
                    c.normalizer = NormKind::RN;
                    c.norm.fixed_gate = std::stod(g);
                });
            add("learnable", [](ExperimentConfig& c) {
                c.normalizer = NormKind::RN;
                c.norm.fixed_gate.reset();
            });
            break;
        case SweepAxis::Measure:
            for (Measure m : {Measure::NegL2, Measure::NegL1, Measure::NegCosine})
                add(to_string(m), [m](ExperimentConfig& c) {
                    c.normalizer = NormKind::RN;
                    c.norm.measure = m;
                });
            break;
        case SweepAxis::Ablation:
            add("bn", [](ExperimentConfig& c) { c.normalizer = NormKind::BN; });
            add("ra_only", [](ExperimentConfig& c) {
                c.normalizer = NormKind::RN;
                c.norm.reciprocal = false;
            });
            add("rn", [](ExperimentConfig& c) {
                c.normalizer = NormKind::RN;
                c.norm.reciprocal = true;
            });
            break;
    }
    return out;
}

double median(std::vector<double> v) {
    if (v.empty()) throw InvalidInput("median of an empty set");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::size_t sweep_threads() {
    if (const char* env = std::getenv("RNLAB_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& base, SweepAxis axis, const fs::path& out_dir,
                                std::size_t threads) {
    const auto variants = sweep_variants(base, axis);
    const auto seeds = base.sweep_seeds();
    struct Job {
        std::size_t variant;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (std::size_t v = 0; v < variants.size(); ++v)
        for (auto s : seeds) jobs.push_back({v, s});
    for (const auto& v : variants) v.config.validate();

    std::vector<SweepRow> rows(jobs.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
            try {
                ExperimentConfig c = variants[jobs[j].variant].config;
                c.seed = jobs[j].seed;
                c.out_dir = out_dir.empty() ? fs::path{}
                                            : out_dir / variants[jobs[j].variant].name /
                                                  ("seed_" + std::to_string(jobs[j].seed));
                const TrainResult r = train_run(c);
                double acc_s = 0.0, acc_t = 0.0;
                for (const auto& m : r.metrics) {
                    if (m.epoch != c.epochs) continue;
                    if (m.split == "eval_s") acc_s = m.accuracy;
                    if (m.split == "eval_t") acc_t = m.accuracy;
                }
                rows[j] = {variants[jobs[j].variant].name, std::to_string(jobs[j].seed), acc_s, acc_t};
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = jobs.size();
            }
        }
    };
    const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, jobs.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);

    std::vector<SweepRow> summary = rows;
    for (const auto& v : variants) {
        std::vector<double> s, t;
        for (const auto& r : rows)
            if (r.variant == v.name) {
                s.push_back(r.source_accuracy);
                t.push_back(r.target_accuracy);
            }
        const auto mean = [](const std::vector<double>& x) {
            return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
        };
        summary.push_back({v.name, "median", median(s), median(t)});
        summary.push_back({v.name, "mean", mean(s), mean(t)});
    }
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream(out_dir / "summary.csv", std::ios::binary) << summary_csv(summary);
    }
    return summary;
}

std::string summary_csv(const std::vector<SweepRow>& rows) {
    std::string out = "variant,seed,eval_s_accuracy,eval_t_accuracy\n";
    for (const auto& r : rows)
        out += r.variant + "," + r.seed + "," + format_number(r.source_accuracy) + "," +
               format_number(r.target_accuracy) + "\n";
    return out;
}

}  // namespace rnlab
