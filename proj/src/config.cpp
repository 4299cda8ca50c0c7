#include "rnlab/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>

namespace rnlab {

std::string to_string(Generator g) {
    switch (g) {
        case Generator::ChannelPermuted: return "channel_permuted";
        case Generator::ShiftedGaussians: return "shifted_gaussians";
        case Generator::TwoMoons: return "two_moons";
        case Generator::Csv: return "csv";
    }
    return "?";
}

std::string to_string(LambdaSchedule s) { return s == LambdaSchedule::Constant ? "constant" : "annealed"; }

ConfigError::ConfigError(std::size_t line, std::string field, const std::string& message)
    : InvalidInput("config line " + std::to_string(line) + ", field '" + field + "': " + message),
      line_(line),
      field_(std::move(field)) {}

void ExperimentConfig::validate() const {
    validate_values();
    if (data.generator == Generator::Csv && data.csv_path.empty())
        throw InvalidInput("csv generator needs csv_path");
}

void ExperimentConfig::validate_values() const {
    if (!(optimizer.lr > 0.0)) throw InvalidInput("lr must be > 0");
    if (optimizer.momentum < 0.0 || optimizer.momentum >= 1.0) throw InvalidInput("momentum must be in [0, 1)");
    if (optimizer.weight_decay < 0.0) throw InvalidInput("weight_decay must be >= 0");
    if (optimizer.norm_lr_scale < 0.0) throw InvalidInput("norm_lr_scale must be >= 0");
    if (epochs == 0) throw InvalidInput("epochs must be >= 1");
    if (batch_size == 0) throw InvalidInput("batch_size must be >= 1");
    if (dann_lambda < 0.0) throw InvalidInput("dann_lambda must be >= 0");
    if (hidden.empty()) throw InvalidInput("hidden must list at least one width");
    for (auto w : hidden)
        if (w == 0) throw InvalidInput("hidden widths must be >= 1");
    if (discriminator_hidden == 0) throw InvalidInput("discriminator_hidden must be >= 1");
    norm.validate();
}

MlpSpec ExperimentConfig::model_spec(std::size_t input_width, std::size_t classes) const {
    MlpSpec spec;
    spec.widths.push_back(input_width);
    spec.widths.insert(spec.widths.end(), hidden.begin(), hidden.end());
    spec.widths.push_back(classes);
    spec.norm = normalizer;
    spec.norm_options = norm;
    return spec;
}

std::vector<std::uint64_t> ExperimentConfig::sweep_seeds() const {
    if (!seeds.empty()) return seeds;
    std::vector<std::uint64_t> out;
    for (std::uint64_t i = 0; i < 5; ++i) out.push_back(seed + i);
    return out;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
std::string join(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        if constexpr (std::is_floating_point_v<T>)
            out += fmt(v[i]);
        else
            out += std::to_string(v[i]);
    }
    return out;
}

struct ValueError {
    std::string message;
};

double to_double(const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw ValueError{"expected a number, found '" + s + "'"};
    }
    if (used != s.size() || !std::isfinite(v)) throw ValueError{"expected a number, found '" + s + "'"};
    return v;
}

std::uint64_t to_uint(const std::string& s) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
        throw ValueError{"expected a non-negative integer, found '" + s + "'"};
    try {
        return std::stoull(s);
    } catch (const std::exception&) {
        throw ValueError{"integer out of range: '" + s + "'"};
    }
}

bool to_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ValueError{"expected true or false, found '" + s + "'"};
}

template <typename F>
auto to_list(const std::string& s, F convert) {
    std::vector<decltype(convert(std::string{}))> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(convert(trim(item)));
    if (out.empty()) throw ValueError{"expected a comma-separated list"};
    return out;
}

template <typename E, typename Parse>
E to_enum(const std::string& s, Parse parse) {
    try {
        return parse(s);
    } catch (const InvalidInput& e) {
        throw ValueError{e.what()};
    }
}

struct Field {
    const char* key;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<Field>& fields() {
    using C = ExperimentConfig;
    using S = const std::string&;
    static const std::vector<Field> table = {
        {"generator",
         [](C& c, S v) {
             if (v == "channel_permuted") c.data.generator = Generator::ChannelPermuted;
             else if (v == "shifted_gaussians") c.data.generator = Generator::ShiftedGaussians;
             else if (v == "two_moons") c.data.generator = Generator::TwoMoons;
             else if (v == "csv") c.data.generator = Generator::Csv;
             else throw ValueError{"unknown generator '" + v + "' (channel_permuted, shifted_gaussians, two_moons, csv)"};
         },
         [](const C& c) { return to_string(c.data.generator); }},
        {"classes", [](C& c, S v) { c.data.classes = to_uint(v); },
         [](const C& c) { return std::to_string(c.data.classes); }},
        {"dims", [](C& c, S v) { c.data.dims = to_uint(v); }, [](const C& c) { return std::to_string(c.data.dims); }},
        {"per_class", [](C& c, S v) { c.data.per_class = to_uint(v); },
         [](const C& c) { return std::to_string(c.data.per_class); }},
        {"shift", [](C& c, S v) { c.data.shift = to_list(v, to_double); }, [](const C& c) { return join(c.data.shift); }},
        {"scale", [](C& c, S v) { c.data.scale = to_list(v, to_double); }, [](const C& c) { return join(c.data.scale); }},
        {"center_scale", [](C& c, S v) { c.data.center_scale = to_double(v); },
         [](const C& c) { return fmt(c.data.center_scale); }},
        {"permutation_block", [](C& c, S v) { c.data.permutation_block = to_uint(v); },
         [](const C& c) { return std::to_string(c.data.permutation_block); }},
        {"pattern_jitter", [](C& c, S v) { c.data.pattern_jitter = to_double(v); },
         [](const C& c) { return fmt(c.data.pattern_jitter); }},
        {"samples", [](C& c, S v) { c.data.samples = to_uint(v); },
         [](const C& c) { return std::to_string(c.data.samples); }},
        {"angle_degrees", [](C& c, S v) { c.data.angle_degrees = to_double(v); },
         [](const C& c) { return fmt(c.data.angle_degrees); }},
        {"noise", [](C& c, S v) { c.data.noise = to_double(v); }, [](const C& c) { return fmt(c.data.noise); }},
        {"csv_path", [](C& c, S v) { c.data.csv_path = v; }, [](const C& c) { return c.data.csv_path.string(); }},
        {"hidden", [](C& c, S v) { c.hidden = to_list(v, [](S s) { return std::size_t(to_uint(s)); }); },
         [](const C& c) { return join(c.hidden); }},
        {"normalizer", [](C& c, S v) { c.normalizer = to_enum<NormKind>(v, parse_norm_kind); },
         [](const C& c) { return to_string(c.normalizer); }},
        {"measure", [](C& c, S v) { c.norm.measure = to_enum<Measure>(v, parse_measure); },
         [](const C& c) { return to_string(c.norm.measure); }},
        {"group_size", [](C& c, S v) { c.norm.group_size = to_uint(v); },
         [](const C& c) { return std::to_string(c.norm.group_size); }},
        {"epsilon", [](C& c, S v) { c.norm.epsilon = to_double(v); }, [](const C& c) { return fmt(c.norm.epsilon); }},
        {"alpha", [](C& c, S v) { c.norm.alpha = to_double(v); }, [](const C& c) { return fmt(c.norm.alpha); }},
        {"fixed_gate",
         [](C& c, S v) {
             if (v == "none" || v == "learnable") c.norm.fixed_gate.reset();
             else c.norm.fixed_gate = to_double(v);
         },
         [](const C& c) { return c.norm.fixed_gate ? fmt(*c.norm.fixed_gate) : std::string("learnable"); }},
        {"reciprocal", [](C& c, S v) { c.norm.reciprocal = to_bool(v); },
         [](const C& c) { return std::string(c.norm.reciprocal ? "true" : "false"); }},
        {"lr", [](C& c, S v) { c.optimizer.lr = to_double(v); }, [](const C& c) { return fmt(c.optimizer.lr); }},
        {"momentum", [](C& c, S v) { c.optimizer.momentum = to_double(v); },
         [](const C& c) { return fmt(c.optimizer.momentum); }},
        {"weight_decay", [](C& c, S v) { c.optimizer.weight_decay = to_double(v); },
         [](const C& c) { return fmt(c.optimizer.weight_decay); }},
        {"norm_weight_decay", [](C& c, S v) { c.optimizer.norm_weight_decay = to_bool(v); },
         [](const C& c) { return std::string(c.optimizer.norm_weight_decay ? "true" : "false"); }},
        {"norm_lr_scale", [](C& c, S v) { c.optimizer.norm_lr_scale = to_double(v); },
         [](const C& c) { return fmt(c.optimizer.norm_lr_scale); }},
        {"epochs", [](C& c, S v) { c.epochs = to_uint(v); }, [](const C& c) { return std::to_string(c.epochs); }},
        {"batch_size", [](C& c, S v) { c.batch_size = to_uint(v); },
         [](const C& c) { return std::to_string(c.batch_size); }},
        {"dann_lambda", [](C& c, S v) { c.dann_lambda = to_double(v); }, [](const C& c) { return fmt(c.dann_lambda); }},
        {"lambda_schedule",
         [](C& c, S v) {
             if (v == "constant") c.lambda_schedule = LambdaSchedule::Constant;
             else if (v == "annealed") c.lambda_schedule = LambdaSchedule::Annealed;
             else throw ValueError{"expected constant or annealed, found '" + v + "'"};
         },
         [](const C& c) { return to_string(c.lambda_schedule); }},
        {"discriminator_hidden", [](C& c, S v) { c.discriminator_hidden = to_uint(v); },
         [](const C& c) { return std::to_string(c.discriminator_hidden); }},
        {"seed", [](C& c, S v) { c.seed = to_uint(v); }, [](const C& c) { return std::to_string(c.seed); }},
        {"seeds", [](C& c, S v) { c.seeds = to_list(v, to_uint); }, [](const C& c) { return join(c.seeds); }},
        {"out_dir", [](C& c, S v) { c.out_dir = v; }, [](const C& c) { return c.out_dir.string(); }},
    };
    return table;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig c;
    std::stringstream in(text);
    std::string raw;
    std::size_t lineno = 0;
    std::set<std::string> seen;
    while (std::getline(in, raw)) {
        ++lineno;
        const auto hash = raw.find('#');
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(lineno, line, "expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const Field* field = nullptr;
        for (const auto& f : fields())
            if (key == f.key) field = &f;
        if (!field) throw ConfigError(lineno, key, "unknown key");
        if (!seen.insert(key).second) throw ConfigError(lineno, key, "set more than once");
        if (value.empty() && key != "out_dir" && key != "csv_path" && key != "seeds")
            throw ConfigError(lineno, key, "missing value");
        if (value.empty() && key == "seeds") {
            c.seeds.clear();
            continue;
        }
        try {
            field->set(c, value);
            c.validate_values();
        } catch (const ValueError& e) {
            throw ConfigError(lineno, key, e.message);
        } catch (const InvalidInput& e) {
            throw ConfigError(lineno, key, e.what());
        }
    }
    if (c.data.generator == Generator::Csv && c.data.csv_path.empty())
        throw ConfigError(lineno, "csv_path", "csv generator needs csv_path");
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string format_config(const ExperimentConfig& config) {
    std::string out;
    for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(config) + "\n";
    return out;
}

DomainPair make_datasets(const DataConfig& d, std::uint64_t seed) {
    switch (d.generator) {
        case Generator::ChannelPermuted:
            return make_channel_permuted(d.classes, d.dims, block_swap_permutation(d.dims, d.permutation_block), d.shift,
                                         d.per_class, seed, d.center_scale, d.pattern_jitter);
        case Generator::ShiftedGaussians:
            return make_shifted_gaussians(d.classes, d.dims, d.shift, d.scale, d.per_class, seed, d.center_scale);
        case Generator::TwoMoons:
            return make_two_moons_shift(d.samples, d.angle_degrees * std::numbers::pi / 180.0, d.noise, seed);
        case Generator::Csv: return read_csv(d.csv_path);
    }
    throw InvalidInput("unknown generator");
}

}  // namespace rnlab
