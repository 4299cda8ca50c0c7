#include "rnlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace rnlab {

int DomainDataset::classes() const {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
}

void DomainDataset::validate() const {
    if (features.rank() != 2) throw InvalidInput("dataset features must be [M, F], got " + shape_string(features.shape()));
    if (labels.empty()) throw InvalidInput("dataset must contain at least one sample");
    if (features.dim(0) != labels.size())
        throw InvalidInput("dataset has " + std::to_string(features.dim(0)) + " rows but " +
                           std::to_string(labels.size()) + " labels");
    for (int y : labels)
        if (y < 0) throw InvalidInput("labels must be non-negative");
}

namespace {

std::vector<double> broadcast(const std::vector<double>& v, std::size_t dims, double fill, const char* what) {
    if (v.empty()) return std::vector<double>(dims, fill);
    if (v.size() == 1) return std::vector<double>(dims, v[0]);
    if (v.size() != dims)
        throw InvalidInput(std::string(what) + " has " + std::to_string(v.size()) + " entries, expected " +
                           std::to_string(dims));
    return v;
}

DomainDataset sample_gaussian_classes(const Tensor& centers, std::size_t per_class, Domain domain, Rng& rng) {
    const std::size_t k = centers.dim(0), f = centers.dim(1);
    DomainDataset d;
    d.domain = domain;
    d.features = Tensor({k * per_class, f});
    d.labels.resize(k * per_class);
    std::normal_distribution<double> unit(0.0, 1.0);
    auto x = d.features.data();
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t m = 0; m < per_class; ++m) {
            const std::size_t row = c * per_class + m;
            d.labels[row] = static_cast<int>(c);
            for (std::size_t j = 0; j < f; ++j) x[row * f + j] = centers(c, j) + unit(rng);
        }
    return d;
}

void check_generator_args(std::size_t classes, std::size_t dims, std::size_t per_class) {
    if (classes < 2) throw InvalidInput("need at least 2 classes");
    if (dims < 2) throw InvalidInput("need at least 2 feature dimensions");
    if (per_class == 0) throw InvalidInput("samples per class must be >= 1");
}

}  // namespace

Tensor gaussian_centers(std::size_t classes, std::size_t dims, double center_scale, Rng& rng) {
    Tensor c({classes, dims});
    std::normal_distribution<double> dist(0.0, center_scale);
    for (double& v : c.data()) v = dist(rng);
    return c;
}

DomainPair make_shifted_gaussians(std::size_t classes, std::size_t dims, const std::vector<double>& shift,
                                  const std::vector<double>& scale, std::size_t per_class, std::uint64_t seed,
                                  double center_scale) {
    check_generator_args(classes, dims, per_class);
    const auto sh = broadcast(shift, dims, 0.0, "shift");
    const auto sc = broadcast(scale, dims, 1.0, "scale");
    for (double s : sc)
        if (s == 0.0 || !std::isfinite(s)) throw InvalidInput("scale entries must be finite and nonzero");

    Rng rng(derive_seed(seed, streams::kData));
    const Tensor centers = gaussian_centers(classes, dims, center_scale, rng);
    DomainPair out{sample_gaussian_classes(centers, per_class, Domain::Source, rng),
                   sample_gaussian_classes(centers, per_class, Domain::Target, rng)};
    auto x = out.target.features.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const std::size_t j = i % dims;
        x[i] = sc[j] * x[i] + sh[j];
    }
    return out;
}

DomainPair make_channel_permuted(std::size_t classes, std::size_t dims, const std::vector<std::size_t>& permutation,
                                 const std::vector<double>& shift, std::size_t per_class, std::uint64_t seed,
                                 double center_scale, double pattern_jitter) {
    check_generator_args(classes, dims, per_class);
    if (permutation.size() != dims) throw InvalidInput("permutation must have one entry per feature");
    std::vector<bool> seen(dims, false);
    for (std::size_t p : permutation) {
        if (p >= dims || seen[p]) throw InvalidInput("permutation is not a bijection on the features");
        seen[p] = true;
    }
    const auto sh = broadcast(shift, dims, 0.0, "shift");

    Rng rng(derive_seed(seed, streams::kData));
    Tensor centers = gaussian_centers(classes, dims, center_scale, rng);
    if (pattern_jitter >= 0.0) {
        std::vector<std::size_t> orbit_of(dims, dims);
        std::vector<std::vector<std::size_t>> orbits;
        for (std::size_t i = 0; i < dims; ++i) {
            if (orbit_of[i] != dims) continue;
            orbits.emplace_back();
            for (std::size_t j = i; orbit_of[j] == dims; j = permutation[j]) {
                orbit_of[j] = orbits.size() - 1;
                orbits.back().push_back(j);
            }
        }
        std::normal_distribution<double> jitter(0.0, 1.0);
        for (std::size_t k = 0; k < classes; ++k) {
            std::vector<double> row(dims);
            for (const auto& orbit : orbits) {
                double sum = 0.0;
                for (std::size_t j : orbit) sum += centers(k, j);
                const double v = sum / std::sqrt(static_cast<double>(orbit.size()));
                for (std::size_t j : orbit) row[j] = v;
            }
            for (std::size_t j = 0; j < dims; ++j) centers(k, j) = row[j] + pattern_jitter * jitter(rng);
        }
    }

    DomainPair out{sample_gaussian_classes(centers, per_class, Domain::Source, rng),
                   sample_gaussian_classes(centers, per_class, Domain::Target, rng)};
    Tensor& x = out.target.features;
    std::vector<double> row(dims);
    for (std::size_t n = 0; n < x.dim(0); ++n) {
        for (std::size_t j = 0; j < dims; ++j) row[j] = x(n, permutation[j]);
        for (std::size_t j = 0; j < dims; ++j) x(n, j) = row[j] + sh[j];
    }
    return out;
}

std::vector<std::size_t> block_swap_permutation(std::size_t dims, std::size_t block) {
    if (block == 0) throw InvalidInput("block size must be >= 1");
    std::vector<std::size_t> p(dims);
    for (std::size_t i = 0; i < dims; ++i) p[i] = i;
    const std::size_t pair = 2 * block;
    for (std::size_t start = 0; start + pair <= dims; start += pair)
        for (std::size_t k = 0; k < block; ++k) std::swap(p[start + k], p[start + block + k]);
    return p;
}

DomainPair make_two_moons_shift(std::size_t samples, double angle_radians, double noise, std::uint64_t seed) {
    if (noise < 0.0) throw InvalidInput("noise must be >= 0");
    if (samples < 2) throw InvalidInput("two moons needs at least 2 samples");
    Rng rng(derive_seed(seed, streams::kData));
    std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
    std::normal_distribution<double> jitter(0.0, 1.0);

    auto moons = [&](Domain domain) {
        DomainDataset d;
        d.domain = domain;
        d.features = Tensor({samples, 2});
        d.labels.resize(samples);
        for (std::size_t n = 0; n < samples; ++n) {
            const int label = n < samples / 2 ? 0 : 1;
            const double t = angle(rng);
            double x = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
            double y = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
            x += noise * jitter(rng);
            y += noise * jitter(rng);
            d.features(n, 0) = x;
            d.features(n, 1) = y;
            d.labels[n] = label;
        }
        return d;
    };

    DomainPair out{moons(Domain::Source), moons(Domain::Target)};
    const double c = std::cos(angle_radians), s = std::sin(angle_radians);
    Tensor& x = out.target.features;
    for (std::size_t n = 0; n < samples; ++n) {
        const double dx = x(n, 0) - 0.5, dy = x(n, 1) - 0.25;
        x(n, 0) = 0.5 + c * dx - s * dy;
        x(n, 1) = 0.25 + s * dx + c * dy;
    }
    return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
    const std::size_t f = x.size() / x.dim(0);
    Shape shape = x.shape();
    shape[0] = rows.size();
    Tensor out(shape);
    auto src = x.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= x.dim(0)) throw InvalidInput("row index out of range");
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(rows[i] * f), f,
                    dst.begin() + static_cast<std::ptrdiff_t>(i * f));
    }
    return out;
}

std::vector<int> gather(const std::vector<int>& v, const std::vector<std::size_t>& rows) {
    std::vector<int> out;
    out.reserve(rows.size());
    for (std::size_t r : rows) out.push_back(v.at(r));
    return out;
}

// ---- batching -----------------------------------------------------------------

BatchIterator::BatchIterator(std::size_t source_size, std::size_t target_size, std::size_t batch,
                             std::uint64_t seed)
    : batch_(batch), rng_(derive_seed(seed, streams::kBatches)) {
    if (batch == 0) throw InvalidInput("batch size must be >= 1");
    if (batch > std::min(source_size, target_size))
        throw InvalidInput("batch size " + std::to_string(batch) + " exceeds the smaller domain (" +
                           std::to_string(std::min(source_size, target_size)) + " samples)");
    per_epoch_ = std::max(source_size, target_size) / batch;
    source_.size = source_size;
    target_.size = target_size;
}

std::vector<std::size_t> BatchIterator::take(Stream& s) {
    if (s.order.empty() || s.cursor + batch_ > s.size) {
        s.order.resize(s.size);
        for (std::size_t i = 0; i < s.size; ++i) s.order[i] = i;
        std::shuffle(s.order.begin(), s.order.end(), rng_);
        s.cursor = 0;
    }
    std::vector<std::size_t> out(s.order.begin() + static_cast<std::ptrdiff_t>(s.cursor),
                                 s.order.begin() + static_cast<std::ptrdiff_t>(s.cursor + batch_));
    s.cursor += batch_;
    return out;
}

std::vector<BatchIterator::Step> BatchIterator::next_epoch() {
    // the longer stream starts every epoch from a fresh shuffle
    Stream& longer = source_.size >= target_.size ? source_ : target_;
    longer.order.clear();
    std::vector<Step> steps;
    steps.reserve(per_epoch_);
    for (std::size_t b = 0; b < per_epoch_; ++b) {
        Step s;
        s.source = take(source_);
        s.target = take(target_);
        steps.push_back(std::move(s));
    }
    return steps;
}

// ---- CSV ------------------------------------------------------------------------

void write_csv(const std::filesystem::path& path, const std::vector<const DomainDataset*>& parts) {
    if (parts.empty()) throw InvalidInput("nothing to write");
    const std::size_t f = parts.front()->width();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
    for (std::size_t j = 0; j < f; ++j) out << 'f' << j << ',';
    out << "label,domain\n";
    out.precision(17);
    for (const DomainDataset* d : parts) {
        if (d->width() != f) throw InvalidInput("datasets written to one CSV must share a feature width");
        for (std::size_t n = 0; n < d->size(); ++n) {
            for (std::size_t j = 0; j < f; ++j) out << d->features(n, j) << ',';
            out << d->labels[n] << ',' << to_string(d->domain) << '\n';
        }
    }
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

}  // namespace

DomainPair read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw InvalidInput(path.string() + ": empty file");
    const auto header = split_fields(line);
    if (header.size() < 3 || header[header.size() - 2] != "label" || header.back() != "domain")
        throw InvalidInput(path.string() + ":1: header must be f0,...,f{F-1},label,domain");
    const std::size_t f = header.size() - 2;
    for (std::size_t j = 0; j < f; ++j)
        if (header[j] != "f" + std::to_string(j))
            throw InvalidInput(path.string() + ":1: expected column f" + std::to_string(j) + ", found '" + header[j] +
                               "'");

    std::vector<double> xs, xt;
    DomainPair out;
    out.source.domain = Domain::Source;
    out.target.domain = Domain::Target;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
        if (fields.size() != f + 2)
            throw InvalidInput(where + "expected " + std::to_string(f + 2) + " fields, found " +
                               std::to_string(fields.size()));
        Domain d;
        try {
            d = parse_domain(fields.back());
        } catch (const InvalidInput&) {
            throw InvalidInput(where + "domain must be 's' or 't', found '" + fields.back() + "'");
        }
        auto& values = d == Domain::Source ? xs : xt;
        auto& labels = d == Domain::Source ? out.source.labels : out.target.labels;
        for (std::size_t j = 0; j < f; ++j) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(fields[j], &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != fields[j].size() || fields[j].empty())
                throw InvalidInput(where + "field f" + std::to_string(j) + " is not a number: '" + fields[j] + "'");
            values.push_back(v);
        }
        std::size_t used = 0;
        int y = -1;
        try {
            y = std::stoi(fields[f], &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != fields[f].size() || y < 0)
            throw InvalidInput(where + "label must be a non-negative integer, found '" + fields[f] + "'");
        labels.push_back(y);
    }
    if (out.source.labels.empty() || out.target.labels.empty())
        throw InvalidInput(path.string() + ": both domains need at least one row");
    out.source.features = Tensor({out.source.labels.size(), f}, std::move(xs));
    out.target.features = Tensor({out.target.labels.size(), f}, std::move(xt));
    return out;
}

}  // namespace rnlab
