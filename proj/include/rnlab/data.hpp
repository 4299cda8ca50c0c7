#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rnlab/normlayers.hpp"
#include "rnlab/random.hpp"
#include "rnlab/tensor.hpp"

namespace rnlab {

/// Labeled samples from one domain. Features are [M, F].
struct DomainDataset {
    Tensor features;
    std::vector<int> labels;
    Domain domain = Domain::Source;

    std::size_t size() const { return labels.size(); }
    std::size_t width() const { return features.dim(1); }
    int classes() const;  // max label + 1
    void validate() const;
};

/// A domain's features with the labels withheld. This is all a trainer ever sees of the target.
class UnlabeledDataset {
   public:
    explicit UnlabeledDataset(const DomainDataset& labeled) : features_(labeled.features), domain_(labeled.domain) {}

    const Tensor& features() const { return features_; }
    Domain domain() const { return domain_; }
    std::size_t size() const { return features_.dim(0); }

   private:
    Tensor features_;
    Domain domain_;
};

struct DomainPair {
    DomainDataset source;
    DomainDataset target;
};

/// Class centres used by the Gaussian generators: K x F draws from N(0, center_scale^2).
Tensor gaussian_centers(std::size_t classes, std::size_t dims, double center_scale, Rng& rng);

/// Source class k ~ N(center_k, I); target applies x -> scale * x + shift to the same process.
/// per_class samples are drawn for each class in each domain.
DomainPair make_shifted_gaussians(std::size_t classes, std::size_t dims, const std::vector<double>& shift,
                                  const std::vector<double>& scale, std::size_t per_class, std::uint64_t seed,
                                  double center_scale = 3.0);

/// Target features are the source process with (Px)[i] = x[perm[i]], then shifted.
/// Class centres are center_scale * (orbit average of a Gaussian draw under P, rescaled to unit
/// variance) + pattern_jitter * N(0, I): at jitter 0 every class pattern is carried by channels
/// that P exchanges with equally loaded partners, and the target differs from the source only by
/// the shift. A negative jitter draws fully independent centres.
DomainPair make_channel_permuted(std::size_t classes, std::size_t dims, const std::vector<std::size_t>& permutation,
                                 const std::vector<double>& shift, std::size_t per_class, std::uint64_t seed,
                                 double center_scale = 3.0, double pattern_jitter = -1.0);

/// Swaps consecutive blocks pairwise: with block 2 and F = 8, {2,3,0,1,6,7,4,5}.
std::vector<std::size_t> block_swap_permutation(std::size_t dims, std::size_t block = 2);

/// Two interleaved half circles (M points total, classes balanced); the target is rotated by
/// angle_radians about the point (0.5, 0.25), which maps one moon onto the other at pi.
DomainPair make_two_moons_shift(std::size_t samples, double angle_radians, double noise, std::uint64_t seed);

/// Rows of x at the given indices.
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows);
std::vector<int> gather(const std::vector<int>& v, const std::vector<std::size_t>& rows);

/// Balanced paired batches. An epoch covers the longer stream once (drop-last); the shorter
/// stream is reshuffled whenever it cannot supply a full batch.
class BatchIterator {
   public:
    struct Step {
        std::vector<std::size_t> source;
        std::vector<std::size_t> target;
    };

    BatchIterator(std::size_t source_size, std::size_t target_size, std::size_t batch, std::uint64_t seed);

    std::size_t batches_per_epoch() const { return per_epoch_; }
    std::vector<Step> next_epoch();

   private:
    struct Stream {
        std::size_t size = 0;
        std::vector<std::size_t> order;
        std::size_t cursor = 0;
    };
    std::vector<std::size_t> take(Stream& s);

    std::size_t batch_;
    std::size_t per_epoch_;
    Stream source_, target_;
    Rng rng_;
};

/// CSV with header f0,...,f{F-1},label,domain and domain in {s,t}.
void write_csv(const std::filesystem::path& path, const std::vector<const DomainDataset*>& parts);
DomainPair read_csv(const std::filesystem::path& path);

}  // namespace rnlab
