#include <omp.h>

#include "kernels_detail.hpp"

namespace rnlab::kernels::parallel {

namespace {
bool worth_it(std::size_t work) { return work >= kMinParallelWork && omp_get_max_threads() > 1; }
}  // namespace

void channel_moments(std::span<const double> x, ChannelLayout layout, std::span<double> mu, std::span<double> var) {
    const auto channels = static_cast<std::ptrdiff_t>(layout.channels);
#pragma omp parallel for schedule(static) if (worth_it(x.size()))
    for (std::ptrdiff_t c = 0; c < channels; ++c) {
        const auto cc = static_cast<std::size_t>(c);
        detail::moments_one(x, layout, cc, mu[cc], var[cc]);
    }
}

void normalize_channels(std::span<const double> x, ChannelLayout layout, std::span<const double> mu,
                        std::span<const double> var, double eps, std::span<double> out) {
    const auto channels = static_cast<std::ptrdiff_t>(layout.channels);
#pragma omp parallel for schedule(static) if (worth_it(x.size()))
    for (std::ptrdiff_t c = 0; c < channels; ++c) {
        const auto cc = static_cast<std::size_t>(c);
        detail::normalize_one(x, layout, cc, mu[cc], var[cc], eps, out);
    }
}

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims dims) {
    const auto rows = static_cast<std::ptrdiff_t>(dims.m);
#pragma omp parallel for schedule(static) if (worth_it(dims.m * dims.k * dims.n))
    for (std::ptrdiff_t i = 0; i < rows; ++i) detail::gemm_row(a, b, c, dims, static_cast<std::size_t>(i));
}

void softmax_rows(std::span<const double> in, std::span<double> out, std::size_t rows, std::size_t cols) {
    const auto nrows = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (worth_it(rows * cols * 4))
    for (std::ptrdiff_t r = 0; r < nrows; ++r) detail::softmax_row(in, out, cols, static_cast<std::size_t>(r));
}

}  // namespace rnlab::kernels::parallel
