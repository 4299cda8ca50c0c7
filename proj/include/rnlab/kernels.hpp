#pragma once

// Hot loops behind the differentiable ops. Each kernel exists twice: a plain
// serial reference and an OpenMP version that splits work over independent
// outputs (channels, rows) so both produce bit-identical results.

#include <cstddef>
#include <span>

#include "rnlab/tensor.hpp"

namespace rnlab::kernels {

/// View of a [N, C, ...] tensor as (batch, channels, inner) where inner = prod(dims[2:]).
struct ChannelLayout {
    std::size_t batch = 0;
    std::size_t channels = 0;
    std::size_t inner = 1;

    std::size_t reduced() const { return batch * inner; }
    std::size_t index(std::size_t n, std::size_t c, std::size_t k) const { return (n * channels + c) * inner + k; }
};

ChannelLayout channel_layout(const Shape& shape);

/// Row-major GEMM: C = op(A) * op(B) (+ C when accumulate). op(A) is m x k, op(B) is k x n.
struct GemmDims {
    std::size_t m, k, n;
    bool trans_a = false;
    bool trans_b = false;
    bool accumulate = false;
};

namespace serial {
void channel_moments(std::span<const double> x, ChannelLayout layout, std::span<double> mu, std::span<double> var);
void normalize_channels(std::span<const double> x, ChannelLayout layout, std::span<const double> mu,
                        std::span<const double> var, double eps, std::span<double> out);
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims dims);
void softmax_rows(std::span<const double> in, std::span<double> out, std::size_t rows, std::size_t cols);
}  // namespace serial

namespace parallel {
void channel_moments(std::span<const double> x, ChannelLayout layout, std::span<double> mu, std::span<double> var);
void normalize_channels(std::span<const double> x, ChannelLayout layout, std::span<const double> mu,
                        std::span<const double> var, double eps, std::span<double> out);
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims dims);
void softmax_rows(std::span<const double> in, std::span<double> out, std::size_t rows, std::size_t cols);

/// Work size (scalar multiply-adds) below which the parallel kernels run on the calling thread.
inline constexpr std::size_t kMinParallelWork = std::size_t{1} << 16;
}  // namespace parallel

}  // namespace rnlab::kernels
