#pragma once

// Per-output kernel bodies shared by the serial and OpenMP backends so that
// both perform the same floating-point operations in the same order.

#include <algorithm>
#include <cmath>

#include "rnlab/kernels.hpp"

namespace rnlab::kernels {

namespace detail {

inline void moments_one(std::span<const double> x, ChannelLayout l, std::size_t c, double& mu, double& var) {
    const double m = static_cast<double>(l.reduced());
    double sum = 0.0;
    for (std::size_t n = 0; n < l.batch; ++n)
        for (std::size_t k = 0; k < l.inner; ++k) sum += x[l.index(n, c, k)];
    const double mean = sum / m;
    double ss = 0.0;
    for (std::size_t n = 0; n < l.batch; ++n)
        for (std::size_t k = 0; k < l.inner; ++k) {
            const double d = x[l.index(n, c, k)] - mean;
            ss += d * d;
        }
    mu = mean;
    var = ss / m;
}

inline void normalize_one(std::span<const double> x, ChannelLayout l, std::size_t c, double mu, double var,
                          double eps, std::span<double> out) {
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t n = 0; n < l.batch; ++n)
        for (std::size_t k = 0; k < l.inner; ++k) {
            const std::size_t i = l.index(n, c, k);
            out[i] = (x[i] - mu) * inv;
        }
}

inline void gemm_row(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims d,
                     std::size_t i) {
    // lda/ldb follow the stored (untransposed) layouts
    const std::size_t lda = d.trans_a ? d.m : d.k;
    const std::size_t ldb = d.trans_b ? d.k : d.n;
    for (std::size_t j = 0; j < d.n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < d.k; ++p) {
            const double av = d.trans_a ? a[p * lda + i] : a[i * lda + p];
            const double bv = d.trans_b ? b[j * ldb + p] : b[p * ldb + j];
            acc += av * bv;
        }
        if (d.accumulate)
            c[i * d.n + j] += acc;
        else
            c[i * d.n + j] = acc;
    }
}

inline void softmax_row(std::span<const double> in, std::span<double> out, std::size_t cols, std::size_t r) {
    const double* src = in.data() + r * cols;
    double* dst = out.data() + r * cols;
    double mx = src[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, src[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
        dst[j] = std::exp(src[j] - mx);
        z += dst[j];
    }
    for (std::size_t j = 0; j < cols; ++j) dst[j] /= z;
}

}  // namespace detail

}  // namespace rnlab::kernels
