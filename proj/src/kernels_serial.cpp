#include "kernels_detail.hpp"

namespace rnlab::kernels {

ChannelLayout channel_layout(const Shape& shape) {
    if (shape.size() < 2) throw InvalidInput("expected a [N, C, ...] tensor, got " + shape_string(shape));
    ChannelLayout l;
    l.batch = shape[0];
    l.channels = shape[1];
    for (std::size_t i = 2; i < shape.size(); ++i) l.inner *= shape[i];
    return l;
}

namespace serial {

void channel_moments(std::span<const double> x, ChannelLayout layout, std::span<double> mu, std::span<double> var) {
    for (std::size_t c = 0; c < layout.channels; ++c) detail::moments_one(x, layout, c, mu[c], var[c]);
}

void normalize_channels(std::span<const double> x, ChannelLayout layout, std::span<const double> mu,
                        std::span<const double> var, double eps, std::span<double> out) {
    for (std::size_t c = 0; c < layout.channels; ++c) detail::normalize_one(x, layout, c, mu[c], var[c], eps, out);
}

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims dims) {
    for (std::size_t i = 0; i < dims.m; ++i) detail::gemm_row(a, b, c, dims, i);
}

void softmax_rows(std::span<const double> in, std::span<double> out, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) detail::softmax_row(in, out, cols, r);
}

}  // namespace serial
}  // namespace rnlab::kernels
