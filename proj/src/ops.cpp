#include "rnlab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rnlab/kernels.hpp"

namespace rnlab::ops {

namespace {

void same_shape(Var a, Var b, const char* op) { require_same_shape(a.value(), b.value(), op); }

void require_rank(Var v, std::size_t rank, const char* op) {
    if (v.value().rank() != rank) {
        throw InvalidInput(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                           shape_string(v.shape()));
    }
}

void require_vector(Var v, std::size_t n, const char* op) {
    if (v.value().rank() != 1 || v.size() != n) {
        throw InvalidInput(std::string(op) + ": expected vector of length " + std::to_string(n) + ", got " +
                           shape_string(v.shape()));
    }
}

// Unary op whose derivative is a function of (x, y).
template <class Fwd, class Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(x[i]);
    const std::size_t ia = a.id;
    return a.tape->record(std::move(y), {a}, [ia, deriv](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        const Tensor& xv = t.value(ia);
        const Tensor& yv = t.value(self);
        Tensor& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(xv[i], yv[i]);
    });
}

}  // namespace

Var add(Var a, Var b) {
    same_shape(a, b, "add");
    Tensor y(a.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->record(std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        for (std::size_t id : {ia, ib}) {
            if (!t.requires_grad(id)) continue;
            Tensor& gi = t.grad_buffer(id);
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
    });
}

Var sub(Var a, Var b) {
    same_shape(a, b, "sub");
    Tensor y(a.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] - b.value()[i];
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->record(std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        if (t.requires_grad(ia)) {
            Tensor& ga = t.grad_buffer(ia);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(ib)) {
            Tensor& gb = t.grad_buffer(ib);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

Var mul(Var a, Var b) {
    same_shape(a, b, "mul");
    Tensor y(a.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * b.value()[i];
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->record(std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        if (t.requires_grad(ia)) {
            const Tensor& bv = t.value(ib);
            Tensor& ga = t.grad_buffer(ia);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.requires_grad(ib)) {
            const Tensor& av = t.value(ia);
            Tensor& gb = t.grad_buffer(ib);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

Var scale(Var a, double s) {
    return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var one_minus(Var a) {
    return unary(a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

Var square(Var a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var abs(Var a) {
    return unary(
        a, [](double x) { return std::abs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var exp(Var a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
    for (double v : a.value().data())
        if (!(v > 0.0)) throw InvalidInput("log: non-positive input");
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var relu(Var a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    const std::size_t ia = a.id;
    return a.tape->record(Tensor::scalar(s), {a}, [ia](Tape& t, std::size_t self) {
        const double g = t.incoming(self)[0];
        Tensor& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
}

Var mean(Var a) {
    if (a.size() == 0) throw InvalidInput("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var weighted_sum(Var a, const Tensor& weights) {
    require_same_shape(a.value(), weights, "weighted_sum");
    double s = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * a.value()[i];
    const std::size_t ia = a.id;
    return a.tape->record(Tensor::scalar(s), {a}, [ia, weights](Tape& t, std::size_t self) {
        const double g = t.incoming(self)[0];
        Tensor& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * weights[i];
    });
}

Moments channel_moments(Var x) {
    const auto layout = kernels::channel_layout(x.shape());
    if (layout.reduced() == 0) throw InvalidInput("channel_moments: empty batch " + shape_string(x.shape()));
    Tensor mu(Shape{layout.channels});
    Tensor var(Shape{layout.channels});
    kernels::parallel::channel_moments(x.value().data(), layout, mu.data(), var.data());
    const std::size_t ix = x.id;
    const double m = static_cast<double>(layout.reduced());

    Var mu_v = x.tape->record(std::move(mu), {x}, [ix, layout, m](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        Tensor& gx = t.grad_buffer(ix);
        for (std::size_t n = 0; n < layout.batch; ++n)
            for (std::size_t c = 0; c < layout.channels; ++c)
                for (std::size_t k = 0; k < layout.inner; ++k) gx[layout.index(n, c, k)] += g[c] / m;
    });
    const std::size_t imu = mu_v.id;
    // d var / d x_i = 2 (x_i - mu) / M; the mean's own dependence on x cancels.
    Var var_v = x.tape->record(std::move(var), {x}, [ix, imu, layout, m](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        const Tensor& xv = t.value(ix);
        const Tensor& mv = t.value(imu);
        Tensor& gx = t.grad_buffer(ix);
        for (std::size_t n = 0; n < layout.batch; ++n)
            for (std::size_t c = 0; c < layout.channels; ++c)
                for (std::size_t k = 0; k < layout.inner; ++k) {
                    const std::size_t i = layout.index(n, c, k);
                    gx[i] += g[c] * 2.0 * (xv[i] - mv[c]) / m;
                }
    });
    return {mu_v, var_v};
}

Var pairwise_neg_sq(Var a, Var b) {
    require_rank(a, 1, "pairwise_neg_sq");
    require_rank(b, 1, "pairwise_neg_sq");
    const std::size_t r = a.size(), c = b.size();
    Tensor e(Shape{r, c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const double d = a.value()[i] - b.value()[j];
            e(i, j) = -(d * d);
        }
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->record(std::move(e), {a, b}, [ia, ib, r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        const Tensor& av = t.value(ia);
        const Tensor& bv = t.value(ib);
        const bool need_a = t.requires_grad(ia), need_b = t.requires_grad(ib);
        Tensor* ga = need_a ? &t.grad_buffer(ia) : nullptr;
        Tensor* gb = need_b ? &t.grad_buffer(ib) : nullptr;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                const double d = av[i] - bv[j];
                const double gij = g(i, j);
                if (ga) (*ga)[i] -= 2.0 * d * gij;
                if (gb) (*gb)[j] += 2.0 * d * gij;
            }
    });
}

Var pairwise_neg_abs(Var a, Var b) {
    require_rank(a, 1, "pairwise_neg_abs");
    require_rank(b, 1, "pairwise_neg_abs");
    const std::size_t r = a.size(), c = b.size();
    Tensor e(Shape{r, c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) e(i, j) = -std::abs(a.value()[i] - b.value()[j]);
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->record(std::move(e), {a, b}, [ia, ib, r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        const Tensor& av = t.value(ia);
        const Tensor& bv = t.value(ib);
        Tensor* ga = t.requires_grad(ia) ? &t.grad_buffer(ia) : nullptr;
        Tensor* gb = t.requires_grad(ib) ? &t.grad_buffer(ib) : nullptr;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                const double d = av[i] - bv[j];
                const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                if (ga) (*ga)[i] -= s * g(i, j);
                if (gb) (*gb)[j] += s * g(i, j);
            }
    });
}

namespace {
constexpr double kCosineNormFloor = 1e-12;
}

Var pairwise_neg_cosine(Var a, Var b) {
    require_rank(a, 2, "pairwise_neg_cosine");
    require_rank(b, 2, "pairwise_neg_cosine");
    if (a.shape()[1] != b.shape()[1]) throw InvalidInput("pairwise_neg_cosine: row widths differ");
    const std::size_t r = a.shape()[0], c = b.shape()[0], d = a.shape()[1];
    auto norms = [d](const Tensor& m, std::size_t rows) {
        std::vector<double> n(rows);
        for (std::size_t i = 0; i < rows; ++i) {
            double s = kCosineNormFloor;
            for (std::size_t k = 0; k < d; ++k) s += m(i, k) * m(i, k);
            n[i] = std::sqrt(s);
        }
        return n;
    };
    const auto na = norms(a.value(), r);
    const auto nb = norms(b.value(), c);
    Tensor e(Shape{r, c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += a.value()(i, k) * b.value()(j, k);
            e(i, j) = dot / (na[i] * nb[j]) - 1.0;
        }
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->record(std::move(e), {a, b}, [ia, ib, r, c, d, na, nb](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        const Tensor& av = t.value(ia);
        const Tensor& bv = t.value(ib);
        const Tensor& ev = t.value(self);
        Tensor* ga = t.requires_grad(ia) ? &t.grad_buffer(ia) : nullptr;
        Tensor* gb = t.requires_grad(ib) ? &t.grad_buffer(ib) : nullptr;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                const double gij = g(i, j);
                if (gij == 0.0) continue;
                const double cos = ev(i, j) + 1.0;
                const double inv = 1.0 / (na[i] * nb[j]);
                for (std::size_t k = 0; k < d; ++k) {
                    if (ga) (*ga)(i, k) += gij * (bv(j, k) * inv - cos * av(i, k) / (na[i] * na[i]));
                    if (gb) (*gb)(j, k) += gij * (av(i, k) * inv - cos * bv(j, k) / (nb[j] * nb[j]));
                }
            }
    });
}

Var stack_columns(Var a, Var b) {
    require_rank(a, 1, "stack_columns");
    require_vector(b, a.size(), "stack_columns");
    const std::size_t n = a.size();
    Tensor y(Shape{n, 2});
    for (std::size_t i = 0; i < n; ++i) {
        y(i, 0) = a.value()[i];
        y(i, 1) = b.value()[i];
    }
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->record(std::move(y), {a, b}, [ia, ib, n](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        if (t.requires_grad(ia)) {
            Tensor& ga = t.grad_buffer(ia);
            for (std::size_t i = 0; i < n; ++i) ga[i] += g(i, 0);
        }
        if (t.requires_grad(ib)) {
            Tensor& gb = t.grad_buffer(ib);
            for (std::size_t i = 0; i < n; ++i) gb[i] += g(i, 1);
        }
    });
}

Var transpose(Var m) {
    require_rank(m, 2, "transpose");
    const std::size_t r = m.shape()[0], c = m.shape()[1];
    Tensor y(Shape{c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) y(j, i) = m.value()(i, j);
    const std::size_t im = m.id;
    return m.tape->record(std::move(y), {m}, [im, r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        Tensor& gm = t.grad_buffer(im);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gm(i, j) += g(j, i);
    });
}

Var softmax_rows(Var m) {
    require_rank(m, 2, "softmax_rows");
    const std::size_t r = m.shape()[0], c = m.shape()[1];
    Tensor y(m.shape());
    kernels::parallel::softmax_rows(m.value().data(), y.data(), r, c);
    const std::size_t im = m.id;
    return m.tape->record(std::move(y), {m}, [im, r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        const Tensor& yv = t.value(self);
        Tensor& gm = t.grad_buffer(im);
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += g(i, j) * yv(i, j);
            for (std::size_t j = 0; j < c; ++j) gm(i, j) += yv(i, j) * (g(i, j) - dot);
        }
    });
}

Var matvec(Var m, Var v) {
    require_rank(m, 2, "matvec");
    const std::size_t r = m.shape()[0], c = m.shape()[1];
    require_vector(v, c, "matvec");
    Tensor y(Shape{r});
    for (std::size_t i = 0; i < r; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += m.value()(i, j) * v.value()[j];
        y[i] = acc;
    }
    const std::size_t im = m.id, iv = v.id;
    return m.tape->record(std::move(y), {m, v}, [im, iv, r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        if (t.requires_grad(im)) {
            const Tensor& vv = t.value(iv);
            Tensor& gm = t.grad_buffer(im);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gm(i, j) += g[i] * vv[j];
        }
        if (t.requires_grad(iv)) {
            const Tensor& mv = t.value(im);
            Tensor& gv = t.grad_buffer(iv);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gv[j] += g[i] * mv(i, j);
        }
    });
}

Var matmul(Var a, Var b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw InvalidInput("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                           shape_string(b.shape()));
    }
    Tensor y(Shape{m, n});
    kernels::parallel::gemm(a.value().data(), b.value().data(), y.data(), {m, k, n});
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->record(std::move(y), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        if (t.requires_grad(ia)) {
            // dA = G * B^T
            kernels::parallel::gemm(g.data(), t.value(ib).data(), t.grad_buffer(ia).data(),
                                    {m, n, k, false, true, true});
        }
        if (t.requires_grad(ib)) {
            // dB = A^T * G
            kernels::parallel::gemm(t.value(ia).data(), g.data(), t.grad_buffer(ib).data(),
                                    {k, m, n, true, false, true});
        }
    });
}

Var add_bias(Var x, Var bias) {
    require_rank(x, 2, "add_bias");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    require_vector(bias, c, "add_bias");
    Tensor y = x.value();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) y(i, j) += bias.value()[j];
    const std::size_t ix = x.id, ib = bias.id;
    return x.tape->record(std::move(y), {x, bias}, [ix, ib, r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        if (t.requires_grad(ix)) {
            Tensor& gx = t.grad_buffer(ix);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (t.requires_grad(ib)) {
            Tensor& gb = t.grad_buffer(ib);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gb[j] += g(i, j);
        }
    });
}

Var normalize_channels(Var x, Var mu, Var var, double eps) {
    const auto layout = kernels::channel_layout(x.shape());
    require_vector(mu, layout.channels, "normalize_channels(mu)");
    require_vector(var, layout.channels, "normalize_channels(var)");
    for (double v : var.value().data())
        if (!(v + eps > 0.0)) throw InvalidInput("normalize_channels: var + eps must be positive");
    Tensor y(x.shape());
    kernels::parallel::normalize_channels(x.value().data(), layout, mu.value().data(), var.value().data(), eps,
                                          y.data());
    const std::size_t ix = x.id, imu = mu.id, ivar = var.id;
    return x.tape->record(std::move(y), {x, mu, var}, [ix, imu, ivar, layout, eps](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        const Tensor& xv = t.value(ix);
        const Tensor& mv = t.value(imu);
        const Tensor& vv = t.value(ivar);
        Tensor* gx = t.requires_grad(ix) ? &t.grad_buffer(ix) : nullptr;
        Tensor* gmu = t.requires_grad(imu) ? &t.grad_buffer(imu) : nullptr;
        Tensor* gvar = t.requires_grad(ivar) ? &t.grad_buffer(ivar) : nullptr;
        for (std::size_t c = 0; c < layout.channels; ++c) {
            const double inv = 1.0 / std::sqrt(vv[c] + eps);
            double gsum = 0.0, gdev = 0.0;
            for (std::size_t n = 0; n < layout.batch; ++n)
                for (std::size_t k = 0; k < layout.inner; ++k) {
                    const std::size_t i = layout.index(n, c, k);
                    if (gx) (*gx)[i] += g[i] * inv;
                    gsum += g[i];
                    gdev += g[i] * (xv[i] - mv[c]);
                }
            if (gmu) (*gmu)[c] -= inv * gsum;
            if (gvar) (*gvar)[c] -= 0.5 * inv * inv * inv * gdev;
        }
    });
}

Var channel_affine(Var x, Var gamma, Var beta) {
    const auto layout = kernels::channel_layout(x.shape());
    require_vector(gamma, layout.channels, "channel_affine(gamma)");
    require_vector(beta, layout.channels, "channel_affine(beta)");
    Tensor y(x.shape());
    for (std::size_t n = 0; n < layout.batch; ++n)
        for (std::size_t c = 0; c < layout.channels; ++c)
            for (std::size_t k = 0; k < layout.inner; ++k) {
                const std::size_t i = layout.index(n, c, k);
                y[i] = gamma.value()[c] * x.value()[i] + beta.value()[c];
            }
    const std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
    return x.tape->record(std::move(y), {x, gamma, beta}, [ix, ig, ib, layout](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        const Tensor& xv = t.value(ix);
        const Tensor& gv = t.value(ig);
        Tensor* gx = t.requires_grad(ix) ? &t.grad_buffer(ix) : nullptr;
        Tensor* gg = t.requires_grad(ig) ? &t.grad_buffer(ig) : nullptr;
        Tensor* gb = t.requires_grad(ib) ? &t.grad_buffer(ib) : nullptr;
        for (std::size_t n = 0; n < layout.batch; ++n)
            for (std::size_t c = 0; c < layout.channels; ++c)
                for (std::size_t k = 0; k < layout.inner; ++k) {
                    const std::size_t i = layout.index(n, c, k);
                    if (gx) (*gx)[i] += g[i] * gv[c];
                    if (gg) (*gg)[c] += g[i] * xv[i];
                    if (gb) (*gb)[c] += g[i];
                }
    });
}

Var channel_scale(Var x, Var s) {
    const auto layout = kernels::channel_layout(x.shape());
    require_vector(s, layout.channels, "channel_scale");
    Tensor y(x.shape());
    for (std::size_t n = 0; n < layout.batch; ++n)
        for (std::size_t c = 0; c < layout.channels; ++c)
            for (std::size_t k = 0; k < layout.inner; ++k) {
                const std::size_t i = layout.index(n, c, k);
                y[i] = s.value()[c] * x.value()[i];
            }
    const std::size_t ix = x.id, is = s.id;
    return x.tape->record(std::move(y), {x, s}, [ix, is, layout](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        const Tensor& xv = t.value(ix);
        const Tensor& sv = t.value(is);
        Tensor* gx = t.requires_grad(ix) ? &t.grad_buffer(ix) : nullptr;
        Tensor* gs = t.requires_grad(is) ? &t.grad_buffer(is) : nullptr;
        for (std::size_t n = 0; n < layout.batch; ++n)
            for (std::size_t c = 0; c < layout.channels; ++c)
                for (std::size_t k = 0; k < layout.inner; ++k) {
                    const std::size_t i = layout.index(n, c, k);
                    if (gx) (*gx)[i] += g[i] * sv[c];
                    if (gs) (*gs)[c] += g[i] * xv[i];
                }
    });
}

Var concat_batch(Var a, Var b) {
    if (a.value().rank() < 1 || a.value().rank() != b.value().rank())
        throw InvalidInput("concat_batch: rank mismatch");
    for (std::size_t i = 1; i < a.value().rank(); ++i)
        if (a.shape()[i] != b.shape()[i])
            throw InvalidInput("concat_batch: trailing dims differ " + shape_string(a.shape()) + " vs " +
                               shape_string(b.shape()));
    Shape s = a.shape();
    s[0] += b.shape()[0];
    std::vector<double> data;
    data.reserve(a.size() + b.size());
    data.insert(data.end(), a.value().data().begin(), a.value().data().end());
    data.insert(data.end(), b.value().data().begin(), b.value().data().end());
    const std::size_t ia = a.id, ib = b.id, na = a.size();
    return a.tape->record(Tensor(std::move(s), std::move(data)), {a, b}, [ia, ib, na](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        if (t.requires_grad(ia)) {
            Tensor& ga = t.grad_buffer(ia);
            for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
        }
        if (t.requires_grad(ib)) {
            Tensor& gb = t.grad_buffer(ib);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
        }
    });
}

Var slice_batch(Var x, std::size_t begin, std::size_t end) {
    if (x.value().rank() < 1 || begin > end || end > x.shape()[0])
        throw InvalidInput("slice_batch: bad range for " + shape_string(x.shape()));
    const std::size_t row = x.size() / std::max<std::size_t>(x.shape()[0], 1);
    Shape s = x.shape();
    s[0] = end - begin;
    std::vector<double> data(x.value().data().begin() + static_cast<std::ptrdiff_t>(begin * row),
                             x.value().data().begin() + static_cast<std::ptrdiff_t>(end * row));
    const std::size_t ix = x.id, off = begin * row;
    return x.tape->record(Tensor(std::move(s), std::move(data)), {x}, [ix, off](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        Tensor& gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[off + i] += g[i];
    });
}

Var slice(Var v, std::size_t begin, std::size_t end) {
    require_rank(v, 1, "slice");
    if (begin > end || end > v.size()) throw InvalidInput("slice: bad range");
    std::vector<double> data(v.value().data().begin() + static_cast<std::ptrdiff_t>(begin),
                             v.value().data().begin() + static_cast<std::ptrdiff_t>(end));
    const std::size_t iv = v.id;
    return v.tape->record(Tensor::vector(std::move(data)), {v}, [iv, begin](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        Tensor& gv = t.grad_buffer(iv);
        for (std::size_t i = 0; i < g.size(); ++i) gv[begin + i] += g[i];
    });
}

Var concat(std::span<const Var> parts) {
    if (parts.empty()) throw InvalidInput("concat: no inputs");
    std::vector<double> data;
    std::vector<Var> inputs(parts.begin(), parts.end());
    std::vector<std::size_t> ids, offsets;
    for (const Var& p : parts) {
        require_rank(p, 1, "concat");
        ids.push_back(p.id);
        offsets.push_back(data.size());
        data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    }
    Tape* tape = parts.front().tape;
    return tape->record(Tensor::vector(std::move(data)), std::move(inputs), [ids, offsets](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        for (std::size_t p = 0; p < ids.size(); ++p) {
            if (!t.requires_grad(ids[p])) continue;
            Tensor& gp = t.grad_buffer(ids[p]);
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offsets[p] + i];
        }
    });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
    require_rank(logits, 2, "cross_entropy");
    const std::size_t n = logits.shape()[0], k = logits.shape()[1];
    if (labels.size() != n) throw InvalidInput("cross_entropy: label count differs from batch size");
    if (n == 0) throw InvalidInput("cross_entropy: empty batch");
    Tensor probs(logits.shape());
    kernels::parallel::softmax_rows(logits.value().data(), probs.data(), n, k);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= k) throw InvalidInput("cross_entropy: label out of range");
        // log-softmax via the max-shifted logits for stability
        double mx = logits.value()(i, 0);
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits.value()(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(logits.value()(i, j) - mx);
        loss -= logits.value()(i, static_cast<std::size_t>(y)) - mx - std::log(z);
    }
    loss /= static_cast<double>(n);
    std::vector<int> lab(labels.begin(), labels.end());
    const std::size_t il = logits.id;
    return logits.tape->record(Tensor::scalar(loss), {logits},
                               [il, probs = std::move(probs), lab = std::move(lab), n, k](Tape& t, std::size_t self) {
                                   const double g = t.incoming(self)[0] / static_cast<double>(n);
                                   Tensor& gl = t.grad_buffer(il);
                                   for (std::size_t i = 0; i < n; ++i)
                                       for (std::size_t j = 0; j < k; ++j) {
                                           const double onehot = static_cast<std::size_t>(lab[i]) == j ? 1.0 : 0.0;
                                           gl(i, j) += g * (probs(i, j) - onehot);
                                       }
                               });
}

Var gradient_reversal(Var x, double lambda) {
    if (lambda < 0.0) throw InvalidInput("gradient_reversal: lambda must be >= 0");
    return unary(x, [](double v) { return v; }, [lambda](double, double) { return -lambda; });
}

Var detach(Var x) { return x.tape->constant(x.value()); }

Var conv2d(Var x, Var w, Var b) {
    require_rank(x, 4, "conv2d(x)");
    require_rank(w, 4, "conv2d(w)");
    const std::size_t n = x.shape()[0], ci = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
    const std::size_t co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    if (w.shape()[1] != ci) throw InvalidInput("conv2d: input channels differ from kernel");
    if (kh > h || kw > wd) throw InvalidInput("conv2d: kernel larger than input");
    require_vector(b, co, "conv2d(b)");
    const std::size_t oh = h - kh + 1, ow = wd - kw + 1;
    Tensor y(Shape{n, co, oh, ow});
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    auto xi = [=](std::size_t a, std::size_t c, std::size_t r, std::size_t s) { return ((a * ci + c) * h + r) * wd + s; };
    auto wi = [=](std::size_t o, std::size_t c, std::size_t r, std::size_t s) { return ((o * ci + c) * kh + r) * kw + s; };
    auto yi = [=](std::size_t a, std::size_t o, std::size_t r, std::size_t s) { return ((a * co + o) * oh + r) * ow + s; };
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t o = 0; o < co; ++o)
            for (std::size_t r = 0; r < oh; ++r)
                for (std::size_t s = 0; s < ow; ++s) {
                    double acc = b.value()[o];
                    for (std::size_t c = 0; c < ci; ++c)
                        for (std::size_t p = 0; p < kh; ++p)
                            for (std::size_t q = 0; q < kw; ++q) acc += xv[xi(a, c, r + p, s + q)] * wv[wi(o, c, p, q)];
                    y[yi(a, o, r, s)] = acc;
                }
    const std::size_t ix = x.id, iw = w.id, ib = b.id;
    return x.tape->record(std::move(y), {x, w, b}, [=](Tape& t, std::size_t self) {
        const Tensor& g = t.incoming(self);
        const Tensor& xv2 = t.value(ix);
        const Tensor& wv2 = t.value(iw);
        Tensor* gx = t.requires_grad(ix) ? &t.grad_buffer(ix) : nullptr;
        Tensor* gw = t.requires_grad(iw) ? &t.grad_buffer(iw) : nullptr;
        Tensor* gb = t.requires_grad(ib) ? &t.grad_buffer(ib) : nullptr;
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t o = 0; o < co; ++o)
                for (std::size_t r = 0; r < oh; ++r)
                    for (std::size_t s = 0; s < ow; ++s) {
                        const double go = g[yi(a, o, r, s)];
                        if (gb) (*gb)[o] += go;
                        for (std::size_t c = 0; c < ci; ++c)
                            for (std::size_t p = 0; p < kh; ++p)
                                for (std::size_t q = 0; q < kw; ++q) {
                                    if (gx) (*gx)[xi(a, c, r + p, s + q)] += go * wv2[wi(o, c, p, q)];
                                    if (gw) (*gw)[wi(o, c, p, q)] += go * xv2[xi(a, c, r + p, s + q)];
                                }
                    }
    });
}

}  // namespace rnlab::ops
