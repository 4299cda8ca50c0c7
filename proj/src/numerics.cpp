#include "rnlab/numerics.hpp"

#include <algorithm>
#include <cmath>

#include "rnlab/ops.hpp"
#include "rnlab/tape.hpp"

namespace rnlab {

std::pair<Tensor, Tensor> channel_moments(const Tensor& x) {
    Tape tape;
    auto m = ops::channel_moments(tape.constant(x));
    return {m.mu.value(), m.var.value()};
}

Tensor softmax_rows(const Tensor& m) {
    Tape tape;
    return ops::softmax_rows(tape.constant(m)).value();
}

Tensor matvec(const Tensor& m, const Tensor& v) {
    Tape tape;
    return ops::matvec(tape.constant(m), tape.constant(v)).value();
}

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h) {
    if (!(h > 0.0)) throw InvalidInput("finite_diff_grad: step must be positive");
    Tensor grad(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = f(probe);
        probe[i] = orig - h;
        const double fm = f(probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

GradDiscrepancy compare_gradients(const Tensor& analytic, const Tensor& numeric, double floor) {
    require_same_shape(analytic, numeric, "compare_gradients");
    GradDiscrepancy worst;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic[i], n = numeric[i];
        const double denom = std::max({std::abs(a), std::abs(n), floor});
        const double err = std::abs(a - n) / denom;
        if (i == 0 || err > worst.error || std::isnan(err)) worst = {err, i, a, n};
    }
    return worst;
}

}  // namespace rnlab
