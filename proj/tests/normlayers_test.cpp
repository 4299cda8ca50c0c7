#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "rnlab/gradcheck.hpp"
#include "rnlab/normlayers.hpp"
#include "rnlab/numerics.hpp"
#include "rnlab/ops.hpp"
#include "test_support.hpp"

namespace rnlab {
namespace {

using testing::randn;
using testing::uniform;

DomainStats random_stats(std::size_t c, Rng& rng) {
    return {randn({c}, rng, 0.0, 2.0), uniform({c}, rng, 0.05, 4.0)};
}

// Direct row-softmax compensation for the squared-distance measure.
Tensor oracle_compensation(const Tensor& own, const Tensor& other) {
    const std::size_t c = own.size();
    Tensor out(Shape{c});
    for (std::size_t i = 0; i < c; ++i) {
        double best = -INFINITY;
        for (std::size_t j = 0; j < c; ++j) best = std::max(best, -(own[i] - other[j]) * (own[i] - other[j]));
        double z = 0.0, acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double w = std::exp(-(own[i] - other[j]) * (own[i] - other[j]) - best);
            z += w;
            acc += w * other[j];
        }
        out[i] = acc / z;
    }
    return out;
}

Tensor run_eval(const Normalizer& n, const Tensor& x, Domain d) {
    Tape t;
    return n.forward_eval(t.constant(x), d).value();
}

std::pair<Tensor, Tensor> run_train(Normalizer& n, const Tensor& xs, const Tensor& xt, LayerTrace* trace = nullptr) {
    Tape t;
    auto [ys, yt] = n.forward_train(t.constant(xs), t.constant(xt), trace);
    return {ys.value(), yt.value()};
}

void randomize_affine(DualDomainNorm& n, Rng& rng) {
    n.gamma().value = uniform({n.channels()}, rng, 0.5, 2.0);
    n.beta().value = randn({n.channels()}, rng);
}

TEST(Compensation, RowsSumToOneForEveryMeasure) {
    Rng rng(1);
    for (Measure m : {Measure::NegL2, Measure::NegL1, Measure::NegCosine})
        for (int trial = 0; trial < 50; ++trial) {
            const std::size_t c = 1 + rng() % 24;
            const CorrelationReport r = rc_compensate(random_stats(c, rng), random_stats(c, rng), m, 512);
            for (const Tensor* rho : {&r.rho_mu_ts, &r.rho_var_ts, &r.rho_mu_st, &r.rho_var_st})
                for (std::size_t i = 0; i < c; ++i) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        EXPECT_GE((*rho)(i, j), 0.0);
                        s += (*rho)(i, j);
                    }
                    EXPECT_NEAR(s, 1.0, 1e-12);
                }
        }
}

TEST(Compensation, MatchesDirectSoftmaxScan) {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t c = 1 + rng() % 16;
        const DomainStats s = random_stats(c, rng), t = random_stats(c, rng);
        const CorrelationReport r = rc_compensate(s, t, Measure::NegL2, 512);
        EXPECT_LE(max_abs_diff(r.cc_t.mu, oracle_compensation(t.mu, s.mu)), 1e-12);
        EXPECT_LE(max_abs_diff(r.cc_t.var, oracle_compensation(t.var, s.var)), 1e-12);
        EXPECT_LE(max_abs_diff(r.cc_s.mu, oracle_compensation(s.mu, t.mu)), 1e-12);
        EXPECT_LE(max_abs_diff(r.cc_s.var, oracle_compensation(s.var, t.var)), 1e-12);
    }
}

TEST(Compensation, WorkedExample) {
    // Two channels whose means are exchanged between domains.
    const DomainStats s{Tensor::vector({0.0, 3.0}), Tensor::vector({1.0, 1.0})};
    const DomainStats t{Tensor::vector({3.0, 0.0}), Tensor::vector({1.0, 1.0})};
    const CorrelationReport r = rc_compensate(s, t, Measure::NegL2, 512);
    const double w = 1.0 / (1.0 + std::exp(-9.0));
    EXPECT_NEAR(r.rho_mu_ts(0, 1), w, 1e-15);
    EXPECT_NEAR(r.cc_t.mu[0], 3.0 * w, 1e-12);
    EXPECT_NEAR(r.cc_t.mu[1], 3.0 * (1.0 - w), 1e-12);
    EXPECT_NEAR(r.cc_t.var[0], 1.0, 1e-15);
}

TEST(Compensation, GroupSizeAtLeastChannelsIsUngrouped) {
    Rng rng(3);
    const DomainStats s = random_stats(12, rng), t = random_stats(12, rng);
    const CorrelationReport a = rc_compensate(s, t, Measure::NegL2, 12);
    const CorrelationReport b = rc_compensate(s, t, Measure::NegL2, 4096);
    EXPECT_EQ(a.cc_s.mu, b.cc_s.mu);
    EXPECT_EQ(a.cc_t.var, b.cc_t.var);
    EXPECT_EQ(a.rho_mu_ts, b.rho_mu_ts);
}

TEST(Compensation, GroupsAreIndependentBlocks) {
    Rng rng(4);
    const DomainStats s = random_stats(10, rng), t = random_stats(10, rng);
    const CorrelationReport r = rc_compensate(s, t, Measure::NegL2, 4);
    // Blocks [0,4), [4,8), [8,10): no weight leaves a block.
    for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = 0; j < 10; ++j)
            if (i / 4 != j / 4) {
                EXPECT_EQ(r.rho_mu_ts(i, j), 0.0);
            }
    const DomainStats s_tail{Tensor::vector({s.mu[8], s.mu[9]}), Tensor::vector({s.var[8], s.var[9]})};
    const DomainStats t_tail{Tensor::vector({t.mu[8], t.mu[9]}), Tensor::vector({t.var[8], t.var[9]})};
    const CorrelationReport tail = rc_compensate(s_tail, t_tail, Measure::NegL2, 512);
    EXPECT_NEAR(r.cc_t.mu[9], tail.cc_t.mu[1], 1e-15);
}

TEST(Aggregation, ConvexCombination) {
    const DomainStats z{Tensor::vector({1.0, 2.0}), Tensor::vector({4.0, 1.0})};
    const DomainStats a = ra_aggregate(z, Tensor::vector({3.0, 0.0}), Tensor::vector({2.0, 3.0}),
                                       Tensor::vector({0.5, 1.0}), Tensor::vector({0.75, 0.5}));
    EXPECT_DOUBLE_EQ(a.mu[0], 2.0);
    EXPECT_DOUBLE_EQ(a.mu[1], 2.0);
    EXPECT_DOUBLE_EQ(a.var[0], 3.5);
    EXPECT_DOUBLE_EQ(a.var[1], 2.0);
}

TEST(Ema, ClosedFormAfterManySteps) {
    Rng rng(5);
    for (double alpha : {0.1, 0.37, 1.0}) {
        const DomainStats r0 = random_stats(6, rng), batch = random_stats(6, rng);
        DomainStats r = r0;
        for (int t = 1; t <= 40; ++t) {
            r = ema_update(r, batch, alpha);
            const double keep = std::pow(1.0 - alpha, t);
            for (std::size_t c = 0; c < 6; ++c) {
                EXPECT_NEAR(r.mu[c], r0.mu[c] * keep + batch.mu[c] * (1.0 - keep), 1e-9);
                EXPECT_NEAR(r.var[c], r0.var[c] * keep + batch.var[c] * (1.0 - keep), 1e-9);
            }
        }
    }
}

TEST(Ema, RejectsAlphaOutsideUnitInterval) {
    const DomainStats s = DomainStats::defaults(2);
    EXPECT_THROW(ema_update(s, s, 0.0), InvalidInput);
    EXPECT_THROW(ema_update(s, s, 1.5), InvalidInput);
    NormOptions o;
    o.alpha = 0.0;
    EXPECT_THROW(make_normalizer(NormKind::RN, 3, o), InvalidInput);
}

TEST(ReciprocalNorm, UnitGatesEqualSeparateStandardization) {
    Rng rng(6);
    for (std::size_t c : {1u, 3u, 9u}) {
        NormOptions o;
        o.fixed_gate = 1.0;
        ReciprocalNorm rn(c, o);
        auto shared = make_normalizer(NormKind::DSBNShared, c, {});
        randomize_affine(rn, rng);
        auto& ds = static_cast<DualDomainNorm&>(*shared);
        ds.gamma().value = rn.gamma().value;
        ds.beta().value = rn.beta().value;
        const Tensor xs = randn({8, c}, rng), xt = randn({8, c}, rng, 1.0, 3.0);
        auto [a_s, a_t] = run_train(rn, xs, xt);
        auto [b_s, b_t] = run_train(*shared, xs, xt);
        EXPECT_LE(max_abs_diff(a_s, b_s), 1e-9);
        EXPECT_LE(max_abs_diff(a_t, b_t), 1e-9);

        // and against a hand standardization
        auto [mu_t, var_t] = channel_moments(xt);
        for (std::size_t n = 0; n < 8; ++n)
            for (std::size_t k = 0; k < c; ++k) {
                const double h = (xt(n, k) - mu_t[k]) / std::sqrt(var_t[k] + 1e-5) * rn.gamma().value[k] +
                                 rn.beta().value[k];
                EXPECT_NEAR(a_t(n, k), h, 1e-9);
            }
    }
}

TEST(ReciprocalNorm, SingleChannelClosedForm) {
    Rng rng(7);
    for (double g : {0.5, 0.6, 0.9, 1.0}) {
        NormOptions o;
        o.fixed_gate = g;
        ReciprocalNorm rn(1, o);
        const Tensor xs = randn({6, 1}, rng, -1.0, 1.0), xt = randn({6, 1}, rng, 2.0, 0.5);
        LayerTrace trace;
        run_train(rn, xs, xt, &trace);
        double ms = 0, mt = 0, vs = 0, vt = 0;
        for (std::size_t n = 0; n < 6; ++n) ms += xs[n] / 6.0, mt += xt[n] / 6.0;
        for (std::size_t n = 0; n < 6; ++n) vs += (xs[n] - ms) * (xs[n] - ms) / 6.0, vt += (xt[n] - mt) * (xt[n] - mt) / 6.0;
        ASSERT_TRUE(trace.report);
        EXPECT_NEAR(trace.report->agg_t.mu[0], g * mt + (1 - g) * ms, 1e-12);
        EXPECT_NEAR(trace.report->agg_s.mu[0], g * ms + (1 - g) * mt, 1e-12);
        EXPECT_NEAR(trace.report->agg_t.var[0], g * vt + (1 - g) * vs, 1e-12);
        EXPECT_NEAR(trace.report->agg_s.var[0], g * vs + (1 - g) * vt, 1e-12);
    }
}

TEST(ReciprocalNorm, GroupingAtLeastChannelsIsBitwiseUngrouped) {
    Rng rng(8);
    const Tensor xs = randn({5, 7}, rng), xt = randn({5, 7}, rng, 0.4, 2.0);
    NormOptions a, b;
    a.group_size = 7;
    b.group_size = 512;
    ReciprocalNorm ra(7, a), rb(7, b);
    const GateParams g{uniform({7}, rng, 0.5, 1.0), uniform({7}, rng, 0.5, 1.0), uniform({7}, rng, 0.5, 1.0),
                       uniform({7}, rng, 0.5, 1.0)};
    ra.set_gates(g);
    rb.set_gates(g);
    EXPECT_EQ(run_train(ra, xs, xt), run_train(rb, xs, xt));
}

TEST(ReciprocalNorm, GatesStartAtOneWithinBounds) {
    ReciprocalNorm rn(3, {});
    for (std::size_t i = 0; i < 4; ++i) {
        const Parameter& p = rn.gate(i);
        ASSERT_TRUE(p.bounds);
        EXPECT_EQ(p.bounds->lo, 0.5);
        EXPECT_EQ(p.bounds->hi, 1.0);
        for (double v : p.value.values()) EXPECT_EQ(v, 1.0);
    }
    NormOptions fixed;
    fixed.fixed_gate = 0.75;
    ReciprocalNorm frozen(3, fixed);
    EXPECT_FALSE(frozen.gate(0).trainable);
    fixed.fixed_gate = 0.4;
    EXPECT_THROW(ReciprocalNorm(3, fixed), InvalidInput);
}

TEST(ReciprocalNorm, DomainSwapSymmetry) {
    Rng rng(9);
    ReciprocalNorm a(5, {}), b(5, {});
    const Tensor g = uniform({5}, rng, 0.5, 1.0), h = uniform({5}, rng, 0.5, 1.0);
    a.set_gates({g, h, g, h});
    b.set_gates({g, h, g, h});
    const Tensor xs = randn({6, 5}, rng), xt = randn({6, 5}, rng, 1.0, 2.0);
    auto [as, at] = run_train(a, xs, xt);
    auto [bs, bt] = run_train(b, xt, xs);
    EXPECT_LE(max_abs_diff(as, bt), 1e-12);
    EXPECT_LE(max_abs_diff(at, bs), 1e-12);
}

TEST(ReciprocalNorm, EvalWithAlphaOneReproducesLastStep) {
    Rng rng(10);
    NormOptions o;
    o.alpha = 1.0;
    ReciprocalNorm rn(4, o);
    rn.set_gates({uniform({4}, rng, 0.5, 1.0), uniform({4}, rng, 0.5, 1.0), uniform({4}, rng, 0.5, 1.0),
                  uniform({4}, rng, 0.5, 1.0)});
    const Tensor xs = randn({9, 4}, rng), xt = randn({9, 4}, rng, -1.0, 0.5);
    LayerTrace trace;
    auto [ys, yt] = run_train(rn, xs, xt, &trace);
    EXPECT_LE(max_abs_diff(rn.running(Domain::Target).mu, trace.report->agg_t.mu), 1e-9);
    EXPECT_LE(max_abs_diff(rn.running(Domain::Source).var, trace.report->agg_s.var), 1e-9);
    EXPECT_LE(max_abs_diff(run_eval(rn, xt, Domain::Target), yt), 1e-9);
    EXPECT_LE(max_abs_diff(run_eval(rn, xs, Domain::Source), ys), 1e-9);
}

TEST(ReciprocalNorm, ReportHasConsistentShapes) {
    Rng rng(11);
    ReciprocalNorm rn(6, {});
    LayerTrace trace;
    run_train(rn, randn({4, 6, 2, 2}, rng), randn({4, 6, 2, 2}, rng), &trace);
    ASSERT_TRUE(trace.report);
    EXPECT_EQ(trace.report->rho_var_st.shape(), (Shape{6, 6}));
    EXPECT_EQ(trace.report->gates.g_var_t.size(), 6u);
    const CorrelationReport back = report_from_json(report_to_json(*trace.report));
    EXPECT_EQ(back.rho_mu_ts, trace.report->rho_mu_ts);
    EXPECT_EQ(back.agg_t.var, trace.report->agg_t.var);
}

TEST(ReciprocalNorm, WithoutReciprocityUsesCorrespondingChannel) {
    Rng rng(12);
    NormOptions o;
    o.reciprocal = false;
    ReciprocalNorm rn(3, o);
    rn.set_gates(GateParams::filled(3, 0.5));
    LayerTrace trace;
    const Tensor xs = randn({5, 3}, rng), xt = randn({5, 3}, rng, 2.0, 1.0);
    run_train(rn, xs, xt, &trace);
    auto [mu_s, var_s] = channel_moments(xs);
    auto [mu_t, var_t] = channel_moments(xt);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(trace.report->agg_t.mu[c], 0.5 * (mu_s[c] + mu_t[c]), 1e-12);
}

TEST(BatchNorm, TrainOutputIsStandardizedOverBothDomains) {
    Rng rng(13);
    BatchNorm bn(3, {});
    const Tensor xs = randn({10, 3}, rng, 2.0, 1.0), xt = randn({6, 3}, rng, -1.0, 3.0);
    auto [ys, yt] = run_train(bn, xs, xt);
    for (std::size_t c = 0; c < 3; ++c) {
        double m = 0, q = 0;
        for (std::size_t n = 0; n < 10; ++n) m += ys(n, c);
        for (std::size_t n = 0; n < 6; ++n) m += yt(n, c);
        m /= 16.0;
        for (std::size_t n = 0; n < 10; ++n) q += (ys(n, c) - m) * (ys(n, c) - m);
        for (std::size_t n = 0; n < 6; ++n) q += (yt(n, c) - m) * (yt(n, c) - m);
        EXPECT_NEAR(m, 0.0, 1e-12);
        EXPECT_NEAR(q / 16.0, 1.0, 1e-4);
    }
}

TEST(AdaBN, TargetEvalUsesTargetStatistics) {
    Rng rng(14);
    NormOptions o;
    o.alpha = 1.0;
    auto ada = make_normalizer(NormKind::AdaBN, 2, o);
    const Tensor xs = randn({12, 2}, rng, 5.0, 1.0), xt = randn({12, 2}, rng, -5.0, 2.0);
    run_train(*ada, xs, xt);
    auto [mu_t, var_t] = channel_moments(xt);
    EXPECT_LE(max_abs_diff(ada->running(Domain::Target).mu, mu_t), 1e-12);
    const Tensor y = run_eval(*ada, xt, Domain::Target);
    auto [m, v] = channel_moments(y);
    EXPECT_NEAR(m[0], 0.0, 1e-12);
    EXPECT_NEAR(v[1], 1.0, 1e-4);
}

TEST(AutoDial, MixOfOneIsDomainSpecific) {
    Rng rng(15);
    AutoDial ad(3, {});
    auto ds = make_normalizer(NormKind::DSBNShared, 3, {});
    ad.mix().value.fill(1.0);
    const Tensor xs = randn({7, 3}, rng), xt = randn({7, 3}, rng, 3.0, 2.0);
    auto [as, at] = run_train(ad, xs, xt);
    auto [bs, bt] = run_train(*ds, xs, xt);
    EXPECT_LE(max_abs_diff(as, bs), 1e-12);
    EXPECT_LE(max_abs_diff(at, bt), 1e-12);
}

TEST(DomainSpecificBN, SeparateAffineHasOwnParameters) {
    auto dsbn = make_normalizer(NormKind::DSBN, 4, {});
    auto shared = make_normalizer(NormKind::DSBNShared, 4, {});
    EXPECT_EQ(dsbn->parameters().size(), 4u);
    EXPECT_EQ(shared->parameters().size(), 2u);
}

TEST(TransferNorm, AttentionAveragesToOne) {
    Rng rng(16);
    const Tensor a = TransferNorm::attention(random_stats(9, rng), random_stats(9, rng), 1e-5);
    double s = 0.0;
    for (double v : a.values()) s += v;
    EXPECT_NEAR(s, 9.0, 1e-12);
    const DomainStats same = random_stats(4, rng);
    const Tensor uniform_attention = TransferNorm::attention(same, same, 1e-5);
    for (double v : uniform_attention.values()) EXPECT_NEAR(v, 1.0, 1e-15);
}

TEST(TransferNorm, StatisticsReceiveNoGradientThroughAttention) {
    GradCheckOptions o;
    o.kind = NormKind::TN;
    o.channels = 5;
    o.batch = 6;
    const GradCheckReport r = check_layer_gradients(o);
    EXPECT_EQ(r.attention_stat_grad, 0.0);
    EXPECT_TRUE(r.passed);
}

struct GradCase {
    NormKind kind;
    std::size_t channels, batch, spatial;
    Measure measure = Measure::NegL2;
};

class LayerGradients : public ::testing::TestWithParam<GradCase> {};

TEST_P(LayerGradients, AnalyticMatchesFiniteDifferences) {
    const GradCase g = GetParam();
    GradCheckOptions o;
    o.kind = g.kind;
    o.channels = g.channels;
    o.batch = g.batch;
    o.spatial = g.spatial;
    o.norm.measure = g.measure;
    o.seed = 3;
    const GradCheckReport r = check_layer_gradients(o);
    for (const auto& e : r.entries) EXPECT_LE(e.worst.error, 1e-4) << e.name << "[" << e.worst.index << "]";
    EXPECT_TRUE(r.passed);
}

INSTANTIATE_TEST_SUITE_P(
    Layers, LayerGradients,
    ::testing::Values(GradCase{NormKind::RN, 3, 4, 2}, GradCase{NormKind::RN, 4, 5, 1, Measure::NegL1},
                      GradCase{NormKind::RN, 4, 5, 1, Measure::NegCosine}, GradCase{NormKind::AdaBN, 3, 4, 1},
                      GradCase{NormKind::DSBNShared, 2, 3, 2}, GradCase{NormKind::TN, 3, 4, 2},
                      GradCase{NormKind::AutoDIAL, 3, 4, 2}));

TEST(Normalizer, JsonRoundTripPreservesEval) {
    Rng rng(17);
    for (NormKind k : {NormKind::BN, NormKind::AdaBN, NormKind::AutoDIAL, NormKind::DSBN, NormKind::DSBNShared,
                       NormKind::TN, NormKind::RN}) {
        auto n = make_normalizer(k, 3, {});
        for (Parameter* p : n->parameters())
            p->value = p->bounds ? uniform(p->value.shape(), rng, 0.5, 1.0) : randn(p->value.shape(), rng);
        run_train(*n, randn({6, 3}, rng), randn({6, 3}, rng, 1.0, 2.0));
        auto back = normalizer_from_json(n->to_json());
        EXPECT_EQ(back->kind(), k);
        const Tensor x = randn({4, 3}, rng);
        EXPECT_EQ(run_eval(*n, x, Domain::Target), run_eval(*back, x, Domain::Target)) << to_string(k);
        EXPECT_EQ(run_eval(*n, x, Domain::Source), run_eval(*back, x, Domain::Source)) << to_string(k);
    }
}

TEST(Normalizer, RejectsMismatchedInputs) {
    auto rn = make_normalizer(NormKind::RN, 3, {});
    Tape t;
    EXPECT_THROW(rn->forward_train(t.constant(Tensor({4, 2})), t.constant(Tensor({4, 3}))), InvalidInput);
    EXPECT_THROW(rn->forward_eval(t.constant(Tensor({4, 2})), Domain::Source), InvalidInput);
    EXPECT_THROW(parse_norm_kind("layernorm"), InvalidInput);
}

TEST(Normalizer, FrozenRunningStatsStayPut) {
    Rng rng(18);
    auto rn = make_normalizer(NormKind::RN, 2, {});
    rn->set_freeze_running(true);
    run_train(*rn, randn({5, 2}, rng, 3.0, 1.0), randn({5, 2}, rng));
    EXPECT_EQ(rn->running(Domain::Source).mu, Tensor(Shape{2}));
    EXPECT_EQ(rn->running(Domain::Target).var, Tensor(Shape{2}, 1.0));
}

}  // namespace
}  // namespace rnlab
