#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "rnlab/models.hpp"
#include "rnlab/ops.hpp"
#include "test_support.hpp"

namespace rnlab {
namespace {

using testing::randn;

MlpSpec spec_of(std::vector<std::size_t> widths, NormKind norm) {
    MlpSpec s;
    s.widths = std::move(widths);
    s.norm = norm;
    return s;
}

TEST(Mlp, ZeroWeightsGiveZeroLogits) {
    Mlp m(spec_of({5, 8, 4}, NormKind::RN), 1);
    for (Parameter* p : m.parameters())
        if (p->name == "weight" || p->name == "bias") p->value.fill(0.0);
    Rng rng(2);
    Tape t;
    const Tensor logits = m.forward_eval(t.constant(randn({3, 5}, rng)), Domain::Target).logits.value();
    for (double v : logits.values()) EXPECT_EQ(v, 0.0);
}

TEST(Mlp, HandComputedAffineMap) {
    Mlp m(spec_of({2, 2, 2}, NormKind::None), 0);
    auto ps = m.parameters();
    ps[0]->value = Tensor::matrix(2, 2, {1, 0, 0, 1});
    ps[1]->value = Tensor::vector({1, 1});
    ps[2]->value = Tensor::matrix(2, 2, {2, 1, 0, 3});
    ps[3]->value = Tensor::vector({0.5, -0.5});
    Tape t;
    const Tensor y = m.forward_eval(t.constant(Tensor::matrix(2, 2, {1, 2, -3, 0})), Domain::Source).logits.value();
    // hidden = relu(x + 1) = {2, 3} and {0, 1}
    EXPECT_DOUBLE_EQ(y(0, 0), 4.5);
    EXPECT_DOUBLE_EQ(y(0, 1), 10.5);
    EXPECT_DOUBLE_EQ(y(1, 0), 0.5);
    EXPECT_DOUBLE_EQ(y(1, 1), 2.5);
}

TEST(Mlp, EvalDoesNotMutate) {
    Rng rng(3);
    Mlp m(spec_of({4, 6, 6, 3}, NormKind::RN), 4);
    {
        Tape t;
        m.forward_train(t.constant(randn({8, 4}, rng)), t.constant(randn({8, 4}, rng, 1.0, 2.0)));
    }
    const std::string before = m.to_json().dump();
    const Tensor x = randn({5, 4}, rng);
    Tape t;
    const Tensor a = m.forward_eval(t.constant(x), Domain::Target).logits.value();
    const Tensor b = m.forward_eval(t.constant(x), Domain::Target).logits.value();
    EXPECT_EQ(a, b);
    EXPECT_EQ(m.to_json().dump(), before);
}

TEST(Mlp, TrainUpdatesRunningStatistics) {
    Rng rng(5);
    Mlp m(spec_of({3, 4, 2}, NormKind::DSBNShared), 6);
    const DomainStats before = m.normalizers()[0]->running(Domain::Target);
    Tape t;
    m.forward_train(t.constant(randn({8, 3}, rng)), t.constant(randn({8, 3}, rng, 2.0, 1.0)));
    EXPECT_NE(m.normalizers()[0]->running(Domain::Target).mu, before.mu);
}

TEST(Mlp, SameSeedSameInitialization) {
    const auto a = Mlp(spec_of({4, 5, 3}, NormKind::RN), 9).to_json().dump();
    const auto b = Mlp(spec_of({4, 5, 3}, NormKind::RN), 9).to_json().dump();
    const auto c = Mlp(spec_of({4, 5, 3}, NormKind::RN), 10).to_json().dump();
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
}

TEST(Mlp, CopyIsDeep) {
    Mlp a(spec_of({2, 3, 2}, NormKind::RN), 1);
    Mlp b = a;
    b.parameters()[0]->value.fill(7.0);
    EXPECT_NE(a.parameters()[0]->value, b.parameters()[0]->value);
}

TEST(Mlp, JsonRoundTrip) {
    Rng rng(7);
    Mlp m(spec_of({3, 5, 4, 2}, NormKind::TN), 8);
    {
        Tape t;
        m.forward_train(t.constant(randn({6, 3}, rng)), t.constant(randn({6, 3}, rng)));
    }
    const Mlp back = Mlp::from_json(m.to_json());
    const Tensor x = randn({4, 3}, rng);
    Tape t;
    const Tensor a = m.forward_eval(t.constant(x), Domain::Target).logits.value();
    const Tensor b = back.forward_eval(t.constant(x), Domain::Target).logits.value();
    EXPECT_EQ(a, b);
}

TEST(Mlp, RejectsBadShapes) {
    EXPECT_THROW(Mlp(spec_of({3, 2}, NormKind::None), 0), InvalidInput);
    Mlp m(spec_of({3, 4, 2}, NormKind::None), 0);
    Tape t;
    EXPECT_THROW(m.forward_eval(t.constant(Tensor({2, 5})), Domain::Source), InvalidInput);
}

TEST(Mlp, ConvolutionalFeaturesFeedSpatialNormalizer) {
    Rng rng(8);
    Conv2d conv(2, 3, 3, rng);
    auto rn = make_normalizer(NormKind::RN, 3, {});
    Tape t;
    Var fs = conv.forward(t.constant(randn({2, 2, 5, 5}, rng)));
    Var ft = conv.forward(t.constant(randn({2, 2, 5, 5}, rng)));
    EXPECT_EQ(fs.shape(), (Shape{2, 3, 3, 3}));
    auto [ys, yt] = rn->forward_train(fs, ft);
    t.backward(ops::add(ops::sum(ops::square(ys)), ops::sum(yt)));
    EXPECT_TRUE(conv.weight.grad.all_finite());
}

TEST(GradientReversal, DomainLossGradientIsNegatedAndScaled) {
    Rng rng(9);
    Discriminator d({4, 6}, 3);
    const Tensor f = randn({6, 4}, rng);
    const std::vector<int> dom{0, 0, 0, 1, 1, 1};
    auto grad_for = [&](double lambda, bool reverse) {
        Tape t;
        Var x = t.variable(f);
        Var in = reverse ? ops::gradient_reversal(x, lambda) : x;
        for (Parameter* p : d.parameters()) p->zero_grad();
        t.backward(ops::cross_entropy(d.forward(in), dom));
        return t.grad(x);
    };
    const Tensor plain = grad_for(1.0, false);
    const Tensor flipped = grad_for(0.3, true);
    for (std::size_t i = 0; i < plain.size(); ++i) EXPECT_DOUBLE_EQ(flipped[i], -0.3 * plain[i]);
    const Tensor none = grad_for(0.0, true);
    for (double v : none.values()) EXPECT_EQ(v, 0.0);
}

TEST(GradientReversal, DiscriminatorItselfDescends) {
    Rng rng(10);
    Discriminator d({2, 4}, 1);
    const Tensor f = randn({4, 2}, rng);
    Tape t;
    for (Parameter* p : d.parameters()) p->zero_grad();
    t.backward(ops::cross_entropy(d.forward(ops::gradient_reversal(t.variable(f), 1.0)), std::vector<int>{0, 1, 0, 1}));
    Discriminator ref({2, 4}, 1);
    Tape u;
    for (Parameter* p : ref.parameters()) p->zero_grad();
    u.backward(ops::cross_entropy(ref.forward(u.variable(f)), std::vector<int>{0, 1, 0, 1}));
    EXPECT_EQ(d.parameters()[0]->grad, ref.parameters()[0]->grad);
}

TEST(AnnealedLambda, Endpoints) {
    EXPECT_DOUBLE_EQ(annealed_lambda(0.0), 0.0);
    EXPECT_NEAR(annealed_lambda(1.0), 2.0 / (1.0 + std::exp(-10.0)) - 1.0, 1e-15);
    EXPECT_LT(annealed_lambda(0.1), annealed_lambda(0.2));
}

}  // namespace
}  // namespace rnlab
