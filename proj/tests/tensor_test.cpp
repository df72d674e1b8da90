// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "xsgs/adam.hpp"
#include "xsgs/nn.hpp"
#include "xsgs/tensor.hpp"

namespace t = xsgs::tensor;
using t::Tensor;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0,
                     bool grad = false) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, scale);
    std::vector<double> v(r * c);
    for (auto& x : v) x = nd(rng);
    return Tensor::from(r, c, v, grad);
}

// Plain triple loop, independent of the Eigen path.
std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
    std::vector<double> out(a.rows() * b.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j)
            for (std::size_t k = 0; k < a.cols(); ++k) out[i * b.cols() + j] += a.at(i, k) * b.at(k, j);
    return out;
}

constexpr double kGradTol = 1e-5;

}  // namespace

TEST(Tensor, MatmulMatchesNaiveLoop) {
    const Tensor a = random_tensor(7, 5, 1), b = random_tensor(5, 9, 2);
    const auto want = naive_matmul(a, b);
    const Tensor c = t::matmul(a, b);
    ASSERT_EQ(c.rows(), 7u);
    ASSERT_EQ(c.cols(), 9u);
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(c.data()[i], want[i], 1e-12);
}

TEST(Tensor, ShapeMismatchThrowsDimensionError) {
    EXPECT_THROW(t::matmul(Tensor::zeros(2, 3), Tensor::zeros(2, 3)), xsgs::DimensionError);
    EXPECT_THROW(t::add(Tensor::zeros(2, 3), Tensor::zeros(3, 2)), xsgs::DimensionError);
    EXPECT_THROW(t::mse(Tensor::zeros(1, 3), Tensor::zeros(1, 4)), xsgs::DimensionError);
}

TEST(Tensor, SoftmaxNormalizesBothAxes) {
    const Tensor a = random_tensor(6, 11, 3, 30.0);
    const Tensor r = t::softmax_axis(a, t::Axis::row);
    for (std::size_t i = 0; i < 6; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 11; ++j) s += r.at(i, j);
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
    const Tensor c = t::softmax_axis(a, t::Axis::column);
    for (std::size_t j = 0; j < 11; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < 6; ++i) s += c.at(i, j);
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
}

TEST(Tensor, SoftmaxSurvivesHugeLogits) {
    const Tensor a = Tensor::from(1, 3, {1000.0, 1000.0, -1000.0});
    const Tensor r = t::softmax_axis(a, t::Axis::row);
    EXPECT_NEAR(r.at(0, 0), 0.5, 1e-12);
    EXPECT_NEAR(r.at(0, 2), 0.0, 1e-12);
}

TEST(Tensor, EfficientAttentionAssociativity) {
    const Tensor q = random_tensor(40, 8, 4), k = random_tensor(25, 8, 5), v = random_tensor(25, 6, 6);
    const Tensor sq = t::softmax_axis(q, t::Axis::row);
    const Tensor sk = t::softmax_axis(k, t::Axis::column);
    const Tensor left = t::matmul(sq, t::matmul(t::transpose(sk), v));
    const Tensor right = t::matmul(t::matmul(sq, t::transpose(sk)), v);
    for (std::size_t i = 0; i < left.size(); ++i) EXPECT_NEAR(left.data()[i], right.data()[i], 1e-9);
}

TEST(Tensor, BceWithLogitsMatchesDirectFormula) {
    const Tensor z = random_tensor(4, 5, 7, 3.0);
    std::vector<double> y(20);
    for (std::size_t i = 0; i < 20; ++i) y[i] = double(i % 2);
    double want = 0.0;
    for (std::size_t i = 0; i < 20; ++i) {
        const double p = 1.0 / (1.0 + std::exp(-z.data()[i]));
        want -= y[i] * std::log(p) + (1 - y[i]) * std::log(1 - p);
    }
    EXPECT_NEAR(t::bce_with_logits(z, Tensor::from(4, 5, y)).item(), want / 20.0, 1e-12);
}

TEST(Tensor, BceWithLogitsIsFiniteAtExtremes) {
    const Tensor z = Tensor::from(1, 2, {800.0, -800.0});
    const double loss = t::bce_with_logits(z, Tensor::from(1, 2, {0.0, 1.0})).item();
    EXPECT_NEAR(loss, 800.0, 1e-9);
}

TEST(Tensor, BceProbsTreatsZeroLogZeroAsZero) {
    const Tensor p = Tensor::from(1, 4, {0.0, 1.0, 0.25, 1.0});
    const Tensor y = Tensor::from(1, 4, {0.0, 1.0, 1.0, 1.0});
    EXPECT_NEAR(t::bce_probs(p, y).item(), -std::log(0.25) / 4.0, 1e-12);
}

TEST(Tensor, MseMatchesDefinition) {
    const Tensor a = random_tensor(3, 4, 8), b = random_tensor(3, 4, 9);
    double want = 0.0;
    for (std::size_t i = 0; i < 12; ++i) want += std::pow(a.data()[i] - b.data()[i], 2);
    EXPECT_NEAR(t::mse(a, b).item(), want / 12.0, 1e-14);
}

TEST(Tensor, GatherAndScatterRespectMinusOne) {
    const Tensor a = Tensor::from(3, 2, {1, 2, 3, 4, 5, 6});
    const std::vector<std::int64_t> gi = {2, -1, 0};
    const Tensor g = t::gather_rows(a, gi);
    EXPECT_EQ(std::vector<double>(g.data().begin(), g.data().end()),
              (std::vector<double>{5, 6, 0, 0, 1, 2}));
    const std::vector<std::int64_t> si = {1, -1, 1};
    const Tensor s = t::scatter_add_rows(a, si, 2);
    EXPECT_EQ(std::vector<double>(s.data().begin(), s.data().end()),
              (std::vector<double>{0, 0, 6, 8}));
}

TEST(Tensor, NoGradRecordsNoGraph) {
    Tensor w = random_tensor(3, 3, 10, 1.0, true);
    t::NoGradGuard guard;
    const Tensor y = t::sum(t::matmul(w, w));
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Tensor, LeafGradientsAccumulateAcrossBackwardCalls) {
    Tensor x = Tensor::from(1, 2, {1.0, 2.0}, true);
    const Tensor y = t::sum(t::mul(x, x));
    y.backward();
    y.backward();
    EXPECT_NEAR(x.grad()[0], 4.0, 1e-12);
    EXPECT_NEAR(x.grad()[1], 8.0, 1e-12);
    x.zero_grad();
    EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Tensor, ValidateRejectsNonFinite) {
    const Tensor a = Tensor::from(1, 2, {1.0, std::nan("")});
    EXPECT_THROW(a.validate("probe"), xsgs::ContractError);
}

TEST(Tensor, MemoryStatsTrackPeakAndLargest) {
    t::reset_peak_memory();
    const auto before = t::memory_stats();
    {
        const Tensor big = Tensor::zeros(100, 100);
        const auto during = t::memory_stats();
        EXPECT_GE(during.current_bytes, before.current_bytes + 100 * 100 * sizeof(double));
        EXPECT_GE(during.largest_bytes, 100 * 100 * sizeof(double));
    }
    const auto after = t::memory_stats();
    EXPECT_EQ(after.current_bytes, before.current_bytes);
    EXPECT_GE(after.peak_bytes, before.current_bytes + 100 * 100 * sizeof(double));
}

// ---------------------------------------------------------------------------
// Gradient checks, one per differentiable op.

struct GradCase {
    const char* name;
    std::size_t rows, cols;
    std::function<Tensor(const Tensor&)> f;
};

class GradCheck : public ::testing::TestWithParam<GradCase> {};

TEST_P(GradCheck, AnalyticMatchesCentralDifference) {
    const auto& c = GetParam();
    const Tensor theta = random_tensor(c.rows, c.cols, 100 + c.rows * 7 + c.cols, 0.7, true);
    EXPECT_LT(t::grad_check(c.f, theta), kGradTol) << c.name;
}

namespace {

const Tensor kB = random_tensor(4, 3, 11);
const Tensor kRow = random_tensor(1, 4, 12);
const Tensor kCol = random_tensor(3, 1, 13);
const Tensor kSame = random_tensor(3, 4, 14);
const Tensor kTarget = Tensor::from(3, 4, {1, 0, 1, 0, 0, 1, 1, 0, 1, 1, 0, 0});
const std::vector<std::int64_t> kGather = {2, 0, -1, 2, 1};
const std::vector<std::int64_t> kScatter = {1, -1, 0};

Tensor weighted(const Tensor& y) {
    // A fixed non-uniform weighting so every output entry matters.
    std::vector<double> w(y.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + double(i));
    return t::sum(t::mul(y, Tensor::from(y.rows(), y.cols(), w)));
}

}  // namespace

INSTANTIATE_TEST_SUITE_P(
    Ops, GradCheck,
    ::testing::Values(
        GradCase{"matmul_left", 3, 4, [](const Tensor& x) { return weighted(t::matmul(x, kB)); }},
        GradCase{"matmul_right", 4, 3, [](const Tensor& x) { return weighted(t::matmul(kSame, x)); }},
        GradCase{"transpose", 3, 4, [](const Tensor& x) { return weighted(t::transpose(x)); }},
        GradCase{"reshape", 3, 4, [](const Tensor& x) { return weighted(t::reshape(x, 2, 6)); }},
        GradCase{"concat_cols", 3, 4,
                 [](const Tensor& x) { return weighted(t::concat_cols({x, kSame, x})); }},
        GradCase{"concat_rows", 3, 4,
                 [](const Tensor& x) { return weighted(t::concat_rows({kSame, x})); }},
        GradCase{"slice_cols", 3, 4, [](const Tensor& x) { return weighted(t::slice_cols(x, 1, 3)); }},
        GradCase{"gather_rows", 3, 4, [](const Tensor& x) { return weighted(t::gather_rows(x, kGather)); }},
        GradCase{"scatter_add_rows", 3, 4,
                 [](const Tensor& x) { return weighted(t::scatter_add_rows(x, kScatter, 2)); }},
        GradCase{"add", 3, 4, [](const Tensor& x) { return weighted(t::add(x, t::mul(x, kSame))); }},
        GradCase{"sub", 3, 4, [](const Tensor& x) { return weighted(t::sub(kSame, t::mul(x, x))); }},
        GradCase{"mul", 3, 4, [](const Tensor& x) { return weighted(t::mul(x, x)); }},
        GradCase{"scale", 3, 4, [](const Tensor& x) { return weighted(t::scale(x, -2.5)); }},
        GradCase{"add_scalar", 3, 4, [](const Tensor& x) { return weighted(t::mul(t::add_scalar(x, 0.3), x)); }},
        GradCase{"add_row_lhs", 3, 4, [](const Tensor& x) { return weighted(t::mul(t::add_row(x, kRow), x)); }},
        GradCase{"add_row_rhs", 1, 4, [](const Tensor& x) { return weighted(t::mul(t::add_row(kSame, x), kSame)); }},
        GradCase{"mul_col_lhs", 3, 4, [](const Tensor& x) { return weighted(t::mul_col(x, kCol)); }},
        GradCase{"mul_col_rhs", 3, 1, [](const Tensor& x) { return weighted(t::mul_col(kSame, x)); }},
        GradCase{"mul_row_lhs", 3, 4, [](const Tensor& x) { return weighted(t::mul_row(x, kRow)); }},
        GradCase{"mul_row_rhs", 1, 4, [](const Tensor& x) { return weighted(t::mul_row(kSame, x)); }},
        GradCase{"sigmoid", 3, 4, [](const Tensor& x) { return weighted(t::sigmoid(x)); }},
        GradCase{"silu", 3, 4, [](const Tensor& x) { return weighted(t::silu(x)); }},
        GradCase{"tanh", 3, 4, [](const Tensor& x) { return weighted(t::tanh(x)); }},
        GradCase{"softmax_row", 3, 4,
                 [](const Tensor& x) { return weighted(t::softmax_axis(x, t::Axis::row)); }},
        GradCase{"softmax_column", 3, 4,
                 [](const Tensor& x) { return weighted(t::softmax_axis(x, t::Axis::column)); }},
        GradCase{"sum", 3, 4, [](const Tensor& x) { return t::sum(t::mul(x, kSame)); }},
        GradCase{"mean", 3, 4, [](const Tensor& x) { return t::mean(t::mul(x, x)); }},
        GradCase{"mse", 3, 4, [](const Tensor& x) { return t::mse(x, kSame); }},
        GradCase{"bce_with_logits", 3, 4, [](const Tensor& x) { return t::bce_with_logits(x, kTarget); }},
        GradCase{"bce_probs", 3, 4,
                 [](const Tensor& x) { return t::bce_probs(t::sigmoid(x), kTarget); }}),
    [](const ::testing::TestParamInfo<GradCase>& info) { return std::string(info.param.name); });

TEST(GradCheckModules, LinearAndMlp) {
    xsgs::nn::Rng rng(5);
    const xsgs::nn::Mlp mlp({4, 8, 8, 3}, rng);
    const Tensor x = random_tensor(6, 4, 15, 1.0, true);
    EXPECT_LT(t::grad_check([&](const Tensor& v) { return weighted(mlp(v)); }, x), kGradTol);
    Tensor w = mlp.layers[1].weight;
    EXPECT_LT(t::grad_check([&](const Tensor&) { return weighted(mlp(x.detach())); }, w), kGradTol);
}

TEST(GradCheck, DetectsAWrongGradient) {
    // x * stop_gradient(x) has a wrong analytic gradient by construction.
    const Tensor x = random_tensor(2, 2, 16, 1.0, true);
    const double err =
        t::grad_check([](const Tensor& v) { return t::sum(t::mul(v, v.detach())); }, x);
    EXPECT_GT(err, 1e-2);
}

// ---------------------------------------------------------------------------
// Adam

TEST(Adam, FirstTwoStepsMatchHandComputation) {
    Tensor p = Tensor::from(1, 2, {0.5, -1.0}, true);
    t::ParamList params = {{"p", p}};
    auto state = t::AdamState::for_params(params);
    t::AdamHyper h;
    h.lr = 0.1;
    std::vector<double> m(2, 0.0), v(2, 0.0), ref = {0.5, -1.0};
    for (int step = 1; step <= 2; ++step) {
        t::zero_grads(params);
        t::sum(t::mul(p, p)).backward();
        t::adam_step(params, state, h);
        for (std::size_t i = 0; i < 2; ++i) {
            const double g = 2.0 * ref[i];
            m[i] = 0.9 * m[i] + 0.1 * g;
            v[i] = 0.999 * v[i] + 0.001 * g * g;
            const double mh = m[i] / (1 - std::pow(0.9, step));
            const double vh = v[i] / (1 - std::pow(0.999, step));
            ref[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
            EXPECT_NEAR(p.data()[i], ref[i], 1e-12) << "step " << step;
        }
    }
    EXPECT_EQ(state.step, 2);
}

TEST(Adam, NonFiniteGradientLeavesEverythingUntouched) {
    Tensor a = Tensor::from(1, 1, {1.0}, true), b = Tensor::from(1, 1, {2.0}, true);
    t::ParamList params = {{"a", a}, {"b", b}};
    auto state = t::AdamState::for_params(params);
    a.mutable_grad()[0] = 1.0;
    b.mutable_grad()[0] = std::numeric_limits<double>::infinity();
    try {
        t::adam_step(params, state, {});
        FAIL() << "expected ContractError";
    } catch (const xsgs::ContractError& e) {
        EXPECT_NE(std::string(e.what()).find('b'), std::string::npos);
    }
    EXPECT_EQ(a.data()[0], 1.0);
    EXPECT_EQ(state.step, 0);
    EXPECT_EQ(state.m[0][0], 0.0);
}

TEST(Adam, Float32StateRoundsParametersAndMoments) {
    Tensor p = Tensor::from(1, 1, {0.1}, true);
    t::ParamList params = {{"p", p}};
    auto state = t::AdamState::for_params(params);
    t::AdamHyper h;
    h.float32_state = true;
    p.mutable_grad()[0] = 0.3;
    t::adam_step(params, state, h);
    EXPECT_EQ(p.data()[0], double(float(p.data()[0])));
    EXPECT_EQ(state.m[0][0], double(float(state.m[0][0])));
    EXPECT_EQ(state.v[0][0], double(float(state.v[0][0])));
}
