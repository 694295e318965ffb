#include <gtest/gtest.h>

#include <cmath>

#include "cpd/nn.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cpd::nn;
using cpd::testing::max_rel_error;
using cpd::testing::numeric_gradient;

namespace {

Matrix random_matrix(cpd::Rng& rng, Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = rng.uniform(-1.0, 1.0);
    return m;
}

}  // namespace

TEST(NetInit, ParameterCountAndZeroBiases) {
    const NetArch a{{3, 4, 2}, Activation::tanh};
    EXPECT_EQ(a.param_count(), 26u);
    const auto p = net_init(a, 11);
    ASSERT_EQ(p.values.size(), 26u);
    for (std::size_t k = 12; k < 16; ++k) EXPECT_EQ(p.values[k], 0.0);
    for (std::size_t k = 24; k < 26; ++k) EXPECT_EQ(p.values[k], 0.0);

    const auto q = net_init(NetArch{{2, 1}}, 5);
    EXPECT_EQ(q.values[2], 0.0);
}

TEST(NetInit, GlorotBoundsAndDeterminism) {
    const NetArch a{{8, 16, 3}, Activation::relu};
    const auto p = net_init(a, 99);
    EXPECT_EQ(p, net_init(a, 99));
    EXPECT_NE(p, net_init(a, 100));
    const double l0 = std::sqrt(6.0 / 24.0), l1 = std::sqrt(6.0 / 19.0);
    for (std::size_t k = 0; k < 128; ++k) EXPECT_LE(std::abs(p.values[k]), l0);
    for (std::size_t k = 144; k < 144 + 48; ++k) EXPECT_LE(std::abs(p.values[k]), l1);
}

TEST(NetInit, ParameterCountFormulaAcrossArchs) {
    cpd::Rng rng(4);
    for (int t = 0; t < 50; ++t) {
        NetArch a;
        const auto depth = 2 + rng.index(4);
        for (std::size_t i = 0; i < depth; ++i) a.layer_sizes.push_back(1 + rng.index(9));
        std::size_t n = 0;
        for (std::size_t i = 0; i + 1 < depth; ++i) n += a.layer_sizes[i] * a.layer_sizes[i + 1] + a.layer_sizes[i + 1];
        EXPECT_EQ(a.param_count(), n);
        EXPECT_EQ(net_init(a, t).values.size(), n);
    }
}

TEST(NetInit, RejectsInvalidArch) {
    EXPECT_THROW(net_init(NetArch{{4}}, 0), std::invalid_argument);
    EXPECT_THROW(net_init(NetArch{{4, 0, 2}}, 0), std::invalid_argument);
    EXPECT_THROW(activation_from_string("sigmoid"), std::invalid_argument);
}

TEST(NetForward, ZeroAndIdentity) {
    ParamVector z{NetArch{{3, 5, 2}}, std::vector<double>(NetArch{{3, 5, 2}}.param_count(), 0.0)};
    const std::vector<double> x{0.3, -2.0, 7.0};
    for (double v : net_forward(z, x)) EXPECT_EQ(v, 0.0);

    ParamVector id{NetArch{{2, 2}}, {1, 0, 0, 1, 0, 0}};
    const std::vector<double> in{1.0, -1.0};
    const auto out = net_forward(id, in);
    EXPECT_EQ(out[0], 1.0);
    EXPECT_EQ(out[1], -1.0);
}

TEST(NetForward, MatchesStraightLineOracle) {
    for (auto act : {Activation::tanh, Activation::relu}) {
        const auto p = net_init(NetArch{{4, 8, 3}, act}, 123);
        cpd::Rng rng(1);
        for (int t = 0; t < 10; ++t) {
            auto x = cpd::testing::random_vector(rng, 4, -2, 2);
            const auto got = net_forward(p, x);
            const auto want = cpd::oracle::straight_line_forward(p, x);
            for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
        }
    }
}

TEST(NetForward, BatchedEqualsPerSample) {
    const auto p = net_init(NetArch{{5, 7, 7, 2}}, 8);
    cpd::Rng rng(2);
    const Matrix X = random_matrix(rng, 5, 9);
    const Matrix Y = net_forward(p, X);
    for (Eigen::Index j = 0; j < 9; ++j) {
        std::vector<double> x(X.col(j).data(), X.col(j).data() + 5);
        const auto y = net_forward(p, x);
        EXPECT_DOUBLE_EQ(Y(0, j), y[0]);
        EXPECT_DOUBLE_EQ(Y(1, j), y[1]);
    }
}

TEST(NetForward, RejectsDimensionMismatch) {
    const auto p = net_init(NetArch{{3, 2}}, 0);
    const std::vector<double> x{1.0, 2.0};
    EXPECT_THROW(net_forward(p, x), std::invalid_argument);
    ParamVector broken = p;
    broken.values.pop_back();
    const std::vector<double> ok{1.0, 2.0, 3.0};
    EXPECT_THROW(net_forward(broken, ok), std::invalid_argument);
}

TEST(NetBackward, ZeroOutputGradAndLinearLayer) {
    auto p = net_init(NetArch{{3, 4, 2}}, 3);
    cpd::Rng rng(3);
    ForwardCache cache;
    net_forward(p, random_matrix(rng, 3, 1), &cache);
    for (double g : net_backward(p, cache, Matrix::Zero(2, 1))) EXPECT_EQ(g, 0.0);

    ParamVector lin{NetArch{{3, 1}}, {0.5, -0.2, 0.9, 0.1}};
    Matrix x(3, 1);
    x << 2.0, -3.0, 0.25;
    net_forward(lin, x, &cache);
    const auto g = net_backward(lin, cache, Matrix::Ones(1, 1));
    EXPECT_EQ(g[0], 2.0);
    EXPECT_EQ(g[1], -3.0);
    EXPECT_EQ(g[2], 0.25);
    EXPECT_EQ(g[3], 1.0);
}

TEST(NetBackward, MatchesFiniteDifferences) {
    struct Case {
        NetArch arch;
        Eigen::Index batch;
    };
    const std::vector<Case> cases{{{{3, 5, 2}, Activation::tanh}, 1},
                                  {{{8, 16, 16, 8}, Activation::tanh}, 3},
                                  {{{4, 6, 3}, Activation::relu}, 4}};
    for (const auto& c : cases) {
        auto p = net_init(c.arch, 21);
        cpd::Rng rng(7);
        for (auto& v : p.values) v += rng.uniform(-0.1, 0.1);  // non-zero biases
        const Matrix X = random_matrix(rng, static_cast<Eigen::Index>(c.arch.input_dim()), c.batch);
        const Matrix G = random_matrix(rng, static_cast<Eigen::Index>(c.arch.output_dim()), c.batch);
        ForwardCache cache;
        net_forward(p, X, &cache);
        const auto analytic = net_backward(p, cache, G);
        const auto numeric = numeric_gradient(p.values, [&] { return (net_forward(p, X).array() * G.array()).sum(); });
        EXPECT_LT(max_rel_error(analytic, numeric), 1e-5);
    }
}

TEST(NetBackward, InputGradientMatchesFiniteDifferences) {
    const auto p = net_init(NetArch{{4, 6, 2}}, 5);
    cpd::Rng rng(9);
    Matrix X = random_matrix(rng, 4, 1);
    const Matrix G = random_matrix(rng, 2, 1);
    ForwardCache cache;
    net_forward(p, X, &cache);
    Matrix gin;
    net_backward(p, cache, G, &gin);
    std::vector<double> x(X.data(), X.data() + 4);
    const auto numeric = numeric_gradient(x, [&] {
        const Matrix in = Eigen::Map<const Matrix>(x.data(), 4, 1);
        return (net_forward(p, in).array() * G.array()).sum();
    });
    EXPECT_LT(max_rel_error(std::span<const double>(gin.data(), 4), numeric), 1e-5);
}

TEST(NetBackward, RejectsStaleCache) {
    auto p = net_init(NetArch{{3, 2}}, 1);
    auto other = net_init(NetArch{{3, 2}}, 2);
    cpd::Rng rng(1);
    ForwardCache cache;
    net_forward(p, random_matrix(rng, 3, 2), &cache);
    EXPECT_THROW(net_backward(other, cache, Matrix::Ones(2, 2)), std::invalid_argument);
    EXPECT_THROW(net_backward(p, cache, Matrix::Ones(2, 3)), std::invalid_argument);
    p.revision += 1;
    EXPECT_THROW(net_backward(p, cache, Matrix::Ones(2, 2)), std::invalid_argument);
}
