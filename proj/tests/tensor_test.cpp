#include "qalam/tensor.hpp"

#include "gtest/gtest.h"

#include <cmath>
#include <limits>
#include <random>

using qalam::shape;
using qalam::tensor;

namespace {

tensor<double> random_tensor(shape s, std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> dist{ -1.0, 1.0 };
    tensor<double> t{ std::move(s) };
    for (double &v : t.data()) {
        v = dist(rng);
    }
    return t;
}

// Textbook triple loop, independent of the GEMM kernels.
tensor<double> naive_matmul(const tensor<double> &a, const tensor<double> &b) {
    const std::size_t m = a.shape()[0];
    const std::size_t k = a.shape()[1];
    const std::size_t n = b.shape()[1];
    tensor<double> c{ shape{ m, n } };
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += a(i, p) * b(p, j);
            }
            c(i, j) = acc;
        }
    }
    return c;
}

}  // namespace

TEST(Shape, RejectsZeroElementShapes) {
    EXPECT_THROW(shape({ 2, 0 }), qalam::shape_error);
    EXPECT_THROW(shape(std::vector<std::size_t>{}), qalam::shape_error);
    EXPECT_EQ(shape({ 4, 4, 384 }).elements(), 6144U);
}

TEST(Tensor, ZerosAndFull) {
    const auto z = qalam::zeros<double>({ 2, 2 });
    EXPECT_EQ(z.size(), 4U);
    for (const double v : z.data()) {
        EXPECT_EQ(v, 0.0);
    }
    const auto f = qalam::full<double>({ 1, 3 }, 2.5);
    EXPECT_EQ(f, (tensor<double>{ shape{ 1, 3 }, { 2.5, 2.5, 2.5 } }));
    EXPECT_EQ(qalam::zeros<float>({ 32, 32, 1 }).size(), 1024U);
}

TEST(Tensor, ConstructorChecksDataLength) {
    EXPECT_THROW((tensor<double>{ shape{ 2, 2 }, { 1.0, 2.0, 3.0 } }), qalam::shape_error);
}

TEST(Tensor, Elementwise) {
    const tensor<double> a{ shape{ 2 }, { 1, 2 } };
    const tensor<double> b{ shape{ 2 }, { 3, 4 } };
    EXPECT_EQ(qalam::add(a, b), (tensor<double>{ shape{ 2 }, { 4, 6 } }));
    EXPECT_EQ(qalam::sub(b, a), (tensor<double>{ shape{ 2 }, { 2, 2 } }));
    EXPECT_EQ(qalam::scale(a, 0.0), (tensor<double>{ shape{ 2 }, { 0, 0 } }));
    EXPECT_EQ(qalam::mul(tensor<double>{ shape{ 2 }, { 2, 3 } }, tensor<double>{ shape{ 2 }, { 4, 5 } }), (tensor<double>{ shape{ 2 }, { 8, 15 } }));
    EXPECT_EQ(qalam::add(a, 1.0), (tensor<double>{ shape{ 2 }, { 2, 3 } }));
}

TEST(Tensor, ElementwiseShapeMismatch) {
    const tensor<double> a{ shape{ 2 } };
    const tensor<double> b{ shape{ 3 } };
    EXPECT_THROW(static_cast<void>(qalam::add(a, b)), qalam::shape_error);
    EXPECT_THROW(static_cast<void>(qalam::mul(a, b)), qalam::shape_error);
}

TEST(Tensor, NonFiniteResultIsAnError) {
    const tensor<double> a{ shape{ 1 }, { std::numeric_limits<double>::max() } };
    EXPECT_THROW(static_cast<void>(qalam::scale(a, 10.0)), qalam::numeric_error);
}

TEST(Matmul, IdentityAndDot) {
    const tensor<double> eye{ shape{ 2, 2 }, { 1, 0, 0, 1 } };
    const tensor<double> m{ shape{ 2, 2 }, { 1, 2, 3, 4 } };
    EXPECT_EQ(qalam::matmul(eye, m), m);
    EXPECT_EQ(qalam::matmul(tensor<double>{ shape{ 1, 2 }, { 1, 2 } }, tensor<double>{ shape{ 2, 1 }, { 3, 4 } }), (tensor<double>{ shape{ 1, 1 }, { 11 } }));
}

TEST(Matmul, MatchesTripleLoop) {
    std::mt19937_64 rng{ 7 };
    const auto a = random_tensor({ 7, 5 }, rng);
    const auto b = random_tensor({ 5, 3 }, rng);
    const auto got = qalam::matmul(a, b);
    const auto want = naive_matmul(a, b);
    for (std::size_t i = 0; i < got.size(); ++i) {
        EXPECT_NEAR(got[i], want[i], 1e-14);
    }
}

TEST(Matmul, DimensionMismatch) {
    EXPECT_THROW(static_cast<void>(qalam::matmul(tensor<double>{ shape{ 2, 3 } }, tensor<double>{ shape{ 2, 3 } })), qalam::shape_error);
    EXPECT_THROW(static_cast<void>(qalam::matmul(tensor<double>{ shape{ 6 } }, tensor<double>{ shape{ 6, 1 } })), qalam::shape_error);
}

TEST(Matmul, AssociativeWithinRoundoff) {
    std::mt19937_64 rng{ 11 };
    for (int trial = 0; trial < 50; ++trial) {
        std::uniform_int_distribution<std::size_t> dim{ 1, 9 };
        const auto a = random_tensor({ dim(rng), dim(rng) }, rng);
        const auto b = random_tensor({ a.shape()[1], dim(rng) }, rng);
        const auto c = random_tensor({ b.shape()[1], dim(rng) }, rng);
        const auto left = qalam::matmul(qalam::matmul(a, b), c);
        const auto right = qalam::matmul(a, qalam::matmul(b, c));
        double num = 0.0;
        double den = 0.0;
        for (std::size_t i = 0; i < left.size(); ++i) {
            num = std::max(num, std::abs(left[i] - right[i]));
            den = std::max(den, std::abs(left[i]));
        }
        EXPECT_LT(num, 1e-6 * std::max(den, 1.0));
    }
}

TEST(Transpose, HandExamples) {
    const tensor<double> sym{ shape{ 2, 2 }, { 1, 2, 2, 1 } };
    EXPECT_EQ(qalam::transpose2d(sym), sym);
    const tensor<double> m{ shape{ 2, 3 }, { 1, 2, 3, 4, 5, 6 } };
    EXPECT_EQ(qalam::transpose2d(m), (tensor<double>{ shape{ 3, 2 }, { 1, 4, 2, 5, 3, 6 } }));
    EXPECT_THROW(static_cast<void>(qalam::transpose2d(tensor<double>{ shape{ 2, 2, 2 } })), qalam::shape_error);
}

TEST(Transpose, InvolutionIsBitwiseExact) {
    std::mt19937_64 rng{ 3 };
    for (int trial = 0; trial < 100; ++trial) {
        std::uniform_int_distribution<std::size_t> dim{ 1, 40 };
        const auto x = random_tensor({ dim(rng), dim(rng) }, rng);
        EXPECT_EQ(qalam::transpose2d(qalam::transpose2d(x)), x);
    }
}

TEST(Reshape, FlattenFeatureMap) {
    const auto features = qalam::zeros<float>({ 4, 4, 384 });
    EXPECT_EQ(qalam::flatten(features).shape(), (shape{ 6144 }));
}

TEST(Reshape, PreservesSequence) {
    const tensor<double> m{ shape{ 2, 3 }, { 1, 2, 3, 4, 5, 6 } };
    const auto r = qalam::reshape(m, { 3, 2 });
    EXPECT_EQ(r.shape(), (shape{ 3, 2 }));
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(r[i], static_cast<double>(i + 1));
    }
    EXPECT_EQ(qalam::reshape(qalam::flatten(m), m.shape()), m);
    EXPECT_THROW(static_cast<void>(qalam::reshape(m, { 4, 2 })), qalam::shape_error);
}
