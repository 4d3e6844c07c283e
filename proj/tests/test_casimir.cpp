#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "carnot/casimir.hpp"
#include "oracles.hpp"

using namespace carnot;

namespace {

std::vector<Rational> rationals(std::initializer_list<int> v)
{
    std::vector<Rational> out;
    for (int x : v)
        out.emplace_back(x);
    return out;
}

CovectorPoint random_point(int k, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> uni(-1, 1);
    return {Eigen::VectorXd::NullaryExpr(k, [&] { return uni(rng); }),
            Eigen::VectorXd::NullaryExpr(k * (k - 1) / 2, [&] { return uni(rng); })};
}

}  // namespace

TEST(TrivialCasimirs, Examples)
{
    CovectorPoint p{Eigen::Vector2d(1, 2), Eigen::VectorXd::Constant(1, 0.25)};
    EXPECT_EQ(trivial_casimirs(p), Eigen::VectorXd::Constant(1, 0.25));
    CovectorPoint q{Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(1, 2, 3)};
    EXPECT_EQ(trivial_casimirs(q), Eigen::Vector3d(1, 2, 3));
    CovectorPoint z{Eigen::Vector3d(1, 2, 3), Eigen::Vector3d::Zero()};
    EXPECT_TRUE(trivial_casimirs(z).isZero(0.0));
}

TEST(AVector, KThreeHandExpansion)
{
    // (h12, h13, h23) = (c, b, a) -> (-2a, 2b, -2c)
    const Rational c(5), b(-7, 3), a(2, 9);
    const std::vector<Rational> h2{c, b, a};
    const auto av = a_vector<Rational>(AlgebraShape(3), h2);
    EXPECT_EQ(av, (std::vector<Rational>{-2 * a, 2 * b, -2 * c}));
}

TEST(AVector, ZeroSecondLayer)
{
    for (int k : {3, 5, 7}) {
        std::vector<Rational> h2(static_cast<std::size_t>(k * (k - 1) / 2), Rational(0));
        for (const auto& v : a_vector<Rational>(AlgebraShape(k), h2))
            EXPECT_EQ(v, 0);
    }
}

TEST(AVector, TupleCount)
{
    EXPECT_EQ(tuples_per_component(3), 2u);
    EXPECT_EQ(tuples_per_component(5), 24u);
    EXPECT_EQ(tuples_per_component(7), 720u);
}

TEST(AVector, Errors)
{
    std::vector<double> h2(6, 1.0);
    EXPECT_THROW(a_vector<double>(AlgebraShape(4), h2), UnsupportedError);
    std::vector<double> h2big(66, 1.0);
    EXPECT_THROW(a_vector<double>(AlgebraShape(12), h2big), UnsupportedError);
    std::vector<double> wrong(2, 1.0);
    EXPECT_THROW(a_vector<double>(AlgebraShape(3), wrong), InputError);
}

// The tuple sum equals (-1)^i 2^n n! times the Pfaffian of M with row and
// column i removed (expansion along the first row). Exact for k = 3, 5, 7.
TEST(AVector, MatchesPfaffianOracle)
{
    std::mt19937_64 rng(17);
    for (int k : {3, 5, 7}) {
        for (int trial = 0; trial < 10; ++trial) {
            const ExactCovector p = oracle::random_exact_point(k, rng);
            EXPECT_EQ(a_vector<Rational>(AlgebraShape(k), p.h2), oracle::a_vector_via_pfaffians<Rational>(k, p.h2));
        }
    }
}

TEST(AVector, KNineFloatingAgreesWithOracle)
{
    std::mt19937_64 rng(23);
    const CovectorPoint p = random_point(9, rng);
    const std::vector<double> h2(p.h2.data(), p.h2.data() + p.h2.size());
    const auto got = a_vector<double>(AlgebraShape(9), h2);
    const auto ref = oracle::a_vector_via_pfaffians<double>(9, h2);
    for (std::size_t i = 0; i < got.size(); ++i)
        EXPECT_NEAR(got[i], ref[i], 1e-9 * (1 + std::abs(ref[i])));
}

TEST(CasimirC, Examples)
{
    // k = 3, h = (1,0,0), h23 = 5 -> C = -2 h1 h23 = -10
    CovectorPoint p{Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0, 0, 5)};
    EXPECT_DOUBLE_EQ(casimir_c(p), -10.0);

    CovectorPoint z{Eigen::Vector3d::Zero(), Eigen::Vector3d(1, 2, 3)};
    EXPECT_EQ(casimir_c(z), 0.0);

    CovectorPoint even{Eigen::Vector4d(1, 0, 0, 0), Eigen::VectorXd::Ones(6)};
    EXPECT_THROW(casimir_c(even), UnsupportedError);
}

TEST(CasimirC, HomogeneityDegree)
{
    std::mt19937_64 rng(31);
    for (int k : {3, 5, 7}) {
        const int n = (k - 1) / 2;
        for (int trial = 0; trial < 5; ++trial) {
            const ExactCovector p = oracle::random_exact_point(k, rng);
            const AlgebraShape s(k);
            const Rational c = casimir_c<Rational>(s, p.h, p.h2);
            for (int lambda : {2, 3}) {
                ExactCovector q = p;
                for (auto& v : q.h)
                    v *= lambda;
                for (auto& v : q.h2)
                    v *= lambda;
                Rational scale = 1;
                for (int i = 0; i < n + 1; ++i)
                    scale *= lambda;
                EXPECT_EQ(casimir_c<Rational>(s, q.h, q.h2), scale * c);
            }
        }
    }
}

TEST(VerifyIdentity, ExactZeroResidual)
{
    std::mt19937_64 rng(41);
    for (int k : {3, 5}) {
        for (int trial = 0; trial < (k == 3 ? 20 : 100); ++trial) {
            const ExactCovector p = oracle::random_exact_point(k, rng);
            for (const auto& r : verify_casimir_identity<Rational>(AlgebraShape(k), p.h2))
                ASSERT_EQ(r, 0);
        }
    }
    const auto zero = verify_casimir_identity<Rational>(AlgebraShape(3), rationals({0, 0, 0}));
    for (const auto& r : zero)
        EXPECT_EQ(r, 0);
}

TEST(VerifyIdentity, FloatingResidualSmall)
{
    std::mt19937_64 rng(43);
    for (int k : {3, 5, 7, 9}) {
        const CovectorPoint p = random_point(k, rng);
        const Eigen::VectorXd a = a_vector(p);
        const Eigen::VectorXd r = verify_casimir_identity(p);
        EXPECT_LE(r.norm(), 1e-9 * a.norm() * m_matrix(p).matrix().norm());
    }
}

// A wrong parity convention (e.g. dropping the (-1)^i factor) must break the
// kernel identity; this guards the convention rather than the arithmetic.
TEST(VerifyIdentity, ParityConventionMatters)
{
    const std::vector<Rational> h2{Rational(1), Rational(2), Rational(3)};
    auto a = a_vector<Rational>(AlgebraShape(3), h2);
    // component l = 1 of sum_i a_i h_il: a_2 h_21 + a_3 h_31
    auto residual1 = [&](const std::vector<Rational>& v) { return v[1] * (-h2[0]) + v[2] * (-h2[1]); };
    EXPECT_EQ(residual1(a), 0);
    a[1] = -a[1];
    EXPECT_NE(residual1(a), 0);
}

TEST(Report, OddAndEven)
{
    ExactCovector p3{{Rational(1), Rational(0), Rational(0)}, {Rational(0), Rational(0), Rational(5)}};
    const ExactCasimirReport r = casimir_report(p3);
    ASSERT_TRUE(r.c_value.has_value());
    EXPECT_EQ(*r.c_value, -10);
    for (const auto& v : *r.residual)
        EXPECT_EQ(to_string(v), "0/1");

    ExactCovector p4{std::vector<Rational>(4, Rational(1)), std::vector<Rational>(6, Rational(1))};
    const ExactCasimirReport r4 = casimir_report(p4);
    EXPECT_FALSE(r4.c_value.has_value());
    EXPECT_EQ(r4.trivial.size(), 6u);
}

TEST(Rationals, ParseAndPrint)
{
    EXPECT_EQ(parse_rational("3/4"), Rational(3, 4));
    EXPECT_EQ(parse_rational("-6/8"), Rational(-3, 4));
    EXPECT_EQ(parse_rational("7"), Rational(7));
    EXPECT_EQ(parse_rational("-1.25"), Rational(-5, 4));
    EXPECT_EQ(to_string(Rational(0)), "0/1");
    EXPECT_EQ(to_string(Rational(-3, 4)), "-3/4");
    EXPECT_THROW(parse_rational("abc"), InputError);
    EXPECT_EQ(exact_rational(0.375), Rational(3, 8));
    EXPECT_EQ(exact_rational(-2.0), Rational(-2));
}
