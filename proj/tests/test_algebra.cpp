#include <gtest/gtest.h>

#include <random>

#include "carnot/algebra.hpp"

using namespace carnot;

TEST(AlgebraShape, Dimensions)
{
    for (int k = 2; k <= kMaxGenerators; ++k) {
        AlgebraShape s(k);
        EXPECT_EQ(s.dim_first(), k);
        EXPECT_EQ(s.dim_second(), k * (k - 1) / 2);
        EXPECT_EQ(s.dim_total(), s.dim_first() + s.dim_second());
    }
    EXPECT_THROW(AlgebraShape(1), SizeError);
    EXPECT_THROW(AlgebraShape(kMaxGenerators + 1), SizeError);
}

TEST(PairIndex, Examples)
{
    AlgebraShape s3(3);
    EXPECT_EQ(pair_index(s3, 1, 2), 0);
    EXPECT_EQ(pair_index(s3, 1, 3), 1);
    EXPECT_EQ(pair_index(s3, 2, 3), 2);
    EXPECT_EQ(pair_index(AlgebraShape(2), 1, 2), 0);
    EXPECT_EQ(pair_index(AlgebraShape(5), 4, 5), 9);
}

TEST(PairIndex, BijectionAndInverse)
{
    for (int k = 2; k <= kMaxGenerators; ++k) {
        AlgebraShape s(k);
        int expected = 0;
        for (int i = 1; i <= k; ++i)
            for (int j = i + 1; j <= k; ++j) {
                ASSERT_EQ(pair_index(s, i, j), expected);
                ASSERT_EQ(pair_unindex(s, expected), std::make_pair(i, j));
                ++expected;
            }
        EXPECT_EQ(expected, s.dim_second());
    }
}

TEST(PairIndex, Errors)
{
    AlgebraShape s(4);
    EXPECT_THROW(pair_index(s, 2, 2), IndexError);
    EXPECT_THROW(pair_index(s, 3, 2), IndexError);
    EXPECT_THROW(pair_index(s, 0, 2), IndexError);
    EXPECT_THROW(pair_index(s, 1, 5), IndexError);
    EXPECT_THROW(pair_unindex(s, 6), IndexError);
    EXPECT_THROW(pair_unindex(s, -1), IndexError);
}

TEST(Bracket, StructureConstants)
{
    AlgebraShape s(3);
    const auto x1 = BasisLabel::generator(1), x2 = BasisLabel::generator(2), x3 = BasisLabel::generator(3);
    const auto x12 = BasisLabel::pair(1, 2);

    Eigen::VectorXd b = bracket(s, x1, x2);
    EXPECT_EQ(b[basis_index(s, x12)], 1.0);
    EXPECT_EQ(b.cwiseAbs().sum(), 1.0);

    b = bracket(s, x2, x1);
    EXPECT_EQ(b[basis_index(s, x12)], -1.0);

    EXPECT_TRUE(bracket(s, x12, x3).isZero(0.0));
    EXPECT_TRUE(bracket(s, x3, x3).isZero(0.0));
}

TEST(Bracket, AntisymmetryExact)
{
    for (int k = 2; k <= 5; ++k) {
        AlgebraShape s(k);
        for (int a = 0; a < s.dim_total(); ++a)
            for (int b = 0; b < s.dim_total(); ++b) {
                const auto la = basis_label(s, a), lb = basis_label(s, b);
                EXPECT_EQ(bracket(s, la, lb), -bracket(s, lb, la));
            }
    }
}

TEST(Bracket, JacobiOnAllBasisTriples)
{
    for (int k = 2; k <= 5; ++k) {
        AlgebraShape s(k);
        const int n = s.dim_total();
        auto e = [&](int i) { return Eigen::VectorXd::Unit(n, i); };
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b)
                for (int c = 0; c < n; ++c) {
                    const Eigen::VectorXd j = bracket(s, e(a), bracket(s, e(b), e(c))) +
                                              bracket(s, e(b), bracket(s, e(c), e(a))) +
                                              bracket(s, e(c), bracket(s, e(a), e(b)));
                    ASSERT_TRUE(j.isZero(0.0)) << "k=" << k << " triple " << a << b << c;
                }
    }
}

TEST(ModelField, Examples)
{
    AlgebraShape s2(2);
    GroupPoint g = GroupPoint::identity(s2);
    Eigen::VectorXd v = model_field(s2, 1, g);
    EXPECT_EQ(v, (Eigen::VectorXd(3) << 1, 0, 0).finished());

    g.x << 0, 4;
    v = model_field(s2, 1, g);
    EXPECT_EQ(v, (Eigen::VectorXd(3) << 1, 0, -2).finished());

    AlgebraShape s3(3);
    GroupPoint g3 = GroupPoint::identity(s3);
    g3.x << 1, 1, 1;
    v = model_field(s3, 2, g3);
    EXPECT_EQ(v.head(3), (Eigen::VectorXd(3) << 0, 1, 0).finished());
    EXPECT_EQ(v[3 + pair_index(s3, 1, 2)], 0.5);
    EXPECT_EQ(v[3 + pair_index(s3, 1, 3)], 0.0);
    EXPECT_EQ(v[3 + pair_index(s3, 2, 3)], -0.5);
}

// [X, Y] = DY X - DX Y with central-difference Jacobians of the coordinate
// expressions must reproduce the structure constants.
TEST(ModelField, VectorFieldBracketMatchesStructureConstants)
{
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> uni(-2.0, 2.0);
    const double step = 1e-5;
    for (int k = 2; k <= 5; ++k) {
        AlgebraShape s(k);
        const int n = s.dim_total();
        for (int trial = 0; trial < 5; ++trial) {
            GroupPoint g = GroupPoint::identity(s);
            for (int i = 0; i < k; ++i)
                g.x[i] = uni(rng);
            for (int i = 0; i < s.dim_second(); ++i)
                g.x2[i] = uni(rng);

            auto field_at = [&](int i, const Eigen::VectorXd& flat) {
                GroupPoint q{flat.head(k), flat.tail(s.dim_second())};
                return model_field(s, i, q);
            };
            auto jacobian = [&](int i) {
                Eigen::MatrixXd jac(n, n);
                const Eigen::VectorXd x0 = g.flat();
                for (int c = 0; c < n; ++c) {
                    Eigen::VectorXd xp = x0, xm = x0;
                    xp[c] += step;
                    xm[c] -= step;
                    jac.col(c) = (field_at(i, xp) - field_at(i, xm)) / (2 * step);
                }
                return jac;
            };
            for (int i = 1; i <= k; ++i)
                for (int j = 1; j <= k; ++j) {
                    const Eigen::VectorXd xi = model_field(s, i, g), xj = model_field(s, j, g);
                    const Eigen::VectorXd lie = jacobian(j) * xi - jacobian(i) * xj;
                    const Eigen::VectorXd expected =
                        bracket(s, BasisLabel::generator(i), BasisLabel::generator(j));
                    ASSERT_LE((lie - expected).cwiseAbs().maxCoeff(), 1e-6);
                }
        }
    }
}
