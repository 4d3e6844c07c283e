#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "carnot/convex.hpp"
#include "oracles.hpp"

using namespace carnot;

namespace {

Eigen::VectorXd unit_random(int k, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal;
    Eigen::VectorXd h(k);
    for (int i = 0; i < k; ++i)
        h[i] = normal(rng);
    return h.normalized();
}

std::vector<ConvexBody> sample_bodies()
{
    std::vector<ConvexBody> out;
    out.push_back(ConvexBody::unit_ball(3));
    Eigen::Matrix3d a;
    a << 2.0, 0.3, -0.1, 0.3, 1.0, 0.2, -0.1, 0.2, 0.5;
    out.push_back(ConvexBody::ellipsoid(a, Eigen::Vector3d(0.2, -0.1, 0.3)));
    out.push_back(ConvexBody::lq_ball(4.0, Eigen::Vector3d(1.0, 2.0, 0.5), Eigen::Vector3d(0.1, 0.2, -0.1)));
    out.push_back(ConvexBody::lq_ball(1.5, Eigen::Vector3d(1.0, 0.7, 1.3), Eigen::Vector3d(-0.2, 0.0, 0.1)));
    out.push_back(ConvexBody::ball_intersection(
        {{Eigen::Vector3d(0.5, 0.0, 0.0), 1.5}, {Eigen::Vector3d(-0.5, 0.0, 0.2), 1.4}}));
    return out;
}

}  // namespace

TEST(Support, Examples)
{
    const ConvexBody ball = ConvexBody::unit_ball(2);
    EXPECT_DOUBLE_EQ(ball.support(Eigen::Vector2d(3, 4)), 5.0);
    EXPECT_EQ(ball.support(Eigen::Vector2d::Zero()), 0.0);

    const ConvexBody shifted = ConvexBody::ellipsoid(Eigen::Matrix2d::Identity(), Eigen::Vector2d(0.3, -0.2));
    EXPECT_DOUBLE_EQ(shifted.support(Eigen::Vector2d(1, 0)), 1.3);

    const ConvexBody lq = ConvexBody::lq_ball(2.0, Eigen::Vector2d(1, 2), Eigen::Vector2d::Zero());
    EXPECT_DOUBLE_EQ(lq.support(Eigen::Vector2d(1, 1)), std::sqrt(5.0));
}

TEST(GradSupport, Examples)
{
    const ConvexBody ball = ConvexBody::unit_ball(2);
    const Eigen::VectorXd u = ball.grad_support(Eigen::Vector2d(3, 4));
    EXPECT_NEAR(u[0], 0.6, 1e-15);
    EXPECT_NEAR(u[1], 0.8, 1e-15);

    const ConvexBody ell = ConvexBody::ellipsoid(Eigen::Vector2d(4, 1).asDiagonal().toDenseMatrix(), Eigen::Vector2d::Zero());
    EXPECT_EQ(ell.grad_support(Eigen::Vector2d(1, 0)), Eigen::Vector2d(2, 0));

    EXPECT_THROW(ball.grad_support(Eigen::Vector2d::Zero()), DomainError);
}

// q = 4, d = (1,1), h = (1,1): q' = 4/3, u_i = 2^{-1/4}; checked against
// finite differences of the support function.
TEST(GradSupport, LqFourAgainstFiniteDifferences)
{
    const ConvexBody lq = ConvexBody::lq_ball(4.0, Eigen::Vector2d(1, 1), Eigen::Vector2d::Zero());
    const Eigen::Vector2d h(1, 1);
    const Eigen::VectorXd u = lq.grad_support(h);
    const Eigen::VectorXd fd = oracle::fd_gradient([&](const Eigen::VectorXd& x) { return lq.support(x); }, h, 1e-5);
    EXPECT_LE((u - fd).norm() / fd.norm(), 1e-9);
    EXPECT_NEAR(u[0], std::pow(2.0, -0.25), 1e-14);
    EXPECT_NEAR(u[1], std::pow(2.0, -0.25), 1e-14);
}

TEST(Support, PositiveHomogeneityAndSubadditivity)
{
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> lam(0.01, 100.0);
    for (const auto& body : sample_bodies()) {
        for (int n = 0; n < 200; ++n) {
            const Eigen::VectorXd h1 = unit_random(3, rng) * lam(rng);
            const Eigen::VectorXd h2 = unit_random(3, rng) * lam(rng);
            const double l = lam(rng);
            EXPECT_NEAR(body.support(l * h1), l * body.support(h1), 1e-12 * l * body.support(h1))
                << body.kind();
            EXPECT_LE(body.support(h1 + h2), body.support(h1) + body.support(h2) + 1e-12 * (h1.norm() + h2.norm()))
                << body.kind();
        }
    }
}

TEST(GradSupport, EulerMembershipAndFiniteDifferences)
{
    std::mt19937_64 rng(2);
    for (const auto& body : sample_bodies()) {
        for (int n = 0; n < 300; ++n) {
            const Eigen::VectorXd h = unit_random(3, rng);
            const Eigen::VectorXd u = body.grad_support(h);
            const double hv = body.support(h);
            EXPECT_NEAR(u.dot(h), hv, 1e-10 * std::abs(hv)) << body.kind();
            EXPECT_NEAR(body.gauge(u), 1.0, 1e-10) << body.kind();
            const Eigen::VectorXd fd =
                oracle::fd_gradient([&](const Eigen::VectorXd& x) { return body.support(x); }, h, 1e-5);
            EXPECT_LE((u - fd).norm() / std::max(1.0, u.norm()), 1e-6) << body.kind();
        }
    }
}

TEST(GradSupport, StrictConvexityDistinctMaximizers)
{
    std::mt19937_64 rng(3);
    for (const auto& body : sample_bodies()) {
        if (body.kind() == "ball_intersection")
            continue;  // corners: whole cones of directions share a maximizer
        for (int n = 0; n < 100; ++n) {
            const Eigen::VectorXd h1 = unit_random(3, rng), h2 = unit_random(3, rng);
            if (std::abs(h1.dot(h2)) > 0.999)
                continue;
            EXPECT_GT((body.grad_support(h1) - body.grad_support(h2)).norm(), 1e-8) << body.kind();
        }
    }
}

// Intersection maximizer checked by brute force over a fine sampling of the
// boundary spheres.
TEST(BallIntersection, MatchesSampledMaximum)
{
    const ConvexBody lens = ConvexBody::ball_intersection(
        {{Eigen::Vector2d(0.6, 0.0), 1.2}, {Eigen::Vector2d(-0.6, 0.0), 1.2}});
    std::vector<Eigen::Vector2d> pts;
    for (int i = 0; i < 200000; ++i) {
        const double t = 2 * std::numbers::pi * i / 200000.0;
        for (Eigen::Vector2d c : {Eigen::Vector2d(0.6, 0.0), Eigen::Vector2d(-0.6, 0.0)}) {
            const Eigen::Vector2d p = c + 1.2 * Eigen::Vector2d(std::cos(t), std::sin(t));
            if (lens.gauge(p) <= 1.0 + 1e-12)
                pts.push_back(p);
        }
    }
    // the two corners are where the maximum sits for a whole cone of directions
    const double cy = std::sqrt(1.2 * 1.2 - 0.36);
    pts.emplace_back(0.0, cy);
    pts.emplace_back(0.0, -cy);
    std::mt19937_64 rng(9);
    for (int n = 0; n < 50; ++n) {
        const Eigen::VectorXd h = unit_random(2, rng);
        double best = -1e300;
        for (const auto& p : pts)
            best = std::max(best, p.dot(h));
        EXPECT_NEAR(lens.support(h), best, 1e-9);
    }
    // corner of the lens: directions near (0, 1) all pick the top corner
    const double corner_y = std::sqrt(1.2 * 1.2 - 0.36);
    EXPECT_NEAR(lens.grad_support(Eigen::Vector2d(0.1, 1.0))[1], corner_y, 1e-12);
    EXPECT_NEAR(lens.grad_support(Eigen::Vector2d(-0.1, 1.0))[0], 0.0, 1e-12);
}

TEST(Construction, Rejections)
{
    EXPECT_THROW(ConvexBody::polytope(Eigen::MatrixXd::Identity(2, 2)), BodyError);
    try {
        ConvexBody::polytope(Eigen::MatrixXd::Identity(2, 2));
    }
    catch (const BodyError& e) {
        EXPECT_NE(std::string(e.what()).find("strict convexity required"), std::string::npos);
    }
    EXPECT_THROW(ConvexBody::lq_ball(1.0, Eigen::Vector2d(1, 1), Eigen::Vector2d::Zero()), BodyError);
    EXPECT_THROW(ConvexBody::lq_ball(INFINITY, Eigen::Vector2d(1, 1), Eigen::Vector2d::Zero()), BodyError);
    EXPECT_THROW(ConvexBody::lq_ball(3.0, Eigen::Vector2d(1, -1), Eigen::Vector2d::Zero()), BodyError);
    // origin outside
    EXPECT_THROW(ConvexBody::ellipsoid(Eigen::Matrix2d::Identity(), Eigen::Vector2d(1.0, 0.0)), BodyError);
    EXPECT_THROW(ConvexBody::lq_ball(3.0, Eigen::Vector2d(1, 1), Eigen::Vector2d(1.2, 0.0)), BodyError);
    EXPECT_THROW(ConvexBody::ball_intersection({{Eigen::Vector2d(2.0, 0.0), 1.0}}), BodyError);
    // not positive definite / not symmetric
    EXPECT_THROW(ConvexBody::ellipsoid((Eigen::Matrix2d() << 1, 0, 0, -1).finished(), Eigen::Vector2d::Zero()),
                 BodyError);
    EXPECT_THROW(ConvexBody::ellipsoid((Eigen::Matrix2d() << 1, 0.5, 0, 1).finished(), Eigen::Vector2d::Zero()),
                 BodyError);
}

TEST(UnitLevelNormalize, Examples)
{
    const ConvexBody ball = ConvexBody::unit_ball(2);
    CovectorPoint p{Eigen::Vector2d(3, 4), Eigen::VectorXd::Constant(1, 2.0)};
    const CovectorPoint q = unit_level_normalize(ball, p);
    EXPECT_NEAR(q.h[0], 0.6, 1e-15);
    EXPECT_NEAR(q.h[1], 0.8, 1e-15);
    EXPECT_EQ(q.h2, p.h2);
    const CovectorPoint r = unit_level_normalize(ball, q);
    EXPECT_NEAR((r.h - q.h).norm(), 0.0, 1e-15);

    CovectorPoint z{Eigen::Vector2d::Zero(), Eigen::VectorXd::Constant(1, 2.0)};
    EXPECT_THROW(unit_level_normalize(ball, z), NormalizationError);
}

TEST(UnitBall, Detection)
{
    EXPECT_TRUE(ConvexBody::unit_ball(3).is_unit_ball());
    EXPECT_TRUE(ConvexBody::lq_ball(2.0, Eigen::Vector2d(1, 1), Eigen::Vector2d::Zero()).is_unit_ball());
    EXPECT_FALSE(ConvexBody::ellipsoid(Eigen::Matrix2d::Identity() * 2, Eigen::Vector2d::Zero()).is_unit_ball());
}
