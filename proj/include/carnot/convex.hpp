#pragma once

// Strictly convex compact control sets U containing 0 in the interior, given
// by closed-form support functions
//   H(h) = max_{u in U} <u, h>
// and their gradients grad H(h) = argmax, the extremal control.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "carnot/coadjoint.hpp"
#include "carnot/errors.hpp"

namespace carnot {

/// center + A^{1/2} * (unit ball), A symmetric positive definite.
struct Ellipsoid {
    Eigen::VectorXd center;
    Eigen::MatrixXd shape;  // A
};

/// center + d o (unit l_q ball), 1 < q < inf, d > 0 componentwise.
struct LqBall {
    Eigen::VectorXd center;
    Eigen::VectorXd scale;  // d
    double q = 2.0;
};

struct Ball {
    Eigen::VectorXd center;
    double radius = 1.0;
};

/// Intersection of Euclidean balls. Strictly convex but with corners where
/// spheres meet, so the polar body {H <= 1} has flat faces.
struct BallIntersection {
    std::vector<Ball> balls;
};

class ConvexBody {
public:
    using Variant = std::variant<Ellipsoid, LqBall, BallIntersection>;

    static ConvexBody ellipsoid(Eigen::MatrixXd shape, Eigen::VectorXd center, std::uint64_t seed = 0);
    static ConvexBody unit_ball(int k) { return ellipsoid(Eigen::MatrixXd::Identity(k, k), Eigen::VectorXd::Zero(k)); }
    static ConvexBody lq_ball(double q, Eigen::VectorXd scale, Eigen::VectorXd center, std::uint64_t seed = 0);
    static ConvexBody ball_intersection(std::vector<Ball> balls, std::uint64_t seed = 0);

    /// Polytopes are not strictly convex: the vertical system loses uniqueness
    /// (singular arcs join bang-bang ones). Always throws BodyError.
    [[noreturn]] static ConvexBody polytope(const Eigen::MatrixXd& vertices);

    int k() const noexcept { return k_; }
    const Variant& variant() const noexcept { return body_; }
    std::string kind() const;

    /// Centered Euclidean unit ball (the sub-Riemannian case).
    bool is_unit_ball(double tol = 1e-14) const;

    double support(const Eigen::VectorXd& h) const;
    Eigen::VectorXd grad_support(const Eigen::VectorXd& h) const;

    /// Membership functional of the centered body: <= 1 inside, = 1 on the
    /// boundary. Minkowski gauge for ellipsoids and l_q balls; for ball
    /// intersections max_j |u - c_j| / r_j (same level sets at 1).
    double gauge(const Eigen::VectorXd& u) const;

private:
    ConvexBody(Variant v, int k) : body_(std::move(v)), k_(k) {}
    void validate_origin_interior(std::uint64_t seed) const;

    Variant body_;
    int k_;
};

namespace detail {

inline void check_vector(const Eigen::VectorXd& v, int k, const char* what)
{
    if (v.size() != k)
        throw BodyError(std::string(what) + ": dimension mismatch");
    if (!v.allFinite())
        throw BodyError(std::string(what) + ": non-finite entries");
}

inline double ellipsoid_support(const Ellipsoid& e, const Eigen::VectorXd& h)
{
    return e.center.dot(h) + std::sqrt(std::max(0.0, h.dot(e.shape * h)));
}

inline Eigen::VectorXd ellipsoid_grad(const Ellipsoid& e, const Eigen::VectorXd& h)
{
    const Eigen::VectorXd ah = e.shape * h;
    return e.center + ah / std::sqrt(h.dot(ah));
}

// Weighted dual norm ||d o h||_{q'}, scaled by the largest entry to avoid
// overflow for large q'.
inline double lq_dual_norm(const LqBall& b, const Eigen::VectorXd& h)
{
    const double qd = b.q / (b.q - 1.0);
    const Eigen::VectorXd w = (b.scale.array() * h.array()).abs().matrix();
    const double wmax = w.maxCoeff();
    if (wmax == 0.0)
        return 0.0;
    double s = 0.0;
    for (int i = 0; i < w.size(); ++i)
        s += std::pow(w[i] / wmax, qd);
    return wmax * std::pow(s, 1.0 / qd);
}

inline Eigen::VectorXd lq_grad(const LqBall& b, const Eigen::VectorXd& h)
{
    const double qd = b.q / (b.q - 1.0);
    const double n = lq_dual_norm(b, h);
    Eigen::VectorXd u = b.center;
    for (int i = 0; i < h.size(); ++i) {
        const double w = b.scale[i] * h[i];
        const double r = std::abs(w) / n;  // in [0, 1]
        u[i] += b.scale[i] * std::copysign(std::pow(r, qd - 1.0), w);
    }
    return u;
}

// Maximizer of <u, h> over an intersection of balls by enumerating active
// sets. For an active set S the candidate is the maximizer over the sphere
// {|u - c_s| = r_s, s in S}: center m, radius rho, inside the affine space
// cut out by the pairwise differences of the sphere equations.
inline Eigen::VectorXd intersection_argmax(const BallIntersection& bi, const Eigen::VectorXd& h)
{
    const int k = static_cast<int>(h.size());
    const int nb = static_cast<int>(bi.balls.size());
    const int max_active = std::min(nb, k);
    const double hn = h.norm();

    Eigen::VectorXd best;
    double best_val = -std::numeric_limits<double>::infinity();

    auto feasible = [&](const Eigen::VectorXd& u) {
        for (const auto& b : bi.balls)
            if ((u - b.center).norm() > b.radius * (1.0 + 1e-12))
                return false;
        return true;
    };
    auto consider = [&](const Eigen::VectorXd& u) {
        if (!feasible(u))
            return;
        const double v = u.dot(h);
        if (v > best_val) {
            best_val = v;
            best = u;
        }
    };

    std::vector<int> subset;
    for (std::uint32_t mask = 1; mask < (1u << nb); ++mask) {
        subset.clear();
        for (int j = 0; j < nb; ++j)
            if (mask & (1u << j))
                subset.push_back(j);
        const int s = static_cast<int>(subset.size());
        if (s > max_active)
            continue;
        const Ball& b0 = bi.balls[subset[0]];
        if (s == 1) {
            consider(b0.center + b0.radius * h / hn);
            continue;
        }
        Eigen::MatrixXd g(s - 1, k);
        Eigen::VectorXd rhs(s - 1);
        for (int l = 1; l < s; ++l) {
            const Ball& bl = bi.balls[subset[l]];
            g.row(l - 1) = 2.0 * (bl.center - b0.center).transpose();
            rhs[l - 1] = b0.radius * b0.radius - bl.radius * bl.radius + bl.center.squaredNorm() -
                         b0.center.squaredNorm();
        }
        const Eigen::MatrixXd ggt = g * g.transpose();
        Eigen::LDLT<Eigen::MatrixXd> ldlt(ggt);
        if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-12)
            continue;  // centers affinely dependent
        const Eigen::VectorXd m = b0.center + g.transpose() * ldlt.solve(rhs - g * b0.center);
        const double rho2 = b0.radius * b0.radius - (m - b0.center).squaredNorm();
        if (rho2 <= 0.0)
            continue;
        const Eigen::VectorXd ph = h - g.transpose() * ldlt.solve(g * h);
        const double phn = ph.norm();
        if (phn <= 1e-15 * hn)
            continue;
        consider(m + std::sqrt(rho2) * ph / phn);
    }
    if (best.size() == 0)
        throw DomainError("ball intersection: no feasible maximizer (empty or degenerate body)");
    return best;
}

}  // namespace detail

inline ConvexBody ConvexBody::ellipsoid(Eigen::MatrixXd shape, Eigen::VectorXd center, std::uint64_t seed)
{
    const int k = static_cast<int>(center.size());
    if (k < 1)
        throw BodyError("ellipsoid: empty center");
    detail::check_vector(center, k, "ellipsoid center");
    if (shape.rows() != k || shape.cols() != k || !shape.allFinite())
        throw BodyError("ellipsoid: shape matrix must be finite k x k");
    if ((shape - shape.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + shape.cwiseAbs().maxCoeff()))
        throw BodyError("ellipsoid: shape matrix must be symmetric");
    shape = 0.5 * (shape + shape.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(shape);
    if (es.eigenvalues().minCoeff() <= 0.0)
        throw BodyError("ellipsoid: shape matrix must be positive definite");
    Eigen::LLT<Eigen::MatrixXd> llt(shape);
    if (center.dot(llt.solve(center)) >= 1.0)
        throw BodyError("control set must contain the origin in its interior");
    ConvexBody b(Ellipsoid{std::move(center), std::move(shape)}, k);
    b.validate_origin_interior(seed);
    return b;
}

inline ConvexBody ConvexBody::lq_ball(double q, Eigen::VectorXd scale, Eigen::VectorXd center, std::uint64_t seed)
{
    const int k = static_cast<int>(center.size());
    if (!(q > 1.0) || !std::isfinite(q))
        throw BodyError("strict convexity required: l_q ball needs 1 < q < inf (q = 1 and q = inf are polytopes)");
    detail::check_vector(center, k, "lq_ball center");
    detail::check_vector(scale, k, "lq_ball scale");
    if (scale.minCoeff() <= 0.0)
        throw BodyError("lq_ball: scale entries must be positive");
    double s = 0.0;
    for (int i = 0; i < k; ++i)
        s += std::pow(std::abs(center[i] / scale[i]), q);
    if (std::pow(s, 1.0 / q) >= 1.0)
        throw BodyError("control set must contain the origin in its interior");
    ConvexBody b(LqBall{std::move(center), std::move(scale), q}, k);
    b.validate_origin_interior(seed);
    return b;
}

inline ConvexBody ConvexBody::ball_intersection(std::vector<Ball> balls, std::uint64_t seed)
{
    if (balls.empty())
        throw BodyError("ball_intersection: need at least one ball");
    if (balls.size() > 16)
        throw BodyError("ball_intersection: at most 16 balls");
    const int k = static_cast<int>(balls.front().center.size());
    for (const auto& b : balls) {
        detail::check_vector(b.center, k, "ball center");
        if (!(b.radius > 0.0) || !std::isfinite(b.radius))
            throw BodyError("ball_intersection: radii must be positive");
        if (b.center.norm() >= b.radius)
            throw BodyError("control set must contain the origin in its interior");
    }
    ConvexBody b(BallIntersection{std::move(balls)}, k);
    b.validate_origin_interior(seed);
    return b;
}

inline ConvexBody ConvexBody::polytope(const Eigen::MatrixXd&)
{
    throw BodyError(
        "strict convexity required: polytope control sets are not strictly convex and the "
        "vertical system has non-unique solutions (singular arcs joining bang-bang ones)");
}

inline std::string ConvexBody::kind() const
{
    return std::visit(
        [](const auto& b) -> std::string {
            using B = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<B, Ellipsoid>)
                return "ellipsoid";
            else if constexpr (std::is_same_v<B, LqBall>)
                return "lq_ball";
            else
                return "ball_intersection";
        },
        body_);
}

inline bool ConvexBody::is_unit_ball(double tol) const
{
    if (const auto* e = std::get_if<Ellipsoid>(&body_))
        return e->center.cwiseAbs().maxCoeff() <= tol &&
               (e->shape - Eigen::MatrixXd::Identity(k_, k_)).cwiseAbs().maxCoeff() <= tol;
    if (const auto* l = std::get_if<LqBall>(&body_))
        return std::abs(l->q - 2.0) <= tol && l->center.cwiseAbs().maxCoeff() <= tol &&
               (l->scale.array() - 1.0).abs().maxCoeff() <= tol;
    const auto& bi = std::get<BallIntersection>(body_);
    return bi.balls.size() == 1 && bi.balls[0].center.cwiseAbs().maxCoeff() <= tol &&
           std::abs(bi.balls[0].radius - 1.0) <= tol;
}

inline double ConvexBody::support(const Eigen::VectorXd& h) const
{
    if (h.size() != k_)
        throw InputError("support: dimension mismatch");
    if (!h.allFinite())
        throw InputError("support: non-finite direction");
    if (h.squaredNorm() == 0.0)
        return 0.0;
    return std::visit(
        [&](const auto& b) -> double {
            using B = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<B, Ellipsoid>)
                return detail::ellipsoid_support(b, h);
            else if constexpr (std::is_same_v<B, LqBall>)
                return b.center.dot(h) + detail::lq_dual_norm(b, h);
            else
                return detail::intersection_argmax(b, h).dot(h);
        },
        body_);
}

inline Eigen::VectorXd ConvexBody::grad_support(const Eigen::VectorXd& h) const
{
    if (h.size() != k_)
        throw InputError("grad_support: dimension mismatch");
    if (!h.allFinite())
        throw InputError("grad_support: non-finite direction");
    if (h.squaredNorm() == 0.0)
        throw DomainError("grad_support: gradient of the support function is undefined at h = 0");
    return std::visit(
        [&](const auto& b) -> Eigen::VectorXd {
            using B = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<B, Ellipsoid>)
                return detail::ellipsoid_grad(b, h);
            else if constexpr (std::is_same_v<B, LqBall>)
                return detail::lq_grad(b, h);
            else
                return detail::intersection_argmax(b, h);
        },
        body_);
}

inline double ConvexBody::gauge(const Eigen::VectorXd& u) const
{
    return std::visit(
        [&](const auto& b) -> double {
            using B = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<B, Ellipsoid>) {
                const Eigen::VectorXd v = u - b.center;
                return std::sqrt(v.dot(b.shape.llt().solve(v)));
            }
            else if constexpr (std::is_same_v<B, LqBall>) {
                const Eigen::VectorXd v = ((u - b.center).array() / b.scale.array()).abs().matrix();
                const double vmax = v.maxCoeff();
                if (vmax == 0.0)
                    return 0.0;
                double s = 0.0;
                for (int i = 0; i < v.size(); ++i)
                    s += std::pow(v[i] / vmax, b.q);
                return vmax * std::pow(s, 1.0 / b.q);
            }
            else {
                double g = 0.0;
                for (const auto& ball : b.balls)
                    g = std::max(g, (u - ball.center).norm() / ball.radius);
                return g;
            }
        },
        body_);
}

// Sampling check of H(h) > 0 on the 2k axis directions and 64 random ones.
inline void ConvexBody::validate_origin_interior(std::uint64_t seed) const
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    auto check = [&](const Eigen::VectorXd& h) {
        if (!(support(h) / h.norm() > 0.0))
            throw BodyError("control set must contain the origin in its interior");
    };
    for (int i = 0; i < k_; ++i)
        for (double sgn : {1.0, -1.0})
            check(sgn * Eigen::VectorXd::Unit(k_, i));
    for (int n = 0; n < 64; ++n) {
        Eigen::VectorXd h(k_);
        for (int i = 0; i < k_; ++i)
            h[i] = normal(rng);
        check(h);
    }
}

/// Scales the first layer by 1/H(h) so that H = 1; the second layer is kept.
inline CovectorPoint unit_level_normalize(const ConvexBody& body, const CovectorPoint& p)
{
    const double hv = body.support(p.h);
    if (!(hv > 0.0))
        throw NormalizationError("H(h) = 0: the abnormal case h = 0 cannot be normalized");
    return {p.h / hv, p.h2};
}

}  // namespace carnot
