#pragma once

// Vertical subsystem of the Pontryagin Hamiltonian system
//   h' = -M grad H(h),   h_ij' = 0,
// with integral monitoring, constant/periodic classification on 2-dim
// orbits, fixed-point set scans, the sub-Riemannian closed form and
// spectrum analysis, and horizontal curve reconstruction.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <boost/math/tools/minima.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "carnot/casimir.hpp"
#include "carnot/coadjoint.hpp"
#include "carnot/convex.hpp"
#include "carnot/errors.hpp"
#include "carnot/ode.hpp"
#include "carnot/parallel.hpp"

namespace carnot {

struct FlowTolerances {
    double step_tol = 1e-10;     // local error per step
    double fixed_point = 1e-10;  // |M grad H(p0)| <= fixed_point * (1 + |M|_F)
    double period = 1e-9;        // relative accuracy of the period
    double closure = 1e-7;       // |p(T) - p0| <= closure * |p0|
    double rank = kDefaultRankTol;
    double max_period_time = 1e5;     // give up period search after this time
    double recurrence_horizon = 100;  // integration time for orbits of dim >= 4
};

// ---------------------------------------------------------------------------
// Right-hand side

/// -M grad H(h) for the first layer; the second layer has zero derivative.
inline Eigen::VectorXd vertical_rhs(const Eigen::MatrixXd& m, const ConvexBody& body, const Eigen::VectorXd& h)
{
    if (h.squaredNorm() == 0.0)
        throw NormalizationError("vertical_rhs: h = 0 is the abnormal case");
    return -(m * body.grad_support(h));
}

inline Eigen::VectorXd vertical_rhs(const CovectorPoint& p, const ConvexBody& body)
{
    return vertical_rhs(m_matrix(p).matrix(), body, p.h);
}

inline double fixed_point_residual(const CovectorPoint& p, const ConvexBody& body)
{
    return vertical_rhs(p, body).norm();
}

inline bool is_fixed_point(const CovectorPoint& p, const ConvexBody& body, double tol)
{
    return fixed_point_residual(p, body) <= tol * (1.0 + m_matrix(p).matrix().norm());
}

// ---------------------------------------------------------------------------
// Trajectories

/// Maximum absolute deviation of each integral from its initial value.
struct Drift {
    double hamiltonian = 0.0;
    double second_layer = 0.0;          // zero by construction
    std::optional<double> casimir;      // odd k only
    std::vector<double> linear;         // one per kernel basis vector of M(p0)

    double max_linear() const
    {
        double m = 0.0;
        for (double v : linear)
            m = std::max(m, v);
        return m;
    }
};

struct IntegrateOptions {
    double step_tol = 1e-10;
    int samples = 1001;               // uniform in [0, T], endpoints included
    std::vector<double> sample_times;  // overrides `samples` when non-empty
    double rank_tol = kDefaultRankTol;
};

struct Trajectory {
    std::vector<double> times;
    std::vector<CovectorPoint> points;
    std::vector<Eigen::VectorXd> controls;
    Drift drift;
    Leaf leaf;                 // orbit of points[0]
    ConvexBody body;
    ode::DenseSolution dense;  // first layer

    int k() const { return body.k(); }

    CovectorPoint at(double t) const
    {
        if (dense.empty())
            return leaf.base;
        return {dense(t), leaf.base.h2};
    }

    Eigen::VectorXd control_at(double t) const { return body.grad_support(at(t).h); }
};

namespace detail {

struct InvariantMonitor {
    const ConvexBody& body;
    Eigen::MatrixXd kernel;
    std::optional<Eigen::VectorXd> a_vec;
    double h0_val;
    Eigen::VectorXd linear0;
    double c0 = 0.0;
    Drift drift;

    InvariantMonitor(const ConvexBody& b, const CovectorPoint& p0, const Leaf& l)
        : body(b), kernel(l.kernel), h0_val(b.support(p0.h))
    {
        linear0 = kernel.transpose() * p0.h;
        drift.linear.assign(static_cast<std::size_t>(kernel.cols()), 0.0);
        if (p0.k() % 2 == 1 && p0.k() <= kMaxCasimirGenerators) {
            a_vec = carnot::a_vector(p0);
            c0 = a_vec->dot(p0.h);
            drift.casimir = 0.0;
        }
    }

    void observe(const Eigen::VectorXd& h)
    {
        drift.hamiltonian = std::max(drift.hamiltonian, std::abs(body.support(h) - h0_val));
        if (kernel.cols() > 0) {
            const Eigen::VectorXd d = kernel.transpose() * h - linear0;
            for (Eigen::Index i = 0; i < d.size(); ++i)
                drift.linear[static_cast<std::size_t>(i)] = std::max(drift.linear[static_cast<std::size_t>(i)], std::abs(d[i]));
        }
        if (a_vec)
            drift.casimir = std::max(*drift.casimir, std::abs(a_vec->dot(h) - c0));
    }
};

inline std::vector<double> uniform_times(double horizon, int samples)
{
    std::vector<double> ts;
    if (samples < 2) {
        ts.push_back(horizon);
        return ts;
    }
    ts.reserve(static_cast<std::size_t>(samples));
    for (int i = 0; i < samples; ++i)
        ts.push_back(horizon * static_cast<double>(i) / static_cast<double>(samples - 1));
    ts.back() = horizon;
    return ts;
}

}  // namespace detail

/// Integrates the vertical subsystem on [0, horizon] with an adaptive
/// RK(4,5) pair, records samples, controls and the drift of H, h_ij, C (odd
/// k) and I_a for every kernel vector a of M(p0). The second layer is carried
/// as a constant.
inline Trajectory integrate(const CovectorPoint& p0, const ConvexBody& body, double horizon,
                            const IntegrateOptions& opt = {})
{
    if (!p0.finite())
        throw InputError("integrate: non-finite initial point");
    if (p0.k() != body.k())
        throw InputError("integrate: body dimension does not match k");
    if (!(horizon >= 0.0) || !std::isfinite(horizon))
        throw InputError("integrate: horizon must be finite and non-negative");
    if (!(body.support(p0.h) > 0.0))
        throw NormalizationError("integrate: H(p0) = 0 is the abnormal case");

    Trajectory tr{.times = {}, .points = {}, .controls = {}, .drift = {}, .leaf = leaf(p0, opt.rank_tol),
                  .body = body, .dense = {}};
    const Eigen::MatrixXd m = m_matrix(p0).matrix();
    detail::InvariantMonitor monitor(body, p0, tr.leaf);

    std::vector<double> ts = opt.sample_times.empty() ? detail::uniform_times(horizon, opt.samples) : opt.sample_times;
    for (std::size_t i = 1; i < ts.size(); ++i)
        if (!(ts[i] > ts[i - 1]))
            throw InputError("integrate: sample times must be strictly increasing");
    if (!ts.empty() && (ts.front() < 0.0 || ts.back() > horizon))
        throw InputError("integrate: sample times must lie in [0, horizon]");

    if (m.cwiseAbs().maxCoeff() == 0.0) {
        // M = 0: every solution is constant.
        for (double t : ts) {
            tr.times.push_back(t);
            tr.points.push_back(p0);
            tr.controls.push_back(body.grad_support(p0.h));
        }
        tr.drift = monitor.drift;
        return tr;
    }

    ode::Options o;
    o.rtol = o.atol = opt.step_tol;
    o.per_unit_step = true;
    const ode::Rhs f = [&](double, const Eigen::VectorXd& h) { return vertical_rhs(m, body, h); };
    tr.dense = ode::solve(f, 0.0, p0.h, horizon, o, [&](const ode::StepInfo& s) {
        monitor.observe(s.y);
        return true;
    });

    tr.times.reserve(ts.size());
    for (double t : ts) {
        const Eigen::VectorXd h = tr.dense.empty() ? p0.h : tr.dense(t);
        monitor.observe(h);
        tr.times.push_back(t);
        tr.points.emplace_back(h, p0.h2);
        tr.controls.push_back(body.grad_support(h));
    }
    tr.drift = monitor.drift;
    return tr;
}

// ---------------------------------------------------------------------------
// Period detection on 2-dim orbits

struct PeriodResult {
    double period = 0.0;
    double closure_residual = 0.0;      // |p(T) - p0|
    double half_period_distance = 0.0;  // |p(T/2) - p0|
    Eigen::Vector2d centroid;           // in leaf-plane coordinates
    int secant_iterations = 0;
};

namespace detail {

inline double wrap_angle(double a)
{
    constexpr double two_pi = 2.0 * std::numbers::pi;
    a = std::fmod(a + std::numbers::pi, two_pi);
    if (a < 0.0)
        a += two_pi;
    return a - std::numbers::pi;
}

}  // namespace detail

/// Period of the closed orbit through p0 on a 2-dim leaf. A coarse pass
/// accumulates the turning angle of the velocity (monotone on a strictly
/// convex curve) up to 2 pi; the winding angle about the centroid of that
/// coarse orbit is then located at 2 pi by secant (Illinois) iteration on the
/// dense output.
inline PeriodResult period_detect(const CovectorPoint& p0, const ConvexBody& body, const FlowTolerances& tol = {})
{
    constexpr double two_pi = 2.0 * std::numbers::pi;
    const Leaf l = leaf(p0, tol.rank);
    if (l.dim() != 2)
        throw UnsupportedError("period_detect: orbit dimension is " + std::to_string(l.dim()) + ", need 2");
    if (is_fixed_point(p0, body, tol.fixed_point))
        throw DetectionError("period_detect: initial point is a fixed point");

    const Eigen::MatrixXd m = m_matrix(p0).matrix();
    const Eigen::MatrixXd& dirs = l.directions;
    const ode::Rhs f = [&](double, const Eigen::VectorXd& h) { return vertical_rhs(m, body, h); };
    auto plane = [&](const Eigen::VectorXd& h) -> Eigen::Vector2d { return dirs.transpose() * (h - p0.h); };
    auto tangent_angle = [&](const Eigen::VectorXd& h) {
        const Eigen::Vector2d v = dirs.transpose() * f(0.0, h);
        return std::atan2(v[1], v[0]);
    };

    ode::Options o;
    o.rtol = o.atol = tol.step_tol;
    o.per_unit_step = true;

    // Coarse pass: turning angle of the velocity.
    double prev_angle = tangent_angle(p0.h);
    double turning = 0.0;
    double coarse_period = -1.0;
    const double stop_turning = two_pi + 0.5;
    const ode::DenseSolution sol = ode::solve(f, 0.0, p0.h, tol.max_period_time, o, [&](const ode::StepInfo& s) {
        const double a = tangent_angle(s.y);
        const double inc = detail::wrap_angle(a - prev_angle);
        const double before = std::abs(turning);
        turning += inc;
        prev_angle = a;
        if (coarse_period < 0.0 && std::abs(turning) >= two_pi) {
            const double frac = (two_pi - before) / std::max(std::abs(turning) - before, 1e-300);
            coarse_period = s.segment.t0 + std::clamp(frac, 0.0, 1.0) * s.segment.h;
        }
        return std::abs(turning) < stop_turning;
    });
    if (coarse_period < 0.0 || std::abs(turning) < stop_turning)
        throw DetectionError("period_detect: orbit did not close within max_period_time");

    // Centroid of the coarse orbit, in plane coordinates.
    Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
    const int nc = 512;
    for (int i = 0; i < nc; ++i)
        centroid += plane(sol(coarse_period * i / nc));
    centroid /= nc;

    auto angle_about = [&](const Eigen::VectorXd& h) {
        const Eigen::Vector2d d = plane(h) - centroid;
        return std::atan2(d[1], d[0]);
    };

    // Unwrapped winding at step endpoints.
    const double phi0 = angle_about(p0.h);
    double phi = 0.0;
    double last = phi0;
    int direction = 0;
    std::size_t hit = sol.segments().size();
    double phi_at_start = 0.0;
    for (std::size_t i = 0; i < sol.segments().size(); ++i) {
        const auto& seg = sol.segments()[i];
        const double a = angle_about(seg(seg.t1()));
        const double inc = detail::wrap_angle(a - last);
        last = a;
        const int sgn = inc > 0.0 ? 1 : (inc < 0.0 ? -1 : 0);
        if (direction == 0)
            direction = sgn;
        else if (sgn != 0 && sgn != direction && std::abs(inc) > 1e-12)
            throw DetectionError("period_detect: winding angle is not monotone (near-fixed-point data?)");
        if (std::abs(phi + inc) >= two_pi) {
            hit = i;
            phi_at_start = phi;
            break;
        }
        phi += inc;
    }
    if (hit == sol.segments().size() || direction == 0)
        throw DetectionError("period_detect: winding did not reach 2 pi");

    // Secant (Illinois) on g(t) = |phi(t) - phi(0)| - 2 pi inside the segment.
    const auto& seg = sol.segments()[hit];
    const double a_start = angle_about(seg(seg.t0));
    auto g = [&](double t) {
        const double w = phi_at_start + detail::wrap_angle(angle_about(seg(t)) - a_start);
        return std::abs(w) - two_pi;
    };
    double ta = seg.t0, tb = seg.t1();
    double ga = g(ta), gb = g(tb);
    int side = 0;
    int iters = 0;
    double tc = tb;
    for (; iters < 200; ++iters) {
        tc = (ta * gb - tb * ga) / (gb - ga);
        const double gc = g(tc);
        if (gc == 0.0 || (tb - ta) <= tol.period * tc)
            break;
        if ((gc > 0.0) == (gb > 0.0)) {
            tb = tc;
            gb = gc;
            if (side == -1)
                ga *= 0.5;
            side = -1;
        }
        else {
            ta = tc;
            ga = gc;
            if (side == 1)
                gb *= 0.5;
            side = 1;
        }
        if (std::abs(tb - ta) <= tol.period * tc)
            break;
    }

    PeriodResult r;
    r.period = tc;
    r.centroid = centroid;
    r.secant_iterations = iters;
    r.closure_residual = (sol(tc) - p0.h).norm();
    r.half_period_distance = (sol(0.5 * tc) - p0.h).norm();
    if (r.closure_residual > tol.closure * p0.flat().norm())
        throw DetectionError("period_detect: closure check failed, |p(T) - p0| = " +
                             std::to_string(r.closure_residual));
    return r;
}

// ---------------------------------------------------------------------------
// Classification

enum class OrbitKind { constant, periodic, unresolved_high_dim };

inline std::string to_string(OrbitKind k)
{
    switch (k) {
    case OrbitKind::constant:
        return "constant";
    case OrbitKind::periodic:
        return "periodic";
    case OrbitKind::unresolved_high_dim:
        return "unresolved_high_dim";
    }
    return "unknown";
}

struct Classification {
    OrbitKind kind = OrbitKind::constant;
    std::optional<double> period;
    double fixed_point_residual = 0.0;
    int orbit_dim = 0;
    std::optional<double> closure_residual;
    std::optional<double> half_period_distance;
    std::optional<double> min_return_distance;  // orbits of dim >= 4
    bool conditioning_warning = false;
};

/// Sampled minimum of |p(t) - p0| over t in [t_min, horizon], each segment
/// probed at its endpoints and three interior points.
inline double min_return_distance(const Trajectory& tr, double t_min)
{
    double best = std::numeric_limits<double>::infinity();
    const Eigen::VectorXd& h0 = tr.leaf.base.h;
    for (const auto& seg : tr.dense.segments()) {
        if (seg.t1() < t_min)
            continue;
        for (int j = 0; j <= 4; ++j) {
            const double t = seg.t0 + seg.h * j / 4.0;
            if (t >= t_min)
                best = std::min(best, (seg(t) - h0).norm());
        }
    }
    return best;
}

/// Constant / periodic dichotomy on orbits of dim 0 and 2; orbits of dim >= 4
/// are integrated over `recurrence_horizon` and only measured.
inline Classification classify(const CovectorPoint& p0, const ConvexBody& body, const FlowTolerances& tol = {})
{
    Classification c;
    const SkewMatrix m = m_matrix(p0);
    const RankKernel rk = rank_and_kernel(m, tol.rank);
    c.orbit_dim = rk.rank;
    c.conditioning_warning = rk.conditioning_warning;
    c.fixed_point_residual = fixed_point_residual(p0, body);

    if (c.orbit_dim == 0) {
        c.kind = OrbitKind::constant;
        return c;
    }
    if (c.orbit_dim == 2) {
        if (c.fixed_point_residual <= tol.fixed_point * (1.0 + m.matrix().norm())) {
            c.kind = OrbitKind::constant;
            return c;
        }
        const PeriodResult pr = period_detect(p0, body, tol);
        c.kind = OrbitKind::periodic;
        c.period = pr.period;
        c.closure_residual = pr.closure_residual;
        c.half_period_distance = pr.half_period_distance;
        return c;
    }
    c.kind = OrbitKind::unresolved_high_dim;
    IntegrateOptions io;
    io.step_tol = tol.step_tol;
    io.samples = 2;
    io.rank_tol = tol.rank;
    const Trajectory tr = integrate(p0, body, tol.recurrence_horizon, io);
    c.min_return_distance = min_return_distance(tr, std::min(1.0, tol.recurrence_horizon));
    return c;
}

// ---------------------------------------------------------------------------
// Fixed-point set D0 on a 2-dim leaf

struct D0Options {
    int resolution = 101;  // grid points per axis
    double radius = 2.0;   // half-width of the scan square around the base point
    double tol = 1e-9;     // |projected M grad H| <= tol * (1 + |M|_F)
    double h_floor = 1e-6; // skip points with H < h_floor (abnormal locus)
    int max_descent_iterations = 20000;
};

struct D0Estimate {
    std::vector<Eigen::Vector2d> marked;  // grid points (leaf coordinates) with vanishing residual
    Eigen::Vector2d argmin;               // minimizer of H on the leaf
    double h_min = 0.0;
    bool argmin_abnormal = false;         // H_min < h_floor: the origin h = 0
    std::vector<Eigen::Vector2d> hull;    // convex hull of marked + argmin
    double diameter = 0.0;
    double width = 0.0;
    double spacing = 0.0;
    double thickness_threshold = 0.0;     // 2 * spacing
    int dimension = 0;
    bool sufficient = true;               // false if nothing was found in the scan window
};

namespace detail {

inline double cross(const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b)
{
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

// Andrew's monotone chain.
inline std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> pts)
{
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
        return a[0] < b[0] || (a[0] == b[0] && a[1] < b[1]);
    });
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    if (pts.size() < 3)
        return pts;
    std::vector<Eigen::Vector2d> h(2 * pts.size());
    std::size_t n = 0;
    for (const auto& p : pts) {
        while (n >= 2 && cross(h[n - 2], h[n - 1], p) <= 0.0)
            --n;
        h[n++] = p;
    }
    for (std::size_t i = pts.size() - 1, lo = n + 1; i-- > 0;) {
        while (n >= lo && cross(h[n - 2], h[n - 1], pts[i]) <= 0.0)
            --n;
        h[n++] = pts[i];
    }
    h.resize(n - 1);
    return h;
}

inline std::pair<double, double> diameter_and_width(const std::vector<Eigen::Vector2d>& hull)
{
    double diam = 0.0;
    for (std::size_t i = 0; i < hull.size(); ++i)
        for (std::size_t j = i + 1; j < hull.size(); ++j)
            diam = std::max(diam, (hull[i] - hull[j]).norm());
    if (hull.size() < 3)
        return {diam, 0.0};
    double width = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const Eigen::Vector2d& a = hull[i];
        const Eigen::Vector2d& b = hull[(i + 1) % hull.size()];
        const double len = (b - a).norm();
        if (len == 0.0)
            continue;
        double far = 0.0;
        for (const auto& p : hull)
            far = std::max(far, std::abs(cross(a, b, p)) / len);
        width = std::min(width, far);
    }
    return {diam, width};
}

}  // namespace detail

/// Minimizer of H over the leaf plane by gradient descent with Armijo
/// backtracking. On a 2-dim leaf the minimizers are exactly the fixed points
/// (grad H in ker M), or h = 0 when the leaf passes through the origin.
inline std::pair<Eigen::Vector2d, double> leaf_argmin(const Leaf& l, const ConvexBody& body, double h_floor = 1e-6,
                                                      int max_iterations = 20000)
{
    if (l.dim() != 2)
        throw UnsupportedError("leaf_argmin: need a 2-dim leaf");
    auto value = [&](const Eigen::Vector2d& y) { return body.support(l.point(y).h); };
    Eigen::Vector2d y = Eigen::Vector2d::Zero();
    double fy = value(y);
    double step = 1.0;
    for (int it = 0; it < max_iterations && fy >= 0.1 * h_floor; ++it) {
        const Eigen::VectorXd h = l.point(y).h;
        if (h.squaredNorm() == 0.0)
            break;
        const Eigen::Vector2d g = l.directions.transpose() * body.grad_support(h);
        const double gn2 = g.squaredNorm();
        if (gn2 <= 1e-30)
            break;
        step *= 2.0;
        while (step > 1e-18) {
            const Eigen::Vector2d yn = y - step * g;
            const double fn = value(yn);
            if (fn <= fy - 1e-4 * step * gn2) {
                y = yn;
                fy = fn;
                break;
            }
            step *= 0.5;
        }
        if (step <= 1e-18)
            break;
    }
    return {y, fy};
}

/// Grid scan of the fixed-point set D0 on a 2-dim leaf, plus the minimizer of
/// H on the leaf. Dimension is judged from the convex hull of the found
/// points: diameter <= 2*spacing -> 0, width <= 2*spacing -> 1, else 2.
inline D0Estimate d0_estimate(const Leaf& l, const ConvexBody& body, const D0Options& opt = {})
{
    if (l.dim() != 2)
        throw UnsupportedError("d0_estimate: leaf dimension is " + std::to_string(l.dim()) + ", need 2");
    if (opt.resolution < 2 || !(opt.radius > 0.0))
        throw InputError("d0_estimate: need resolution >= 2 and radius > 0");

    const Eigen::MatrixXd m = m_matrix(l.base).matrix();
    const double thr = opt.tol * (1.0 + m.norm());
    const int n = opt.resolution;
    D0Estimate est;
    est.spacing = 2.0 * opt.radius / (n - 1);
    est.thickness_threshold = 2.0 * est.spacing;

    std::vector<char> flag(static_cast<std::size_t>(n) * n, 0);
    parallel_for(static_cast<std::size_t>(n) * n, [&](std::size_t idx) {
        const int i = static_cast<int>(idx) / n;
        const int j = static_cast<int>(idx) % n;
        const Eigen::Vector2d y(-opt.radius + i * est.spacing, -opt.radius + j * est.spacing);
        const Eigen::VectorXd h = l.point(y).h;
        if (body.support(h) < opt.h_floor)
            return;
        const Eigen::Vector2d r = l.directions.transpose() * (m * body.grad_support(h));
        if (r.norm() <= thr)
            flag[idx] = 1;
    });
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (flag[static_cast<std::size_t>(i) * n + j])
                est.marked.emplace_back(-opt.radius + i * est.spacing, -opt.radius + j * est.spacing);

    auto [y, fy] = leaf_argmin(l, body, opt.h_floor, opt.max_descent_iterations);
    est.argmin = y;
    est.h_min = fy;
    est.argmin_abnormal = fy < opt.h_floor;
    est.sufficient = !est.marked.empty() || y.cwiseAbs().maxCoeff() <= opt.radius;

    std::vector<Eigen::Vector2d> pts = est.marked;
    pts.push_back(y);
    est.hull = detail::convex_hull(pts);
    std::tie(est.diameter, est.width) = detail::diameter_and_width(est.hull);
    if (est.diameter <= est.thickness_threshold)
        est.dimension = 0;
    else if (est.width <= est.thickness_threshold)
        est.dimension = 1;
    else
        est.dimension = 2;
    return est;
}

// ---------------------------------------------------------------------------
// Sub-Riemannian closed form and spectrum

/// e^{-rate t M} h(p0), second layer unchanged. rate = 1 is the flow of
/// H = |h| on the unit level; rate = 2 corresponds to H = |h|^2 / 2.
inline CovectorPoint sr_closed_form(const CovectorPoint& p0, double t, double rate = 1.0)
{
    const Eigen::MatrixXd m = m_matrix(p0).matrix();
    const Eigen::MatrixXd e = (-rate * t * m).exp();
    return {e * p0.h, p0.h2};
}

/// Checked variant: requires the centered unit ball and H(p0) = 1.
inline CovectorPoint sr_closed_form(const ConvexBody& body, const CovectorPoint& p0, double t, double rate = 1.0)
{
    if (!body.is_unit_ball())
        throw UnsupportedError("sr_closed_form: only the centered Euclidean unit ball has this closed form");
    if (std::abs(body.support(p0.h) - 1.0) > 1e-9)
        throw DomainError("sr_closed_form: initial point must satisfy H = 1");
    return sr_closed_form(p0, t, rate);
}

struct SpectrumReport {
    std::vector<double> frequencies;  // alpha_1 >= ... >= alpha_n > 0
    int zero_multiplicity = 0;        // k - 2n
    bool commensurable = false;
    std::vector<int> multipliers;     // m_j with m_j alpha_j = m_1 alpha_1
    std::optional<double> common_period;
    int max_multiplier = 64;
    double tol = 1e-9;
};

/// Invariant 2-planes of M: M e = alpha f, M f = -alpha e.
struct InvariantPlane {
    double alpha;
    Eigen::VectorXd e;
    Eigen::VectorXd f;
};

inline std::vector<InvariantPlane> invariant_planes(const SkewMatrix& sm, double zero_tol = 1e-9)
{
    const Eigen::MatrixXd& m = sm.matrix();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.transpose() * m);
    const Eigen::VectorXd& ev = es.eigenvalues();  // ascending
    const int k = sm.k();
    const double lmax = std::max(ev[k - 1], 0.0);
    std::vector<InvariantPlane> planes;
    std::vector<Eigen::VectorXd> used;
    for (int i = k - 1; i >= 1; i -= 2) {
        const double lam = 0.5 * (ev[i] + ev[i - 1]);
        if (lmax == 0.0 || lam <= zero_tol * zero_tol * lmax || lam <= 0.0)
            break;
        const double alpha = std::sqrt(lam);
        Eigen::VectorXd e = es.eigenvectors().col(i);
        for (const auto& u : used)
            e -= u.dot(e) * u;
        e.normalize();
        Eigen::VectorXd f = m * e;
        for (const auto& u : used)
            f -= u.dot(f) * u;
        f -= e.dot(f) * e;
        f.normalize();
        used.push_back(e);
        used.push_back(f);
        planes.push_back({alpha, e, f});
    }
    return planes;
}

/// Eigenfrequencies of M (eigenvalues +-i alpha_j and zeros) and a
/// commensurability test: integers 1 <= m_j <= max_multiplier with
/// |m_j alpha_j - m_1 alpha_1| <= tol * alpha_1 for all j.
inline SpectrumReport spectrum(const SkewMatrix& m, double tol = 1e-9, int max_multiplier = 64)
{
    SpectrumReport r;
    r.tol = tol;
    r.max_multiplier = max_multiplier;
    for (const auto& p : invariant_planes(m))
        r.frequencies.push_back(p.alpha);
    std::sort(r.frequencies.rbegin(), r.frequencies.rend());
    const int n = static_cast<int>(r.frequencies.size());
    r.zero_multiplicity = m.k() - 2 * n;
    if (n == 0)
        return r;  // M = 0: constant flow, no period to report
    const double a1 = r.frequencies[0];
    for (int m1 = 1; m1 <= max_multiplier && !r.commensurable; ++m1) {
        std::vector<int> mult{m1};
        bool ok = true;
        for (int j = 1; j < n && ok; ++j) {
            const long mj = std::lround(m1 * a1 / r.frequencies[j]);
            ok = mj >= 1 && mj <= max_multiplier &&
                 std::abs(static_cast<double>(mj) * r.frequencies[j] - m1 * a1) <= tol * a1;
            mult.push_back(static_cast<int>(mj));
        }
        if (ok) {
            r.commensurable = true;
            r.multipliers = mult;
            r.common_period = 2.0 * std::numbers::pi * m1 / a1;
        }
    }
    return r;
}

/// |e^{-rate t M} h0 - h0| evaluated through the invariant planes.
struct SrRecurrence {
    std::vector<double> alphas;
    std::vector<double> radii2;  // squared radius of h0 in each plane
    double rate = 1.0;

    SrRecurrence(const CovectorPoint& p0, double r) : rate(r)
    {
        for (const auto& pl : invariant_planes(m_matrix(p0))) {
            alphas.push_back(pl.alpha);
            const double x = pl.e.dot(p0.h), y = pl.f.dot(p0.h);
            radii2.push_back(x * x + y * y);
        }
    }

    double distance(double t) const
    {
        double s = 0.0;
        for (std::size_t j = 0; j < alphas.size(); ++j)
            s += radii2[j] * 2.0 * (1.0 - std::cos(rate * alphas[j] * t));
        return std::sqrt(std::max(s, 0.0));
    }
};

struct RecurrenceSummary {
    double min_distance = std::numeric_limits<double>::infinity();
    double argmin_time = 0.0;
    double t_min = 0.0;
    double t_max = 0.0;
};

/// Minimum of |p(t) - p0| over [t_min, t_max] for the sub-Riemannian flow:
/// dense scan at 1/64 of the fastest period, every sampled local minimum that
/// could beat the current best is refined with Brent's method.
inline RecurrenceSummary sr_min_return_distance(const CovectorPoint& p0, double t_min, double t_max, double rate = 1.0)
{
    const SrRecurrence rec(p0, rate);
    RecurrenceSummary out;
    out.t_min = t_min;
    out.t_max = t_max;
    if (rec.alphas.empty()) {
        out.min_distance = 0.0;
        out.argmin_time = t_min;
        return out;
    }
    double amax = 0.0, rmax = 0.0;
    for (std::size_t j = 0; j < rec.alphas.size(); ++j) {
        amax = std::max(amax, rec.alphas[j]);
        rmax = std::max(rmax, std::sqrt(rec.radii2[j]));
    }
    const double dt = 2.0 * std::numbers::pi / (rate * amax) / 64.0;
    // |d/dt distance| <= sum r_j alpha_j rate; bound on scan error per half-step
    double lip = 0.0;
    for (std::size_t j = 0; j < rec.alphas.size(); ++j)
        lip += std::sqrt(rec.radii2[j]) * rec.alphas[j] * rate;
    const double slack = lip * dt;

    const long n = static_cast<long>(std::ceil((t_max - t_min) / dt));
    std::vector<double> d(static_cast<std::size_t>(n + 1));
    for (long i = 0; i <= n; ++i)
        d[static_cast<std::size_t>(i)] = rec.distance(std::min(t_min + i * dt, t_max));
    double best_sampled = *std::min_element(d.begin(), d.end());
    out.min_distance = best_sampled;
    out.argmin_time = t_min + static_cast<double>(std::min_element(d.begin(), d.end()) - d.begin()) * dt;
    for (long i = 0; i <= n; ++i) {
        const double v = d[static_cast<std::size_t>(i)];
        if (v > out.min_distance + slack)
            continue;
        const bool left = i == 0 || d[static_cast<std::size_t>(i - 1)] >= v;
        const bool right = i == n || d[static_cast<std::size_t>(i + 1)] >= v;
        if (!(left && right))
            continue;
        const double lo = std::max(t_min, t_min + (i - 1) * dt);
        const double hi = std::min(t_max, t_min + (i + 1) * dt);
        auto res = boost::math::tools::brent_find_minima([&](double t) { return rec.distance(t); }, lo, hi, 52);
        if (res.second < out.min_distance) {
            out.min_distance = res.second;
            out.argmin_time = res.first;
        }
    }
    return out;
}

/// Occupancy of the angle pair (phase in the first two invariant planes) on
/// a bins x bins grid of the 2-torus, sampled every dt on [0, t_max]. The
/// phases advance linearly, phi_j(t) = phi_j(0) - rate alpha_j t.
inline std::vector<long> torus_occupancy(const CovectorPoint& p0, double t_max, double rate = 1.0, int bins = 32,
                                         double dt = 0.1)
{
    const auto planes = invariant_planes(m_matrix(p0));
    if (planes.size() < 2)
        throw UnsupportedError("torus_occupancy: need at least two nonzero frequencies");
    if (bins < 1 || !(dt > 0.0) || !(t_max >= 0.0))
        throw InputError("torus_occupancy: need bins >= 1, dt > 0, t_max >= 0");
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double phase0[2], speed[2];
    for (int j = 0; j < 2; ++j) {
        const auto& pl = planes[static_cast<std::size_t>(j)];
        phase0[j] = std::atan2(pl.f.dot(p0.h), pl.e.dot(p0.h));
        speed[j] = -rate * pl.alpha;
    }
    std::vector<long> counts(static_cast<std::size_t>(bins) * bins, 0);
    const long n = static_cast<long>(std::floor(t_max / dt));
    for (long i = 0; i <= n; ++i) {
        const double t = static_cast<double>(i) * dt;
        int idx[2];
        for (int j = 0; j < 2; ++j) {
            double a = std::fmod(phase0[j] + speed[j] * t, two_pi);
            if (a < 0.0)
                a += two_pi;
            idx[j] = std::min(bins - 1, static_cast<int>(a / two_pi * bins));
        }
        ++counts[static_cast<std::size_t>(idx[0]) * bins + idx[1]];
    }
    return counts;
}

// ---------------------------------------------------------------------------
// Horizontal curve

struct HorizontalCurve {
    std::vector<double> times;
    std::vector<GroupPoint> points;
    ode::DenseSolution dense;  // flat (x, x2)
};

/// Integrates q' = sum u_i X_i from the identity with u(t) = grad H(p(t)):
///   x_i' = u_i,  x_ij' = (x_i u_j - x_j u_i) / 2.
inline HorizontalCurve horizontal_reconstruct(const Trajectory& tr, double step_tol = 1e-10)
{
    const AlgebraShape s(tr.k());
    const int k = s.k();
    HorizontalCurve hc;
    if (tr.times.empty())
        return hc;
    const double horizon = tr.times.back();
    const ode::Rhs f = [&](double t, const Eigen::VectorXd& x) {
        const Eigen::VectorXd u = tr.control_at(t);
        Eigen::VectorXd dx(s.dim_total());
        dx.head(k) = u;
        for (int i = 1; i <= k; ++i)
            for (int j = i + 1; j <= k; ++j)
                dx[k + pair_index(s, i, j)] = 0.5 * (x[i - 1] * u[j - 1] - x[j - 1] * u[i - 1]);
        return dx;
    };
    ode::Options o;
    o.rtol = o.atol = step_tol;
    o.per_unit_step = true;
    // Keep steps inside the trajectory's own steps so the control stays smooth per step.
    if (!tr.dense.empty()) {
        double hmax = 0.0;
        for (const auto& seg : tr.dense.segments())
            hmax = std::max(hmax, seg.h);
        o.max_step = hmax;
    }
    const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(s.dim_total());
    hc.dense = ode::solve(f, 0.0, x0, horizon, o);
    for (double t : tr.times) {
        const Eigen::VectorXd x = hc.dense.empty() ? x0 : hc.dense(t);
        hc.times.push_back(t);
        hc.points.push_back({x.head(k), x.tail(s.dim_second())});
    }
    return hc;
}

}  // namespace carnot
