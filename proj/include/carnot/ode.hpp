#pragma once

// Dormand-Prince 5(4) with PI step-size control and the standard quartic
// continuous extension (Hairer, Norsett & Wanner, "Solving ODE I", DOPRI5).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "carnot/errors.hpp"

namespace carnot::ode {

struct Options {
    double rtol = 1e-10;
    double atol = 1e-10;
    double initial_step = 0.0;  // 0: automatic
    double max_step = std::numeric_limits<double>::infinity();
    long max_steps = 10'000'000;
    // Bound the local error by tol * clamp(h, unit_step_floor, 1) instead of
    // tol, so that the global error grows like tol * T rather than tol times
    // the number of steps. The floor keeps steps across points where f is only
    // Holder continuous from collapsing.
    bool per_unit_step = false;
    double unit_step_floor = 1e-4;
};

/// One accepted step with its dense-output coefficients.
struct Segment {
    double t0 = 0.0;
    double h = 0.0;
    Eigen::VectorXd r1, r2, r3, r4, r5;

    double t1() const noexcept { return t0 + h; }

    Eigen::VectorXd operator()(double t) const
    {
        const double th = (t - t0) / h;
        const double th1 = 1.0 - th;
        return r1 + th * (r2 + th1 * (r3 + th * (r4 + th1 * r5)));
    }
};

/// Piecewise-polynomial solution assembled from accepted steps.
class DenseSolution {
public:
    void push(Segment s) { segments_.push_back(std::move(s)); }

    bool empty() const noexcept { return segments_.empty(); }
    double t_begin() const { return segments_.front().t0; }
    double t_end() const { return segments_.back().t1(); }
    const std::vector<Segment>& segments() const noexcept { return segments_; }

    Eigen::VectorXd operator()(double t) const
    {
        if (segments_.empty())
            throw Error("DenseSolution: empty");
        auto it = std::upper_bound(segments_.begin(), segments_.end(), t,
                                   [](double v, const Segment& s) { return v < s.t1(); });
        if (it == segments_.end())
            it = std::prev(segments_.end());
        return (*it)(t);
    }

private:
    std::vector<Segment> segments_;
};

struct StepInfo {
    double t;
    const Eigen::VectorXd& y;
    const Segment& segment;
};

namespace tableau {
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                        a65 = -5103.0 / 18656;
inline constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                        a76 = 11.0 / 84;
inline constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                        e6 = 22.0 / 525, e7 = -1.0 / 40;
inline constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                        d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                        d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
}  // namespace tableau

using Rhs = std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>;

/// Integrates y' = f(t, y) from t0 to t1 (t1 > t0). `on_step` is called after
/// every accepted step and may return false to stop early. Throws
/// IntegrationError on step-size underflow or step-count exhaustion.
template <class OnStep>
DenseSolution solve(const Rhs& f, double t0, const Eigen::VectorXd& y0, double t1, const Options& opt,
                    OnStep&& on_step)
{
    using namespace tableau;
    if (!(t1 >= t0))
        throw Error("ode::solve: only forward integration is supported");
    DenseSolution sol;
    if (t1 == t0)
        return sol;

    const double safe = 0.9, facl = 0.2, facr = 10.0, beta = 0.04;
    const double expo1 = (opt.per_unit_step ? 0.25 : 0.2) - beta * 0.75;
    double facold = 1e-4;

    Eigen::VectorXd y = y0;
    Eigen::VectorXd k1 = f(t0, y);
    const auto n = y.size();

    auto err_norm = [&](const Eigen::VectorXd& e, const Eigen::VectorXd& ya, const Eigen::VectorXd& yb) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double sk = opt.atol + opt.rtol * std::max(std::abs(ya[i]), std::abs(yb[i]));
            s += (e[i] / sk) * (e[i] / sk);
        }
        return std::sqrt(s / static_cast<double>(n));
    };

    double h = opt.initial_step;
    if (h <= 0.0) {
        // Hairer's initial step heuristic
        const Eigen::VectorXd sc = (opt.atol + opt.rtol * y.array().abs()).matrix();
        const double dnf = (k1.array() / sc.array()).square().sum() / static_cast<double>(n);
        const double dny = (y.array() / sc.array()).square().sum() / static_cast<double>(n);
        h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : std::sqrt(dny / dnf) * 0.01;
        h = std::min(h, opt.max_step);
        const Eigen::VectorXd k2 = f(t0 + h, y + h * k1);
        const double der2 = std::sqrt(((k2 - k1).array() / sc.array()).square().sum() / static_cast<double>(n)) / h;
        const double der12 = std::max(std::abs(der2), std::sqrt(dnf));
        const double h1 = der12 <= 1e-15 ? std::max(1e-6, std::abs(h) * 1e-3) : std::pow(0.01 / der12, 0.2);
        h = std::min({100.0 * std::abs(h), h1, opt.max_step});
    }

    double t = t0;
    bool reject = false;
    long steps = 0;
    while (t < t1) {
        if (++steps > opt.max_steps)
            throw IntegrationError("ode::solve: maximum number of steps exceeded", t);
        if (h < 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t)))
            throw IntegrationError("ode::solve: step size underflow", t);
        bool last = false;
        if (t + 1.01 * h >= t1) {
            h = t1 - t;
            last = true;
        }
        const Eigen::VectorXd k2 = f(t + c2 * h, y + h * a21 * k1);
        const Eigen::VectorXd k3 = f(t + c3 * h, y + h * (a31 * k1 + a32 * k2));
        const Eigen::VectorXd k4 = f(t + c4 * h, y + h * (a41 * k1 + a42 * k2 + a43 * k3));
        const Eigen::VectorXd k5 = f(t + c5 * h, y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
        const Eigen::VectorXd y6 = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
        const Eigen::VectorXd k6 = f(t + h, y6);
        const Eigen::VectorXd ynew = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
        const Eigen::VectorXd k7 = f(t + h, ynew);
        const Eigen::VectorXd e = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
        const double err = err_norm(e, y, ynew) / (opt.per_unit_step ? std::clamp(h, opt.unit_step_floor, 1.0) : 1.0);

        if (!std::isfinite(err))
            throw IntegrationError("ode::solve: non-finite error estimate", t);

        const double fac11 = std::pow(err, expo1);
        double fac = fac11 / std::pow(facold, beta);
        fac = std::clamp(fac / safe, 1.0 / facr, 1.0 / facl);
        double hnew = h / fac;

        if (err <= 1.0) {
            facold = std::max(err, 1e-4);
            Segment seg;
            seg.t0 = t;
            seg.h = h;
            seg.r1 = y;
            seg.r2 = ynew - y;
            seg.r3 = h * k1 - seg.r2;
            seg.r4 = seg.r2 - h * k7 - seg.r3;
            seg.r5 = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);

            t = last ? t1 : t + h;
            y = ynew;
            k1 = k7;
            sol.push(std::move(seg));
            if (!on_step(StepInfo{t, y, sol.segments().back()}))
                return sol;
            if (std::abs(hnew) > opt.max_step)
                hnew = opt.max_step;
            if (reject)
                hnew = std::min(std::abs(hnew), std::abs(h));
            reject = false;
            if (last)
                break;
        }
        else {
            hnew = h / std::min(1.0 / facl, fac11 / safe);
            reject = true;
        }
        h = hnew;
    }
    return sol;
}

inline DenseSolution solve(const Rhs& f, double t0, const Eigen::VectorXd& y0, double t1, const Options& opt)
{
    return solve(f, t0, y0, t1, opt, [](const StepInfo&) { return true; });
}

}  // namespace carnot::ode
