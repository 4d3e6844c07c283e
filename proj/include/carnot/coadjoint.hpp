#pragma once

// Points of the Lie coalgebra, the Poisson bivector matrix M and coadjoint
// orbits realized as affine subspaces.
//
// The orbit through p0 is
//   { p : h_ij(p) = h_ij(p0),  <a, h(p)> = <a, h(p0)> for all a in ker M(p0) },
// an affine subspace of even dimension rank M(p0).

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "carnot/algebra.hpp"
#include "carnot/errors.hpp"

namespace carnot {

inline constexpr double kDefaultRankTol = 1e-9;

struct CovectorPoint {
    Eigen::VectorXd h;   // h_1 .. h_k
    Eigen::VectorXd h2;  // h_ij, i < j, lexicographic

    CovectorPoint() = default;
    CovectorPoint(Eigen::VectorXd first, Eigen::VectorXd second)
        : h(std::move(first)), h2(std::move(second))
    {
        const auto k = h.size();
        if (k < 2 || h2.size() != k * (k - 1) / 2)
            throw InputError("CovectorPoint: h2 must have k(k-1)/2 entries");
    }

    static CovectorPoint zero(const AlgebraShape& s)
    {
        return {Eigen::VectorXd::Zero(s.dim_first()), Eigen::VectorXd::Zero(s.dim_second())};
    }

    int k() const noexcept { return static_cast<int>(h.size()); }
    AlgebraShape shape() const { return AlgebraShape(k()); }

    bool finite() const { return h.allFinite() && h2.allFinite(); }

    Eigen::VectorXd flat() const
    {
        Eigen::VectorXd out(h.size() + h2.size());
        out << h, h2;
        return out;
    }
};

/// Skew-symmetric k x k matrix. Only constructible from second-layer
/// coordinates, so m^T = -m holds exactly.
class SkewMatrix {
public:
    explicit SkewMatrix(const Eigen::VectorXd& h2)
    {
        const int k = static_cast<int>(std::lround((1.0 + std::sqrt(1.0 + 8.0 * h2.size())) / 2.0));
        if (k * (k - 1) / 2 != h2.size() || k < 2)
            throw InputError("SkewMatrix: h2 length is not k(k-1)/2");
        m_ = Eigen::MatrixXd::Zero(k, k);
        const AlgebraShape s(k);
        for (int i = 1; i <= k; ++i)
            for (int j = i + 1; j <= k; ++j) {
                const double v = h2[pair_index(s, i, j)];
                m_(i - 1, j - 1) = v;
                m_(j - 1, i - 1) = -v;
            }
    }

    const Eigen::MatrixXd& matrix() const noexcept { return m_; }
    int k() const noexcept { return static_cast<int>(m_.rows()); }
    double operator()(int r, int c) const { return m_(r, c); }

private:
    Eigen::MatrixXd m_;
};

/// M = (h_ij): entry (i,j) = h_ij for i < j, -h_ji for i > j.
inline SkewMatrix m_matrix(const CovectorPoint& p) { return SkewMatrix(p.h2); }

struct RankKernel {
    int rank = 0;
    Eigen::MatrixXd kernel;  // k x (k - rank), orthonormal columns
    Eigen::MatrixXd range;   // k x rank, orthonormal columns spanning the row space
    bool conditioning_warning = false;  // thresholded rank was odd and repaired downward
};

/// Rank and kernel via SVD. Singular values below tol * sigma_max count as
/// zero; an odd count is decremented (skew matrices have even rank).
inline RankKernel rank_and_kernel(const SkewMatrix& m, double tol = kDefaultRankTol)
{
    if (!(tol > 0.0 && tol < 1.0))
        throw InputError("rank_and_kernel: tol must lie in (0, 1)");
    const Eigen::MatrixXd& a = m.matrix();
    if (!a.allFinite())
        throw InputError("rank_and_kernel: non-finite matrix entries");
    const int k = m.k();

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::VectorXd& sv = svd.singularValues();
    RankKernel out;
    const double smax = sv.size() > 0 ? sv[0] : 0.0;
    int r = 0;
    if (smax > 0.0)
        for (int i = 0; i < sv.size(); ++i)
            if (sv[i] > tol * smax)
                ++r;
    if (r % 2 != 0) {
        --r;
        out.conditioning_warning = true;
    }
    out.rank = r;
    // Right singular vectors: first r span the row space, the rest the kernel.
    out.range = svd.matrixV().leftCols(r);
    out.kernel = svd.matrixV().rightCols(k - r);
    return out;
}

/// Affine subspace through `base`; directions are orthonormal and span the
/// row space of M(base).
struct Leaf {
    CovectorPoint base;
    Eigen::MatrixXd directions;  // k x dim
    Eigen::MatrixXd kernel;      // k x (k - dim)
    bool conditioning_warning = false;

    int dim() const noexcept { return static_cast<int>(directions.cols()); }

    /// base + directions * y.
    CovectorPoint point(const Eigen::VectorXd& y) const
    {
        return {base.h + directions * y, base.h2};
    }

    /// In-leaf coordinates of p (orthogonal projection onto the direction basis).
    Eigen::VectorXd coordinates(const CovectorPoint& p) const
    {
        return directions.transpose() * (p.h - base.h);
    }
};

namespace detail {

// Modified Gram-Schmidt; drops columns that become numerically dependent.
inline Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& cols, double drop_tol)
{
    std::vector<Eigen::VectorXd> basis;
    for (int c = 0; c < cols.cols(); ++c) {
        Eigen::VectorXd v = cols.col(c);
        const double n0 = v.norm();
        if (n0 == 0.0)
            continue;
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& b : basis)
                v -= b.dot(v) * b;
        const double n = v.norm();
        if (n > drop_tol * n0)
            basis.push_back(v / n);
    }
    Eigen::MatrixXd out(cols.rows(), static_cast<Eigen::Index>(basis.size()));
    for (std::size_t i = 0; i < basis.size(); ++i)
        out.col(static_cast<Eigen::Index>(i)) = basis[i];
    return out;
}

}  // namespace detail

/// Coadjoint orbit through p0.
inline Leaf leaf(const CovectorPoint& p0, double tol = kDefaultRankTol)
{
    const SkewMatrix m = m_matrix(p0);
    RankKernel rk = rank_and_kernel(m, tol);
    Leaf out;
    out.base = p0;
    out.kernel = rk.kernel;
    out.conditioning_warning = rk.conditioning_warning;
    if (rk.rank == 0) {
        out.directions = Eigen::MatrixXd(p0.k(), 0);
        return out;
    }
    // Gram-Schmidt over the rows of M, projected off the kernel first so the
    // directions are orthogonal to every kernel vector.
    Eigen::MatrixXd rows = m.matrix().transpose();
    rows -= rk.kernel * (rk.kernel.transpose() * rows);
    Eigen::MatrixXd dirs = detail::orthonormalize(rows, 1e-8);
    if (dirs.cols() != rk.rank)
        dirs = rk.range;  // Gram-Schmidt disagreed with SVD; fall back to the SVD basis
    out.directions = dirs;
    return out;
}

/// I_a(p) = sum_i a_i h_i(p).
inline double linear_integral(const CovectorPoint& p, const Eigen::VectorXd& a)
{
    if (a.size() != p.h.size())
        throw InputError("linear_integral: size mismatch");
    return a.dot(p.h);
}

/// Membership in the orbit `l`: h2 equal and I_a equal for every kernel vector.
inline bool same_leaf(const CovectorPoint& p, const Leaf& l, double tol)
{
    if (p.k() != l.base.k())
        return false;
    if ((p.h2 - l.base.h2).lpNorm<Eigen::Infinity>() > tol)
        return false;
    if (l.kernel.cols() == 0)
        return true;
    const Eigen::VectorXd d = l.kernel.transpose() * (p.h - l.base.h);
    return d.lpNorm<Eigen::Infinity>() <= tol;
}

}  // namespace carnot
