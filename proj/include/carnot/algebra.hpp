#pragma once

// Step-2 free-nilpotent Lie algebra on k generators.
//
// Flat basis order everywhere in the library:
//   (X_1, ..., X_k, X_12, X_13, ..., X_1k, X_23, ..., X_(k-1)k)
// Generator indices are 1-based to match the usual notation X_i, X_ij.

#include <Eigen/Dense>

#include <string>
#include <utility>

#include "carnot/errors.hpp"

namespace carnot {

/// Hard ceiling on the number of generators (dim 78). Casimir enumeration is
/// factorial in k, see casimir.hpp for its own tighter bound.
inline constexpr int kMaxGenerators = 12;

class AlgebraShape {
public:
    explicit AlgebraShape(int k) : k_(k)
    {
        if (k < 2 || k > kMaxGenerators)
            throw SizeError("number of generators must lie in [2, " +
                            std::to_string(kMaxGenerators) + "], got " + std::to_string(k));
    }

    int k() const noexcept { return k_; }
    int dim_first() const noexcept { return k_; }
    int dim_second() const noexcept { return k_ * (k_ - 1) / 2; }
    int dim_total() const noexcept { return k_ * (k_ + 1) / 2; }

    friend bool operator==(const AlgebraShape&, const AlgebraShape&) = default;

private:
    int k_;
};

/// Lexicographic flat index of the pair (i, j), 1 <= i < j <= k, in the
/// second layer.
inline int pair_index(const AlgebraShape& s, int i, int j)
{
    const int k = s.k();
    if (i < 1 || j > k || i >= j)
        throw IndexError("pair_index: need 1 <= i < j <= k, got (" + std::to_string(i) + ", " +
                         std::to_string(j) + ") with k = " + std::to_string(k));
    // pairs (1,*) come first: k-1 of them, then k-2 pairs (2,*), ...
    return (i - 1) * (2 * k - i) / 2 + (j - i - 1);
}

inline std::pair<int, int> pair_unindex(const AlgebraShape& s, int index)
{
    const int k = s.k();
    if (index < 0 || index >= s.dim_second())
        throw IndexError("pair_unindex: index " + std::to_string(index) + " out of range");
    int i = 1;
    int row = k - 1;
    while (index >= row) {
        index -= row;
        ++i;
        --row;
    }
    return {i, i + 1 + index};
}

/// X_i (second == 0) or X_ij (1 <= i < j).
struct BasisLabel {
    int first = 1;
    int second = 0;

    static BasisLabel generator(int i) { return {i, 0}; }
    static BasisLabel pair(int i, int j) { return {i, j}; }

    bool is_generator() const noexcept { return second == 0; }
    friend bool operator==(const BasisLabel&, const BasisLabel&) = default;
};

inline int basis_index(const AlgebraShape& s, BasisLabel b)
{
    if (b.is_generator()) {
        if (b.first < 1 || b.first > s.k())
            throw IndexError("generator index " + std::to_string(b.first) + " out of range");
        return b.first - 1;
    }
    return s.k() + pair_index(s, b.first, b.second);
}

inline BasisLabel basis_label(const AlgebraShape& s, int index)
{
    if (index < 0 || index >= s.dim_total())
        throw IndexError("basis index " + std::to_string(index) + " out of range");
    if (index < s.k())
        return BasisLabel::generator(index + 1);
    auto [i, j] = pair_unindex(s, index - s.k());
    return BasisLabel::pair(i, j);
}

/// Structure constants: [X_i, X_j] = X_ij (i < j), -X_ji (i > j), 0 (i = j);
/// every bracket with a second-layer element vanishes.
inline Eigen::VectorXd bracket(const AlgebraShape& s, BasisLabel a, BasisLabel b)
{
    Eigen::VectorXd out = Eigen::VectorXd::Zero(s.dim_total());
    if (!a.is_generator() || !b.is_generator())
        return out;
    const int i = a.first;
    const int j = b.first;
    if (i < 1 || i > s.k() || j < 1 || j > s.k())
        throw IndexError("bracket: generator index out of range");
    if (i < j)
        out[s.k() + pair_index(s, i, j)] = 1.0;
    else if (i > j)
        out[s.k() + pair_index(s, j, i)] = -1.0;
    return out;
}

/// Bilinear extension of `bracket` to coefficient vectors.
inline Eigen::VectorXd bracket(const AlgebraShape& s, const Eigen::VectorXd& x, const Eigen::VectorXd& y)
{
    Eigen::VectorXd out = Eigen::VectorXd::Zero(s.dim_total());
    for (int i = 1; i <= s.k(); ++i)
        for (int j = i + 1; j <= s.k(); ++j)
            out[s.k() + pair_index(s, i, j)] = x[i - 1] * y[j - 1] - x[j - 1] * y[i - 1];
    return out;
}

/// Point of G in the global chart R^{k(k+1)/2}.
struct GroupPoint {
    Eigen::VectorXd x;   // x_1 .. x_k
    Eigen::VectorXd x2;  // x_ij, i < j

    static GroupPoint identity(const AlgebraShape& s)
    {
        return {Eigen::VectorXd::Zero(s.dim_first()), Eigen::VectorXd::Zero(s.dim_second())};
    }

    Eigen::VectorXd flat() const
    {
        Eigen::VectorXd out(x.size() + x2.size());
        out << x, x2;
        return out;
    }
};

/// Coordinate expression of the left-invariant field X_i at g:
///   X_i = d/dx_i - sum_{j>i} x_j/2 d/dx_ij + sum_{j<i} x_j/2 d/dx_ji
inline Eigen::VectorXd model_field(const AlgebraShape& s, int i, const GroupPoint& g)
{
    const int k = s.k();
    if (i < 1 || i > k)
        throw IndexError("model_field: generator index out of range");
    Eigen::VectorXd v = Eigen::VectorXd::Zero(s.dim_total());
    v[i - 1] = 1.0;
    for (int j = 1; j <= k; ++j) {
        if (j > i)
            v[k + pair_index(s, i, j)] = -0.5 * g.x[j - 1];
        else if (j < i)
            v[k + pair_index(s, j, i)] = 0.5 * g.x[j - 1];
    }
    return v;
}

/// X_ij = d/dx_ij (constant field).
inline Eigen::VectorXd model_field(const AlgebraShape& s, int i, int j)
{
    Eigen::VectorXd v = Eigen::VectorXd::Zero(s.dim_total());
    v[s.k() + pair_index(s, i, j)] = 1.0;
    return v;
}

}  // namespace carnot
