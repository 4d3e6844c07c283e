#pragma once

// Casimir functions of the step-2 free-nilpotent coalgebra.
//
// The h_ij are always Casimirs. For odd k = 2n+1 there is one more,
//   C(p) = sum_i a_i(p) h_i(p),
//   a_i  = sum over ordered tuples (j_1..j_2n) of distinct indices != i of
//          (-1)^(sigma + i) h_{j1 j2} h_{j3 j4} ... h_{j(2n-1) j(2n)},
// with h_ab = -h_ba for a > b. sigma is the parity of the permutation taking
// the increasing arrangement of {1..k} \ {i} to (j_1..j_2n). This reference
// order is a convention; M a = 0 holds exactly with it and fails with sign
// errors. C is fixed up to a global constant.
//
// Every perfect matching of {1..k}\{i} is hit 2^n n! times with the same
// sign, so a_i is 2^n n! times a signed sub-Pfaffian. The tuple sum is kept
// as the definition.
//
// All routines are templates over the scalar so the identity can be checked
// in exact rational arithmetic.

#include <boost/multiprecision/cpp_int.hpp>

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "carnot/algebra.hpp"
#include "carnot/coadjoint.hpp"
#include "carnot/errors.hpp"

namespace carnot {

using Rational = boost::multiprecision::cpp_rational;

/// Enumeration bound for the polynomial Casimir: (k-1)! tuples per component.
inline constexpr int kMaxCasimirGenerators = 11;

/// Coalgebra point with arbitrary scalar coordinates.
template <class T>
struct BasicCovector {
    std::vector<T> h;
    std::vector<T> h2;

    int k() const noexcept { return static_cast<int>(h.size()); }
};

using ExactCovector = BasicCovector<Rational>;

inline std::string to_string(const Rational& r)
{
    return boost::multiprecision::numerator(r).str() + "/" + boost::multiprecision::denominator(r).str();
}

/// Parses "p/q", "p" or a decimal literal such as "-1.25" exactly.
inline Rational parse_rational(const std::string& text)
{
    try {
        const auto dot = text.find('.');
        if (dot == std::string::npos && text.find_first_of("eE") == std::string::npos)
            return Rational(text);
        if (text.find_first_of("eE/") != std::string::npos)
            throw InputError("unsupported rational literal: " + text);
        std::string digits = text.substr(0, dot) + text.substr(dot + 1);
        const auto frac_len = text.size() - dot - 1;
        boost::multiprecision::cpp_int den = 1;
        for (std::size_t i = 0; i < frac_len; ++i)
            den *= 10;
        if (digits.empty() || digits == "-" || digits == "+")
            throw InputError("malformed rational literal: " + text);
        return Rational(boost::multiprecision::cpp_int(digits), den);
    }
    catch (const std::runtime_error&) {
        throw InputError("malformed rational literal: " + text);
    }
}

/// Exact rational value of a double.
inline Rational exact_rational(double x)
{
    if (!std::isfinite(x))
        throw InputError("exact_rational: non-finite value");
    int exp = 0;
    const double mant = std::frexp(x, &exp);
    // mant * 2^53 is an integer
    const auto scaled = static_cast<std::int64_t>(std::ldexp(mant, 53));
    Rational r(scaled);
    exp -= 53;
    boost::multiprecision::cpp_int p2 = 1;
    p2 <<= (exp >= 0 ? exp : -exp);
    return exp >= 0 ? Rational(r * p2) : Rational(r / p2);
}

inline bool casimir_polynomial_exists(int k) noexcept { return k % 2 == 1; }

/// Number of ordered tuples summed per component a_i: (k-1)!.
inline std::uint64_t tuples_per_component(int k)
{
    std::uint64_t f = 1;
    for (int i = 2; i <= k - 1; ++i)
        f *= static_cast<std::uint64_t>(i);
    return f;
}

/// Trivial Casimirs h_ij in canonical order.
inline Eigen::VectorXd trivial_casimirs(const CovectorPoint& p) { return p.h2; }

namespace detail {

inline void check_polynomial_shape(int k)
{
    if (k % 2 == 0)
        throw UnsupportedError("the polynomial Casimir exists only for odd k; for k = " + std::to_string(k) +
                               " there are only k(k-1)/2 = " + std::to_string(k * (k - 1) / 2) +
                               " independent Casimir functions, the h_ij");
    if (k > kMaxCasimirGenerators)
        throw SizeError("polynomial Casimir enumeration is limited to k <= " +
                        std::to_string(kMaxCasimirGenerators));
}

// h_ab with the antisymmetric extension, 1-based indices.
template <class T>
T pair_value(const AlgebraShape& s, std::span<const T> h2, int a, int b)
{
    if (a < b)
        return h2[pair_index(s, a, b)];
    return -h2[pair_index(s, b, a)];
}

template <class T>
T a_component(const AlgebraShape& s, std::span<const T> h2, int i)
{
    const int k = s.k();
    const int len = k - 1;  // 2n
    std::array<int, kMaxGenerators> rest{};
    for (int j = 1, r = 0; j <= k; ++j)
        if (j != i)
            rest[r++] = j;

    // Precomputed h_{rest[x] rest[y]} in terms of ranks.
    std::vector<T> hv(static_cast<std::size_t>(len * len), T(0));
    for (int x = 0; x < len; ++x)
        for (int y = 0; y < len; ++y)
            if (x != y)
                hv[x * len + y] = pair_value<T>(s, h2, rest[x], rest[y]);

    // Iterative DFS over ordered tuples of ranks. tuple[d] is the rank placed
    // at position d; inversions are counted incrementally for the parity.
    std::array<int, kMaxGenerators> tuple{};
    std::array<int, kMaxGenerators> inv{};      // inversions contributed at depth d
    std::array<bool, kMaxGenerators> used{};
    std::vector<T> partial(static_cast<std::size_t>(len / 2 + 1), T(1));  // product of completed pairs

    T total(0);
    int parity = 0;
    int depth = 0;
    tuple[0] = -1;
    while (depth >= 0) {
        // advance the choice at `depth`
        int& cur = tuple[depth];
        if (cur >= 0) {
            used[cur] = false;
            parity ^= inv[depth] & 1;
        }
        ++cur;
        while (cur < len && used[cur])
            ++cur;
        if (cur == len) {
            cur = -1;
            --depth;
            continue;
        }
        used[cur] = true;
        int c = 0;
        for (int d = 0; d < depth; ++d)
            if (tuple[d] > cur)
                ++c;
        inv[depth] = c;
        parity ^= c & 1;

        if (depth % 2 == 1) {
            const int m = depth / 2;
            partial[m + 1] = partial[m] * hv[tuple[depth - 1] * len + cur];
        }
        if (depth == len - 1) {
            if ((parity + i) % 2 == 0)
                total += partial[len / 2];
            else
                total -= partial[len / 2];
            continue;  // stay at this depth, try the next choice
        }
        ++depth;
        tuple[depth] = -1;
    }
    return total;
}

}  // namespace detail

/// Coefficients a_i(p), odd k only. Depends only on the second layer.
template <class T>
std::vector<T> a_vector(const AlgebraShape& s, std::span<const T> h2)
{
    detail::check_polynomial_shape(s.k());
    if (static_cast<int>(h2.size()) != s.dim_second())
        throw InputError("a_vector: h2 has the wrong length");
    std::vector<T> a;
    a.reserve(static_cast<std::size_t>(s.k()));
    for (int i = 1; i <= s.k(); ++i)
        a.push_back(detail::a_component<T>(s, h2, i));
    return a;
}

/// C(p) = <a(p), h(p)>, odd k only.
template <class T>
T casimir_c(const AlgebraShape& s, std::span<const T> h, std::span<const T> h2)
{
    const std::vector<T> a = a_vector<T>(s, h2);
    if (static_cast<int>(h.size()) != s.k())
        throw InputError("casimir_c: h has the wrong length");
    T c(0);
    for (int i = 0; i < s.k(); ++i)
        c += a[i] * h[i];
    return c;
}

/// Residual (sum_i a_i h_il)_{l=1..k} = M^T a; identically zero.
template <class T>
std::vector<T> verify_casimir_identity(const AlgebraShape& s, std::span<const T> h2)
{
    const std::vector<T> a = a_vector<T>(s, h2);
    std::vector<T> res(static_cast<std::size_t>(s.k()), T(0));
    for (int l = 1; l <= s.k(); ++l)
        for (int i = 1; i <= s.k(); ++i)
            if (i != l)
                res[l - 1] += a[i - 1] * detail::pair_value<T>(s, h2, i, l);
    return res;
}

// Double-precision overloads on CovectorPoint.

inline Eigen::VectorXd a_vector(const CovectorPoint& p)
{
    const auto a = a_vector<double>(p.shape(), std::span<const double>(p.h2.data(), p.h2.size()));
    return Eigen::Map<const Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
}

inline double casimir_c(const CovectorPoint& p) { return a_vector(p).dot(p.h); }

inline Eigen::VectorXd verify_casimir_identity(const CovectorPoint& p)
{
    return m_matrix(p).matrix().transpose() * a_vector(p);
}

template <class T>
struct BasicCasimirReport {
    std::vector<T> trivial;
    std::optional<std::vector<T>> a_vec;
    std::optional<T> c_value;
    std::optional<std::vector<T>> residual;
};

using CasimirReport = BasicCasimirReport<double>;
using ExactCasimirReport = BasicCasimirReport<Rational>;

template <class T>
BasicCasimirReport<T> casimir_report(const BasicCovector<T>& p)
{
    const AlgebraShape s(p.k());
    if (static_cast<int>(p.h2.size()) != s.dim_second())
        throw InputError("casimir_report: h2 has the wrong length");
    BasicCasimirReport<T> r;
    r.trivial = p.h2;
    if (casimir_polynomial_exists(s.k())) {
        const std::span<const T> h2(p.h2);
        r.a_vec = a_vector<T>(s, h2);
        T c(0);
        for (int i = 0; i < s.k(); ++i)
            c += (*r.a_vec)[i] * p.h[i];
        r.c_value = c;
        r.residual = verify_casimir_identity<T>(s, h2);
    }
    return r;
}

}  // namespace carnot
