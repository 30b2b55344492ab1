#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hwlv/error.hpp"

namespace hwlv {

// a_i x_{i-1} + b_i x_i + c_i x_{i+1} = f_i, i = 0..n-1, with x_{-1} = x_n = 0.
// lower[0] and upper[n-1] are ignored.
struct TridiagonalSystem {
    std::vector<double> lower;
    std::vector<double> main;
    std::vector<double> upper;
    std::vector<double> rhs;
};

// Thomas algorithm into caller-provided storage. `scratch` needs n entries;
// `x` may alias `rhs`.
inline void solve_tridiagonal(std::span<const double> lower, std::span<const double> main,
                              std::span<const double> upper, std::span<const double> rhs,
                              std::span<double> x, std::span<double> scratch) {
    const std::size_t n = main.size();
    if (lower.size() != n || upper.size() != n || rhs.size() != n || x.size() != n || scratch.size() < n)
        throw InvalidInput("tridiagonal system: inconsistent lengths");
    if (n == 0) return;

    double pivot = main[0];
    if (!(std::abs(pivot) > 1e-300)) throw SingularSystem("zero pivot at row 0");
    scratch[0] = upper[0] / pivot;
    x[0] = rhs[0] / pivot;
    for (std::size_t i = 1; i < n; ++i) {
        pivot = main[i] - lower[i] * scratch[i - 1];
        if (!(std::abs(pivot) > 1e-300)) throw SingularSystem("zero pivot at row " + std::to_string(i));
        scratch[i] = upper[i] / pivot;
        x[i] = (rhs[i] - lower[i] * x[i - 1]) / pivot;
    }
    for (std::size_t i = n - 1; i-- > 0;) x[i] -= scratch[i] * x[i + 1];
}

inline std::vector<double> solve_tridiagonal(const TridiagonalSystem& sys) {
    const std::size_t n = sys.main.size();
    std::vector<double> x(n), scratch(n);
    solve_tridiagonal(sys.lower, sys.main, sys.upper, sys.rhs, x, scratch);
    return x;
}

// max_i |(A x)_i - f_i|
inline double tridiagonal_residual(const TridiagonalSystem& sys, std::span<const double> x) {
    const std::size_t n = sys.main.size();
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double ax = sys.main[i] * x[i];
        if (i > 0) ax += sys.lower[i] * x[i - 1];
        if (i + 1 < n) ax += sys.upper[i] * x[i + 1];
        worst = std::max(worst, std::abs(ax - sys.rhs[i]));
    }
    return worst;
}

}  // namespace hwlv
