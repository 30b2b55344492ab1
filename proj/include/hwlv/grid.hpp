#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "hwlv/error.hpp"

namespace hwlv {

// Uniform truncated (S, r) lattice with a uniform time step. Nodes 1..n_s
// (resp. 1..n_r) are interior; nodes 0 and n+1 sit on the Dirichlet boundary.
struct Grid2D {
    double s_min = 0.0;
    double s_max = 0.0;
    double r_min = 0.0;
    double r_max = 0.0;
    std::size_t n_s = 0;
    std::size_t n_r = 0;
    double t_end = 0.0;
    std::size_t n_t = 0;

    Grid2D() = default;
    Grid2D(double s_lo, double s_hi, double r_lo, double r_hi, std::size_t ns, std::size_t nr,
           double t, std::size_t nt)
        : s_min(s_lo), s_max(s_hi), r_min(r_lo), r_max(r_hi), n_s(ns), n_r(nr), t_end(t), n_t(nt) {
        validate();
    }

    // Node counts chosen so the spacings are as close as possible to the targets.
    static Grid2D from_spacing(double s_lo, double s_hi, double r_lo, double r_hi, double ds,
                               double dr, double t, double dt) {
        if (!(ds > 0.0) || !(dr > 0.0) || !(dt > 0.0))
            throw InvalidInput("grid spacings must be > 0");
        auto count = [](double span, double h) {
            const double cells = std::round(span / h);
            return cells < 9.0 ? std::size_t{8} : static_cast<std::size_t>(cells) - 1;
        };
        const auto nt = static_cast<std::size_t>(std::max(1.0, std::round(t / dt)));
        return Grid2D(s_lo, s_hi, r_lo, r_hi, count(s_hi - s_lo, ds), count(r_hi - r_lo, dr), t, nt);
    }

    void validate() const {
        if (!std::isfinite(s_min) || !std::isfinite(s_max) || !std::isfinite(r_min) ||
            !std::isfinite(r_max) || !std::isfinite(t_end))
            throw InvalidInput("grid bounds must be finite");
        if (!(s_min > 0.0)) throw InvalidInput("grid: s_min must be > 0");
        if (!(s_max > s_min)) throw InvalidInput("grid: s_max must exceed s_min");
        if (!(r_max > r_min)) throw InvalidInput("grid: r_max must exceed r_min");
        if (n_s < 8 || n_r < 8) throw InvalidInput("grid: need at least 8 interior nodes per axis");
        if (n_t < 1) throw InvalidInput("grid: need at least one time step");
        if (!(t_end > 0.0)) throw InvalidInput("grid: t_end must be > 0");
    }

    double ds() const { return (s_max - s_min) / static_cast<double>(n_s + 1); }
    double dr() const { return (r_max - r_min) / static_cast<double>(n_r + 1); }
    double dt() const { return t_end / static_cast<double>(n_t); }

    // i, j are interior indices 0..n-1 (node i+1 counting the boundary)
    double s(std::size_t i) const { return s_min + static_cast<double>(i + 1) * ds(); }
    double r(std::size_t j) const { return r_min + static_cast<double>(j + 1) * dr(); }
    double t(std::size_t n) const { return static_cast<double>(n) * dt(); }

    bool same_shape(const Grid2D& o) const {
        return s_min == o.s_min && s_max == o.s_max && r_min == o.r_min && r_max == o.r_max &&
               n_s == o.n_s && n_r == o.n_r;
    }
};

// Values at the interior nodes of a grid, S-major (index i * n_r + j).
// The boundary is the Dirichlet value 0.
class Field2D {
public:
    Field2D() = default;
    explicit Field2D(const Grid2D& g) : grid_(g), values_(g.n_s * g.n_r, 0.0) {}
    Field2D(const Grid2D& g, std::vector<double> v) : grid_(g), values_(std::move(v)) {
        if (values_.size() != g.n_s * g.n_r) throw InvalidInput("field size does not match grid");
    }

    const Grid2D& grid() const { return grid_; }
    std::size_t n_s() const { return grid_.n_s; }
    std::size_t n_r() const { return grid_.n_r; }

    double& operator()(std::size_t i, std::size_t j) { return values_[i * grid_.n_r + j]; }
    double operator()(std::size_t i, std::size_t j) const { return values_[i * grid_.n_r + j]; }

    // zero outside the interior
    double at(std::ptrdiff_t i, std::ptrdiff_t j) const {
        if (i < 0 || j < 0 || i >= static_cast<std::ptrdiff_t>(grid_.n_s) ||
            j >= static_cast<std::ptrdiff_t>(grid_.n_r))
            return 0.0;
        return values_[static_cast<std::size_t>(i) * grid_.n_r + static_cast<std::size_t>(j)];
    }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::span<double> row(std::size_t i) { return {values_.data() + i * grid_.n_r, grid_.n_r}; }
    std::span<const double> row(std::size_t i) const { return {values_.data() + i * grid_.n_r, grid_.n_r}; }

    // 2-D trapezoid with zero boundary values.
    double mass() const {
        double s = 0.0;
        for (double v : values_) s += v;
        return s * grid_.ds() * grid_.dr();
    }

    template <class W>
    double integrate(W&& weight) const {
        double total = 0.0;
        for (std::size_t i = 0; i < grid_.n_s; ++i) {
            const double S = grid_.s(i);
            double rowsum = 0.0;
            for (std::size_t j = 0; j < grid_.n_r; ++j) rowsum += weight(S, grid_.r(j)) * (*this)(i, j);
            total += rowsum;
        }
        return total * grid_.ds() * grid_.dr();
    }

    void scale(double k) {
        for (double& v : values_) v *= k;
    }

    bool all_finite() const {
        for (double v : values_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    struct NegativeStats {
        double fraction = 0.0;  // share of strictly negative nodes
        double mass = 0.0;      // trapezoid |mass| of the negative part
    };

    NegativeStats negative_stats() const {
        std::size_t count = 0;
        double neg = 0.0;
        for (double v : values_)
            if (v < 0.0) {
                ++count;
                neg -= v;
            }
        return {values_.empty() ? 0.0 : static_cast<double>(count) / static_cast<double>(values_.size()),
                neg * grid_.ds() * grid_.dr()};
    }

    // r-marginal at each S node: m_i = sum_j weight(r_j) v_ij dr
    template <class W>
    std::vector<double> s_marginal(W&& weight) const {
        std::vector<double> m(grid_.n_s, 0.0);
        for (std::size_t i = 0; i < grid_.n_s; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < grid_.n_r; ++j) acc += weight(grid_.r(j)) * (*this)(i, j);
            m[i] = acc * grid_.dr();
        }
        return m;
    }

private:
    Grid2D grid_;
    std::vector<double> values_;
};

// Free-function form of the grid quadrature.
template <class W>
double integrate(const Field2D& field, W&& weight) {
    return field.integrate(std::forward<W>(weight));
}

}  // namespace hwlv
