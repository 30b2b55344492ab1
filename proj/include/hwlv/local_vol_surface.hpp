#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "hwlv/error.hpp"

namespace hwlv {

enum class TimeInterpolation {
    Bilinear,            // linear in T between slices, flat outside
    PiecewiseConstant,   // slice T_k on (T_{k-1}, T_k], slice 1 before T_1, last slice after T_m
};

// Node values sigma(T_i, K_j) of a local-volatility surface. Strike
// interpolation is always linear with flat extrapolation.
class LocalVolSurface {
public:
    LocalVolSurface() = default;

    LocalVolSurface(std::vector<double> maturities, std::vector<double> strikes,
                    std::vector<double> sigma,
                    TimeInterpolation mode = TimeInterpolation::Bilinear)
        : maturities_(std::move(maturities)), strikes_(std::move(strikes)),
          sigma_(std::move(sigma)), mode_(mode) {
        if (maturities_.empty() || strikes_.empty())
            throw InvalidInput("local vol surface needs at least one maturity and one strike");
        if (sigma_.size() != maturities_.size() * strikes_.size())
            throw InvalidInput("local vol surface: sigma size mismatch");
        check_increasing(maturities_, "maturities");
        check_increasing(strikes_, "strikes");
        for (double s : sigma_)
            if (!std::isfinite(s) || s < 0.0)
                throw InvalidInput("local vol surface: sigma must be finite and >= 0");
    }

    const std::vector<double>& maturities() const { return maturities_; }
    const std::vector<double>& strikes() const { return strikes_; }
    const std::vector<double>& values() const { return sigma_; }
    TimeInterpolation mode() const { return mode_; }
    void set_mode(TimeInterpolation m) { mode_ = m; }

    double node(std::size_t i, std::size_t j) const { return sigma_[i * strikes_.size() + j]; }

    // Smallest strike spacing around K; used as finite-difference step.
    double node_spacing(double K) const {
        if (strikes_.size() < 2) return 0.0;
        const auto j = bracket(strikes_, K);
        return strikes_[j + 1] - strikes_[j];
    }

    double operator()(double t, double K) const {
        const std::size_t nt = maturities_.size();
        if (nt == 1) return in_slice(0, K);
        if (mode_ == TimeInterpolation::PiecewiseConstant) {
            const auto it = std::lower_bound(maturities_.begin(), maturities_.end(), t);
            const std::size_t i = it == maturities_.end() ? nt - 1 : static_cast<std::size_t>(it - maturities_.begin());
            return in_slice(i, K);
        }
        if (t <= maturities_.front()) return in_slice(0, K);
        if (t >= maturities_.back()) return in_slice(nt - 1, K);
        const auto i = bracket(maturities_, t);
        const double w = (t - maturities_[i]) / (maturities_[i + 1] - maturities_[i]);
        return (1.0 - w) * in_slice(i, K) + w * in_slice(i + 1, K);
    }

private:
    static void check_increasing(const std::vector<double>& v, const char* name) {
        for (std::size_t i = 1; i < v.size(); ++i)
            if (!(v[i] > v[i - 1]))
                throw InvalidInput(std::string("local vol surface: ") + name + " must be strictly increasing");
    }

    // index i with v[i] <= x < v[i+1], clamped to [0, n-2]
    static std::size_t bracket(const std::vector<double>& v, double x) {
        const auto it = std::upper_bound(v.begin(), v.end(), x);
        std::size_t i = it == v.begin() ? 0 : static_cast<std::size_t>(it - v.begin()) - 1;
        return std::min(i, v.size() - 2);
    }

    double in_slice(std::size_t i, double K) const {
        const std::size_t nk = strikes_.size();
        const double* row = sigma_.data() + i * nk;
        if (nk == 1 || K <= strikes_.front()) return row[0];
        if (K >= strikes_.back()) return row[nk - 1];
        const auto j = bracket(strikes_, K);
        const double w = (K - strikes_[j]) / (strikes_[j + 1] - strikes_[j]);
        return (1.0 - w) * row[j] + w * row[j + 1];
    }

    std::vector<double> maturities_;
    std::vector<double> strikes_;
    std::vector<double> sigma_;
    TimeInterpolation mode_ = TimeInterpolation::Bilinear;
};

}  // namespace hwlv
