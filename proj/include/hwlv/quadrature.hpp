#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>

namespace hwlv {

// Composite 8-point Gauss-Legendre rule on [lo, hi] with `panels` panels.
template <class F>
double gauss_legendre(F&& f, double lo, double hi, std::size_t panels = 16) {
    static constexpr std::array<double, 4> x = {0.1834346424956498, 0.5255324099163290,
                                                0.7966664774136267, 0.9602898564975363};
    static constexpr std::array<double, 4> w = {0.3626837833783620, 0.3137066458778873,
                                                0.2223810344533745, 0.1012285362903763};
    if (hi == lo) return 0.0;
    panels = std::max<std::size_t>(panels, 1);
    const double h = (hi - lo) / static_cast<double>(panels);
    double total = 0.0;
    for (std::size_t p = 0; p < panels; ++p) {
        const double mid = lo + (static_cast<double>(p) + 0.5) * h;
        const double half = 0.5 * h;
        double s = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k)
            s += w[k] * (f(mid - half * x[k]) + f(mid + half * x[k]));
        total += s * half;
    }
    return total;
}

}  // namespace hwlv
