#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hwlv {

// Base of every error raised by the library. `kind()` is a stable,
// machine-readable tag used by the CLI error line.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

class InvalidInput : public Error {
public:
    explicit InvalidInput(const std::string& what) : Error("invalid-input", what) {}
};

class SingularCovariance : public Error {
public:
    explicit SingularCovariance(const std::string& what) : Error("singular-covariance", what) {}
};

class SingularSystem : public Error {
public:
    explicit SingularSystem(const std::string& what) : Error("singular-system", what) {}
};

class UnderResolvedKernel : public Error {
public:
    explicit UnderResolvedKernel(const std::string& what) : Error("under-resolved-kernel", what) {}
};

class BlowUp : public Error {
public:
    BlowUp(std::size_t step, const std::string& what) : Error("blow-up", what), step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

class ButterflyDegenerate : public Error {
public:
    ButterflyDegenerate(double T, double K, double c_kk)
        : Error("butterfly-degenerate",
                "C_KK=" + std::to_string(c_kk) + " below floor at T=" + std::to_string(T) +
                    " K=" + std::to_string(K)),
          T_(T), K_(K), c_kk_(c_kk) {}
    double maturity() const noexcept { return T_; }
    double strike() const noexcept { return K_; }
    double c_kk() const noexcept { return c_kk_; }

private:
    double T_, K_, c_kk_;
};

// Diagnostics carried by a negative local variance.
struct NegativeVarianceInfo {
    double maturity = 0.0;
    double strike = 0.0;
    double dupire_variance = 0.0;
    double adj = 0.0;
    double c_kk = 0.0;
    double variance = 0.0;
};

class NegativeVariance : public Error {
public:
    explicit NegativeVariance(const NegativeVarianceInfo& info)
        : Error("negative-variance", describe(info)), info_(info) {}
    const NegativeVarianceInfo& info() const noexcept { return info_; }

    static std::string describe(const NegativeVarianceInfo& i) {
        return "negative local variance " + std::to_string(i.variance) + " at T=" +
               std::to_string(i.maturity) + " K=" + std::to_string(i.strike) +
               " (dupire=" + std::to_string(i.dupire_variance) + ", adj=" + std::to_string(i.adj) +
               ", c_kk=" + std::to_string(i.c_kk) + ")";
    }

private:
    NegativeVarianceInfo info_;
};

class CalibrationFailure : public Error {
public:
    explicit CalibrationFailure(std::vector<NegativeVarianceInfo> offending)
        : Error("calibration-failure", describe(offending)), offending_(std::move(offending)) {}
    const std::vector<NegativeVarianceInfo>& offending() const noexcept { return offending_; }

private:
    static std::string describe(const std::vector<NegativeVarianceInfo>& v) {
        std::string s = "calibration failed at " + std::to_string(v.size()) + " node(s):";
        for (const auto& i : v)
            s += " (T=" + std::to_string(i.maturity) + ", K=" + std::to_string(i.strike) + ")";
        return s;
    }
    std::vector<NegativeVarianceInfo> offending_;
};

class NoData : public Error {
public:
    explicit NoData(const std::string& what) : Error("no-data", what) {}
};

class McAborted : public Error {
public:
    explicit McAborted(const std::string& what) : Error("mc-aborted", what) {}
};

}  // namespace hwlv
