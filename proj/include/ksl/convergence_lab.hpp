#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ksl/collision_ops.hpp"
#include "ksl/fluid_limits.hpp"
#include "ksl/mode_operators.hpp"
#include "ksl/velocity_basis.hpp"

namespace ksl {

enum class DataKind { generic, well_prepared, micro };
const char* data_kind_name(DataKind k);

struct ExperimentConfig {
    std::vector<double> eps_list{0.2, 0.1, 0.05, 0.025, 0.0125};
    double s_max = 8.0;
    int s_nodes = 6;                // Gauss-Legendre nodes per radial panel
    double s_min = 1e-3;            // innermost panel of the geometric radial partition
    std::vector<double> t_grid;     // empty selects 16 geometric points on [1e-3, 1e2]
    DataKind data_kind = DataKind::well_prepared;
    std::uint64_t seed = 1;
    double r0 = 0.1, r1 = 10.0;
    int jobs = 1;
    int layer_points = 13;          // initial-layer t grid on [0, 10 eps]
    double layer_panel = 0.25;      // radial panel length for the x-space inversion
    double layer_r_max = 24.0;
    std::vector<double> resolved_t_grid() const;
    void validate() const;
};

// Mode-level initial data in the frame omega = e1: kinetic f0 and (g0, omega x E0, omega x B0) as VMB state.
struct ModeData {
    Eigen::VectorXcd f0;     // Boltzmann data, basis coefficients
    Eigen::VectorXcd g0;     // VMB kinetic part
    Vec3c E0 = Vec3c::Zero(), B0 = Vec3c::Zero();
};

// Fixed angular pattern times the radial profile phi(s) = exp(-s^2 / 2).
class InitialData {
public:
    InitialData(const Basis& b, DataKind kind, std::uint64_t seed);
    ModeData at(double s) const;
    DataKind kind() const { return kind_; }
    static double profile(double s) { return std::exp(-0.5 * s * s); }
    // Largest violation of the mode-level constraints for this data kind at s.
    double constraint_residual(double s) const;

private:
    const Basis* b_;
    DataKind kind_;
    Eigen::VectorXcd uf_, ug_;
    Vec3c e_, bb_;
};

InitialData make_initial_data(const Basis& b, DataKind kind, std::uint64_t seed);

struct RateFit {
    double exponent = 0.0, intercept = 0.0;
    double ci_low = 0.0, ci_high = 0.0;  // 95% Student-t interval for the exponent
    double rss = 0.0;
    int n = 0;
};

// Least squares of log y against log x.
RateFit rate_fit(const std::vector<double>& x, const std::vector<double>& y);

struct ErrorTable {
    std::string name;
    std::vector<double> eps, t;
    std::vector<std::vector<double>> err;  // err[eps index][t index]
};

struct ConvergenceReport {
    std::string experiment;
    std::vector<ErrorTable> tables;
    std::map<std::string, RateFit> fits;
    std::map<std::string, double> values;
    std::map<std::string, bool> flags;
    bool passed() const;
};

// VMB state vector of op from (g, E, B) at omega = e1; E1 is carried by the chi0 coefficient of g.
Eigen::VectorXcd vmb_state(const ModeOperator& op, const Eigen::VectorXcd& g, const Vec3c& E, const Vec3c& B);

ConvergenceReport first_order_experiment(const ExperimentConfig& cfg, const Basis& b, const CollisionMatrices& c,
                                         const TransportCoefficients& tc);
ConvergenceReport initial_layer_profile(const ExperimentConfig& cfg, const Basis& b, const CollisionMatrices& c,
                                        const TransportCoefficients& tc, double eps);
ConvergenceReport second_order_experiment(const ExperimentConfig& cfg, const Basis& b, const CollisionMatrices& c,
                                          const TransportCoefficients& tc);
// Fit C exp(-b tau) + D to the per-mode P_perp error of generic data at (s, eps); compares with the S3 gap.
ConvergenceReport remainder_gap_check(const Basis& b, const CollisionMatrices& c, const TransportCoefficients& tc,
                                      double s, double eps, std::uint64_t seed);

struct RadialProfile {
    std::string name;
    std::function<cplx(cplx)> phi;  // analytic in the right half plane
};
RadialProfile power_profile(int k);  // (1 + r)^{-k}

enum class AngularPattern { isotropic, dipole };

// I(x, theta) = int e^{i x.xi} e^{i theta |xi|} alpha(omega) phi(|xi|) d xi at x = (|x|, 0, 0).
cplx oscillatory_integral(const RadialProfile& p, AngularPattern a, double x, double theta);

struct OscillatoryCheck {
    std::vector<double> theta, sup_abs, at_origin;
    RateFit fit;             // sup over |x| of |I| against theta
    double mc_value_re = 0.0, mc_value_im = 0.0, mc_stderr = 0.0, mc_reference_re = 0.0, mc_reference_im = 0.0;
    double mc_z = 0.0;       // |difference| / stderr
    double derivative_check = 0.0;  // max over the grid of (1+r)^{2+k} |phi^(k)|, k = 0, 1
};

OscillatoryCheck oscillatory_decay_check(const RadialProfile& p, AngularPattern a, const std::vector<double>& theta_grid,
                                         std::uint64_t seed, long mc_samples);
// Direct 3D Monte-Carlo estimate of I(x, theta) for the profile (1 + r)^{-4}; returns (value, stderr).
std::pair<cplx, double> oscillatory_mc(AngularPattern a, double x, double theta, std::uint64_t seed, long samples);

}  // namespace ksl
