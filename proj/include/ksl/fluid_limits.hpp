#pragma once

#include <Eigen/Dense>
#include <array>
#include <complex>
#include <functional>
#include <vector>

#include "ksl/collision_ops.hpp"
#include "ksl/velocity_basis.hpp"

namespace ksl {

using Vec3 = Eigen::Vector3d;
using Vec3c = Eigen::Vector3cd;

struct TransportCoefficients {
    double kappa0 = 0.0, kappa1 = 0.0, eta = 0.0;
    std::array<double, 5> a{};  // a_{-1}, a_0, a_1, a_2, a_3
    // differences against a finer truncation; zero until filled
    double d_kappa0 = 0.0, d_kappa1 = 0.0, d_eta = 0.0;
    std::array<double, 5> d_a{};
    double a_of(int j) const { return a.at(static_cast<std::size_t>(j + 1)); }
};

TransportCoefficients transport_coefficients(const Basis& b, const CollisionMatrices& c);
// Fill the d_* members from a second truncation.
void set_truncation_deltas(TransportCoefficients& coarse, const TransportCoefficients& fine);

// h_j(e1), j = -1..3, and the rotated pair h~0, h~1 as full-basis coefficient vectors.
Eigen::VectorXd h_vector(const Basis& b, int j);
Eigen::VectorXd h_tilde(const Basis& b, int k);

// Y1 at one mode in the frame omega = e1.
struct Y1State {
    double t = 0.0, s = 0.0;
    std::array<cplx, 3> coeff{};  // along h0, h2, h3
    VelocityFunction f;
};
Y1State Y1_mode(const Basis& b, const TransportCoefficients& tc, double t, double s, const VelocityFunction& f0);

// Physical field mode (rho, E, B) at xi = s omega.
struct FieldMode {
    cplx rho = 0.0;
    Vec3c E = Vec3c::Zero();
    Vec3c B = Vec3c::Zero();
};

// Y2 state V = (rho, omega x E, omega x B) in C^7 with the pairing of the xi-weighted metric.
using Y2Vector = Eigen::Matrix<cplx, 7, 1>;

struct Y2Eigenbasis {
    double s = 0.0, eta = 0.0;
    Vec3 omega, ea, eb;
    std::array<cplx, 5> b{};
    std::array<Y2Vector, 5> X;
};

// Transverse unit vectors (ea, eb) with ea x eb = omega.
std::pair<Vec3, Vec3> transverse_frame(const Vec3& omega);
std::array<cplx, 5> y2_rates(double s, double eta);
Y2Eigenbasis y2_eigenbasis(double s, const Vec3& omega, double eta);
// (U, conj(V))_xi: bilinear, weight 1 + s^-2 on the density slot.
cplx y2_pairing(double s, const Y2Vector& U, const Y2Vector& V);
Y2Vector y2_reduce(const FieldMode& U, double s, const Vec3& omega);
FieldMode y2_reconstruct(const Y2Vector& V, double s, const Vec3& omega);

struct Y2Options {
    double confluent_band = 1e-3;  // |eta^2 - 4 s^2| below which the closed form is used
    double constraint_tol = 1e-10;
};
FieldMode Y2_mode(double t, double s, const Vec3& omega, double eta, const FieldMode& U0, const Y2Options& opt = {});
// Always the eigen expansion (throws at the crossing) / always the closed form.
FieldMode Y2_mode_eigen(double t, double s, const Vec3& omega, double eta, const FieldMode& U0);
FieldMode Y2_mode_confluent(double t, double s, const Vec3& omega, double eta, const FieldMode& U0);

std::pair<Vec3c, Vec3c> helmholtz_split(const Vec3c& U, const Vec3& omega);

// P_par f and P_perp f in the frame omega = e1.
std::pair<VelocityFunction, VelocityFunction> p_split(const Basis& b, const VelocityFunction& f);
Eigen::MatrixXd p_parallel_matrix(const Basis& b);

struct NSMFState {
    double t = 0.0;
    cplx n = 0.0, q = 0.0, rho = 0.0, p = 0.0;
    Vec3c m = Vec3c::Zero(), E = Vec3c::Zero(), B = Vec3c::Zero();
};
struct NSMFForcing {
    Vec3c G1 = Vec3c::Zero();
    cplx G2 = 0.0;
    Vec3c G3 = Vec3c::Zero();
};
using ForcingFn = std::function<NSMFForcing(double)>;

struct NSMFOptions {
    int nodes = 10;          // Gauss-Legendre nodes per panel
    int levels = 24;         // geometric refinement levels toward both ends of [0, t]
    double tol = 1e-8;       // Duhamel quadrature estimate (relative)
    double constraint_tol = 1e-10;
};

// Data of the form (n, m, q, rho, E, B)(0) from kinetic f0 in the frame omega = e1 and fields E0, B0.
NSMFState nsmf_initial_data(const Basis& b, const VelocityFunction& f0, const Vec3c& E0, const Vec3c& B0, double s);

std::vector<NSMFState> linear_nsmf_solve(const TransportCoefficients& tc, double s, const Vec3& omega,
                                         const NSMFState& init, const ForcingFn& forcing,
                                         const std::vector<double>& times, const NSMFOptions& opt = {});

// Aggregated L2 decay of Y1 / Y2 for data phi(|xi|) times a fixed pattern.
enum class DecayData { y1_generic, y2_generic, y2_enhanced };
struct DecayCurve {
    std::vector<double> t, norm;
};
DecayCurve fluid_decay(const TransportCoefficients& tc, DecayData kind, const std::function<double(double)>& phi,
                       const std::vector<double>& times, double s_max = 40.0);

// Composite Gauss-Legendre on [0, s_max] with panels refined geometrically toward 0.
Rule radial_mode_rule(double s_max, double s_min, int nodes);

}  // namespace ksl
