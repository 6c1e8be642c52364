#pragma once

#include <Eigen/Dense>
#include <complex>
#include <string>
#include <vector>

#include "ksl/collision_ops.hpp"
#include "ksl/fluid_limits.hpp"
#include "ksl/velocity_basis.hpp"

namespace ksl {

enum class ResolventMethod {
    galerkin,  // one linear solve with the Galerkin matrices
    hybrid     // exact multiplication part by adaptive quadrature, K1 from its Galerkin matrix (sector 1 only)
};

struct ResolventScalars {
    cplx R11 = 0.0, R22 = 0.0;
    cplx dR11_dlambda = 0.0, dR22_dlambda = 0.0;
    cplx dR11_dy = 0.0, dR22_dy = 0.0;
};

// R_aa(lambda, y) = ((L1 - lambda - i y Pr v1)^{-1} chi_a, chi_a) on range(Pr).
class Resolvent {
public:
    Resolvent(const Basis& b, const CollisionMatrices& c);
    ResolventScalars at(cplx lambda, double y, ResolventMethod m = ResolventMethod::galerkin) const;
    cplx R22(cplx lambda, double y, ResolventMethod m, cplx* dlambda = nullptr) const;
    cplx R11(cplx lambda, double y, cplx* dlambda = nullptr) const;

private:
    Eigen::MatrixXd L0_, V0_, L2_, V2_, K2_;
    int i1_ = 0, i2_ = 0;
    std::vector<std::pair<int, int>> pairs2_;  // (n, l) of the sector-1 cos block
    cplx hybrid_R22(cplx lambda, double y, cplx* dlambda) const;
};

ResolventScalars resolvent_scalars(cplx lambda, double s, double eps, const Basis& b, const CollisionMatrices& c,
                                   ResolventMethod m = ResolventMethod::galerkin);

struct DispersionBranch {
    std::string label;
    double s = 0.0, eps = 0.0;
    cplx value = 0.0;        // z; the eigenvalue is eps^2 z (Boltzmann: the eigenvalue itself)
    double residual = 0.0;   // |D(z)|
    cplx prediction = 0.0;
    bool crossing_flag = false;
    int iterations = 0;
    cplx eigenvalue() const { return label.rfind("boltzmann", 0) == 0 ? value : eps * eps * value; }
};

struct DispersionOptions {
    double tol = 1e-12;        // relative root residual
    int max_iter = 200;
    double crossing_band = 0.1; // r0 for |eta^2 - 4 s^2|
    ResolventMethod method = ResolventMethod::galerkin;
};

DispersionBranch solve_z0(const Resolvent& R, double s, double eps, double eta, const DispersionOptions& opt = {});
std::pair<DispersionBranch, DispersionBranch> solve_z_pm(const Resolvent& R, double s, double eps, double eta,
                                                         const DispersionOptions& opt = {});
// Root of R22(-eps^2 s, eps s) + 2 s = 0 near eta/2: the location where z_- and z_+ coincide.
double crossing_location(const Resolvent& R, double eps, double eta, double tol = 1e-13);
// Richardson extrapolation of crossing_location over eps_list (halving sequence) to eps = 0.
double crossing_extrapolated(const Resolvent& R, const std::vector<double>& eps_list, double eta);

std::pair<DispersionBranch, DispersionBranch> solve_highfreq(const Resolvent& R, double s, double eps,
                                                             const DispersionOptions& opt = {});
// y_j = z_j - j i s
cplx highfreq_offset(const DispersionBranch& br);

struct BoltzmannFit {
    std::array<double, 5> mu{};   // mu_{-1..3}
    std::array<double, 5> a{};
    std::vector<DispersionBranch> branches;  // at the largest kappa used
};

// Five eigenvalues of B closest to 0 at (s, eps), labelled boltzmann_j.
std::vector<DispersionBranch> boltzmann_dispersion(double s, double eps, const Basis& b, const CollisionMatrices& c,
                                                   const TransportCoefficients& tc);
// Fit mu_j and a_j by regression in kappa^2 over kappa = eps s in kappas.
BoltzmannFit boltzmann_fit(const Basis& b, const CollisionMatrices& c, const TransportCoefficients& tc,
                           const std::vector<double>& kappas);

}  // namespace ksl
