#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <vector>

#include "ksl/velocity_basis.hpp"

namespace ksl {

enum class Kernel { k, k1 };

// Closed-form hard-sphere collision frequency.
double nu_radial(double r);
double nu_eval(const std::array<double, 3>& v);
double kernel_eval(Kernel which, const std::array<double, 3>& v, const std::array<double, 3>& vs);

// Funk-Hecke coefficients lambda_l(r, r*) for l = 0..lmax of the kernels of K and K1.
// K1 is the operator kernel of f -> Q(sqrt(M) f, M) / sqrt(M) + nu f, i.e. one half of kernel_eval(k1).
void kernel_degrees(double r, double rs, int lmax, double* k_out, double* k1_out);

struct CollisionOptions {
    double panel = 0.5;        // composite Gauss-Legendre panel length in r and r*
    int per_panel = 10;
    double layer = 1.5;        // width of the graded layer around r* = r
    int layer_nodes = 24;
    double refine_tol = 1e-8;  // successive refinement tolerance
    bool with_gamma = true;
};

// Low-order three-dimensional Burnett sub-basis used by the bilinear collision form.
struct GammaTensor {
    std::vector<BasisElement> inputs;   // degree 2n + l <= 2
    std::vector<BasisElement> outputs;  // degree 2n + l <= 4
    // T[(i * nin + j) * nout + k] = (Gamma(e_i, e_j), e_k)
    std::vector<double> T;
    int nin() const { return static_cast<int>(inputs.size()); }
    int nout() const { return static_cast<int>(outputs.size()); }
    double at(int i, int j, int k) const { return T[(static_cast<std::size_t>(i) * nin() + j) * nout() + k]; }
    int input_index(int n, int l, int m, Parity p) const;
    int output_index(int n, int l, int m, Parity p) const;
};

struct CollisionMatrices {
    int radial_order = 0;
    int angular_max = 0;
    // per angular degree l, radial N_r x N_r blocks
    std::vector<Eigen::MatrixXd> nu_l, K_l, K1_l, L_l, L1_l;
    // per basis block (sector layout of the basis)
    std::vector<Eigen::MatrixXd> nu, K, K1, L, L1, V1;
    std::vector<double> mu_per_l;
    double mu_estimate = 0.0;
    double null_residual = 0.0;     // max_j ||L chi_j||
    double l1_null_residual = 0.0;  // ||L1 chi_0||
    double symmetry_defect = 0.0;   // max |K - K^T| before symmetrization
    double refinement_delta = 0.0;
    GammaTensor gamma;
    std::uint64_t tag = 0;
};

CollisionMatrices assemble_collision(const Basis& b, const CollisionOptions& opt = {});

// Rebuild block matrices and diagnostics from per-degree blocks (used after cache loads).
void finalize_collision(const Basis& b, CollisionMatrices& c);

// Apply a per-block operator (one of c.L, c.L1, ...) to a full-basis coefficient vector.
Eigen::VectorXcd apply_blocks(const Basis& b, const std::vector<Eigen::MatrixXd>& op, const Eigen::VectorXcd& f);

GammaTensor assemble_gamma();
// Galerkin coefficients (Gamma(f, g), e_k) over the output sub-basis.
Eigen::VectorXcd gamma_apply(const GammaTensor& t, const Eigen::VectorXcd& f, const Eigen::VectorXcd& g);
// Map a full-basis function onto the gamma input sub-basis; throws if it has other content.
// Coefficients a over the input sub-basis with sum_k a_k e_k = q sqrt(M) for a polynomial q of degree <= 2.
Eigen::VectorXcd gamma_inputs_from_polynomial(const GammaTensor& t,
                                             const std::function<double(const std::array<double, 3>&)>& q);
Eigen::VectorXcd to_gamma_inputs(const Basis& b, const GammaTensor& t, const VelocityFunction& f, double tol = 1e-12);
// Galerkin coefficients (A f, e_k) over the gamma output sub-basis for an operator given per degree.
Eigen::VectorXcd degree_operator_on_outputs(const GammaTensor& t, const std::vector<Eigen::MatrixXd>& op_l,
                                            const Eigen::VectorXcd& f_in);

struct GammaIdentityResiduals {
    double gamma2 = 0.0;            // Gamma(chi0, v_j chi0) + L1(v_j chi0), j = 1..3
    double gamma1_quadratic = 0.0;  // Gamma_*(v_i chi0, v_j chi0) + L P1(v_i v_j chi0) / 2
    double gamma1_cubic = 0.0;      // Gamma_*(v_i chi0, |v|^2 chi0) + L P1(v_i |v|^2 chi0) / 2
    double gamma1_quartic = 0.0;    // Gamma_*(|v|^2 chi0, |v|^2 chi0) + L P1(|v|^4 chi0) / 2
    double invariants = 0.0;        // max |(Gamma_*(f, g), chi_j)| over random inputs
    double max() const;
};

// Gamma_*(f, g) = (Gamma(f, g) + Gamma(g, f)) / 2; residuals are Euclidean norms over the output sub-basis.
GammaIdentityResiduals gamma_identity_residuals(const CollisionMatrices& c, std::uint64_t seed = 7);

}  // namespace ksl
