#pragma once

#include <Eigen/Dense>
#include <complex>
#include <functional>
#include <vector>

#include "ksl/collision_ops.hpp"
#include "ksl/velocity_basis.hpp"

namespace ksl {

enum class OperatorKind { boltzmann, vmb };

// One invariant block of a mode operator: a kinetic sector plus, for VMB sector-1 halves,
// the two transverse field components it couples to.
struct ModeBlock {
    Eigen::MatrixXcd A;
    Eigen::VectorXd metric;  // diagonal of the weighted metric
    Eigen::VectorXd J;       // diagonal symmetrizer: J A is complex symmetric
    int offset = 0;          // position in the full state vector
    int kinetic_dim = 0;
    int basis_block = 0;     // index into Basis::blocks
};

struct ModeOperator {
    OperatorKind kind = OperatorKind::boltzmann;
    double s = 0.0;
    double eps = 1.0;
    std::vector<ModeBlock> blocks;
    int dim = 0;
    std::uint64_t tag = 0;

    Eigen::MatrixXcd matrix() const;
    Eigen::VectorXd metric() const;
    // Full-state index of a transverse field component (VMB): 'X' = omega x E or 'Y' = omega x B, component 2 or 3.
    int field_index(char field, int component) const;
    // Full-state index of a kinetic basis function.
    int kinetic_index(int basis_index) const;
};

// Layout with X = omega x E, Y = omega x B, omega = e1:
// sector 0 kinetic | sector 1 cos kinetic, X3, Y2 | sector 1 sin kinetic, X2, Y3.
ModeOperator assemble_B(double s, double eps, const Basis& b, const CollisionMatrices& c);
ModeOperator assemble_A_tilde(double s, double eps, const Basis& b, const CollisionMatrices& c);
// The adjoint operator in closed form (signs of the skew parts reversed).
ModeOperator assemble_A_tilde_adjoint(double s, double eps, const Basis& b, const CollisionMatrices& c);
// G^{-1} A^H G for the block metric G.
ModeOperator metric_adjoint(const ModeOperator& op);

cplx metric_inner(const ModeOperator& op, const Eigen::VectorXcd& u, const Eigen::VectorXcd& v);
double metric_norm(const ModeOperator& op, const Eigen::VectorXcd& u);
// Operator norm of a full-dimension matrix in the metric of op.
double metric_operator_norm(const ModeOperator& op, const Eigen::MatrixXcd& A);

struct EigenPair {
    cplx lambda;
    int block = 0;
    Eigen::VectorXcd right;  // full state vector
    Eigen::VectorXcd left;   // row eigenvector, left^T right = 1
    double residual = 0.0;   // ||A r - lambda r|| / ||r||
};

struct Spectrum {
    std::vector<EigenPair> pairs;  // sorted by decreasing real part
    double condition = 0.0;        // max over blocks of cond(V)
};

Spectrum spectrum(const ModeOperator& op);

// exp(tau A) with per-block Schur factors; fast eigen path when well-conditioned.
class Propagator {
public:
    explicit Propagator(const ModeOperator& op, double cond_limit = 1e8);
    // e^{(t / eps^2) A} U0
    Eigen::VectorXcd apply(const Eigen::VectorXcd& U0, double t) const;
    Eigen::VectorXcd apply_tau(const Eigen::VectorXcd& U0, double tau) const;
    Eigen::MatrixXcd exp_matrix(double tau) const;
    bool uses_eigen_path() const { return eigen_path_; }
    double condition() const { return condition_; }
    const ModeOperator& op() const { return op_; }

private:
    struct BlockFactor {
        Eigen::MatrixXcd Q, T, V, Vinv;
        Eigen::VectorXcd lambda;
        bool eigen = false;
    };
    ModeOperator op_;
    std::vector<BlockFactor> factors_;
    bool eigen_path_ = true;
    double condition_ = 0.0;
};

Eigen::VectorXcd propagate(const ModeOperator& op, const Eigen::VectorXcd& U0, double t);

enum class Regime { low, mid, high };
const char* regime_name(Regime r);
Regime classify_regime(double s, double eps, double r0, double r1);

struct SemigroupSplit {
    Regime regime = Regime::mid;
    double r0 = 0.1, r1 = 10.0;
    std::vector<EigenPair> fluid;      // eigen data of the S1 or S2 branches
    Eigen::MatrixXcd P1, P2, P3;       // spectral projectors of the three groups
    bool schur_fallback = false;
    double condition = 0.0;
    double reconstruction = 0.0;       // ||P1 + P2 + P3 - I||
    double b = 0.0, C = 0.0;           // ||S3(t)|| <= C exp(-b t / eps^2)
    std::vector<double> fit_tau, fit_norm;
    Eigen::MatrixXcd S(int k, const Propagator& prop, double t) const;
};

SemigroupSplit semigroup_split(const ModeOperator& op, double r0, double r1);

// Spectral projector onto the invariant subspace of the eigenvalues selected per block.
Eigen::MatrixXcd schur_projector(const Eigen::MatrixXcd& A, const std::function<bool(cplx)>& select);

// ||K1 (lambda - D)^{-1}|| with D = -nu - i eps s v1 (max over sectors); throws std::domain_error if singular.
double resolvent_norm_probe(const ModeOperator& op, const Basis& b, const CollisionMatrices& c, cplx lambda);

}  // namespace ksl
