#include "ksl/mode_operators.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ksl {

namespace {

const cplx I1(0.0, 1.0);

ModeOperator build(OperatorKind kind, double s, double eps, const Basis& b, const CollisionMatrices& c, double sign) {
    if (c.tag != b.tag) throw std::invalid_argument("mode operator: collision matrices built on another basis");
    ModeOperator op;
    op.kind = kind;
    op.s = s;
    op.eps = eps;
    op.tag = b.tag;
    int offset = 0;
    for (std::size_t k = 0; k < b.blocks.size(); ++k) {
        const Block& blk = b.blocks[k];
        const int d = blk.dim;
        const bool fields = (kind == OperatorKind::vmb && blk.m == 1);
        const int n = d + (fields ? 2 : 0);
        ModeBlock mb;
        mb.offset = offset;
        mb.kinetic_dim = d;
        mb.basis_block = static_cast<int>(k);
        mb.A = Eigen::MatrixXcd::Zero(n, n);
        const Eigen::MatrixXd& Lk = (kind == OperatorKind::vmb) ? c.L1[k] : c.L[k];
        mb.A.topLeftCorner(d, d) = Lk.cast<cplx>() - sign * I1 * eps * s * c.V1[k].cast<cplx>();
        mb.metric = Eigen::VectorXd::Ones(n);
        mb.J = Eigen::VectorXd::Ones(n);
        if (kind == OperatorKind::vmb) {
            if (blk.m == 0) {
                const int i0 = b.chi(0) - blk.offset, i1 = b.chi(1) - blk.offset;
                mb.A(i1, i0) += -sign * I1 * eps / s;
                mb.metric(i0) = 1.0 + 1.0 / (s * s);
                mb.J(i0) = mb.metric(i0);
            } else {
                const double e2s = eps * eps * s;
                if (blk.parity == Parity::cos) {
                    // (chi2 | X3, Y2)
                    const int i2 = b.chi(2) - blk.offset;
                    mb.A(i2, d) = sign * eps;
                    mb.A(d, i2) = -sign * eps;
                    mb.A(d, d + 1) = sign * I1 * e2s;
                    mb.A(d + 1, d) = sign * I1 * e2s;
                } else {
                    // (chi3 | X2, Y3)
                    const int i3 = b.chi(3) - blk.offset;
                    mb.A(i3, d) = -sign * eps;
                    mb.A(d, i3) = sign * eps;
                    mb.A(d, d + 1) = -sign * I1 * e2s;
                    mb.A(d + 1, d) = -sign * I1 * e2s;
                }
                mb.J(d) = mb.J(d + 1) = -1.0;
            }
        }
        offset += n;
        op.blocks.push_back(std::move(mb));
    }
    op.dim = offset;
    return op;
}

double block_metric_norm(const Eigen::VectorXd& metric, const Eigen::MatrixXcd& A) {
    Eigen::VectorXd sq = metric.cwiseSqrt();
    Eigen::MatrixXcd B = sq.asDiagonal() * A * sq.cwiseInverse().asDiagonal();
    if (B.size() == 0) return 0.0;
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(B);
    return svd.singularValues()(0);
}

double condition_2(const Eigen::MatrixXcd& V) {
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(V);
    const auto& sv = svd.singularValues();
    return sv(sv.size() - 1) > 0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
}

// swap adjacent diagonal entries k, k+1 of an upper triangular T, updating Q (A = Q T Q^H)
void swap_schur(Eigen::MatrixXcd& T, Eigen::MatrixXcd& Q, int k) {
    const cplx t11 = T(k, k), t22 = T(k + 1, k + 1), t12 = T(k, k + 1);
    cplx x1 = t12, x2 = t22 - t11;
    double nx = std::sqrt(std::norm(x1) + std::norm(x2));
    if (nx == 0.0) return;
    x1 /= nx;
    x2 /= nx;
    Eigen::Matrix2cd G;
    G << x1, -std::conj(x2), x2, std::conj(x1);
    T.middleRows(k, 2) = G.adjoint() * T.middleRows(k, 2);
    T.middleCols(k, 2) = T.middleCols(k, 2) * G;
    Q.middleCols(k, 2) = Q.middleCols(k, 2) * G;
    T(k + 1, k) = 0.0;
}

}  // namespace

Eigen::MatrixXcd ModeOperator::matrix() const {
    Eigen::MatrixXcd M = Eigen::MatrixXcd::Zero(dim, dim);
    for (const auto& blk : blocks) M.block(blk.offset, blk.offset, blk.A.rows(), blk.A.cols()) = blk.A;
    return M;
}

Eigen::VectorXd ModeOperator::metric() const {
    Eigen::VectorXd g(dim);
    for (const auto& blk : blocks) g.segment(blk.offset, blk.metric.size()) = blk.metric;
    return g;
}

int ModeOperator::field_index(char field, int component) const {
    if (kind != OperatorKind::vmb) return -1;
    int found = 0;
    for (const auto& blk : blocks) {
        if (blk.A.rows() == blk.kinetic_dim) continue;
        const bool is_cos = (found++ == 0);  // the cos half precedes the sin half
        if (is_cos) {
            if (field == 'X' && component == 3) return blk.offset + blk.kinetic_dim;
            if (field == 'Y' && component == 2) return blk.offset + blk.kinetic_dim + 1;
        } else {
            if (field == 'X' && component == 2) return blk.offset + blk.kinetic_dim;
            if (field == 'Y' && component == 3) return blk.offset + blk.kinetic_dim + 1;
        }
    }
    return -1;
}

int ModeOperator::kinetic_index(int basis_index) const {
    int start = 0;
    for (const auto& blk : blocks) {
        if (basis_index < start + blk.kinetic_dim) return blk.offset + (basis_index - start);
        start += blk.kinetic_dim;
    }
    throw std::out_of_range("kinetic_index");
}

ModeOperator assemble_B(double s, double eps, const Basis& b, const CollisionMatrices& c) {
    if (s < 0.0) throw std::invalid_argument("assemble_B: s must be >= 0");
    return build(OperatorKind::boltzmann, s, eps, b, c, 1.0);
}

ModeOperator assemble_A_tilde(double s, double eps, const Basis& b, const CollisionMatrices& c) {
    if (!(s > 0.0)) throw std::invalid_argument("assemble_A_tilde: s must be > 0");
    return build(OperatorKind::vmb, s, eps, b, c, 1.0);
}

ModeOperator assemble_A_tilde_adjoint(double s, double eps, const Basis& b, const CollisionMatrices& c) {
    if (!(s > 0.0)) throw std::invalid_argument("assemble_A_tilde_adjoint: s must be > 0");
    return build(OperatorKind::vmb, s, eps, b, c, -1.0);
}

ModeOperator metric_adjoint(const ModeOperator& op) {
    ModeOperator out = op;
    for (auto& blk : out.blocks)
        blk.A = (blk.metric.cwiseInverse().asDiagonal() * blk.A.adjoint() * blk.metric.asDiagonal()).eval();
    return out;
}

cplx metric_inner(const ModeOperator& op, const Eigen::VectorXcd& u, const Eigen::VectorXcd& v) {
    if (u.size() != op.dim || v.size() != op.dim) throw std::invalid_argument("metric_inner: dimension mismatch");
    Eigen::VectorXd g = op.metric();
    return v.dot(g.cast<cplx>().cwiseProduct(u));
}

double metric_norm(const ModeOperator& op, const Eigen::VectorXcd& u) {
    return std::sqrt(std::max(0.0, metric_inner(op, u, u).real()));
}

double metric_operator_norm(const ModeOperator& op, const Eigen::MatrixXcd& A) {
    return block_metric_norm(op.metric(), A);
}

Spectrum spectrum(const ModeOperator& op) {
    Spectrum sp;
    for (std::size_t k = 0; k < op.blocks.size(); ++k) {
        const auto& blk = op.blocks[k];
        Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(blk.A, true);
        if (es.info() != Eigen::Success) throw std::runtime_error("spectrum: eigen-solver failed");
        Eigen::MatrixXcd V = es.eigenvectors();
        Eigen::MatrixXcd W = V.inverse();
        sp.condition = std::max(sp.condition, condition_2(V));
        for (int j = 0; j < V.cols(); ++j) {
            EigenPair p;
            p.lambda = es.eigenvalues()(j);
            p.block = static_cast<int>(k);
            p.right = Eigen::VectorXcd::Zero(op.dim);
            p.left = Eigen::VectorXcd::Zero(op.dim);
            p.right.segment(blk.offset, V.rows()) = V.col(j);
            p.left.segment(blk.offset, V.rows()) = W.row(j).transpose();
            p.residual = (blk.A * V.col(j) - p.lambda * V.col(j)).norm() / V.col(j).norm();
            sp.pairs.push_back(std::move(p));
        }
    }
    std::stable_sort(sp.pairs.begin(), sp.pairs.end(),
                     [](const EigenPair& a, const EigenPair& b) { return a.lambda.real() > b.lambda.real(); });
    return sp;
}

Propagator::Propagator(const ModeOperator& op, double cond_limit) : op_(op) {
    for (const auto& blk : op_.blocks) {
        BlockFactor f;
        Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(blk.A, true);
        double cond = std::numeric_limits<double>::infinity();
        if (es.info() == Eigen::Success) {
            f.V = es.eigenvectors();
            f.lambda = es.eigenvalues();
            cond = condition_2(f.V);
        }
        condition_ = std::max(condition_, cond);
        if (cond < cond_limit) {
            f.eigen = true;
            f.Vinv = f.V.inverse();
        } else {
            Eigen::ComplexSchur<Eigen::MatrixXcd> cs(blk.A);
            f.Q = cs.matrixU();
            f.T = cs.matrixT();
            f.eigen = false;
            eigen_path_ = false;
        }
        factors_.push_back(std::move(f));
    }
}

Eigen::VectorXcd Propagator::apply_tau(const Eigen::VectorXcd& U0, double tau) const {
    if (U0.size() != op_.dim) throw std::invalid_argument("propagate: dimension mismatch");
    if (tau < 0.0) throw std::invalid_argument("propagate: t must be >= 0");
    Eigen::VectorXcd out(op_.dim);
    for (std::size_t k = 0; k < factors_.size(); ++k) {
        const auto& blk = op_.blocks[k];
        const auto& f = factors_[k];
        const int n = static_cast<int>(blk.A.rows());
        Eigen::VectorXcd u = U0.segment(blk.offset, n);
        if (f.eigen) {
            Eigen::VectorXcd c = f.Vinv * u;
            for (int j = 0; j < n; ++j) c(j) *= std::exp(f.lambda(j) * tau);
            out.segment(blk.offset, n) = f.V * c;
        } else {
            Eigen::MatrixXcd E = (tau * f.T).exp();
            out.segment(blk.offset, n) = f.Q * (E * (f.Q.adjoint() * u));
        }
    }
    if (!out.allFinite()) throw std::runtime_error("propagate: non-finite exponential (condition " + std::to_string(condition_) + ")");
    return out;
}

Eigen::VectorXcd Propagator::apply(const Eigen::VectorXcd& U0, double t) const {
    return apply_tau(U0, t / (op_.eps * op_.eps));
}

Eigen::MatrixXcd Propagator::exp_matrix(double tau) const {
    Eigen::MatrixXcd M = Eigen::MatrixXcd::Zero(op_.dim, op_.dim);
    for (std::size_t k = 0; k < factors_.size(); ++k) {
        const auto& blk = op_.blocks[k];
        const auto& f = factors_[k];
        const int n = static_cast<int>(blk.A.rows());
        Eigen::MatrixXcd E;
        if (f.eigen) {
            Eigen::VectorXcd e(n);
            for (int j = 0; j < n; ++j) e(j) = std::exp(f.lambda(j) * tau);
            E = f.V * e.asDiagonal() * f.Vinv;
        } else {
            E = f.Q * (tau * f.T).exp() * f.Q.adjoint();
        }
        M.block(blk.offset, blk.offset, n, n) = E;
    }
    return M;
}

Eigen::VectorXcd propagate(const ModeOperator& op, const Eigen::VectorXcd& U0, double t) {
    return Propagator(op).apply(U0, t);
}

const char* regime_name(Regime r) {
    switch (r) {
        case Regime::low: return "low";
        case Regime::high: return "high";
        default: return "mid";
    }
}

Regime classify_regime(double s, double eps, double r0, double r1) {
    if (eps * (1.0 + s) <= r0) return Regime::low;
    if (eps * s >= r1) return Regime::high;
    return Regime::mid;
}

Eigen::MatrixXcd schur_projector(const Eigen::MatrixXcd& A, const std::function<bool(cplx)>& select) {
    const int n = static_cast<int>(A.rows());
    Eigen::ComplexSchur<Eigen::MatrixXcd> cs(A);
    Eigen::MatrixXcd T = cs.matrixT(), Q = cs.matrixU();
    // bubble selected eigenvalues to the top
    int kk = 0;
    for (int j = 0; j < n; ++j) {
        if (!select(T(j, j))) continue;
        for (int i = j; i > kk; --i) swap_schur(T, Q, i - 1);
        ++kk;
    }
    if (kk == 0) return Eigen::MatrixXcd::Zero(n, n);
    if (kk == n) return Eigen::MatrixXcd::Identity(n, n);
    const int m = n - kk;
    Eigen::MatrixXcd T11 = T.topLeftCorner(kk, kk), T22 = T.bottomRightCorner(m, m), T12 = T.topRightCorner(kk, m);
    // T11 X - X T22 = -T12, column by column
    Eigen::MatrixXcd X(kk, m);
    for (int j = 0; j < m; ++j) {
        Eigen::VectorXcd rhs = -T12.col(j);
        for (int i = 0; i < j; ++i) rhs += X.col(i) * T22(i, j);
        Eigen::MatrixXcd M = T11;
        M.diagonal().array() -= T22(j, j);
        X.col(j) = M.triangularView<Eigen::Upper>().solve(rhs);
    }
    Eigen::MatrixXcd P = Eigen::MatrixXcd::Zero(n, n);
    P.topLeftCorner(kk, kk).setIdentity();
    P.topRightCorner(kk, m) = -X;
    return Q * P * Q.adjoint();
}

Eigen::MatrixXcd SemigroupSplit::S(int k, const Propagator& prop, double t) const {
    const Eigen::MatrixXcd& P = (k == 1) ? P1 : (k == 2 ? P2 : P3);
    const double eps = prop.op().eps;
    return prop.exp_matrix(t / (eps * eps)) * P;
}

SemigroupSplit semigroup_split(const ModeOperator& op, double r0, double r1) {
    SemigroupSplit sp;
    sp.r0 = r0;
    sp.r1 = r1;
    sp.regime = classify_regime(op.s, op.eps, r0, r1);
    int n_fluid = 0;
    int group = 0;  // 1: S1, 2: S2
    if (sp.regime == Regime::low) {
        n_fluid = 5;
        group = 1;
    } else if (sp.regime == Regime::high && op.kind == OperatorKind::vmb) {
        n_fluid = 4;
        group = 2;
    }
    Spectrum spec = spectrum(op);
    sp.condition = spec.condition;
    double cutoff = std::numeric_limits<double>::infinity();
    if (n_fluid > 0) {
        if (static_cast<int>(spec.pairs.size()) <= n_fluid) throw std::runtime_error("semigroup_split: basis too small");
        cutoff = 0.5 * (spec.pairs[n_fluid - 1].lambda.real() + spec.pairs[n_fluid].lambda.real());
        for (int j = 0; j < n_fluid; ++j) sp.fluid.push_back(spec.pairs[j]);
    }
    const int n = op.dim;
    Eigen::MatrixXcd Pf = Eigen::MatrixXcd::Zero(n, n), Pr = Eigen::MatrixXcd::Zero(n, n);
    sp.schur_fallback = spec.condition > 1e8;
    if (!sp.schur_fallback) {
        for (const auto& p : spec.pairs) {
            Eigen::MatrixXcd outer = p.right * p.left.transpose();
            if (p.lambda.real() > cutoff)
                Pf += outer;
            else
                Pr += outer;
        }
    } else {
        for (const auto& blk : op.blocks) {
            const int m = static_cast<int>(blk.A.rows());
            Pf.block(blk.offset, blk.offset, m, m) = schur_projector(blk.A, [&](cplx z) { return z.real() > cutoff; });
            Pr.block(blk.offset, blk.offset, m, m) = schur_projector(blk.A, [&](cplx z) { return z.real() <= cutoff; });
        }
    }
    sp.P1 = Eigen::MatrixXcd::Zero(n, n);
    sp.P2 = Eigen::MatrixXcd::Zero(n, n);
    if (group == 1) sp.P1 = Pf;
    if (group == 2) sp.P2 = Pf;
    sp.P3 = Pr;
    sp.reconstruction = (sp.P1 + sp.P2 + sp.P3 - Eigen::MatrixXcd::Identity(n, n)).cwiseAbs().maxCoeff();

    // fit ||S3(t)|| <= C exp(-b t / eps^2) in tau = t / eps^2
    double alpha = std::numeric_limits<double>::infinity();
    for (const auto& p : spec.pairs)
        if (p.lambda.real() <= cutoff) alpha = std::min(alpha, -p.lambda.real());
    if (!std::isfinite(alpha) || alpha <= 0.0) return sp;
    Propagator prop(op);
    const double tau_max = 20.0 / alpha;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const int nfit = 12;
    std::vector<Eigen::MatrixXcd> P3b;
    for (int k = 1; k <= nfit; ++k) {
        const double tau = tau_max * k / nfit;
        Eigen::MatrixXcd E = prop.exp_matrix(tau);
        double nm = 0.0;
        for (const auto& blk : op.blocks) {
            const int m = static_cast<int>(blk.A.rows());
            Eigen::MatrixXcd Sb = E.block(blk.offset, blk.offset, m, m) * sp.P3.block(blk.offset, blk.offset, m, m);
            nm = std::max(nm, block_metric_norm(blk.metric, Sb));
        }
        sp.fit_tau.push_back(tau);
        sp.fit_norm.push_back(nm);
        const double y = std::log(std::max(nm, 1e-300));
        sx += tau;
        sy += y;
        sxx += tau * tau;
        sxy += tau * y;
    }
    const double slope = (nfit * sxy - sx * sy) / (nfit * sxx - sx * sx);
    sp.b = -slope;
    double C = 0.0;
    for (const auto& blk : op.blocks) {
        const int m = static_cast<int>(blk.A.rows());
        C = std::max(C, block_metric_norm(blk.metric, sp.P3.block(blk.offset, blk.offset, m, m)));
    }
    for (std::size_t k = 0; k < sp.fit_tau.size(); ++k) C = std::max(C, sp.fit_norm[k] * std::exp(sp.b * sp.fit_tau[k]));
    sp.C = C;
    return sp;
}

double resolvent_norm_probe(const ModeOperator& op, const Basis& b, const CollisionMatrices& c, cplx lambda) {
    double best = 0.0;
    for (std::size_t k = 0; k < b.blocks.size(); ++k) {
        const int d = b.blocks[k].dim;
        Eigen::MatrixXcd M = lambda * Eigen::MatrixXcd::Identity(d, d) + c.nu[k].cast<cplx>() +
                             I1 * op.eps * op.s * c.V1[k].cast<cplx>();
        Eigen::PartialPivLU<Eigen::MatrixXcd> lu(M);
        if (!(lu.rcond() > 1e-14)) throw std::domain_error("resolvent_norm_probe: lambda is numerically spectral");
        Eigen::MatrixXcd R = c.K1[k].cast<cplx>() * lu.inverse();
        Eigen::JacobiSVD<Eigen::MatrixXcd> svd(R);
        best = std::max(best, svd.singularValues()(0));
    }
    return best;
}

}  // namespace ksl
