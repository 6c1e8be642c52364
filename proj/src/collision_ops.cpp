#include "ksl/collision_ops.hpp"

#include <tbb/blocked_range.h>
#include <tbb/parallel_for.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ksl {

namespace {

const double kSqrt2Pi = std::sqrt(2.0 * M_PI);

// P_0..P_lmax at mu
inline void legendre_all(double mu, int lmax, double* p) {
    p[0] = 1.0;
    if (lmax >= 1) p[1] = mu;
    for (int l = 2; l <= lmax; ++l) p[l] = ((2.0 * l - 1.0) * mu * p[l - 1] - (l - 1.0) * p[l - 2]) / l;
}

// R_nl(r) for n = 0..N-1 (with the Gaussian factor)
void radial_all(int l, double r, int N, double* out) {
    const double a = l + 0.5, x = 0.5 * r * r;
    double c = std::exp(0.5 * (-(l + 0.5) * std::log(2.0) - std::lgamma(l + 1.5)));
    const double pre = std::pow(r, l) * std::exp(-0.25 * r * r);
    double p0 = 1.0, p1 = 1.0 + a - x;
    for (int n = 0; n < N; ++n) {
        double ln;
        if (n == 0) {
            ln = p0;
        } else if (n == 1) {
            ln = p1;
        } else {
            double p2 = ((2.0 * (n - 1) + 1.0 + a - x) * p1 - ((n - 1) + a) * p0) / n;
            p0 = p1;
            p1 = p2;
            ln = p1;
        }
        if (n > 0) c *= std::sqrt(n / (n + l + 0.5));
        out[n] = ((n % 2 == 0) ? 1.0 : -1.0) * c * pre * ln;
    }
}

struct KernelRules {
    Rule loss;     // Gauss-Legendre on [0,1], mapped per pair
    Rule gl12;     // per panel
    Rule gl_log[8];
    KernelRules(int lmax) {
        loss = gauss_legendre(lmax + 3, 0.0, 1.0);
        gl12 = gauss_legendre(12, 0.0, 1.0);
        for (int i = 0; i < 8; ++i) gl_log[i] = gauss_legendre(16 + 12 * i, 0.0, 1.0);
    }
};

void kernel_degrees_impl(const KernelRules& kr, double r, double rs, int lmax, double* k_out, double* k1_out) {
    const double delta = std::abs(r - rs), sigma = r + rs, rr = r * rs;
    const double base = r * r + rs * rs;
    double A1[32], A2[32], P[32];
    for (int l = 0; l <= lmax; ++l) A1[l] = A2[l] = 0.0;

    auto mu_of = [&](double d) { return std::clamp((base - d * d) / (2.0 * rr), -1.0, 1.0); };

    // loss term: polynomial in d, exact Gauss-Legendre
    for (std::size_t i = 0; i < kr.loss.size(); ++i) {
        double d = delta + (sigma - delta) * kr.loss.x[i];
        double w = (sigma - delta) * kr.loss.w[i];
        legendre_all(mu_of(d), lmax, P);
        for (int l = 0; l <= lmax; ++l) A2[l] += w * d * d * P[l];
    }

    const double a2 = (r * r - rs * rs) * (r * r - rs * rs) / 8.0;
    const double a = std::sqrt(a2);
    // a^2/d^2 + d^2/8 >= a / sqrt(2): skip negligible pairs
    if (a / std::sqrt(2.0) < 45.0) {
        const double dmax = std::min(sigma, 18.5);
        auto gain = [&](double d, double w) {
            double e = std::exp(-a2 / (d * d) - d * d / 8.0) * w;
            if (e == 0.0) return;
            legendre_all(mu_of(d), lmax, P);
            for (int l = 0; l <= lmax; ++l) A1[l] += e * P[l];
        };
        if (dmax > delta) {
            double dA = std::min(dmax, delta + std::max(1.0, 3.0 * a));
            double span = std::log(dA / delta);
            int idx = std::min(7, static_cast<int>(std::ceil(span / 3.0)));
            const Rule& g = kr.gl_log[idx];
            double u0 = std::log(delta);
            for (std::size_t i = 0; i < g.size(); ++i) {
                double u = u0 + span * g.x[i];
                double d = std::exp(u);
                gain(d, span * g.w[i] * d);
            }
            if (dmax > dA) {
                int panels = static_cast<int>(std::ceil(dmax - dA));
                double h = (dmax - dA) / panels;
                for (int p = 0; p < panels; ++p)
                    for (std::size_t i = 0; i < kr.gl12.size(); ++i)
                        gain(dA + h * (p + kr.gl12.x[i]), h * kr.gl12.w[i]);
            }
        }
    }
    const double pref = 2.0 * M_PI / rr;
    const double loss_c = std::exp(-0.25 * base) / (2.0 * kSqrt2Pi);
    for (int l = 0; l <= lmax; ++l) {
        const double gain = pref * (2.0 / kSqrt2Pi) * A1[l];
        // the gain of Q(sqrt(M) f, M) / sqrt(M) is half the two-term gain in k
        k1_out[l] = 0.5 * gain;
        k_out[l] = gain - pref * loss_c * A2[l];
    }
}

Rule inner_rule(double r, double rmax, const CollisionOptions& opt, int layer_nodes) {
    Rule in;
    const double w = opt.layer;
    if (r > w) {
        append(in, composite_gl(0.0, r - w, opt.panel, opt.per_panel));
        append(in, graded_gl(r, r - w, layer_nodes));
    } else {
        append(in, graded_gl(r, 0.0, layer_nodes));
    }
    append(in, graded_gl(r, r + w, layer_nodes));
    append(in, composite_gl(r + w, std::max(rmax, r + w), opt.panel, opt.per_panel));
    return in;
}

// G[l](a, n) = int lambda_l(r_a, r*) R_nl(r*) r*^2 dr*
void inner_integrals(const Rule& outer, double rmax, int N, int L, const CollisionOptions& opt, int layer_nodes,
                     std::vector<Eigen::MatrixXd>& G, std::vector<Eigen::MatrixXd>& G1) {
    const int na = static_cast<int>(outer.size());
    G.assign(L + 1, Eigen::MatrixXd::Zero(na, N));
    G1.assign(L + 1, Eigen::MatrixXd::Zero(na, N));
    KernelRules kr(L);
    tbb::parallel_for(tbb::blocked_range<int>(0, na), [&](const tbb::blocked_range<int>& range) {
        std::vector<double> lam(L + 1), lam1(L + 1), R(N);
        for (int ai = range.begin(); ai < range.end(); ++ai) {
            const double r = outer.x[ai];
            Rule in = inner_rule(r, rmax, opt, layer_nodes);
            for (std::size_t bi = 0; bi < in.size(); ++bi) {
                const double rs = in.x[bi];
                if (rs <= 0.0) continue;
                kernel_degrees_impl(kr, r, rs, L, lam.data(), lam1.data());
                const double w = in.w[bi] * rs * rs;
                for (int l = 0; l <= L; ++l) {
                    radial_all(l, rs, N, R.data());
                    for (int n = 0; n < N; ++n) {
                        G[l](ai, n) += w * lam[l] * R[n];
                        G1[l](ai, n) += w * lam1[l] * R[n];
                    }
                }
            }
        }
    });
}

}  // namespace

double nu_radial(double r) {
    if (r == 0.0) return 2.0 * kSqrt2Pi;
    const double integral = std::sqrt(M_PI / 2.0) * std::erf(r / std::sqrt(2.0));
    return kSqrt2Pi * (std::exp(-0.5 * r * r) + (r + 1.0 / r) * integral);
}

double nu_eval(const std::array<double, 3>& v) { return nu_radial(std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])); }

double kernel_eval(Kernel which, const std::array<double, 3>& v, const std::array<double, 3>& vs) {
    double d2 = 0.0, a = 0.0, b = 0.0;
    for (int i = 0; i < 3; ++i) {
        d2 += (v[i] - vs[i]) * (v[i] - vs[i]);
        a += v[i] * v[i];
        b += vs[i] * vs[i];
    }
    if (d2 == 0.0) throw std::invalid_argument("kernel_eval: coincident arguments");
    const double d = std::sqrt(d2);
    const double k1 = 2.0 / (kSqrt2Pi * d) * std::exp(-(a - b) * (a - b) / (8.0 * d2) - d2 / 8.0);
    if (which == Kernel::k1) return k1;
    return k1 - d / (2.0 * kSqrt2Pi) * std::exp(-(a + b) / 4.0);
}

void kernel_degrees(double r, double rs, int lmax, double* k_out, double* k1_out) {
    if (lmax > 30) throw std::invalid_argument("kernel_degrees: lmax too large");
    KernelRules kr(lmax);
    kernel_degrees_impl(kr, r, rs, lmax, k_out, k1_out);
}

Eigen::VectorXcd apply_blocks(const Basis& b, const std::vector<Eigen::MatrixXd>& op, const Eigen::VectorXcd& f) {
    Eigen::VectorXcd out = Eigen::VectorXcd::Zero(f.size());
    for (std::size_t k = 0; k < b.blocks.size(); ++k) {
        const Block& blk = b.blocks[k];
        out.segment(blk.offset, blk.dim) = op[k].cast<cplx>() * f.segment(blk.offset, blk.dim);
    }
    return out;
}

void finalize_collision(const Basis& b, CollisionMatrices& c) {
    const int N = c.radial_order, L = c.angular_max;
    c.L_l.resize(L + 1);
    c.L1_l.resize(L + 1);
    for (int l = 0; l <= L; ++l) {
        c.L_l[l] = c.K_l[l] - c.nu_l[l];
        c.L1_l[l] = c.K1_l[l] - c.nu_l[l];
    }
    auto block_diag = [&](const std::vector<Eigen::MatrixXd>& per_l, int m) {
        const int dim = (L - m + 1) * N;
        Eigen::MatrixXd M = Eigen::MatrixXd::Zero(dim, dim);
        for (int l = m; l <= L; ++l) M.block((l - m) * N, (l - m) * N, N, N) = per_l[l];
        return M;
    };
    c.nu.clear();
    c.K.clear();
    c.K1.clear();
    c.L.clear();
    c.L1.clear();
    c.V1.clear();
    Eigen::MatrixXd v0, v1;
    for (const Block& blk : b.blocks) {
        c.nu.push_back(block_diag(c.nu_l, blk.m));
        c.K.push_back(block_diag(c.K_l, blk.m));
        c.K1.push_back(block_diag(c.K1_l, blk.m));
        c.L.push_back(block_diag(c.L_l, blk.m));
        c.L1.push_back(block_diag(c.L1_l, blk.m));
        if (blk.m == 0) {
            if (v0.size() == 0) v0 = v_multiplication_matrix(b, 0);
            c.V1.push_back(v0);
        } else {
            if (v1.size() == 0) v1 = v_multiplication_matrix(b, 1);
            c.V1.push_back(v1);
        }
    }
    // spectral gap on range(P1), per degree
    c.mu_per_l.assign(L + 1, 0.0);
    c.mu_estimate = std::numeric_limits<double>::infinity();
    for (int l = 0; l <= L; ++l) {
        int skip = (l == 0) ? 2 : (l == 1 ? 1 : 0);
        Eigen::MatrixXd R = c.L_l[l].block(skip, skip, N - skip, N - skip);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(R, Eigen::EigenvaluesOnly);
        c.mu_per_l[l] = -es.eigenvalues().maxCoeff();
        c.mu_estimate = std::min(c.mu_estimate, c.mu_per_l[l]);
    }
    c.null_residual = 0.0;
    for (int j = 0; j < 5; ++j) {
        int k = b.chi(j);
        if (k < 0) continue;
        Eigen::VectorXcd e = Eigen::VectorXcd::Zero(b.dim());
        e(k) = 1.0;
        c.null_residual = std::max(c.null_residual, apply_blocks(b, c.L, e).norm());
    }
    {
        Eigen::VectorXcd e = Eigen::VectorXcd::Zero(b.dim());
        e(b.chi(0)) = 1.0;
        c.l1_null_residual = apply_blocks(b, c.L1, e).norm();
    }
    c.tag = b.tag;
}

CollisionMatrices assemble_collision(const Basis& b, const CollisionOptions& opt) {
    const int N = b.spec.radial_order, L = b.spec.angular_max;
    const int degree = 2 * (N - 1) + L;
    const double rmax = std::sqrt(2.0 * degree + 2.0) + 8.0;
    const int layer_nodes = 32 + N;
    Rule outer = composite_gl(0.0, rmax, opt.panel, opt.per_panel);
    const int na = static_cast<int>(outer.size());

    std::vector<Eigen::MatrixXd> G, G1;
    inner_integrals(outer, rmax, N, L, opt, layer_nodes, G, G1);

    CollisionMatrices c;
    c.radial_order = N;
    c.angular_max = L;
    c.nu_l.resize(L + 1);
    c.K_l.resize(L + 1);
    c.K1_l.resize(L + 1);
    std::vector<double> R(N);
    for (int l = 0; l <= L; ++l) {
        Eigen::MatrixXd Rw(na, N), Rn(na, N);
        Eigen::VectorXd nuw(na);
        for (int ai = 0; ai < na; ++ai) {
            const double r = outer.x[ai];
            radial_all(l, r, N, R.data());
            for (int n = 0; n < N; ++n) {
                Rn(ai, n) = R[n];
                Rw(ai, n) = outer.w[ai] * r * r * R[n];
            }
            nuw(ai) = nu_radial(r);
        }
        Eigen::MatrixXd K = Rw.transpose() * G[l];
        Eigen::MatrixXd K1 = Rw.transpose() * G1[l];
        c.symmetry_defect = std::max({c.symmetry_defect, (K - K.transpose()).cwiseAbs().maxCoeff(),
                                      (K1 - K1.transpose()).cwiseAbs().maxCoeff()});
        c.K_l[l] = 0.5 * (K + K.transpose());
        c.K1_l[l] = 0.5 * (K1 + K1.transpose());
        Eigen::MatrixXd nu = Rw.transpose() * nuw.asDiagonal() * Rn;
        c.nu_l[l] = 0.5 * (nu + nu.transpose());
    }

    // successive refinement on a subset of outer nodes: coarser layer and panels
    {
        CollisionOptions coarse = opt;
        coarse.per_panel = std::max(4, opt.per_panel - 2);
        Rule sub;
        for (int ai = 0; ai < na; ai += 7) {
            sub.x.push_back(outer.x[ai]);
            sub.w.push_back(outer.w[ai]);
        }
        std::vector<Eigen::MatrixXd> Gc, G1c;
        inner_integrals(sub, rmax, N, std::min(L, 2), coarse, layer_nodes - 8, Gc, G1c);
        double delta = 0.0, scale = 0.0;
        for (int l = 0; l <= std::min(L, 2); ++l)
            for (std::size_t k = 0; k < sub.size(); ++k)
                for (int n = 0; n < N; ++n) {
                    delta = std::max(delta, std::abs(Gc[l](k, n) - G[l](7 * k, n)));
                    scale = std::max(scale, std::abs(G[l](7 * k, n)));
                }
        c.refinement_delta = delta / std::max(scale, 1e-300);
        if (c.refinement_delta > opt.refine_tol)
            throw std::runtime_error("assemble_collision: quadrature refinement delta " +
                                     std::to_string(c.refinement_delta) + " above tolerance");
    }
    finalize_collision(b, c);
    if (opt.with_gamma) c.gamma = assemble_gamma();
    return c;
}

}  // namespace ksl
