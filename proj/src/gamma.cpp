#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <functional>
#include <cmath>
#include <random>
#include <stdexcept>

#include "ksl/collision_ops.hpp"

namespace ksl {

namespace {

std::vector<BasisElement> elements_up_to(int degree) {
    std::vector<BasisElement> out;
    for (int d = 0; d <= degree; ++d)
        for (int l = d % 2; l <= d; l += 2) {
            int n = (d - l) / 2;
            for (int m = 0; m <= l; ++m) {
                if (m == 0) {
                    out.push_back(BasisElement{n, l, 0, Parity::none, 0});
                } else {
                    out.push_back(BasisElement{n, l, m, Parity::cos, 0});
                    out.push_back(BasisElement{n, l, m, Parity::sin, 0});
                }
            }
        }
    return out;
}

std::vector<std::array<int, 3>> monomials_up_to(int degree) {
    std::vector<std::array<int, 3>> out;
    for (int d = 0; d <= degree; ++d)
        for (int a = d; a >= 0; --a)
            for (int b = d - a; b >= 0; --b) out.push_back({a, b, d - a - b});
    return out;
}

// e / sqrt(M): the polynomial part of a basis element
double element_poly(const BasisElement& e, const std::array<double, 3>& v) {
    const double r = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    double mu = 1.0, phi = 0.0;
    if (r > 0.0) {
        mu = v[0] / r;
        phi = std::atan2(v[2], v[1]);
    }
    return std::pow(2.0 * M_PI, 0.75) * radial_poly(e.n, e.l, r) * angular_function(e.l, e.m, mu) *
           azimuthal_function(e.m, e.parity, phi);
}

struct MonoTable {
    std::vector<std::array<int, 3>> exps;
    int maxdeg;
    void eval(const std::array<double, 3>& v, double* out) const {
        double pw[3][5];
        for (int i = 0; i < 3; ++i) {
            pw[i][0] = 1.0;
            for (int k = 1; k <= maxdeg; ++k) pw[i][k] = pw[i][k - 1] * v[i];
        }
        for (std::size_t c = 0; c < exps.size(); ++c) out[c] = pw[0][exps[c][0]] * pw[1][exps[c][1]] * pw[2][exps[c][2]];
    }
};

std::vector<std::array<double, 3>> fit_points(int count) {
    std::mt19937_64 rng(0x6b736c67ULL);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::vector<std::array<double, 3>> pts(count);
    for (auto& p : pts) p = {u(rng), u(rng), u(rng)};
    return pts;
}

// rows: elements, columns: monomial coefficients
Eigen::MatrixXd monomial_coefficients(const std::vector<BasisElement>& els, const MonoTable& mono) {
    const int nm = static_cast<int>(mono.exps.size());
    auto pts = fit_points(4 * nm + 40);
    Eigen::MatrixXd A(pts.size(), nm), Y(pts.size(), els.size());
    for (std::size_t p = 0; p < pts.size(); ++p) {
        std::vector<double> row(nm);
        mono.eval(pts[p], row.data());
        for (int c = 0; c < nm; ++c) A(p, c) = row[c];
        for (std::size_t k = 0; k < els.size(); ++k) Y(p, k) = element_poly(els[k], pts[p]);
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    Eigen::MatrixXd C = qr.solve(Y);
    double res = (A * C - Y).cwiseAbs().maxCoeff();
    if (res > 1e-9) throw std::runtime_error("gamma: basis elements are not polynomials of the expected degree");
    return C.transpose();
}

}  // namespace

int GammaTensor::input_index(int n, int l, int m, Parity p) const {
    for (int i = 0; i < nin(); ++i) {
        const auto& e = inputs[i];
        if (e.n == n && e.l == l && e.m == m && (m == 0 || e.parity == p)) return i;
    }
    return -1;
}

int GammaTensor::output_index(int n, int l, int m, Parity p) const {
    for (int i = 0; i < nout(); ++i) {
        const auto& e = outputs[i];
        if (e.n == n && e.l == l && e.m == m && (m == 0 || e.parity == p)) return i;
    }
    return -1;
}

GammaTensor assemble_gamma() {
    GammaTensor t;
    t.inputs = elements_up_to(2);
    t.outputs = elements_up_to(4);
    MonoTable m2{monomials_up_to(2), 2}, m4{monomials_up_to(4), 4};
    const int n2 = static_cast<int>(m2.exps.size()), n4 = static_cast<int>(m4.exps.size());
    Eigen::MatrixXd Cin = monomial_coefficients(t.inputs, m2);
    Eigen::MatrixXd Cout = monomial_coefficients(t.outputs, m4);

    // (Q(m_a sqrt M, m_b sqrt M) / sqrt M, m_c sqrt M) with hemisphere normalization, in center/relative
    // variables: v = V + u/2, v* = V - u/2, M M* = (2 pi)^{-3} exp(-|V|^2 - |u|^2/4).
    Rule gh = gauss_hermite(5);
    Rule gy = gauss_laguerre(6, 1.0);  // rho^2/4 = y, rho^3 d rho = 8 y dy
    Rule gc = gauss_legendre(10);
    const int nphi = 20, nbeta = 12;
    Rule ga = gauss_legendre(8, 0.0, 1.0);

    std::vector<double> Tm(static_cast<std::size_t>(n2) * n2 * n4, 0.0);
    std::vector<double> mv(n4), mvs(n4), mp(n4), D(n4);
    for (std::size_t ix = 0; ix < gh.size(); ++ix)
        for (std::size_t iy = 0; iy < gh.size(); ++iy)
            for (std::size_t iz = 0; iz < gh.size(); ++iz) {
                const std::array<double, 3> V{gh.x[ix], gh.x[iy], gh.x[iz]};
                const double wV = gh.w[ix] * gh.w[iy] * gh.w[iz];
                for (std::size_t ir = 0; ir < gy.size(); ++ir) {
                    const double rho = 2.0 * std::sqrt(gy.x[ir]);
                    const double wr = 8.0 * gy.w[ir];
                    for (std::size_t ic = 0; ic < gc.size(); ++ic)
                        for (int ip = 0; ip < nphi; ++ip) {
                            const double ct = gc.x[ic], st = std::sqrt(1.0 - ct * ct);
                            const double ph = 2.0 * M_PI * ip / nphi;
                            const std::array<double, 3> uh{ct, st * std::cos(ph), st * std::sin(ph)};
                            const double wu = gc.w[ic] * 2.0 * M_PI / nphi;
                            // orthonormal frame around uh
                            std::array<double, 3> e1{-st, ct * std::cos(ph), ct * std::sin(ph)};
                            std::array<double, 3> e2{0.0, -std::sin(ph), std::cos(ph)};
                            std::array<double, 3> v, vs;
                            for (int k = 0; k < 3; ++k) {
                                v[k] = V[k] + 0.5 * rho * uh[k];
                                vs[k] = V[k] - 0.5 * rho * uh[k];
                            }
                            m4.eval(v, mv.data());
                            m2.eval(vs, mvs.data());
                            std::fill(D.begin(), D.end(), 0.0);
                            double wsum = 0.0;
                            for (std::size_t ia = 0; ia < ga.size(); ++ia) {
                                const double ca = ga.x[ia], sa = std::sqrt(1.0 - ca * ca);
                                for (int ib = 0; ib < nbeta; ++ib) {
                                    const double be = 2.0 * M_PI * ib / nbeta;
                                    const double w = ga.w[ia] * 2.0 * M_PI / nbeta * ca;
                                    std::array<double, 3> om, vp;
                                    double uo = 0.0;
                                    for (int k = 0; k < 3; ++k) {
                                        om[k] = ca * uh[k] + sa * (std::cos(be) * e1[k] + std::sin(be) * e2[k]);
                                        uo += rho * uh[k] * om[k];
                                    }
                                    for (int k = 0; k < 3; ++k) vp[k] = v[k] - uo * om[k];
                                    m4.eval(vp, mp.data());
                                    for (int c = 0; c < n4; ++c) D[c] += w * mp[c];
                                    wsum += w;
                                }
                            }
                            for (int c = 0; c < n4; ++c) D[c] -= wsum * mv[c];
                            // rho enters via |u.omega| = rho cos(alpha); already in wr (rho^3 = rho^2 * rho)
                            const double W = wV * wr * wu * std::pow(2.0 * M_PI, -3.0);
                            for (int a = 0; a < n2; ++a) {
                                const double wa = W * mv[a];
                                for (int b = 0; b < n2; ++b) {
                                    const double wab = wa * mvs[b];
                                    double* row = &Tm[(static_cast<std::size_t>(a) * n2 + b) * n4];
                                    for (int c = 0; c < n4; ++c) row[c] += wab * D[c];
                                }
                            }
                        }
                }
            }
    // monomial indices of degree <= 2 coincide with the first n2 entries of the degree-4 list
    const int nin = t.nin(), nout = t.nout();
    t.T.assign(static_cast<std::size_t>(nin) * nin * nout, 0.0);
    // contract: T_ijk = sum_abc Cin_ia Cin_jb Cout_kc Tm_abc
    Eigen::MatrixXd Tab(n2 * n2, n4);
    for (int ab = 0; ab < n2 * n2; ++ab)
        for (int c = 0; c < n4; ++c) Tab(ab, c) = Tm[static_cast<std::size_t>(ab) * n4 + c];
    Eigen::MatrixXd Tk = Tab * Cout.transpose();  // (ab, k)
    for (int k = 0; k < nout; ++k) {
        Eigen::MatrixXd S(n2, n2);
        for (int a = 0; a < n2; ++a)
            for (int b = 0; b < n2; ++b) S(a, b) = Tk(a * n2 + b, k);
        Eigen::MatrixXd R = Cin * S * Cin.transpose();
        for (int i = 0; i < nin; ++i)
            for (int j = 0; j < nin; ++j) t.T[(static_cast<std::size_t>(i) * nin + j) * nout + k] = R(i, j);
    }
    return t;
}

Eigen::VectorXcd gamma_apply(const GammaTensor& t, const Eigen::VectorXcd& f, const Eigen::VectorXcd& g) {
    if (f.size() != t.nin() || g.size() != t.nin()) throw std::invalid_argument("gamma_apply: inputs outside sub-basis");
    Eigen::VectorXcd out = Eigen::VectorXcd::Zero(t.nout());
    for (int i = 0; i < t.nin(); ++i) {
        if (f(i) == 0.0) continue;
        for (int j = 0; j < t.nin(); ++j) {
            if (g(j) == 0.0) continue;
            const cplx c = f(i) * g(j);
            for (int k = 0; k < t.nout(); ++k) out(k) += c * t.at(i, j, k);
        }
    }
    return out;
}

Eigen::VectorXcd gamma_inputs_from_polynomial(const GammaTensor& t,
                                             const std::function<double(const std::array<double, 3>&)>& q) {
    auto pts = fit_points(60);
    Eigen::MatrixXd A(pts.size(), t.nin());
    Eigen::VectorXd y(pts.size());
    for (std::size_t p = 0; p < pts.size(); ++p) {
        for (int k = 0; k < t.nin(); ++k) A(p, k) = element_poly(t.inputs[k], pts[p]);
        y(p) = q(pts[p]);
    }
    Eigen::VectorXd a = A.colPivHouseholderQr().solve(y);
    if ((A * a - y).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, y.cwiseAbs().maxCoeff()))
        throw std::invalid_argument("gamma_inputs_from_polynomial: degree above 2");
    return a.cast<cplx>();
}

Eigen::VectorXcd to_gamma_inputs(const Basis& b, const GammaTensor& t, const VelocityFunction& f, double tol) {
    if (f.tag != b.tag || f.c.size() != b.dim()) throw std::invalid_argument("to_gamma_inputs: basis mismatch");
    Eigen::VectorXcd out = Eigen::VectorXcd::Zero(t.nin());
    for (int i = 0; i < b.dim(); ++i) {
        const auto& e = b.functions[i];
        int k = t.input_index(e.n, e.l, e.m, e.parity);
        if (k >= 0)
            out(k) = f.c(i);
        else if (std::abs(f.c(i)) > tol)
            throw std::invalid_argument("to_gamma_inputs: function outside the covered sub-basis");
    }
    return out;
}

Eigen::VectorXcd degree_operator_on_outputs(const GammaTensor& t, const std::vector<Eigen::MatrixXd>& op_l,
                                            const Eigen::VectorXcd& f_in) {
    Eigen::VectorXcd out = Eigen::VectorXcd::Zero(t.nout());
    for (int i = 0; i < t.nin(); ++i) {
        if (f_in(i) == 0.0) continue;
        const auto& ei = t.inputs[i];
        for (int k = 0; k < t.nout(); ++k) {
            const auto& ek = t.outputs[k];
            if (ek.l != ei.l || ek.m != ei.m || ek.parity != ei.parity) continue;
            if (ek.n >= op_l[ei.l].rows()) continue;
            out(k) += op_l[ei.l](ek.n, ei.n) * f_in(i);
        }
    }
    return out;
}

double GammaIdentityResiduals::max() const {
    return std::max({gamma2, gamma1_quadratic, gamma1_cubic, gamma1_quartic, invariants});
}

namespace {

// Coefficients over els of q sqrt(M) for a polynomial q within their span.
Eigen::VectorXcd fit_on_elements(const std::vector<BasisElement>& els,
                                 const std::function<double(const std::array<double, 3>&)>& q) {
    auto pts = fit_points(4 * static_cast<int>(els.size()) + 40);
    Eigen::MatrixXd A(pts.size(), els.size());
    Eigen::VectorXd y(pts.size());
    for (std::size_t p = 0; p < pts.size(); ++p) {
        for (std::size_t k = 0; k < els.size(); ++k) A(p, k) = element_poly(els[k], pts[p]);
        y(p) = q(pts[p]);
    }
    Eigen::VectorXd a = A.colPivHouseholderQr().solve(y);
    if ((A * a - y).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, y.cwiseAbs().maxCoeff()))
        throw std::invalid_argument("fit_on_elements: polynomial outside the span");
    return a.cast<cplx>();
}

// L P1 applied to output-space coefficients, per degree
Eigen::VectorXcd LP1_outputs(const GammaTensor& t, const std::vector<Eigen::MatrixXd>& op_l, Eigen::VectorXcd a) {
    for (int k = 0; k < t.nout(); ++k) {
        const auto& e = t.outputs[k];
        const bool invariant = (e.n == 0 && e.l <= 1) || (e.n == 1 && e.l == 0);
        if (invariant) a(k) = 0.0;
    }
    Eigen::VectorXcd out = Eigen::VectorXcd::Zero(t.nout());
    for (int i = 0; i < t.nout(); ++i) {
        if (a(i) == 0.0) continue;
        const auto& ei = t.outputs[i];
        for (int k = 0; k < t.nout(); ++k) {
            const auto& ek = t.outputs[k];
            if (ek.l != ei.l || ek.m != ei.m || ek.parity != ei.parity) continue;
            out(k) += op_l[ei.l](ek.n, ei.n) * a(i);
        }
    }
    return out;
}

}  // namespace

GammaIdentityResiduals gamma_identity_residuals(const CollisionMatrices& c, std::uint64_t seed) {
    const GammaTensor& t = c.gamma;
    if (t.nin() == 0) throw std::invalid_argument("gamma_identity_residuals: gamma tensor not assembled");
    if (c.angular_max < 4 || c.radial_order < 3) throw std::invalid_argument("gamma_identity_residuals: truncation too small");
    using P = std::array<double, 3>;
    auto sym = [&](const Eigen::VectorXcd& f, const Eigen::VectorXcd& g) {
        return Eigen::VectorXcd(0.5 * (gamma_apply(t, f, g) + gamma_apply(t, g, f)));
    };
    auto vv = [](const P& v) { return v[0] * v[0] + v[1] * v[1] + v[2] * v[2]; };
    GammaIdentityResiduals r;
    const Eigen::VectorXcd chi0 = gamma_inputs_from_polynomial(t, [](const P&) { return 1.0; });
    const Eigen::VectorXcd e2 = gamma_inputs_from_polynomial(t, vv);
    for (int i = 0; i < 3; ++i) {
        const Eigen::VectorXcd vi = gamma_inputs_from_polynomial(t, [i](const P& v) { return v[i]; });
        const Eigen::VectorXcd lhs = gamma_apply(t, chi0, vi);
        const Eigen::VectorXcd rhs = -degree_operator_on_outputs(t, c.L1_l, vi);
        r.gamma2 = std::max(r.gamma2, (lhs - rhs).norm());
        for (int j = 0; j < 3; ++j) {
            const Eigen::VectorXcd vj = gamma_inputs_from_polynomial(t, [j](const P& v) { return v[j]; });
            const Eigen::VectorXcd q = fit_on_elements(t.outputs, [i, j](const P& v) { return v[i] * v[j]; });
            r.gamma1_quadratic = std::max(r.gamma1_quadratic, (sym(vi, vj) + 0.5 * LP1_outputs(t, c.L_l, q)).norm());
        }
        const Eigen::VectorXcd q3 = fit_on_elements(t.outputs, [i, vv](const P& v) { return v[i] * vv(v); });
        r.gamma1_cubic = std::max(r.gamma1_cubic, (sym(vi, e2) + 0.5 * LP1_outputs(t, c.L_l, q3)).norm());
    }
    const Eigen::VectorXcd q4 = fit_on_elements(t.outputs, [vv](const P& v) { return vv(v) * vv(v); });
    r.gamma1_quartic = (sym(e2, e2) + 0.5 * LP1_outputs(t, c.L_l, q4)).norm();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<int> inv;
    for (int k = 0; k < t.nout(); ++k) {
        const auto& e = t.outputs[k];
        if ((e.n == 0 && e.l <= 1) || (e.n == 1 && e.l == 0)) inv.push_back(k);
    }
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXcd f(t.nin()), g(t.nin());
        for (int k = 0; k < t.nin(); ++k) f(k) = nd(rng);
        for (int k = 0; k < t.nin(); ++k) g(k) = nd(rng);
        const Eigen::VectorXcd out = sym(f, g);
        for (int k : inv) r.invariants = std::max(r.invariants, std::abs(out(k)) / (f.norm() * g.norm()));
    }
    return r;
}

}  // namespace ksl
