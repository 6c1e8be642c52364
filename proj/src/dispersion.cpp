#include "ksl/dispersion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ksl/mode_operators.hpp"

namespace ksl {

namespace {

const cplx I1(0.0, 1.0);

// Breakpoints on [-1, 1] refined geometrically toward c with innermost half-width w.
std::vector<double> pole_breaks(double c, double w) {
    std::vector<double> br{-1.0, 1.0};
    const double cc = std::clamp(c, -1.0, 1.0);
    for (double h = w; h < 2.0; h *= 2.0) {
        if (cc - h > -1.0) br.push_back(cc - h);
        if (cc + h < 1.0) br.push_back(cc + h);
    }
    if (cc > -1.0 && cc < 1.0) br.push_back(cc);
    std::sort(br.begin(), br.end());
    br.erase(std::unique(br.begin(), br.end()), br.end());
    return br;
}

void legendre_m1(int lmax, double mu, double* out) {
    for (int l = 0; l <= lmax; ++l) out[l] = (l >= 1) ? angular_function(l, 1, mu) : 0.0;
}

}  // namespace

Resolvent::Resolvent(const Basis& b, const CollisionMatrices& c) {
    if (c.tag != b.tag) throw std::invalid_argument("resolvent: collision matrices built on another basis");
    const int k0 = b.block_of_sector(0), kc = b.block_of_sector(1, Parity::cos);
    if (k0 < 0 || kc < 0) throw std::invalid_argument("resolvent: basis needs sectors 0 and 1");
    const int d0 = b.blocks[k0].dim, i0 = b.chi(0) - b.blocks[k0].offset;
    std::vector<int> keep;
    for (int i = 0; i < d0; ++i)
        if (i != i0) keep.push_back(i);
    const int m = static_cast<int>(keep.size());
    L0_.resize(m, m);
    V0_.resize(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            L0_(i, j) = c.L1[k0](keep[i], keep[j]);
            V0_(i, j) = c.V1[k0](keep[i], keep[j]);
        }
    const int i1 = b.chi(1) - b.blocks[k0].offset;
    i1_ = static_cast<int>(std::find(keep.begin(), keep.end(), i1) - keep.begin());
    L2_ = c.L1[kc];
    V2_ = c.V1[kc];
    K2_ = c.K1[kc];
    i2_ = b.chi(2) - b.blocks[kc].offset;
    for (int i = 0; i < b.blocks[kc].dim; ++i) {
        const BasisElement& e = b.functions[static_cast<std::size_t>(b.blocks[kc].offset + i)];
        pairs2_.emplace_back(e.n, e.l);
    }
}

cplx Resolvent::R11(cplx lambda, double y, cplx* dlambda) const {
    const int n = static_cast<int>(L0_.rows());
    Eigen::MatrixXcd M = L0_.cast<cplx>() - I1 * y * V0_.cast<cplx>();
    M.diagonal().array() -= lambda;
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu(M);
    if (!(lu.rcond() > 1e-14)) throw std::domain_error("resolvent: singular solve (lambda is spectral)");
    Eigen::VectorXcd e = Eigen::VectorXcd::Zero(n);
    e(i1_) = 1.0;
    Eigen::VectorXcd x = lu.solve(e);
    if (dlambda) *dlambda = x.transpose() * x;
    return x(i1_);
}

cplx Resolvent::R22(cplx lambda, double y, ResolventMethod method, cplx* dlambda) const {
    if (method == ResolventMethod::hybrid) return hybrid_R22(lambda, y, dlambda);
    const int n = static_cast<int>(L2_.rows());
    Eigen::MatrixXcd M = L2_.cast<cplx>() - I1 * y * V2_.cast<cplx>();
    M.diagonal().array() -= lambda;
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu(M);
    if (!(lu.rcond() > 1e-14)) throw std::domain_error("resolvent: singular solve (lambda is spectral)");
    Eigen::VectorXcd e = Eigen::VectorXcd::Zero(n);
    e(i2_) = 1.0;
    Eigen::VectorXcd x = lu.solve(e);
    if (dlambda) *dlambda = x.transpose() * x;
    return x(i2_);
}

cplx Resolvent::hybrid_R22(cplx lambda, double y, cplx* dlambda) const {
    const int n = static_cast<int>(pairs2_.size());
    int lmax = 0, nmax = 0;
    for (auto [nn, l] : pairs2_) {
        lmax = std::max(lmax, l);
        nmax = std::max(nmax, nn);
    }
    const double rmax = std::sqrt(2.0 * (2 * nmax + lmax) + 2.0) + 8.0;
    Rule rr = composite_gl(0.0, rmax, 0.5, 10);
    Eigen::MatrixXcd G = Eigen::MatrixXcd::Zero(n, n), Gd = Eigen::MatrixXcd::Zero(n, n);
    std::vector<double> th(static_cast<std::size_t>(lmax + 1));
    Eigen::MatrixXcd A(lmax + 1, lmax + 1), Ad(lmax + 1, lmax + 1);
    Eigen::VectorXd rad(n);
    for (std::size_t q = 0; q < rr.size(); ++q) {
        const double r = rr.x[q];
        const double nu = nu_radial(r);
        const double yr = y * r;
        A.setZero();
        Ad.setZero();
        std::vector<double> br;
        const double width = (nu + lambda.real()) / std::max(std::abs(yr), 1e-300);
        if (width > 1.0)
            br = {-1.0, 1.0};
        else
            br = pole_breaks(-lambda.imag() / yr, width);
        for (std::size_t p = 0; p + 1 < br.size(); ++p) {
            Rule mr = gauss_legendre(16, br[p], br[p + 1]);
            for (std::size_t k = 0; k < mr.size(); ++k) {
                const double mu = mr.x[k];
                legendre_m1(lmax, mu, th.data());
                const cplx dinv = 1.0 / (-nu - lambda - I1 * yr * mu);
                const cplx w1 = mr.w[k] * dinv, w2 = w1 * dinv;
                for (int l = 1; l <= lmax; ++l)
                    for (int lp = l; lp <= lmax; ++lp) {
                        const double tt = th[static_cast<std::size_t>(l)] * th[static_cast<std::size_t>(lp)];
                        A(l, lp) += w1 * tt;
                        Ad(l, lp) += w2 * tt;
                    }
            }
        }
        for (int i = 0; i < n; ++i) rad(i) = radial_function(pairs2_[static_cast<std::size_t>(i)].first,
                                                             pairs2_[static_cast<std::size_t>(i)].second, r);
        const double wr = rr.w[q] * r * r;
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
                int l = pairs2_[static_cast<std::size_t>(i)].second, lp = pairs2_[static_cast<std::size_t>(j)].second;
                if (l > lp) std::swap(l, lp);
                const double f = wr * rad(i) * rad(j);
                G(i, j) += f * A(l, lp);
                Gd(i, j) += f * Ad(l, lp);
            }
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < i; ++j) {
            G(i, j) = G(j, i);
            Gd(i, j) = Gd(j, i);
        }
    const Eigen::MatrixXcd K = K2_.cast<cplx>();
    Eigen::MatrixXcd IGK = Eigen::MatrixXcd::Identity(n, n) + G * K;
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu(IGK);
    if (!(lu.rcond() > 1e-14)) throw std::domain_error("resolvent: singular solve (lambda is spectral)");
    const Eigen::VectorXcd g = G.col(i2_);
    const Eigen::VectorXcd Sg = lu.solve(g);
    const Eigen::VectorXcd KSg = K * Sg;
    const cplx R = G(i2_, i2_) - (g.transpose() * KSg)(0);
    if (dlambda) {
        const Eigen::VectorXcd gd = Gd.col(i2_);
        const cplx t1 = (gd.transpose() * KSg)(0);
        const cplx t2 = (KSg.transpose() * Gd * KSg)(0);
        *dlambda = Gd(i2_, i2_) - 2.0 * t1 + t2;
    }
    return R;
}

ResolventScalars Resolvent::at(cplx lambda, double y, ResolventMethod m) const {
    ResolventScalars rs;
    rs.R11 = R11(lambda, y, &rs.dR11_dlambda);
    rs.R22 = R22(lambda, y, m, &rs.dR22_dlambda);
    const double h = 1e-5;
    rs.dR11_dy = (R11(lambda, y + h) - R11(lambda, y - h)) / (2.0 * h);
    rs.dR22_dy = (R22(lambda, y + h, m) - R22(lambda, y - h, m)) / (2.0 * h);
    return rs;
}

ResolventScalars resolvent_scalars(cplx lambda, double s, double eps, const Basis& b, const CollisionMatrices& c,
                                   ResolventMethod m) {
    return Resolvent(b, c).at(lambda, eps * s, m);
}

DispersionBranch solve_z0(const Resolvent& R, double s, double eps, double eta, const DispersionOptions& opt) {
    DispersionBranch br;
    br.label = "z0";
    br.s = s;
    br.eps = eps;
    br.prediction = -eta * (1.0 + s * s);
    const double y = eps * s, e2 = eps * eps, f = 1.0 + s * s;
    cplx z = br.prediction;
    int it = 0;
    for (; it < opt.max_iter; ++it) {
        const cplx zn = f * R.R11(e2 * z, y);
        if (!std::isfinite(std::abs(zn)) || std::abs(zn) > 1e8) throw std::domain_error("solve_z0: fixed point diverged");
        const double dz = std::abs(zn - z);
        z = zn;
        if (dz <= 1e-8 * std::max(1.0, std::abs(z))) break;
    }
    if (it == opt.max_iter) throw std::domain_error("solve_z0: fixed point did not contract");
    for (int k = 0; k < 20; ++k) {
        cplx d;
        const cplx F = z - f * R.R11(e2 * z, y, &d);
        br.residual = std::abs(F);
        if (br.residual <= opt.tol * std::max(1.0, std::abs(z))) break;
        z -= F / (1.0 - f * e2 * d);
        ++it;
    }
    br.value = z;
    br.residual = std::abs(z - f * R.R11(e2 * z, y));
    br.iterations = it + 1;
    return br;
}

namespace {

DispersionBranch solve_quadratic_branch(const Resolvent& R, double s, double eps, cplx seed, const std::string& label,
                                        cplx prediction, const DispersionOptions& opt) {
    DispersionBranch br;
    br.label = label;
    br.s = s;
    br.eps = eps;
    br.prediction = prediction;
    const double y = eps * s, e2 = eps * eps;
    cplx z = seed;
    int it = 0;
    for (; it < opt.max_iter; ++it) {
        const cplx Rv = R.R22(e2 * z, y, opt.method);
        const cplx disc = std::sqrt(Rv * Rv - 4.0 * s * s);
        const cplx r1 = 0.5 * (Rv + disc), r2 = 0.5 * (Rv - disc);
        const cplx zn = (std::abs(r1 - z) <= std::abs(r2 - z)) ? r1 : r2;
        if (!std::isfinite(std::abs(zn))) throw std::domain_error("solve_z_pm: iteration diverged");
        const double dz = std::abs(zn - z);
        z = zn;
        if (dz <= 1e-9 * std::max(1.0, std::abs(z))) break;
    }
    if (it == opt.max_iter) throw std::domain_error("solve_z_pm: iteration did not contract");
    for (int k = 0; k < 20; ++k) {
        cplx d;
        const cplx Rv = R.R22(e2 * z, y, opt.method, &d);
        const cplx F = z * z - Rv * z + s * s;
        if (std::abs(F) <= opt.tol * std::max(1.0, std::abs(z * z))) break;
        const cplx dF = 2.0 * z - Rv - e2 * d * z;
        if (std::abs(dF) < 1e-14) break;
        const cplx zn = z - F / dF;
        const cplx Rn = R.R22(e2 * zn, y, opt.method);
        if (std::abs(zn * zn - Rn * zn + s * s) >= std::abs(F)) break;
        z = zn;
        ++it;
    }
    const cplx Rv = R.R22(e2 * z, y, opt.method);
    br.value = z;
    br.residual = std::abs(z * z - Rv * z + s * s);
    br.iterations = it + 1;
    return br;
}

}  // namespace

std::pair<DispersionBranch, DispersionBranch> solve_z_pm(const Resolvent& R, double s, double eps, double eta,
                                                         const DispersionOptions& opt) {
    const cplx disc = std::sqrt(cplx(eta * eta - 4.0 * s * s, 0.0));
    const cplx bm = -0.5 * eta - 0.5 * disc, bp = -0.5 * eta + 0.5 * disc;
    DispersionBranch zm = solve_quadratic_branch(R, s, eps, bm, "z_minus", bm, opt);
    DispersionBranch zp = solve_quadratic_branch(R, s, eps, bp, "z_plus", bp, opt);
    const bool near = std::abs(eta * eta - 4.0 * s * s) < opt.crossing_band;
    const bool coincide = std::abs(zm.value - zp.value) < 1e-6 * std::max(1.0, std::abs(zm.value));
    zm.crossing_flag = zp.crossing_flag = near || coincide;
    return {zm, zp};
}

double crossing_location(const Resolvent& R, double eps, double eta, double tol) {
    double s = 0.5 * eta;
    for (int k = 0; k < 60; ++k) {
        const double y = eps * s;
        cplx dl;
        const double F = R.R22(-eps * eps * s, y, ResolventMethod::galerkin, &dl).real() + 2.0 * s;
        const double h = 1e-6;
        const double Fy = (R.R22(-eps * eps * s, y + h, ResolventMethod::galerkin).real() -
                           R.R22(-eps * eps * s, y - h, ResolventMethod::galerkin).real()) /
                          (2.0 * h);
        const double dF = -eps * eps * dl.real() + eps * Fy + 2.0;
        const double step = F / dF;
        s -= step;
        if (std::abs(step) < tol * std::max(1.0, s)) return s;
    }
    throw std::domain_error("crossing_location: Newton iteration did not converge");
}

double crossing_extrapolated(const Resolvent& R, const std::vector<double>& eps_list, double eta) {
    if (eps_list.size() < 2) throw std::invalid_argument("crossing_extrapolated: need at least two eps values");
    std::vector<double> col;
    for (double e : eps_list) col.push_back(crossing_location(R, e, eta));
    // the expansion is even in eps; successive halving gives factors 4, 16, ...
    double factor = 4.0;
    while (col.size() > 1) {
        std::vector<double> next;
        for (std::size_t i = 0; i + 1 < col.size(); ++i) {
            const double ratio = eps_list[i] / eps_list[i + 1];
            const double f = std::pow(ratio, std::log2(factor));
            next.push_back((f * col[i + 1] - col[i]) / (f - 1.0));
        }
        col = next;
        factor *= 4.0;
    }
    return col[0];
}

std::pair<DispersionBranch, DispersionBranch> solve_highfreq(const Resolvent& R, double s, double eps,
                                                             const DispersionOptions& opt) {
    std::pair<DispersionBranch, DispersionBranch> out;
    const double y = eps * s, e2 = eps * eps;
    for (int j : {-1, 1}) {
        DispersionBranch br;
        br.label = (j < 0) ? "highfreq_minus" : "highfreq_plus";
        br.s = s;
        br.eps = eps;
        br.prediction = cplx(0.0, j * s);
        const cplx jis(0.0, j * s);
        cplx yv = 0.0;
        int it = 0;
        for (; it < opt.max_iter; ++it) {
            const cplx z = jis + yv;
            const cplx yn = R.R22(e2 * z, y, opt.method) * z / (z + jis);
            const double dy = std::abs(yn - yv);
            yv = yn;
            if (!std::isfinite(std::abs(yv)) || std::abs(yv) > 0.5 * s)
                throw std::domain_error("solve_highfreq: fixed point left the contraction ball");
            if (dy <= 1e-10 * std::max(1e-3, std::abs(yv))) break;
        }
        if (it == opt.max_iter) throw std::domain_error("solve_highfreq: fixed point did not contract");
        cplx z = jis + yv;
        for (int k = 0; k < 20; ++k) {
            cplx d;
            const cplx Rv = R.R22(e2 * z, y, opt.method, &d);
            const cplx F = z * z - Rv * z + s * s;
            if (std::abs(F) <= opt.tol * std::max(1.0, std::abs(z * z))) break;
            const cplx dF = 2.0 * z - Rv - e2 * d * z;
            const cplx zn = z - F / dF;
            const cplx Rn = R.R22(e2 * zn, y, opt.method);
            if (std::abs(zn * zn - Rn * zn + s * s) >= std::abs(F)) break;
            z = zn;
            ++it;
        }
        const cplx Rv = R.R22(e2 * z, y, opt.method);
        br.value = z;
        br.residual = std::abs(z * z - Rv * z + s * s);
        br.iterations = it + 1;
        (j < 0 ? out.first : out.second) = br;
    }
    return out;
}

cplx highfreq_offset(const DispersionBranch& br) {
    const double j = (br.label == "highfreq_minus") ? -1.0 : 1.0;
    return br.value - cplx(0.0, j * br.s);
}

std::vector<DispersionBranch> boltzmann_dispersion(double s, double eps, const Basis& b, const CollisionMatrices& c,
                                                   const TransportCoefficients& tc) {
    ModeOperator B = assemble_B(s, eps, b, c);
    Spectrum sp = spectrum(B);
    const int k0 = b.block_of_sector(0), kc = b.block_of_sector(1, Parity::cos), ks = b.block_of_sector(1, Parity::sin);
    auto nearest = [&](int block, int count) {
        std::vector<const EigenPair*> v;
        for (const auto& p : sp.pairs)
            if (p.block == block) v.push_back(&p);
        std::sort(v.begin(), v.end(), [](const EigenPair* a, const EigenPair* bb) { return std::abs(a->lambda) < std::abs(bb->lambda); });
        v.resize(static_cast<std::size_t>(std::min<int>(count, static_cast<int>(v.size()))));
        return v;
    };
    const double kappa = eps * s;
    const double mu1 = std::sqrt(5.0 / 3.0);
    auto make = [&](const EigenPair* p, int j) {
        DispersionBranch br;
        br.label = "boltzmann_" + std::to_string(j);
        br.s = s;
        br.eps = eps;
        br.value = p->lambda;
        br.residual = p->residual;
        const double mu = (j == 1) ? mu1 : (j == -1 ? -mu1 : 0.0);
        br.prediction = cplx(-tc.a_of(j) * kappa * kappa, mu * kappa);
        return br;
    };
    std::vector<DispersionBranch> out;
    auto s0 = nearest(k0, 3);
    if (s0.size() < 3) throw std::runtime_error("boltzmann_dispersion: sector 0 too small");
    std::sort(s0.begin(), s0.end(), [](const EigenPair* a, const EigenPair* bb) { return a->lambda.imag() < bb->lambda.imag(); });
    if (kappa > 0.0 && std::abs(s0[0]->lambda.imag() + s0[2]->lambda.imag()) > 1e-6 * std::max(1.0, std::abs(s0[0]->lambda.imag())))
        throw std::runtime_error("boltzmann_dispersion: acoustic branches are not matched");
    out.push_back(make(s0[0], -1));
    out.push_back(make(s0[1], 0));
    out.push_back(make(s0[2], 1));
    out.push_back(make(nearest(kc, 1).at(0), 2));
    out.push_back(make(nearest(ks, 1).at(0), 3));
    return out;
}

BoltzmannFit boltzmann_fit(const Basis& b, const CollisionMatrices& c, const TransportCoefficients& tc,
                           const std::vector<double>& kappas) {
    const int np = static_cast<int>(kappas.size());
    if (np < 4) throw std::invalid_argument("boltzmann_fit: need at least 4 kappa values");
    const int deg = std::min(3, np - 2);
    Eigen::MatrixXd X(np, deg + 1);
    Eigen::MatrixXd Yim(np, 5), Yre(np, 5);
    BoltzmannFit fit;
    for (int i = 0; i < np; ++i) {
        const double k = kappas[static_cast<std::size_t>(i)];
        auto br = boltzmann_dispersion(k, 1.0, b, c, tc);
        for (int d = 0; d <= deg; ++d) X(i, d) = std::pow(k * k, d);
        for (int j = 0; j < 5; ++j) {
            Yim(i, j) = br[static_cast<std::size_t>(j)].value.imag() / k;
            Yre(i, j) = br[static_cast<std::size_t>(j)].value.real() / (k * k);
        }
        if (i == np - 1) fit.branches = br;
    }
    auto qr = X.colPivHouseholderQr();
    Eigen::MatrixXd cim = qr.solve(Yim), cre = qr.solve(Yre);
    for (int j = 0; j < 5; ++j) {
        fit.mu[static_cast<std::size_t>(j)] = cim(0, j);
        fit.a[static_cast<std::size_t>(j)] = -cre(0, j);
    }
    return fit;
}

}  // namespace ksl
