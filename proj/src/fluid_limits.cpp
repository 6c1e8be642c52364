#include "ksl/fluid_limits.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ksl {

namespace {

const cplx I1(0.0, 1.0);

struct LocalBlocks {
    int k0, kc, ks;
};

LocalBlocks local_blocks(const Basis& b) {
    LocalBlocks lb{b.block_of_sector(0), b.block_of_sector(1, Parity::cos), b.block_of_sector(1, Parity::sin)};
    if (lb.k0 < 0 || lb.kc < 0 || lb.ks < 0) throw std::invalid_argument("transport: basis needs sectors 0 and 1");
    return lb;
}

// -(M^{-1} r, r) on the complement of the removed coordinates.
double neg_quadratic(const Eigen::MatrixXd& M, const Eigen::VectorXd& r, const std::vector<int>& removed) {
    const int n = static_cast<int>(M.rows());
    std::vector<int> keep;
    for (int i = 0; i < n; ++i)
        if (std::find(removed.begin(), removed.end(), i) == removed.end()) keep.push_back(i);
    for (int j : removed) {
        if (M.col(j).norm() > 1e-8) throw std::runtime_error("transport: operator does not vanish on the removed space");
        if (std::abs(r(j)) > 1e-12) throw std::runtime_error("transport: right-hand side outside the range");
    }
    const int m = static_cast<int>(keep.size());
    Eigen::MatrixXd Mr(m, m);
    Eigen::VectorXd rr(m);
    for (int i = 0; i < m; ++i) {
        rr(i) = r(keep[i]);
        for (int j = 0; j < m; ++j) Mr(i, j) = M(keep[i], keep[j]);
    }
    Eigen::VectorXd x = Mr.ldlt().solve(rr);
    return -x.dot(rr);
}

Eigen::VectorXd block_part(const Basis& b, int k, const Eigen::VectorXd& full) {
    return full.segment(b.blocks[k].offset, b.blocks[k].dim);
}

double a_coefficient(const Basis& b, const CollisionMatrices& c, int j) {
    const LocalBlocks lb = local_blocks(b);
    const int k = (j == 2) ? lb.kc : (j == 3 ? lb.ks : lb.k0);
    const int off = b.blocks[k].offset;
    std::vector<int> removed;
    if (k == lb.k0)
        removed = {b.chi(0) - off, b.chi(1) - off, b.chi(4) - off};
    else if (k == lb.kc)
        removed = {b.chi(2) - off};
    else
        removed = {b.chi(3) - off};
    Eigen::VectorXd h = block_part(b, k, h_vector(b, j));
    Eigen::VectorXd r = c.V1[k] * h;
    for (int i : removed) r(i) = 0.0;
    return neg_quadratic(c.L[k], r, removed);
}

// exp(t M) for M = [[-eta, i s], [i s, 0]]
Eigen::Matrix2cd pair_exp(double t, double s, double eta) {
    const cplx lb = -0.5 * eta;
    const cplx d = std::sqrt(cplx(0.25 * eta * eta - s * s, 0.0));
    const cplx dt = d * t;
    cplx c, sc;
    if (std::abs(dt) < 1e-4) {
        c = 1.0 + 0.5 * dt * dt;
        sc = t * (1.0 + dt * dt / 6.0);
    } else {
        c = std::cosh(dt);
        sc = std::sinh(dt) / d;
    }
    Eigen::Matrix2cd M;
    M << -eta - lb, I1 * s, I1 * s, -lb;
    Eigen::Matrix2cd E = c * Eigen::Matrix2cd::Identity() + sc * M;
    return std::exp(lb * t) * E;
}

void check_field_constraint(const FieldMode& U, double s, const Vec3& omega, double tol) {
    const double scale = std::max(1.0, std::max(std::abs(U.rho), std::max(U.E.norm(), U.B.norm())));
    if (std::abs(U.rho - I1 * s * omega.cast<cplx>().dot(U.E)) > tol * scale)
        throw std::invalid_argument("Y2: constraint rho = i xi . E violated");
    if (std::abs(omega.cast<cplx>().dot(U.B)) > tol * scale) throw std::invalid_argument("Y2: constraint xi . B = 0 violated");
}

// bilinear, without conjugation
Vec3c cross(const Vec3& a, const Vec3c& v) {
    return Vec3c(a(1) * v(2) - a(2) * v(1), a(2) * v(0) - a(0) * v(2), a(0) * v(1) - a(1) * v(0));
}

}  // namespace

Eigen::VectorXd h_vector(const Basis& b, int j) {
    Eigen::VectorXd h = Eigen::VectorXd::Zero(b.dim());
    switch (j) {
        case 0:
            h(b.chi(0)) = std::sqrt(2.0 / 5.0);
            h(b.chi(4)) = -std::sqrt(3.0 / 5.0);
            break;
        case 1:
        case -1:
            h(b.chi(0)) = std::sqrt(3.0 / 10.0);
            h(b.chi(1)) = -j * std::sqrt(0.5);
            h(b.chi(4)) = std::sqrt(1.0 / 5.0);
            break;
        case 2: h(b.chi(2)) = 1.0; break;
        case 3: h(b.chi(3)) = 1.0; break;
        default: throw std::out_of_range("h_vector: j must be in -1..3");
    }
    return h;
}

Eigen::VectorXd h_tilde(const Basis& b, int k) {
    Eigen::VectorXd h = Eigen::VectorXd::Zero(b.dim());
    if (k == 0) {
        h(b.chi(0)) = std::sqrt(2.0 / 5.0);
        h(b.chi(4)) = -std::sqrt(3.0 / 5.0);
    } else if (k == 1) {
        h(b.chi(0)) = std::sqrt(3.0 / 5.0);
        h(b.chi(4)) = std::sqrt(2.0 / 5.0);
    } else {
        throw std::out_of_range("h_tilde: k must be 0 or 1");
    }
    return h;
}

TransportCoefficients transport_coefficients(const Basis& b, const CollisionMatrices& c) {
    if (c.tag != b.tag) throw std::invalid_argument("transport: collision matrices built on another basis");
    const LocalBlocks lb = local_blocks(b);
    TransportCoefficients tc;
    {
        const int off = b.blocks[lb.kc].offset;
        const int i2 = b.chi(2) - off;
        Eigen::VectorXd r = c.V1[lb.kc].col(i2);
        r(i2) = 0.0;
        tc.kappa0 = neg_quadratic(c.L[lb.kc], r, {i2});
    }
    {
        const int off = b.blocks[lb.k0].offset;
        const int i0 = b.chi(0) - off, i1 = b.chi(1) - off, i4 = b.chi(4) - off;
        Eigen::VectorXd r = c.V1[lb.k0].col(i4);
        r(i0) = r(i1) = r(i4) = 0.0;
        tc.kappa1 = 0.6 * neg_quadratic(c.L[lb.k0], r, {i0, i1, i4});
        Eigen::VectorXd r1 = c.V1[lb.k0].col(i0);
        r1(i0) = 0.0;
        tc.eta = neg_quadratic(c.L1[lb.k0], r1, {i0});
    }
    for (int j = -1; j <= 3; ++j) tc.a[static_cast<std::size_t>(j + 1)] = a_coefficient(b, c, j);
    return tc;
}

void set_truncation_deltas(TransportCoefficients& coarse, const TransportCoefficients& fine) {
    coarse.d_kappa0 = fine.kappa0 - coarse.kappa0;
    coarse.d_kappa1 = fine.kappa1 - coarse.kappa1;
    coarse.d_eta = fine.eta - coarse.eta;
    for (std::size_t j = 0; j < 5; ++j) coarse.d_a[j] = fine.a[j] - coarse.a[j];
}

Y1State Y1_mode(const Basis& b, const TransportCoefficients& tc, double t, double s, const VelocityFunction& f0) {
    if (f0.tag != b.tag || f0.c.size() != b.dim()) throw std::invalid_argument("Y1: basis mismatch");
    if (t < 0.0) throw std::invalid_argument("Y1: t must be >= 0");
    Eigen::VectorXcd micro = projection_matrix(b, Projector::P1).cast<cplx>() * f0.c;
    if (micro.norm() > 1e-10 * std::max(1.0, f0.c.norm())) throw std::invalid_argument("Y1: f0 is not in N0");
    Y1State st;
    st.t = t;
    st.s = s;
    st.f.tag = b.tag;
    st.f.c = Eigen::VectorXcd::Zero(b.dim());
    const int js[3] = {0, 2, 3};
    for (int k = 0; k < 3; ++k) {
        Eigen::VectorXd h = h_vector(b, js[k]);
        const cplx proj = f0.c.dot(h.cast<cplx>());  // (f0, h) with real h
        st.coeff[k] = std::exp(-tc.a_of(js[k]) * s * s * t) * std::conj(proj);
        st.f.c += st.coeff[k] * h.cast<cplx>();
    }
    return st;
}

std::pair<Vec3, Vec3> transverse_frame(const Vec3& omega) {
    Vec3 w = omega.normalized();
    Vec3 z = Vec3::UnitZ();
    if (std::abs(w.z()) > 0.9) z = Vec3::UnitX();
    Vec3 ea = z.cross(w).normalized();
    Vec3 eb = w.cross(ea);
    return {ea, eb};
}

std::array<cplx, 5> y2_rates(double s, double eta) {
    const cplx r = std::sqrt(cplx(eta * eta - 4.0 * s * s, 0.0));
    const cplx bm = -0.5 * eta - 0.5 * r, bp = -0.5 * eta + 0.5 * r;
    return {cplx(-eta * (1.0 + s * s), 0.0), bm, bm, bp, bp};
}

Y2Eigenbasis y2_eigenbasis(double s, const Vec3& omega, double eta) {
    if (!(s > 0.0)) throw std::invalid_argument("Y2: s must be > 0");
    Y2Eigenbasis e;
    e.s = s;
    e.eta = eta;
    e.omega = omega.normalized();
    std::tie(e.ea, e.eb) = transverse_frame(e.omega);
    e.b = y2_rates(s, eta);
    e.X[0] = Y2Vector::Zero();
    e.X[0](0) = s / std::sqrt(1.0 + s * s);
    for (int k = 1; k <= 4; ++k) {
        const Vec3& ek = (k % 2 == 1) ? e.ea : e.eb;
        const cplx bk = e.b[static_cast<std::size_t>(k)];
        const cplx c = bk / std::sqrt(bk * bk - s * s);
        Y2Vector X = Y2Vector::Zero();
        X.segment<3>(1) = c * e.omega.cross(ek).cast<cplx>();
        X.segment<3>(4) = c * (I1 * s / bk) * ek.cast<cplx>();
        e.X[static_cast<std::size_t>(k)] = X;
    }
    return e;
}

cplx y2_pairing(double s, const Y2Vector& U, const Y2Vector& V) {
    cplx acc = (1.0 + 1.0 / (s * s)) * U(0) * V(0);
    for (int i = 1; i < 7; ++i) acc += U(i) * V(i);
    return acc;
}

Y2Vector y2_reduce(const FieldMode& U, double s, const Vec3& omega) {
    (void)s;
    Vec3 w = omega.normalized();
    Y2Vector V;
    V(0) = U.rho;
    V.segment<3>(1) = cross(w, U.E);
    V.segment<3>(4) = cross(w, U.B);
    return V;
}

FieldMode y2_reconstruct(const Y2Vector& V, double s, const Vec3& omega) {
    Vec3 w = omega.normalized();
    FieldMode U;
    U.rho = V(0);
    U.E = -I1 * V(0) / s * w.cast<cplx>() - cross(w, Vec3c(V.segment<3>(1)));
    U.B = -cross(w, Vec3c(V.segment<3>(4)));
    return U;
}

FieldMode Y2_mode_eigen(double t, double s, const Vec3& omega, double eta, const FieldMode& U0) {
    if (std::abs(eta * eta - 4.0 * s * s) < 1e-12) throw std::domain_error("Y2: eigenbasis is singular at |xi| = eta/2");
    Y2Eigenbasis e = y2_eigenbasis(s, omega, eta);
    Y2Vector V0 = y2_reduce(U0, s, omega);
    Y2Vector V = Y2Vector::Zero();
    for (std::size_t j = 0; j < 5; ++j) V += std::exp(e.b[j] * t) * y2_pairing(s, V0, e.X[j]) * e.X[j];
    return y2_reconstruct(V, s, omega);
}

FieldMode Y2_mode_confluent(double t, double s, const Vec3& omega, double eta, const FieldMode& U0) {
    Vec3 w = omega.normalized();
    auto [ea, eb] = transverse_frame(w);
    Y2Vector V0 = y2_reduce(U0, s, w);
    Vec3c X0 = V0.segment<3>(1), Y0 = V0.segment<3>(4);
    Eigen::Matrix2cd E = pair_exp(t, s, eta);
    Y2Vector V = Y2Vector::Zero();
    V(0) = std::exp(-eta * (1.0 + s * s) * t) * V0(0);
    for (const Vec3& e : {ea, eb}) {
        Vec3 we = w.cross(e);
        Eigen::Vector2cd ab(we.cast<cplx>().dot(X0), e.cast<cplx>().dot(Y0));  // real directions: dot = sum
        ab = E * ab;
        V.segment<3>(1) += ab(0) * we.cast<cplx>();
        V.segment<3>(4) += ab(1) * e.cast<cplx>();
    }
    return y2_reconstruct(V, s, w);
}

FieldMode Y2_mode(double t, double s, const Vec3& omega, double eta, const FieldMode& U0, const Y2Options& opt) {
    if (t < 0.0) throw std::invalid_argument("Y2: t must be >= 0");
    if (!(s > 0.0)) throw std::invalid_argument("Y2: s must be > 0");
    check_field_constraint(U0, s, omega.normalized(), opt.constraint_tol);
    if (std::abs(eta * eta - 4.0 * s * s) < opt.confluent_band) return Y2_mode_confluent(t, s, omega, eta, U0);
    return Y2_mode_eigen(t, s, omega, eta, U0);
}

std::pair<Vec3c, Vec3c> helmholtz_split(const Vec3c& U, const Vec3& omega) {
    Vec3 w = omega.normalized();
    Vec3c par = (w.cast<cplx>().dot(U)) * w.cast<cplx>();
    return {par, U - par};
}

Eigen::MatrixXd p_parallel_matrix(const Basis& b) {
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(b.dim(), b.dim());
    P(b.chi(1), b.chi(1)) = 1.0;
    Eigen::VectorXd h1 = h_tilde(b, 1);
    P += h1 * h1.transpose();
    return P;
}

std::pair<VelocityFunction, VelocityFunction> p_split(const Basis& b, const VelocityFunction& f) {
    if (f.tag != b.tag || f.c.size() != b.dim()) throw std::invalid_argument("p_split: basis mismatch");
    VelocityFunction par{p_parallel_matrix(b).cast<cplx>() * f.c, b.tag};
    VelocityFunction perp{f.c - par.c, b.tag};
    return {par, perp};
}

NSMFState nsmf_initial_data(const Basis& b, const VelocityFunction& f0, const Vec3c& E0, const Vec3c& B0, double s) {
    if (f0.tag != b.tag) throw std::invalid_argument("nsmf: basis mismatch");
    NSMFState st;
    const cplx h0 = f0.c.dot(h_tilde(b, 0).cast<cplx>());
    const cplx proj = std::conj(h0);
    st.n = std::sqrt(2.0 / 5.0) * proj;
    st.q = -std::sqrt(3.0 / 5.0) * proj;
    st.m = Vec3c(0.0, f0.c(b.chi(2)), f0.c(b.chi(3)));
    st.E = E0;
    st.B = B0;
    st.rho = I1 * s * E0(0);
    return st;
}

std::vector<NSMFState> linear_nsmf_solve(const TransportCoefficients& tc, double s, const Vec3& omega,
                                         const NSMFState& init, const ForcingFn& forcing,
                                         const std::vector<double>& times, const NSMFOptions& opt) {
    if (!(s > 0.0)) throw std::invalid_argument("nsmf: s must be > 0");
    const Vec3 w = omega.normalized();
    const Vec3c wc = w.cast<cplx>();
    const double scale = std::max({1.0, init.m.norm(), std::abs(init.n), std::abs(init.q), std::abs(init.rho),
                                   init.E.norm(), init.B.norm()});
    const double tol = opt.constraint_tol * scale;
    if (std::abs(wc.dot(init.m)) > tol) throw std::invalid_argument("nsmf: initial m is not divergence free");
    if (std::abs(init.n + std::sqrt(2.0 / 3.0) * init.q) > tol) throw std::invalid_argument("nsmf: n + sqrt(2/3) q != 0");
    if (std::abs(init.rho - I1 * s * wc.dot(init.E)) > tol) throw std::invalid_argument("nsmf: rho != div E");
    if (std::abs(wc.dot(init.B)) > tol) throw std::invalid_argument("nsmf: B is not divergence free");

    const double k0 = tc.kappa0 * s * s, k1 = tc.kappa1 * s * s;
    FieldMode U0{init.rho, init.E, init.B};
    Y2Options y2o;
    y2o.constraint_tol = 1e-8;

    // integrand of the Duhamel term: (m, q, rho, E, B) packed into 11 entries
    using Pack = Eigen::Matrix<cplx, 11, 1>;
    auto integrand = [&](double t, double tau) {
        NSMFForcing G = forcing(tau);
        Pack p;
        auto [g1par, g1perp] = helmholtz_split(G.G1, w);
        (void)g1par;
        p.segment<3>(0) = std::exp(-k0 * (t - tau)) * g1perp;
        p(3) = 0.6 * std::exp(-k1 * (t - tau)) * G.G2;
        FieldMode H{I1 * s * wc.dot(G.G3), G.G3, Vec3c::Zero()};
        FieldMode Y = Y2_mode(t - tau, s, w, tc.eta, H, y2o);
        p(4) = Y.rho;
        p.segment<3>(5) = Y.E;
        p.segment<3>(8) = Y.B;
        return p;
    };
    auto duhamel = [&](double t, int nodes) {
        std::vector<double> br{0.0, t};
        for (int k = 1; k <= opt.levels; ++k) {
            br.push_back(t * std::ldexp(1.0, -k));
            br.push_back(t - t * std::ldexp(1.0, -k));
        }
        std::sort(br.begin(), br.end());
        br.erase(std::unique(br.begin(), br.end()), br.end());
        Pack acc = Pack::Zero();
        for (std::size_t i = 0; i + 1 < br.size(); ++i) {
            if (br[i + 1] <= br[i]) continue;
            Rule r = gauss_legendre(nodes, br[i], br[i + 1]);
            for (std::size_t q = 0; q < r.size(); ++q) acc += r.w[q] * integrand(t, r.x[q]);
        }
        return acc;
    };

    std::vector<NSMFState> out;
    for (double t : times) {
        if (t < 0.0) throw std::invalid_argument("nsmf: times must be >= 0");
        NSMFState st;
        st.t = t;
        st.m = std::exp(-k0 * t) * init.m;
        st.q = std::exp(-k1 * t) * init.q;
        FieldMode Y = Y2_mode(t, s, w, tc.eta, U0, y2o);
        st.rho = Y.rho;
        st.E = Y.E;
        st.B = Y.B;
        if (forcing && t > 0.0) {
            Pack a = duhamel(t, opt.nodes);
            Pack b = duhamel(t, opt.nodes + 4);
            if ((a - b).norm() > opt.tol * std::max(1.0, b.norm()))
                throw std::runtime_error("nsmf: Duhamel quadrature did not converge (forcing grid too coarse)");
            st.m += b.segment<3>(0);
            st.q += b(3);
            st.rho += b(4);
            st.E += b.segment<3>(5);
            st.B += b.segment<3>(8);
            st.p = -I1 * wc.dot(forcing(t).G1) / s;
        } else if (forcing) {
            st.p = -I1 * wc.dot(forcing(0.0).G1) / s;
        }
        st.n = -std::sqrt(2.0 / 3.0) * st.q;
        out.push_back(st);
    }
    return out;
}

Rule radial_mode_rule(double s_max, double s_min, int nodes) {
    std::vector<double> br{0.0};
    for (double x = s_min; x < std::min(1.0, s_max); x *= 2.0) br.push_back(x);
    double x = std::min(1.0, s_max);
    br.push_back(x);
    while (x < s_max) {
        x = std::min(s_max, x + 0.5);
        br.push_back(x);
    }
    Rule out;
    for (std::size_t i = 0; i + 1 < br.size(); ++i) append(out, gauss_legendre(nodes, br[i], br[i + 1]));
    return out;
}

DecayCurve fluid_decay(const TransportCoefficients& tc, DecayData kind, const std::function<double(double)>& phi,
                       const std::vector<double>& times, double s_max) {
    Rule r = radial_mode_rule(s_max, 1e-5, 16);
    DecayCurve dc;
    dc.t = times;
    const Vec3 w = Vec3::UnitX();
    for (double t : times) {
        double acc = 0.0;
        for (std::size_t q = 0; q < r.size(); ++q) {
            const double s = r.x[q];
            const double p = phi(s);
            double mode = 0.0;
            if (kind == DecayData::y1_generic) {
                // f0 = (chi0 + chi2) / sqrt(2): entropy part along h0 plus a shear part
                const double e0 = std::exp(-tc.a_of(0) * s * s * t), e2 = std::exp(-tc.a_of(2) * s * s * t);
                mode = 0.5 * (0.4 * e0 * e0 + e2 * e2);
            } else {
                // average over the three axis directions of E0 (and B0), equivalent to averaging omega
                for (int d = 0; d < 3; ++d) {
                    Vec3c dir = Vec3c::Zero();
                    dir(d) = 1.0;
                    FieldMode U0;
                    U0.E = dir;
                    U0.rho = I1 * s * dir(0);
                    if (kind == DecayData::y2_generic) U0.B = helmholtz_split(dir, w).second;
                    FieldMode U = Y2_mode(t, s, w, tc.eta, U0);
                    mode += (std::norm(U.rho) + U.E.squaredNorm() + U.B.squaredNorm()) / 3.0;
                }
            }
            acc += r.w[q] * s * s * p * p * mode;
        }
        dc.norm.push_back(std::sqrt(4.0 * M_PI * acc));
    }
    return dc;
}

}  // namespace ksl
