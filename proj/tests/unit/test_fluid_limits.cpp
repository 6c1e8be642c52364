#include <doctest.h>

#include "fixture.hpp"
#include "ksl/convergence_lab.hpp"

using namespace ksl;

namespace {

const cplx I1(0.0, 1.0);

FieldMode generic_field(double s) {
    FieldMode U;
    U.E = Vec3c(cplx(0.3, 0.1), cplx(-0.7, 0.2), cplx(0.4, -0.5));
    U.B = Vec3c(0.0, cplx(0.2, 0.6), cplx(-0.1, 0.3));
    U.rho = I1 * s * U.E(0);
    return U;
}

double field_distance(const FieldMode& a, const FieldMode& b) {
    return std::abs(a.rho - b.rho) + (a.E - b.E).norm() + (a.B - b.B).norm();
}

}  // namespace

TEST_CASE("transport coefficients") {
    const TransportCoefficients& tc = fx::transport();
    CHECK(tc.kappa0 > 0.0);
    CHECK(tc.kappa1 > 0.0);
    CHECK(tc.eta > 0.0);
    CHECK(std::abs(tc.a_of(2) - tc.kappa0) <= 1e-6 * tc.kappa0);
    CHECK(std::abs(tc.a_of(3) - tc.kappa0) <= 1e-6 * tc.kappa0);
    CHECK(std::abs(tc.a_of(0) - tc.kappa1) <= 1e-6 * tc.kappa1);
    // recorded values, stable to 1e-8 between (12, 6) and (24, 8)
    CHECK(tc.kappa0 == doctest::Approx(0.179136).epsilon(1e-5));
    CHECK(tc.kappa1 == doctest::Approx(0.271133).epsilon(1e-5));
    CHECK(tc.eta == doctest::Approx(0.215581).epsilon(1e-5));
}

TEST_CASE("Y1 mode semigroup") {
    const Basis& b = fx::basis();
    const TransportCoefficients& tc = fx::transport();
    Eigen::VectorXcd c0 = Eigen::VectorXcd::Zero(b.dim());
    c0(b.chi(0)) = 0.6;
    c0(b.chi(4)) = -0.2;
    c0(b.chi(2)) = cplx(0.3, 0.4);
    c0(b.chi(1)) = 0.5;
    const VelocityFunction f0 = make_function(b, c0);
    const double s = 1.3;
    const Y1State y0 = Y1_mode(b, tc, 0.0, s, f0);
    const auto [par0, perp0] = p_split(b, f0);
    CHECK((y0.f.c - perp0.c).norm() <= 1e-12);
    for (double t : {0.1, 1.0, 5.0}) {
        const Y1State y = Y1_mode(b, tc, t, s, f0);
        CHECK(p_split(b, y.f).first.c.norm() <= 1e-12);
    }
    const Y1State a = Y1_mode(b, tc, 0.7, s, f0);
    const Y1State ab = Y1_mode(b, tc, 0.5, s, a.f);
    CHECK((ab.f.c - Y1_mode(b, tc, 1.2, s, f0).f.c).norm() <= 1e-12);
}

TEST_CASE("Y2 mode") {
    const double eta = fx::transport().eta;
    const Vec3 w = Vec3::UnitX();
    const FieldMode U0 = generic_field(1.0);
    CHECK(field_distance(Y2_mode(0.0, 1.0, w, eta, U0), U0) <= 1e-10);

    const Y2Eigenbasis eb = y2_eigenbasis(1.0, w, eta);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) CHECK(std::abs(y2_pairing(1.0, eb.X[i], eb.X[j]) - (i == j ? 1.0 : 0.0)) <= 1e-10);

    const double sc = 0.5 * eta;
    const FieldMode Uc = generic_field(sc);
    for (double t : {0.5, 3.0, 20.0}) {
        const FieldMode at = Y2_mode(t, sc, w, eta, Uc);
        const FieldMode lo = Y2_mode_eigen(t, sc - 1e-6, w, eta, generic_field(sc - 1e-6));
        const FieldMode hi = Y2_mode_eigen(t, sc + 1e-6, w, eta, generic_field(sc + 1e-6));
        CHECK(field_distance(at, lo) <= 1e-4);
        CHECK(field_distance(at, hi) <= 1e-4);
    }

    // constraint preservation along a trajectory
    for (double s : {0.05, sc, 1.0, 4.0})
        for (double t : {0.0, 0.3, 2.0, 30.0}) {
            const FieldMode u = Y2_mode(t, s, w, eta, generic_field(s));
            CHECK(std::abs(I1 * s * u.E(0) - u.rho) <= 1e-10);
            CHECK(std::abs(u.B(0)) <= 1e-10);
        }
}

TEST_CASE("Helmholtz split") {
    const Vec3 w = Vec3(1.0, 2.0, -2.0) / 3.0;
    auto [p, t] = helmholtz_split(w.cast<cplx>(), w);
    CHECK((p - w.cast<cplx>()).norm() <= 1e-14);
    CHECK(t.norm() <= 1e-14);
    const Vec3c u = Vec3(2.0, -1.0, 0.0).cast<cplx>();
    std::tie(p, t) = helmholtz_split(u, w);
    CHECK(p.norm() <= 1e-14);
    CHECK((t - u).norm() <= 1e-14);
    const Vec3c r(cplx(0.3, 1.0), cplx(-2.0, 0.5), cplx(0.7, 0.0));
    std::tie(p, t) = helmholtz_split(r, w);
    CHECK((p + t - r).norm() <= 1e-14);
    CHECK(std::abs(p.dot(t)) <= 1e-14);
}

TEST_CASE("parallel and perpendicular projections") {
    const Basis& b = fx::basis();
    const Eigen::VectorXd h0 = h_tilde(b, 0), h1 = h_tilde(b, 1);
    CHECK(std::abs(h0.dot(h1)) <= 1e-14);
    CHECK(std::abs(h0.norm() - 1.0) <= 1e-14);
    CHECK(std::abs(h1.norm() - 1.0) <= 1e-14);
    const VelocityFunction c2 = make_function(b, fx::unit(b.dim(), b.chi(2)));
    const auto [par, perp] = p_split(b, c2);
    CHECK(par.c.norm() <= 1e-14);
    CHECK((perp.c - c2.c).norm() <= 1e-14);
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        const VelocityFunction f = make_function(b, fx::random_vector(rng, b.dim()));
        const auto [a, c] = p_split(b, f);
        CHECK((a.c + c.c - f.c).norm() <= 1e-12 * f.c.norm());
    }
}

TEST_CASE("linear NSMF without forcing") {
    const TransportCoefficients& tc = fx::transport();
    const double k = 0.8;
    const std::vector<double> times{0.0, 0.5, 2.0, 10.0};
    NSMFState init;
    init.m = Vec3c(0.0, cplx(1.0, 0.5), 0.0);
    init.q = 0.7;
    init.n = -std::sqrt(2.0 / 3.0) * init.q;
    init.E = Vec3c(cplx(0.2, 0.0), 0.0, 0.0);
    init.rho = I1 * k * init.E(0);
    const auto traj = linear_nsmf_solve(tc, k, Vec3::UnitX(), init, nullptr, times);
    REQUIRE(traj.size() == times.size());
    for (std::size_t i = 0; i < times.size(); ++i) {
        const double t = times[i];
        CHECK((traj[i].m - std::exp(-tc.kappa0 * k * k * t) * init.m).norm() <= 1e-12);
        CHECK(std::abs(traj[i].q - std::exp(-tc.kappa1 * k * k * t) * init.q) <= 1e-12);
        CHECK(std::abs(traj[i].rho - std::exp(-tc.eta * (1.0 + k * k) * t) * init.rho) <= 1e-12);
    }
    NSMFState bad = init;
    bad.n = 1.0;
    CHECK_THROWS(linear_nsmf_solve(tc, k, Vec3::UnitX(), bad, nullptr, times));
}

TEST_CASE("aggregated fluid decay rates") {
    const TransportCoefficients& tc = fx::transport();
    const auto phi = [](double s) { return 1.0 / ((1.0 + s * s) * (1.0 + s * s)); };
    std::vector<double> t;
    for (int k = 0; k < 10; ++k) t.push_back(100.0 * std::pow(100.0, k / 9.0));
    const RateFit g = rate_fit(t, fluid_decay(tc, DecayData::y2_generic, phi, t).norm);
    const RateFit e = rate_fit(t, fluid_decay(tc, DecayData::y2_enhanced, phi, t).norm);
    const RateFit h = rate_fit(t, fluid_decay(tc, DecayData::y1_generic, phi, t).norm);
    CHECK(std::abs(g.exponent + 0.75) <= 0.08);
    CHECK(std::abs(e.exponent + 1.25) <= 0.1);
    CHECK(std::abs(h.exponent + 0.75) <= 0.08);
}
