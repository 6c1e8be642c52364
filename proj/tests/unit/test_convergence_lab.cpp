#include <doctest.h>

#include "fixture.hpp"
#include "ksl/convergence_lab.hpp"

using namespace ksl;

TEST_CASE("rate fit") {
    std::vector<double> x{1, 2, 4, 8, 16}, y;
    for (double v : x) y.push_back(3.0 * v * v);
    const RateFit f = rate_fit(x, y);
    CHECK(f.exponent == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(std::exp(f.intercept) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(f.rss <= 1e-20);

    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> xs, ys;
    for (int i = 0; i < 20; ++i) {
        const double v = std::pow(10.0, 3.0 * i / 19.0);
        xs.push_back(v);
        ys.push_back(std::pow(v, -0.75) * (1.0 + 0.01 * u(rng)));
    }
    const RateFit g = rate_fit(xs, ys);
    CHECK(std::abs(g.exponent + 0.75) <= 0.02);
    CHECK(g.ci_low <= -0.75);
    CHECK(g.ci_high >= -0.75);

    CHECK_THROWS(rate_fit({2.0, 2.0, 2.0}, {1.0, 2.0, 3.0}));
    CHECK_THROWS(rate_fit({1.0, 2.0}, {1.0, -2.0}));
}

TEST_CASE("initial data satisfy their constraints") {
    const Basis& b = fx::basis();
    const InitialData wp = make_initial_data(b, DataKind::well_prepared, 1);
    const InitialData gen = make_initial_data(b, DataKind::generic, 1);
    for (double s : {0.01, 0.5, 1.0, 3.0, 8.0}) {
        CHECK(wp.constraint_residual(s) <= 1e-12);
        CHECK(gen.constraint_residual(s) <= 1e-12);
        const ModeData d = wp.at(s);
        const VelocityFunction f = make_function(b, d.f0);
        CHECK(p_split(b, f).first.c.norm() <= 1e-12);
        CHECK(project(b, Projector::P1, f).c.norm() <= 1e-12);
        const ModeData g = gen.at(s);
        CHECK(std::abs(g.B0(0)) <= 1e-14);
        CHECK(std::abs(cplx(0.0, s) * g.E0(0) - g.g0(b.chi(0))) <= 1e-12);
    }
}

TEST_CASE("oscillatory integral") {
    const RadialProfile p = power_profile(4);
    CHECK(std::abs(oscillatory_integral(p, AngularPattern::isotropic, 0.0, 0.0) - 4.0 * M_PI / 3.0) <= 1e-8);
    for (AngularPattern a : {AngularPattern::isotropic, AngularPattern::dipole}) {
        const OscillatoryCheck oc = oscillatory_decay_check(p, a, {10.0, 20.0, 40.0, 80.0, 160.0, 320.0, 640.0, 1000.0}, 1, 0);
        CHECK(std::abs(oc.fit.exponent + 1.0) <= 0.1);
    }
}

TEST_CASE("oscillatory integral against Monte Carlo") {
    const RadialProfile p = power_profile(4);
    const auto [value, stderr_] = oscillatory_mc(AngularPattern::isotropic, 1.0, 5.0, 3, 200000);
    const cplx ref = oscillatory_integral(p, AngularPattern::isotropic, 1.0, 5.0);
    CHECK(std::abs(value - ref) <= 4.0 * stderr_);
}
