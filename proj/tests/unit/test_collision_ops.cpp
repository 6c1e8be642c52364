#include <doctest.h>

#include "fixture.hpp"

using namespace ksl;

TEST_CASE("collision frequency") {
    CHECK(nu_eval({0.0, 0.0, 0.0}) == doctest::Approx(2.0 * std::sqrt(2.0 * M_PI)).epsilon(1e-12));
    CHECK(nu_eval({0.0, 0.0, 0.0}) == doctest::Approx(5.01326).epsilon(1e-6));
    CHECK(std::abs(nu_eval({1e3, 0.0, 0.0}) / 1e3 - M_PI) <= 1e-3);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> nd(0.0, 2.0);
    for (int i = 0; i < 20; ++i) {
        const std::array<double, 3> v{nd(rng), nd(rng), nd(rng)};
        const double r = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        CHECK(nu_eval(v) == doctest::Approx(nu_eval({-v[0], -v[1], -v[2]})).epsilon(1e-14));
        CHECK(nu_eval(v) == doctest::Approx(nu_radial(r)).epsilon(1e-14));
    }
    // nu0 (1 + |v|) <= nu <= nu1 (1 + |v|) on |v| <= 20
    double lo = INFINITY;
    for (int i = 0; i <= 400; ++i) lo = std::min(lo, nu_radial(0.05 * i) / (1.0 + 0.05 * i));
    CHECK(lo >= 0.5);
}

TEST_CASE("kernel values and symmetry") {
    const double expected = 2.0 / std::sqrt(2.0 * M_PI) * std::exp(-0.25);
    CHECK(kernel_eval(Kernel::k1, {1, 0, 0}, {0, 0, 0}) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(kernel_eval(Kernel::k1, {1, 0, 0}, {0, 0, 0}) == doctest::Approx(0.62140).epsilon(1e-5));
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd(0.0, 1.5);
    for (int i = 0; i < 20; ++i) {
        const std::array<double, 3> v{nd(rng), nd(rng), nd(rng)}, w{nd(rng), nd(rng), nd(rng)};
        CHECK(kernel_eval(Kernel::k1, v, w) == doctest::Approx(kernel_eval(Kernel::k1, w, v)).epsilon(1e-14));
        double d = 0.0, e = 0.0;
        for (int k = 0; k < 3; ++k) {
            d += (v[k] - w[k]) * (v[k] - w[k]);
            e += v[k] * v[k] + w[k] * w[k];
        }
        const double k_expected = kernel_eval(Kernel::k1, v, w) - std::sqrt(d) / (2.0 * std::sqrt(2.0 * M_PI)) * std::exp(-e / 4.0);
        CHECK(kernel_eval(Kernel::k, v, w) == doctest::Approx(k_expected).epsilon(1e-12));
    }
}

TEST_CASE("null spaces at the default truncation") {
    const CollisionMatrices& c = fx::collision();
    CHECK(c.null_residual <= 1e-6);
    CHECK(c.l1_null_residual <= 1e-6);
    CHECK(c.mu_estimate > 0.0);
    for (std::size_t i = 0; i < c.L.size(); ++i) {
        CHECK((c.L[i] - c.L[i].transpose()).cwiseAbs().maxCoeff() <= 1e-10);
        CHECK((c.L1[i] - c.L1[i].transpose()).cwiseAbs().maxCoeff() <= 1e-10);
    }
}

TEST_CASE("coercivity on the microscopic range") {
    const Basis& b = fx::basis();
    const CollisionMatrices& c = fx::collision();
    std::mt19937_64 rng(17);
    double worst = -INFINITY;
    for (int trial = 0; trial < 200; ++trial) {
        const VelocityFunction f = make_function(b, fx::random_vector(rng, b.dim()));
        const VelocityFunction Lf = make_function(b, apply_blocks(b, c.L, f.c));
        const VelocityFunction p = project(b, Projector::P1, f);
        const double p1 = inner(b, p, p).real();
        worst = std::max(worst, inner(b, Lf, f).real() + c.mu_estimate * p1);
    }
    CHECK(worst <= 1e-8);
}

TEST_CASE("bilinear collision identities") {
    const GammaIdentityResiduals g = gamma_identity_residuals(fx::collision());
    CHECK(g.gamma2 <= 1e-5);
    CHECK(g.gamma1_quadratic <= 1e-5);
    CHECK(g.gamma1_cubic <= 1e-5);
    CHECK(g.gamma1_quartic <= 1e-5);
    CHECK(g.invariants <= 1e-5);
}

TEST_CASE("mass is conserved by the unsymmetrized form") {
    const GammaTensor& t = fx::collision().gamma;
    int k0 = -1;
    for (int k = 0; k < t.nout(); ++k)
        if (t.outputs[k].n == 0 && t.outputs[k].l == 0) k0 = k;
    REQUIRE(k0 >= 0);
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::VectorXcd f = fx::random_vector(rng, t.nin()), g = fx::random_vector(rng, t.nin());
        CHECK(std::abs(gamma_apply(t, f, g)(k0)) <= 1e-10 * f.norm() * g.norm());
    }
}
