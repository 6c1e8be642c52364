#include <doctest.h>

#include "fixture.hpp"
#include "ksl/convergence_lab.hpp"
#include "ksl/dispersion.hpp"
#include "ksl/mode_operators.hpp"

using namespace ksl;

namespace {

const Resolvent& resolvent() {
    static const Resolvent R(fx::basis(), fx::collision());
    return R;
}

// Relative distance from lambda to the nearest eigenvalue of the assembled operator.
double spectral_mismatch(const ModeOperator& op, cplx lambda) {
    double best = INFINITY;
    for (const auto& p : spectrum(op).pairs) best = std::min(best, std::abs(p.lambda - lambda));
    return best / std::abs(lambda);
}

}  // namespace

TEST_CASE("resolvent scalars at the origin") {
    const double eta = fx::transport().eta;
    const ResolventScalars r = resolvent().at(0.0, 0.0);
    CHECK(std::abs(r.R22 + eta) <= 1e-10);
    const double h = 1e-4;
    const cplx fd = (resolvent().R11(0.0, h) - resolvent().R11(0.0, -h)) / (2.0 * h);
    CHECK(std::abs(fd) <= 1e-6);
    CHECK(r.dR11_dlambda.real() > 0.0);
    CHECK(std::abs(r.dR11_dlambda.imag()) <= 1e-12);
}

TEST_CASE("z0 branch") {
    const double eta = fx::transport().eta;
    const double s = 1.0;
    const DispersionBranch z = solve_z0(resolvent(), s, 0.0, eta);
    CHECK(std::abs(z.value + eta * (1.0 + s * s)) <= 1e-12);
    std::vector<double> eps{0.1, 0.05, 0.025, 0.0125}, dev;
    for (double e : eps) dev.push_back(std::abs(solve_z0(resolvent(), s, e, eta).value + eta * (1.0 + s * s)));
    CHECK(std::abs(rate_fit(eps, dev).exponent - 2.0) <= 0.2);
    const DispersionBranch z1 = solve_z0(resolvent(), s, 0.05, eta);
    CHECK(z1.residual <= 1e-10);
    CHECK(std::abs(z1.value.imag()) <= 1e-10 * std::abs(z1.value));
    CHECK(spectral_mismatch(assemble_A_tilde(s, 0.05, fx::basis(), fx::collision()), z1.eigenvalue()) <= 1e-8);
}

TEST_CASE("z+- branches") {
    const double eta = fx::transport().eta;
    const auto [m0, p0] = solve_z_pm(resolvent(), 0.0, 0.0, eta);
    CHECK(std::abs(m0.value + eta) <= 1e-12);
    CHECK(std::abs(p0.value) <= 1e-12);

    const double s = 1.0;
    std::vector<double> eps{0.1, 0.05, 0.025, 0.0125}, dm, dp;
    for (double e : eps) {
        const auto [m, p] = solve_z_pm(resolvent(), s, e, eta);
        CHECK_FALSE(m.crossing_flag);
        dm.push_back(std::abs(m.value - m.prediction));
        dp.push_back(std::abs(p.value - p.prediction));
        // conjugate pair off the real axis
        CHECK(std::abs(m.value - std::conj(p.value)) <= 1e-9 * std::abs(m.value));
    }
    CHECK(std::abs(rate_fit(eps, dm).exponent - 2.0) <= 0.2);
    CHECK(std::abs(rate_fit(eps, dp).exponent - 2.0) <= 0.2);
    const auto [m, p] = solve_z_pm(resolvent(), s, 0.05, eta);
    const ModeOperator op = assemble_A_tilde(s, 0.05, fx::basis(), fx::collision());
    CHECK(spectral_mismatch(op, m.eigenvalue()) <= 1e-6);
    CHECK(spectral_mismatch(op, p.eigenvalue()) <= 1e-6);
}

TEST_CASE("branch crossing tends to eta / 2") {
    const double eta = fx::transport().eta;
    const double x = crossing_extrapolated(resolvent(), {0.02, 0.01, 0.005}, eta);
    CHECK(std::abs(x - 0.5 * eta) <= 0.02 * 0.5 * eta);
}

TEST_CASE("high-frequency branches") {
    DispersionOptions o;
    o.method = ResolventMethod::hybrid;
    const double e = 0.1;
    std::vector<double> scaled;
    for (double k : {20.0, 40.0, 80.0}) {
        const auto [m, p] = solve_highfreq(resolvent(), k / e, e, o);
        for (const auto& br : {m, p}) {
            const cplx y = highfreq_offset(br);
            scaled.push_back(-y.real() * k);
            CHECK(std::abs(y.imag()) * k / std::log(k) <= 1.0);
        }
    }
    for (double v : scaled) CHECK(v > 0.0);
    CHECK(*std::max_element(scaled.begin(), scaled.end()) <= 2.0 * *std::min_element(scaled.begin(), scaled.end()));

    // Galerkin roots are eigenvalues of the truncated operator
    const double s = 20.0 / e;
    const auto [m, p] = solve_highfreq(resolvent(), s, e);
    const ModeOperator op = assemble_A_tilde(s, e, fx::basis(), fx::collision());
    CHECK(spectral_mismatch(op, m.eigenvalue()) <= 1e-6);
    CHECK(spectral_mismatch(op, p.eigenvalue()) <= 1e-6);
    CHECK(std::abs(m.eigenvalue() + cplx(0, 1) * e * e * s) <= 0.05 * e * e * s);
}

TEST_CASE("Boltzmann branches") {
    const Basis& b = fx::basis();
    const CollisionMatrices& c = fx::collision();
    const TransportCoefficients& tc = fx::transport();
    const BoltzmannFit fit = boltzmann_fit(b, c, tc, {0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08});
    CHECK(std::abs(fit.mu[2] - std::sqrt(5.0 / 3.0)) <= 1e-3);
    CHECK(std::abs(fit.mu[0] + std::sqrt(5.0 / 3.0)) <= 1e-3);
    CHECK(std::abs(fit.mu[2] - 1.29099) <= 1e-3);
    CHECK(std::abs(fit.a[3] - tc.kappa0) <= 1e-4 * tc.kappa0);
    CHECK(std::abs(fit.a[1] - tc.kappa1) <= 1e-4 * tc.kappa1);
    const auto zero = boltzmann_dispersion(0.0, 1.0, b, c, tc);
    REQUIRE(zero.size() == 5);
    for (const auto& br : zero) CHECK(std::abs(br.value) <= 1e-10);
}
