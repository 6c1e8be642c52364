#include <doctest.h>

#include <algorithm>

#include "fixture.hpp"
#include "ksl/mode_operators.hpp"

using namespace ksl;

namespace {

std::vector<cplx> sorted_eigenvalues(const Eigen::MatrixXcd& A) {
    Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(A, false);
    std::vector<cplx> v(es.eigenvalues().data(), es.eigenvalues().data() + A.rows());
    std::sort(v.begin(), v.end(), [](cplx a, cplx b) { return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag(); });
    return v;
}

int count_near_zero(const std::vector<cplx>& v, double tol) {
    return static_cast<int>(std::count_if(v.begin(), v.end(), [&](cplx z) { return std::abs(z) <= tol; }));
}

// Kinetic part of a VMB state as a full-basis coefficient vector.
Eigen::VectorXcd kinetic_part(const ModeOperator& op, const Basis& b, const Eigen::VectorXcd& U) {
    Eigen::VectorXcd g(b.dim());
    for (int i = 0; i < b.dim(); ++i) g(i) = U(op.kinetic_index(i));
    return g;
}

}  // namespace

TEST_CASE("Boltzmann operator at s = 0 is L") {
    const Basis& b = fx::basis();
    const CollisionMatrices& c = fx::collision();
    const ModeOperator op = assemble_B(0.0, 0.3, b, c);
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(b.dim(), b.dim());
    for (std::size_t k = 0; k < b.blocks.size(); ++k)
        L.block(b.blocks[k].offset, b.blocks[k].offset, b.blocks[k].dim, b.blocks[k].dim) = c.L[k];
    Eigen::MatrixXcd A = op.matrix();
    double d = 0.0;
    for (int i = 0; i < b.dim(); ++i)
        for (int j = 0; j < b.dim(); ++j)
            d = std::max(d, std::abs(A(op.kinetic_index(i), op.kinetic_index(j)) - L(i, j)));
    CHECK(d <= 1e-14);
    CHECK(count_near_zero(sorted_eigenvalues(A), 1e-8) == 5);
}

TEST_CASE("Boltzmann scaling law") {
    const Basis& b = fx::basis();
    const CollisionMatrices& c = fx::collision();
    for (auto [s, e] : {std::pair{2.0, 0.1}, std::pair{30.0, 0.05}, std::pair{0.7, 1.5}}) {
        const Eigen::MatrixXcd A = assemble_B(s, e, b, c).matrix();
        const Eigen::MatrixXcd B = assemble_B(e * s, 1.0, b, c).matrix();
        CHECK((A - B).cwiseAbs().maxCoeff() <= 1e-14);
    }
}

TEST_CASE("Boltzmann semigroup is a contraction") {
    const Basis& b = fx::basis();
    const CollisionMatrices& c = fx::collision();
    std::mt19937_64 rng(21);
    const ModeOperator op = assemble_B(1.5, 1.0, b, c);
    const Propagator prop(op);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::VectorXcd f = fx::random_vector(rng, op.dim);
        const double n0 = metric_norm(op, f);
        for (double t : {0.1, 1.0, 10.0}) CHECK(metric_norm(op, prop.apply(f, t)) <= n0 * (1.0 + 1e-12));
    }
}

TEST_CASE("VMB operator at eps = 0") {
    const Basis& b = fx::basis();
    const CollisionMatrices& c = fx::collision();
    const ModeOperator op = assemble_A_tilde(1.0, 0.0, b, c);
    CHECK(op.dim == b.dim() + 4);
    Eigen::MatrixXd L1 = Eigen::MatrixXd::Zero(b.dim(), b.dim());
    for (std::size_t k = 0; k < b.blocks.size(); ++k)
        L1.block(b.blocks[k].offset, b.blocks[k].offset, b.blocks[k].dim, b.blocks[k].dim) = c.L1[k];
    std::vector<cplx> expected = sorted_eigenvalues(L1.cast<cplx>());
    for (int i = 0; i < 4; ++i) expected.push_back(0.0);
    std::sort(expected.begin(), expected.end(), [](cplx a, cplx b) { return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag(); });
    const std::vector<cplx> got = sorted_eigenvalues(op.matrix());
    REQUIRE(got.size() == expected.size());
    double d = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) d = std::max(d, std::abs(got[i] - expected[i]));
    CHECK(d <= 1e-9);
    CHECK(count_near_zero(got, 1e-9) >= 5);
}

TEST_CASE("VMB spectrum lies in the open left half plane for eps > 0") {
    const Basis& b = fx::basis();
    const CollisionMatrices& c = fx::collision();
    for (auto [s, e] : {std::pair{0.5, 0.05}, std::pair{2.0, 0.5}, std::pair{150.0, 0.1}}) {
        const Spectrum sp = spectrum(assemble_A_tilde(s, e, b, c));
        CHECK(sp.pairs.front().lambda.real() < 0.0);
        for (const auto& p : sp.pairs) CHECK(p.residual <= 1e-8);
    }
}

TEST_CASE("VMB dissipation identity") {
    const Basis& b = fx::basis();
    const CollisionMatrices& c = fx::collision();
    std::mt19937_64 rng(33);
    const ModeOperator op = assemble_A_tilde(1.3, 0.2, b, c);
    const Eigen::MatrixXcd A = op.matrix();
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::VectorXcd U = fx::random_vector(rng, op.dim);
        const VelocityFunction g = make_function(b, kinetic_part(op, b, U));
        const VelocityFunction L1g = make_function(b, apply_blocks(b, c.L1, g.c));
        const double lhs = metric_inner(op, A * U, U).real();
        const double rhs = inner(b, L1g, g).real();
        CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(rhs)));
    }
}

TEST_CASE("closed-form adjoint equals the metric adjoint") {
    const Basis& b = fx::basis();
    const CollisionMatrices& c = fx::collision();
    for (auto [s, e] : {std::pair{0.4, 0.1}, std::pair{3.0, 1.0}}) {
        const Eigen::MatrixXcd a = assemble_A_tilde_adjoint(s, e, b, c).matrix();
        const Eigen::MatrixXcd m = metric_adjoint(assemble_A_tilde(s, e, b, c)).matrix();
        CHECK((a - m).cwiseAbs().maxCoeff() <= 1e-10);
    }
}

TEST_CASE("propagator identities") {
    const Basis& b = fx::basis();
    const CollisionMatrices& c = fx::collision();
    std::mt19937_64 rng(9);
    const ModeOperator op = assemble_A_tilde(1.0, 0.3, b, c);
    const Propagator prop(op);
    const Eigen::VectorXcd U = fx::random_vector(rng, op.dim);
    CHECK((prop.apply(U, 0.0) - U).norm() <= 1e-12 * U.norm());
    const Eigen::VectorXcd a = prop.apply(U, 0.7), ab = prop.apply(a, 0.4), direct = prop.apply(U, 1.1);
    CHECK((ab - direct).norm() <= 1e-9 * U.norm());
    double prev = metric_norm(op, U);
    for (double t : {1e-3, 1e-2, 0.1, 1.0, 10.0}) {
        const double n = metric_norm(op, prop.apply(U, t));
        CHECK(n <= prev * (1.0 + 1e-12));
        prev = n;
    }
}

TEST_CASE("propagator at the branch crossing") {
    const Basis& b = fx::basis();
    const CollisionMatrices& c = fx::collision();
    const double eta = fx::transport().eta;
    const ModeOperator op = assemble_A_tilde(0.5 * eta / 0.05, 0.05, b, c);
    std::mt19937_64 rng(10);
    const Eigen::VectorXcd U = fx::random_vector(rng, op.dim);
    const Propagator prop(op);
    const Eigen::VectorXcd u = prop.apply(U, 1.0);
    CHECK(u.allFinite());
    CHECK(metric_norm(op, u) <= metric_norm(op, U));
}

TEST_CASE("semigroup split") {
    const Basis& b = fx::basis();
    const CollisionMatrices& c = fx::collision();
    const ModeOperator low = assemble_A_tilde(1.0, 0.05, b, c);
    const Spectrum sp = spectrum(low);
    const double mu = c.mu_estimate;
    const int slow = static_cast<int>(std::count_if(sp.pairs.begin(), sp.pairs.end(), [&](const EigenPair& p) {
        return p.lambda.real() > -0.5 * mu;
    }));
    CHECK(slow == 5);
    for (auto [s, e] : {std::pair{1.0, 0.05}, std::pair{2.0, 0.5}, std::pair{300.0, 0.05}}) {
        const SemigroupSplit sg = semigroup_split(assemble_A_tilde(s, e, b, c), 0.1, 10.0);
        CHECK(sg.reconstruction <= 1e-10);
        CHECK(sg.b > 0.0);
        CHECK(sg.C > 0.0);
    }
    CHECK(semigroup_split(low, 0.1, 10.0).regime == Regime::low);
    CHECK(classify_regime(2.0, 0.5, 0.1, 10.0) == Regime::mid);
    CHECK(classify_regime(300.0, 0.05, 0.1, 10.0) == Regime::high);
}

TEST_CASE("resolvent bounds") {
    const Basis& b = fx::basis();
    const CollisionMatrices& c = fx::collision();
    double nu0 = INFINITY;
    for (int i = 0; i <= 400; ++i) nu0 = std::min(nu0, nu_radial(0.05 * i) / (1.0 + 0.05 * i));
    std::vector<double> k, nk, im, ni;
    for (double x : {1.0, 4.0, 16.0, 64.0}) {
        const ModeOperator op = assemble_A_tilde(x, 1.0, b, c);
        k.push_back(1.0 + x);
        nk.push_back(resolvent_norm_probe(op, b, c, cplx(-0.5 * nu0, 0.0)));
    }
    const ModeOperator op = assemble_A_tilde(0.5, 1.0, b, c);
    for (double y : {10.0, 20.0, 40.0, 80.0}) {
        im.push_back(y);
        ni.push_back(resolvent_norm_probe(op, b, c, cplx(-0.5 * nu0, y)));
    }
    auto slope = [](const std::vector<double>& x, const std::vector<double>& y) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        const double n = static_cast<double>(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double a = std::log(x[i]), bb = std::log(y[i]);
            sx += a, sy += bb, sxx += a * a, sxy += a * bb;
        }
        return (n * sxy - sx * sy) / (n * sxx - sx * sx);
    };
    for (std::size_t i = 1; i < nk.size(); ++i) CHECK(nk[i] <= nk[i - 1] * (1.0 + 1e-9));
    for (std::size_t i = 1; i < ni.size(); ++i) CHECK(ni[i] <= ni[i - 1]);
    CHECK(slope(k, nk) < -0.1);
    CHECK(slope(im, ni) <= -0.5);
    CHECK(std::isfinite(resolvent_norm_probe(op, b, c, cplx(0.5, 3.0))));
}
