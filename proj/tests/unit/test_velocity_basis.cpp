#include <doctest.h>

#include "fixture.hpp"

using namespace ksl;

namespace {

// The collision invariants as explicit functions of v.
double chi_value(int j, const std::array<double, 3>& v) {
    const double m = fx::maxwellian_sqrt(v);
    const double r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    switch (j) {
        case 0: return m;
        case 1: return v[0] * m;
        case 2: return v[1] * m;
        case 3: return v[2] * m;
        default: return (r2 - 3.0) / std::sqrt(6.0) * m;
    }
}

}  // namespace

TEST_CASE("lowest truncation contains the collision invariants exactly") {
    BasisSpec spec;
    spec.radial_order = 2;
    spec.angular_max = 1;
    const Basis b = build_basis(spec);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd(0.0, 1.5);
    for (int j = 0; j < 5; ++j) {
        const int k = b.chi(j);
        REQUIRE(k >= 0);
        const VelocityFunction f = make_function(b, fx::unit(b.dim(), k));
        for (int trial = 0; trial < 20; ++trial) {
            const std::array<double, 3> v{nd(rng), nd(rng), nd(rng)};
            CHECK(std::abs(evaluate(b, f, v) - chi_value(j, v)) <= 1e-12);
        }
    }
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) CHECK(std::abs(b.gram(b.chi(i), b.chi(j)) - (i == j ? 1.0 : 0.0)) <= 1e-12);
    CHECK(b.functions[b.chi(0)].m == 0);
    CHECK(b.functions[b.chi(1)].m == 0);
    CHECK(b.functions[b.chi(4)].m == 0);
    CHECK(b.functions[b.chi(2)].m == 1);
    CHECK(b.functions[b.chi(3)].m == 1);
}

TEST_CASE("sector dimensions match an independent count of index pairs") {
    BasisSpec spec;
    spec.radial_order = 8;
    spec.angular_max = 4;
    const Basis b = build_basis(spec);
    // sector 0: l = 0..4, sector 1: l = 1..4; eight radial orders each
    CHECK(b.sector_dim(0) == 8 * 5);
    CHECK(b.sector_dim(1) == 8 * 4);
    CHECK(b.dim() == 8 * 5 + 2 * 8 * 4);
}

TEST_CASE("gram matrix is the identity") {
    const Basis& b = fx::basis();
    const double defect = (b.gram - Eigen::MatrixXd::Identity(b.dim(), b.dim())).cwiseAbs().maxCoeff();
    CHECK(defect <= 1e-10);
}

TEST_CASE("underresolved quadrature is rejected") {
    BasisSpec spec;
    spec.radial_order = 6;
    spec.angular_max = 3;
    spec.quad_points = 5;
    CHECK_THROWS(build_basis(spec));
    spec.quad_points = 0;
    spec.radial_order = 1;
    CHECK_THROWS(build_basis(spec));
}

TEST_CASE("projections of invariants") {
    const Basis& b = fx::basis();
    auto fn = [&](int j) { return make_function(b, fx::unit(b.dim(), b.chi(j))); };
    const VelocityFunction c2 = fn(2), c4 = fn(4);
    CHECK((project(b, Projector::P0, c2).c - c2.c).norm() <= 1e-12);
    CHECK(project(b, Projector::P1, c2).c.norm() <= 1e-12);
    CHECK(project(b, Projector::Pd, c4).c.norm() <= 1e-12);
    CHECK((project(b, Projector::Pr, c4).c - c4.c).norm() <= 1e-12);
}

TEST_CASE("P0 of a random function agrees with direct quadrature") {
    BasisSpec spec;
    spec.radial_order = 4;
    spec.angular_max = 3;
    const Basis b = build_basis(spec);
    std::mt19937_64 rng(11);
    const VelocityFunction f = make_function(b, fx::random_vector(rng, b.dim()));
    const VelocityFunction p = project(b, Projector::P0, f);
    const double w = std::pow(2.0 * M_PI, -1.5);  // exp(-|v|^2/2) carried by the quadrature weight
    for (int j = 0; j < 5; ++j) {
        const double re = fx::gauss_hermite_3d(14, [&](const std::array<double, 3>& v) {
            return evaluate(b, f, v).real() * chi_value(j, v) / (fx::maxwellian_sqrt(v) * fx::maxwellian_sqrt(v)) * w;
        });
        const double im = fx::gauss_hermite_3d(14, [&](const std::array<double, 3>& v) {
            return evaluate(b, f, v).imag() * chi_value(j, v) / (fx::maxwellian_sqrt(v) * fx::maxwellian_sqrt(v)) * w;
        });
        CHECK(std::abs(p.c(b.chi(j)) - cplx(re, im)) <= 1e-10);
    }
}

TEST_CASE("projector algebra") {
    const Basis& b = fx::basis();
    const int n = b.dim();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
    for (Projector p : {Projector::P0, Projector::P1, Projector::Pd, Projector::Pr}) {
        const Eigen::MatrixXd P = projection_matrix(b, p);
        CHECK((P * P - P).norm() <= 1e-12);
    }
    CHECK((projection_matrix(b, Projector::P0) + projection_matrix(b, Projector::P1) - I).cwiseAbs().maxCoeff() == 0.0);
    CHECK((projection_matrix(b, Projector::Pd) + projection_matrix(b, Projector::Pr) - I).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("weighted inner product") {
    const Basis& b = fx::basis();
    auto fn = [&](int j) { return make_function(b, fx::unit(b.dim(), b.chi(j))); };
    CHECK(std::abs(weighted_inner(b, fn(0), fn(0), 1.0) - 2.0) <= 1e-12);
    for (double s : {0.1, 1.0, 7.0}) CHECK(std::abs(weighted_inner(b, fn(1), fn(1), s) - 1.0) <= 1e-12);
    CHECK(std::abs(weighted_inner(b, fn(0), fn(1), 0.5)) <= 1e-12);

    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const VelocityFunction f = make_function(b, fx::random_vector(rng, b.dim()));
        const VelocityFunction g = make_function(b, fx::random_vector(rng, b.dim()));
        const double s = 0.3 + trial;
        VelocityFunction gw = g, fw = f;
        gw.c += project(b, Projector::Pd, g).c / (s * s);
        fw.c += project(b, Projector::Pd, f).c / (s * s);
        const cplx w = weighted_inner(b, f, g, s);
        CHECK(std::abs(w - inner(b, f, gw)) <= 1e-10 * std::abs(w));
        CHECK(std::abs(w - inner(b, fw, g)) <= 1e-10 * std::abs(w));
    }
}

TEST_CASE("velocity multiplication matrix") {
    const Basis& b = fx::basis();
    const Eigen::MatrixXd V0 = v_multiplication_matrix(b, 0);
    const Eigen::MatrixXd V1 = v_multiplication_matrix(b, 1);
    CHECK((V0 - V0.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((V1 - V1.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    const int off = b.blocks[b.block_of_sector(0)].offset;
    const int i0 = b.chi(0) - off, i1 = b.chi(1) - off, i4 = b.chi(4) - off;
    CHECK(std::abs(V0(i1, i0) - 1.0) <= 1e-12);

    // (v1 chi1, chi0) and (v1 chi1, chi4) by direct quadrature
    const double w = std::pow(2.0 * M_PI, -1.5);
    const double q0 = w * fx::gauss_hermite_3d(8, [](const std::array<double, 3>& v) { return v[0] * v[0]; });
    const double q4 = w * fx::gauss_hermite_3d(8, [](const std::array<double, 3>& v) {
        const double r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        return v[0] * v[0] * (r2 - 3.0) / std::sqrt(6.0);
    });
    CHECK(std::abs(V0(i0, i1) - q0) <= 1e-12);
    CHECK(std::abs(V0(i4, i1) - q4) <= 1e-12);
}
