#pragma once

#include <array>
#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "ksl/collision_ops.hpp"
#include "ksl/fluid_limits.hpp"
#include "ksl/quadrature.hpp"
#include "ksl/velocity_basis.hpp"

namespace fx {

using ksl::cplx;

// Default truncation shared by all cases of one test binary.
inline const ksl::Basis& basis() {
    static const ksl::Basis b = ksl::build_basis(ksl::BasisSpec{});
    return b;
}

inline const ksl::CollisionMatrices& collision() {
    static const ksl::CollisionMatrices c = ksl::assemble_collision(basis());
    return c;
}

inline const ksl::TransportCoefficients& transport() {
    static const ksl::TransportCoefficients t = ksl::transport_coefficients(basis(), collision());
    return t;
}

inline Eigen::VectorXcd random_vector(std::mt19937_64& rng, int n) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::VectorXcd v(n);
    for (int i = 0; i < n; ++i) {
        const double re = nd(rng);
        const double im = nd(rng);
        v(i) = cplx(re, im);
    }
    return v;
}

inline Eigen::VectorXcd unit(int n, int i) {
    Eigen::VectorXcd v = Eigen::VectorXcd::Zero(n);
    v(i) = 1.0;
    return v;
}

// Integral of f(v) exp(-|v|^2 / 2) over R^3 by tensor Gauss-Hermite, exact for polynomial f of degree < 2n.
template <class F>
double gauss_hermite_3d(int n, F&& f) {
    const ksl::Rule r = ksl::gauss_hermite(n);
    const double s = std::sqrt(2.0);
    double acc = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i)
        for (std::size_t j = 0; j < r.size(); ++j)
            for (std::size_t k = 0; k < r.size(); ++k)
                acc += r.w[i] * r.w[j] * r.w[k] * f(std::array<double, 3>{s * r.x[i], s * r.x[j], s * r.x[k]});
    return acc * s * s * s;
}

inline double maxwellian_sqrt(const std::array<double, 3>& v) {
    const double r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    return std::pow(2.0 * M_PI, -0.75) * std::exp(-0.25 * r2);
}

}  // namespace fx
