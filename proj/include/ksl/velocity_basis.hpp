#pragma once

#include <Eigen/Dense>
#include <array>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "ksl/quadrature.hpp"

namespace ksl {

using cplx = std::complex<double>;

struct BasisSpec {
    int radial_order = 12;          // N_r
    int angular_max = 6;            // l_max
    std::vector<int> sectors{0, 1};
    int quad_points = 0;            // 0 selects 2 N_r + 2 + l_max
    std::string canonical() const;
};

enum class Parity { none, cos, sin };

struct BasisElement {
    int n = 0;
    int l = 0;
    int m = 0;
    Parity parity = Parity::none;
    int block = 0;
};

// One azimuthal block: sector 0, or the cos / sin halves of sector 1.
struct Block {
    int m = 0;
    Parity parity = Parity::none;
    int offset = 0;
    int dim = 0;
};

class Basis {
public:
    BasisSpec spec;
    std::vector<BasisElement> functions;
    std::vector<Block> blocks;
    Eigen::MatrixXd gram;
    Rule radial;   // generalized Gauss-Laguerre in x = r^2/2 (weight x^{1/2} e^{-x})
    Rule angular;  // Gauss-Legendre in mu = cos(theta)
    std::uint64_t tag = 0;

    int dim() const { return static_cast<int>(functions.size()); }
    int index(int n, int l, int m, Parity p) const;
    // Index of collision invariant chi_j, j = 0..4; -1 when its sector is absent.
    int chi(int j) const;
    int block_of_sector(int m, Parity p = Parity::none) const;
    bool has_sector(int m) const;
    int sector_dim(int m) const;
};

// (n, l) pairs admitted for sector m, in storage order (l major, then n).
std::vector<std::pair<int, int>> admitted_pairs(int radial_order, int angular_max, int m);

Basis build_basis(const BasisSpec& spec);

// Orthonormal radial function R_nl(r) with respect to r^2 dr, including e^{-r^2/4}.
double radial_function(int n, int l, double r);
// R_nl(r) e^{r^2/4}: the polynomial part.
double radial_poly(int n, int l, double r);
// Normalized associated Legendre factor: int_{-1}^{1} Theta_lm^2 dmu = 1.
double angular_function(int l, int m, double mu);
// Azimuthal factor normalized on [0, 2 pi).
double azimuthal_function(int m, Parity p, double phi);

// Value at v of basis element e (polar axis e1, azimuth measured from e2 toward e3).
double basis_value(const BasisElement& e, const std::array<double, 3>& v);

struct VelocityFunction {
    Eigen::VectorXcd c;
    std::uint64_t tag = 0;
};

VelocityFunction make_function(const Basis& b, const Eigen::VectorXcd& c);
cplx evaluate(const Basis& b, const VelocityFunction& f, const std::array<double, 3>& v);

enum class Projector { P0, P1, Pd, Pr };

Eigen::MatrixXd projection_matrix(const Basis& b, Projector p);
VelocityFunction project(const Basis& b, Projector p, const VelocityFunction& f);

// (f, g) = sum f_i conj(g_j) G_ij
cplx inner(const Basis& b, const VelocityFunction& f, const VelocityFunction& g);
// (f, g) + s^{-2} (Pd f, Pd g)
cplx weighted_inner(const Basis& b, const VelocityFunction& f, const VelocityFunction& g, double s);

// Multiplication by v1 restricted to sector m (cos and sin halves share it).
Eigen::MatrixXd v_multiplication_matrix(const Basis& b, int m);

}  // namespace ksl
