#include "ksl/velocity_basis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "ksl/hash.hpp"

namespace ksl {

std::string BasisSpec::canonical() const {
    std::ostringstream os;
    std::vector<int> s = sectors;
    std::sort(s.begin(), s.end());
    os << "N=" << radial_order << ";L=" << angular_max << ";Q=" << quad_points << ";S=";
    for (int m : s) os << m << ',';
    return os.str();
}

std::vector<std::pair<int, int>> admitted_pairs(int radial_order, int angular_max, int m) {
    std::vector<std::pair<int, int>> out;
    for (int l = m; l <= angular_max; ++l)
        for (int n = 0; n < radial_order; ++n) out.emplace_back(n, l);
    return out;
}

double radial_poly(int n, int l, double r) {
    const double a = l + 0.5;
    const double x = 0.5 * r * r;
    double p0 = 1.0, p1 = 1.0 + a - x;
    double ln = (n == 0) ? p0 : p1;
    for (int j = 1; j < n; ++j) {
        double p2 = ((2.0 * j + 1.0 + a - x) * p1 - (j + a) * p0) / (j + 1.0);
        p0 = p1;
        p1 = p2;
        ln = p1;
    }
    const double logc = 0.5 * (std::lgamma(n + 1.0) - (l + 0.5) * std::log(2.0) - std::lgamma(n + l + 1.5));
    double sign = (n % 2 == 0) ? 1.0 : -1.0;
    return sign * std::exp(logc) * std::pow(r, l) * ln;
}

double radial_function(int n, int l, double r) { return radial_poly(n, l, r) * std::exp(-0.25 * r * r); }

double angular_function(int l, int m, double mu) {
    if (m < 0 || m > l) return 0.0;
    const double s = std::sqrt(std::max(0.0, 1.0 - mu * mu));
    double pmm = 1.0;
    for (int k = 1; k <= m; ++k) pmm *= (2.0 * k - 1.0) * s;
    double p = pmm;
    if (l > m) {
        double pm1 = mu * (2.0 * m + 1.0) * pmm;
        double pm0 = pmm;
        p = pm1;
        for (int k = m + 2; k <= l; ++k) {
            double pk = (mu * (2.0 * k - 1.0) * pm1 - (k + m - 1.0) * pm0) / (k - m);
            pm0 = pm1;
            pm1 = pk;
            p = pk;
        }
    }
    double lognorm = 0.5 * (std::log(l + 0.5) + std::lgamma(l - m + 1.0) - std::lgamma(l + m + 1.0));
    return std::exp(lognorm) * p;
}

double azimuthal_function(int m, Parity p, double phi) {
    if (m == 0) return 1.0 / std::sqrt(2.0 * M_PI);
    return (p == Parity::sin ? std::sin(m * phi) : std::cos(m * phi)) / std::sqrt(M_PI);
}

double basis_value(const BasisElement& e, const std::array<double, 3>& v) {
    const double r = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    double mu = 1.0, phi = 0.0;
    if (r > 0.0) {
        mu = v[0] / r;
        phi = std::atan2(v[2], v[1]);
    }
    return radial_function(e.n, e.l, r) * angular_function(e.l, e.m, mu) * azimuthal_function(e.m, e.parity, phi);
}

int Basis::index(int n, int l, int m, Parity p) const {
    int b = block_of_sector(m, m == 0 ? Parity::none : p);
    if (b < 0 || l < m || l > spec.angular_max || n < 0 || n >= spec.radial_order) return -1;
    const Block& blk = blocks[b];
    return blk.offset + (l - m) * spec.radial_order + n;
}

int Basis::chi(int j) const {
    switch (j) {
        case 0: return index(0, 0, 0, Parity::none);
        case 1: return index(0, 1, 0, Parity::none);
        case 2: return index(0, 1, 1, Parity::cos);
        case 3: return index(0, 1, 1, Parity::sin);
        case 4: return index(1, 0, 0, Parity::none);
        default: throw std::out_of_range("chi index");
    }
}

int Basis::block_of_sector(int m, Parity p) const {
    for (std::size_t i = 0; i < blocks.size(); ++i)
        if (blocks[i].m == m && (m == 0 || blocks[i].parity == p)) return static_cast<int>(i);
    return -1;
}

bool Basis::has_sector(int m) const { return block_of_sector(m, m == 0 ? Parity::none : Parity::cos) >= 0; }

int Basis::sector_dim(int m) const {
    int b = block_of_sector(m, m == 0 ? Parity::none : Parity::cos);
    return b < 0 ? 0 : blocks[b].dim;
}

Basis build_basis(const BasisSpec& in) {
    BasisSpec spec = in;
    if (spec.quad_points == 0) spec.quad_points = 2 * spec.radial_order + 2 + spec.angular_max;
    const int N = spec.radial_order, L = spec.angular_max, Q = spec.quad_points;
    if (N < 2) throw std::invalid_argument("build_basis: radial_order must be >= 2");
    if (L < 1) throw std::invalid_argument("build_basis: angular_max must be >= 1");
    if (Q < 2 * N + 2) throw std::invalid_argument("build_basis: quad_points must be >= 2*N_r + 2");
    // highest polynomial degree in x = r^2/2 among Gram and v1 integrands
    const int degree = L + 2 * N - 2;
    if (2 * Q - 1 < degree)
        throw std::invalid_argument("build_basis: quadrature not degree-exact for the requested truncation");
    std::vector<int> sectors = spec.sectors;
    std::sort(sectors.begin(), sectors.end());
    sectors.erase(std::unique(sectors.begin(), sectors.end()), sectors.end());
    if (sectors.empty()) throw std::invalid_argument("build_basis: no sectors");
    for (int m : sectors)
        if (m != 0 && m != 1) throw std::invalid_argument("build_basis: sector must be 0 or 1");
    spec.sectors = sectors;

    Basis b;
    b.spec = spec;
    b.tag = sha256_u64(spec.canonical());
    int offset = 0;
    for (int m : sectors) {
        std::vector<Parity> parities = (m == 0) ? std::vector<Parity>{Parity::none}
                                                : std::vector<Parity>{Parity::cos, Parity::sin};
        for (Parity p : parities) {
            Block blk;
            blk.m = m;
            blk.parity = p;
            blk.offset = offset;
            auto pairs = admitted_pairs(N, L, m);
            blk.dim = static_cast<int>(pairs.size());
            for (auto [n, l] : pairs)
                b.functions.push_back(BasisElement{n, l, m, p, static_cast<int>(b.blocks.size())});
            offset += blk.dim;
            b.blocks.push_back(blk);
        }
    }
    b.radial = gauss_laguerre(Q, 0.5);
    b.angular = gauss_legendre(L + 2);

    const int dim = b.dim();
    const std::size_t nq = b.radial.size(), na = b.angular.size();
    // tabulate radial polynomial parts and angular factors
    Eigen::MatrixXd rad(nq, dim), ang(na, dim);
    for (int i = 0; i < dim; ++i) {
        const auto& e = b.functions[i];
        for (std::size_t k = 0; k < nq; ++k) rad(k, i) = radial_poly(e.n, e.l, std::sqrt(2.0 * b.radial.x[k]));
        for (std::size_t k = 0; k < na; ++k) ang(k, i) = angular_function(e.l, e.m, b.angular.x[k]);
    }
    b.gram = Eigen::MatrixXd::Zero(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = i; j < dim; ++j) {
            const auto& ei = b.functions[i];
            const auto& ej = b.functions[j];
            // azimuthal factors are orthonormal across blocks
            if (ei.block != ej.block) continue;
            double rr = 0.0, aa = 0.0;
            for (std::size_t k = 0; k < nq; ++k) rr += b.radial.w[k] * rad(k, i) * rad(k, j);
            for (std::size_t k = 0; k < na; ++k) aa += b.angular.w[k] * ang(k, i) * ang(k, j);
            b.gram(i, j) = b.gram(j, i) = std::sqrt(2.0) * rr * aa;
        }
    return b;
}

VelocityFunction make_function(const Basis& b, const Eigen::VectorXcd& c) {
    if (c.size() != b.dim()) throw std::invalid_argument("make_function: length mismatch");
    return VelocityFunction{c, b.tag};
}

cplx evaluate(const Basis& b, const VelocityFunction& f, const std::array<double, 3>& v) {
    if (f.tag != b.tag) throw std::invalid_argument("evaluate: basis mismatch");
    cplx s = 0.0;
    for (int i = 0; i < b.dim(); ++i)
        if (f.c(i) != 0.0) s += f.c(i) * basis_value(b.functions[i], v);
    return s;
}

Eigen::MatrixXd projection_matrix(const Basis& b, Projector p) {
    const int dim = b.dim();
    Eigen::VectorXd mask = Eigen::VectorXd::Zero(dim);
    if (p == Projector::P0 || p == Projector::P1) {
        for (int j = 0; j < 5; ++j) {
            int k = b.chi(j);
            if (k >= 0) mask(k) = 1.0;
        }
    } else {
        int k = b.chi(0);
        if (k >= 0) mask(k) = 1.0;
    }
    if (p == Projector::P1 || p == Projector::Pr) mask = Eigen::VectorXd::Ones(dim) - mask;
    return mask.asDiagonal();
}

VelocityFunction project(const Basis& b, Projector p, const VelocityFunction& f) {
    if (f.tag != b.tag || f.c.size() != b.dim()) throw std::invalid_argument("project: basis mismatch");
    return VelocityFunction{projection_matrix(b, p).cast<cplx>() * f.c, b.tag};
}

cplx inner(const Basis& b, const VelocityFunction& f, const VelocityFunction& g) {
    if (f.tag != b.tag || g.tag != b.tag) throw std::invalid_argument("inner: basis mismatch");
    return g.c.dot(b.gram.cast<cplx>() * f.c);
}

cplx weighted_inner(const Basis& b, const VelocityFunction& f, const VelocityFunction& g, double s) {
    if (!(s > 0.0)) throw std::invalid_argument("weighted_inner: s must be positive");
    VelocityFunction pf = project(b, Projector::Pd, f);
    VelocityFunction pg = project(b, Projector::Pd, g);
    return inner(b, f, g) + inner(b, pf, pg) / (s * s);
}

Eigen::MatrixXd v_multiplication_matrix(const Basis& b, int m) {
    int bi = b.block_of_sector(m, m == 0 ? Parity::none : Parity::cos);
    if (bi < 0) throw std::invalid_argument("v_multiplication_matrix: unknown sector");
    const Block& blk = b.blocks[bi];
    const std::size_t nq = b.radial.size(), na = b.angular.size();
    Eigen::MatrixXd rad(nq, blk.dim), ang(na, blk.dim);
    for (int i = 0; i < blk.dim; ++i) {
        const auto& e = b.functions[blk.offset + i];
        for (std::size_t k = 0; k < nq; ++k) {
            double r = std::sqrt(2.0 * b.radial.x[k]);
            rad(k, i) = radial_poly(e.n, e.l, r);
        }
        for (std::size_t k = 0; k < na; ++k) ang(k, i) = angular_function(e.l, e.m, b.angular.x[k]);
    }
    Eigen::MatrixXd V = Eigen::MatrixXd::Zero(blk.dim, blk.dim);
    for (int i = 0; i < blk.dim; ++i)
        for (int j = i; j < blk.dim; ++j) {
            const auto& ei = b.functions[blk.offset + i];
            const auto& ej = b.functions[blk.offset + j];
            if (std::abs(ei.l - ej.l) != 1) continue;
            double rr = 0.0, aa = 0.0;
            for (std::size_t k = 0; k < nq; ++k)
                rr += b.radial.w[k] * rad(k, i) * rad(k, j) * std::sqrt(2.0 * b.radial.x[k]);
            for (std::size_t k = 0; k < na; ++k) aa += b.angular.w[k] * ang(k, i) * ang(k, j) * b.angular.x[k];
            V(i, j) = V(j, i) = std::sqrt(2.0) * rr * aa;
        }
    return V;
}

}  // namespace ksl
