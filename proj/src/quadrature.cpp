#include "ksl/quadrature.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace ksl {

namespace {

// Golub-Welsch on a symmetric Jacobi matrix with diagonal a, off-diagonal b, moment mu0.
Rule golub_welsch(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double mu0) {
    const int n = static_cast<int>(a.size());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(a, b, Eigen::ComputeEigenvectors);
    Rule r;
    r.x.resize(n);
    r.w.resize(n);
    for (int i = 0; i < n; ++i) {
        r.x[i] = es.eigenvalues()(i);
        double v0 = es.eigenvectors()(0, i);
        r.w[i] = mu0 * v0 * v0;
    }
    return r;
}

}  // namespace

Rule gauss_legendre(int n, double a, double b) {
    if (n < 1) throw std::invalid_argument("gauss_legendre: n < 1");
    Rule r;
    r.x.resize(n);
    r.w.resize(n);
    // Newton on P_n from Chebyshev-like initial guesses; accurate to machine precision.
    const int m = (n + 1) / 2;
    for (int i = 0; i < m; ++i) {
        double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p1 = 1.0, p2 = 0.0;
            for (int j = 1; j <= n; ++j) {
                double p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
            }
            pp = n * (z * p1 - p2) / (z * z - 1.0);
            double dz = p1 / pp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        {
            double p1 = 1.0, p2 = 0.0;
            for (int j = 1; j <= n; ++j) {
                double p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
            }
            pp = n * (z * p1 - p2) / (z * z - 1.0);
        }
        double w = 2.0 / ((1.0 - z * z) * pp * pp);
        r.x[i] = -z;
        r.x[n - 1 - i] = z;
        r.w[i] = w;
        r.w[n - 1 - i] = w;
    }
    if (n % 2 == 1) r.x[n / 2] = 0.0;
    const double c = 0.5 * (b - a), d = 0.5 * (b + a);
    for (int i = 0; i < n; ++i) {
        r.x[i] = c * r.x[i] + d;
        r.w[i] *= c;
    }
    return r;
}

Rule gauss_laguerre(int n, double alpha) {
    if (n < 1) throw std::invalid_argument("gauss_laguerre: n < 1");
    Eigen::VectorXd a(n), b(std::max(n - 1, 0));
    for (int i = 0; i < n; ++i) a(i) = 2.0 * i + alpha + 1.0;
    for (int i = 1; i < n; ++i) b(i - 1) = std::sqrt(i * (i + alpha));
    Rule r = golub_welsch(a, b, std::tgamma(alpha + 1.0));
    // Eigenvector weights lose relative accuracy in the tail; polish nodes by Newton
    // and recompute weights from w = G(n+a+1) x / (n! (n+1)^2 L_{n+1}(x)^2) in log form.
    auto laguerre = [&](int k, double x, double& lk, double& lkm1) {
        double p0 = 1.0, p1 = 1.0 + alpha - x;
        if (k == 0) {
            lk = p0;
            lkm1 = 0.0;
            return;
        }
        for (int j = 1; j < k; ++j) {
            double p2 = ((2.0 * j + 1.0 + alpha - x) * p1 - (j + alpha) * p0) / (j + 1.0);
            p0 = p1;
            p1 = p2;
        }
        lk = p1;
        lkm1 = p0;
    };
    const double lg = std::lgamma(n + alpha + 1.0) - std::lgamma(n + 1.0);
    for (int i = 0; i < n; ++i) {
        double x = r.x[i];
        for (int it = 0; it < 8; ++it) {
            double ln, lnm1;
            laguerre(n, x, ln, lnm1);
            double d = (n * ln - (n + alpha) * lnm1) / x;
            double dx = ln / d;
            x -= dx;
            if (std::abs(dx) < 1e-15 * x) break;
        }
        double ln1, ln;
        laguerre(n + 1, x, ln1, ln);
        r.x[i] = x;
        r.w[i] = std::exp(lg + std::log(x) - 2.0 * std::log((n + 1.0) * std::abs(ln1)));
    }
    return r;
}

Rule gauss_hermite(int n) {
    if (n < 1) throw std::invalid_argument("gauss_hermite: n < 1");
    Eigen::VectorXd a = Eigen::VectorXd::Zero(n), b(std::max(n - 1, 0));
    for (int i = 1; i < n; ++i) b(i - 1) = std::sqrt(0.5 * i);
    Rule r = golub_welsch(a, b, std::sqrt(M_PI));
    // symmetrize to remove eigen-solver round-off
    for (int i = 0; i < n / 2; ++i) {
        double x = 0.5 * (r.x[n - 1 - i] - r.x[i]);
        double w = 0.5 * (r.w[n - 1 - i] + r.w[i]);
        r.x[i] = -x;
        r.x[n - 1 - i] = x;
        r.w[i] = r.w[n - 1 - i] = w;
    }
    if (n % 2 == 1) r.x[n / 2] = 0.0;
    return r;
}

Rule composite_gl(double a, double b, double h, int per_panel) {
    Rule out;
    if (b <= a) return out;
    int panels = std::max(1, static_cast<int>(std::ceil((b - a) / h - 1e-12)));
    double step = (b - a) / panels;
    Rule base = gauss_legendre(per_panel);
    for (int p = 0; p < panels; ++p) {
        double lo = a + p * step;
        for (std::size_t i = 0; i < base.size(); ++i) {
            out.x.push_back(lo + 0.5 * step * (base.x[i] + 1.0));
            out.w.push_back(0.5 * step * base.w[i]);
        }
    }
    return out;
}

Rule graded_gl(double a, double b, int n) {
    Rule base = gauss_legendre(n, 0.0, 1.0);
    Rule out;
    for (std::size_t i = 0; i < base.size(); ++i) {
        double t = base.x[i];
        out.x.push_back(a + (b - a) * t * t * t);
        out.w.push_back(base.w[i] * 3.0 * t * t * std::abs(b - a));
    }
    return out;
}

void append(Rule& a, const Rule& b) {
    a.x.insert(a.x.end(), b.x.begin(), b.x.end());
    a.w.insert(a.w.end(), b.w.begin(), b.w.end());
}

}  // namespace ksl
