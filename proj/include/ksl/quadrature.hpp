#pragma once

#include <vector>

namespace ksl {

struct Rule {
    std::vector<double> x;
    std::vector<double> w;
    std::size_t size() const { return x.size(); }
};

// Gauss-Legendre on [a, b].
Rule gauss_legendre(int n, double a = -1.0, double b = 1.0);

// Generalized Gauss-Laguerre for the weight x^alpha e^{-x} on [0, inf).
Rule gauss_laguerre(int n, double alpha);

// Physicists' Gauss-Hermite for the weight e^{-x^2}.
Rule gauss_hermite(int n);

// Composite Gauss-Legendre: [a, b] split into panels of length <= h.
Rule composite_gl(double a, double b, double h, int per_panel);

// Gauss-Legendre in tau on [0,1] mapped by x = a + (b - a) tau^3, dense near a.
Rule graded_gl(double a, double b, int n);

// Append rule b to a.
void append(Rule& a, const Rule& b);

}  // namespace ksl
