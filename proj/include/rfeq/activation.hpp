#pragma once

#include <string>
#include <vector>

namespace rfeq {

enum class ActivationKind { polynomial, tanh_scaled, relu, abs };

struct ActivationSpec {
    ActivationKind kind = ActivationKind::polynomial;
    std::vector<double> coeffs{0.0, 1.0};  // ascending powers, polynomial kind only
    double scale = 1.0;                     // tanh(scale * x)
    std::string name = "identity";

    int quadrature_nodes = 128;
    int series_cutoff = 40;
    double tail_tol = 1e-8;

    double operator()(double x) const;
    bool is_polynomial() const { return kind == ActivationKind::polynomial; }
    bool is_odd() const;
    // slopes left/right of the kink for relu and abs
    double slope_neg() const;
    double slope_pos() const;
    void validate() const;
};

// identity | cube | hermite3 | tanh(c) | relu | abs | poly[c0,c1,...]
ActivationSpec parse_activation(const std::string& text);

namespace poly {
double eval(const std::vector<double>& c, double x);
std::vector<double> derivative(const std::vector<double>& c, int order = 1);
std::vector<double> multiply(const std::vector<double>& a, const std::vector<double>& b);
// coefficients of x -> p(s x)
std::vector<double> rescale(const std::vector<double>& c, double s);
// ascending coefficients of the probabilists' Hermite polynomial He_ell
std::vector<double> hermite(int ell);
}  // namespace poly

}  // namespace rfeq
