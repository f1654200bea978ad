#pragma once

#include "rfeq/activation.hpp"
#include "rfeq/profiles.hpp"

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace rfeq {

// E[xi^k] for standard normal xi: (k-1)!! for even k, 0 for odd k
double gauss_moment(int k);
// E[p(sigma xi)] summed exactly through the moments
double gauss_expect_poly(const std::vector<double>& coeffs, double sigma);

struct GaussHermiteRule {
    std::vector<double> nodes;
    std::vector<double> weights;  // sum to 1 (standard normal weight)
};
// probabilists' rule via Golub-Welsch, cached per node count
const GaussHermiteRule& gauss_hermite_rule(int nodes);

// E[f(sigma xi)] by quadrature; node count doubles until two rules agree within tol
// (relative to max(1, |value|)), throws after max_nodes.
double gauss_expect_quadrature(const std::function<double(double)>& f, double sigma, int nodes = 128,
                               double tol = 1e-12, int max_nodes = 1024);

// E[h(sigma xi)]
double gauss_expect(const ActivationSpec& h, double sigma);

double hermite_he(int ell, double x);
// E[h(s xi) He_ell(xi)]; exact for polynomials and the piecewise-linear kinds
double hermite_projection(const ActivationSpec& h, double s, int ell);
// same by quadrature for any function
double hermite_projection_quadrature(const std::function<double(double)>& f, double s, int ell, int nodes = 128,
                                     double tol = 1e-10);

struct ThetaPair {
    double theta1 = 0.0;  // E[h(sigma xi)^2]
    double theta2 = 0.0;  // (E[sigma h'(sigma xi)])^2
};
ThetaPair theta_pair(const ActivationSpec& h, double sigma_x);

// E[sigma h'(sigma xi)]: by differentiation for polynomials, by the Stein form E[xi h(sigma xi)] otherwise
double stein_term(const ActivationSpec& h, double sigma);

struct LinChaos {
    double theta_lin = 0.0;
    double theta_chaos = 0.0;
};
// theta_lin = E[h'(s xi)], theta_chaos = sum_{l>=2} E[h^(l)(s xi)] / l!
LinChaos theta_lin_chaos(const ActivationSpec& h, double s);

// Which scalar multiplies the independent Gaussian part of the surrogate.
//   series:   the derivative series returned by theta_lin_chaos
//   residual: standard deviation of h(s xi) - E[h] - s theta_lin xi, i.e. sqrt(theta1 - theta2 - mean^2)
enum class ChaosConvention { series, residual };
double chaos_coefficient(const ActivationSpec& h, double s, ChaosConvention convention);
ChaosConvention parse_chaos_convention(const std::string& text);
const char* to_string(ChaosConvention c);

struct RowDiagonals {
    Eigen::VectorXd d_lin;
    Eigen::VectorXd d_chaos;
    // h is not odd: the linear-plus-chaos surrogate ignores its mean
    bool assumption_violation = false;
};
RowDiagonals dlin_dchaos_diagonals(const ActivationSpec& h, const VarianceProfile& profile,
                                   ChaosConvention convention = ChaosConvention::series);

struct ThetaMatrices {
    Eigen::MatrixXd lin;    // m x n
    Eigen::MatrixXd chaos;  // m x n
};
// entrywise theta_lin_chaos at scale M2 = sqrt(Gamma_w Gamma_x^T / p)
ThetaMatrices theta_matrices(const ActivationSpec& h, const VarianceProfile& profile_x,
                             const VarianceProfile& profile_w, ChaosConvention convention = ChaosConvention::series);

}  // namespace rfeq
