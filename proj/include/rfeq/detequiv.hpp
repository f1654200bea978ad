#pragma once

#include "rfeq/activation.hpp"
#include "rfeq/gaussfun.hpp"
#include "rfeq/mc.hpp"
#include "rfeq/profiles.hpp"
#include "rfeq/rng.hpp"

#include <Eigen/Dense>

#include <complex>
#include <functional>
#include <vector>

namespace rfeq {

using cplx = std::complex<double>;

// Block variance profile of the linearization, groups of sizes (n, m, p, p):
//   (1,2)/(2,1): c_n^2 d_chaos(i)^2
//   (1,3)/(3,1): c_n^2 d_lin(i)^2 gamma_ik^2
//   (2,4)/(4,2): c_p^2
// and the deformation C_N: -I on group 2, -I on the (3,4)/(4,3) diagonals.
struct LinearizationProfile {
    Dimensions dims;
    VarianceProfile profile_x;
    Eigen::VectorXd d_lin;
    Eigen::VectorXd d_chaos;
    double gamma_max = 0.0;

    // class-block fast path: rows of profile_x repeat class_rows.row(row_class[i])
    bool use_classes = false;
    Eigen::MatrixXd class_rows;  // K x p
    std::vector<std::size_t> row_class;
    // dense path: d_lin(i)^2 gamma_ik^2 / n
    Eigen::MatrixXd lin_block;

    Eigen::Index N() const { return dims.N(); }
    // (1/n) sum_i gamma_ik^2 v_i, per column k
    Eigen::VectorXcd column_weighted_mean(const Eigen::VectorXcd& v) const;
    // N x N matrix of squared entries gamma^(L)_ij^2 (small N only)
    Eigen::MatrixXd dense() const;
    Eigen::MatrixXd deformation() const;
};

LinearizationProfile build_linearization_profile(const VarianceProfile& profile_x, const Eigen::VectorXd& d_lin,
                                                 const Eigen::VectorXd& d_chaos, const Dimensions& dims);

// Nonzero diagonals of id (x) Delta of an N x N block matrix.
struct SquareState {
    Eigen::VectorXcd q1;   // n
    Eigen::VectorXcd q2;   // m
    Eigen::VectorXcd q3;   // p
    Eigen::VectorXcd q4;   // p
    Eigen::VectorXcd q34;  // p
    Eigen::VectorXcd q43;  // p

    // (q1, q2, q3, q4) stacked into one N-vector, the diagonal of the block matrix
    Eigen::VectorXcd diagonal() const;
    Eigen::MatrixXcd assemble() const;
    double min_imag() const;  // over q1..q4
};
double sup_distance(const SquareState& a, const SquareState& b);
// id (x) Delta of a dense N x N matrix with group sizes (n, m, p, p)
SquareState block_diagonals(const Eigen::MatrixXcd& M, const Dimensions& dims);

// Lambda_lambda + i eta: -lambda + i eta on group 1, i eta elsewhere
Eigen::VectorXcd spectral_shift(const Dimensions& dims, double lambda, double eta);

// (Gamma_L / N) applied to a diagonal
Eigen::VectorXcd r_transform_apply(const LinearizationProfile& lp, const Eigen::VectorXcd& q);
Eigen::VectorXcd r_transform_dense(const LinearizationProfile& lp, const Eigen::VectorXcd& q);

// id (x) Delta[(C_N - Lambda - diag(r))^-1], group by group
SquareState structured_block_inverse(const LinearizationProfile& lp, const Eigen::VectorXcd& Lambda,
                                     const Eigen::VectorXcd& r);
SquareState dense_block_inverse(const LinearizationProfile& lp, const Eigen::VectorXcd& Lambda,
                                const Eigen::VectorXcd& r);

struct EtaSchedule {
    double c_eta = 1e-14;
    double exponent = 0.2;
    double delta = 0.5;
    double eta(Eigen::Index N) const;
    void validate() const;
};

enum class FixedPointMethod { damped, continuation };

struct FixedPointOptions {
    FixedPointMethod method = FixedPointMethod::continuation;
    double tol = 1e-10;
    int max_iter = 5000;   // damped iterations
    double damping = 0.5;
    int newton_max = 60;   // Newton steps per continuation level
    double gmres_tol = 1e-10;
    int gmres_restart = 100;
    int gmres_cycles = 20;
};

struct FixedPointResult {
    SquareState state;
    int iterations = 0;
    double residual = 0.0;
    double min_imag = 0.0;
};

FixedPointResult solve_fixed_point(const LinearizationProfile& lp, const Eigen::VectorXcd& Lambda,
                                   const FixedPointOptions& options = {});
// sup-norm of Q - id (x) Delta[(C_N - Lambda - R(Q))^-1]
double fixed_point_residual(const LinearizationProfile& lp, const Eigen::VectorXcd& Lambda, const SquareState& q);

struct GmresResult {
    Eigen::VectorXcd x;
    int iterations = 0;
    double relative_residual = 0.0;
    bool converged = false;
};
GmresResult gmres(const std::function<Eigen::VectorXcd(const Eigen::VectorXcd&)>& apply, const Eigen::VectorXcd& rhs,
                  double tol, int restart, int max_cycles);

// Derivative of the fixed point when Lambda moves along `direction` (an N-vector on the diagonal).
// The default direction, the group-1 indicator, gives d/dz at Lambda_z; note d/dz = -d/dlambda.
struct DerivativeResult {
    SquareState state;
    int iterations = 0;
    double relative_residual = 0.0;
};
DerivativeResult solve_derivative(const LinearizationProfile& lp, const Eigen::VectorXcd& Lambda,
                                  const SquareState& q, double tol = 1e-12);
DerivativeResult solve_directional_derivative(const LinearizationProfile& lp, const Eigen::VectorXcd& Lambda,
                                              const SquareState& q, const Eigen::VectorXcd& direction,
                                              double tol = 1e-12);

// Stieltjes transform m(-lambda) of (1/n) Tr (theta^2 Z^T Z / n + lambda)^-1, Z m x n, phi_m = n/m,
// and its derivative in z = -lambda.
struct MpValue {
    double m = 0.0;
    double dm = 0.0;
};
MpValue mp_stieltjes(double lambda, double phi_m, double theta_chaos);

struct SquareConfig {
    ActivationSpec activation;
    double lambda = 0.004;
    double alpha = 1.0;
    double sigma_noise = 1.0;
    ChaosConvention chaos_convention = ChaosConvention::residual;
    EtaSchedule eta;
    FixedPointOptions solver;
    bool force_general = false;       // use the fixed point even when theta_lin = 0
    double row_mean_tol = 1e-8;
    double imag_tol = 1e-6;
};

struct SquareReport {
    RiskReport risk;
    bool closed_form = false;
    double theta_lin = 0.0;
    double theta_chaos = 0.0;
    double s2 = 0.0;
    double eta = 0.0;
    int iterations = 0;
    double residual = 0.0;
    double min_imag = 0.0;
    double imag_residue = 0.0;
};

SquareReport square_risks(const SquareConfig& config, const VarianceProfile& profile,
                          const VarianceProfile& profile_test, Eigen::Index m);

// Dense linearization L of the surrogate built from W (m x p), X (n x p), Z (m x n).
Eigen::MatrixXd assemble_linearization(const Eigen::MatrixXd& W, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z,
                                       const Eigen::VectorXd& d_lin, const Eigen::VectorXd& d_chaos);

struct SchurCheck {
    double block11 = 0.0;  // max |[(L - Lambda_lambda)^-1]_11 - Q|
    double block21 = 0.0;  // against H Q / sqrt(n)
    double block14 = 0.0;  // against -Q D_lin X / sqrt(n)
};
SchurCheck schur_check(const Eigen::MatrixXd& W, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z,
                       const Eigen::VectorXd& d_lin, const Eigen::VectorXd& d_chaos, double lambda);

struct DenseOracleResult {
    SquareState mean;
    SchurCheck worst;  // largest Schur errors across trials, at eta = 0
};
// Average of id (x) Delta[(L - Lambda)^-1] over sampled surrogates.
DenseOracleResult dense_resolvent_oracle(const VarianceProfile& profile_x, const Eigen::VectorXd& d_lin,
                                         const Eigen::VectorXd& d_chaos, Eigen::Index m, const Eigen::VectorXcd& Lambda,
                                         std::size_t trials, Rng& rng);

}  // namespace rfeq
