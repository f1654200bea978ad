#pragma once

#include "rfeq/activation.hpp"
#include "rfeq/gaussfun.hpp"
#include "rfeq/profiles.hpp"
#include "rfeq/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace rfeq {

enum class EntryLaw { gaussian, rademacher };
EntryLaw parse_entry_law(const std::string& text);
const char* to_string(EntryLaw law);

struct ModelParams {
    double alpha = 1.0;        // signal scale, E[beta beta^T] = alpha^2/p I
    double sigma_noise = 1.0;  // noise standard deviation
    double lambda = 0.004;
    EntryLaw entry_law = EntryLaw::gaussian;
    void validate() const;
};

enum class Estimator { empirical, trace_form, lozenge, square };
Estimator parse_estimator(const std::string& text);
const char* to_string(Estimator e);
inline bool is_monte_carlo(Estimator e) { return e != Estimator::square; }

struct RiskReport {
    Estimator estimator = Estimator::empirical;
    double e_train = 0.0;
    double e_test = 0.0;
    std::size_t trials = 1;
    double std_err_train = 0.0;
    double std_err_test = 0.0;
};

// One draw of the regression problem. H is m x n (features by samples).
struct SampleSet {
    Eigen::MatrixXd X;       // n x p
    Eigen::MatrixXd X_test;  // n_test x p
    Eigen::MatrixXd W;       // m x p
    Eigen::VectorXd beta_star;
    Eigen::VectorXd Y;
    Eigen::VectorXd Y_test;
    Eigen::MatrixXd H;       // m x n
    Eigen::MatrixXd H_test;  // m x n_test
};

Eigen::MatrixXd sample_iid(Eigen::Index rows, Eigen::Index cols, Rng& rng, EntryLaw law = EntryLaw::gaussian);
// entry (i,j) = gamma_ij * xi_ij
Eigen::MatrixXd sample_design(const VarianceProfile& profile, Rng& rng, EntryLaw law = EntryLaw::gaussian);
// h(W X^T / sqrt(p)) entrywise
Eigen::MatrixXd rf_features(const Eigen::MatrixXd& W, const Eigen::MatrixXd& X, const ActivationSpec& h);

// beta_star is drawn from rng unless `fixed_beta` is given
SampleSet draw_sample(const VarianceProfile& profile, const VarianceProfile& profile_test, Eigen::Index m,
                      const ActivationSpec& h, const ModelParams& params, Rng& rng,
                      const Eigen::VectorXd* fixed_beta = nullptr);

// theta_hat = (H H^T + n lambda I_m)^-1 H Y, solved on the smaller Gram matrix
Eigen::VectorXd ridge_fit(const Eigen::MatrixXd& H, const Eigen::VectorXd& Y, double lambda);
Eigen::VectorXd ridge_fit_primal(const Eigen::MatrixXd& H, const Eigen::VectorXd& Y, double lambda);
Eigen::VectorXd ridge_fit_dual(const Eigen::MatrixXd& H, const Eigen::VectorXd& Y, double lambda);

// single-trial risks of a fitted weight vector
RiskReport empirical_risks(const SampleSet& s, const Eigen::VectorXd& theta_hat);

// Expected risks over beta and noise for fixed X, X_test, H, H_test, one entry per lambda.
// Diagonalizes H^T H / n once.
struct TraceRisks {
    std::vector<double> train;
    std::vector<double> test;
};
TraceRisks trace_risks(const Eigen::MatrixXd& H, const Eigen::MatrixXd& H_test, const Eigen::MatrixXd& X,
                       const Eigen::MatrixXd& X_test, const std::vector<double>& lambdas, double alpha,
                       double sigma_noise);
RiskReport trace_form_risks(const SampleSet& s, const ModelParams& params);

// Gaussian linear-plus-chaos surrogate for a constant W profile.
struct LozengeSample {
    Eigen::MatrixXd H;       // W X^T D_lin / sqrt(p) + Z D_chaos
    Eigen::MatrixXd H_test;
    Eigen::MatrixXd W;
    Eigen::MatrixXd X;
    Eigen::MatrixXd X_test;
    Eigen::MatrixXd Z;
    Eigen::MatrixXd Z_test;
};
struct LozengeDiagonals {
    Eigen::VectorXd d_lin, d_chaos;            // n
    Eigen::VectorXd d_lin_test, d_chaos_test;  // n_test
};
LozengeDiagonals lozenge_diagonals(const ActivationSpec& h, const VarianceProfile& profile,
                                   const VarianceProfile& profile_test, ChaosConvention convention);
LozengeSample build_lozenge(const VarianceProfile& profile, const VarianceProfile& profile_test,
                            const LozengeDiagonals& diag, Eigen::Index m, Rng& rng);
// Theta_lin o (W X^T / sqrt(p)) + Theta_chaos o Z, for non-constant W profiles
Eigen::MatrixXd build_lozenge_general(const Eigen::MatrixXd& W, const Eigen::MatrixXd& X,
                                      const Eigen::MatrixXd& theta_lin, const Eigen::MatrixXd& theta_chaos, Rng& rng);
RiskReport lozenge_risks(const LozengeSample& s, const ModelParams& params);

// Mean and standard error of per-trial values, summed pairwise in index order.
struct MeanStdErr {
    double mean = 0.0;
    double std_err = 0.0;
};
MeanStdErr mean_std_err(const std::vector<double>& values);
double pairwise_sum(const double* values, std::size_t count);

// Run fn(i) for i in [0, count) on up to `threads` workers; fn must write only to slot i.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn);

struct McConfig {
    VarianceProfile profile;
    VarianceProfile profile_test;
    Eigen::Index m = 1;
    ActivationSpec activation;
    std::vector<double> lambdas{0.004};
    double alpha = 1.0;
    double sigma_noise = 1.0;
    EntryLaw entry_law = EntryLaw::gaussian;
    std::vector<Estimator> estimators{Estimator::empirical};
    std::size_t trials = 100;
    std::uint64_t seed = 1;
    std::uint64_t stream = 0;  // distinguishes grid points sharing a seed
    unsigned threads = 1;
    ChaosConvention chaos_convention = ChaosConvention::residual;
    bool fixed_beta = false;  // one beta_star per (seed, stream), shared by all trials
};

// reports[e][l]: estimator e of config.estimators at lambda l
std::vector<std::vector<RiskReport>> run_monte_carlo(const McConfig& config);

}  // namespace rfeq
