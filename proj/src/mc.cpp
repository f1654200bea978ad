#include "rfeq/mc.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace rfeq {

EntryLaw parse_entry_law(const std::string& text) {
    if (text == "gaussian") return EntryLaw::gaussian;
    if (text == "rademacher") return EntryLaw::rademacher;
    throw std::invalid_argument("unknown entry law '" + text + "'");
}

const char* to_string(EntryLaw law) { return law == EntryLaw::gaussian ? "gaussian" : "rademacher"; }

void ModelParams::validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be > 0");
    if (!(alpha >= 0.0) || !(sigma_noise >= 0.0)) throw std::invalid_argument("alpha and sigma must be >= 0");
}

Estimator parse_estimator(const std::string& text) {
    if (text == "empirical") return Estimator::empirical;
    if (text == "trace_form") return Estimator::trace_form;
    if (text == "lozenge") return Estimator::lozenge;
    if (text == "square") return Estimator::square;
    throw std::invalid_argument("unknown estimator '" + text + "'");
}

const char* to_string(Estimator e) {
    switch (e) {
        case Estimator::empirical: return "empirical";
        case Estimator::trace_form: return "trace_form";
        case Estimator::lozenge: return "lozenge";
        case Estimator::square: return "square";
    }
    return "?";
}

Eigen::MatrixXd sample_iid(Eigen::Index rows, Eigen::Index cols, Rng& rng, EntryLaw law) {
    Eigen::MatrixXd out(rows, cols);
    // explicit loop keeps the draw order fixed
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i)
            out(i, j) = law == EntryLaw::gaussian ? rng.normal() : rng.rademacher();
    return out;
}

Eigen::MatrixXd sample_design(const VarianceProfile& profile, Rng& rng, EntryLaw law) {
    return sample_iid(profile.rows(), profile.cols(), rng, law).cwiseProduct(profile.std_devs());
}

Eigen::MatrixXd rf_features(const Eigen::MatrixXd& W, const Eigen::MatrixXd& X, const ActivationSpec& h) {
    if (W.cols() != X.cols()) throw std::invalid_argument("rf_features: W and X disagree on p");
    Eigen::MatrixXd pre = W * X.transpose() / std::sqrt(double(X.cols()));
    if (h.is_polynomial() && h.coeffs.size() == 2 && h.coeffs[0] == 0.0 && h.coeffs[1] == 1.0) return pre;
    return pre.unaryExpr([&h](double v) { return h(v); });
}

SampleSet draw_sample(const VarianceProfile& profile, const VarianceProfile& profile_test, Eigen::Index m,
                      const ActivationSpec& h, const ModelParams& params, Rng& rng,
                      const Eigen::VectorXd* fixed_beta) {
    if (profile.cols() != profile_test.cols()) throw std::invalid_argument("train and test profiles disagree on p");
    const Eigen::Index p = profile.cols();
    SampleSet s;
    s.W = sample_iid(m, p, rng, params.entry_law);
    s.X = sample_design(profile, rng, params.entry_law);
    s.X_test = sample_design(profile_test, rng, params.entry_law);
    if (fixed_beta) {
        if (fixed_beta->size() != p) throw std::invalid_argument("fixed beta has the wrong length");
        s.beta_star = *fixed_beta;
    } else {
        s.beta_star = sample_iid(p, 1, rng) * (params.alpha / std::sqrt(double(p)));
    }
    s.Y = s.X * s.beta_star + sample_iid(s.X.rows(), 1, rng) * params.sigma_noise;
    s.Y_test = s.X_test * s.beta_star + sample_iid(s.X_test.rows(), 1, rng) * params.sigma_noise;
    s.H = rf_features(s.W, s.X, h);
    s.H_test = rf_features(s.W, s.X_test, h);
    return s;
}

Eigen::VectorXd ridge_fit_primal(const Eigen::MatrixXd& H, const Eigen::VectorXd& Y, double lambda) {
    const double n = double(H.cols());
    Eigen::MatrixXd gram = H * H.transpose();
    gram.diagonal().array() += n * lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success) throw std::runtime_error("ridge_fit: Gram factorization failed");
    return llt.solve(H * Y);
}

Eigen::VectorXd ridge_fit_dual(const Eigen::MatrixXd& H, const Eigen::VectorXd& Y, double lambda) {
    const double n = double(H.cols());
    Eigen::MatrixXd gram = H.transpose() * H;
    gram.diagonal().array() += n * lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success) throw std::runtime_error("ridge_fit: Gram factorization failed");
    return H * llt.solve(Y);
}

Eigen::VectorXd ridge_fit(const Eigen::MatrixXd& H, const Eigen::VectorXd& Y, double lambda) {
    if (!(lambda > 0.0)) throw std::invalid_argument("ridge_fit needs lambda > 0");
    if (H.cols() != Y.size()) throw std::invalid_argument("ridge_fit: H columns and Y length differ");
    if (!H.allFinite() || !Y.allFinite()) throw std::runtime_error("ridge_fit: non-finite input");
    return H.rows() <= H.cols() ? ridge_fit_primal(H, Y, lambda) : ridge_fit_dual(H, Y, lambda);
}

RiskReport empirical_risks(const SampleSet& s, const Eigen::VectorXd& theta_hat) {
    RiskReport r;
    r.estimator = Estimator::empirical;
    r.e_train = (s.Y - s.H.transpose() * theta_hat).squaredNorm() / double(s.Y.size());
    r.e_test = (s.Y_test - s.H_test.transpose() * theta_hat).squaredNorm() / double(s.Y_test.size());
    return r;
}

namespace {

struct GramSpectrum {
    Eigen::VectorXd evals;
    Eigen::MatrixXd V;
};

GramSpectrum gram_spectrum(const Eigen::MatrixXd& H) {
    const double n = double(H.cols());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H.transpose() * H / n);
    if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
    // round-off can push zero eigenvalues slightly negative
    return {es.eigenvalues().cwiseMax(0.0), es.eigenvectors()};
}

TraceRisks trace_risks_from(const GramSpectrum& g, const Eigen::MatrixXd& H, const Eigen::MatrixXd& H_test,
                            const Eigen::MatrixXd& X, const Eigen::MatrixXd& X_test,
                            const std::vector<double>& lambdas, double alpha, double sigma) {
    const double n = double(H.cols()), nt = double(H_test.cols()), p = double(X.cols());
    const double a2 = alpha * alpha, s2 = sigma * sigma;
    const Eigen::MatrixXd VX = g.V.transpose() * X;                    // n x p
    const Eigen::MatrixXd A = (H_test.transpose() * H) * g.V;          // nt x n
    const Eigen::MatrixXd B = (X_test * X.transpose()) * g.V;          // nt x n
    const Eigen::VectorXd row_sq = VX.rowwise().squaredNorm();
    const Eigen::VectorXd col_sq_a = A.colwise().squaredNorm().transpose();
    const Eigen::VectorXd cross = A.cwiseProduct(B).colwise().sum().transpose();
    const double xt_norm = X_test.squaredNorm();

    TraceRisks out;
    for (double lambda : lambdas) {
        const Eigen::ArrayXd d = (g.evals.array() + lambda).inverse();
        const Eigen::ArrayXd d2 = d.square();
        out.train.push_back(lambda * lambda / n * (a2 / p * (row_sq.array() * d2).sum() + s2 * d2.sum()));
        const double fit_sq = (A * d.matrix().asDiagonal() * VX).squaredNorm();
        out.test.push_back(s2 + a2 / (p * nt) * xt_norm + a2 / (p * nt * n * n) * fit_sq +
                           s2 / (nt * n * n) * (col_sq_a.array() * d2).sum() -
                           2.0 * a2 / (nt * n * p) * (cross.array() * d).sum());
    }
    return out;
}

}  // namespace

TraceRisks trace_risks(const Eigen::MatrixXd& H, const Eigen::MatrixXd& H_test, const Eigen::MatrixXd& X,
                       const Eigen::MatrixXd& X_test, const std::vector<double>& lambdas, double alpha,
                       double sigma_noise) {
    return trace_risks_from(gram_spectrum(H), H, H_test, X, X_test, lambdas, alpha, sigma_noise);
}

RiskReport trace_form_risks(const SampleSet& s, const ModelParams& params) {
    params.validate();
    const TraceRisks t = trace_risks(s.H, s.H_test, s.X, s.X_test, {params.lambda}, params.alpha, params.sigma_noise);
    RiskReport r;
    r.estimator = Estimator::trace_form;
    r.e_train = t.train[0];
    r.e_test = t.test[0];
    return r;
}

LozengeDiagonals lozenge_diagonals(const ActivationSpec& h, const VarianceProfile& profile,
                                   const VarianceProfile& profile_test, ChaosConvention convention) {
    const RowDiagonals train = dlin_dchaos_diagonals(h, profile, convention);
    const RowDiagonals test = dlin_dchaos_diagonals(h, profile_test, convention);
    return {train.d_lin, train.d_chaos, test.d_lin, test.d_chaos};
}

LozengeSample build_lozenge(const VarianceProfile& profile, const VarianceProfile& profile_test,
                            const LozengeDiagonals& diag, Eigen::Index m, Rng& rng) {
    if (diag.d_lin.size() != profile.rows() || diag.d_lin_test.size() != profile_test.rows())
        throw std::invalid_argument("build_lozenge: diagonal lengths do not match the profiles");
    const double sp = std::sqrt(double(profile.cols()));
    LozengeSample s;
    s.W = sample_iid(m, profile.cols(), rng);
    s.X = sample_design(profile, rng);
    s.X_test = sample_design(profile_test, rng);
    s.Z = sample_iid(m, profile.rows(), rng);
    s.Z_test = sample_iid(m, profile_test.rows(), rng);
    s.H = (s.W * s.X.transpose() / sp) * diag.d_lin.asDiagonal();
    s.H.noalias() += s.Z * diag.d_chaos.asDiagonal();
    s.H_test = (s.W * s.X_test.transpose() / sp) * diag.d_lin_test.asDiagonal();
    s.H_test.noalias() += s.Z_test * diag.d_chaos_test.asDiagonal();
    return s;
}

Eigen::MatrixXd build_lozenge_general(const Eigen::MatrixXd& W, const Eigen::MatrixXd& X,
                                      const Eigen::MatrixXd& theta_lin, const Eigen::MatrixXd& theta_chaos,
                                      Rng& rng) {
    const Eigen::Index m = W.rows(), n = X.rows();
    if (theta_lin.rows() != m || theta_lin.cols() != n || theta_chaos.rows() != m || theta_chaos.cols() != n)
        throw std::invalid_argument("build_lozenge_general: Theta matrices must be m x n");
    const Eigen::MatrixXd Z = sample_iid(m, n, rng);
    return theta_lin.cwiseProduct(W * X.transpose() / std::sqrt(double(X.cols()))) + theta_chaos.cwiseProduct(Z);
}

RiskReport lozenge_risks(const LozengeSample& s, const ModelParams& params) {
    params.validate();
    const TraceRisks t = trace_risks(s.H, s.H_test, s.X, s.X_test, {params.lambda}, params.alpha, params.sigma_noise);
    RiskReport r;
    r.estimator = Estimator::lozenge;
    r.e_train = t.train[0];
    r.e_test = t.test[0];
    return r;
}

double pairwise_sum(const double* values, std::size_t count) {
    if (count <= 8) {
        double acc = 0.0;
        for (std::size_t i = 0; i < count; ++i) acc += values[i];
        return acc;
    }
    const std::size_t half = count / 2;
    return pairwise_sum(values, half) + pairwise_sum(values + half, count - half);
}

MeanStdErr mean_std_err(const std::vector<double>& values) {
    MeanStdErr out;
    if (values.empty()) return out;
    const double k = double(values.size());
    out.mean = pairwise_sum(values.data(), values.size()) / k;
    if (values.size() > 1) {
        std::vector<double> dev(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) dev[i] = (values[i] - out.mean) * (values[i] - out.mean);
        out.std_err = std::sqrt(pairwise_sum(dev.data(), dev.size()) / (k - 1.0) / k);
    }
    return out;
}

void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::vector<std::thread> pool;
    const unsigned workers = unsigned(std::min<std::size_t>(threads, count));
    for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mu);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

std::vector<std::vector<RiskReport>> run_monte_carlo(const McConfig& config) {
    if (config.trials == 0) throw std::invalid_argument("Monte Carlo needs at least one trial");
    if (config.lambdas.empty()) throw std::invalid_argument("Monte Carlo needs at least one lambda");
    for (double l : config.lambdas)
        if (!(l > 0.0)) throw std::invalid_argument("lambda must be > 0");
    for (Estimator e : config.estimators)
        if (!is_monte_carlo(e)) throw std::invalid_argument("run_monte_carlo handles sampled estimators only");

    const std::size_t num_est = config.estimators.size(), num_lam = config.lambdas.size(), T = config.trials;
    const bool want_loz =
        std::find(config.estimators.begin(), config.estimators.end(), Estimator::lozenge) != config.estimators.end();
    LozengeDiagonals diag;
    if (want_loz)
        diag = lozenge_diagonals(config.activation, config.profile, config.profile_test, config.chaos_convention);

    ModelParams params;
    params.alpha = config.alpha;
    params.sigma_noise = config.sigma_noise;
    params.entry_law = config.entry_law;

    Eigen::VectorXd beta;
    if (config.fixed_beta) {
        Rng beta_rng(derive_seed(config.seed, {config.stream, 0x62657461ULL}));
        beta = sample_iid(config.profile.cols(), 1, beta_rng) * (config.alpha / std::sqrt(double(config.profile.cols())));
    }

    // values[(e * num_lam + l) * 2 + {0 train, 1 test}][trial]
    std::vector<std::vector<double>> values(num_est * num_lam * 2, std::vector<double>(T));

    parallel_for(T, config.threads, [&](std::size_t t) {
        Rng rng(derive_seed(config.seed, {config.stream, t}));
        const SampleSet s = draw_sample(config.profile, config.profile_test, config.m, config.activation, params, rng,
                                        config.fixed_beta ? &beta : nullptr);
        const double n = double(s.H.cols()), nt = double(s.H_test.cols());
        GramSpectrum g;
        bool have_g = false;
        for (std::size_t e = 0; e < num_est; ++e) {
            auto put = [&](std::size_t l, double train, double test) {
                values[(e * num_lam + l) * 2][t] = train;
                values[(e * num_lam + l) * 2 + 1][t] = test;
            };
            switch (config.estimators[e]) {
                case Estimator::empirical: {
                    if (!have_g) g = gram_spectrum(s.H), have_g = true;
                    const Eigen::VectorXd vy = g.V.transpose() * s.Y;
                    const Eigen::MatrixXd A = (s.H_test.transpose() * s.H) * g.V;
                    for (std::size_t l = 0; l < num_lam; ++l) {
                        const double lambda = config.lambdas[l];
                        const Eigen::VectorXd coef = (vy.array() / (g.evals.array() + lambda)).matrix();
                        // Y - H^T theta = lambda Q Y
                        const double train = lambda * lambda * coef.squaredNorm() / n;
                        const double test = (s.Y_test - A * coef / n).squaredNorm() / nt;
                        put(l, train, test);
                    }
                    break;
                }
                case Estimator::trace_form: {
                    if (!have_g) g = gram_spectrum(s.H), have_g = true;
                    const TraceRisks tr = trace_risks_from(g, s.H, s.H_test, s.X, s.X_test, config.lambdas,
                                                           config.alpha, config.sigma_noise);
                    for (std::size_t l = 0; l < num_lam; ++l) put(l, tr.train[l], tr.test[l]);
                    break;
                }
                case Estimator::lozenge: {
                    Rng loz_rng(derive_seed(config.seed, {config.stream, t, 0x6c6f7aULL}));
                    const LozengeSample ls = build_lozenge(config.profile, config.profile_test, diag, config.m, loz_rng);
                    const TraceRisks tr = trace_risks(ls.H, ls.H_test, ls.X, ls.X_test, config.lambdas, config.alpha,
                                                      config.sigma_noise);
                    for (std::size_t l = 0; l < num_lam; ++l) put(l, tr.train[l], tr.test[l]);
                    break;
                }
                case Estimator::square: break;
            }
        }
    });

    std::vector<std::vector<RiskReport>> out(num_est, std::vector<RiskReport>(num_lam));
    for (std::size_t e = 0; e < num_est; ++e)
        for (std::size_t l = 0; l < num_lam; ++l) {
            const MeanStdErr tr = mean_std_err(values[(e * num_lam + l) * 2]);
            const MeanStdErr te = mean_std_err(values[(e * num_lam + l) * 2 + 1]);
            RiskReport& r = out[e][l];
            r.estimator = config.estimators[e];
            r.trials = T;
            r.e_train = tr.mean;
            r.e_test = te.mean;
            r.std_err_train = tr.std_err;
            r.std_err_test = te.std_err;
        }
    return out;
}

}  // namespace rfeq
