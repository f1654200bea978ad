#include "rfeq/gaussfun.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>

namespace rfeq {

namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double factorial(int k) {
    double f = 1.0;
    for (int j = 2; j <= k; ++j) f *= j;
    return f;
}

// He_k(0)
double hermite_at_zero(int k) {
    if (k % 2) return 0.0;
    double v = 1.0;
    for (int j = k - 1; j > 0; j -= 2) v *= j;
    return (k / 2) % 2 ? -v : v;
}

}  // namespace

double gauss_moment(int k) {
    if (k < 0) throw std::invalid_argument("negative moment order");
    if (k % 2) return 0.0;
    double v = 1.0;
    for (int j = k - 1; j > 0; j -= 2) v *= j;
    return v;
}

double gauss_expect_poly(const std::vector<double>& coeffs, double sigma) {
    double acc = 0.0, sk = 1.0;
    for (std::size_t k = 0; k < coeffs.size(); ++k, sk *= sigma)
        if (k % 2 == 0) acc += coeffs[k] * sk * gauss_moment(int(k));
    return acc;
}

const GaussHermiteRule& gauss_hermite_rule(int nodes) {
    static std::mutex mu;
    static std::map<int, std::unique_ptr<GaussHermiteRule>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[nodes];
    if (!slot) {
        if (nodes < 1) throw std::invalid_argument("quadrature needs at least one node");
        Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(nodes, nodes);
        for (int k = 1; k < nodes; ++k) jacobi(k - 1, k) = jacobi(k, k - 1) = std::sqrt(double(k));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
        auto rule = std::make_unique<GaussHermiteRule>();
        rule->nodes.resize(nodes);
        rule->weights.resize(nodes);
        // Eigenvector weights lose all relative accuracy in the tails, where high-order
        // projections need them. Use 1 / sum_j psi_j(x)^2 over orthonormal Hermite psi_j,
        // rescaling the recurrence to stay in range.
        for (int k = 0; k < nodes; ++k) {
            const double x = es.eigenvalues()(k);
            double prev = 0.0, cur = 1.0, sum = 1.0, log_scale = 0.0;
            for (int j = 0; j + 1 < nodes; ++j) {
                const double next = (x * cur - std::sqrt(double(j)) * prev) / std::sqrt(double(j + 1));
                prev = cur;
                cur = next;
                sum += cur * cur;
                if (std::abs(cur) > 1e100) {
                    prev *= 1e-100;
                    cur *= 1e-100;
                    sum *= 1e-200;
                    log_scale += 2.0 * std::log(1e100);
                }
            }
            rule->nodes[k] = x;
            rule->weights[k] = std::exp(-log_scale - std::log(sum));
        }
        slot = std::move(rule);
    }
    return *slot;
}

namespace {

double apply_rule(const std::function<double(double)>& f, double sigma, int nodes) {
    const auto& rule = gauss_hermite_rule(nodes);
    double acc = 0.0;
    for (int k = 0; k < nodes; ++k) acc += rule.weights[k] * f(sigma * rule.nodes[k]);
    return acc;
}

// doubling loop shared by the quadrature entry points; scale sets the absolute tolerance unit
double converge(const std::function<double(int)>& at, int nodes, double tol, int max_nodes, double scale) {
    double prev = at(nodes);
    for (int n = 2 * nodes; n <= max_nodes; n *= 2) {
        const double cur = at(n);
        if (std::abs(cur - prev) <= tol * std::max({1.0, std::abs(cur), scale})) return cur;
        prev = cur;
    }
    throw std::runtime_error("Gauss-Hermite quadrature did not converge");
}

}  // namespace

double gauss_expect_quadrature(const std::function<double(double)>& f, double sigma, int nodes, double tol,
                               int max_nodes) {
    return converge([&](int n) { return apply_rule(f, sigma, n); }, nodes, tol, max_nodes, 0.0);
}

double gauss_expect(const ActivationSpec& h, double sigma) {
    switch (h.kind) {
        case ActivationKind::polynomial: return gauss_expect_poly(h.coeffs, sigma);
        case ActivationKind::relu:
        case ActivationKind::abs: return sigma * (h.slope_pos() - h.slope_neg()) * kInvSqrt2Pi;
        case ActivationKind::tanh_scaled: return 0.0;
    }
    return 0.0;
}

double hermite_he(int ell, double x) {
    if (ell == 0) return 1.0;
    double prev = 1.0, cur = x;
    for (int l = 1; l < ell; ++l) {
        const double next = x * cur - l * prev;
        prev = cur;
        cur = next;
    }
    return cur;
}

double hermite_projection_quadrature(const std::function<double(double)>& f, double s, int ell, int nodes,
                                     double tol) {
    auto at = [&](int n) {
        const auto& rule = gauss_hermite_rule(n);
        double acc = 0.0;
        for (int k = 0; k < n; ++k) acc += rule.weights[k] * f(s * rule.nodes[k]) * hermite_he(ell, rule.nodes[k]);
        return acc;
    };
    // rounding in the sum is of order ||f|| ||He_ell|| = ||f|| sqrt(ell!)
    const auto& rule = gauss_hermite_rule(nodes);
    double norm2 = 0.0;
    for (int k = 0; k < nodes; ++k) norm2 += rule.weights[k] * f(s * rule.nodes[k]) * f(s * rule.nodes[k]);
    return converge(at, nodes, tol, 1024, std::sqrt(factorial(ell) * norm2));
}

double hermite_projection(const ActivationSpec& h, double s, int ell) {
    if (ell < 0) throw std::invalid_argument("negative Hermite order");
    switch (h.kind) {
        case ActivationKind::polynomial: {
            if (ell >= int(h.coeffs.size())) return 0.0;
            return gauss_expect_poly(poly::multiply(poly::rescale(h.coeffs, s), poly::hermite(ell)), 1.0);
        }
        case ActivationKind::relu:
        case ActivationKind::abs: {
            const double a = h.slope_neg(), b = h.slope_pos();
            if (ell == 0) return s * (b - a) * kInvSqrt2Pi;
            if (ell == 1) return s * 0.5 * (a + b);
            // two Stein steps: the second derivative of h(s x) is s (b - a) delta(x)
            return s * (b - a) * kInvSqrt2Pi * hermite_at_zero(ell - 2);
        }
        case ActivationKind::tanh_scaled:
            if (ell % 2 == 0) return 0.0;  // odd integrand
            return hermite_projection_quadrature(h, s, ell, h.quadrature_nodes, 1e-12);
    }
    return 0.0;
}

double stein_term(const ActivationSpec& h, double sigma) {
    if (h.is_polynomial()) return sigma * gauss_expect_poly(poly::derivative(h.coeffs), sigma);
    return hermite_projection(h, sigma, 1);
}

ThetaPair theta_pair(const ActivationSpec& h, double sigma_x) {
    if (!(sigma_x > 0.0)) throw std::invalid_argument("theta_pair needs sigma > 0");
    ThetaPair out;
    switch (h.kind) {
        case ActivationKind::polynomial: out.theta1 = gauss_expect_poly(poly::multiply(h.coeffs, h.coeffs), sigma_x); break;
        case ActivationKind::relu:
        case ActivationKind::abs: {
            const double a = h.slope_neg(), b = h.slope_pos();
            out.theta1 = sigma_x * sigma_x * 0.5 * (a * a + b * b);
            break;
        }
        case ActivationKind::tanh_scaled:
            out.theta1 = gauss_expect_quadrature([&](double x) { return h(x) * h(x); }, sigma_x, h.quadrature_nodes);
            break;
    }
    const double st = stein_term(h, sigma_x);
    out.theta2 = st * st;
    return out;
}

LinChaos theta_lin_chaos(const ActivationSpec& h, double s) {
    if (!(s > 0.0)) throw std::invalid_argument("theta_lin_chaos needs s > 0");
    LinChaos out;
    if (h.is_polynomial()) {
        out.theta_lin = gauss_expect_poly(poly::derivative(h.coeffs), s);
        for (int l = 2; l < int(h.coeffs.size()); ++l)
            out.theta_chaos += gauss_expect_poly(poly::derivative(h.coeffs, l), s) / factorial(l);
        return out;
    }
    out.theta_lin = hermite_projection(h, s, 1) / s;
    // E[h^(l)(s xi)] = s^-l E[h(s xi) He_l(xi)]
    double last = 0.0, before_last = 0.0;
    for (int l = 2; l <= h.series_cutoff; ++l) {
        const double term = hermite_projection(h, s, l) / (std::pow(s, l) * factorial(l));
        out.theta_chaos += term;
        if (term != 0.0) {
            before_last = last;
            last = term;
        }
    }
    if (std::abs(last) + std::abs(before_last) > h.tail_tol)
        throw std::runtime_error("chaos series tail above tolerance at the cutoff");
    return out;
}

double chaos_coefficient(const ActivationSpec& h, double s, ChaosConvention convention) {
    if (convention == ChaosConvention::series) return theta_lin_chaos(h, s).theta_chaos;
    const ThetaPair tp = theta_pair(h, s);
    const double mean = gauss_expect(h, s);
    const double var = tp.theta1 - tp.theta2 - mean * mean;
    // rounding can leave a tiny negative for linear h
    return var > 0.0 ? std::sqrt(var) : 0.0;
}

ChaosConvention parse_chaos_convention(const std::string& text) {
    if (text == "series") return ChaosConvention::series;
    if (text == "residual") return ChaosConvention::residual;
    throw std::invalid_argument("unknown chaos convention '" + text + "'");
}

const char* to_string(ChaosConvention c) { return c == ChaosConvention::series ? "series" : "residual"; }

RowDiagonals dlin_dchaos_diagonals(const ActivationSpec& h, const VarianceProfile& profile,
                                   ChaosConvention convention) {
    const Eigen::VectorXd means = profile.row_means();
    RowDiagonals out;
    out.d_lin.resize(means.size());
    out.d_chaos.resize(means.size());
    out.assumption_violation = !h.is_odd();
    // rows share sigma in the common row-stochastic case; evaluate each distinct value once
    std::map<double, std::pair<double, double>> memo;
    for (Eigen::Index i = 0; i < means.size(); ++i) {
        const double sigma = std::sqrt(means(i));
        auto it = memo.find(sigma);
        if (it == memo.end()) {
            double lin = 0.0, chaos = 0.0;
            if (sigma == 0.0) {
                if (!h.is_polynomial())
                    throw std::invalid_argument("zero profile row with a non-polynomial activation");
                lin = poly::eval(poly::derivative(h.coeffs), 0.0);
            } else {
                lin = theta_lin_chaos(h, sigma).theta_lin;
                chaos = chaos_coefficient(h, sigma, convention);
            }
            it = memo.emplace(sigma, std::make_pair(lin, chaos)).first;
        }
        out.d_lin(i) = it->second.first;
        out.d_chaos(i) = it->second.second;
    }
    return out;
}

ThetaMatrices theta_matrices(const ActivationSpec& h, const VarianceProfile& profile_x,
                             const VarianceProfile& profile_w, ChaosConvention convention) {
    if (profile_x.cols() != profile_w.cols()) throw std::invalid_argument("profiles disagree on p");
    const double p = double(profile_x.cols());
    const Eigen::MatrixXd m2sq = profile_w.entries() * profile_x.entries().transpose() / p;
    ThetaMatrices out{Eigen::MatrixXd(m2sq.rows(), m2sq.cols()), Eigen::MatrixXd(m2sq.rows(), m2sq.cols())};
    std::map<double, std::pair<double, double>> memo;
    for (Eigen::Index i = 0; i < m2sq.rows(); ++i)
        for (Eigen::Index j = 0; j < m2sq.cols(); ++j) {
            const double scale = std::sqrt(m2sq(i, j));
            auto it = memo.find(scale);
            if (it == memo.end()) {
                if (!(scale > 0.0)) throw std::invalid_argument("zero entry in M2");
                it = memo.emplace(scale, std::make_pair(theta_lin_chaos(h, scale).theta_lin,
                                                        chaos_coefficient(h, scale, convention)))
                         .first;
            }
            out.lin(i, j) = it->second.first;
            out.chaos(i, j) = it->second.second;
        }
    return out;
}

}  // namespace rfeq
