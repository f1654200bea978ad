// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include "rfeq/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>

using namespace rfeq;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(const char* id, const char* what, const std::function<Outcome()>& body) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o.pass = false;
        o.detail = std::string("exception: ") + e.what();
    }
    if (!o.pass) ++failures;
    std::printf("%s %s  %s  [%s] (%.1f s)\n", id, o.pass ? "PASS" : "FAIL", what, o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
}

VarianceProfile synthetic_mixture(Eigen::Index rows, std::size_t side) {
    const auto vs = synthetic_class_vectors(10, side);
    return normalize_row_stochastic(build_mixture_profile(vs, balanced_counts(std::size_t(rows), 10)), 1.0);
}

// Cube sweep at n = 300 shared by A2, A3 (cube) and A4.
std::vector<SweepRow> fig1_rows;

const std::vector<SweepRow>& fig1_sweep() {
    if (!fig1_rows.empty()) return fig1_rows;
    ExperimentConfig c;
    c.n = 300;
    c.n_test = 100;
    c.p = 784;
    c.ratios = logspace(0.03, 3.0, 12);
    c.lambdas = {0.0005, 0.004, 0.05};
    c.activations = {"cube"};
    c.estimators = {Estimator::empirical, Estimator::square};
    c.trials = 100;
    c.seed = 2024;
    c.profile = "synthetic";
    c.classes = 10;
    c.timing = false;
    fig1_rows = run_sweep(c);
    return fig1_rows;
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

// peak of the curve for one activation at n = 100, p = 784, lambda = 0.004
PeakResult fig2_peak(const std::string& act, const std::vector<double>& ratios, Estimator est, std::size_t trials) {
    ExperimentConfig c;
    c.n = 100;
    c.n_test = 20;
    c.p = 784;
    c.ratios = ratios;
    c.lambdas = {0.004};
    c.activations = {act};
    c.estimators = {est};
    c.trials = trials;
    c.seed = 7;
    c.timing = false;
    const auto rows = run_sweep(c);
    for (const auto& r : rows)
        if (!r.ok()) throw std::runtime_error(act + ": " + r.status);
    return detect_peak(rows);
}

}  // namespace

int main() {
    report("A1", "hermite3 general fixed point vs closed form, n=m=p=400", [] {
        const auto prof = synthetic_mixture(400, 20);
        const auto prof_t = synthetic_mixture(100, 20);
        Outcome o{true, ""};
        for (double lambda : {0.1, 1.0}) {
            SquareConfig c;
            c.activation = parse_activation("hermite3");
            c.lambda = lambda;
            c.alpha = 1.0;
            c.sigma_noise = 1.0;
            const SquareReport closed = square_risks(c, prof, prof_t, 400);
            c.force_general = true;
            const auto t0 = Clock::now();
            const SquareReport general = square_risks(c, prof, prof_t, 400);
            const double secs = seconds_since(t0);
            const double dtr = rel(general.risk.e_train, closed.risk.e_train);
            const double dte = rel(general.risk.e_test, closed.risk.e_test);
            o.pass = o.pass && closed.closed_form && !general.closed_form && dtr <= 0.01 && dte <= 0.01 && secs < 10.0;
            o.detail += "lambda=" + fmt("%g", lambda) + " rel_train=" + fmt("%.2e", dtr) + " rel_test=" + fmt("%.2e", dte) +
                        " time=" + fmt("%.2fs", secs) + "; ";
        }
        return o;
    });

    report("A2", "cube MC vs square test risk, n=300, 12 ratios, 3 lambdas", [] {
        const auto& rows = fig1_sweep();
        Outcome o{true, ""};
        for (double lambda : {0.0005, 0.004, 0.05}) {
            const auto mc = select_curve(rows, "cube", lambda, Estimator::empirical);
            const auto sq = select_curve(rows, "cube", lambda, Estimator::square);
            if (mc.size() != 12 || sq.size() != 12) throw std::runtime_error("incomplete sweep");
            double worst_off = 0.0, worst_in = 0.0;
            for (std::size_t i = 0; i < mc.size(); ++i) {
                if (!mc[i].ok() || !sq[i].ok()) throw std::runtime_error("row failed: " + mc[i].status + sq[i].status);
                const double d = rel(mc[i].e_test, sq[i].e_test);
                const bool peak_region = mc[i].ratio >= 0.7 && mc[i].ratio <= 1.4;
                (peak_region ? worst_in : worst_off) = std::max(peak_region ? worst_in : worst_off, d);
            }
            o.pass = o.pass && worst_off <= 0.05 && worst_in <= 0.12;
            o.detail += "lambda=" + fmt("%g", lambda) + " off_peak=" + fmt("%.3f", worst_off) + " peak=" + fmt("%.3f", worst_in) + "; ";
        }
        return o;
    });

    report("A3", "double-descent peak locations at lambda=0.004", [] {
        Outcome o{true, ""};
        // cube: m ~ n, on the n = 300 sweep and on the n = 100 recipe
        for (Estimator e : {Estimator::empirical, Estimator::square}) {
            const PeakResult pk = detect_peak(select_curve(fig1_sweep(), "cube", 0.004, e));
            const bool ok = pk.interior && pk.ratio >= 0.7 && pk.ratio <= 1.4;
            o.pass = o.pass && ok;
            o.detail += std::string("cube n=300 ") + to_string(e) + " peak=" + fmt("%.3g", pk.ratio) + (ok ? "" : " (miss)") + "; ";
        }
        const auto grid = logspace(0.03, 30.0, 16);
        {
            const PeakResult pk = fig2_peak("cube", grid, Estimator::square, 1);
            const bool ok = pk.interior && pk.ratio >= 0.7 && pk.ratio <= 1.4;
            o.pass = o.pass && ok;
            o.detail += "cube n=100 square peak=" + fmt("%.3g", pk.ratio) + (ok ? "" : " (miss)") + "; ";
        }
        // identity and tanh(x/4): peak near m = p, p/n = 7.84, window clipped to the grid
        const double lo = std::max(0.6 * 7.84, grid.front()), hi = std::min(1.6 * 7.84, grid.back());
        for (const char* act : {"identity", "tanh(x/4)"}) {
            for (Estimator e : {Estimator::empirical, Estimator::square}) {
                const PeakResult pk = fig2_peak(act, grid, e, 100);
                const bool ok = pk.interior && pk.ratio >= lo && pk.ratio <= hi;
                o.pass = o.pass && ok;
                o.detail += std::string(act) + " " + to_string(e) + " peak=" + fmt("%.3g", pk.ratio) +
                            (ok ? "" : " (miss, window " + fmt("%.3g", lo) + ".." + fmt("%.3g", hi) + ")") + "; ";
            }
        }
        return o;
    });

    report("A4", "cube peak sharpens as lambda decreases", [] {
        auto height = [](double lambda) {
            double h = 0.0;
            for (const auto& r : select_curve(fig1_sweep(), "cube", lambda, Estimator::square)) h = std::max(h, r.e_test);
            return h;
        };
        const double small = height(0.0005), large = height(0.05);
        return Outcome{small > large, "peak(0.0005)=" + fmt("%.4g", small) + " peak(0.05)=" + fmt("%.4g", large)};
    });

    report("A5", "Schur identity, n=m=p=30", [] {
        Rng rng(derive_seed(5, {1}));
        const auto gx = synthetic_mixture(30, 6);
        const Eigen::MatrixXd prof30 = gx.entries().leftCols(30);
        const VarianceProfile gx30(prof30);
        const Eigen::MatrixXd W = sample_iid(30, 30, rng), X = sample_design(gx30, rng), Z = sample_iid(30, 30, rng);
        const auto tc = theta_lin_chaos(parse_activation("cube"), 1.0);
        const SchurCheck c = schur_check(W, X, Z, Eigen::VectorXd::Constant(30, tc.theta_lin),
                                         Eigen::VectorXd::Constant(30, chaos_coefficient(parse_activation("cube"), 1.0,
                                                                                         ChaosConvention::residual)),
                                         0.004);
        const double worst = std::max({c.block11, c.block21, c.block14});
        return Outcome{worst <= 1e-8, "block11=" + fmt("%.2e", c.block11) + " block21=" + fmt("%.2e", c.block21) +
                                          " block14=" + fmt("%.2e", c.block14)};
    });

    report("A6", "fixed point vs 200 averaged dense resolvents, n=m=p=60", [] {
        Rng rng(derive_seed(6, {1}));
        const Eigen::Index n = 60;
        const Dimensions d{n, n, n, 1};
        const auto gx = synthetic_mixture(n, 6);
        const Eigen::MatrixXd e60 = Eigen::MatrixXd(gx.entries().leftCols(36)).replicate(1, 2).leftCols(n);
        const VarianceProfile prof = normalize_row_stochastic(VarianceProfile(e60), 1.0);
        const ActivationSpec h = parse_activation("cube");
        const Eigen::VectorXd dl = Eigen::VectorXd::Constant(n, theta_lin_chaos(h, 1.0).theta_lin);
        const Eigen::VectorXd dc = Eigen::VectorXd::Constant(n, chaos_coefficient(h, 1.0, ChaosConvention::residual));
        const double lambda = 1.0;
        const Eigen::VectorXcd Lambda = spectral_shift(d, lambda, EtaSchedule{}.eta(d.N()));
        const DenseOracleResult oracle = dense_resolvent_oracle(prof, dl, dc, n, Lambda, 200, rng);
        const SquareState q = solve_fixed_point(build_linearization_profile(prof, dl, dc, d), Lambda).state;
        const double dist = sup_distance(oracle.mean, q);
        return Outcome{dist <= 5e-2, "sup_distance=" + fmt("%.3e", dist)};
    });

    report("A7", "MP Stieltjes transform vs empirical spectrum, n=m=2000", [] {
        Rng rng(derive_seed(7, {1}));
        const int n = 2000;
        const Eigen::MatrixXd Z = sample_iid(n, n, rng);
        const Eigen::MatrixXd G = Z.transpose() * Z / double(n);
        const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(G, Eigen::EigenvaluesOnly).eigenvalues();
        const double emp = (1.0 / (ev.array() + 1.0)).mean();
        const double theory = mp_stieltjes(1.0, 1.0, 1.0).m;
        const double big = 1e6 * mp_stieltjes(1e6, 1.0, 1.0).m;
        const double d = rel(theory, emp);
        return Outcome{d <= 0.01 && big >= 0.99 && big <= 1.01,
                       "rel=" + fmt("%.2e", d) + " lambda*m(1e6)=" + fmt("%.8f", big)};
    });

    report("A8", "derivatives vs central finite differences", [] {
        const auto prof = synthetic_mixture(120, 10);
        const Dimensions d{120, 90, 100, 1};
        const ActivationSpec h = parse_activation("cube");
        const auto lp = build_linearization_profile(
            prof, Eigen::VectorXd::Constant(120, theta_lin_chaos(h, 1.0).theta_lin),
            Eigen::VectorXd::Constant(120, chaos_coefficient(h, 1.0, ChaosConvention::residual)), d);
        double worst_fp = 0.0, worst_mp = 0.0;
        for (double lambda : {0.01, 0.1, 1.0}) {
            const double eta = EtaSchedule{}.eta(d.N()), step = 1e-4 * lambda;
            const Eigen::VectorXcd L = spectral_shift(d, lambda, eta);
            const SquareState q = solve_fixed_point(lp, L).state;
            const Eigen::VectorXcd an = solve_derivative(lp, L, q).state.diagonal();
            const Eigen::VectorXcd qp = solve_fixed_point(lp, spectral_shift(d, lambda + step, eta)).state.diagonal();
            const Eigen::VectorXcd qm = solve_fixed_point(lp, spectral_shift(d, lambda - step, eta)).state.diagonal();
            const Eigen::VectorXcd fd = -(qp - qm) / (2 * step);
            worst_fp = std::max(worst_fp, (fd - an).cwiseAbs().maxCoeff() / an.cwiseAbs().maxCoeff());

            for (double phi : {0.5, 2.0}) {
                const MpValue v = mp_stieltjes(lambda, phi, 0.8);
                const double mfd =
                    -(mp_stieltjes(lambda + step, phi, 0.8).m - mp_stieltjes(lambda - step, phi, 0.8).m) / (2 * step);
                worst_mp = std::max(worst_mp, rel(mfd, v.dm));
            }
        }
        return Outcome{worst_fp <= 1e-4 && worst_mp <= 1e-4,
                       "fixed_point=" + fmt("%.2e", worst_fp) + " mp=" + fmt("%.2e", worst_mp)};
    });

    report("A9", "empirical, trace-form and lozenge train risks, n=200, identity, 200 trials", [] {
        McConfig c;
        c.profile = synthetic_mixture(200, 14);
        c.profile_test = synthetic_mixture(50, 14);
        c.m = 150;
        c.activation = parse_activation("identity");
        c.lambdas = {0.05};
        c.estimators = {Estimator::empirical, Estimator::trace_form, Estimator::lozenge};
        c.trials = 200;
        c.seed = 9;
        const auto rep = run_monte_carlo(c);
        const RiskReport &emp = rep[0][0], &tr = rep[1][0], &lz = rep[2][0];
        auto z = [](const RiskReport& a, const RiskReport& b) {
            return std::abs(a.e_train - b.e_train) / std::hypot(a.std_err_train, b.std_err_train);
        };
        const double z1 = z(emp, tr), z2 = z(emp, lz), z3 = z(tr, lz);
        return Outcome{z1 <= 3 && z2 <= 3 && z3 <= 3,
                       "train emp=" + fmt("%.4f", emp.e_train) + " trace=" + fmt("%.4f", tr.e_train) +
                           " lozenge=" + fmt("%.4f", lz.e_train) + " z=" + fmt("%.2f", z1) + "/" + fmt("%.2f", z2) + "/" +
                           fmt("%.2f", z3)};
    });

    report("A10", "profile invariants: normalization, structured vs dense, CSV and IDX round trips", [] {
        Rng rng(derive_seed(10, {1}));
        // normalization: row means hit the target, idempotent
        Eigen::MatrixXd e(12, 9);
        for (Eigen::Index i = 0; i < e.rows(); ++i)
            for (Eigen::Index j = 0; j < e.cols(); ++j) e(i, j) = 0.1 + rng.uniform();
        const VarianceProfile nrm = normalize_row_stochastic(VarianceProfile(e), 1.7);
        const double row_err = (nrm.entries().rowwise().mean().array() - 1.7).abs().maxCoeff();
        const double idem = (normalize_row_stochastic(nrm, 1.7).entries() - nrm.entries()).cwiseAbs().maxCoeff();

        // structured vs dense at N = 58
        const Dimensions d{16, 10, 16, 1};
        const auto lp = build_linearization_profile(synthetic_mixture(16, 4), Eigen::VectorXd::Constant(16, 3.0),
                                                    Eigen::VectorXd::Constant(16, std::sqrt(6.0)), d);
        double sd = 0.0;
        for (int t = 0; t < 5; ++t) {
            Eigen::VectorXcd q(d.N()), Lambda(d.N());
            for (Eigen::Index i = 0; i < d.N(); ++i) {
                q(i) = cplx(rng.normal(), rng.normal());
                Lambda(i) = cplx(rng.normal(), 0.2 + rng.uniform());
            }
            sd = std::max(sd, (r_transform_apply(lp, q) - lp.dense().cast<cplx>() * q / double(d.N())).cwiseAbs().maxCoeff());
            sd = std::max(sd, sup_distance(structured_block_inverse(lp, Lambda, 0.2 * q), dense_block_inverse(lp, Lambda, 0.2 * q)));
        }

        // CSV round trip
        std::stringstream ss;
        write_profile_csv(nrm, ss);
        const bool csv_ok = read_profile_csv(ss).entries() == nrm.entries();

        // IDX round trip
        ImageSet img;
        img.count = 7;
        img.rows = 5;
        img.cols = 3;
        for (int i = 0; i < 105; ++i) img.pixels.push_back(std::uint8_t(rng.engine()() & 0xFF));
        std::vector<std::uint8_t> labels;
        for (int i = 0; i < 7; ++i) labels.push_back(std::uint8_t(i % 10));
        const ImageSet back = parse_idx_images(encode_idx_images(img));
        const bool idx_ok = back.pixels == img.pixels && back.rows == 5 && back.cols == 3 && back.count == 7 &&
                            parse_idx_labels(encode_idx_labels(labels)) == labels;

        const bool pass = row_err <= 1e-12 && idem <= 1e-12 && sd <= 1e-10 && csv_ok && idx_ok;
        return Outcome{pass, "row_mean_err=" + fmt("%.1e", row_err) + " idempotence=" + fmt("%.1e", idem) +
                                 " structured_vs_dense=" + fmt("%.1e", sd) + " csv=" + (csv_ok ? "exact" : "mismatch") +
                                 " idx=" + (idx_ok ? "exact" : "mismatch")};
    });

    std::printf("%d of 10 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
