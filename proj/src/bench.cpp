#include "rfeq/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace rfeq {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
    for (auto& c : s) c = char(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

double to_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
    }
    if (used != v.size()) throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
    return out;
}

long long to_integer(const std::string& key, const std::string& v) {
    const double d = to_double(key, v);
    if (d != std::floor(d) || d < 0) throw std::invalid_argument("config: " + key + " expects a non-negative integer");
    return (long long)d;
}

bool to_bool(const std::string& key, const std::string& v) {
    const std::string l = lower(v);
    if (l == "true" || l == "1" || l == "yes" || l == "on") return true;
    if (l == "false" || l == "0" || l == "no" || l == "off") return false;
    throw std::invalid_argument("config: " + key + " expects a boolean");
}

std::vector<double> parse_ratios(const std::string& key, const std::string& v) {
    const std::string l = lower(v);
    if (l.rfind("logspace(", 0) == 0) {
        if (l.back() != ')') throw std::invalid_argument("config: malformed logspace in " + key);
        const auto args = split_list(v.substr(9, v.size() - 10));
        if (args.size() != 3) throw std::invalid_argument("config: logspace takes (first, last, count)");
        return logspace(to_double(key, args[0]), to_double(key, args[1]), std::size_t(to_integer(key, args[2])));
    }
    std::vector<double> out;
    for (const auto& item : split_list(v)) out.push_back(to_double(key, item));
    return out;
}

}  // namespace

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    int depth = 0;
    for (char c : text) {
        if (c == '[' || c == '(') ++depth;
        if (c == ']' || c == ')') --depth;
        if (c == ',' && depth == 0) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (depth != 0) throw std::invalid_argument("unbalanced brackets in list '" + text + "'");
    if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
    for (const auto& s : out)
        if (s.empty()) throw std::invalid_argument("empty item in list '" + text + "'");
    return out;
}

std::vector<double> logspace(double first, double last, std::size_t count) {
    if (!(first > 0.0) || !(last > 0.0)) throw std::invalid_argument("logspace needs positive endpoints");
    if (count == 0) throw std::invalid_argument("logspace needs count >= 1");
    if (count == 1) return {first};
    std::vector<double> out(count);
    const double a = std::log(first), b = std::log(last);
    for (std::size_t i = 0; i < count; ++i) out[i] = std::exp(a + (b - a) * double(i) / double(count - 1));
    out.front() = first;
    out.back() = last;
    return out;
}

void ExperimentConfig::validate() const {
    if (n < 1 || n_test < 1 || p < 1) throw std::invalid_argument("config: n, n_test and p must be positive");
    if (ratios.empty() || lambdas.empty() || activations.empty() || estimators.empty())
        throw std::invalid_argument("config: ratio, lambda, activation and estimator lists must be nonempty");
    for (double r : ratios)
        if (!(r > 0.0) || !std::isfinite(r)) throw std::invalid_argument("config: ratios must be positive");
    for (double l : lambdas)
        if (!(l > 0.0) || !std::isfinite(l)) throw std::invalid_argument("config: lambdas must be positive");
    for (const auto& a : activations) parse_activation(a).validate();
    ModelParams{alpha, sigma_noise, lambdas.front(), entry_law}.validate();
    if (trials == 0) throw std::invalid_argument("config: trials must be positive");
    if (threads == 0) throw std::invalid_argument("config: threads must be positive");
    if (classes == 0) throw std::invalid_argument("config: classes must be positive");
    if (!(target_s2 > 0.0)) throw std::invalid_argument("config: target_s2 must be positive");
    if (profile.rfind("csv:", 0) == 0 && profile_test.empty())
        throw std::invalid_argument("config: csv profile needs profile_test");
    if (profile != "synthetic" && profile != "constant" && profile.rfind("csv:", 0) != 0 &&
        profile.rfind("mixture:", 0) != 0)
        throw std::invalid_argument("config: unknown profile source '" + profile + "'");
    eta.validate();
    std::vector<Estimator> sorted = estimators;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw std::invalid_argument("config: duplicate estimator");
}

ExperimentConfig parse_config(std::istream& in) {
    ExperimentConfig c;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = lower(trim(line.substr(0, eq)));
        const std::string v = trim(line.substr(eq + 1));
        if (v.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty value");

        if (key == "n") c.n = to_integer(key, v);
        else if (key == "n_test") c.n_test = to_integer(key, v);
        else if (key == "p") c.p = to_integer(key, v);
        else if (key == "ratios") c.ratios = parse_ratios(key, v);
        else if (key == "lambdas") {
            c.lambdas.clear();
            for (const auto& s : split_list(v)) c.lambdas.push_back(to_double(key, s));
        } else if (key == "activations") c.activations = split_list(v);
        else if (key == "alpha") c.alpha = to_double(key, v);
        else if (key == "sigma_noise") c.sigma_noise = to_double(key, v);
        else if (key == "entry_law") c.entry_law = parse_entry_law(v);
        else if (key == "estimators") {
            c.estimators.clear();
            for (const auto& s : split_list(v)) c.estimators.push_back(parse_estimator(s));
        } else if (key == "trials") c.trials = std::size_t(to_integer(key, v));
        else if (key == "seed") c.seed = std::stoull(v);
        else if (key == "threads") c.threads = unsigned(to_integer(key, v));
        else if (key == "profile") c.profile = v;
        else if (key == "profile_test") c.profile_test = v;
        else if (key == "classes") c.classes = std::size_t(to_integer(key, v));
        else if (key == "target_s2") c.target_s2 = to_double(key, v);
        else if (key == "normalize") c.normalize = to_bool(key, v);
        else if (key == "chaos_convention") c.chaos_convention = parse_chaos_convention(v);
        else if (key == "c_eta") c.eta.c_eta = to_double(key, v);
        else if (key == "eta_exponent") c.eta.exponent = to_double(key, v);
        else if (key == "solver") {
            const std::string l = lower(v);
            if (l == "damped") c.solver = FixedPointMethod::damped;
            else if (l == "continuation") c.solver = FixedPointMethod::continuation;
            else throw std::invalid_argument("config: solver must be damped or continuation");
        } else if (key == "timing") c.timing = to_bool(key, v);
        else throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

ExperimentConfig parse_config_text(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    return parse_config(in);
}

std::vector<std::size_t> balanced_counts(std::size_t total, std::size_t classes) {
    if (classes == 0) throw std::invalid_argument("balanced_counts needs classes >= 1");
    std::vector<std::size_t> out(classes, total / classes);
    for (std::size_t k = 0; k < total % classes; ++k) ++out[k];
    return out;
}

namespace {

// drops empty classes so every block has at least one row
VarianceProfile mixture_rows(const std::vector<Eigen::VectorXd>& vectors, std::size_t rows) {
    const auto counts = balanced_counts(rows, vectors.size());
    std::vector<Eigen::VectorXd> v;
    std::vector<std::size_t> c;
    for (std::size_t k = 0; k < vectors.size(); ++k)
        if (counts[k] > 0) {
            v.push_back(vectors[k]);
            c.push_back(counts[k]);
        }
    return build_mixture_profile(v, c);
}

std::vector<Eigen::VectorXd> read_class_vectors(const std::string& path) {
    const VarianceProfile table = read_profile_csv_file(path);
    std::vector<Eigen::VectorXd> out;
    for (Eigen::Index k = 0; k < table.rows(); ++k) out.push_back(table.entries().row(k).transpose());
    return out;
}

}  // namespace

ProfilePair load_profiles(const ExperimentConfig& config) {
    ProfilePair out;
    const std::string& src = config.profile;
    if (src == "constant") {
        out.train = VarianceProfile::constant(config.n, config.p, config.target_s2);
        out.test = VarianceProfile::constant(config.n_test, config.p, config.target_s2);
        return out;
    }
    std::vector<Eigen::VectorXd> vectors;
    if (src == "synthetic") {
        const auto side = std::size_t(std::llround(std::sqrt(double(config.p))));
        if (Eigen::Index(side * side) != config.p)
            throw std::invalid_argument("synthetic profile needs p to be a perfect square");
        vectors = synthetic_class_vectors(config.classes, side);
    } else if (src.rfind("mixture:", 0) == 0) {
        vectors = read_class_vectors(src.substr(8));
    } else if (src.rfind("csv:", 0) == 0) {
        out.train = read_profile_csv_file(src.substr(4));
        std::string test = config.profile_test;
        if (test.rfind("csv:", 0) == 0) test = test.substr(4);
        out.test = read_profile_csv_file(test);
        if (out.train.cols() != out.test.cols())
            throw std::invalid_argument("train and test profiles disagree on p");
        if (config.normalize) {
            out.train = normalize_row_stochastic(out.train, config.target_s2);
            out.test = normalize_row_stochastic(out.test, config.target_s2);
        }
        return out;
    } else {
        throw std::invalid_argument("unknown profile source '" + src + "'");
    }
    out.train = mixture_rows(vectors, std::size_t(config.n));
    out.test = mixture_rows(vectors, std::size_t(config.n_test));
    if (config.normalize) {
        out.train = normalize_row_stochastic(out.train, config.target_s2);
        out.test = normalize_row_stochastic(out.test, config.target_s2);
    }
    return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::string diagnostics_text(const SquareReport& r) {
    std::ostringstream os;
    os << "closed_form=" << (r.closed_form ? 1 : 0) << ";theta_lin=" << format_number(r.theta_lin)
       << ";theta_chaos=" << format_number(r.theta_chaos) << ";s2=" << format_number(r.s2)
       << ";eta=" << format_number(r.eta) << ";residual=" << format_number(r.residual)
       << ";min_imag=" << format_number(r.min_imag);
    return os.str();
}

std::string error_status(const std::exception& e) {
    std::string msg = e.what();
    for (auto& ch : msg)
        if (ch == ',' || ch == '\n' || ch == '"') ch = ' ';
    return "error:" + msg;
}

}  // namespace

std::vector<SweepRow> run_sweep(const ExperimentConfig& config) {
    config.validate();
    return run_sweep(config, load_profiles(config));
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& config, const ProfilePair& profiles) {
    config.validate();
    const Eigen::Index n = profiles.train.rows();
    std::vector<ActivationSpec> acts;
    for (const auto& a : config.activations) acts.push_back(parse_activation(a));

    std::vector<Estimator> mc_est;
    bool want_square = false;
    for (Estimator e : config.estimators) {
        if (is_monte_carlo(e)) mc_est.push_back(e);
        else want_square = true;
    }
    std::sort(mc_est.begin(), mc_est.end());

    const std::size_t A = acts.size(), R = config.ratios.size(), L = config.lambdas.size();
    std::vector<Eigen::Index> ms(R);
    for (std::size_t r = 0; r < R; ++r) ms[r] = std::max<Eigen::Index>(1, std::llround(config.ratios[r] * double(n)));

    // Monte Carlo tasks share one sample across lambdas; square tasks are one solve each.
    struct Task {
        bool square;
        std::size_t a, r, l;
    };
    std::vector<Task> tasks;
    for (std::size_t a = 0; a < A; ++a)
        for (std::size_t r = 0; r < R; ++r) {
            if (!mc_est.empty()) tasks.push_back({false, a, r, 0});
            if (want_square)
                for (std::size_t l = 0; l < L; ++l) tasks.push_back({true, a, r, l});
        }

    // (a, l, r, estimator) -> row
    std::map<std::tuple<std::size_t, std::size_t, std::size_t, int>, SweepRow> slots;
    for (std::size_t a = 0; a < A; ++a)
        for (std::size_t l = 0; l < L; ++l)
            for (std::size_t r = 0; r < R; ++r)
                for (Estimator e : config.estimators) {
                    SweepRow row;
                    row.ratio = config.ratios[r];
                    row.lambda = config.lambdas[l];
                    row.activation = config.activations[a];
                    row.estimator = e;
                    row.m = ms[r];
                    slots[{a, l, r, int(e)}] = row;
                }
    std::vector<std::vector<SweepRow*>> task_rows(tasks.size());
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        const Task& k = tasks[t];
        if (k.square) task_rows[t].push_back(&slots[{k.a, k.l, k.r, int(Estimator::square)}]);
        else
            for (std::size_t l = 0; l < L; ++l)
                for (Estimator e : mc_est) task_rows[t].push_back(&slots[{k.a, l, k.r, int(e)}]);
    }

    parallel_for(tasks.size(), config.threads, [&](std::size_t t) {
        const Task& k = tasks[t];
        const ActivationSpec& h = acts[k.a];
        const auto start = Clock::now();
        std::string warn = h.is_odd() ? std::string() : std::string("warn:non-odd-activation");
        try {
            if (k.square) {
                SquareConfig sc;
                sc.activation = h;
                sc.lambda = config.lambdas[k.l];
                sc.alpha = config.alpha;
                sc.sigma_noise = config.sigma_noise;
                sc.chaos_convention = config.chaos_convention;
                sc.eta = config.eta;
                sc.solver.method = config.solver;
                const SquareReport rep = square_risks(sc, profiles.train, profiles.test, ms[k.r]);
                SweepRow& row = *task_rows[t][0];
                row.e_train = rep.risk.e_train;
                row.e_test = rep.risk.e_test;
                row.iterations = rep.iterations;
                row.imag_residue = rep.imag_residue;
                row.diagnostics = diagnostics_text(rep);
                if (!warn.empty()) row.status = warn;
            } else {
                McConfig mc;
                mc.profile = profiles.train;
                mc.profile_test = profiles.test;
                mc.m = ms[k.r];
                mc.activation = h;
                mc.lambdas = config.lambdas;
                mc.alpha = config.alpha;
                mc.sigma_noise = config.sigma_noise;
                mc.entry_law = config.entry_law;
                mc.estimators = mc_est;
                mc.trials = config.trials;
                mc.seed = config.seed;
                mc.stream = (std::uint64_t(k.a) << 32) | std::uint64_t(k.r);
                mc.threads = 1;
                mc.chaos_convention = config.chaos_convention;
                const auto reports = run_monte_carlo(mc);
                std::size_t idx = 0;
                for (std::size_t l = 0; l < L; ++l)
                    for (std::size_t e = 0; e < mc_est.size(); ++e) {
                        SweepRow& row = *task_rows[t][idx++];
                        const RiskReport& rr = reports[e][l];
                        row.e_train = rr.e_train;
                        row.e_test = rr.e_test;
                        row.std_err_train = rr.std_err_train;
                        row.std_err_test = rr.std_err_test;
                        if (!warn.empty() && row.estimator == Estimator::lozenge) row.status = warn;
                    }
            }
        } catch (const std::exception& e) {
            for (SweepRow* row : task_rows[t]) {
                row->status = error_status(e);
                row->e_train = row->e_test = std::nan("");
                row->std_err_train = row->std_err_test = std::nan("");
            }
        }
        const double ms_taken = config.timing ? elapsed_ms(start) : 0.0;
        for (SweepRow* row : task_rows[t]) row->wall_time_ms = ms_taken;
    });

    std::vector<SweepRow> out;
    out.reserve(slots.size());
    for (auto& [key, row] : slots) out.push_back(std::move(row));
    return out;
}

PeakResult detect_peak(const std::vector<double>& ratios, const std::vector<double>& values) {
    if (ratios.size() != values.size()) throw std::invalid_argument("detect_peak: size mismatch");
    if (ratios.size() < 5) throw std::invalid_argument("detect_peak needs at least 5 grid points");
    for (std::size_t i = 1; i < ratios.size(); ++i)
        if (!(ratios[i] > ratios[i - 1])) throw std::invalid_argument("detect_peak: ratios must ascend");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best] || std::isnan(values[best])) best = i;
    PeakResult out;
    out.index = best;
    out.ratio = ratios[best];
    out.interior = best > 0 && best + 1 < values.size();
    return out;
}

PeakResult detect_peak(const std::vector<SweepRow>& rows) {
    std::vector<SweepRow> sorted = rows;
    std::stable_sort(sorted.begin(), sorted.end(), [](const SweepRow& a, const SweepRow& b) { return a.ratio < b.ratio; });
    std::vector<double> r, v;
    for (const auto& row : sorted) {
        r.push_back(row.ratio);
        v.push_back(row.e_test);
    }
    return detect_peak(r, v);
}

std::vector<SweepRow> select_curve(const std::vector<SweepRow>& rows, const std::string& activation, double lambda,
                                   Estimator estimator) {
    std::vector<SweepRow> out;
    for (const auto& row : rows)
        if (row.activation == activation && row.lambda == lambda && row.estimator == estimator) out.push_back(row);
    std::stable_sort(out.begin(), out.end(), [](const SweepRow& a, const SweepRow& b) { return a.ratio < b.ratio; });
    return out;
}

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

void emit_csv(const std::vector<SweepRow>& rows, std::ostream& out) {
    out << "ratio,lambda,activation,estimator,m,e_train,e_test,std_err_train,std_err_test,wall_time_ms,iterations,"
           "imag_residue,status,diagnostics\n";
    for (const auto& r : rows) {
        out << format_number(r.ratio) << ',' << format_number(r.lambda) << ',' << csv_field(r.activation) << ','
            << to_string(r.estimator) << ',' << r.m << ',' << format_number(r.e_train) << ','
            << format_number(r.e_test) << ',' << format_number(r.std_err_train) << ','
            << format_number(r.std_err_test) << ',' << format_number(r.wall_time_ms) << ',' << r.iterations << ','
            << format_number(r.imag_residue) << ',' << csv_field(r.status) << ',' << csv_field(r.diagnostics)
            << '\n';
    }
}

void emit_csv(const std::vector<SweepRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    emit_csv(rows, out);
    if (!out) throw std::runtime_error("write failed for " + path);
}

void emit_risk_csv(const std::vector<SweepRow>& rows, Eigen::Index n, Eigen::Index p, std::ostream& out) {
    out << "estimator,n,m,p,lambda,activation,e_train,e_test,std_err_train,std_err_test\n";
    for (const auto& r : rows)
        out << to_string(r.estimator) << ',' << n << ',' << r.m << ',' << p << ',' << format_number(r.lambda) << ','
            << csv_field(r.activation) << ',' << format_number(r.e_train) << ',' << format_number(r.e_test) << ','
            << format_number(r.std_err_train) << ',' << format_number(r.std_err_test) << '\n';
}

namespace {

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace

std::string render_svg(const std::vector<SweepRow>& rows, const SvgAxes& axes) {
    if (rows.empty()) throw std::invalid_argument("render_svg: no rows to plot");

    // one curve per (activation, estimator[, lambda]); lambda joins the key when the rows mix several
    bool multi_lambda = false;
    for (const auto& r : rows)
        if (r.lambda != rows.front().lambda) multi_lambda = true;
    struct Curve {
        std::string label;
        bool monte_carlo;
        std::vector<std::pair<double, double>> pts;
    };
    std::vector<Curve> curves;
    std::map<std::tuple<std::string, int, double>, std::size_t> index;
    std::vector<std::string> act_order;
    for (const auto& r : rows) {
        const auto key = std::make_tuple(r.activation, int(r.estimator), multi_lambda ? r.lambda : 0.0);
        auto it = index.find(key);
        if (it == index.end()) {
            std::string label = r.activation + " " + to_string(r.estimator);
            if (multi_lambda) label += " lambda=" + format_number(r.lambda);
            it = index.emplace(key, curves.size()).first;
            curves.push_back({label, is_monte_carlo(r.estimator), {}});
        }
        if (std::find(act_order.begin(), act_order.end(), r.activation) == act_order.end())
            act_order.push_back(r.activation);
        const double y = axes.plot_train ? r.e_train : r.e_test;
        const double x = axes.log_x ? std::log10(r.ratio) : r.ratio;
        if (r.ok() && std::isfinite(y) && std::isfinite(x)) curves[it->second].pts.emplace_back(x, y);
    }
    for (auto& c : curves) std::sort(c.pts.begin(), c.pts.end());

    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& c : curves)
        for (const auto& [x, y] : c.pts) {
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x0 -= 0.5, x1 += 0.5;
    if (y1 == y0) y0 -= 0.5, y1 += 0.5;
    const double ypad = 0.05 * (y1 - y0);
    y0 = std::min(0.0, y0 - ypad);
    y1 += ypad;

    const double left = 70, right = 200, top = 40, bottom = 60;
    const double pw = axes.width - left - right, ph = axes.height - top - bottom;
    auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto sy = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << axes.width << "\" height=\"" << axes.height
       << "\" viewBox=\"0 0 " << axes.width << ' ' << axes.height << "\">\n";
    os << "<rect x=\"0\" y=\"0\" width=\"" << axes.width << "\" height=\"" << axes.height
       << "\" style=\"fill:#ffffff;stroke:none\"/>\n";
    os << "<text x=\"" << fmt(left + pw / 2) << "\" y=\"24\" style=\"font-family:sans-serif;font-size:16px;"
       << "text-anchor:middle\">" << xml_escape(axes.title) << "</text>\n";
    os << "<rect x=\"" << fmt(left) << "\" y=\"" << fmt(top) << "\" width=\"" << fmt(pw) << "\" height=\"" << fmt(ph)
       << "\" style=\"fill:none;stroke:#000000;stroke-width:1\"/>\n";

    // ticks
    const std::string tick_style = "font-family:sans-serif;font-size:11px;";
    if (axes.log_x) {
        for (int d = int(std::floor(x0)); d <= int(std::ceil(x1)); ++d)
            for (int mult = 1; mult <= 9; ++mult) {
                const double x = d + std::log10(double(mult));
                if (x < x0 - 1e-12 || x > x1 + 1e-12) continue;
                const double px = sx(x);
                os << "<line x1=\"" << fmt(px) << "\" y1=\"" << fmt(top + ph) << "\" x2=\"" << fmt(px) << "\" y2=\""
                   << fmt(top + ph + (mult == 1 ? 6 : 3)) << "\" style=\"stroke:#000000;stroke-width:1\"/>\n";
                if (mult == 1)
                    os << "<text x=\"" << fmt(px) << "\" y=\"" << fmt(top + ph + 20) << "\" style=\"" << tick_style
                       << "text-anchor:middle\">" << format_number(std::pow(10.0, d)) << "</text>\n";
            }
    } else {
        for (int i = 0; i <= 5; ++i) {
            const double x = x0 + (x1 - x0) * i / 5.0;
            os << "<text x=\"" << fmt(sx(x)) << "\" y=\"" << fmt(top + ph + 20) << "\" style=\"" << tick_style
               << "text-anchor:middle\">" << format_number(std::round(x * 1000) / 1000) << "</text>\n";
        }
    }
    for (int i = 0; i <= 5; ++i) {
        const double y = y0 + (y1 - y0) * i / 5.0;
        os << "<line x1=\"" << fmt(left - 5) << "\" y1=\"" << fmt(sy(y)) << "\" x2=\"" << fmt(left) << "\" y2=\""
           << fmt(sy(y)) << "\" style=\"stroke:#000000;stroke-width:1\"/>\n";
        os << "<text x=\"" << fmt(left - 8) << "\" y=\"" << fmt(sy(y) + 4) << "\" style=\"" << tick_style
           << "text-anchor:end\">" << format_number(std::round(y * 1000) / 1000) << "</text>\n";
    }
    os << "<text x=\"" << fmt(left + pw / 2) << "\" y=\"" << fmt(axes.height - 15.0)
       << "\" style=\"font-family:sans-serif;font-size:13px;text-anchor:middle\">" << xml_escape(axes.x_label)
       << (axes.log_x ? " (log scale)" : "") << "</text>\n";
    os << "<text x=\"18\" y=\"" << fmt(top + ph / 2) << "\" transform=\"rotate(-90 18 " << fmt(top + ph / 2)
       << ")\" style=\"font-family:sans-serif;font-size:13px;text-anchor:middle\">"
       << xml_escape(axes.plot_train ? std::string("E_train") : axes.y_label) << "</text>\n";

    for (std::size_t c = 0; c < curves.size(); ++c) {
        const Curve& cv = curves[c];
        const std::string color = kPalette[c % (sizeof kPalette / sizeof kPalette[0])];
        const std::string dash = cv.monte_carlo ? "stroke-dasharray:6,4;" : "";
        os << "<polyline points=\"";
        for (std::size_t i = 0; i < cv.pts.size(); ++i)
            os << (i ? " " : "") << fmt(sx(cv.pts[i].first)) << ',' << fmt(sy(cv.pts[i].second));
        os << "\" style=\"fill:none;stroke:" << color << ";stroke-width:2;" << dash << "\"/>\n";
        const double ly = top + 14 + 18.0 * double(c);
        const double lx = left + pw + 12;
        os << "<line x1=\"" << fmt(lx) << "\" y1=\"" << fmt(ly) << "\" x2=\"" << fmt(lx + 28) << "\" y2=\"" << fmt(ly)
           << "\" style=\"stroke:" << color << ";stroke-width:2;" << dash << "\"/>\n";
        os << "<text x=\"" << fmt(lx + 34) << "\" y=\"" << fmt(ly + 4) << "\" style=\"" << tick_style << "\">"
           << xml_escape(cv.label) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

void emit_svg(const std::vector<SweepRow>& rows, const std::string& path, const SvgAxes& axes) {
    const std::string text = render_svg(rows, axes);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path);
}

bool svg_well_formed(const std::string& text) {
    std::vector<std::string> stack;
    std::size_t roots = 0, pos = 0;
    while (true) {
        const auto lt = text.find('<', pos);
        if (lt == std::string::npos) break;
        if (stack.empty() && roots > 0 && text.find_first_not_of(" \t\r\n", pos) < lt) return false;
        const auto gt = text.find('>', lt);
        if (gt == std::string::npos) return false;
        const std::string tag = text.substr(lt + 1, gt - lt - 1);
        pos = gt + 1;
        if (tag.empty()) return false;
        if (tag[0] == '?' || tag[0] == '!') continue;  // prolog, comments
        if (tag[0] == '/') {
            const std::string name = trim(tag.substr(1));
            if (stack.empty() || stack.back() != name) return false;
            stack.pop_back();
            continue;
        }
        const bool self_closing = tag.back() == '/';
        const auto name_end = tag.find_first_of(" \t\r\n/");
        const std::string name = tag.substr(0, name_end);
        if (name.empty()) return false;
        if (stack.empty()) {
            if (++roots > 1) return false;
        }
        if (!self_closing) stack.push_back(name);
    }
    if (!stack.empty() || roots != 1) return false;
    return text.find_first_not_of(" \t\r\n", pos) == std::string::npos;
}

std::size_t count_polylines(const std::string& svg) {
    std::size_t count = 0, pos = 0;
    while ((pos = svg.find("<polyline", pos)) != std::string::npos) {
        ++count;
        pos += 9;
    }
    return count;
}

}  // namespace rfeq
