#pragma once

#include "rfeq/detequiv.hpp"
#include "rfeq/gaussfun.hpp"
#include "rfeq/mc.hpp"
#include "rfeq/profiles.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace rfeq {

// Flat `key = value` text, `#` starts a comment. Lists are comma separated; brackets and
// parentheses protect inner commas (poly[0,1,0,1]). `ratios` also accepts logspace(a, b, k).
struct ExperimentConfig {
    Eigen::Index n = 300;
    Eigen::Index n_test = 100;
    Eigen::Index p = 784;  // synthetic and constant sources; file sources take p from the file
    std::vector<double> ratios{1.0};
    std::vector<double> lambdas{0.004};
    std::vector<std::string> activations{"cube"};
    double alpha = 1.0;
    double sigma_noise = 1.0;
    EntryLaw entry_law = EntryLaw::gaussian;
    std::vector<Estimator> estimators{Estimator::empirical, Estimator::square};
    std::size_t trials = 100;
    std::uint64_t seed = 1;
    unsigned threads = 1;

    // synthetic | constant | csv:<path> | mixture:<path>
    std::string profile = "synthetic";
    std::string profile_test;  // required with csv:, ignored otherwise
    std::size_t classes = 10;
    double target_s2 = 1.0;
    bool normalize = true;

    ChaosConvention chaos_convention = ChaosConvention::residual;
    EtaSchedule eta;
    FixedPointMethod solver = FixedPointMethod::continuation;
    bool timing = true;  // wall_time_ms column; zero when false

    void validate() const;
};

ExperimentConfig parse_config(std::istream& in);
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

std::vector<double> logspace(double first, double last, std::size_t count);
std::vector<std::string> split_list(const std::string& text);

struct ProfilePair {
    VarianceProfile train;
    VarianceProfile test;
};
ProfilePair load_profiles(const ExperimentConfig& config);
// split `total` rows over `classes` as evenly as possible, earlier classes first
std::vector<std::size_t> balanced_counts(std::size_t total, std::size_t classes);

struct SweepRow {
    double ratio = 0.0;
    double lambda = 0.0;
    std::string activation;
    Estimator estimator = Estimator::empirical;
    Eigen::Index m = 0;
    double e_train = 0.0;
    double e_test = 0.0;
    double std_err_train = 0.0;
    double std_err_test = 0.0;
    double wall_time_ms = 0.0;
    int iterations = 0;
    double imag_residue = 0.0;
    std::string status = "ok";
    std::string diagnostics;  // key=value pairs, square rows only
    bool ok() const { return status.rfind("error", 0) != 0; }
};

std::vector<SweepRow> run_sweep(const ExperimentConfig& config);
std::vector<SweepRow> run_sweep(const ExperimentConfig& config, const ProfilePair& profiles);

struct PeakResult {
    bool interior = false;
    double ratio = 0.0;
    std::size_t index = 0;
};
// ratios ascending; needs at least 5 points
PeakResult detect_peak(const std::vector<double>& ratios, const std::vector<double>& values);
// rows of a single curve (same activation, lambda, estimator), any order
PeakResult detect_peak(const std::vector<SweepRow>& rows);
// rows of one (activation, lambda, estimator) curve, sorted by ratio
std::vector<SweepRow> select_curve(const std::vector<SweepRow>& rows, const std::string& activation, double lambda,
                                   Estimator estimator);

std::string format_number(double v);  // 10 significant digits
void emit_csv(const std::vector<SweepRow>& rows, std::ostream& out);
void emit_csv(const std::vector<SweepRow>& rows, const std::string& path);
// estimator,n,m,p,lambda,activation,e_train,e_test,std_err_train,std_err_test
void emit_risk_csv(const std::vector<SweepRow>& rows, Eigen::Index n, Eigen::Index p, std::ostream& out);

struct SvgAxes {
    bool log_x = true;
    int width = 820;
    int height = 520;
    std::string title = "test risk";
    std::string x_label = "m/n";
    std::string y_label = "E_test";
    bool plot_train = false;
};
std::string render_svg(const std::vector<SweepRow>& rows, const SvgAxes& axes = {});
void emit_svg(const std::vector<SweepRow>& rows, const std::string& path, const SvgAxes& axes = {});
// single root element and matched tags
bool svg_well_formed(const std::string& text);
std::size_t count_polylines(const std::string& svg);

}  // namespace rfeq
