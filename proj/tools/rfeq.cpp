#include "rfeq/bench.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

using namespace rfeq;

namespace {

struct Globals {
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::string out;
    std::string svg;
};

// writes to `path`, or stdout when empty or "-"
class Output {
public:
    explicit Output(const std::string& path) {
        if (!path.empty() && path != "-") {
            file_ = std::make_unique<std::ofstream>(path);
            if (!*file_) throw std::runtime_error("cannot write " + path);
        }
    }
    std::ostream& stream() { return file_ ? *file_ : std::cout; }

private:
    std::unique_ptr<std::ofstream> file_;
};

ExperimentConfig load_config(const std::string& path, const Globals& g, std::optional<std::size_t> trials) {
    ExperimentConfig c = path.empty() ? ExperimentConfig{} : parse_config_file(path);
    if (g.seed) c.seed = *g.seed;
    if (g.threads) c.threads = *g.threads;
    if (trials) c.trials = *trials;
    c.validate();
    return c;
}

int report_status(const std::vector<SweepRow>& rows) {
    int failed = 0;
    for (const auto& r : rows)
        if (!r.ok()) {
            ++failed;
            std::cerr << "row " << r.activation << " ratio=" << format_number(r.ratio)
                      << " lambda=" << format_number(r.lambda) << " " << to_string(r.estimator) << ": " << r.status
                      << "\n";
        }
    return failed ? 2 : 0;
}

std::vector<SweepRow> run_only(ExperimentConfig c, const std::vector<Estimator>& keep) {
    std::vector<Estimator> est;
    for (Estimator e : c.estimators)
        if (std::find(keep.begin(), keep.end(), e) != keep.end()) est.push_back(e);
    if (est.empty()) est.push_back(keep.front());
    c.estimators = est;
    return run_sweep(c);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"random-features ridge regression risks: Monte Carlo, surrogate and deterministic equivalents"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "64-bit seed, overrides the config");
    app.add_option("--threads", g.threads, "worker threads, overrides the config")->check(CLI::PositiveNumber);
    app.add_option("--out", g.out, "output CSV path (stdout when omitted)");
    app.add_option("--svg", g.svg, "SVG output path");

    std::string config_path;
    std::optional<std::size_t> trials;
    bool plot_train = false;

    auto* sweep = app.add_subcommand("sweep", "run all configured estimators over the ratio/lambda/activation grid");
    sweep->add_option("--config", config_path, "config file")->required()->check(CLI::ExistingFile);
    sweep->add_option("--trials", trials, "Monte Carlo trials, overrides the config");
    sweep->add_flag("--plot-train", plot_train, "plot E_train instead of E_test");

    auto* mc = app.add_subcommand("mc-risk", "Monte Carlo risks (empirical and trace_form)");
    mc->add_option("--config", config_path, "config file")->required()->check(CLI::ExistingFile);
    mc->add_option("--trials", trials, "Monte Carlo trials, overrides the config");

    std::string diagnostics_path;
    auto* det = app.add_subcommand("det-risk", "deterministic-equivalent risks");
    det->add_option("--config", config_path, "config file")->required()->check(CLI::ExistingFile);
    det->add_option("--diagnostics", diagnostics_path, "key=value solver diagnostics (\"-\" for stderr)");

    auto* loz = app.add_subcommand("lozenge-risk", "linear-plus-chaos surrogate Monte Carlo risks");
    loz->add_option("--config", config_path, "config file")->required()->check(CLI::ExistingFile);
    loz->add_option("--trials", trials, "Monte Carlo trials, overrides the config");

    for (auto* sub : {sweep, mc, det, loz}) {
        sub->add_option("--seed", g.seed, "64-bit seed");
        sub->add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--out", g.out, "output CSV path");
        sub->add_option("--svg", g.svg, "SVG output path");
    }

    auto* prof = app.add_subcommand("profile", "variance profile tools");
    prof->require_subcommand(1);

    std::string vectors_path, in_path, images_path, labels_path;
    std::size_t rows = 0, classes = 10, side = 28;
    double rescale = 1.0, target = 1.0;
    bool normalize = false;
    auto* mix = prof->add_subcommand("build-mixture", "class-block profile from class variance vectors");
    mix->add_option("--vectors", vectors_path, "class vectors CSV (one class per row); synthetic when omitted");
    mix->add_option("--rows", rows, "number of rows, split evenly over classes")->required();
    mix->add_option("--classes", classes, "number of synthetic classes");
    mix->add_option("--side", side, "synthetic image side, p = side^2");
    mix->add_flag("--normalize", normalize, "normalize rows to mean --target");
    mix->add_option("--target", target, "row mean after normalization");
    mix->add_option("--out", g.out, "output CSV path");

    auto* idx = prof->add_subcommand("from-idx", "per-class pixel variances from IDX images and labels");
    idx->add_option("--images", images_path, "IDX3 image file")->required()->check(CLI::ExistingFile);
    idx->add_option("--labels", labels_path, "IDX1 label file")->required()->check(CLI::ExistingFile);
    idx->add_option("--rescale", rescale, "pixel rescaling applied before the variance")->required();
    idx->add_option("--classes", classes, "number of classes");
    idx->add_option("--out", g.out, "output class vectors CSV");

    auto* norm = prof->add_subcommand("normalize", "rescale every row to mean --target");
    norm->add_option("--in", in_path, "profile CSV")->required()->check(CLI::ExistingFile);
    norm->add_option("--target", target, "row mean")->required();
    norm->add_option("--out", g.out, "output CSV path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sweep->parsed()) {
            const ExperimentConfig c = load_config(config_path, g, trials);
            const auto result = run_sweep(c);
            {
                Output out(g.out);
                emit_csv(result, out.stream());
            }
            if (!g.svg.empty()) {
                SvgAxes axes;
                axes.plot_train = plot_train;
                emit_svg(result, g.svg, axes);
            }
            return report_status(result);
        }
        if (mc->parsed() || loz->parsed()) {
            const ExperimentConfig c = load_config(config_path, g, trials);
            const auto result = mc->parsed() ? run_only(c, {Estimator::empirical, Estimator::trace_form})
                                             : run_only(c, {Estimator::lozenge});
            const ProfilePair pp = load_profiles(c);
            {
                Output out(g.out);
                emit_risk_csv(result, pp.train.rows(), pp.train.cols(), out.stream());
            }
            if (!g.svg.empty()) emit_svg(result, g.svg);
            return report_status(result);
        }
        if (det->parsed()) {
            const ExperimentConfig c = load_config(config_path, g, std::nullopt);
            const auto result = run_only(c, {Estimator::square});
            const ProfilePair pp = load_profiles(c);
            {
                Output out(g.out);
                emit_risk_csv(result, pp.train.rows(), pp.train.cols(), out.stream());
            }
            if (!diagnostics_path.empty()) {
                std::unique_ptr<std::ofstream> file;
                if (diagnostics_path != "-") {
                    file = std::make_unique<std::ofstream>(diagnostics_path);
                    if (!*file) throw std::runtime_error("cannot write " + diagnostics_path);
                }
                std::ostream& d = file ? *file : std::cerr;
                for (const auto& r : result) {
                    std::string extra = r.diagnostics;
                    for (auto& ch : extra)
                        if (ch == ';') ch = ' ';
                    d << "activation=" << r.activation << " m=" << r.m << " lambda=" << format_number(r.lambda)
                      << " status=" << r.status << " iterations=" << r.iterations
                      << " imag_residue=" << format_number(r.imag_residue) << (extra.empty() ? "" : " ") << extra
                      << "\n";
                }
            }
            if (!g.svg.empty()) emit_svg(result, g.svg);
            return report_status(result);
        }
        if (mix->parsed()) {
            std::vector<Eigen::VectorXd> vectors;
            if (vectors_path.empty()) {
                vectors = synthetic_class_vectors(classes, side);
            } else {
                const VarianceProfile table = read_profile_csv_file(vectors_path);
                for (Eigen::Index k = 0; k < table.rows(); ++k) vectors.push_back(table.entries().row(k).transpose());
            }
            auto counts = balanced_counts(rows, vectors.size());
            std::vector<Eigen::VectorXd> used;
            std::vector<std::size_t> used_counts;
            for (std::size_t k = 0; k < vectors.size(); ++k)
                if (counts[k]) {
                    used.push_back(vectors[k]);
                    used_counts.push_back(counts[k]);
                }
            VarianceProfile profile = build_mixture_profile(used, used_counts);
            if (normalize) profile = normalize_row_stochastic(profile, target);
            Output out(g.out);
            write_profile_csv(profile, out.stream());
            return 0;
        }
        if (idx->parsed()) {
            const ImageSet images = parse_idx_images(read_binary_file(images_path));
            const auto labels = parse_idx_labels(read_binary_file(labels_path));
            const ClassVariances cv = class_variance_vectors(images, labels, rescale, classes);
            for (std::size_t k : cv.sparse_classes)
                std::cerr << "warning: class " << k << " has fewer than two images, variance vector set to zero\n";
            Eigen::MatrixXd table(Eigen::Index(cv.vectors.size()), Eigen::Index(images.pixels_per_image()));
            for (std::size_t k = 0; k < cv.vectors.size(); ++k) table.row(Eigen::Index(k)) = cv.vectors[k].transpose();
            Output out(g.out);
            write_profile_csv(VarianceProfile(table), out.stream());
            return 0;
        }
        if (norm->parsed()) {
            const VarianceProfile profile = normalize_row_stochastic(read_profile_csv_file(in_path), target);
            Output out(g.out);
            write_profile_csv(profile, out.stream());
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
