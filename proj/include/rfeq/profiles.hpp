#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace rfeq {

// Class-block layout of a mixture profile: row block k repeats class_vectors[k] counts[k] times.
struct ClassStructure {
    std::vector<Eigen::VectorXd> class_vectors;
    std::vector<std::size_t> counts;

    std::size_t num_classes() const { return counts.size(); }
    std::vector<std::size_t> row_class() const;
};

// n x p matrix of entrywise variances gamma_ij^2.
class VarianceProfile {
public:
    VarianceProfile() = default;
    explicit VarianceProfile(Eigen::MatrixXd entries);
    VarianceProfile(Eigen::MatrixXd entries, ClassStructure structure);

    static VarianceProfile constant(Eigen::Index rows, Eigen::Index cols, double value);

    Eigen::Index rows() const { return entries_.rows(); }
    Eigen::Index cols() const { return entries_.cols(); }
    const Eigen::MatrixXd& entries() const { return entries_; }
    const std::optional<ClassStructure>& structure() const { return structure_; }

    // standard deviations gamma_ij, computed on demand
    Eigen::MatrixXd std_devs() const { return entries_.cwiseSqrt(); }
    // (1/p) sum_j gamma_ij^2
    Eigen::VectorXd row_means() const;
    // column sums, the diagonal of deg(Gamma^T)
    Eigen::VectorXd column_sums() const;
    bool is_row_stochastic(double s2, double rel_tol = 1e-8) const;
    // common row mean when all rows agree within rel_tol
    std::optional<double> common_row_mean(double rel_tol = 1e-8) const;

    // rebuild entries from the class structure (bit-identical on repeated calls)
    Eigen::MatrixXd materialize() const;

private:
    Eigen::MatrixXd entries_;
    std::optional<ClassStructure> structure_;
};

struct Dimensions {
    Eigen::Index n = 1;
    Eigen::Index m = 1;
    Eigen::Index p = 1;
    Eigen::Index n_test = 1;

    Eigen::Index N() const { return n + m + 2 * p; }
    double phi_p() const { return double(n) / double(p); }
    double phi_m() const { return double(n) / double(m); }
    double c_tilde() const { return double(n_test) / double(n); }
    double c_n() const { return std::sqrt(double(N()) / double(n)); }
    double c_p() const { return std::sqrt(double(N()) / double(p)); }
    double c_m() const { return std::sqrt(double(N()) / double(m)); }
    void validate() const;
};

VarianceProfile build_mixture_profile(const std::vector<Eigen::VectorXd>& class_vectors,
                                      const std::vector<std::size_t>& class_counts);

VarianceProfile normalize_row_stochastic(const VarianceProfile& profile, double target = 1.0);

// IDX files (big-endian headers)
struct ImageSet {
    std::size_t count = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> pixels;  // count*rows*cols, row-major per image

    std::size_t pixels_per_image() const { return rows * cols; }
    std::uint8_t at(std::size_t image, std::size_t r, std::size_t c) const {
        return pixels[image * rows * cols + r * cols + c];
    }
};

ImageSet parse_idx_images(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> parse_idx_labels(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_idx_images(const ImageSet& images);
std::vector<std::uint8_t> encode_idx_labels(const std::vector<std::uint8_t>& labels);
std::vector<std::uint8_t> read_binary_file(const std::string& path);
void write_binary_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

struct ClassVariances {
    std::vector<Eigen::VectorXd> vectors;
    std::vector<std::size_t> counts;
    // classes with fewer than two images; their vectors are zero
    std::vector<std::size_t> sparse_classes;
    bool warning() const { return !sparse_classes.empty(); }
};

ClassVariances class_variance_vectors(const ImageSet& images, const std::vector<std::uint8_t>& labels,
                                      double rescale, std::size_t num_classes = 10);

// Smooth positive class patterns on a side x side grid, each with mean 1.
std::vector<Eigen::VectorXd> synthetic_class_vectors(std::size_t num_classes = 10, std::size_t side = 28);

void write_profile_csv(const VarianceProfile& profile, std::ostream& out);
VarianceProfile read_profile_csv(std::istream& in);
void write_profile_csv_file(const VarianceProfile& profile, const std::string& path);
VarianceProfile read_profile_csv_file(const std::string& path);

}  // namespace rfeq
