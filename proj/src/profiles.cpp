#include "rfeq/profiles.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace rfeq {

std::vector<std::size_t> ClassStructure::row_class() const {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < counts.size(); ++k) out.insert(out.end(), counts[k], k);
    return out;
}

VarianceProfile::VarianceProfile(Eigen::MatrixXd entries) : entries_(std::move(entries)) {
    if (!entries_.allFinite()) throw std::invalid_argument("variance profile has non-finite entries");
    if (entries_.size() > 0 && entries_.minCoeff() < 0.0)
        throw std::invalid_argument("variance profile has negative entries");
}

VarianceProfile::VarianceProfile(Eigen::MatrixXd entries, ClassStructure structure)
    : VarianceProfile(std::move(entries)) {
    structure_ = std::move(structure);
}

VarianceProfile VarianceProfile::constant(Eigen::Index rows, Eigen::Index cols, double value) {
    return VarianceProfile(Eigen::MatrixXd::Constant(rows, cols, value));
}

Eigen::VectorXd VarianceProfile::row_means() const { return entries_.rowwise().mean(); }

Eigen::VectorXd VarianceProfile::column_sums() const { return entries_.colwise().sum().transpose(); }

std::optional<double> VarianceProfile::common_row_mean(double rel_tol) const {
    if (rows() == 0) return std::nullopt;
    const Eigen::VectorXd means = row_means();
    const double ref = means.mean();
    for (Eigen::Index i = 0; i < means.size(); ++i)
        if (std::abs(means(i) - ref) > rel_tol * std::max(1.0, std::abs(ref))) return std::nullopt;
    return ref;
}

bool VarianceProfile::is_row_stochastic(double s2, double rel_tol) const {
    const Eigen::VectorXd means = row_means();
    for (Eigen::Index i = 0; i < means.size(); ++i)
        if (std::abs(means(i) - s2) > rel_tol * std::max(1.0, s2)) return false;
    return true;
}

Eigen::MatrixXd VarianceProfile::materialize() const {
    if (!structure_) return entries_;
    const auto& s = *structure_;
    const Eigen::Index p = s.class_vectors.empty() ? 0 : s.class_vectors.front().size();
    Eigen::Index total = 0;
    for (auto c : s.counts) total += Eigen::Index(c);
    Eigen::MatrixXd out(total, p);
    Eigen::Index row = 0;
    for (std::size_t k = 0; k < s.counts.size(); ++k)
        for (std::size_t r = 0; r < s.counts[k]; ++r) out.row(row++) = s.class_vectors[k].transpose();
    return out;
}

void Dimensions::validate() const {
    if (n < 1 || m < 1 || p < 1 || n_test < 1) throw std::invalid_argument("all dimensions must be >= 1");
}

VarianceProfile build_mixture_profile(const std::vector<Eigen::VectorXd>& class_vectors,
                                      const std::vector<std::size_t>& class_counts) {
    if (class_vectors.empty()) throw std::invalid_argument("empty class list");
    if (class_vectors.size() != class_counts.size())
        throw std::invalid_argument("class vectors and counts differ in length");
    const Eigen::Index p = class_vectors.front().size();
    for (const auto& v : class_vectors) {
        if (v.size() != p) throw std::invalid_argument("class vectors have mismatched lengths");
        if (v.size() > 0 && v.minCoeff() < 0.0) throw std::invalid_argument("negative class variance");
    }
    for (auto c : class_counts)
        if (c < 1) throw std::invalid_argument("class counts must be >= 1");
    ClassStructure s{class_vectors, class_counts};
    VarianceProfile tmp(Eigen::MatrixXd(0, p), s);
    return VarianceProfile(tmp.materialize(), std::move(s));
}

VarianceProfile normalize_row_stochastic(const VarianceProfile& profile, double target) {
    if (!(target > 0.0)) throw std::invalid_argument("normalization target must be positive");
    const Eigen::Index p = profile.cols();
    Eigen::MatrixXd out = profile.entries();
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double sum = out.row(i).sum();
        if (!(sum > 0.0)) throw std::invalid_argument("row " + std::to_string(i) + " is all zeros");
        out.row(i) *= target * double(p) / sum;
    }
    if (!profile.structure()) return VarianceProfile(std::move(out));
    ClassStructure s = *profile.structure();
    for (auto& v : s.class_vectors) {
        const double sum = v.sum();
        if (!(sum > 0.0)) throw std::invalid_argument("class vector is all zeros");
        v *= target * double(p) / sum;
    }
    // keep entries and structure consistent bit for bit
    VarianceProfile tmp(Eigen::MatrixXd(0, p), s);
    return VarianceProfile(tmp.materialize(), std::move(s));
}

// ---- IDX ----

namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
    if (off + 4 > b.size()) throw std::runtime_error("truncated IDX header");
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) | (std::uint32_t(b[off + 2]) << 8) |
           std::uint32_t(b[off + 3]);
}

void write_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    b.push_back(std::uint8_t(v >> 24));
    b.push_back(std::uint8_t(v >> 16));
    b.push_back(std::uint8_t(v >> 8));
    b.push_back(std::uint8_t(v));
}

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

}  // namespace

ImageSet parse_idx_images(const std::vector<std::uint8_t>& bytes) {
    if (read_be32(bytes, 0) != kImagesMagic) throw std::runtime_error("wrong IDX image magic");
    ImageSet out;
    out.count = read_be32(bytes, 4);
    out.rows = read_be32(bytes, 8);
    out.cols = read_be32(bytes, 12);
    const std::size_t per = out.rows * out.cols;
    if (out.rows != 0 && per / out.rows != out.cols) throw std::runtime_error("IDX dimension overflow");
    if (per != 0 && out.count > std::numeric_limits<std::size_t>::max() / per)
        throw std::runtime_error("IDX dimension overflow");
    const std::size_t payload = out.count * per;
    if (bytes.size() < 16 + payload) throw std::runtime_error("truncated IDX image payload");
    out.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + std::ptrdiff_t(payload));
    return out;
}

std::vector<std::uint8_t> parse_idx_labels(const std::vector<std::uint8_t>& bytes) {
    if (read_be32(bytes, 0) != kLabelsMagic) throw std::runtime_error("wrong IDX label magic");
    const std::size_t count = read_be32(bytes, 4);
    if (bytes.size() < 8 + count) throw std::runtime_error("truncated IDX label payload");
    return {bytes.begin() + 8, bytes.begin() + 8 + std::ptrdiff_t(count)};
}

std::vector<std::uint8_t> encode_idx_images(const ImageSet& images) {
    std::vector<std::uint8_t> b;
    write_be32(b, kImagesMagic);
    write_be32(b, std::uint32_t(images.count));
    write_be32(b, std::uint32_t(images.rows));
    write_be32(b, std::uint32_t(images.cols));
    b.insert(b.end(), images.pixels.begin(), images.pixels.end());
    return b;
}

std::vector<std::uint8_t> encode_idx_labels(const std::vector<std::uint8_t>& labels) {
    std::vector<std::uint8_t> b;
    write_be32(b, kLabelsMagic);
    write_be32(b, std::uint32_t(labels.size()));
    b.insert(b.end(), labels.begin(), labels.end());
    return b;
}

std::vector<std::uint8_t> read_binary_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_binary_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

ClassVariances class_variance_vectors(const ImageSet& images, const std::vector<std::uint8_t>& labels,
                                      double rescale, std::size_t num_classes) {
    if (labels.size() != images.count) throw std::invalid_argument("image and label counts differ");
    const std::size_t p = images.pixels_per_image();
    ClassVariances out;
    out.vectors.assign(num_classes, Eigen::VectorXd::Zero(Eigen::Index(p)));
    out.counts.assign(num_classes, 0);
    std::vector<Eigen::VectorXd> mean(num_classes, Eigen::VectorXd::Zero(Eigen::Index(p)));
    for (std::size_t i = 0; i < images.count; ++i) {
        if (labels[i] >= num_classes) throw std::invalid_argument("label out of range");
        ++out.counts[labels[i]];
        const std::uint8_t* px = images.pixels.data() + i * p;
        for (std::size_t j = 0; j < p; ++j) mean[labels[i]](Eigen::Index(j)) += px[j];
    }
    for (std::size_t k = 0; k < num_classes; ++k)
        if (out.counts[k] > 0) mean[k] /= double(out.counts[k]);
    // two-pass population variance
    for (std::size_t i = 0; i < images.count; ++i) {
        const std::uint8_t* px = images.pixels.data() + i * p;
        auto& v = out.vectors[labels[i]];
        const auto& mu = mean[labels[i]];
        for (std::size_t j = 0; j < p; ++j) {
            const double d = px[j] - mu(Eigen::Index(j));
            v(Eigen::Index(j)) += d * d;
        }
    }
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (out.counts[k] < 2) {
            out.vectors[k].setZero();
            out.sparse_classes.push_back(k);
        } else {
            out.vectors[k] *= rescale / double(out.counts[k]);
        }
    }
    return out;
}

std::vector<Eigen::VectorXd> synthetic_class_vectors(std::size_t num_classes, std::size_t side) {
    const double c = 0.5 * double(side - 1);
    const double radius = 0.15 * double(side);
    std::vector<Eigen::VectorXd> out;
    for (std::size_t k = 0; k < num_classes; ++k) {
        const double angle = 2.0 * M_PI * double(k) / double(num_classes);
        const double cx = c + radius * std::cos(angle);
        const double cy = c + radius * std::sin(angle);
        const double w = 0.25 * double(side) + 0.5 * double(k % 3);
        Eigen::VectorXd v(Eigen::Index(side * side));
        for (std::size_t r = 0; r < side; ++r)
            for (std::size_t col = 0; col < side; ++col) {
                const double dx = double(col) - cx, dy = double(r) - cy;
                v(Eigen::Index(r * side + col)) = 0.15 + std::exp(-(dx * dx + dy * dy) / (2.0 * w * w));
            }
        out.push_back(v / v.mean());
    }
    return out;
}

void write_profile_csv(const VarianceProfile& profile, std::ostream& out) {
    out << "# rows=" << profile.rows() << " cols=" << profile.cols() << "\n";
    out << std::setprecision(17);
    const auto& e = profile.entries();
    for (Eigen::Index i = 0; i < e.rows(); ++i) {
        for (Eigen::Index j = 0; j < e.cols(); ++j) {
            if (j) out << ',';
            out << e(i, j);
        }
        out << "\n";
    }
}

VarianceProfile read_profile_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty profile CSV");
    long rows = -1, cols = -1;
    if (std::sscanf(line.c_str(), "# rows=%ld cols=%ld", &rows, &cols) != 2 || rows < 0 || cols < 0)
        throw std::runtime_error("bad profile CSV header: " + line);
    Eigen::MatrixXd e(rows, cols);
    for (long i = 0; i < rows; ++i) {
        if (!std::getline(in, line)) throw std::runtime_error("profile CSV truncated");
        std::stringstream ss(line);
        std::string cell;
        long j = 0;
        while (std::getline(ss, cell, ',')) {
            if (j >= cols) throw std::runtime_error("profile CSV row too long");
            e(i, j++) = std::stod(cell);
        }
        if (j != cols) throw std::runtime_error("profile CSV row too short");
    }
    return VarianceProfile(std::move(e));
}

void write_profile_csv_file(const VarianceProfile& profile, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    write_profile_csv(profile, out);
}

VarianceProfile read_profile_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return read_profile_csv(in);
}

}  // namespace rfeq
