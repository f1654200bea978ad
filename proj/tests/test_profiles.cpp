#include "rfeq/profiles.hpp"
#include "rfeq/rng.hpp"

#include <doctest.h>

#include <sstream>

using namespace rfeq;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(Eigen::Index(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

std::vector<std::uint8_t> be32(std::uint32_t v) {
    return {std::uint8_t(v >> 24), std::uint8_t(v >> 16), std::uint8_t(v >> 8), std::uint8_t(v)};
}

std::vector<std::uint8_t> concat(std::initializer_list<std::vector<std::uint8_t>> parts) {
    std::vector<std::uint8_t> out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
}

// population variance, two passes
double two_pass_variance(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= double(v.size());
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return acc / double(v.size());
}

}  // namespace

TEST_CASE("mixture profile stacks class vectors") {
    const auto prof = build_mixture_profile({vec({1, 3}), vec({4, 4})}, {2, 2});
    Eigen::MatrixXd expect(4, 2);
    expect << 1, 3, 1, 3, 4, 4, 4, 4;
    CHECK(prof.entries() == expect);
    REQUIRE(prof.structure().has_value());
    CHECK(prof.structure()->num_classes() == 2);

    const auto one = build_mixture_profile({vec({2})}, {1});
    CHECK(one.rows() == 1);
    CHECK(one.cols() == 1);
    CHECK(one.entries()(0, 0) == 2.0);
}

TEST_CASE("mixture profile rejects bad input") {
    CHECK_THROWS(build_mixture_profile({}, {}));
    CHECK_THROWS(build_mixture_profile({vec({1, 2}), vec({1})}, {1, 1}));
    CHECK_THROWS(build_mixture_profile({vec({1, 2})}, {0}));
    CHECK_THROWS(build_mixture_profile({vec({1, 2})}, {1, 2}));
    CHECK_THROWS(build_mixture_profile({vec({-1, 2})}, {1}));
}

TEST_CASE("mixture profile has K distinct rows and idempotent materialization") {
    const auto vs = synthetic_class_vectors(10, 28);
    const auto prof = build_mixture_profile(vs, std::vector<std::size_t>(10, 30));
    CHECK(prof.rows() == 300);
    CHECK(prof.cols() == 784);
    std::vector<Eigen::VectorXd> distinct;
    for (Eigen::Index i = 0; i < prof.rows(); ++i) {
        const Eigen::VectorXd r = prof.entries().row(i).transpose();
        bool seen = false;
        for (const auto& d : distinct) seen = seen || d == r;
        if (!seen) distinct.push_back(r);
    }
    CHECK(distinct.size() == 10);
    const Eigen::MatrixXd a = prof.materialize(), b = prof.materialize();
    CHECK(a == b);
    CHECK(a == prof.entries());
}

TEST_CASE("normalize_row_stochastic examples") {
    Eigen::MatrixXd e(2, 2);
    e << 1, 3, 4, 4;
    const auto out = normalize_row_stochastic(VarianceProfile(e), 1.0);
    Eigen::MatrixXd expect(2, 2);
    expect << 0.5, 1.5, 1, 1;
    CHECK((out.entries() - expect).cwiseAbs().maxCoeff() < 1e-15);

    const auto again = normalize_row_stochastic(out, 1.0);
    CHECK((again.entries() - out.entries()).cwiseAbs().maxCoeff() <= 1e-15);

    Rng rng(7);
    Eigen::MatrixXd r(5, 7);
    for (Eigen::Index i = 0; i < 5; ++i)
        for (Eigen::Index j = 0; j < 7; ++j) r(i, j) = 0.1 + 3.0 * rng.uniform();
    const auto n1 = normalize_row_stochastic(VarianceProfile(r), 1.0);
    for (Eigen::Index i = 0; i < 5; ++i) CHECK(std::abs(n1.entries().row(i).mean() - 1.0) < 1e-12);

    // projection property
    const auto n2 = normalize_row_stochastic(n1, 1.0);
    CHECK((n2.entries() - n1.entries()).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(n1.is_row_stochastic(1.0, 1e-12));

    const auto t = normalize_row_stochastic(VarianceProfile(r), 2.5);
    for (Eigen::Index i = 0; i < 5; ++i) CHECK(std::abs(t.entries().row(i).mean() - 2.5) < 2.5e-12);
}

TEST_CASE("normalization rescales the class structure consistently") {
    const auto prof = build_mixture_profile({vec({1, 3}), vec({4, 4})}, {2, 1});
    const auto out = normalize_row_stochastic(prof, 1.0);
    REQUIRE(out.structure().has_value());
    CHECK(out.materialize() == out.entries());
    CHECK(std::abs(out.structure()->class_vectors[0].mean() - 1.0) < 1e-15);
}

TEST_CASE("normalize rejects a zero row") {
    Eigen::MatrixXd e(2, 2);
    e << 0, 0, 1, 1;
    CHECK_THROWS(normalize_row_stochastic(VarianceProfile(e), 1.0));
    CHECK_THROWS(normalize_row_stochastic(VarianceProfile(Eigen::MatrixXd::Ones(2, 2)), 0.0));
}

TEST_CASE("negative variances are rejected") {
    Eigen::MatrixXd e(1, 2);
    e << 1, -1;
    CHECK_THROWS(VarianceProfile{e});
}

TEST_CASE("IDX images parse a hand-built stream") {
    const auto bytes = concat({be32(0x00000803), be32(2), be32(2), be32(2), {1, 2, 3, 4, 250, 251, 252, 253}});
    const ImageSet img = parse_idx_images(bytes);
    CHECK(img.count == 2);
    CHECK(img.rows == 2);
    CHECK(img.cols == 2);
    CHECK(img.at(0, 0, 1) == 2);
    CHECK(img.at(0, 1, 0) == 3);
    CHECK(img.at(1, 1, 1) == 253);
    CHECK(encode_idx_images(img) == bytes);
}

TEST_CASE("IDX zero-image file and labels") {
    const ImageSet empty = parse_idx_images(concat({be32(0x00000803), be32(0), be32(28), be32(28)}));
    CHECK(empty.count == 0);
    CHECK(empty.pixels.empty());

    const auto lb = concat({be32(0x00000801), be32(3), {7, 0, 9}});
    const auto labels = parse_idx_labels(lb);
    CHECK(labels == std::vector<std::uint8_t>{7, 0, 9});
    CHECK(encode_idx_labels(labels) == lb);
}

TEST_CASE("IDX errors") {
    CHECK_THROWS(parse_idx_images(concat({be32(0x00000801), be32(1), be32(1), be32(1), {0}})));
    CHECK_THROWS(parse_idx_images(concat({be32(0x00000803), be32(2), be32(2), be32(2), {1, 2, 3}})));
    CHECK_THROWS(parse_idx_images(concat({be32(0x00000803), be32(0xFFFFFFFF), be32(0xFFFFFFFF), be32(0xFFFFFFFF)})));
    CHECK_THROWS(parse_idx_labels(concat({be32(0x00000803), be32(1), {0}})));
    CHECK_THROWS(parse_idx_labels(concat({be32(0x00000801), be32(5), {0, 1}})));
    CHECK_THROWS(parse_idx_images({0, 0, 8}));
}

TEST_CASE("IDX round trip of random images") {
    Rng rng(3);
    ImageSet img;
    img.count = 5;
    img.rows = 3;
    img.cols = 4;
    for (std::size_t i = 0; i < 60; ++i) img.pixels.push_back(std::uint8_t(rng.engine()() & 0xFF));
    const ImageSet back = parse_idx_images(encode_idx_images(img));
    CHECK(back.pixels == img.pixels);
    CHECK(back.rows == 3);
    CHECK(back.cols == 4);
}

TEST_CASE("class variance vectors") {
    ImageSet img;
    img.count = 4;
    img.rows = 1;
    img.cols = 2;
    // class 0: identical images; class 1: pixel 0 takes {0, 2}
    img.pixels = {5, 9, 5, 9, 0, 1, 2, 1};
    const std::vector<std::uint8_t> labels{0, 0, 1, 1};
    const ClassVariances cv = class_variance_vectors(img, labels, 1.0, 3);
    REQUIRE(cv.vectors.size() == 3);
    CHECK(cv.vectors[0].isZero(0.0));
    CHECK(cv.vectors[1](0) == doctest::Approx(1.0));
    CHECK(cv.vectors[1](1) == 0.0);
    CHECK(cv.warning());
    CHECK(cv.sparse_classes == std::vector<std::size_t>{2});
    CHECK(cv.counts == std::vector<std::size_t>{2, 2, 0});

    const ClassVariances scaled = class_variance_vectors(img, labels, 0.5, 2);
    CHECK(scaled.vectors[1](0) == doctest::Approx(0.5));
    CHECK_FALSE(scaled.warning());

    CHECK_THROWS(class_variance_vectors(img, {0, 0, 1, 3}, 1.0, 3));
    CHECK_THROWS(class_variance_vectors(img, {0, 0, 1}, 1.0, 3));
}

TEST_CASE("uniform pixels have the discrete uniform variance") {
    Rng rng(11);
    ImageSet img;
    img.count = 200;
    img.rows = 4;
    img.cols = 4;
    std::vector<std::uint8_t> labels;
    for (std::size_t i = 0; i < img.count; ++i) {
        labels.push_back(std::uint8_t(i % 2));
        for (std::size_t j = 0; j < 16; ++j) img.pixels.push_back(std::uint8_t(rng.engine()() & 0xFF));
    }
    const ClassVariances cv = class_variance_vectors(img, labels, 1.0, 2);
    const double expect = (256.0 * 256.0 - 1.0) / 12.0;
    for (const auto& v : cv.vectors)
        for (Eigen::Index j = 0; j < v.size(); ++j) CHECK(std::abs(v(j) / expect - 1.0) < 0.25);
    // averaging over pixels removes most of the sampling noise
    for (const auto& v : cv.vectors) CHECK(std::abs(v.mean() / expect - 1.0) < 0.05);
}

TEST_CASE("ingested mixture matches a scalar two-pass oracle") {
    Rng rng(5);
    const std::size_t K = 10, per = 12, side = 6;
    ImageSet img;
    img.count = K * per;
    img.rows = side;
    img.cols = side;
    std::vector<std::uint8_t> labels;
    for (std::size_t i = 0; i < img.count; ++i) {
        const std::size_t k = i % K;
        labels.push_back(std::uint8_t(k));
        for (std::size_t j = 0; j < side * side; ++j) {
            const double spread = 10.0 + 20.0 * double((j + k) % 7);
            const double v = std::clamp(128.0 + spread * rng.normal(), 0.0, 255.0);
            img.pixels.push_back(std::uint8_t(v));
        }
    }
    const double rescale = 1.0 / (255.0 * 255.0);
    const ClassVariances cv = class_variance_vectors(img, labels, rescale, K);
    const auto prof = build_mixture_profile(cv.vectors, std::vector<std::size_t>(K, 30));
    CHECK(prof.rows() == 300);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t j = 0; j < side * side; ++j) {
            std::vector<double> vals;
            for (std::size_t i = 0; i < img.count; ++i)
                if (labels[i] == k) vals.push_back(double(img.pixels[i * side * side + j]));
            const double oracle = two_pass_variance(vals) * rescale;
            for (std::size_t r = k * 30; r < (k + 1) * 30; r += 29)
                CHECK(std::abs(prof.entries()(Eigen::Index(r), Eigen::Index(j)) - oracle) <= 1e-12 * (1.0 + oracle));
        }
}

TEST_CASE("profile CSV round trip") {
    Rng rng(9);
    Eigen::MatrixXd e(4, 3);
    for (Eigen::Index i = 0; i < 4; ++i)
        for (Eigen::Index j = 0; j < 3; ++j) e(i, j) = std::exp(3.0 * rng.normal());
    e(0, 0) = 0.0;
    e(1, 1) = 1.0 / 3.0;
    std::stringstream ss;
    write_profile_csv(VarianceProfile(e), ss);
    CHECK(ss.str().rfind("# rows=4 cols=3\n", 0) == 0);
    const auto back = read_profile_csv(ss);
    CHECK(back.entries() == e);

    std::stringstream bad("# rows=2 cols=2\n1,2\n3\n");
    CHECK_THROWS(read_profile_csv(bad));
    std::stringstream neg("# rows=1 cols=2\n1,-2\n");
    CHECK_THROWS(read_profile_csv(neg));
}

TEST_CASE("dimensions") {
    Dimensions d{300, 150, 784, 100};
    CHECK(d.N() == 300 + 150 + 2 * 784);
    CHECK(d.phi_m() == doctest::Approx(2.0));
    CHECK(d.c_tilde() == doctest::Approx(1.0 / 3.0));
    CHECK(d.c_n() == doctest::Approx(std::sqrt(double(d.N()) / 300.0)));
    CHECK_THROWS((Dimensions{0, 1, 1, 1}.validate()));
}

TEST_CASE("profile summaries") {
    Eigen::MatrixXd e(2, 3);
    e << 1, 2, 3, 2, 2, 2;
    VarianceProfile prof(e);
    CHECK(prof.row_means()(0) == doctest::Approx(2.0));
    CHECK(prof.column_sums()(2) == doctest::Approx(5.0));
    CHECK(prof.is_row_stochastic(2.0));
    CHECK(prof.common_row_mean().has_value());
    CHECK(prof.std_devs()(0, 2) == doctest::Approx(std::sqrt(3.0)));
    CHECK(VarianceProfile::constant(3, 2, 4.0).entries().isConstant(4.0));
}
