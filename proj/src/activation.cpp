#include "rfeq/activation.hpp"

#include <cctype>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rfeq {

namespace poly {

double eval(const std::vector<double>& c, double x) {
    double acc = 0.0;
    for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * x + *it;
    return acc;
}

std::vector<double> derivative(const std::vector<double>& c, int order) {
    std::vector<double> out = c;
    for (int k = 0; k < order; ++k) {
        if (out.size() <= 1) return {0.0};
        std::vector<double> d(out.size() - 1);
        for (std::size_t j = 1; j < out.size(); ++j) d[j - 1] = double(j) * out[j];
        out = std::move(d);
    }
    return out;
}

std::vector<double> multiply(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) return {};
    std::vector<double> out(a.size() + b.size() - 1, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
    return out;
}

std::vector<double> rescale(const std::vector<double>& c, double s) {
    std::vector<double> out(c.size());
    double sk = 1.0;
    for (std::size_t k = 0; k < c.size(); ++k, sk *= s) out[k] = c[k] * sk;
    return out;
}

std::vector<double> hermite(int ell) {
    std::vector<double> prev{1.0};
    if (ell == 0) return prev;
    std::vector<double> cur{0.0, 1.0};
    for (int l = 1; l < ell; ++l) {
        // He_{l+1} = x He_l - l He_{l-1}
        std::vector<double> next(cur.size() + 1, 0.0);
        for (std::size_t j = 0; j < cur.size(); ++j) next[j + 1] += cur[j];
        for (std::size_t j = 0; j < prev.size(); ++j) next[j] -= double(l) * prev[j];
        prev = std::move(cur);
        cur = std::move(next);
    }
    return cur;
}

}  // namespace poly

double ActivationSpec::operator()(double x) const {
    switch (kind) {
        case ActivationKind::polynomial: return poly::eval(coeffs, x);
        case ActivationKind::tanh_scaled: return std::tanh(scale * x);
        case ActivationKind::relu: return x > 0.0 ? x : 0.0;
        case ActivationKind::abs: return std::abs(x);
    }
    return 0.0;
}

double ActivationSpec::slope_neg() const { return kind == ActivationKind::abs ? -1.0 : 0.0; }
double ActivationSpec::slope_pos() const { return 1.0; }

bool ActivationSpec::is_odd() const {
    switch (kind) {
        case ActivationKind::polynomial:
            for (std::size_t k = 0; k < coeffs.size(); k += 2)
                if (coeffs[k] != 0.0) return false;
            return true;
        case ActivationKind::tanh_scaled: return true;
        default: return false;
    }
}

void ActivationSpec::validate() const {
    if (kind == ActivationKind::polynomial && coeffs.empty())
        throw std::invalid_argument("polynomial activation needs coefficients");
    if (quadrature_nodes < 64) throw std::invalid_argument("quadrature needs at least 64 nodes");
    if (series_cutoff < 2) throw std::invalid_argument("series cutoff must be >= 2");
    if (!(tail_tol > 0.0)) throw std::invalid_argument("tail tolerance must be positive");
}

namespace {

std::string strip(const std::string& s) {
    std::string out;
    for (char c : s)
        if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
    return out;
}

std::vector<double> parse_list(const std::string& body) {
    std::vector<double> out;
    std::stringstream ss(body);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        if (cell.empty()) throw std::invalid_argument("empty coefficient in poly[...]");
        std::size_t used = 0;
        out.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument("bad coefficient '" + cell + "'");
    }
    return out;
}

}  // namespace

ActivationSpec parse_activation(const std::string& text) {
    const std::string t = strip(text);
    ActivationSpec h;
    h.name = t;
    if (t == "identity") {
        h.coeffs = {0.0, 1.0};
    } else if (t == "cube") {
        h.coeffs = {0.0, 0.0, 0.0, 1.0};
    } else if (t == "hermite3") {
        h.coeffs = {0.0, -3.0, 0.0, 1.0};
    } else if (t == "relu") {
        h.kind = ActivationKind::relu;
    } else if (t == "abs") {
        h.kind = ActivationKind::abs;
    } else if (t.rfind("tanh(", 0) == 0 && t.back() == ')') {
        h.kind = ActivationKind::tanh_scaled;
        const std::string arg = t.substr(5, t.size() - 6);
        // accept "0.25", "1/4" and "x/4"
        const auto slash = arg.find('/');
        if (slash != std::string::npos) {
            const std::string num = arg.substr(0, slash);
            const double a = (num == "x" || num.empty()) ? 1.0 : std::stod(num);
            h.scale = a / std::stod(arg.substr(slash + 1));
        } else if (arg == "x") {
            h.scale = 1.0;
        } else {
            h.scale = std::stod(arg);
        }
    } else if (t.rfind("poly[", 0) == 0 && t.back() == ']') {
        h.coeffs = parse_list(t.substr(5, t.size() - 6));
    } else {
        throw std::invalid_argument("unknown activation '" + text + "'");
    }
    h.validate();
    return h;
}

}  // namespace rfeq
