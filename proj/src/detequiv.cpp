#include "rfeq/detequiv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

namespace rfeq {

namespace {

constexpr double kSingular = 1e-300;

// real matrix times complex vector without a complex copy of the matrix
Eigen::VectorXcd mul_real(const Eigen::MatrixXd& A, const Eigen::VectorXcd& v) {
    Eigen::VectorXcd out(A.rows());
    out.real() = A * v.real();
    out.imag() = A * v.imag();
    return out;
}

Eigen::VectorXcd mul_real_t(const Eigen::MatrixXd& A, const Eigen::VectorXcd& v) {
    Eigen::VectorXcd out(A.cols());
    out.real() = A.transpose() * v.real();
    out.imag() = A.transpose() * v.imag();
    return out;
}

struct Offsets {
    Eigen::Index n, m, p;
    Eigen::Index g2() const { return n; }
    Eigen::Index g3() const { return n + m; }
    Eigen::Index g4() const { return n + m + p; }
};

Offsets offsets(const Dimensions& d) { return {d.n, d.m, d.p}; }

double sup_norm(const Eigen::VectorXcd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

// ---------------------------------------------------------------- profile

Eigen::VectorXcd LinearizationProfile::column_weighted_mean(const Eigen::VectorXcd& v) const {
    const double n = double(dims.n);
    if (use_classes) {
        Eigen::VectorXcd per_class = Eigen::VectorXcd::Zero(class_rows.rows());
        for (Eigen::Index i = 0; i < v.size(); ++i) per_class(Eigen::Index(row_class[i])) += v(i);
        return mul_real_t(class_rows, per_class) / n;
    }
    return mul_real_t(profile_x.entries(), v) / n;
}

Eigen::MatrixXd LinearizationProfile::dense() const {
    const Offsets o = offsets(dims);
    const double cn2 = double(N()) / double(dims.n), cp2 = double(N()) / double(dims.p);
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(N(), N());
    const Eigen::MatrixXd gx = profile_x.entries();
    for (Eigen::Index i = 0; i < dims.n; ++i) {
        const double dc2 = d_chaos(i) * d_chaos(i), dl2 = d_lin(i) * d_lin(i);
        for (Eigen::Index j = 0; j < dims.m; ++j) G(i, o.g2() + j) = G(o.g2() + j, i) = cn2 * dc2;
        for (Eigen::Index k = 0; k < dims.p; ++k) G(i, o.g3() + k) = G(o.g3() + k, i) = cn2 * dl2 * gx(i, k);
    }
    G.block(o.g2(), o.g4(), dims.m, dims.p).setConstant(cp2);
    G.block(o.g4(), o.g2(), dims.p, dims.m).setConstant(cp2);
    return G;
}

Eigen::MatrixXd LinearizationProfile::deformation() const {
    const Offsets o = offsets(dims);
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(N(), N());
    C.block(o.g2(), o.g2(), dims.m, dims.m).diagonal().setConstant(-1.0);
    C.block(o.g3(), o.g4(), dims.p, dims.p).diagonal().setConstant(-1.0);
    C.block(o.g4(), o.g3(), dims.p, dims.p).diagonal().setConstant(-1.0);
    return C;
}

LinearizationProfile build_linearization_profile(const VarianceProfile& profile_x, const Eigen::VectorXd& d_lin,
                                                 const Eigen::VectorXd& d_chaos, const Dimensions& dims) {
    dims.validate();
    if (profile_x.rows() != dims.n || profile_x.cols() != dims.p)
        throw std::invalid_argument("linearization: profile is not n x p");
    if (d_lin.size() != dims.n || d_chaos.size() != dims.n)
        throw std::invalid_argument("linearization: diagonals must have length n");
    LinearizationProfile lp;
    lp.dims = dims;
    lp.profile_x = profile_x;
    lp.d_lin = d_lin;
    lp.d_chaos = d_chaos;

    const auto& st = profile_x.structure();
    if (st && st->num_classes() > 0) {
        lp.use_classes = true;
        lp.class_rows.resize(Eigen::Index(st->num_classes()), dims.p);
        for (std::size_t c = 0; c < st->num_classes(); ++c) lp.class_rows.row(Eigen::Index(c)) = st->class_vectors[c].transpose();
        lp.row_class = st->row_class();
    } else {
        lp.lin_block = d_lin.array().square().matrix().asDiagonal() * profile_x.entries() / double(dims.n);
    }

    const double cn2 = double(dims.N()) / double(dims.n), cp2 = double(dims.N()) / double(dims.p);
    double lin_max = 0.0;
    const Eigen::VectorXd row_max = profile_x.entries().rowwise().maxCoeff();
    for (Eigen::Index i = 0; i < dims.n; ++i) lin_max = std::max(lin_max, d_lin(i) * d_lin(i) * row_max(i));
    lp.gamma_max = std::max({cn2 * d_chaos.array().square().maxCoeff(), cn2 * lin_max, cp2});
    return lp;
}

// ---------------------------------------------------------------- state

Eigen::VectorXcd SquareState::diagonal() const {
    Eigen::VectorXcd out(q1.size() + q2.size() + q3.size() + q4.size());
    out << q1, q2, q3, q4;
    return out;
}

Eigen::MatrixXcd SquareState::assemble() const {
    const Eigen::Index n = q1.size(), m = q2.size(), p = q3.size();
    Eigen::MatrixXcd M = Eigen::MatrixXcd::Zero(n + m + 2 * p, n + m + 2 * p);
    M.diagonal() = diagonal();
    M.block(n + m, n + m + p, p, p).diagonal() = q34;
    M.block(n + m + p, n + m, p, p).diagonal() = q43;
    return M;
}

double SquareState::min_imag() const {
    double lo = std::numeric_limits<double>::infinity();
    for (const auto* v : {&q1, &q2, &q3, &q4})
        if (v->size()) lo = std::min(lo, v->imag().minCoeff());
    return lo;
}

double sup_distance(const SquareState& a, const SquareState& b) {
    return std::max({sup_norm(a.q1 - b.q1), sup_norm(a.q2 - b.q2), sup_norm(a.q3 - b.q3), sup_norm(a.q4 - b.q4),
                     sup_norm(a.q34 - b.q34), sup_norm(a.q43 - b.q43)});
}

SquareState block_diagonals(const Eigen::MatrixXcd& M, const Dimensions& dims) {
    const Offsets o = offsets(dims);
    if (M.rows() != dims.N() || M.cols() != dims.N()) throw std::invalid_argument("block_diagonals: size mismatch");
    SquareState s;
    s.q1 = M.block(0, 0, dims.n, dims.n).diagonal();
    s.q2 = M.block(o.g2(), o.g2(), dims.m, dims.m).diagonal();
    s.q3 = M.block(o.g3(), o.g3(), dims.p, dims.p).diagonal();
    s.q4 = M.block(o.g4(), o.g4(), dims.p, dims.p).diagonal();
    s.q34 = M.block(o.g3(), o.g4(), dims.p, dims.p).diagonal();
    s.q43 = M.block(o.g4(), o.g3(), dims.p, dims.p).diagonal();
    return s;
}

Eigen::VectorXcd spectral_shift(const Dimensions& dims, double lambda, double eta) {
    Eigen::VectorXcd L = Eigen::VectorXcd::Constant(dims.N(), cplx(0.0, eta));
    L.head(dims.n).array() += -lambda;
    return L;
}

// ---------------------------------------------------------------- R and inverse

Eigen::VectorXcd r_transform_apply(const LinearizationProfile& lp, const Eigen::VectorXcd& q) {
    const Dimensions& d = lp.dims;
    const Offsets o = offsets(d);
    if (q.size() != d.N()) throw std::invalid_argument("r_transform_apply: expected an N-vector");
    const double n = double(d.n), p = double(d.p);
    const auto q1 = q.segment(0, d.n);
    const auto q2 = q.segment(o.g2(), d.m);
    const Eigen::VectorXcd q3 = q.segment(o.g3(), d.p);
    const auto q4 = q.segment(o.g4(), d.p);
    const Eigen::ArrayXd dc2 = lp.d_chaos.array().square(), dl2 = lp.d_lin.array().square();

    Eigen::VectorXcd r(d.N());
    const cplx sum_q2 = q2.sum();
    const cplx r2 = (dc2.cast<cplx>() * q1.array()).sum() / n + q4.sum() / p;
    Eigen::VectorXcd lin_q3, lin_q1;
    if (lp.use_classes) {
        const Eigen::VectorXcd per_class_q3 = mul_real(lp.class_rows, q3);
        lin_q3.resize(d.n);
        Eigen::VectorXcd weighted = Eigen::VectorXcd::Zero(lp.class_rows.rows());
        for (Eigen::Index i = 0; i < d.n; ++i) {
            const Eigen::Index c = Eigen::Index(lp.row_class[i]);
            lin_q3(i) = dl2(i) / n * per_class_q3(c);
            weighted(c) += dl2(i) * q1(i);
        }
        lin_q1 = mul_real_t(lp.class_rows, weighted) / n;
    } else {
        lin_q3 = mul_real(lp.lin_block, q3);
        lin_q1 = mul_real_t(lp.lin_block, q1);
    }
    r.segment(0, d.n) = (dc2 / n).cast<cplx>() * sum_q2 + lin_q3.array();
    r.segment(o.g2(), d.m).setConstant(r2);
    r.segment(o.g3(), d.p) = lin_q1;
    r.segment(o.g4(), d.p).setConstant(sum_q2 / p);
    return r;
}

Eigen::VectorXcd r_transform_dense(const LinearizationProfile& lp, const Eigen::VectorXcd& q) {
    return mul_real(lp.dense(), q) / double(lp.N());
}

SquareState structured_block_inverse(const LinearizationProfile& lp, const Eigen::VectorXcd& Lambda,
                                     const Eigen::VectorXcd& r) {
    const Dimensions& d = lp.dims;
    const Offsets o = offsets(d);
    if (Lambda.size() != d.N() || r.size() != d.N()) throw std::invalid_argument("block inverse: expected N-vectors");
    auto fail = [](const char* what, Eigen::Index idx) {
        std::ostringstream msg;
        msg << "singular " << what << " at index " << idx;
        throw std::runtime_error(msg.str());
    };
    SquareState s;
    s.q1.resize(d.n);
    s.q2.resize(d.m);
    s.q3.resize(d.p);
    s.q4.resize(d.p);
    s.q34.resize(d.p);
    for (Eigen::Index i = 0; i < d.n; ++i) {
        const cplx den = -Lambda(i) - r(i);
        if (std::abs(den) < kSingular) fail("group-1 entry", i);
        s.q1(i) = 1.0 / den;
    }
    for (Eigen::Index j = 0; j < d.m; ++j) {
        const cplx den = -1.0 - Lambda(o.g2() + j) - r(o.g2() + j);
        if (std::abs(den) < kSingular) fail("group-2 entry", j);
        s.q2(j) = 1.0 / den;
    }
    for (Eigen::Index k = 0; k < d.p; ++k) {
        // inverse of [[a, -1], [-1, b]]
        const cplx a = -Lambda(o.g3() + k) - r(o.g3() + k);
        const cplx b = -Lambda(o.g4() + k) - r(o.g4() + k);
        const cplx det = a * b - 1.0;
        if (std::abs(det) < kSingular) fail("2x2 cell", k);
        s.q3(k) = b / det;
        s.q4(k) = a / det;
        s.q34(k) = 1.0 / det;
    }
    s.q43 = s.q34;
    return s;
}

SquareState dense_block_inverse(const LinearizationProfile& lp, const Eigen::VectorXcd& Lambda,
                                const Eigen::VectorXcd& r) {
    Eigen::MatrixXcd M = lp.deformation().cast<cplx>();
    M.diagonal() -= Lambda + r;
    return block_diagonals(M.partialPivLu().inverse(), lp.dims);
}

double EtaSchedule::eta(Eigen::Index N) const { return c_eta * std::pow(double(N), -exponent); }

void EtaSchedule::validate() const {
    if (!(c_eta > 0.0)) throw std::invalid_argument("c_eta must be > 0");
    if (!(exponent > 0.0)) throw std::invalid_argument("eta exponent must be > 0");
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0,1)");
}

// ---------------------------------------------------------------- GMRES

GmresResult gmres(const std::function<Eigen::VectorXcd(const Eigen::VectorXcd&)>& apply, const Eigen::VectorXcd& rhs,
                  double tol, int restart, int max_cycles) {
    const Eigen::Index n = rhs.size();
    GmresResult out;
    out.x = Eigen::VectorXcd::Zero(n);
    const double bnorm = rhs.norm();
    if (bnorm == 0.0) {
        out.converged = true;
        return out;
    }
    const int k_max = int(std::min<Eigen::Index>(restart, n));
    for (int cycle = 0; cycle < max_cycles; ++cycle) {
        const Eigen::VectorXcd r = rhs - apply(out.x);
        const double beta = r.norm();
        out.relative_residual = beta / bnorm;
        if (out.relative_residual < tol) {
            out.converged = true;
            return out;
        }
        Eigen::MatrixXcd V(n, k_max + 1);
        Eigen::MatrixXcd Hh = Eigen::MatrixXcd::Zero(k_max + 1, k_max);
        std::vector<double> cs(k_max);
        std::vector<cplx> sn(k_max);
        Eigen::VectorXcd g = Eigen::VectorXcd::Zero(k_max + 1);
        V.col(0) = r / beta;
        g(0) = beta;
        int k = 0;
        for (int j = 0; j < k_max; ++j) {
            Eigen::VectorXcd w = apply(V.col(j));
            ++out.iterations;
            // two passes of modified Gram-Schmidt
            for (int pass = 0; pass < 2; ++pass)
                for (int i = 0; i <= j; ++i) {
                    const cplx h = V.col(i).dot(w);
                    Hh(i, j) += h;
                    w -= h * V.col(i);
                }
            const double hnext = w.norm();
            Hh(j + 1, j) = hnext;
            for (int i = 0; i < j; ++i) {
                const cplx a = Hh(i, j), b = Hh(i + 1, j);
                Hh(i, j) = cs[i] * a + sn[i] * b;
                Hh(i + 1, j) = -std::conj(sn[i]) * a + cs[i] * b;
            }
            const cplx a = Hh(j, j);
            const double t = std::hypot(std::abs(a), hnext);
            if (std::abs(a) == 0.0) {
                cs[j] = 0.0;
                sn[j] = 1.0;
            } else {
                cs[j] = std::abs(a) / t;
                sn[j] = (a / std::abs(a)) * hnext / t;
            }
            Hh(j, j) = cs[j] * a + sn[j] * Hh(j + 1, j);
            Hh(j + 1, j) = 0.0;
            g(j + 1) = -std::conj(sn[j]) * g(j);
            g(j) = cs[j] * g(j);
            k = j + 1;
            if (std::abs(g(j + 1)) / bnorm < tol || hnext <= 1e-300) break;
            V.col(j + 1) = w / hnext;
        }
        const Eigen::VectorXcd y =
            Hh.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(g.head(k));
        out.x += V.leftCols(k) * y;
    }
    out.relative_residual = (rhs - apply(out.x)).norm() / bnorm;
    out.converged = out.relative_residual < tol;
    return out;
}

// ---------------------------------------------------------------- fixed point

namespace {

SquareState g_of(const LinearizationProfile& lp, const Eigen::VectorXcd& Lambda, const Eigen::VectorXcd& x) {
    return structured_block_inverse(lp, Lambda, r_transform_apply(lp, x));
}

// G y G restricted to the block-diagonal pattern: diagonal part
Eigen::VectorXcd apply_tg(const SquareState& g, const Eigen::VectorXcd& y, const Offsets& o) {
    Eigen::VectorXcd out(y.size());
    out.segment(0, o.n) = g.q1.array().square() * y.segment(0, o.n).array();
    out.segment(o.g2(), o.m) = g.q2.array().square() * y.segment(o.g2(), o.m).array();
    const auto y3 = y.segment(o.g3(), o.p).array();
    const auto y4 = y.segment(o.g4(), o.p).array();
    const Eigen::ArrayXcd g3 = g.q3.array(), g4 = g.q4.array(), g34 = g.q34.array();
    out.segment(o.g3(), o.p) = g3.square() * y3 + g34.square() * y4;
    out.segment(o.g4(), o.p) = g34.square() * y3 + g4.square() * y4;
    return out;
}

Eigen::VectorXcd apply_tg_offdiag(const SquareState& g, const Eigen::VectorXcd& y, const Offsets& o) {
    const auto y3 = y.segment(o.g3(), o.p).array();
    const auto y4 = y.segment(o.g4(), o.p).array();
    return g.q3.array() * g.q34.array() * y3 + g.q34.array() * g.q4.array() * y4;
}

double residual_of(const LinearizationProfile& lp, const Eigen::VectorXcd& Lambda, const Eigen::VectorXcd& x) {
    return sup_norm(x - g_of(lp, Lambda, x).diagonal());
}

std::string describe(const char* what, double value) {
    std::ostringstream msg;
    msg << what << " (" << value << ")";
    return msg.str();
}

}  // namespace

double fixed_point_residual(const LinearizationProfile& lp, const Eigen::VectorXcd& Lambda, const SquareState& q) {
    const SquareState g = g_of(lp, Lambda, q.diagonal());
    return std::max({sup_norm(q.diagonal() - g.diagonal()), sup_norm(q.q34 - g.q34), sup_norm(q.q43 - g.q43)});
}

FixedPointResult solve_fixed_point(const LinearizationProfile& lp, const Eigen::VectorXcd& Lambda,
                                   const FixedPointOptions& opt) {
    if (Lambda.size() != lp.N()) throw std::invalid_argument("solve_fixed_point: Lambda must be an N-vector");
    const double im_floor = Lambda.imag().minCoeff();
    if (!(im_floor > 0.0)) throw std::invalid_argument("solve_fixed_point needs Im(Lambda) > 0");
    if (!(opt.damping > 0.0 && opt.damping <= 1.0)) throw std::invalid_argument("damping must lie in (0,1]");
    const Offsets o = offsets(lp.dims);
    FixedPointResult res;

    if (opt.method == FixedPointMethod::damped) {
        SquareState q = structured_block_inverse(lp, Lambda, Eigen::VectorXcd::Zero(lp.N()));
        const double w = opt.damping;
        bool done = false;
        for (int it = 1; it <= opt.max_iter; ++it) {
            const SquareState nq = g_of(lp, Lambda, q.diagonal());
            const double change = sup_distance(nq, q);
            res.iterations = it;
            if (change < opt.tol) {
                // q itself is within tol of its image
                done = true;
                break;
            }
            q.q1 = (1 - w) * q.q1 + w * nq.q1;
            q.q2 = (1 - w) * q.q2 + w * nq.q2;
            q.q3 = (1 - w) * q.q3 + w * nq.q3;
            q.q4 = (1 - w) * q.q4 + w * nq.q4;
            q.q34 = (1 - w) * q.q34 + w * nq.q34;
            q.q43 = q.q34;
        }
        if (!done) throw std::runtime_error("fixed point: max_iter exceeded");
        res.state = q;
    } else {
        // continuation in the imaginary part: Lambda_t = Re Lambda + i max(Im Lambda, t)
        auto at_level = [&](double t) {
            Eigen::VectorXcd L = Lambda;
            for (Eigen::Index i = 0; i < L.size(); ++i) L(i) = cplx(Lambda(i).real(), std::max(Lambda(i).imag(), t));
            return L;
        };
        const double start = 1.0;
        Eigen::VectorXcd L = at_level(start);
        Eigen::VectorXcd x = structured_block_inverse(lp, L, Eigen::VectorXcd::Zero(lp.N())).diagonal();
        // damped warm start where the map contracts
        for (int it = 0; it < 500; ++it) {
            const Eigen::VectorXcd nx = g_of(lp, L, x).diagonal();
            const double change = sup_norm(nx - x);
            x = 0.5 * x + 0.5 * nx;
            ++res.iterations;
            if (change < 1e-6) break;
        }
        // Newton at one level; returns the final residual, x is updated in place
        auto newton = [&](const Eigen::VectorXcd& Lt, Eigen::VectorXcd& xt) {
            double resid = residual_of(lp, Lt, xt);
            for (int k = 0; k < opt.newton_max && resid >= opt.tol; ++k) {
                const SquareState g = g_of(lp, Lt, xt);
                const Eigen::VectorXcd F = xt - g.diagonal();
                auto jac = [&](const Eigen::VectorXcd& v) -> Eigen::VectorXcd {
                    return v - apply_tg(g, r_transform_apply(lp, v), o);
                };
                const GmresResult step = gmres(jac, -F, opt.gmres_tol, opt.gmres_restart, opt.gmres_cycles);
                res.iterations += 1;
                double t = 1.0;
                // fraction to the boundary of the upper half-plane
                for (Eigen::Index i = 0; i < xt.size(); ++i)
                    if (step.x(i).imag() < 0.0 && xt(i).imag() > 0.0)
                        t = std::min(t, 0.9 * xt(i).imag() / -step.x(i).imag());
                Eigen::VectorXcd cand;
                double cand_res = std::numeric_limits<double>::infinity();
                while (true) {
                    cand = xt + t * step.x;
                    try {
                        // stay in the upper half-plane, the other root is non-physical
                        const double floor = 10.0 * opt.tol * std::max(1.0, sup_norm(cand));
                        cand_res = cand.imag().minCoeff() > -floor ? residual_of(lp, Lt, cand)
                                                                   : std::numeric_limits<double>::infinity();
                    } catch (const std::runtime_error&) {
                        cand_res = std::numeric_limits<double>::infinity();
                    }
                    if (cand_res < resid || t < 1e-8) break;
                    t *= 0.5;
                }
                if (!std::isfinite(cand_res) || !(cand_res < resid)) break;
                xt = cand;
                resid = cand_res;
            }
            return resid;
        };

        double level = start, resid = newton(L, x);
        if (!(resid < opt.tol))
            throw std::runtime_error(describe("fixed point: Newton failed at the first level, residual", resid));
        // shrink the floor geometrically; a failed level is retried with a shorter step
        double ratio = 0.1;
        while (level > im_floor) {
            const double next = std::max(level * ratio, im_floor);
            Eigen::VectorXcd trial = x;
            const double r = newton(at_level(next), trial);
            if (r < opt.tol) {
                x = trial;
                level = next;
                resid = r;
                ratio = std::max(0.1, ratio * ratio);
            } else {
                ratio = std::sqrt(ratio);
                if (ratio > 1.0 - 1e-9)
                    throw std::runtime_error(describe("fixed point: Newton continuation did not converge, residual", r));
            }
        }
        // keep the Newton iterate for the diagonals, the off-diagonal cells follow from it
        res.state = g_of(lp, Lambda, x);
        res.state.q1 = x.segment(0, o.n);
        res.state.q2 = x.segment(o.g2(), o.m);
        res.state.q3 = x.segment(o.g3(), o.p);
        res.state.q4 = x.segment(o.g4(), o.p);
    }

    res.residual = fixed_point_residual(lp, Lambda, res.state);
    if (!(res.residual < 2.0 * opt.tol))
        throw std::runtime_error(describe("fixed point: residual check failed", res.residual));
    res.min_imag = res.state.min_imag();
    // imaginary parts below the solve precision carry no sign information
    const double sign_floor = 10.0 * opt.tol * std::max(1.0, res.state.diagonal().cwiseAbs().maxCoeff());
    if (!(res.min_imag > -sign_floor))
        throw std::runtime_error(describe("fixed point: imaginary part sign violation, min Im", res.min_imag));
    return res;
}

DerivativeResult solve_directional_derivative(const LinearizationProfile& lp, const Eigen::VectorXcd& Lambda,
                                              const SquareState& q, const Eigen::VectorXcd& direction, double tol) {
    if (direction.size() != lp.N()) throw std::invalid_argument("derivative direction must be an N-vector");
    const Offsets o = offsets(lp.dims);
    const SquareState g = g_of(lp, Lambda, q.diagonal());
    auto jac = [&](const Eigen::VectorXcd& v) -> Eigen::VectorXcd {
        return v - apply_tg(g, r_transform_apply(lp, v), o);
    };
    const GmresResult sol = gmres(jac, apply_tg(g, direction, o), tol, 200, 50);
    if (!sol.converged)
        throw std::runtime_error(describe("derivative: linear solve did not converge, residual", sol.relative_residual));
    const Eigen::VectorXcd y = direction + r_transform_apply(lp, sol.x);
    DerivativeResult out;
    out.iterations = sol.iterations;
    out.relative_residual = sol.relative_residual;
    const Dimensions& d = lp.dims;
    out.state.q1 = sol.x.segment(0, d.n);
    out.state.q2 = sol.x.segment(o.g2(), d.m);
    out.state.q3 = sol.x.segment(o.g3(), d.p);
    out.state.q4 = sol.x.segment(o.g4(), d.p);
    out.state.q34 = apply_tg_offdiag(g, y, o);
    out.state.q43 = out.state.q34;
    return out;
}

DerivativeResult solve_derivative(const LinearizationProfile& lp, const Eigen::VectorXcd& Lambda,
                                  const SquareState& q, double tol) {
    Eigen::VectorXcd dir = Eigen::VectorXcd::Zero(lp.N());
    dir.head(lp.dims.n).setOnes();
    return solve_directional_derivative(lp, Lambda, q, dir, tol);
}

// ---------------------------------------------------------------- closed form

MpValue mp_stieltjes(double lambda, double phi_m, double theta_chaos) {
    if (!(lambda > 0.0) || !(phi_m > 0.0) || !(theta_chaos > 0.0))
        throw std::invalid_argument("mp_stieltjes needs lambda, phi_m, theta_chaos > 0");
    // positive root of phi th2 lam m^2 + (phi lam + th2 (1 - phi)) m - phi = 0
    const double th2 = theta_chaos * theta_chaos, phi = phi_m;
    const double a = phi * lambda + th2 * (1.0 - phi);
    const double disc = std::sqrt(a * a + 4.0 * phi * phi * th2 * lambda);
    MpValue out;
    out.m = a >= 0.0 ? 2.0 * phi / (a + disc) : (disc - a) / (2.0 * phi * th2 * lambda);
    if (!(out.m > 0.0) || !std::isfinite(out.m)) throw std::runtime_error("mp_stieltjes: no admissible branch");
    out.dm = (phi * th2 * out.m * out.m + phi * out.m) / (2.0 * phi * th2 * lambda * out.m + a);
    return out;
}

// ---------------------------------------------------------------- risks

SquareReport square_risks(const SquareConfig& cfg, const VarianceProfile& profile,
                          const VarianceProfile& profile_test, Eigen::Index m) {
    if (!(cfg.lambda > 0.0)) throw std::invalid_argument("square_risks needs lambda > 0");
    if (profile.cols() != profile_test.cols()) throw std::invalid_argument("train and test profiles disagree on p");
    const auto s2a = profile.common_row_mean(cfg.row_mean_tol);
    const auto s2b = profile_test.common_row_mean(cfg.row_mean_tol);
    if (!s2a || !s2b || std::abs(*s2a - *s2b) > cfg.row_mean_tol * std::max(1.0, *s2a))
        throw std::invalid_argument("square_risks: profiles are not row stochastic with a common s^2");
    cfg.eta.validate();

    Dimensions dims{profile.rows(), m, profile.cols(), profile_test.rows()};
    dims.validate();
    const double n = double(dims.n), p = double(dims.p), nt = double(dims.n_test);
    const double lam = cfg.lambda, a2 = cfg.alpha * cfg.alpha, s2n = cfg.sigma_noise * cfg.sigma_noise;

    SquareReport rep;
    rep.risk.estimator = Estimator::square;
    rep.s2 = *s2a;
    const double s = std::sqrt(rep.s2);
    if (!(s > 0.0)) throw std::invalid_argument("square_risks: zero profile");
    rep.theta_lin = theta_lin_chaos(cfg.activation, s).theta_lin;
    rep.theta_chaos = chaos_coefficient(cfg.activation, s, cfg.chaos_convention);
    const double tl = std::abs(rep.theta_lin) < 1e-12 ? 0.0 : rep.theta_lin, tc = rep.theta_chaos;
    rep.eta = cfg.eta.eta(dims.N());

    if (tl == 0.0 && !cfg.force_general) {
        rep.closed_form = true;
        const double signal = a2 * rep.s2;
        if (tc == 0.0) {
            // features vanish: ridge predicts zero
            rep.risk.e_train = signal + s2n;
            rep.risk.e_test = signal + s2n;
            return rep;
        }
        const MpValue mp = mp_stieltjes(lam, dims.phi_m(), tc);
        rep.risk.e_train = lam * lam * (signal + s2n) * mp.dm;
        rep.risk.e_test = s2n + signal + tc * tc * (signal + s2n) * (mp.m - lam * mp.dm);
        return rep;
    }

    const LinearizationProfile lp = build_linearization_profile(profile, Eigen::VectorXd::Constant(dims.n, tl),
                                                                Eigen::VectorXd::Constant(dims.n, tc), dims);
    const Eigen::VectorXcd Lambda = spectral_shift(dims, lam, rep.eta);
    const FixedPointResult fp = solve_fixed_point(lp, Lambda, cfg.solver);
    rep.iterations = fp.iterations;
    rep.residual = fp.residual;
    rep.min_imag = fp.min_imag;
    const SquareState& q = fp.state;
    const DerivativeResult dz = solve_derivative(lp, Lambda, q);

    const Offsets o = offsets(dims);
    const Eigen::VectorXd D = profile_test.column_sums();
    Eigen::VectorXcd dir = Eigen::VectorXcd::Zero(lp.N());
    dir.segment(o.g3(), dims.p) = D.cast<cplx>();
    const DerivativeResult dD = solve_directional_derivative(lp, Lambda, q, dir);

    // Tr[Q44] / theta_lin^2 and its z-derivative, written so theta_lin = 0 is allowed
    const Eigen::VectorXcd r = r_transform_apply(lp, q.diagonal());
    const Eigen::VectorXcd dr = r_transform_apply(lp, dz.state.diagonal());
    const Eigen::VectorXcd rho = lp.column_weighted_mean(q.q1);
    const Eigen::VectorXcd drho = lp.column_weighted_mean(dz.state.q1);
    cplx t44 = 0.0, dt44 = 0.0;
    for (Eigen::Index k = 0; k < dims.p; ++k) {
        const cplx a = -Lambda(o.g3() + k) - r(o.g3() + k);
        const cplx b = -Lambda(o.g4() + k) - r(o.g4() + k);
        const cplx det = a * b - 1.0;
        const cplx ddet = -dr(o.g3() + k) * b - a * dr(o.g4() + k);
        t44 += -rho(k) / det;
        dt44 += -drho(k) / det + rho(k) * ddet / (det * det);
    }

    const cplx train = lam * lam * a2 / p * dt44 + lam * lam * s2n / n * dz.state.q1.sum();
    const cplx test = s2n + a2 / (p * nt) * dD.state.q4.sum() + tc * tc * a2 / p * (t44 - lam * dt44) +
                      tc * tc * s2n / n * dz.state.q2.sum() +
                      tl * tl * s2n / (n * nt) * (D.cast<cplx>().array() * dz.state.q3.array()).sum();
    rep.risk.e_train = train.real();
    rep.risk.e_test = test.real();
    rep.imag_residue = std::max(std::abs(train.imag()), std::abs(test.imag()));
    if (std::abs(train.imag()) > cfg.imag_tol * (1.0 + std::abs(train.real())) ||
        std::abs(test.imag()) > cfg.imag_tol * (1.0 + std::abs(test.real())))
        throw std::runtime_error(describe("square_risks: imaginary residue above threshold", rep.imag_residue));
    return rep;
}

// ---------------------------------------------------------------- dense oracle

Eigen::MatrixXd assemble_linearization(const Eigen::MatrixXd& W, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z,
                                       const Eigen::VectorXd& d_lin, const Eigen::VectorXd& d_chaos) {
    const Eigen::Index n = X.rows(), p = X.cols(), m = W.rows();
    if (W.cols() != p || Z.rows() != m || Z.cols() != n || d_lin.size() != n || d_chaos.size() != n)
        throw std::invalid_argument("assemble_linearization: dimension mismatch");
    const Dimensions dims{n, m, p, 1};
    const Offsets o = offsets(dims);
    const double sn = std::sqrt(double(n)), sp = std::sqrt(double(p));
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(dims.N(), dims.N());
    const Eigen::MatrixXd b12 = d_chaos.asDiagonal() * Z.transpose() / sn;
    const Eigen::MatrixXd b13 = -(d_lin.asDiagonal() * X) / sn;
    L.block(0, o.g2(), n, m) = b12;
    L.block(o.g2(), 0, m, n) = b12.transpose();
    L.block(0, o.g3(), n, p) = b13;
    L.block(o.g3(), 0, p, n) = b13.transpose();
    L.block(o.g2(), o.g2(), m, m).diagonal().setConstant(-1.0);
    L.block(o.g2(), o.g4(), m, p) = -W / sp;
    L.block(o.g4(), o.g2(), p, m) = -W.transpose() / sp;
    L.block(o.g3(), o.g4(), p, p).diagonal().setConstant(-1.0);
    L.block(o.g4(), o.g3(), p, p).diagonal().setConstant(-1.0);
    return L;
}

SchurCheck schur_check(const Eigen::MatrixXd& W, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z,
                       const Eigen::VectorXd& d_lin, const Eigen::VectorXd& d_chaos, double lambda) {
    const Eigen::Index n = X.rows(), p = X.cols(), m = W.rows();
    const double sn = std::sqrt(double(n));
    Eigen::MatrixXd L = assemble_linearization(W, X, Z, d_lin, d_chaos);
    L.topLeftCorner(n, n).diagonal().array() += lambda;
    const Eigen::MatrixXd R = L.partialPivLu().inverse();

    const Eigen::MatrixXd H = (W * X.transpose() / std::sqrt(double(p))) * d_lin.asDiagonal() + Z * d_chaos.asDiagonal();
    Eigen::MatrixXd K = H.transpose() * H / double(n);
    K.diagonal().array() += lambda;
    const Eigen::MatrixXd Q = K.llt().solve(Eigen::MatrixXd::Identity(n, n));

    SchurCheck c;
    c.block11 = (R.topLeftCorner(n, n) - Q).cwiseAbs().maxCoeff();
    c.block21 = (R.block(n, 0, m, n) - H * Q / sn).cwiseAbs().maxCoeff();
    c.block14 = (R.block(0, n + m + p, n, p) - (-(Q * d_lin.asDiagonal() * X) / sn)).cwiseAbs().maxCoeff();
    return c;
}

DenseOracleResult dense_resolvent_oracle(const VarianceProfile& profile_x, const Eigen::VectorXd& d_lin,
                                         const Eigen::VectorXd& d_chaos, Eigen::Index m, const Eigen::VectorXcd& Lambda,
                                         std::size_t trials, Rng& rng) {
    const Dimensions dims{profile_x.rows(), m, profile_x.cols(), 1};
    dims.validate();
    if (dims.N() > 400) throw std::invalid_argument("dense_resolvent_oracle is limited to N <= 400");
    if (Lambda.size() != dims.N()) throw std::invalid_argument("dense_resolvent_oracle: Lambda must be an N-vector");
    if (trials == 0) throw std::invalid_argument("dense_resolvent_oracle needs at least one trial");
    Eigen::MatrixXcd acc = Eigen::MatrixXcd::Zero(dims.N(), dims.N());
    DenseOracleResult out;
    const double lambda = -Lambda(0).real();
    for (std::size_t t = 0; t < trials; ++t) {
        const Eigen::MatrixXd W = sample_iid(m, dims.p, rng);
        const Eigen::MatrixXd X = sample_design(profile_x, rng);
        const Eigen::MatrixXd Z = sample_iid(m, dims.n, rng);
        Eigen::MatrixXcd M = assemble_linearization(W, X, Z, d_lin, d_chaos).cast<cplx>();
        M.diagonal() -= Lambda;
        Eigen::PartialPivLU<Eigen::MatrixXcd> lu(M);
        const Eigen::MatrixXcd inv = lu.inverse();
        if (!inv.allFinite()) throw std::runtime_error("dense_resolvent_oracle: singular L - Lambda");
        acc += inv;
        if (lambda > 0.0) {
            const SchurCheck c = schur_check(W, X, Z, d_lin, d_chaos, lambda);
            out.worst.block11 = std::max(out.worst.block11, c.block11);
            out.worst.block21 = std::max(out.worst.block21, c.block21);
            out.worst.block14 = std::max(out.worst.block14, c.block14);
        }
    }
    out.mean = block_diagonals(acc / double(trials), dims);
    return out;
}

}  // namespace rfeq
