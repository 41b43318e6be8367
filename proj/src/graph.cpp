#include "enviro/graph.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <utility>

namespace enviro::graph {

namespace {

std::string dims(const Mat& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

void Tape::check(Var v, const char* who) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
        throw ShapeError(std::string(who) + ": var is not on this tape");
}

const Mat& Tape::val(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.ext_value ? *n.ext_value : n.value;
}

const Mat& Tape::grad_of(int id) const {
    return nodes_[static_cast<std::size_t>(id)].grad;
}

void Tape::accumulate(int id, const Mat& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.track) return;
    if (n.ext_grad) {
        if (n.ext_grad->rows() != g.rows() || n.ext_grad->cols() != g.cols())
            throw ShapeError("gradient " + dims(g) + " does not match parameter storage " +
                             dims(*n.ext_grad));
        *n.ext_grad += g;
        n.has_grad = true;
        return;
    }
    if (!n.has_grad) {
        n.grad = g;
        n.has_grad = true;
    } else {
        n.grad += g;
    }
}

Tape::Var Tape::push(Mat value, std::function<void(Tape&)> back) {
    Node n;
    n.value = std::move(value);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Tape::Var Tape::input(Mat value) { return push(std::move(value), {}); }

Tape::Var Tape::param(const Mat* value, Mat* grad) {
    if (!value || !grad) throw ShapeError("param: null storage");
    if (grad->rows() != value->rows() || grad->cols() != value->cols())
        throw ShapeError("param: grad storage " + dims(*grad) + " does not match value " +
                         dims(*value));
    Node n;
    n.ext_value = value;
    n.ext_grad = grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Tape::Var Tape::constant(Mat value) {
    Node n;
    n.value = std::move(value);
    n.track = false;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

const Mat& Tape::value(Var v) const {
    check(v, "value");
    return val(v.id);
}

Mat Tape::grad(Var v) const {
    check(v, "grad");
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.ext_grad) return *n.ext_grad;
    if (n.has_grad) return n.grad;
    return Mat::Zero(val(v.id).rows(), val(v.id).cols());
}

Tape::Var Tape::matmul(Var a, Var b) {
    check(a, "matmul");
    check(b, "matmul");
    const Mat& av = val(a.id);
    const Mat& bv = val(b.id);
    if (av.cols() != bv.rows())
        throw ShapeError("matmul: " + dims(av) + " * " + dims(bv));
    const int ai = a.id, bi = b.id;
    Var out = push(av * bv, {});
    const int oi = out.id;
    nodes_[static_cast<std::size_t>(oi)].back = [ai, bi, oi](Tape& t) {
        const Mat& g = t.grad_of(oi);
        t.accumulate(ai, g * t.val(bi).transpose());
        t.accumulate(bi, t.val(ai).transpose() * g);
    };
    return out;
}

Tape::Var Tape::add(Var a, Var b) {
    check(a, "add");
    check(b, "add");
    const Mat& av = val(a.id);
    const Mat& bv = val(b.id);
    if (av.rows() != bv.rows() || av.cols() != bv.cols())
        throw ShapeError("add: " + dims(av) + " vs " + dims(bv));
    const int ai = a.id, bi = b.id;
    Var out = push(av + bv, {});
    const int oi = out.id;
    nodes_[static_cast<std::size_t>(oi)].back = [ai, bi, oi](Tape& t) {
        t.accumulate(ai, t.grad_of(oi));
        t.accumulate(bi, t.grad_of(oi));
    };
    return out;
}

Tape::Var Tape::sub(Var a, Var b) {
    check(a, "sub");
    check(b, "sub");
    const Mat& av = val(a.id);
    const Mat& bv = val(b.id);
    if (av.rows() != bv.rows() || av.cols() != bv.cols())
        throw ShapeError("sub: " + dims(av) + " vs " + dims(bv));
    const int ai = a.id, bi = b.id;
    Var out = push(av - bv, {});
    const int oi = out.id;
    nodes_[static_cast<std::size_t>(oi)].back = [ai, bi, oi](Tape& t) {
        t.accumulate(ai, t.grad_of(oi));
        t.accumulate(bi, -t.grad_of(oi));
    };
    return out;
}

Tape::Var Tape::mul(Var a, Var b) {
    check(a, "mul");
    check(b, "mul");
    const Mat& av = val(a.id);
    const Mat& bv = val(b.id);
    if (av.rows() != bv.rows() || av.cols() != bv.cols())
        throw ShapeError("mul: " + dims(av) + " vs " + dims(bv));
    const int ai = a.id, bi = b.id;
    Var out = push(av.cwiseProduct(bv), {});
    const int oi = out.id;
    nodes_[static_cast<std::size_t>(oi)].back = [ai, bi, oi](Tape& t) {
        t.accumulate(ai, t.grad_of(oi).cwiseProduct(t.val(bi)));
        t.accumulate(bi, t.grad_of(oi).cwiseProduct(t.val(ai)));
    };
    return out;
}

Tape::Var Tape::scale(Var a, double s) {
    check(a, "scale");
    const int ai = a.id;
    Var out = push(val(a.id) * s, {});
    const int oi = out.id;
    nodes_[static_cast<std::size_t>(oi)].back = [ai, oi, s](Tape& t) {
        t.accumulate(ai, t.grad_of(oi) * s);
    };
    return out;
}

Tape::Var Tape::add_scalar(Var a, double s) {
    check(a, "add_scalar");
    const int ai = a.id;
    Var out = push((val(a.id).array() + s).matrix(), {});
    const int oi = out.id;
    nodes_[static_cast<std::size_t>(oi)].back = [ai, oi](Tape& t) {
        t.accumulate(ai, t.grad_of(oi));
    };
    return out;
}

Tape::Var Tape::transpose(Var a) {
    check(a, "transpose");
    const int ai = a.id;
    Var out = push(val(a.id).transpose(), {});
    const int oi = out.id;
    nodes_[static_cast<std::size_t>(oi)].back = [ai, oi](Tape& t) {
        t.accumulate(ai, t.grad_of(oi).transpose());
    };
    return out;
}

Tape::Var Tape::add_col(Var a, Var col) {
    check(a, "add_col");
    check(col, "add_col");
    const Mat& av = val(a.id);
    const Mat& cv = val(col.id);
    if (cv.cols() != 1 || cv.rows() != av.rows())
        throw ShapeError("add_col: column " + dims(cv) + " vs matrix " + dims(av));
    const int ai = a.id, ci = col.id;
    Var out = push(av.colwise() + cv.col(0), {});
    const int oi = out.id;
    nodes_[static_cast<std::size_t>(oi)].back = [ai, ci, oi](Tape& t) {
        t.accumulate(ai, t.grad_of(oi));
        t.accumulate(ci, t.grad_of(oi).rowwise().sum());
    };
    return out;
}

Tape::Var Tape::mul_col(Var a, Var col) {
    check(a, "mul_col");
    check(col, "mul_col");
    const Mat& av = val(a.id);
    const Mat& cv = val(col.id);
    if (cv.cols() != 1 || cv.rows() != av.rows())
        throw ShapeError("mul_col: column " + dims(cv) + " vs matrix " + dims(av));
    const int ai = a.id, ci = col.id;
    Var out = push((av.array().colwise() * cv.col(0).array()).matrix(), {});
    const int oi = out.id;
    nodes_[static_cast<std::size_t>(oi)].back = [ai, ci, oi](Tape& t) {
        const Mat& g = t.grad_of(oi);
        t.accumulate(ai, (g.array().colwise() * t.val(ci).col(0).array()).matrix());
        t.accumulate(ci, g.cwiseProduct(t.val(ai)).rowwise().sum());
    };
    return out;
}

Tape::Var Tape::layernorm(Var a, double eps) {
    check(a, "layernorm");
    const Mat& av = val(a.id);
    if (av.rows() < 1) throw ShapeError("layernorm: empty input");
    const Eigen::Index r = av.rows();
    Mat xhat(av.rows(), av.cols());
    Vec sigma(av.cols());
    for (Eigen::Index c = 0; c < av.cols(); ++c) {
        const double mu = av.col(c).mean();
        const double var = (av.col(c).array() - mu).square().sum() / static_cast<double>(r);
        const double sd = std::sqrt(var + eps);
        sigma(c) = sd;
        xhat.col(c) = (av.col(c).array() - mu) / sd;
    }
    const int ai = a.id;
    Var out = push(std::move(xhat), {});
    const int oi = out.id;
    nodes_[static_cast<std::size_t>(oi)].back = [ai, oi, sigma](Tape& t) {
        const Mat& g = t.grad_of(oi);
        const Mat& y = t.val(oi);  // the normalized output
        Mat dx(g.rows(), g.cols());
        const double r = static_cast<double>(g.rows());
        for (Eigen::Index c = 0; c < g.cols(); ++c) {
            const double gm = g.col(c).mean();
            const double gy = g.col(c).dot(y.col(c)) / r;
            dx.col(c) = (g.col(c).array() - gm - y.col(c).array() * gy) / sigma(c);
        }
        t.accumulate(ai, dx);
    };
    return out;
}

Tape::Var Tape::softmax_rows(Var a) {
    check(a, "softmax_rows");
    const Mat& av = val(a.id);
    Mat y(av.rows(), av.cols());
    for (Eigen::Index i = 0; i < av.rows(); ++i) {
        const double m = av.row(i).maxCoeff();
        Eigen::ArrayXd e = (av.row(i).array() - m).exp();
        y.row(i) = (e / e.sum()).matrix();
    }
    const int ai = a.id;
    Var out = push(std::move(y), {});
    const int oi = out.id;
    nodes_[static_cast<std::size_t>(oi)].back = [ai, oi](Tape& t) {
        const Mat& g = t.grad_of(oi);
        const Mat& y = t.val(oi);
        Mat dx(g.rows(), g.cols());
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
            const double dot = g.row(i).dot(y.row(i));
            dx.row(i) = (y.row(i).array() * (g.row(i).array() - dot)).matrix();
        }
        t.accumulate(ai, dx);
    };
    return out;
}

Tape::Var Tape::sigmoid(Var a) {
    check(a, "sigmoid");
    const Mat& av = val(a.id);
    Mat y = (1.0 / (1.0 + (-av.array()).exp())).matrix();
    const int ai = a.id;
    Var out = push(std::move(y), {});
    const int oi = out.id;
    nodes_[static_cast<std::size_t>(oi)].back = [ai, oi](Tape& t) {
        const Mat& y = t.val(oi);
        const Mat dx = t.grad_of(oi).array() * y.array() * (1.0 - y.array());
        t.accumulate(ai, dx);
    };
    return out;
}

Tape::Var Tape::gelu(Var a) {
    check(a, "gelu");
    const Mat& av = val(a.id);
    const auto cdf = [](double x) { return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)); };
    Mat y = (av.array() * av.array().unaryExpr(cdf)).matrix();
    const int ai = a.id;
    Var out = push(std::move(y), {});
    const int oi = out.id;
    nodes_[static_cast<std::size_t>(oi)].back = [ai, oi, cdf](Tape& t) {
        const Eigen::ArrayXXd x = t.val(ai).array();
        const Eigen::ArrayXXd phi = x.unaryExpr(cdf);
        const Eigen::ArrayXXd pdf =
            (-0.5 * x.square()).exp() / std::sqrt(2.0 * std::numbers::pi);
        t.accumulate(ai, (t.grad_of(oi).array() * (phi + x * pdf)).matrix());
    };
    return out;
}

Tape::Var Tape::rows(Var a, int start, int count) {
    check(a, "rows");
    const Mat& av = val(a.id);
    if (start < 0 || count < 1 || start + count > av.rows())
        throw ShapeError("rows: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + dims(av));
    const int ai = a.id;
    const Eigen::Index in_rows = av.rows();  // before push: av dangles after
    Var out = push(av.middleRows(start, count), {});
    const int oi = out.id;
    nodes_[static_cast<std::size_t>(oi)].back = [ai, oi, start, count, in_rows](Tape& t) {
        const Mat& g = t.grad_of(oi);
        Mat dx = Mat::Zero(in_rows, g.cols());
        dx.middleRows(start, count) = g;
        t.accumulate(ai, dx);
    };
    return out;
}

Tape::Var Tape::cols(Var a, int start, int count) {
    check(a, "cols");
    const Mat& av = val(a.id);
    if (start < 0 || count < 1 || start + count > av.cols())
        throw ShapeError("cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + dims(av));
    const int ai = a.id;
    const Eigen::Index in_cols = av.cols();  // before push: av dangles after
    Var out = push(av.middleCols(start, count), {});
    const int oi = out.id;
    nodes_[static_cast<std::size_t>(oi)].back = [ai, oi, start, count, in_cols](Tape& t) {
        const Mat& g = t.grad_of(oi);
        Mat dx = Mat::Zero(g.rows(), in_cols);
        dx.middleCols(start, count) = g;
        t.accumulate(ai, dx);
    };
    return out;
}

Tape::Var Tape::vstack(Var a, Var b) {
    check(a, "vstack");
    check(b, "vstack");
    const Mat& av = val(a.id);
    const Mat& bv = val(b.id);
    if (av.cols() != bv.cols())
        throw ShapeError("vstack: " + dims(av) + " over " + dims(bv));
    Mat y(av.rows() + bv.rows(), av.cols());
    y.topRows(av.rows()) = av;
    y.bottomRows(bv.rows()) = bv;
    const int ai = a.id, bi = b.id;
    const Eigen::Index ra = av.rows(), rb = bv.rows();
    Var out = push(std::move(y), {});
    const int oi = out.id;
    nodes_[static_cast<std::size_t>(oi)].back = [ai, bi, oi, ra, rb](Tape& t) {
        const Mat& g = t.grad_of(oi);
        t.accumulate(ai, g.topRows(ra));
        t.accumulate(bi, g.bottomRows(rb));
    };
    return out;
}

Tape::Var Tape::embed(Var table, std::vector<int> ids) {
    check(table, "embed");
    const Mat& tv = val(table.id);
    for (int id : ids)
        if (id < 0 || id >= tv.cols())
            throw ShapeError("embed: id " + std::to_string(id) + " out of table " + dims(tv));
    Mat y(tv.rows(), static_cast<Eigen::Index>(ids.size()));
    for (std::size_t j = 0; j < ids.size(); ++j)
        y.col(static_cast<Eigen::Index>(j)) = tv.col(ids[j]);
    const int ti = table.id;
    Var out = push(std::move(y), {});
    const int oi = out.id;
    nodes_[static_cast<std::size_t>(oi)].back = [ti, oi, ids = std::move(ids)](Tape& t) {
        const Mat& g = t.grad_of(oi);
        const Mat& tv = t.val(ti);
        Mat dt = Mat::Zero(tv.rows(), tv.cols());
        for (std::size_t j = 0; j < ids.size(); ++j)
            dt.col(ids[j]) += g.col(static_cast<Eigen::Index>(j));
        t.accumulate(ti, dt);
    };
    return out;
}

Tape::Var Tape::conv1d(Var x, Var weight, int kernel) {
    check(x, "conv1d");
    check(weight, "conv1d");
    const Mat& xv = val(x.id);
    const Mat& wv = val(weight.id);
    if (kernel < 1 || kernel % 2 == 0)
        throw ShapeError("conv1d: kernel must be odd and positive");
    const Eigen::Index cin = xv.rows();
    if (wv.cols() != cin * kernel)
        throw ShapeError("conv1d: weight " + dims(wv) + " does not match " +
                         std::to_string(cin) + " channels x kernel " + std::to_string(kernel));
    const Eigen::Index L = xv.cols();
    const int center = kernel / 2;
    Mat y = Mat::Zero(wv.rows(), L);
    for (int k = 0; k < kernel; ++k) {
        const int off = k - center;
        const Eigen::Index lo = std::max(0, -off);
        const Eigen::Index hi = L - std::max(0, off);
        if (hi <= lo) continue;
        y.middleCols(lo, hi - lo) +=
            wv.middleCols(static_cast<Eigen::Index>(k) * cin, cin) *
            xv.middleCols(lo + off, hi - lo);
    }
    const int xi = x.id, wi = weight.id;
    Var out = push(std::move(y), {});
    const int oi = out.id;
    nodes_[static_cast<std::size_t>(oi)].back = [xi, wi, oi, kernel, center, cin](Tape& t) {
        const Mat& g = t.grad_of(oi);
        const Mat& xv = t.val(xi);
        const Mat& wv = t.val(wi);
        const Eigen::Index L = xv.cols();
        Mat dx = Mat::Zero(xv.rows(), L);
        Mat dw = Mat::Zero(wv.rows(), wv.cols());
        for (int k = 0; k < kernel; ++k) {
            const int off = k - center;
            const Eigen::Index lo = std::max(0, -off);
            const Eigen::Index hi = L - std::max(0, off);
            if (hi <= lo) continue;
            const auto wk = wv.middleCols(static_cast<Eigen::Index>(k) * cin, cin);
            dx.middleCols(lo + off, hi - lo) += wk.transpose() * g.middleCols(lo, hi - lo);
            dw.middleCols(static_cast<Eigen::Index>(k) * cin, cin) +=
                g.middleCols(lo, hi - lo) * xv.middleCols(lo + off, hi - lo).transpose();
        }
        t.accumulate(xi, dx);
        t.accumulate(wi, dw);
    };
    return out;
}

Tape::Var Tape::dwconv1d(Var x, Var weight) {
    check(x, "dwconv1d");
    check(weight, "dwconv1d");
    const Mat& xv = val(x.id);
    const Mat& wv = val(weight.id);
    if (wv.rows() != xv.rows())
        throw ShapeError("dwconv1d: weight " + dims(wv) + " vs input " + dims(xv));
    const int kernel = static_cast<int>(wv.cols());
    if (kernel < 1 || kernel % 2 == 0)
        throw ShapeError("dwconv1d: kernel must be odd and positive");
    const Eigen::Index L = xv.cols();
    const int center = kernel / 2;
    Mat y = Mat::Zero(xv.rows(), L);
    for (int k = 0; k < kernel; ++k) {
        const int off = k - center;
        const Eigen::Index lo = std::max(0, -off);
        const Eigen::Index hi = L - std::max(0, off);
        if (hi <= lo) continue;
        y.middleCols(lo, hi - lo) +=
            (xv.middleCols(lo + off, hi - lo).array().colwise() * wv.col(k).array()).matrix();
    }
    const int xi = x.id, wi = weight.id;
    Var out = push(std::move(y), {});
    const int oi = out.id;
    nodes_[static_cast<std::size_t>(oi)].back = [xi, wi, oi, kernel, center](Tape& t) {
        const Mat& g = t.grad_of(oi);
        const Mat& xv = t.val(xi);
        const Mat& wv = t.val(wi);
        const Eigen::Index L = xv.cols();
        Mat dx = Mat::Zero(xv.rows(), L);
        Mat dw = Mat::Zero(wv.rows(), wv.cols());
        for (int k = 0; k < kernel; ++k) {
            const int off = k - center;
            const Eigen::Index lo = std::max(0, -off);
            const Eigen::Index hi = L - std::max(0, off);
            if (hi <= lo) continue;
            dx.middleCols(lo + off, hi - lo) +=
                (g.middleCols(lo, hi - lo).array().colwise() * wv.col(k).array()).matrix();
            dw.col(k) += (g.middleCols(lo, hi - lo).array() *
                          xv.middleCols(lo + off, hi - lo).array())
                             .rowwise()
                             .sum()
                             .matrix();
        }
        t.accumulate(xi, dx);
        t.accumulate(wi, dw);
    };
    return out;
}

Tape::Var Tape::sum_sq_cols_weighted(Var x, const Vec& col_weight, double denom) {
    check(x, "sum_sq_cols_weighted");
    const Mat& xv = val(x.id);
    if (col_weight.size() != xv.cols())
        throw ShapeError("sum_sq_cols_weighted: " + std::to_string(col_weight.size()) +
                         " weights for " + dims(xv));
    if (denom <= 0.0) throw DomainError("sum_sq_cols_weighted: denom must be positive");
    double s = 0.0;
    for (Eigen::Index c = 0; c < xv.cols(); ++c)
        s += col_weight(c) * xv.col(c).squaredNorm();
    Mat y(1, 1);
    y(0, 0) = s / denom;
    const int xi = x.id;
    Var out = push(std::move(y), {});
    const int oi = out.id;
    nodes_[static_cast<std::size_t>(oi)].back = [xi, oi, col_weight, denom](Tape& t) {
        const double g = t.grad_of(oi)(0, 0);
        const Mat& xv = t.val(xi);
        const Mat dx =
            (xv.array().rowwise() * col_weight.transpose().array()) * (2.0 * g / denom);
        t.accumulate(xi, dx);
    };
    return out;
}

void Tape::backward(Var result, double seed) {
    check(result, "backward");
    const Mat& rv = val(result.id);
    if (rv.rows() != 1 || rv.cols() != 1)
        throw ShapeError("backward: result must be 1x1, got " + dims(rv));
    Mat s(1, 1);
    s(0, 0) = seed;
    accumulate(result.id, s);
    for (int id = result.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.has_grad && n.back) n.back(*this);
    }
}

}  // namespace enviro::graph
