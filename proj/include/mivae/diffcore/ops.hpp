#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mivae/diffcore/tape.hpp"
#include "mivae/diffcore/tensor.hpp"
#include "mivae/errors.hpp"

namespace mivae::diff {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

inline ConstMatrixMap as_matrix(const Tensor& t) {
    return ConstMatrixMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
inline MatrixMap as_matrix(Tensor& t) {
    return MatrixMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

inline Tape& common_tape(Var a, Var b, const char* op) {
    if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": operands recorded on different tapes");
    return a.tape();
}

inline bool any_grad(Var a) { return a.tape().requires_grad(a); }
inline bool any_grad(Var a, Var b) { return any_grad(a) || any_grad(b); }

template <typename F>
Tensor map_values(const Tensor& in, F f) {
    Tensor out(Shape{in.rows(), in.cols()});
    const double* src = in.data();
    double* dst = out.data();
    for (std::size_t i = 0; i < in.size(); ++i) dst[i] = f(src[i]);
    return out;
}

// Records y = f(x) elementwise; dfdx(x, y) gives the local derivative.
template <typename F, typename D>
Var unary(Var x, F f, D dfdx) {
    Tape& tape = x.tape();
    Tensor out = map_values(x.value(), f);
    if (!any_grad(x)) return tape.push(std::move(out), false, {});
    return tape.push(std::move(out), true, [x, dfdx](Tape& t, const Tensor& g) {
        const Tensor& in = x.value();
        Tensor& gx = t.accumulate_into(x);
        for (std::size_t i = 0; i < in.size(); ++i) gx[i] += g[i] * dfdx(in[i]);
    });
}

inline void require_same_or_scalar(const Tensor& a, const Tensor& b, const char* op) {
    if (a.same_shape(b) || a.size() == 1 || b.size() == 1) return;
    throw DimensionError(std::string(op) + ": shapes " + matrix_shape_string(a) + " and " +
                         matrix_shape_string(b) + " are not broadcast-compatible");
}

// Sum of g over the positions that read from a broadcast operand.
inline void accumulate_broadcast(Tensor& target, const Tensor& contribution) {
    if (target.size() == contribution.size()) {
        for (std::size_t i = 0; i < target.size(); ++i) target[i] += contribution[i];
    } else {
        double s = 0.0;
        for (double v : contribution.values()) s += v;
        target[0] += s;
    }
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

} // namespace detail

using detail::stable_sigmoid;
using detail::stable_softplus;

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
    Tape& tape = detail::common_tape(a, b, "matmul");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.cols() != bv.rows()) {
        throw DimensionError("matmul: inner dimensions differ, " + matrix_shape_string(av) + " x " +
                             matrix_shape_string(bv));
    }
    Tensor out = Tensor::zeros(av.rows(), bv.cols());
    detail::as_matrix(out).noalias() = detail::as_matrix(av) * detail::as_matrix(bv);
    if (!detail::any_grad(a, b)) return tape.push(std::move(out), false, {});
    return tape.push(std::move(out), true, [a, b](Tape& t, const Tensor& g) {
        auto gm = detail::as_matrix(g);
        if (t.requires_grad(a)) {
            detail::as_matrix(t.accumulate_into(a)).noalias() += gm * detail::as_matrix(b.value()).transpose();
        }
        if (t.requires_grad(b)) {
            detail::as_matrix(t.accumulate_into(b)).noalias() += detail::as_matrix(a.value()).transpose() * gm;
        }
    });
}

// a[m x n] + bias[1 x n], bias repeated over rows.
inline Var add_bias(Var a, Var bias) {
    Tape& tape = detail::common_tape(a, bias, "add_bias");
    const Tensor& av = a.value();
    const Tensor& bv = bias.value();
    if (bv.rows() != 1 || bv.cols() != av.cols()) {
        throw DimensionError("add_bias: bias " + matrix_shape_string(bv) + " does not match " +
                             matrix_shape_string(av));
    }
    Tensor out = Tensor::zeros(av.rows(), av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
        for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) = av(r, c) + bv[c];
    }
    if (!detail::any_grad(a, bias)) return tape.push(std::move(out), false, {});
    return tape.push(std::move(out), true, [a, bias](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) {
            Tensor& ga = t.accumulate_into(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(bias)) {
            Tensor& gb = t.accumulate_into(bias);
            const std::size_t cols = g.cols();
            for (std::size_t r = 0; r < g.rows(); ++r) {
                for (std::size_t c = 0; c < cols; ++c) gb[c] += g(r, c);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Elementwise binary (equal shapes, or one scalar operand)

inline Var add(Var a, Var b) {
    Tape& tape = detail::common_tape(a, b, "add");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    detail::require_same_or_scalar(av, bv, "add");
    const Tensor& big = av.size() >= bv.size() ? av : bv;
    Tensor out(Shape{big.rows(), big.cols()});
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[av.size() == 1 ? 0 : i] + bv[bv.size() == 1 ? 0 : i];
    }
    if (!detail::any_grad(a, b)) return tape.push(std::move(out), false, {});
    return tape.push(std::move(out), true, [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) detail::accumulate_broadcast(t.accumulate_into(a), g);
        if (t.requires_grad(b)) detail::accumulate_broadcast(t.accumulate_into(b), g);
    });
}

inline Var sub(Var a, Var b) {
    Tape& tape = detail::common_tape(a, b, "sub");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    detail::require_same_or_scalar(av, bv, "sub");
    const Tensor& big = av.size() >= bv.size() ? av : bv;
    Tensor out(Shape{big.rows(), big.cols()});
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[av.size() == 1 ? 0 : i] - bv[bv.size() == 1 ? 0 : i];
    }
    if (!detail::any_grad(a, b)) return tape.push(std::move(out), false, {});
    return tape.push(std::move(out), true, [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) detail::accumulate_broadcast(t.accumulate_into(a), g);
        if (t.requires_grad(b)) {
            Tensor neg = detail::map_values(g, [](double v) { return -v; });
            detail::accumulate_broadcast(t.accumulate_into(b), neg);
        }
    });
}

inline Var mul(Var a, Var b) {
    Tape& tape = detail::common_tape(a, b, "mul");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    detail::require_same_or_scalar(av, bv, "mul");
    const Tensor& big = av.size() >= bv.size() ? av : bv;
    Tensor out(Shape{big.rows(), big.cols()});
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[av.size() == 1 ? 0 : i] * bv[bv.size() == 1 ? 0 : i];
    }
    if (!detail::any_grad(a, b)) return tape.push(std::move(out), false, {});
    return tape.push(std::move(out), true, [a, b](Tape& t, const Tensor& g) {
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        if (t.requires_grad(a)) {
            Tensor c(Shape{g.rows(), g.cols()});
            for (std::size_t i = 0; i < g.size(); ++i) c[i] = g[i] * bv[bv.size() == 1 ? 0 : i];
            detail::accumulate_broadcast(t.accumulate_into(a), c);
        }
        if (t.requires_grad(b)) {
            Tensor c(Shape{g.rows(), g.cols()});
            for (std::size_t i = 0; i < g.size(); ++i) c[i] = g[i] * av[av.size() == 1 ? 0 : i];
            detail::accumulate_broadcast(t.accumulate_into(b), c);
        }
    });
}

// ---------------------------------------------------------------------------
// Elementwise unary

inline Var scale(Var x, double k) {
    return detail::unary(x, [k](double v) { return k * v; }, [k](double) { return k; });
}

inline Var add_scalar(Var x, double k) {
    return detail::unary(x, [k](double v) { return v + k; }, [](double) { return 1.0; });
}

inline Var relu(Var x) {
    return detail::unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(Var x) {
    return detail::unary(x, detail::stable_sigmoid, [](double v) {
        const double s = detail::stable_sigmoid(v);
        return s * (1.0 - s);
    });
}

inline Var softplus(Var x) {
    return detail::unary(x, detail::stable_softplus, detail::stable_sigmoid);
}

inline Var exp(Var x) {
    const Tensor& in = x.value();
    for (double v : in.values()) {
        if (!std::isfinite(std::exp(v))) {
            throw NumericError("exp: overflow for input " + std::to_string(v));
        }
    }
    return detail::unary(x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

inline Var log(Var x) {
    for (double v : x.value().values()) {
        if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
    }
    return detail::unary(x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

inline Var square(Var x) {
    return detail::unary(x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

// Hard clamp; zero gradient outside [lo, hi].
inline Var clamp(Var x, double lo, double hi) {
    return detail::unary(
        x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

enum class ElementwiseOp { add, sub, mul, relu, sigmoid, exp, log, softplus };

inline Var elementwise(ElementwiseOp op, std::span<const Var> inputs) {
    const std::size_t arity =
        (op == ElementwiseOp::add || op == ElementwiseOp::sub || op == ElementwiseOp::mul) ? 2 : 1;
    if (inputs.size() != arity) {
        throw ContractError("elementwise: expected " + std::to_string(arity) + " inputs, got " +
                            std::to_string(inputs.size()));
    }
    switch (op) {
    case ElementwiseOp::add: return add(inputs[0], inputs[1]);
    case ElementwiseOp::sub: return sub(inputs[0], inputs[1]);
    case ElementwiseOp::mul: return mul(inputs[0], inputs[1]);
    case ElementwiseOp::relu: return relu(inputs[0]);
    case ElementwiseOp::sigmoid: return sigmoid(inputs[0]);
    case ElementwiseOp::exp: return exp(inputs[0]);
    case ElementwiseOp::log: return log(inputs[0]);
    case ElementwiseOp::softplus: return softplus(inputs[0]);
    }
    throw ContractError("elementwise: unknown op");
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

inline Var sum(Var x) {
    Tape& tape = x.tape();
    double s = 0.0;
    for (double v : x.value().values()) s += v;
    if (!detail::any_grad(x)) return tape.push(Tensor::scalar(s), false, {});
    return tape.push(Tensor::scalar(s), true, [x](Tape& t, const Tensor& g) {
        Tensor& gx = t.accumulate_into(x);
        const double gv = g[0];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gv;
    });
}

// Column-wise mean over rows: [m x n] -> [1 x n]. Rows are summed in storage order.
inline Var mean_rows(Var x) {
    Tape& tape = x.tape();
    const Tensor& xv = x.value();
    const std::size_t m = xv.rows();
    const std::size_t n = xv.cols();
    Tensor out = Tensor::zeros(1, n);
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) out[c] += xv(r, c);
    }
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t c = 0; c < n; ++c) out[c] *= inv;
    if (!detail::any_grad(x)) return tape.push(std::move(out), false, {});
    return tape.push(std::move(out), true, [x, m, n, inv](Tape& t, const Tensor& g) {
        Tensor& gx = t.accumulate_into(x);
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < n; ++c) gx(r, c) += g[c] * inv;
        }
    });
}

// [1 x n] -> [m x n]
inline Var repeat_rows(Var x, std::size_t m) {
    Tape& tape = x.tape();
    const Tensor& xv = x.value();
    if (xv.rows() != 1) throw DimensionError("repeat_rows: expected a single row, got " + matrix_shape_string(xv));
    const std::size_t n = xv.cols();
    Tensor out = Tensor::zeros(m, n);
    for (std::size_t r = 0; r < m; ++r) std::copy_n(xv.data(), n, out.data() + r * n);
    if (!detail::any_grad(x)) return tape.push(std::move(out), false, {});
    return tape.push(std::move(out), true, [x, m, n](Tape& t, const Tensor& g) {
        Tensor& gx = t.accumulate_into(x);
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < n; ++c) gx[c] += g(r, c);
        }
    });
}

// Columns [begin, end) of x.
inline Var slice_cols(Var x, std::size_t begin, std::size_t end) {
    Tape& tape = x.tape();
    const Tensor& xv = x.value();
    if (begin >= end || end > xv.cols()) {
        throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") invalid for " + matrix_shape_string(xv));
    }
    const std::size_t m = xv.rows();
    const std::size_t w = end - begin;
    Tensor out = Tensor::zeros(m, w);
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < w; ++c) out(r, c) = xv(r, begin + c);
    }
    if (!detail::any_grad(x)) return tape.push(std::move(out), false, {});
    return tape.push(std::move(out), true, [x, begin, w](Tape& t, const Tensor& g) {
        Tensor& gx = t.accumulate_into(x);
        for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < w; ++c) gx(r, begin + c) += g(r, c);
        }
    });
}

// [m x p] | [m x q] -> [m x (p+q)]
inline Var concat_cols(Var a, Var b) {
    Tape& tape = detail::common_tape(a, b, "concat_cols");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rows() != bv.rows()) {
        throw DimensionError("concat_cols: row counts differ, " + matrix_shape_string(av) + " and " +
                             matrix_shape_string(bv));
    }
    const std::size_t m = av.rows();
    const std::size_t p = av.cols();
    const std::size_t q = bv.cols();
    Tensor out = Tensor::zeros(m, p + q);
    for (std::size_t r = 0; r < m; ++r) {
        std::copy_n(av.data() + r * p, p, out.data() + r * (p + q));
        std::copy_n(bv.data() + r * q, q, out.data() + r * (p + q) + p);
    }
    if (!detail::any_grad(a, b)) return tape.push(std::move(out), false, {});
    return tape.push(std::move(out), true, [a, b, m, p, q](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) {
            Tensor& ga = t.accumulate_into(a);
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t c = 0; c < p; ++c) ga(r, c) += g(r, c);
            }
        }
        if (t.requires_grad(b)) {
            Tensor& gb = t.accumulate_into(b);
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t c = 0; c < q; ++c) gb(r, c) += g(r, p + c);
            }
        }
    });
}

// Maximum over all entries; the gradient goes to the first maximal entry.
inline Var max_all(Var x) {
    Tape& tape = x.tape();
    const Tensor& xv = x.value();
    std::size_t arg = 0;
    for (std::size_t i = 1; i < xv.size(); ++i) {
        if (xv[i] > xv[arg]) arg = i;
    }
    Tensor out = Tensor::scalar(xv[arg]);
    if (!detail::any_grad(x)) return tape.push(std::move(out), false, {});
    return tape.push(std::move(out), true, [x, arg](Tape& t, const Tensor& g) {
        t.accumulate_into(x)[arg] += g[0];
    });
}

} // namespace mivae::diff
