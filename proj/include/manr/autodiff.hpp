#pragma once

// Minimal reverse-mode automatic differentiation over dense rank-2 arrays.
//
// A Tape records primitives in execution order; Var is a handle into it.
// Parameters enter a tape by reference (no copy) and their gradients are
// read back after backward(). A tape built with record=false only computes
// values.

#include <cmath>
#include <cstddef>
#include <deque>
#include <algorithm>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "manr/errors.hpp"

namespace manr::ad {

// Row-major rank-2 array of doubles. Vectors are 1 x c.
struct Array {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Array() = default;
    Array(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    Array(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
        if (data.size() != r * c) throw ShapeError("data length does not match shape " + shape_string());
    }

    static Array row(std::initializer_list<double> v) { return Array(1, v.size(), std::vector<double>(v)); }
    static Array row(std::span<const double> v) { return Array(1, v.size(), std::vector<double>(v.begin(), v.end())); }
    static Array scalar(double v) { return Array(1, 1, v); }
    static Array identity(std::size_t n) {
        Array a(n, n);
        for (std::size_t i = 0; i < n; ++i) a(i, i) = 1.0;
        return a;
    }

    std::vector<std::size_t> shape() const { return {rows, cols}; }
    std::size_t size() const { return data.size(); }
    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double item() const {
        if (size() != 1) throw ShapeError("item() on non-scalar " + shape_string());
        return data[0];
    }
    std::string shape_string() const { return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]"; }
    bool same_shape(const Array& o) const { return rows == o.rows && cols == o.cols; }

    friend bool operator==(const Array&, const Array&) = default;
};

class Tape;

struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Array& value() const;
    std::size_t rows() const { return value().rows; }
    std::size_t cols() const { return value().cols; }
    double item() const { return value().item(); }
};

class Tape {
public:
    explicit Tape(bool record = true) : record_(record) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return record_; }
    std::size_t size() const { return nodes_.size(); }

    Var constant(Array a) { return push(std::move(a), false); }

    // Leaf that tracks gradient and refers to `a` without copying.
    Var parameter(const Array& a) {
        Node n;
        n.ref = &a;
        n.needs_grad = record_;
        nodes_.push_back(std::move(n));
        return Var{this, nodes_.size() - 1};
    }

    // Leaf that owns its value and tracks gradient.
    Var variable(Array a) { return push(std::move(a), record_); }

    const Array& value(std::size_t id) const {
        const Node& n = nodes_[id];
        return n.ref ? *n.ref : n.value;
    }

    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

    // Result node; `back` runs only when some input tracks gradient.
    template <typename Back>
    Var emit(Array value, std::initializer_list<Var> inputs, Back&& back) {
        bool ng = false;
        if (record_) {
            for (const Var& v : inputs) ng = ng || nodes_[v.id].needs_grad;
        }
        Var out = push(std::move(value), ng);
        if (ng) nodes_[out.id].back = std::forward<Back>(back);
        return out;
    }

    template <typename Back>
    Var emit(Array value, std::span<const Var> inputs, Back&& back) {
        bool ng = false;
        if (record_) {
            for (const Var& v : inputs) ng = ng || nodes_[v.id].needs_grad;
        }
        Var out = push(std::move(value), ng);
        if (ng) nodes_[out.id].back = std::forward<Back>(back);
        return out;
    }

    // Gradient buffer of a node, allocated on first use.
    Array& grad_ref(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.size() == 0) {
            const Array& v = value(id);
            n.grad = Array(v.rows, v.cols);
        }
        return n.grad;
    }

    // Gradient of the last backward() output with respect to v (zeros if
    // v did not influence it).
    Array grad(Var v) const {
        const Node& n = nodes_[v.id];
        if (n.grad.size() == 0) {
            const Array& val = value(v.id);
            return Array(val.rows, val.cols);
        }
        return n.grad;
    }

    void backward(Var out) {
        if (out.tape != this) throw ContractError("backward on a foreign variable");
        if (value(out.id).size() != 1) {
            throw ContractError("backward requires a scalar output, got " + value(out.id).shape_string());
        }
        for (Node& n : nodes_) n.grad = Array();
        if (!nodes_[out.id].needs_grad) return;
        grad_ref(out.id).data[0] = 1.0;
        for (std::size_t i = out.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.back && n.grad.size() != 0) n.back(n.grad, n.ref ? *n.ref : n.value);
        }
    }

private:
    struct Node {
        Array value;
        const Array* ref = nullptr;
        Array grad;
        bool needs_grad = false;
        std::function<void(const Array&, const Array&)> back;
    };

    Var push(Array a, bool needs_grad) {
        Node n;
        n.value = std::move(a);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return Var{this, nodes_.size() - 1};
    }

    bool record_;
    std::deque<Node> nodes_;
};

inline const Array& Var::value() const { return tape->value(id); }

namespace detail {

inline Tape& same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw ContractError("variables from different tapes");
    return *a.tape;
}

inline void accumulate(Tape& t, Var v, const Array& g) {
    if (!t.needs_grad(v.id)) return;
    Array& dst = t.grad_ref(v.id);
    for (std::size_t i = 0; i < g.data.size(); ++i) dst.data[i] += g.data[i];
}

[[noreturn]] inline void shape_fail(const char* op, const Array& a, const Array& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " + b.shape_string());
}

// C += A * B
inline void gemm_acc(const Array& A, const Array& B, Array& C) {
    const std::size_t n = A.rows, k = A.cols, m = B.cols;
    for (std::size_t i = 0; i < n; ++i) {
        double* c = &C.data[i * m];
        for (std::size_t p = 0; p < k; ++p) {
            const double a = A.data[i * k + p];
            if (a == 0.0) continue;
            const double* b = &B.data[p * m];
            for (std::size_t j = 0; j < m; ++j) c[j] += a * b[j];
        }
    }
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    const Array& A = a.value();
    const Array& B = b.value();
    if (A.cols != B.rows) detail::shape_fail("matmul", A, B);
    Array C(A.rows, B.cols);
    detail::gemm_acc(A, B, C);
    return t.emit(std::move(C), {a, b}, [a, b](const Array& g, const Array&) {
        Tape& t = *a.tape;
        const Array& A = a.value();
        const Array& B = b.value();
        const std::size_t n = A.rows, k = A.cols, m = B.cols;
        if (t.needs_grad(a.id)) {
            Array& dA = t.grad_ref(a.id);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double* gi = &g.data[i * m];
                    const double* bp = &B.data[p * m];
                    double s = 0.0;
                    for (std::size_t j = 0; j < m; ++j) s += gi[j] * bp[j];
                    dA.data[i * k + p] += s;
                }
            }
        }
        if (t.needs_grad(b.id)) {
            Array& dB = t.grad_ref(b.id);
            for (std::size_t i = 0; i < n; ++i) {
                const double* gi = &g.data[i * m];
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = A.data[i * k + p];
                    if (av == 0.0) continue;
                    double* d = &dB.data[p * m];
                    for (std::size_t j = 0; j < m; ++j) d[j] += av * gi[j];
                }
            }
        }
    });
}

// a + b; b may also be a 1 x c row broadcast over the rows of a.
inline Var add(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    const Array& A = a.value();
    const Array& B = b.value();
    const bool bcast = !A.same_shape(B);
    if (bcast && !(B.rows == 1 && B.cols == A.cols)) detail::shape_fail("add", A, B);
    Array C = A;
    if (!bcast) {
        for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] += B.data[i];
    } else {
        for (std::size_t r = 0; r < C.rows; ++r) {
            for (std::size_t c = 0; c < C.cols; ++c) C.data[r * C.cols + c] += B.data[c];
        }
    }
    return t.emit(std::move(C), {a, b}, [a, b, bcast](const Array& g, const Array&) {
        Tape& t = *a.tape;
        detail::accumulate(t, a, g);
        if (!t.needs_grad(b.id)) return;
        if (!bcast) {
            detail::accumulate(t, b, g);
        } else {
            Array& dB = t.grad_ref(b.id);
            for (std::size_t r = 0; r < g.rows; ++r) {
                for (std::size_t c = 0; c < g.cols; ++c) dB.data[c] += g.data[r * g.cols + c];
            }
        }
    });
}

inline Var sub(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    const Array& A = a.value();
    const Array& B = b.value();
    if (!A.same_shape(B)) detail::shape_fail("sub", A, B);
    Array C = A;
    for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] -= B.data[i];
    return t.emit(std::move(C), {a, b}, [a, b](const Array& g, const Array&) {
        Tape& t = *a.tape;
        detail::accumulate(t, a, g);
        if (t.needs_grad(b.id)) {
            Array& dB = t.grad_ref(b.id);
            for (std::size_t i = 0; i < g.data.size(); ++i) dB.data[i] -= g.data[i];
        }
    });
}

// Elementwise product.
inline Var mul(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    const Array& A = a.value();
    const Array& B = b.value();
    if (!A.same_shape(B)) detail::shape_fail("mul", A, B);
    Array C = A;
    for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] *= B.data[i];
    return t.emit(std::move(C), {a, b}, [a, b](const Array& g, const Array&) {
        Tape& t = *a.tape;
        const Array& A = a.value();
        const Array& B = b.value();
        if (t.needs_grad(a.id)) {
            Array& d = t.grad_ref(a.id);
            for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] += g.data[i] * B.data[i];
        }
        if (t.needs_grad(b.id)) {
            Array& d = t.grad_ref(b.id);
            for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] += g.data[i] * A.data[i];
        }
    });
}

inline Var scale(Var a, double s) {
    Array C = a.value();
    for (double& x : C.data) x *= s;
    return a.tape->emit(std::move(C), {a}, [a, s](const Array& g, const Array&) {
        Array& d = a.tape->grad_ref(a.id);
        for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] += s * g.data[i];
    });
}

inline Var add_scalar(Var a, double s) {
    Array C = a.value();
    for (double& x : C.data) x += s;
    return a.tape->emit(std::move(C), {a}, [a](const Array& g, const Array&) { detail::accumulate(*a.tape, a, g); });
}


inline Var tanh(Var a) {
    Array C = a.value();
    for (double& x : C.data) x = std::tanh(x);
    return a.tape->emit(std::move(C), {a}, [a](const Array& g, const Array& y) {
        Array& d = a.tape->grad_ref(a.id);
        for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
    });
}

inline Var sigmoid(Var a) {
    Array C = a.value();
    for (double& x : C.data) x = 1.0 / (1.0 + std::exp(-x));
    return a.tape->emit(std::move(C), {a}, [a](const Array& g, const Array& y) {
        Array& d = a.tape->grad_ref(a.id);
        for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
    });
}

inline Var relu(Var a) {
    Array C = a.value();
    for (double& x : C.data) x = x > 0.0 ? x : 0.0;
    return a.tape->emit(std::move(C), {a}, [a](const Array& g, const Array&) {
        const Array& x = a.value();
        Array& d = a.tape->grad_ref(a.id);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            if (x.data[i] > 0.0) d.data[i] += g.data[i];
        }
    });
}

inline Var log(Var a) {
    Array C = a.value();
    for (double& x : C.data) x = std::log(x);
    return a.tape->emit(std::move(C), {a}, [a](const Array& g, const Array&) {
        const Array& x = a.value();
        Array& d = a.tape->grad_ref(a.id);
        for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] += g.data[i] / x.data[i];
    });
}

inline Var square(Var a) { return mul(a, a); }

// Row-wise softmax.
inline Var softmax(Var a) {
    const Array& A = a.value();
    Array C(A.rows, A.cols);
    for (std::size_t r = 0; r < A.rows; ++r) {
        double mx = -INFINITY;
        for (std::size_t c = 0; c < A.cols; ++c) mx = std::max(mx, A(r, c));
        double s = 0.0;
        for (std::size_t c = 0; c < A.cols; ++c) s += (C(r, c) = std::exp(A(r, c) - mx));
        for (std::size_t c = 0; c < A.cols; ++c) C(r, c) /= s;
    }
    return a.tape->emit(std::move(C), {a}, [a](const Array& g, const Array& y) {
        Array& d = a.tape->grad_ref(a.id);
        for (std::size_t r = 0; r < y.rows; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < y.cols; ++c) dot += g(r, c) * y(r, c);
            for (std::size_t c = 0; c < y.cols; ++c) d(r, c) += y(r, c) * (g(r, c) - dot);
        }
    });
}

// Row-wise log-softmax.
inline Var log_softmax(Var a) {
    const Array& A = a.value();
    Array C(A.rows, A.cols);
    for (std::size_t r = 0; r < A.rows; ++r) {
        double mx = -INFINITY;
        for (std::size_t c = 0; c < A.cols; ++c) mx = std::max(mx, A(r, c));
        double s = 0.0;
        for (std::size_t c = 0; c < A.cols; ++c) s += std::exp(A(r, c) - mx);
        const double lse = mx + std::log(s);
        for (std::size_t c = 0; c < A.cols; ++c) C(r, c) = A(r, c) - lse;
    }
    return a.tape->emit(std::move(C), {a}, [a](const Array& g, const Array& y) {
        Array& d = a.tape->grad_ref(a.id);
        for (std::size_t r = 0; r < y.rows; ++r) {
            double gs = 0.0;
            for (std::size_t c = 0; c < y.cols; ++c) gs += g(r, c);
            for (std::size_t c = 0; c < y.cols; ++c) d(r, c) += g(r, c) - std::exp(y(r, c)) * gs;
        }
    });
}

inline Var transpose(Var a) {
    const Array& A = a.value();
    Array C(A.cols, A.rows);
    for (std::size_t r = 0; r < A.rows; ++r) {
        for (std::size_t c = 0; c < A.cols; ++c) C(c, r) = A(r, c);
    }
    return a.tape->emit(std::move(C), {a}, [a](const Array& g, const Array&) {
        Array& d = a.tape->grad_ref(a.id);
        for (std::size_t r = 0; r < d.rows; ++r) {
            for (std::size_t c = 0; c < d.cols; ++c) d(r, c) += g(c, r);
        }
    });
}

inline Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t rows = parts[0].rows();
    std::size_t cols = 0;
    for (const Var& p : parts) {
        if (p.tape != parts[0].tape) throw ContractError("variables from different tapes");
        if (p.rows() != rows) detail::shape_fail("concat_cols", parts[0].value(), p.value());
        cols += p.cols();
    }
    Array C(rows, cols);
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Array& P = p.value();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy(P.data.begin() + r * P.cols, P.data.begin() + (r + 1) * P.cols, C.data.begin() + r * cols + off);
        }
        off += P.cols;
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return parts[0].tape->emit(std::move(C), std::span<const Var>(inputs), [inputs, cols](const Array& g, const Array&) {
        std::size_t off = 0;
        for (const Var& p : inputs) {
            const std::size_t pc = p.cols();
            if (p.tape->needs_grad(p.id)) {
                Array& d = p.tape->grad_ref(p.id);
                for (std::size_t r = 0; r < d.rows; ++r) {
                    for (std::size_t c = 0; c < pc; ++c) d(r, c) += g.data[r * cols + off + c];
                }
            }
            off += pc;
        }
    });
}

inline Var concat_cols(std::initializer_list<Var> parts) {
    return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::size_t cols = parts[0].cols();
    std::size_t rows = 0;
    for (const Var& p : parts) {
        if (p.tape != parts[0].tape) throw ContractError("variables from different tapes");
        if (p.cols() != cols) detail::shape_fail("concat_rows", parts[0].value(), p.value());
        rows += p.rows();
    }
    Array C(rows, cols);
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Array& P = p.value();
        std::copy(P.data.begin(), P.data.end(), C.data.begin() + off * cols);
        off += P.rows;
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return parts[0].tape->emit(std::move(C), std::span<const Var>(inputs), [inputs, cols](const Array& g, const Array&) {
        std::size_t off = 0;
        for (const Var& p : inputs) {
            const std::size_t n = p.rows() * cols;
            if (p.tape->needs_grad(p.id)) {
                Array& d = p.tape->grad_ref(p.id);
                for (std::size_t i = 0; i < n; ++i) d.data[i] += g.data[off * cols + i];
            }
            off += p.rows();
        }
    });
}

inline Var concat_rows(std::initializer_list<Var> parts) {
    return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

// Columns [c0, c1).
inline Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
    const Array& A = a.value();
    if (c0 > c1 || c1 > A.cols) throw ShapeError("slice_cols out of range for " + A.shape_string());
    const std::size_t w = c1 - c0;
    Array C(A.rows, w);
    for (std::size_t r = 0; r < A.rows; ++r) {
        for (std::size_t c = 0; c < w; ++c) C(r, c) = A(r, c0 + c);
    }
    return a.tape->emit(std::move(C), {a}, [a, c0, w](const Array& g, const Array&) {
        Array& d = a.tape->grad_ref(a.id);
        for (std::size_t r = 0; r < g.rows; ++r) {
            for (std::size_t c = 0; c < w; ++c) d(r, c0 + c) += g(r, c);
        }
    });
}

// Selected rows, in the given order (repeats allowed).
inline Var gather_rows(Var a, std::vector<std::size_t> idx) {
    const Array& A = a.value();
    Array C(idx.size(), A.cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= A.rows) throw ShapeError("gather_rows index out of range for " + A.shape_string());
        std::copy(A.data.begin() + idx[i] * A.cols, A.data.begin() + (idx[i] + 1) * A.cols, C.data.begin() + i * A.cols);
    }
    return a.tape->emit(std::move(C), {a}, [a, idx = std::move(idx)](const Array& g, const Array&) {
        Array& d = a.tape->grad_ref(a.id);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            for (std::size_t c = 0; c < g.cols; ++c) d(idx[i], c) += g(i, c);
        }
    });
}

inline Var row(Var a, std::size_t r) { return gather_rows(a, {r}); }

// Repeat a 1 x c row r times.
inline Var broadcast_rows(Var a, std::size_t r) {
    const Array& A = a.value();
    if (A.rows != 1) throw ShapeError("broadcast_rows needs a row, got " + A.shape_string());
    return gather_rows(a, std::vector<std::size_t>(r, 0));
}

// Element (r, c) as a 1 x 1 array.
inline Var pick(Var a, std::size_t r, std::size_t c) {
    const Array& A = a.value();
    if (r >= A.rows || c >= A.cols) throw ShapeError("pick out of range for " + A.shape_string());
    return a.tape->emit(Array::scalar(A(r, c)), {a}, [a, r, c](const Array& g, const Array&) {
        a.tape->grad_ref(a.id)(r, c) += g.data[0];
    });
}

inline Var sum(Var a) {
    double s = 0.0;
    for (double x : a.value().data) s += x;
    return a.tape->emit(Array::scalar(s), {a}, [a](const Array& g, const Array&) {
        Array& d = a.tape->grad_ref(a.id);
        for (double& x : d.data) x += g.data[0];
    });
}

inline Var mean(Var a) {
    const std::size_t n = a.value().size();
    if (n == 0) throw ShapeError("mean of empty array");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

// Column-wise mean over rows: r x c -> 1 x c.
inline Var mean_rows(Var a) {
    const Array& A = a.value();
    if (A.rows == 0) throw ShapeError("mean_rows of empty array");
    Array C(1, A.cols);
    for (std::size_t r = 0; r < A.rows; ++r) {
        for (std::size_t c = 0; c < A.cols; ++c) C.data[c] += A(r, c);
    }
    const double inv = 1.0 / static_cast<double>(A.rows);
    for (double& x : C.data) x *= inv;
    return a.tape->emit(std::move(C), {a}, [a, inv](const Array& g, const Array&) {
        Array& d = a.tape->grad_ref(a.id);
        for (std::size_t r = 0; r < d.rows; ++r) {
            for (std::size_t c = 0; c < d.cols; ++c) d(r, c) += g.data[c] * inv;
        }
    });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

}  // namespace manr::ad
