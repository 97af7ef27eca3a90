#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mcnet/core/errors.hpp"
#include "mcnet/core/tensor.hpp"

namespace mcnet::ad {

struct Node {
    Tensor val;
    Tensor grad;  // allocated only when requires_grad
    bool requires_grad = false;
    std::string name;
};

using Var = std::shared_ptr<Node>;

inline Var make_var(Tensor v, bool requires_grad = true, std::string name = {}) {
    auto n = std::make_shared<Node>();
    n->requires_grad = requires_grad;
    if (requires_grad) n->grad = Tensor::zeros(v.shape());
    n->val = std::move(v);
    n->name = std::move(name);
    return n;
}

inline Var constant(Tensor v, std::string name = {}) {
    return make_var(std::move(v), false, std::move(name));
}

// Reverse-mode tape. Ops append closures in execution order; backward() runs
// them in reverse. Passing a null Tape* to any op disables recording, which
// is the evaluation mode (values only, no gradient graph).
class Tape {
public:
    void record(std::function<void()> back) { ops_.push_back(std::move(back)); }

    void backward(const Var& root) {
        if (root->val.numel() != 1) throw NumericError("Tape::backward: root must be scalar");
        if (!root->requires_grad) throw NumericError("Tape::backward: root does not require grad");
        root->grad[0] += 1.0;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

    std::size_t size() const { return ops_.size(); }
    void clear() { ops_.clear(); }

private:
    std::vector<std::function<void()>> ops_;
};

namespace detail {

inline bool track(Tape* t, std::initializer_list<const Var*> ins) {
    if (t == nullptr) return false;
    for (const Var* v : ins) {
        if ((*v)->requires_grad) return true;
    }
    return false;
}

inline Var out_like(Tensor v, bool tracked) { return make_var(std::move(v), tracked); }

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline Var add(Tape* t, const Var& a, const Var& b) {
    if (!a->val.same_shape(b->val)) throw ConfigError("add: shape mismatch " + a->val.shape_str() + " vs " + b->val.shape_str());
    bool tracked = detail::track(t, {&a, &b});
    Tensor v(a->val.shape());
    const std::int64_t n = v.numel();
    for (std::int64_t i = 0; i < n; ++i) v[i] = a->val[i] + b->val[i];
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([a, b, out] {
            const std::int64_t m = out->grad.numel();
            if (a->requires_grad)
                for (std::int64_t i = 0; i < m; ++i) a->grad[i] += out->grad[i];
            if (b->requires_grad)
                for (std::int64_t i = 0; i < m; ++i) b->grad[i] += out->grad[i];
        });
    }
    return out;
}

inline Var sub(Tape* t, const Var& a, const Var& b) {
    if (!a->val.same_shape(b->val)) throw ConfigError("sub: shape mismatch " + a->val.shape_str() + " vs " + b->val.shape_str());
    bool tracked = detail::track(t, {&a, &b});
    Tensor v(a->val.shape());
    const std::int64_t n = v.numel();
    for (std::int64_t i = 0; i < n; ++i) v[i] = a->val[i] - b->val[i];
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([a, b, out] {
            const std::int64_t m = out->grad.numel();
            if (a->requires_grad)
                for (std::int64_t i = 0; i < m; ++i) a->grad[i] += out->grad[i];
            if (b->requires_grad)
                for (std::int64_t i = 0; i < m; ++i) b->grad[i] -= out->grad[i];
        });
    }
    return out;
}

inline Var mul(Tape* t, const Var& a, const Var& b) {
    if (!a->val.same_shape(b->val)) throw ConfigError("mul: shape mismatch");
    bool tracked = detail::track(t, {&a, &b});
    Tensor v(a->val.shape());
    const std::int64_t n = v.numel();
    for (std::int64_t i = 0; i < n; ++i) v[i] = a->val[i] * b->val[i];
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([a, b, out] {
            const std::int64_t m = out->grad.numel();
            if (a->requires_grad)
                for (std::int64_t i = 0; i < m; ++i) a->grad[i] += out->grad[i] * b->val[i];
            if (b->requires_grad)
                for (std::int64_t i = 0; i < m; ++i) b->grad[i] += out->grad[i] * a->val[i];
        });
    }
    return out;
}

inline Var scale(Tape* t, const Var& a, double c) {
    bool tracked = detail::track(t, {&a});
    Tensor v(a->val.shape());
    const std::int64_t n = v.numel();
    for (std::int64_t i = 0; i < n; ++i) v[i] = a->val[i] * c;
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([a, out, c] {
            const std::int64_t m = out->grad.numel();
            for (std::int64_t i = 0; i < m; ++i) a->grad[i] += out->grad[i] * c;
        });
    }
    return out;
}

// Division by a constant; kept separate from scale so that x/c reproduces
// the exact IEEE quotient (scale by 1/c rounds the reciprocal first).
inline Var div_scalar(Tape* t, const Var& a, double c) {
    if (c == 0.0) throw NumericError("div_scalar: division by zero");
    bool tracked = detail::track(t, {&a});
    Tensor v(a->val.shape());
    const std::int64_t n = v.numel();
    for (std::int64_t i = 0; i < n; ++i) v[i] = a->val[i] / c;
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([a, out, c] {
            const std::int64_t m = out->grad.numel();
            for (std::int64_t i = 0; i < m; ++i) a->grad[i] += out->grad[i] / c;
        });
    }
    return out;
}

inline Var relu(Tape* t, const Var& a) {
    bool tracked = detail::track(t, {&a});
    Tensor v(a->val.shape());
    const std::int64_t n = v.numel();
    for (std::int64_t i = 0; i < n; ++i) v[i] = a->val[i] > 0.0 ? a->val[i] : 0.0;
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([a, out] {
            const std::int64_t m = out->grad.numel();
            for (std::int64_t i = 0; i < m; ++i)
                if (a->val[i] > 0.0) a->grad[i] += out->grad[i];
        });
    }
    return out;
}

inline Var square(Tape* t, const Var& a) {
    bool tracked = detail::track(t, {&a});
    Tensor v(a->val.shape());
    const std::int64_t n = v.numel();
    for (std::int64_t i = 0; i < n; ++i) v[i] = a->val[i] * a->val[i];
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([a, out] {
            const std::int64_t m = out->grad.numel();
            for (std::int64_t i = 0; i < m; ++i) a->grad[i] += 2.0 * a->val[i] * out->grad[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Var reshape(Tape* t, const Var& a, std::vector<int> shape) {
    if (Tensor::numel_of(shape) != a->val.numel())
        throw ConfigError("reshape: element count mismatch");
    bool tracked = detail::track(t, {&a});
    Tensor v(shape, a->val.vec());
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([a, out] {
            const std::int64_t m = out->grad.numel();
            for (std::int64_t i = 0; i < m; ++i) a->grad[i] += out->grad[i];
        });
    }
    return out;
}

inline Var narrow_rows(Tape* t, const Var& a, int start, int len) {
    if (a->val.rank() != 2) throw ConfigError("narrow_rows: expects rank-2");
    const int rows = a->val.dim(0), cols = a->val.dim(1);
    if (start < 0 || start + len > rows) throw ConfigError("narrow_rows: out of range");
    bool tracked = detail::track(t, {&a});
    Tensor v({len, cols});
    for (int i = 0; i < len; ++i)
        for (int j = 0; j < cols; ++j) v.at(i, j) = a->val.at(start + i, j);
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([a, out, start, len, cols] {
            for (int i = 0; i < len; ++i)
                for (int j = 0; j < cols; ++j) a->grad.at(start + i, j) += out->grad.at(i, j);
        });
    }
    return out;
}

inline Var narrow_cols(Tape* t, const Var& a, int start, int len) {
    if (a->val.rank() != 2) throw ConfigError("narrow_cols: expects rank-2");
    const int rows = a->val.dim(0), cols = a->val.dim(1);
    if (start < 0 || start + len > cols) throw ConfigError("narrow_cols: out of range");
    bool tracked = detail::track(t, {&a});
    Tensor v({rows, len});
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < len; ++j) v.at(i, j) = a->val.at(i, start + j);
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([a, out, start, len, rows] {
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < len; ++j) a->grad.at(i, start + j) += out->grad.at(i, j);
        });
    }
    return out;
}

inline Var concat_cols(Tape* t, const std::vector<Var>& xs) {
    if (xs.empty()) throw ConfigError("concat_cols: empty input");
    const int rows = xs[0]->val.dim(0);
    int total = 0;
    for (const auto& x : xs) {
        if (x->val.rank() != 2 || x->val.dim(0) != rows)
            throw ConfigError("concat_cols: row mismatch");
        total += x->val.dim(1);
    }
    bool tracked = false;
    if (t != nullptr)
        for (const auto& x : xs) tracked = tracked || x->requires_grad;
    Tensor v({rows, total});
    int off = 0;
    for (const auto& x : xs) {
        const int c = x->val.dim(1);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < c; ++j) v.at(i, off + j) = x->val.at(i, j);
        off += c;
    }
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([xs, out, rows] {
            int o = 0;
            for (const auto& x : xs) {
                const int c = x->val.dim(1);
                if (x->requires_grad)
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < c; ++j) x->grad.at(i, j) += out->grad.at(i, o + j);
                o += c;
            }
        });
    }
    return out;
}

inline Var concat_rows(Tape* t, const std::vector<Var>& xs) {
    if (xs.empty()) throw ConfigError("concat_rows: empty input");
    const int cols = xs[0]->val.dim(1);
    int total = 0;
    for (const auto& x : xs) {
        if (x->val.rank() != 2 || x->val.dim(1) != cols)
            throw ConfigError("concat_rows: col mismatch");
        total += x->val.dim(0);
    }
    bool tracked = false;
    if (t != nullptr)
        for (const auto& x : xs) tracked = tracked || x->requires_grad;
    Tensor v({total, cols});
    int off = 0;
    for (const auto& x : xs) {
        const int r = x->val.dim(0);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < cols; ++j) v.at(off + i, j) = x->val.at(i, j);
        off += r;
    }
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([xs, out, cols] {
            int o = 0;
            for (const auto& x : xs) {
                const int r = x->val.dim(0);
                if (x->requires_grad)
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < cols; ++j) x->grad.at(i, j) += out->grad.at(o + i, j);
                o += r;
            }
        });
    }
    return out;
}

inline Var transpose(Tape* t, const Var& a) {
    if (a->val.rank() != 2) throw ConfigError("transpose: expects rank-2");
    const int m = a->val.dim(0), n = a->val.dim(1);
    bool tracked = detail::track(t, {&a});
    Tensor v({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) v.at(j, i) = a->val.at(i, j);
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([a, out, m, n] {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) a->grad.at(i, j) += out->grad.at(j, i);
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

inline Var matmul(Tape* t, const Var& a, const Var& b) {
    if (a->val.rank() != 2 || b->val.rank() != 2 || a->val.dim(1) != b->val.dim(0))
        throw ConfigError("matmul: incompatible shapes " + a->val.shape_str() + " x " + b->val.shape_str());
    const int m = a->val.dim(0), k = a->val.dim(1), n = b->val.dim(1);
    bool tracked = detail::track(t, {&a, &b});
    Tensor v({m, n});
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double av = a->val.at(i, p);
            if (av == 0.0) continue;
            for (int j = 0; j < n; ++j) v.at(i, j) += av * b->val.at(p, j);
        }
    }
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([a, b, out, m, k, n] {
            if (a->requires_grad) {
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        const double g = out->grad.at(i, j);
                        if (g == 0.0) continue;
                        for (int p = 0; p < k; ++p) a->grad.at(i, p) += g * b->val.at(p, j);
                    }
            }
            if (b->requires_grad) {
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        const double av = a->val.at(i, p);
                        if (av == 0.0) continue;
                        for (int j = 0; j < n; ++j) b->grad.at(p, j) += av * out->grad.at(i, j);
                    }
            }
        });
    }
    return out;
}

// A (m,k) x B(n,k)^T -> (m,n)
inline Var matmul_nt(Tape* t, const Var& a, const Var& b) {
    if (a->val.rank() != 2 || b->val.rank() != 2 || a->val.dim(1) != b->val.dim(1))
        throw ConfigError("matmul_nt: incompatible shapes " + a->val.shape_str() + " x " + b->val.shape_str());
    const int m = a->val.dim(0), k = a->val.dim(1), n = b->val.dim(0);
    bool tracked = detail::track(t, {&a, &b});
    Tensor v({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += a->val.at(i, p) * b->val.at(j, p);
            v.at(i, j) = s;
        }
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([a, b, out, m, k, n] {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const double g = out->grad.at(i, j);
                    if (g == 0.0) continue;
                    if (a->requires_grad)
                        for (int p = 0; p < k; ++p) a->grad.at(i, p) += g * b->val.at(j, p);
                    if (b->requires_grad)
                        for (int p = 0; p < k; ++p) b->grad.at(j, p) += g * a->val.at(i, p);
                }
        });
    }
    return out;
}

// x(N,Di) * w(Do,Di)^T + b(Do) -> (N,Do)
inline Var linear(Tape* t, const Var& x, const Var& w, const Var& b) {
    if (x->val.rank() != 2 || w->val.rank() != 2 || x->val.dim(1) != w->val.dim(1))
        throw ConfigError("linear: incompatible shapes " + x->val.shape_str() + " x " + w->val.shape_str());
    const int n = x->val.dim(0), di = x->val.dim(1), dout = w->val.dim(0);
    if (b->val.rank() != 1 || b->val.dim(0) != dout) throw ConfigError("linear: bad bias shape");
    bool tracked = detail::track(t, {&x, &w, &b});
    Tensor v({n, dout});
    for (int i = 0; i < n; ++i)
        for (int o = 0; o < dout; ++o) {
            double s = b->val[o];
            for (int p = 0; p < di; ++p) s += x->val.at(i, p) * w->val.at(o, p);
            v.at(i, o) = s;
        }
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([x, w, b, out, n, di, dout] {
            for (int i = 0; i < n; ++i)
                for (int o = 0; o < dout; ++o) {
                    const double g = out->grad.at(i, o);
                    if (g == 0.0) continue;
                    if (x->requires_grad)
                        for (int p = 0; p < di; ++p) x->grad.at(i, p) += g * w->val.at(o, p);
                    if (w->requires_grad)
                        for (int p = 0; p < di; ++p) w->grad.at(o, p) += g * x->val.at(i, p);
                    if (b->requires_grad) b->grad[o] += g;
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions and row ops
// ---------------------------------------------------------------------------

inline Var sum_all(Tape* t, const Var& a) {
    bool tracked = detail::track(t, {&a});
    double s = 0.0;
    const std::int64_t n = a->val.numel();
    for (std::int64_t i = 0; i < n; ++i) s += a->val[i];
    Var out = detail::out_like(Tensor::scalar(s), tracked);
    if (tracked) {
        t->record([a, out, n] {
            const double g = out->grad[0];
            for (std::int64_t i = 0; i < n; ++i) a->grad[i] += g;
        });
    }
    return out;
}

inline Var mean_all(Tape* t, const Var& a) {
    const std::int64_t n = a->val.numel();
    if (n == 0) throw ConfigError("mean_all: empty tensor");
    bool tracked = detail::track(t, {&a});
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += a->val[i];
    Var out = detail::out_like(Tensor::scalar(s / static_cast<double>(n)), tracked);
    if (tracked) {
        t->record([a, out, n] {
            const double g = out->grad[0] / static_cast<double>(n);
            for (std::int64_t i = 0; i < n; ++i) a->grad[i] += g;
        });
    }
    return out;
}

// (T,C) -> (1,C), mean over rows
inline Var mean_rows(Tape* t, const Var& a) {
    if (a->val.rank() != 2) throw ConfigError("mean_rows: expects rank-2");
    const int rows = a->val.dim(0), cols = a->val.dim(1);
    bool tracked = detail::track(t, {&a});
    Tensor v({1, cols});
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) v.at(0, j) += a->val.at(i, j);
    for (int j = 0; j < cols; ++j) v.at(0, j) /= static_cast<double>(rows);
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([a, out, rows, cols] {
            for (int j = 0; j < cols; ++j) {
                const double g = out->grad.at(0, j) / static_cast<double>(rows);
                for (int i = 0; i < rows; ++i) a->grad.at(i, j) += g;
            }
        });
    }
    return out;
}

// L2 norm per row: (N,D) -> (N). Subgradient 0 at the origin.
inline Var row_l2_norm(Tape* t, const Var& a) {
    if (a->val.rank() != 2) throw ConfigError("row_l2_norm: expects rank-2");
    const int n = a->val.dim(0), d = a->val.dim(1);
    bool tracked = detail::track(t, {&a});
    Tensor v({n});
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += a->val.at(i, j) * a->val.at(i, j);
        v[i] = std::sqrt(s);
    }
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([a, out, n, d] {
            for (int i = 0; i < n; ++i) {
                const double r = out->val[i];
                if (r == 0.0) continue;
                const double g = out->grad[i] / r;
                for (int j = 0; j < d; ++j) a->grad.at(i, j) += g * a->val.at(i, j);
            }
        });
    }
    return out;
}

// Row-normalize to unit L2 norm. Throws NumericError naming the row when a
// row has (near-)zero norm, since downstream cosines would be undefined.
inline Var row_l2_normalize(Tape* t, const Var& a, const char* what = "row_l2_normalize") {
    if (a->val.rank() != 2) throw ConfigError("row_l2_normalize: expects rank-2");
    const int n = a->val.dim(0), d = a->val.dim(1);
    bool tracked = detail::track(t, {&a});
    Tensor v({n, d});
    std::vector<double> norms(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += a->val.at(i, j) * a->val.at(i, j);
        const double r = std::sqrt(s);
        if (!(r > 1e-12)) {
            throw NumericError(std::string(what) + ": zero-norm vector at row " + std::to_string(i));
        }
        norms[static_cast<std::size_t>(i)] = r;
        for (int j = 0; j < d; ++j) v.at(i, j) = a->val.at(i, j) / r;
    }
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([a, out, n, d, norms] {
            for (int i = 0; i < n; ++i) {
                const double r = norms[static_cast<std::size_t>(i)];
                double dot = 0.0;
                for (int j = 0; j < d; ++j) dot += out->grad.at(i, j) * out->val.at(i, j);
                for (int j = 0; j < d; ++j)
                    a->grad.at(i, j) += (out->grad.at(i, j) - out->val.at(i, j) * dot) / r;
            }
        });
    }
    return out;
}

// cos per row: (N,D),(N,D) -> (N)
inline Var rowwise_cosine(Tape* t, const Var& a, const Var& b, const char* what = "rowwise_cosine") {
    Var an = row_l2_normalize(t, a, what);
    Var bn = row_l2_normalize(t, b, what);
    Var prod = mul(t, an, bn);
    // sum over columns: (N,D) -> (N)
    const int n = prod->val.dim(0), d = prod->val.dim(1);
    bool tracked = detail::track(t, {&prod});
    Tensor v({n});
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += prod->val.at(i, j);
        v[i] = s;
    }
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([prod, out, n, d] {
            for (int i = 0; i < n; ++i) {
                const double g = out->grad[i];
                for (int j = 0; j < d; ++j) prod->grad.at(i, j) += g;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax / cross-entropy
// ---------------------------------------------------------------------------

inline Var softmax_rows(Tape* t, const Var& a) {
    if (a->val.rank() != 2) throw ConfigError("softmax_rows: expects rank-2");
    const int n = a->val.dim(0), d = a->val.dim(1);
    bool tracked = detail::track(t, {&a});
    Tensor v({n, d});
    for (int i = 0; i < n; ++i) {
        double mx = a->val.at(i, 0);
        for (int j = 1; j < d; ++j) mx = std::max(mx, a->val.at(i, j));
        double z = 0.0;
        for (int j = 0; j < d; ++j) {
            const double e = std::exp(a->val.at(i, j) - mx);
            v.at(i, j) = e;
            z += e;
        }
        for (int j = 0; j < d; ++j) v.at(i, j) /= z;
    }
    Var out = detail::out_like(std::move(v), tracked);
    if (tracked) {
        t->record([a, out, n, d] {
            for (int i = 0; i < n; ++i) {
                double dot = 0.0;
                for (int j = 0; j < d; ++j) dot += out->grad.at(i, j) * out->val.at(i, j);
                for (int j = 0; j < d; ++j)
                    a->grad.at(i, j) += out->val.at(i, j) * (out->grad.at(i, j) - dot);
            }
        });
    }
    return out;
}

// Mean cross-entropy of logits (N,C) against integer labels.
inline Var cross_entropy_mean(Tape* t, const Var& logits, const std::vector<int>& labels) {
    if (logits->val.rank() != 2) throw ConfigError("cross_entropy_mean: expects rank-2 logits");
    const int n = logits->val.dim(0), c = logits->val.dim(1);
    if (static_cast<int>(labels.size()) != n) throw ConfigError("cross_entropy_mean: label count mismatch");
    for (int i = 0; i < n; ++i)
        if (labels[static_cast<std::size_t>(i)] < 0 || labels[static_cast<std::size_t>(i)] >= c)
            throw ConfigError("cross_entropy_mean: label out of range at index " + std::to_string(i));
    bool tracked = detail::track(t, {&logits});
    // keep softmax for the backward pass
    Tensor sm({n, c});
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        double mx = logits->val.at(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, logits->val.at(i, j));
        double z = 0.0;
        for (int j = 0; j < c; ++j) z += std::exp(logits->val.at(i, j) - mx);
        const double lse = mx + std::log(z);
        loss += lse - logits->val.at(i, labels[static_cast<std::size_t>(i)]);
        for (int j = 0; j < c; ++j) sm.at(i, j) = std::exp(logits->val.at(i, j) - lse);
    }
    loss /= static_cast<double>(n);
    Var out = detail::out_like(Tensor::scalar(loss), tracked);
    if (tracked) {
        auto smp = std::make_shared<Tensor>(std::move(sm));
        auto labs = labels;
        t->record([logits, out, smp, labs, n, c] {
            const double g = out->grad[0] / static_cast<double>(n);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j) {
                    double d = smp->at(i, j);
                    if (j == labs[static_cast<std::size_t>(i)]) d -= 1.0;
                    logits->grad.at(i, j) += g * d;
                }
        });
    }
    return out;
}

}  // namespace mcnet::ad
