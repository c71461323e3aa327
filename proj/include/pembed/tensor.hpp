#pragma once

// Dense row-major 2-D tensors with reverse-mode autodiff on a per-forward-pass tape.
//
// Design notes:
//  - Every tensor is a [rows x cols] matrix; vectors are [1 x n] rows and scalars
//    are [1 x 1]. Data is shared (copy-on-never: ops never mutate inputs).
//  - A tensor produced under an active TapeScope carries (tape_id, node). Trainable
//    leaves carry a GradSlot; the slot's grad buffer is allocated lazily the first
//    time a backward pass actually reaches the leaf, which makes "was a gradient
//    buffer ever allocated" an auditable fact.
//  - backward() walks the tape in exact reverse recording order, so gradients are
//    deterministic for a fixed op sequence.
//  - NaN/Inf in any op output is a hard numeric_error.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "pembed/errors.hpp"

namespace pembed {

template <typename S>
struct GradSlot {
    std::string name;
    std::vector<S> grad;
    bool allocated = false;
};

template <typename S>
class TapeT;

template <typename S>
TapeT<S>*& tls_active_tape() {
    thread_local TapeT<S>* t = nullptr;
    return t;
}

inline std::uint64_t next_tape_id() {
    static std::uint64_t counter = 0;
    return ++counter;  // tapes are thread-confined; creation is rare enough to keep simple
}

template <typename S>
struct TensorT {
    int rows = 0;
    int cols = 0;
    std::shared_ptr<std::vector<S>> data;
    std::shared_ptr<GradSlot<S>> slot;  // set iff this tensor is a trainable leaf
    std::uint64_t tape_id = 0;
    int node = -1;

    TensorT() = default;

    TensorT(int r, int c) : rows(r), cols(c) {
        if (r < 0 || c <= 0) {
            throw dim_error("tensor shape [" + std::to_string(r) + " x " + std::to_string(c) +
                            "]: rows must be >= 0 and cols positive");
        }
        data = std::make_shared<std::vector<S>>(static_cast<std::size_t>(r) * c, S(0));
    }

    static TensorT from_data(int r, int c, std::vector<S> v) {
        TensorT t(r, c);
        if (v.size() != t.numel()) {
            throw dim_error("from_data: " + std::to_string(v.size()) + " values for shape [" +
                            std::to_string(r) + " x " + std::to_string(c) + "]");
        }
        *t.data = std::move(v);
        t.ensure_finite("from_data");
        return t;
    }

    std::size_t numel() const { return static_cast<std::size_t>(rows) * cols; }
    S* ptr() { return data->data(); }
    const S* ptr() const { return data->data(); }
    S at(int i, int j) const { return (*data)[static_cast<std::size_t>(i) * cols + j]; }
    S& at(int i, int j) { return (*data)[static_cast<std::size_t>(i) * cols + j]; }

    // scalar read; contract-checked
    S value() const {
        if (numel() != 1) throw contract_error("value(): tensor is not scalar");
        return (*data)[0];
    }

    bool has_node() const { return node >= 0; }

    void mark_trainable(const std::string& name) {
        slot = std::make_shared<GradSlot<S>>();
        slot->name = name;
    }

    void ensure_finite(const char* what) const {
        for (S v : *data) {
            if (!std::isfinite(static_cast<double>(v))) {
                throw numeric_error(std::string(what) + ": non-finite value in output");
            }
        }
    }

    std::string shape_str() const {
        return "[" + std::to_string(rows) + " x " + std::to_string(cols) + "]";
    }
};

template <typename S>
class TapeT {
public:
    TapeT() : id_(next_tape_id()) {}
    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    std::uint64_t id() const { return id_; }

    int fresh_node(std::size_t numel) {
        node_size_.push_back(numel);
        grads_.emplace_back();
        return static_cast<int>(node_size_.size()) - 1;
    }

    // gradient buffer for a node, zero-initialized on first touch
    std::vector<S>& grad_of(int node) {
        auto& g = grads_[static_cast<std::size_t>(node)];
        if (g.empty()) g.assign(node_size_[static_cast<std::size_t>(node)], S(0));
        return g;
    }

    bool grad_present(int node) const { return !grads_[static_cast<std::size_t>(node)].empty(); }
    const std::vector<S>& grad_view(int node) const { return grads_[static_cast<std::size_t>(node)]; }

    void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }

    // Memoized leaf registration: one node per trainable slot per tape.
    int leaf_node(const TensorT<S>& t) {
        auto it = leaf_map_.find(t.slot.get());
        if (it != leaf_map_.end()) return it->second;
        int n = fresh_node(t.numel());
        leaf_map_.emplace(t.slot.get(), n);
        leaves_.push_back({t.slot, n});
        return n;
    }

    // Reverse sweep, then flush leaf gradients into their persistent slots (+=,
    // so micro-batch accumulation across tapes falls out naturally).
    void backward(const TensorT<S>& loss) {
        if (loss.numel() != 1) {
            throw contract_error("backward: loss must be scalar, got " + loss.shape_str());
        }
        if (loss.tape_id != id_ || loss.node < 0) {
            throw contract_error("backward: loss is not on the live tape");
        }
        if (used_) throw contract_error("backward: tape already consumed");
        used_ = true;
        grad_of(loss.node)[0] += S(1);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
        for (auto& [slot, node] : leaves_) {
            if (!grad_present(node)) continue;
            const auto& g = grad_view(node);
            if (slot->grad.size() != g.size()) slot->grad.assign(g.size(), S(0));
            for (std::size_t i = 0; i < g.size(); ++i) slot->grad[i] += g[i];
            slot->allocated = true;
        }
    }

    std::size_t num_entries() const { return entries_.size(); }

private:
    std::uint64_t id_;
    std::vector<std::size_t> node_size_;
    std::vector<std::vector<S>> grads_;
    std::vector<std::function<void()>> entries_;
    std::unordered_map<GradSlot<S>*, int> leaf_map_;
    std::vector<std::pair<std::shared_ptr<GradSlot<S>>, int>> leaves_;
    bool used_ = false;
};

template <typename S>
class TapeScope {
public:
    explicit TapeScope(TapeT<S>& t) : prev_(tls_active_tape<S>()) { tls_active_tape<S>() = &t; }
    ~TapeScope() { tls_active_tape<S>() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    TapeT<S>* prev_;
};

namespace detail {

// Node of x on the active tape, registering trainable leaves on first use; -1 if
// x cannot carry gradient.
template <typename S>
int node_of(const TensorT<S>& x, TapeT<S>* tape) {
    if (!tape) return -1;
    if (x.tape_id == tape->id() && x.node >= 0) return x.node;
    if (x.slot) return tape->leaf_node(x);
    return -1;
}

template <typename S>
void attach(TensorT<S>& out, TapeT<S>* tape, bool any_parent) {
    if (tape && any_parent) {
        out.tape_id = tape->id();
        out.node = tape->fresh_node(out.numel());
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.cols != b.rows) {
        throw dim_error("matmul: inner dimensions disagree, " + a.shape_str() + " * " + b.shape_str());
    }
    const int m = a.rows, k = a.cols, n = b.cols;
    TensorT<S> out(m, n);
    {
        const S* pa = a.ptr();
        const S* pb = b.ptr();
        S* po = out.ptr();
        for (int i = 0; i < m; ++i) {
            const S* arow = pa + static_cast<std::size_t>(i) * k;
            S* orow = po + static_cast<std::size_t>(i) * n;
            for (int kk = 0; kk < k; ++kk) {
                const S av = arow[kk];
                if (av == S(0)) continue;
                const S* brow = pb + static_cast<std::size_t>(kk) * n;
                for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    }
    out.ensure_finite("matmul");
    TapeT<S>* tp = tls_active_tape<S>();
    int na = detail::node_of(a, tp), nb = detail::node_of(b, tp);
    detail::attach(out, tp, na >= 0 || nb >= 0);
    if (out.node >= 0) {
        auto ad = a.data, bd = b.data;
        int onode = out.node;
        tp->record([=]() {
            if (!tp->grad_present(onode)) return;
            const auto& g = tp->grad_view(onode);
            if (na >= 0) {  // dA += G * B^T
                auto& ga = tp->grad_of(na);
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        S acc = 0;
                        for (int j = 0; j < n; ++j)
                            acc += g[static_cast<std::size_t>(i) * n + j] * (*bd)[static_cast<std::size_t>(kk) * n + j];
                        ga[static_cast<std::size_t>(i) * k + kk] += acc;
                    }
            }
            if (nb >= 0) {  // dB += A^T * G
                auto& gb = tp->grad_of(nb);
                for (int kk = 0; kk < k; ++kk)
                    for (int i = 0; i < m; ++i) {
                        const S av = (*ad)[static_cast<std::size_t>(i) * k + kk];
                        if (av == S(0)) continue;
                        for (int j = 0; j < n; ++j)
                            gb[static_cast<std::size_t>(kk) * n + j] += av * g[static_cast<std::size_t>(i) * n + j];
                    }
            }
        });
    }
    return out;
}

template <typename S>
TensorT<S> transpose(const TensorT<S>& x) {
    TensorT<S> out(x.cols, x.rows);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) out.at(j, i) = x.at(i, j);
    TapeT<S>* tp = tls_active_tape<S>();
    int nx = detail::node_of(x, tp);
    detail::attach(out, tp, nx >= 0);
    if (out.node >= 0) {
        int onode = out.node, r = x.rows, c = x.cols;
        tp->record([=]() {
            if (!tp->grad_present(onode)) return;
            const auto& g = tp->grad_view(onode);
            auto& gx = tp->grad_of(nx);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    gx[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(j) * r + i];
        });
    }
    return out;
}

namespace detail {

template <typename S, typename FwdFn, typename BwdA, typename BwdB>
TensorT<S> binary_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* name,
                             FwdFn fwd, BwdA bwd_a, BwdB bwd_b) {
    if (a.rows != b.rows || a.cols != b.cols) {
        throw dim_error(std::string(name) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    TensorT<S> out(a.rows, a.cols);
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = fwd((*a.data)[i], (*b.data)[i]);
    out.ensure_finite(name);
    TapeT<S>* tp = tls_active_tape<S>();
    int na = node_of(a, tp), nb = node_of(b, tp);
    attach(out, tp, na >= 0 || nb >= 0);
    if (out.node >= 0) {
        auto ad = a.data, bd = b.data;
        int onode = out.node;
        tp->record([=]() {
            if (!tp->grad_present(onode)) return;
            const auto& g = tp->grad_view(onode);
            if (na >= 0) {
                auto& ga = tp->grad_of(na);
                for (std::size_t i = 0; i < n; ++i) ga[i] += bwd_a(g[i], (*ad)[i], (*bd)[i]);
            }
            if (nb >= 0) {
                auto& gb = tp->grad_of(nb);
                for (std::size_t i = 0; i < n; ++i) gb[i] += bwd_b(g[i], (*ad)[i], (*bd)[i]);
            }
        });
    }
    return out;
}

template <typename S, typename FwdFn, typename BwdFn>
TensorT<S> unary_elementwise(const TensorT<S>& x, const char* name, FwdFn fwd, BwdFn bwd) {
    TensorT<S> out(x.rows, x.cols);
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = fwd((*x.data)[i]);
    out.ensure_finite(name);
    TapeT<S>* tp = tls_active_tape<S>();
    int nx = node_of(x, tp);
    attach(out, tp, nx >= 0);
    if (out.node >= 0) {
        auto xd = x.data;
        auto od = out.data;
        int onode = out.node;
        tp->record([=]() {
            if (!tp->grad_present(onode)) return;
            const auto& g = tp->grad_view(onode);
            auto& gx = tp->grad_of(nx);
            for (std::size_t i = 0; i < n; ++i) gx[i] += bwd(g[i], (*xd)[i], (*od)[i]);
        });
    }
    return out;
}

}  // namespace detail

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary_same_shape(a, b, "add",
        [](S x, S y) { return x + y; },
        [](S g, S, S) { return g; },
        [](S g, S, S) { return g; });
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary_same_shape(a, b, "sub",
        [](S x, S y) { return x - y; },
        [](S g, S, S) { return g; },
        [](S g, S, S) { return -g; });
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary_same_shape(a, b, "mul",
        [](S x, S y) { return x * y; },
        [](S g, S, S y) { return g * y; },
        [](S g, S x, S) { return g * x; });
}

template <typename S>
TensorT<S> scale(const TensorT<S>& x, S c) {
    return detail::unary_elementwise(x, "scale",
        [c](S v) { return c * v; },
        [c](S g, S, S) { return c * g; });
}

template <typename S>
TensorT<S> silu(const TensorT<S>& x) {
    return detail::unary_elementwise(x, "silu",
        [](S v) {
            S s = S(1) / (S(1) + std::exp(-v));
            return v * s;
        },
        [](S g, S v, S) {
            S s = S(1) / (S(1) + std::exp(-v));
            return g * (s * (S(1) + v * (S(1) - s)));
        });
}

template <typename S>
TensorT<S> exp(const TensorT<S>& x) {
    return detail::unary_elementwise(x, "exp",
        [](S v) { return std::exp(v); },
        [](S g, S, S y) { return g * y; });
}

template <typename S>
TensorT<S> log(const TensorT<S>& x) {
    for (S v : *x.data)
        if (v <= S(0)) throw numeric_error("log: non-positive input");
    return detail::unary_elementwise(x, "log",
        [](S v) { return std::log(v); },
        [](S g, S v, S) { return g / v; });
}

template <typename S>
TensorT<S> rsqrt(const TensorT<S>& x) {
    for (S v : *x.data)
        if (v <= S(0)) throw numeric_error("rsqrt: non-positive input");
    return detail::unary_elementwise(x, "rsqrt",
        [](S v) { return S(1) / std::sqrt(v); },
        [](S g, S, S y) { return g * S(-0.5) * y * y * y; });
}

// rows idx of E; token-embedding lookup with scatter-add gradient
template <typename S>
TensorT<S> gather_rows(const TensorT<S>& e, const std::vector<int>& idx) {
    for (int i : idx) {
        if (i < 0 || i >= e.rows) {
            throw lookup_error("gather_rows: index " + std::to_string(i) + " out of range [0, " +
                               std::to_string(e.rows) + ")");
        }
    }
    TensorT<S> out(static_cast<int>(idx.size()), e.cols);
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (int j = 0; j < e.cols; ++j) out.at(static_cast<int>(r), j) = e.at(idx[r], j);
    TapeT<S>* tp = tls_active_tape<S>();
    int ne = detail::node_of(e, tp);
    detail::attach(out, tp, ne >= 0);
    if (out.node >= 0) {
        int onode = out.node, c = e.cols;
        auto ids = idx;
        tp->record([=]() {
            if (!tp->grad_present(onode)) return;
            const auto& g = tp->grad_view(onode);
            auto& ge = tp->grad_of(ne);
            for (std::size_t r = 0; r < ids.size(); ++r)
                for (int j = 0; j < c; ++j)
                    ge[static_cast<std::size_t>(ids[r]) * c + j] += g[r * c + j];
        });
    }
    return out;
}

template <typename S>
TensorT<S> concat_rows(const std::vector<TensorT<S>>& parts) {
    if (parts.empty()) throw contract_error("concat_rows: no parts");
    int c = parts[0].cols, total = 0;
    for (const auto& p : parts) {
        if (p.cols != c) {
            throw dim_error("concat_rows: column mismatch " + parts[0].shape_str() + " vs " + p.shape_str());
        }
        total += p.rows;
    }
    TensorT<S> out(total, c);
    int off = 0;
    for (const auto& p : parts) {
        for (int i = 0; i < p.rows; ++i)
            for (int j = 0; j < c; ++j) out.at(off + i, j) = p.at(i, j);
        off += p.rows;
    }
    TapeT<S>* tp = tls_active_tape<S>();
    std::vector<int> nodes(parts.size(), -1);
    bool any = false;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        nodes[i] = detail::node_of(parts[i], tp);
        any = any || nodes[i] >= 0;
    }
    detail::attach(out, tp, any);
    if (out.node >= 0) {
        int onode = out.node;
        std::vector<int> rows_of(parts.size());
        for (std::size_t i = 0; i < parts.size(); ++i) rows_of[i] = parts[i].rows;
        tp->record([=]() {
            if (!tp->grad_present(onode)) return;
            const auto& g = tp->grad_view(onode);
            int roff = 0;
            for (std::size_t p = 0; p < nodes.size(); ++p) {
                if (nodes[p] >= 0) {
                    auto& gp = tp->grad_of(nodes[p]);
                    for (int i = 0; i < rows_of[p]; ++i)
                        for (int j = 0; j < c; ++j)
                            gp[static_cast<std::size_t>(i) * c + j] +=
                                g[static_cast<std::size_t>(roff + i) * c + j];
                }
                roff += rows_of[p];
            }
        });
    }
    return out;
}

template <typename S>
TensorT<S> concat_cols(const std::vector<TensorT<S>>& parts) {
    if (parts.empty()) throw contract_error("concat_cols: no parts");
    int r = parts[0].rows, total = 0;
    for (const auto& p : parts) {
        if (p.rows != r) {
            throw dim_error("concat_cols: row mismatch " + parts[0].shape_str() + " vs " + p.shape_str());
        }
        total += p.cols;
    }
    TensorT<S> out(r, total);
    int off = 0;
    for (const auto& p : parts) {
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < p.cols; ++j) out.at(i, off + j) = p.at(i, j);
        off += p.cols;
    }
    TapeT<S>* tp = tls_active_tape<S>();
    std::vector<int> nodes(parts.size(), -1);
    bool any = false;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        nodes[i] = detail::node_of(parts[i], tp);
        any = any || nodes[i] >= 0;
    }
    detail::attach(out, tp, any);
    if (out.node >= 0) {
        int onode = out.node, tot = total;
        std::vector<int> cols_of(parts.size());
        for (std::size_t i = 0; i < parts.size(); ++i) cols_of[i] = parts[i].cols;
        tp->record([=]() {
            if (!tp->grad_present(onode)) return;
            const auto& g = tp->grad_view(onode);
            int coff = 0;
            for (std::size_t p = 0; p < nodes.size(); ++p) {
                if (nodes[p] >= 0) {
                    auto& gp = tp->grad_of(nodes[p]);
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < cols_of[p]; ++j)
                            gp[static_cast<std::size_t>(i) * cols_of[p] + j] +=
                                g[static_cast<std::size_t>(i) * tot + coff + j];
                }
                coff += cols_of[p];
            }
        });
    }
    return out;
}

template <typename S>
TensorT<S> row(const TensorT<S>& x, int i) {
    if (i < 0 || i >= x.rows) {
        throw lookup_error("row: index " + std::to_string(i) + " out of range for " + x.shape_str());
    }
    TensorT<S> out(1, x.cols);
    for (int j = 0; j < x.cols; ++j) out.at(0, j) = x.at(i, j);
    TapeT<S>* tp = tls_active_tape<S>();
    int nx = detail::node_of(x, tp);
    detail::attach(out, tp, nx >= 0);
    if (out.node >= 0) {
        int onode = out.node, c = x.cols;
        tp->record([=]() {
            if (!tp->grad_present(onode)) return;
            const auto& g = tp->grad_view(onode);
            auto& gx = tp->grad_of(nx);
            for (int j = 0; j < c; ++j) gx[static_cast<std::size_t>(i) * c + j] += g[j];
        });
    }
    return out;
}

template <typename S>
TensorT<S> slice_cols(const TensorT<S>& x, int j0, int len) {
    if (j0 < 0 || len < 1 || j0 + len > x.cols) {
        throw lookup_error("slice_cols: [" + std::to_string(j0) + ", " + std::to_string(j0 + len) +
                           ") out of range for " + x.shape_str());
    }
    TensorT<S> out(x.rows, len);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < len; ++j) out.at(i, j) = x.at(i, j0 + j);
    TapeT<S>* tp = tls_active_tape<S>();
    int nx = detail::node_of(x, tp);
    detail::attach(out, tp, nx >= 0);
    if (out.node >= 0) {
        int onode = out.node, r = x.rows, c = x.cols;
        tp->record([=]() {
            if (!tp->grad_present(onode)) return;
            const auto& g = tp->grad_view(onode);
            auto& gx = tp->grad_of(nx);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < len; ++j)
                    gx[static_cast<std::size_t>(i) * c + j0 + j] += g[static_cast<std::size_t>(i) * len + j];
        });
    }
    return out;
}

// max-subtracted, rowwise
template <typename S>
TensorT<S> softmax_lastdim(const TensorT<S>& x) {
    TensorT<S> out(x.rows, x.cols);
    const int n = x.cols;
    for (int i = 0; i < x.rows; ++i) {
        S mx = x.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
        S sum = 0;
        for (int j = 0; j < n; ++j) {
            S e = std::exp(x.at(i, j) - mx);
            out.at(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < n; ++j) out.at(i, j) /= sum;
    }
    out.ensure_finite("softmax_lastdim");
    TapeT<S>* tp = tls_active_tape<S>();
    int nx = detail::node_of(x, tp);
    detail::attach(out, tp, nx >= 0);
    if (out.node >= 0) {
        int onode = out.node, r = x.rows;
        auto od = out.data;
        tp->record([=]() {
            if (!tp->grad_present(onode)) return;
            const auto& g = tp->grad_view(onode);
            auto& gx = tp->grad_of(nx);
            for (int i = 0; i < r; ++i) {
                const std::size_t base = static_cast<std::size_t>(i) * n;
                S dot = 0;
                for (int j = 0; j < n; ++j) dot += g[base + j] * (*od)[base + j];
                for (int j = 0; j < n; ++j)
                    gx[base + j] += (*od)[base + j] * (g[base + j] - dot);
            }
        });
    }
    return out;
}

// rowwise log(sum(exp(x))), stabilized; output [rows x 1]
template <typename S>
TensorT<S> logsumexp_lastdim(const TensorT<S>& x) {
    TensorT<S> out(x.rows, 1);
    const int n = x.cols;
    for (int i = 0; i < x.rows; ++i) {
        S mx = x.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
        S sum = 0;
        for (int j = 0; j < n; ++j) sum += std::exp(x.at(i, j) - mx);
        out.at(i, 0) = mx + std::log(sum);
    }
    out.ensure_finite("logsumexp_lastdim");
    TapeT<S>* tp = tls_active_tape<S>();
    int nx = detail::node_of(x, tp);
    detail::attach(out, tp, nx >= 0);
    if (out.node >= 0) {
        int onode = out.node, r = x.rows;
        auto xd = x.data;
        auto od = out.data;
        tp->record([=]() {
            if (!tp->grad_present(onode)) return;
            const auto& g = tp->grad_view(onode);
            auto& gx = tp->grad_of(nx);
            for (int i = 0; i < r; ++i) {
                const std::size_t base = static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j)
                    gx[base + j] += g[i] * std::exp((*xd)[base + j] - (*od)[i]);
            }
        });
    }
    return out;
}

// rowwise RMS normalization with a learnable gain row
template <typename S>
TensorT<S> rms_norm_rows(const TensorT<S>& x, const TensorT<S>& gain) {
    if (gain.rows != 1 || gain.cols != x.cols) {
        throw dim_error("rms_norm_rows: gain " + gain.shape_str() + " does not match " + x.shape_str());
    }
    const int n = x.cols;
    const S eps = S(1e-6);
    TensorT<S> out(x.rows, n);
    std::vector<S> inv_rms(static_cast<std::size_t>(x.rows));
    for (int i = 0; i < x.rows; ++i) {
        S ms = 0;
        for (int j = 0; j < n; ++j) ms += x.at(i, j) * x.at(i, j);
        ms = ms / S(n) + eps;
        inv_rms[static_cast<std::size_t>(i)] = S(1) / std::sqrt(ms);
        for (int j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) * inv_rms[static_cast<std::size_t>(i)] * gain.at(0, j);
    }
    out.ensure_finite("rms_norm_rows");
    TapeT<S>* tp = tls_active_tape<S>();
    int nx = detail::node_of(x, tp), ng = detail::node_of(gain, tp);
    detail::attach(out, tp, nx >= 0 || ng >= 0);
    if (out.node >= 0) {
        int onode = out.node, r = x.rows;
        auto xd = x.data, gd = gain.data;
        auto irms = std::make_shared<std::vector<S>>(std::move(inv_rms));
        tp->record([=]() {
            if (!tp->grad_present(onode)) return;
            const auto& g = tp->grad_view(onode);
            for (int i = 0; i < r; ++i) {
                const std::size_t base = static_cast<std::size_t>(i) * n;
                const S ir = (*irms)[static_cast<std::size_t>(i)];
                if (nx >= 0) {
                    auto& gx = tp->grad_of(nx);
                    S dot = 0;  // sum_j g_j * gain_j * x_j
                    for (int j = 0; j < n; ++j) dot += g[base + j] * (*gd)[static_cast<std::size_t>(j)] * (*xd)[base + j];
                    const S coef = dot * ir * ir * ir / S(n);
                    for (int j = 0; j < n; ++j)
                        gx[base + j] += g[base + j] * (*gd)[static_cast<std::size_t>(j)] * ir - (*xd)[base + j] * coef;
                }
                if (ng >= 0) {
                    auto& gg = tp->grad_of(ng);
                    for (int j = 0; j < n; ++j) gg[static_cast<std::size_t>(j)] += g[base + j] * (*xd)[base + j] * ir;
                }
            }
        });
    }
    return out;
}

// j > i positions masked to a large negative constant; square score matrices only
template <typename S>
TensorT<S> causal_mask(const TensorT<S>& scores) {
    if (scores.rows != scores.cols) {
        throw dim_error("causal_mask: expects square scores, got " + scores.shape_str());
    }
    const S neg = S(-1e30);
    TensorT<S> out(scores.rows, scores.cols);
    for (int i = 0; i < scores.rows; ++i)
        for (int j = 0; j < scores.cols; ++j) out.at(i, j) = j <= i ? scores.at(i, j) : neg;
    TapeT<S>* tp = tls_active_tape<S>();
    int nx = detail::node_of(scores, tp);
    detail::attach(out, tp, nx >= 0);
    if (out.node >= 0) {
        int onode = out.node, n = scores.rows;
        tp->record([=]() {
            if (!tp->grad_present(onode)) return;
            const auto& g = tp->grad_view(onode);
            auto& gx = tp->grad_of(nx);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j <= i; ++j)
                    gx[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(i) * n + j];
        });
    }
    return out;
}

template <typename S>
TensorT<S> sum_all(const TensorT<S>& x) {
    TensorT<S> out(1, 1);
    S acc = 0;
    for (S v : *x.data) acc += v;
    out.at(0, 0) = acc;
    out.ensure_finite("sum_all");
    TapeT<S>* tp = tls_active_tape<S>();
    int nx = detail::node_of(x, tp);
    detail::attach(out, tp, nx >= 0);
    if (out.node >= 0) {
        int onode = out.node;
        std::size_t n = x.numel();
        tp->record([=]() {
            if (!tp->grad_present(onode)) return;
            const S g = tp->grad_view(onode)[0];
            auto& gx = tp->grad_of(nx);
            for (std::size_t i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return out;
}

template <typename S>
TensorT<S> mean_all(const TensorT<S>& x) {
    return scale(sum_all(x), S(1) / S(x.numel()));
}

using Tensor = TensorT<float>;
using Tape = TapeT<float>;
using TensorD = TensorT<double>;
using TapeD = TapeT<double>;

}  // namespace pembed
