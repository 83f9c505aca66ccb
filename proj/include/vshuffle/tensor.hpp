#ifndef VSHUFFLE_TENSOR_HPP
#define VSHUFFLE_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vshuffle/rng.hpp"

namespace vshuffle {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

template <typename Real>
class GradTape;

// Dense row-major tensor. Copies share the underlying buffer; ops never
// mutate inputs, they allocate fresh outputs. A tensor participates in
// gradient tracking iff it carries a tape node id.
template <typename Real>
struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<Real>> data;
    std::shared_ptr<std::vector<Real>> grad;  // leaves: filled by backward()
    GradTape<Real>* tape = nullptr;
    int node = -1;

    Tensor() = default;
    explicit Tensor(Shape s, Real fill = Real(0))
        : shape(std::move(s)),
          data(std::make_shared<std::vector<Real>>(static_cast<size_t>(numel_of(shape)), fill)) {
        validate_shape();
    }

    static Tensor from(Shape s, std::vector<Real> values) {
        Tensor t;
        t.shape = std::move(s);
        t.validate_shape();
        if (numel_of(t.shape) != static_cast<int64_t>(values.size()))
            throw ShapeError("tensor data size " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(t.shape));
        t.data = std::make_shared<std::vector<Real>>(std::move(values));
        return t;
    }

    static Tensor scalar(Real v) { return from({1}, {v}); }

    static Tensor randn(Shape s, Rng& rng, Real stddev = Real(1)) {
        Tensor t(std::move(s));
        for (auto& x : *t.data) x = static_cast<Real>(rng.normal()) * stddev;
        return t;
    }

    void validate_shape() const {
        for (int e : shape)
            if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
    }

    int64_t numel() const { return data ? static_cast<int64_t>(data->size()) : 0; }
    int rank() const { return static_cast<int>(shape.size()); }
    bool defined() const { return static_cast<bool>(data); }
    bool requires_grad() const { return node >= 0; }

    Real* ptr() { return data->data(); }
    const Real* ptr() const { return data->data(); }
    Real& operator[](int64_t i) { return (*data)[static_cast<size_t>(i)]; }
    Real operator[](int64_t i) const { return (*data)[static_cast<size_t>(i)]; }

    Real item() const {
        if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape));
        return (*data)[0];
    }

    // Same data, no gradient tracking.
    Tensor detach() const {
        Tensor t;
        t.shape = shape;
        t.data = data;
        return t;
    }

    Tensor clone() const {
        Tensor t;
        t.shape = shape;
        t.data = std::make_shared<std::vector<Real>>(*data);
        return t;
    }

    template <typename Other>
    Tensor<Other> cast() const {
        Tensor<Other> t;
        t.shape = shape;
        t.data = std::make_shared<std::vector<Other>>(data->size());
        for (size_t i = 0; i < data->size(); ++i) (*t.data)[i] = static_cast<Other>((*data)[i]);
        return t;
    }

    Tensor grad_tensor() const {
        if (!grad) throw NumericError("no gradient recorded for this tensor");
        Tensor t;
        t.shape = shape;
        t.data = grad;
        return t;
    }
};

template <typename Real>
inline void check_finite(const Tensor<Real>& t, const char* op) {
    for (const Real v : *t.data)
        if (!std::isfinite(static_cast<double>(v)))
            throw NumericError(std::string("non-finite value produced by ") + op);
}

// Reverse-mode tape. Ops append nodes in execution order, which is already a
// topological order, so one reverse sweep propagates gradients. Single use:
// build a graph, call backward once, discard.
template <typename Real>
class GradTape {
public:
    using PullFn = std::function<void(GradTape&, const Real*)>;

    // Register a leaf. The returned tensor shares data with the input and owns
    // a zero-initialized grad buffer that backward() accumulates into.
    Tensor<Real> leaf(const Tensor<Real>& t) {
        Tensor<Real> out;
        out.shape = t.shape;
        out.data = t.data;
        out.grad = std::make_shared<std::vector<Real>>(t.data->size(), Real(0));
        out.tape = this;
        out.node = add_node(t.numel(), nullptr, out.grad);
        return out;
    }

    int add_node(int64_t numel, PullFn pull, std::shared_ptr<std::vector<Real>> leaf_grad = nullptr) {
        nodes_.push_back(NodeRec{numel, std::move(leaf_grad), false, std::move(pull)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    Real* grad_buf(int node) {
        NodeRec& n = nodes_[static_cast<size_t>(node)];
        if (!n.grad) n.grad = std::make_shared<std::vector<Real>>(static_cast<size_t>(n.numel), Real(0));
        n.touched = true;
        return n.grad->data();
    }

    void backward(const Tensor<Real>& loss) {
        if (loss.tape != this || loss.node < 0)
            throw NumericError("backward: loss is not on this tape");
        if (loss.numel() != 1)
            throw NumericError("backward: loss must be scalar, got shape " + shape_str(loss.shape));
        if (ran_) throw NumericError("backward: tape already consumed");
        ran_ = true;
        grad_buf(loss.node)[0] = Real(1);
        for (int i = loss.node; i >= 0; --i) {
            NodeRec& n = nodes_[static_cast<size_t>(i)];
            if (n.touched && n.pull) n.pull(*this, n.grad->data());
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    struct NodeRec {
        int64_t numel;
        std::shared_ptr<std::vector<Real>> grad;
        bool touched;
        PullFn pull;
    };
    std::vector<NodeRec> nodes_;
    bool ran_ = false;
};

namespace detail {

template <typename Real>
GradTape<Real>* tape_of(const Tensor<Real>& a) {
    return a.node >= 0 ? a.tape : nullptr;
}

template <typename Real>
GradTape<Real>* joint_tape(const Tensor<Real>& a, const Tensor<Real>& b) {
    GradTape<Real>* ta = tape_of(a);
    GradTape<Real>* tb = tape_of(b);
    if (ta && tb && ta != tb) throw NumericError("operands recorded on different tapes");
    return ta ? ta : tb;
}

template <typename Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
    if (a.shape != b.shape)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::require_same_shape(a, b, "add");
    Tensor<Real> out(a.shape);
    const Real* pa = a.ptr();
    const Real* pb = b.ptr();
    Real* po = out.ptr();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    check_finite(out, "add");
    if (auto* tape = detail::joint_tape(a, b)) {
        const int an = a.node, bn = b.node;
        out.tape = tape;
        out.node = tape->add_node(n, [an, bn, n](GradTape<Real>& tp, const Real* g) {
            if (an >= 0) {
                Real* ga = tp.grad_buf(an);
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (bn >= 0) {
                Real* gb = tp.grad_buf(bn);
                for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor<Real> out(a.shape);
    const Real* pa = a.ptr();
    const Real* pb = b.ptr();
    Real* po = out.ptr();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    check_finite(out, "sub");
    if (auto* tape = detail::joint_tape(a, b)) {
        const int an = a.node, bn = b.node;
        out.tape = tape;
        out.node = tape->add_node(n, [an, bn, n](GradTape<Real>& tp, const Real* g) {
            if (an >= 0) {
                Real* ga = tp.grad_buf(an);
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (bn >= 0) {
                Real* gb = tp.grad_buf(bn);
                for (int64_t i = 0; i < n; ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor<Real> out(a.shape);
    const Real* pa = a.ptr();
    const Real* pb = b.ptr();
    Real* po = out.ptr();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    check_finite(out, "mul");
    if (auto* tape = detail::joint_tape(a, b)) {
        const int an = a.node, bn = b.node;
        auto da = a.data, db = b.data;
        out.tape = tape;
        out.node = tape->add_node(n, [an, bn, da, db, n](GradTape<Real>& tp, const Real* g) {
            if (an >= 0) {
                Real* ga = tp.grad_buf(an);
                const Real* pb2 = db->data();
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb2[i];
            }
            if (bn >= 0) {
                Real* gb = tp.grad_buf(bn);
                const Real* pa2 = da->data();
                for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa2[i];
            }
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real s) {
    Tensor<Real> out(a.shape);
    const Real* pa = a.ptr();
    Real* po = out.ptr();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
    check_finite(out, "scale");
    if (auto* tape = detail::tape_of(a)) {
        const int an = a.node;
        out.tape = tape;
        out.node = tape->add_node(n, [an, s, n](GradTape<Real>& tp, const Real* g) {
            Real* ga = tp.grad_buf(an);
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * s;
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> add_scalar(const Tensor<Real>& a, Real s) {
    Tensor<Real> out(a.shape);
    const Real* pa = a.ptr();
    Real* po = out.ptr();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + s;
    check_finite(out, "add_scalar");
    if (auto* tape = detail::tape_of(a)) {
        const int an = a.node;
        out.tape = tape;
        out.node = tape->add_node(n, [an, n](GradTape<Real>& tp, const Real* g) {
            Real* ga = tp.grad_buf(an);
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> silu(const Tensor<Real>& a) {
    Tensor<Real> out(a.shape);
    const Real* pa = a.ptr();
    Real* po = out.ptr();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) {
        const Real sg = Real(1) / (Real(1) + std::exp(-pa[i]));
        po[i] = pa[i] * sg;
    }
    check_finite(out, "silu");
    if (auto* tape = detail::tape_of(a)) {
        const int an = a.node;
        auto da = a.data;
        out.tape = tape;
        out.node = tape->add_node(n, [an, da, n](GradTape<Real>& tp, const Real* g) {
            Real* ga = tp.grad_buf(an);
            const Real* pa2 = da->data();
            for (int64_t i = 0; i < n; ++i) {
                const Real sg = Real(1) / (Real(1) + std::exp(-pa2[i]));
                ga[i] += g[i] * sg * (Real(1) + pa2[i] * (Real(1) - sg));
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

// Metadata-only: shares data and tape node.
template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape s) {
    if (numel_of(s) != a.numel())
        throw ShapeError("reshape: " + shape_str(a.shape) + " -> " + shape_str(s) +
                         " changes element count");
    Tensor<Real> out = a;
    out.shape = std::move(s);
    return out;
}

template <typename Real>
Tensor<Real> transpose_last2(const Tensor<Real>& a) {
    if (a.rank() < 2) throw ShapeError("transpose_last2: rank < 2, shape " + shape_str(a.shape));
    const int r = a.rank();
    const int p = a.shape[static_cast<size_t>(r) - 2];
    const int q = a.shape[static_cast<size_t>(r) - 1];
    Shape os = a.shape;
    os[static_cast<size_t>(r) - 2] = q;
    os[static_cast<size_t>(r) - 1] = p;
    const int64_t batch = a.numel() / (static_cast<int64_t>(p) * q);
    Tensor<Real> out(os);
    const Real* pa = a.ptr();
    Real* po = out.ptr();
    for (int64_t b = 0; b < batch; ++b) {
        const Real* src = pa + b * p * q;
        Real* dst = po + b * p * q;
        for (int i = 0; i < p; ++i)
            for (int j = 0; j < q; ++j) dst[static_cast<int64_t>(j) * p + i] = src[static_cast<int64_t>(i) * q + j];
    }
    if (auto* tape = detail::tape_of(a)) {
        const int an = a.node;
        const int64_t n = a.numel();
        out.tape = tape;
        out.node = tape->add_node(n, [an, p, q, batch](GradTape<Real>& tp, const Real* g) {
            Real* ga = tp.grad_buf(an);
            for (int64_t b = 0; b < batch; ++b) {
                const Real* gs = g + b * p * q;
                Real* gd = ga + b * p * q;
                for (int j = 0; j < q; ++j)
                    for (int i = 0; i < p; ++i) gd[static_cast<int64_t>(i) * q + j] += gs[static_cast<int64_t>(j) * p + i];
            }
        });
    }
    return out;
}

// Concatenate along axis 0.
template <typename Real>
Tensor<Real> concat_axis0(const std::vector<Tensor<Real>>& parts) {
    if (parts.empty()) throw ShapeError("concat_axis0: empty input");
    Shape tail(parts[0].shape.begin() + 1, parts[0].shape.end());
    int total0 = 0;
    GradTape<Real>* tape = nullptr;
    for (const auto& p : parts) {
        Shape t(p.shape.begin() + 1, p.shape.end());
        if (t != tail)
            throw ShapeError("concat_axis0: incompatible shapes " + shape_str(parts[0].shape) +
                             " vs " + shape_str(p.shape));
        total0 += p.shape[0];
        if (auto* tp = detail::tape_of(p)) {
            if (tape && tape != tp) throw NumericError("operands recorded on different tapes");
            tape = tp;
        }
    }
    Shape os = parts[0].shape;
    os[0] = total0;
    Tensor<Real> out(os);
    Real* po = out.ptr();
    int64_t off = 0;
    std::vector<std::pair<int, int64_t>> spans;  // (node, offset) per part
    for (const auto& p : parts) {
        std::copy(p.ptr(), p.ptr() + p.numel(), po + off);
        spans.emplace_back(p.node, off);
        off += p.numel();
    }
    if (tape) {
        std::vector<int64_t> sizes;
        for (const auto& p : parts) sizes.push_back(p.numel());
        out.tape = tape;
        out.node = tape->add_node(out.numel(), [spans, sizes](GradTape<Real>& tp, const Real* g) {
            for (size_t k = 0; k < spans.size(); ++k) {
                if (spans[k].first < 0) continue;
                Real* gp = tp.grad_buf(spans[k].first);
                const Real* gs = g + spans[k].second;
                for (int64_t i = 0; i < sizes[k]; ++i) gp[i] += gs[i];
            }
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> slice_axis0(const Tensor<Real>& a, int start, int len) {
    if (a.rank() < 1 || start < 0 || len <= 0 || start + len > a.shape[0])
        throw ShapeError("slice_axis0: invalid range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") for shape " + shape_str(a.shape));
    Shape os = a.shape;
    os[0] = len;
    const int64_t inner = a.numel() / a.shape[0];
    Tensor<Real> out(os);
    std::copy(a.ptr() + start * inner, a.ptr() + (start + len) * inner, out.ptr());
    if (auto* tape = detail::tape_of(a)) {
        const int an = a.node;
        const int64_t off = start * inner;
        const int64_t n = out.numel();
        out.tape = tape;
        out.node = tape->add_node(n, [an, off, n](GradTape<Real>& tp, const Real* g) {
            Real* ga = tp.grad_buf(an);
            for (int64_t i = 0; i < n; ++i) ga[off + i] += g[i];
        });
    }
    return out;
}

// (s, h*d) -> (h, s, d)
template <typename Real>
Tensor<Real> split_heads(const Tensor<Real>& x, int heads) {
    if (x.rank() != 2 || x.shape[1] % heads != 0)
        throw ShapeError("split_heads: shape " + shape_str(x.shape) + " not divisible into " +
                         std::to_string(heads) + " heads");
    const int s = x.shape[0];
    const int d = x.shape[1] / heads;
    Tensor<Real> out({heads, s, d});
    const Real* px = x.ptr();
    Real* po = out.ptr();
    for (int h = 0; h < heads; ++h)
        for (int i = 0; i < s; ++i)
            for (int j = 0; j < d; ++j)
                po[(static_cast<int64_t>(h) * s + i) * d + j] = px[static_cast<int64_t>(i) * heads * d + h * d + j];
    if (auto* tape = detail::tape_of(x)) {
        const int xn = x.node;
        out.tape = tape;
        out.node = tape->add_node(out.numel(), [xn, heads, s, d](GradTape<Real>& tp, const Real* g) {
            Real* gx = tp.grad_buf(xn);
            for (int h = 0; h < heads; ++h)
                for (int i = 0; i < s; ++i)
                    for (int j = 0; j < d; ++j)
                        gx[static_cast<int64_t>(i) * heads * d + h * d + j] +=
                            g[(static_cast<int64_t>(h) * s + i) * d + j];
        });
    }
    return out;
}

// (h, s, d) -> (s, h*d)
template <typename Real>
Tensor<Real> merge_heads(const Tensor<Real>& x) {
    if (x.rank() != 3) throw ShapeError("merge_heads: expected rank 3, got " + shape_str(x.shape));
    const int heads = x.shape[0], s = x.shape[1], d = x.shape[2];
    Tensor<Real> out({s, heads * d});
    const Real* px = x.ptr();
    Real* po = out.ptr();
    for (int h = 0; h < heads; ++h)
        for (int i = 0; i < s; ++i)
            for (int j = 0; j < d; ++j)
                po[static_cast<int64_t>(i) * heads * d + h * d + j] = px[(static_cast<int64_t>(h) * s + i) * d + j];
    if (auto* tape = detail::tape_of(x)) {
        const int xn = x.node;
        out.tape = tape;
        out.node = tape->add_node(out.numel(), [xn, heads, s, d](GradTape<Real>& tp, const Real* g) {
            Real* gx = tp.grad_buf(xn);
            for (int h = 0; h < heads; ++h)
                for (int i = 0; i < s; ++i)
                    for (int j = 0; j < d; ++j)
                        gx[(static_cast<int64_t>(h) * s + i) * d + j] +=
                            g[static_cast<int64_t>(i) * heads * d + h * d + j];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace detail {

// C[p,r] += A[p,q] * B[q,r]
template <typename Real>
void gemm_acc(const Real* A, const Real* B, Real* C, int p, int q, int r) {
    for (int i = 0; i < p; ++i) {
        const Real* a = A + static_cast<int64_t>(i) * q;
        Real* c = C + static_cast<int64_t>(i) * r;
        for (int k = 0; k < q; ++k) {
            const Real aik = a[k];
            const Real* b = B + static_cast<int64_t>(k) * r;
            for (int j = 0; j < r; ++j) c[j] += aik * b[j];
        }
    }
}

// C[p,r] += A[p,q] * B^T where B is [r,q]
template <typename Real>
void gemm_bt_acc(const Real* A, const Real* B, Real* C, int p, int q, int r) {
    for (int i = 0; i < p; ++i) {
        const Real* a = A + static_cast<int64_t>(i) * q;
        Real* c = C + static_cast<int64_t>(i) * r;
        for (int j = 0; j < r; ++j) {
            const Real* b = B + static_cast<int64_t>(j) * q;
            Real acc = 0;
            for (int k = 0; k < q; ++k) acc += a[k] * b[k];
            c[j] += acc;
        }
    }
}

// C[q,r] += A^T * B where A is [p,q], B is [p,r]
template <typename Real>
void gemm_at_acc(const Real* A, const Real* B, Real* C, int p, int q, int r) {
    for (int i = 0; i < p; ++i) {
        const Real* a = A + static_cast<int64_t>(i) * q;
        const Real* b = B + static_cast<int64_t>(i) * r;
        for (int k = 0; k < q; ++k) {
            const Real aik = a[k];
            Real* c = C + static_cast<int64_t>(k) * r;
            for (int j = 0; j < r; ++j) c[j] += aik * b[j];
        }
    }
}

}  // namespace detail

// Batched contraction (..,p,q) x (..,q,r) -> (..,p,r). Batch dims must match,
// except that a rank-2 operand broadcasts over the other side's batch.
template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul: need rank >= 2, got " + shape_str(a.shape) + " x " + shape_str(b.shape));
    const int p = a.shape[static_cast<size_t>(a.rank()) - 2];
    const int q = a.shape[static_cast<size_t>(a.rank()) - 1];
    const int q2 = b.shape[static_cast<size_t>(b.rank()) - 2];
    const int r = b.shape[static_cast<size_t>(b.rank()) - 1];
    if (q != q2)
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape) + " x " + shape_str(b.shape));
    Shape abatch(a.shape.begin(), a.shape.end() - 2);
    Shape bbatch(b.shape.begin(), b.shape.end() - 2);
    Shape obatch;
    bool bcast_a = false, bcast_b = false;
    if (abatch == bbatch) {
        obatch = abatch;
    } else if (abatch.empty()) {
        obatch = bbatch;
        bcast_a = true;
    } else if (bbatch.empty()) {
        obatch = abatch;
        bcast_b = true;
    } else {
        throw ShapeError("matmul: batch extents not broadcastable, " + shape_str(a.shape) + " x " +
                         shape_str(b.shape));
    }
    const int64_t batch = numel_of(obatch);
    Shape os = obatch;
    os.push_back(p);
    os.push_back(r);
    Tensor<Real> out(os);
    std::fill(out.ptr(), out.ptr() + out.numel(), Real(0));
    const int64_t asz = static_cast<int64_t>(p) * q, bsz = static_cast<int64_t>(q) * r,
                  osz = static_cast<int64_t>(p) * r;
    for (int64_t bt = 0; bt < batch; ++bt) {
        const Real* pa = a.ptr() + (bcast_a ? 0 : bt * asz);
        const Real* pb = b.ptr() + (bcast_b ? 0 : bt * bsz);
        detail::gemm_acc(pa, pb, out.ptr() + bt * osz, p, q, r);
    }
    check_finite(out, "matmul");
    if (auto* tape = detail::joint_tape(a, b)) {
        const int an = a.node, bn = b.node;
        auto da = a.data, db = b.data;
        out.tape = tape;
        out.node = tape->add_node(
            out.numel(), [an, bn, da, db, p, q, r, batch, asz, bsz, osz, bcast_a, bcast_b](
                             GradTape<Real>& tp, const Real* g) {
                if (an >= 0) {
                    Real* ga = tp.grad_buf(an);
                    const Real* pb = db->data();
                    for (int64_t bt = 0; bt < batch; ++bt)
                        detail::gemm_bt_acc(g + bt * osz, pb + (bcast_b ? 0 : bt * bsz),
                                            ga + (bcast_a ? 0 : bt * asz), p, r, q);
                }
                if (bn >= 0) {
                    Real* gb = tp.grad_buf(bn);
                    const Real* pa = da->data();
                    for (int64_t bt = 0; bt < batch; ++bt)
                        detail::gemm_at_acc(pa + (bcast_a ? 0 : bt * asz), g + bt * osz,
                                            gb + (bcast_b ? 0 : bt * bsz), p, q, r);
                }
            });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions and losses
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> sum_all(const Tensor<Real>& a) {
    Real acc = 0;
    const Real* pa = a.ptr();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) acc += pa[i];
    Tensor<Real> out = Tensor<Real>::scalar(acc);
    check_finite(out, "sum_all");
    if (auto* tape = detail::tape_of(a)) {
        const int an = a.node;
        out.tape = tape;
        out.node = tape->add_node(1, [an, n](GradTape<Real>& tp, const Real* g) {
            Real* ga = tp.grad_buf(an);
            for (int64_t i = 0; i < n; ++i) ga[i] += g[0];
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> mean_all(const Tensor<Real>& a) {
    return scale(sum_all(a), Real(1) / static_cast<Real>(a.numel()));
}

// Mean absolute difference. Reduction is the mean so the magnitude does not
// depend on feature size. d|x|/dx at 0 is taken as 0.
template <typename Real>
Tensor<Real> l1_mean(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::require_same_shape(a, b, "l1_mean");
    const int64_t n = a.numel();
    const Real* pa = a.ptr();
    const Real* pb = b.ptr();
    Real acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += std::abs(pa[i] - pb[i]);
    Tensor<Real> out = Tensor<Real>::scalar(acc / static_cast<Real>(n));
    check_finite(out, "l1_mean");
    if (auto* tape = detail::joint_tape(a, b)) {
        const int an = a.node, bn = b.node;
        auto da = a.data, db = b.data;
        out.tape = tape;
        out.node = tape->add_node(1, [an, bn, da, db, n](GradTape<Real>& tp, const Real* g) {
            const Real w = g[0] / static_cast<Real>(n);
            const Real* pa2 = da->data();
            const Real* pb2 = db->data();
            if (an >= 0) {
                Real* ga = tp.grad_buf(an);
                for (int64_t i = 0; i < n; ++i) {
                    const Real d = pa2[i] - pb2[i];
                    ga[i] += d > 0 ? w : (d < 0 ? -w : Real(0));
                }
            }
            if (bn >= 0) {
                Real* gb = tp.grad_buf(bn);
                for (int64_t i = 0; i < n; ++i) {
                    const Real d = pa2[i] - pb2[i];
                    gb[i] -= d > 0 ? w : (d < 0 ? -w : Real(0));
                }
            }
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> mse_mean(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::require_same_shape(a, b, "mse_mean");
    const int64_t n = a.numel();
    const Real* pa = a.ptr();
    const Real* pb = b.ptr();
    Real acc = 0;
    for (int64_t i = 0; i < n; ++i) {
        const Real d = pa[i] - pb[i];
        acc += d * d;
    }
    Tensor<Real> out = Tensor<Real>::scalar(acc / static_cast<Real>(n));
    check_finite(out, "mse_mean");
    if (auto* tape = detail::joint_tape(a, b)) {
        const int an = a.node, bn = b.node;
        auto da = a.data, db = b.data;
        out.tape = tape;
        out.node = tape->add_node(1, [an, bn, da, db, n](GradTape<Real>& tp, const Real* g) {
            const Real w = Real(2) * g[0] / static_cast<Real>(n);
            const Real* pa2 = da->data();
            const Real* pb2 = db->data();
            if (an >= 0) {
                Real* ga = tp.grad_buf(an);
                for (int64_t i = 0; i < n; ++i) ga[i] += w * (pa2[i] - pb2[i]);
            }
            if (bn >= 0) {
                Real* gb = tp.grad_buf(bn);
                for (int64_t i = 0; i < n; ++i) gb[i] -= w * (pa2[i] - pb2[i]);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> softmax_lastdim(const Tensor<Real>& x) {
    if (x.rank() < 1 || x.shape.back() < 1)
        throw ShapeError("softmax_lastdim: empty last dim in shape " + shape_str(x.shape));
    const int m = x.shape.back();
    const int64_t rows = x.numel() / m;
    Tensor<Real> out(x.shape);
    const Real* px = x.ptr();
    Real* po = out.ptr();
    for (int64_t r = 0; r < rows; ++r) {
        const Real* src = px + r * m;
        Real* dst = po + r * m;
        Real mx = src[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, src[j]);
        Real sum = 0;
        for (int j = 0; j < m; ++j) {
            dst[j] = std::exp(src[j] - mx);
            sum += dst[j];
        }
        const Real inv = Real(1) / sum;
        for (int j = 0; j < m; ++j) dst[j] *= inv;
    }
    check_finite(out, "softmax_lastdim");
    if (auto* tape = detail::tape_of(x)) {
        const int xn = x.node;
        auto dy = out.data;
        out.tape = tape;
        out.node = tape->add_node(out.numel(), [xn, dy, rows, m](GradTape<Real>& tp, const Real* g) {
            Real* gx = tp.grad_buf(xn);
            const Real* py = dy->data();
            for (int64_t r = 0; r < rows; ++r) {
                const Real* y = py + r * m;
                const Real* gr = g + r * m;
                Real dot = 0;
                for (int j = 0; j < m; ++j) dot += gr[j] * y[j];
                Real* gxr = gx + r * m;
                for (int j = 0; j < m; ++j) gxr[j] += y[j] * (gr[j] - dot);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// broadcast bias adds for 2-D activations
// ---------------------------------------------------------------------------

// x:(R,C) + b:(R) added down each row (per-channel bias for (C,HW) maps)
template <typename Real>
Tensor<Real> add_colvec(const Tensor<Real>& x, const Tensor<Real>& b) {
    if (x.rank() != 2 || b.numel() != x.shape[0])
        throw ShapeError("add_colvec: " + shape_str(x.shape) + " + " + shape_str(b.shape));
    const int R = x.shape[0], C = x.shape[1];
    Tensor<Real> out(x.shape);
    const Real* px = x.ptr();
    const Real* pb = b.ptr();
    Real* po = out.ptr();
    for (int i = 0; i < R; ++i) {
        const Real bi = pb[i];
        for (int j = 0; j < C; ++j) po[static_cast<int64_t>(i) * C + j] = px[static_cast<int64_t>(i) * C + j] + bi;
    }
    check_finite(out, "add_colvec");
    if (auto* tape = detail::joint_tape(x, b)) {
        const int xn = x.node, bn = b.node;
        out.tape = tape;
        out.node = tape->add_node(out.numel(), [xn, bn, R, C](GradTape<Real>& tp, const Real* g) {
            if (xn >= 0) {
                Real* gx = tp.grad_buf(xn);
                for (int64_t i = 0; i < static_cast<int64_t>(R) * C; ++i) gx[i] += g[i];
            }
            if (bn >= 0) {
                Real* gb = tp.grad_buf(bn);
                for (int i = 0; i < R; ++i) {
                    Real acc = 0;
                    for (int j = 0; j < C; ++j) acc += g[static_cast<int64_t>(i) * C + j];
                    gb[i] += acc;
                }
            }
        });
    }
    return out;
}

// x:(R,C) + b:(C) added across each row (token-space linear bias)
template <typename Real>
Tensor<Real> add_rowvec(const Tensor<Real>& x, const Tensor<Real>& b) {
    if (x.rank() != 2 || b.numel() != x.shape[1])
        throw ShapeError("add_rowvec: " + shape_str(x.shape) + " + " + shape_str(b.shape));
    const int R = x.shape[0], C = x.shape[1];
    Tensor<Real> out(x.shape);
    const Real* px = x.ptr();
    const Real* pb = b.ptr();
    Real* po = out.ptr();
    for (int i = 0; i < R; ++i)
        for (int j = 0; j < C; ++j) po[static_cast<int64_t>(i) * C + j] = px[static_cast<int64_t>(i) * C + j] + pb[j];
    check_finite(out, "add_rowvec");
    if (auto* tape = detail::joint_tape(x, b)) {
        const int xn = x.node, bn = b.node;
        out.tape = tape;
        out.node = tape->add_node(out.numel(), [xn, bn, R, C](GradTape<Real>& tp, const Real* g) {
            if (xn >= 0) {
                Real* gx = tp.grad_buf(xn);
                for (int64_t i = 0; i < static_cast<int64_t>(R) * C; ++i) gx[i] += g[i];
            }
            if (bn >= 0) {
                Real* gb = tp.grad_buf(bn);
                for (int i = 0; i < R; ++i)
                    for (int j = 0; j < C; ++j) gb[j] += g[static_cast<int64_t>(i) * C + j];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// group norm
// ---------------------------------------------------------------------------

// x:(C, HW), gamma/beta:(C). Normalizes over each group of C/groups channels
// together with the spatial extent, population variance.
template <typename Real>
Tensor<Real> group_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        int groups, Real eps = Real(1e-5)) {
    if (x.rank() != 2) throw ShapeError("group_norm: expected (C,HW), got " + shape_str(x.shape));
    const int C = x.shape[0], HW = x.shape[1];
    if (C % groups != 0 || gamma.numel() != C || beta.numel() != C)
        throw ShapeError("group_norm: channels " + std::to_string(C) + " vs groups " +
                         std::to_string(groups) + ", gamma " + shape_str(gamma.shape));
    const int gc = C / groups;
    const int64_t gn = static_cast<int64_t>(gc) * HW;
    Tensor<Real> out(x.shape);
    std::vector<Real> ynorm(static_cast<size_t>(x.numel()));
    std::vector<Real> inv_std(static_cast<size_t>(groups));
    const Real* px = x.ptr();
    const Real* pg = gamma.ptr();
    const Real* pb = beta.ptr();
    Real* po = out.ptr();
    for (int g = 0; g < groups; ++g) {
        const Real* src = px + static_cast<int64_t>(g) * gn;
        Real mean = 0;
        for (int64_t i = 0; i < gn; ++i) mean += src[i];
        mean /= static_cast<Real>(gn);
        Real var = 0;
        for (int64_t i = 0; i < gn; ++i) {
            const Real d = src[i] - mean;
            var += d * d;
        }
        var /= static_cast<Real>(gn);
        const Real is = Real(1) / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(g)] = is;
        for (int c = 0; c < gc; ++c) {
            const int ch = g * gc + c;
            for (int j = 0; j < HW; ++j) {
                const int64_t idx = static_cast<int64_t>(ch) * HW + j;
                const Real y = (px[idx] - mean) * is;
                ynorm[static_cast<size_t>(idx)] = y;
                po[idx] = y * pg[ch] + pb[ch];
            }
        }
    }
    check_finite(out, "group_norm");
    GradTape<Real>* tape = detail::tape_of(x);
    if (auto* tg = detail::tape_of(gamma)) {
        if (tape && tape != tg) throw NumericError("operands recorded on different tapes");
        tape = tg;
    }
    if (auto* tb = detail::tape_of(beta)) {
        if (tape && tape != tb) throw NumericError("operands recorded on different tapes");
        tape = tb;
    }
    if (tape) {
        const int xn = x.node, gn_node = gamma.node, bn = beta.node;
        auto dgamma = gamma.data;
        auto y_keep = std::make_shared<std::vector<Real>>(std::move(ynorm));
        auto is_keep = std::make_shared<std::vector<Real>>(std::move(inv_std));
        out.tape = tape;
        out.node = tape->add_node(
            out.numel(), [xn, gn_node, bn, dgamma, y_keep, is_keep, groups, gc, HW](GradTape<Real>& tp,
                                                                                    const Real* g) {
                const Real* y = y_keep->data();
                const Real* pg2 = dgamma->data();
                const int64_t gnn = static_cast<int64_t>(gc) * HW;
                if (bn >= 0) {
                    Real* gb = tp.grad_buf(bn);
                    for (int ch = 0; ch < groups * gc; ++ch) {
                        Real acc = 0;
                        for (int j = 0; j < HW; ++j) acc += g[static_cast<int64_t>(ch) * HW + j];
                        gb[ch] += acc;
                    }
                }
                if (gn_node >= 0) {
                    Real* gg = tp.grad_buf(gn_node);
                    for (int ch = 0; ch < groups * gc; ++ch) {
                        Real acc = 0;
                        for (int j = 0; j < HW; ++j) {
                            const int64_t idx = static_cast<int64_t>(ch) * HW + j;
                            acc += g[idx] * y[idx];
                        }
                        gg[ch] += acc;
                    }
                }
                if (xn >= 0) {
                    Real* gx = tp.grad_buf(xn);
                    for (int grp = 0; grp < groups; ++grp) {
                        Real mean_gh = 0, mean_ghy = 0;
                        for (int c = 0; c < gc; ++c) {
                            const int ch = grp * gc + c;
                            for (int j = 0; j < HW; ++j) {
                                const int64_t idx = static_cast<int64_t>(ch) * HW + j;
                                const Real gh = g[idx] * pg2[ch];
                                mean_gh += gh;
                                mean_ghy += gh * y[idx];
                            }
                        }
                        mean_gh /= static_cast<Real>(gnn);
                        mean_ghy /= static_cast<Real>(gnn);
                        const Real is = (*is_keep)[static_cast<size_t>(grp)];
                        for (int c = 0; c < gc; ++c) {
                            const int ch = grp * gc + c;
                            for (int j = 0; j < HW; ++j) {
                                const int64_t idx = static_cast<int64_t>(ch) * HW + j;
                                const Real gh = g[idx] * pg2[ch];
                                gx[idx] += is * (gh - mean_gh - y[idx] * mean_ghy);
                            }
                        }
                    }
                }
            });
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv building blocks
// ---------------------------------------------------------------------------

// x:(C,H,W) -> (C*k*k, OH*OW) patch matrix; zero padding.
template <typename Real>
Tensor<Real> im2col(const Tensor<Real>& x, int k, int stride, int pad) {
    if (x.rank() != 3) throw ShapeError("im2col: expected (C,H,W), got " + shape_str(x.shape));
    const int C = x.shape[0], H = x.shape[1], W = x.shape[2];
    const int OH = (H + 2 * pad - k) / stride + 1;
    const int OW = (W + 2 * pad - k) / stride + 1;
    if (OH <= 0 || OW <= 0) throw ShapeError("im2col: kernel larger than padded input");
    Tensor<Real> out({C * k * k, OH * OW});
    const Real* px = x.ptr();
    Real* po = out.ptr();
    for (int c = 0; c < C; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                Real* dst = po + (static_cast<int64_t>(c) * k * k + ki * k + kj) * OH * OW;
                for (int oi = 0; oi < OH; ++oi) {
                    const int ii = oi * stride + ki - pad;
                    for (int oj = 0; oj < OW; ++oj) {
                        const int jj = oj * stride + kj - pad;
                        dst[static_cast<int64_t>(oi) * OW + oj] =
                            (ii >= 0 && ii < H && jj >= 0 && jj < W)
                                ? px[(static_cast<int64_t>(c) * H + ii) * W + jj]
                                : Real(0);
                    }
                }
            }
    if (auto* tape = detail::tape_of(x)) {
        const int xn = x.node;
        out.tape = tape;
        out.node = tape->add_node(out.numel(), [xn, C, H, W, k, stride, pad, OH, OW](GradTape<Real>& tp,
                                                                                     const Real* g) {
            Real* gx = tp.grad_buf(xn);
            for (int c = 0; c < C; ++c)
                for (int ki = 0; ki < k; ++ki)
                    for (int kj = 0; kj < k; ++kj) {
                        const Real* src = g + (static_cast<int64_t>(c) * k * k + ki * k + kj) * OH * OW;
                        for (int oi = 0; oi < OH; ++oi) {
                            const int ii = oi * stride + ki - pad;
                            if (ii < 0 || ii >= H) continue;
                            for (int oj = 0; oj < OW; ++oj) {
                                const int jj = oj * stride + kj - pad;
                                if (jj < 0 || jj >= W) continue;
                                gx[(static_cast<int64_t>(c) * H + ii) * W + jj] +=
                                    src[static_cast<int64_t>(oi) * OW + oj];
                            }
                        }
                    }
        });
    }
    return out;
}

// weight:(Cout, Cin*k*k), bias:(Cout). Returns (Cout, OH, OW).
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias,
                    int k, int stride = 1, int pad = -1) {
    if (pad < 0) pad = k / 2;
    const int C = x.shape[0];
    Tensor<Real> cols = im2col(x, k, stride, pad);
    if (weight.rank() != 2 || weight.shape[1] != C * k * k)
        throw ShapeError("conv2d: weight " + shape_str(weight.shape) + " does not match input channels " +
                         std::to_string(C) + " and kernel " + std::to_string(k));
    Tensor<Real> y = add_colvec(matmul(weight, cols), bias);
    const int H = x.shape[1], W = x.shape[2];
    const int OH = (H + 2 * pad - k) / stride + 1;
    const int OW = (W + 2 * pad - k) / stride + 1;
    return reshape(y, {weight.shape[0], OH, OW});
}

template <typename Real>
Tensor<Real> upsample_nearest2(const Tensor<Real>& x) {
    if (x.rank() != 3) throw ShapeError("upsample_nearest2: expected (C,H,W), got " + shape_str(x.shape));
    const int C = x.shape[0], H = x.shape[1], W = x.shape[2];
    Tensor<Real> out({C, 2 * H, 2 * W});
    const Real* px = x.ptr();
    Real* po = out.ptr();
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < 2 * H; ++i)
            for (int j = 0; j < 2 * W; ++j)
                po[(static_cast<int64_t>(c) * 2 * H + i) * 2 * W + j] =
                    px[(static_cast<int64_t>(c) * H + i / 2) * W + j / 2];
    if (auto* tape = detail::tape_of(x)) {
        const int xn = x.node;
        out.tape = tape;
        out.node = tape->add_node(out.numel(), [xn, C, H, W](GradTape<Real>& tp, const Real* g) {
            Real* gx = tp.grad_buf(xn);
            for (int c = 0; c < C; ++c)
                for (int i = 0; i < 2 * H; ++i)
                    for (int j = 0; j < 2 * W; ++j)
                        gx[(static_cast<int64_t>(c) * H + i / 2) * W + j / 2] +=
                            g[(static_cast<int64_t>(c) * 2 * H + i) * 2 * W + j];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// backward entry point and oracles
// ---------------------------------------------------------------------------

template <typename Real>
void backward(const Tensor<Real>& loss) {
    if (!loss.tape) throw NumericError("backward: loss was not recorded on a tape");
    loss.tape->backward(loss);
}

// Central finite differences, the reference gradient for everything above.
template <typename Real>
Tensor<Real> finite_diff_grad(const std::function<Real(const Tensor<Real>&)>& f, const Tensor<Real>& x,
                              Real h = Real(1e-4)) {
    if (h <= 0) throw NumericError("finite_diff_grad: step must be positive");
    Tensor<Real> g(x.shape);
    Tensor<Real> probe = x.clone();
    for (int64_t i = 0; i < x.numel(); ++i) {
        const Real orig = probe[i];
        probe[i] = orig + h;
        const Real fp = f(probe);
        probe[i] = orig - h;
        const Real fm = f(probe);
        probe[i] = orig;
        if (!std::isfinite(static_cast<double>(fp)) || !std::isfinite(static_cast<double>(fm)))
            throw NumericError("finite_diff_grad: non-finite function value");
        g[i] = (fp - fm) / (2 * h);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename Real>
struct AdamState {
    std::vector<Real> m, v;

    static AdamState zeros_like(const Tensor<Real>& p) {
        AdamState s;
        s.m.assign(static_cast<size_t>(p.numel()), Real(0));
        s.v.assign(static_cast<size_t>(p.numel()), Real(0));
        return s;
    }
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam. Pure: returns fresh params and state; on non-finite
// gradients returns false and copies inputs through unchanged except the
// moment decay is skipped too.
template <typename Real>
bool adam_step(const Tensor<Real>& params, const Tensor<Real>& grads, const AdamState<Real>& state,
               Real lr, int64_t step_index, Tensor<Real>& out_params, AdamState<Real>& out_state,
               const AdamConfig& cfg = AdamConfig{}) {
    detail::require_same_shape(params, grads, "adam_step");
    if (state.m.size() != static_cast<size_t>(params.numel()))
        throw ShapeError("adam_step: state size mismatch");
    if (lr <= 0) throw ConfigError("adam_step: lr must be positive");
    if (step_index < 1) throw ConfigError("adam_step: step_index starts at 1");
    for (const Real g : *grads.data)
        if (!std::isfinite(static_cast<double>(g))) {
            out_params = params.clone();
            out_state = state;
            return false;
        }
    const Real b1 = static_cast<Real>(cfg.beta1), b2 = static_cast<Real>(cfg.beta2),
               eps = static_cast<Real>(cfg.eps);
    const Real c1 = Real(1) - std::pow(b1, static_cast<Real>(step_index));
    const Real c2 = Real(1) - std::pow(b2, static_cast<Real>(step_index));
    const int64_t n = params.numel();
    out_params = params.clone();
    out_state = state;
    const Real* g = grads.ptr();
    Real* p = out_params.ptr();
    for (int64_t i = 0; i < n; ++i) {
        out_state.m[static_cast<size_t>(i)] = b1 * out_state.m[static_cast<size_t>(i)] + (Real(1) - b1) * g[i];
        out_state.v[static_cast<size_t>(i)] =
            b2 * out_state.v[static_cast<size_t>(i)] + (Real(1) - b2) * g[i] * g[i];
        const Real mhat = out_state.m[static_cast<size_t>(i)] / c1;
        const Real vhat = out_state.v[static_cast<size_t>(i)] / c2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    return true;
}

}  // namespace vshuffle

#endif
