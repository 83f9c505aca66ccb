#ifndef VSHUFFLE_FEATURES_HPP
#define VSHUFFLE_FEATURES_HPP

#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "vshuffle/tensor.hpp"

namespace vshuffle {

// One of the three feature trajectories flowing through a transfer job.
struct StreamId {
    enum Kind { Content = 0, Style = 1, Output = 2 };
    Kind kind = Content;
    int style_index = 0;  // 1..n for style streams

    bool operator<(const StreamId& o) const {
        return std::tie(kind, style_index) < std::tie(o.kind, o.style_index);
    }
    bool operator==(const StreamId& o) const { return kind == o.kind && style_index == o.style_index; }

    static StreamId content() { return {Content, 0}; }
    static StreamId style(int i) { return {Style, i}; }
    static StreamId output() { return {Output, 0}; }

    std::string name() const {
        switch (kind) {
            case Content: return "content";
            case Style: return "style" + std::to_string(style_index);
            default: return "output";
        }
    }
};

// Q/K/V of one self-attention block at one timestep, each (h, s, d).
// Immutable once recorded.
template <typename Real>
struct AttentionTap {
    int block_index = -1;
    int timestep = -1;
    StreamId stream;
    Tensor<Real> Q, K, V;

    int heads() const { return Q.shape[0]; }
    int tokens() const { return Q.shape[1]; }
    int head_dim() const { return Q.shape[2]; }
};

// Per-head softmax(tau * Q K^T / sqrt(d)) V.
template <typename Real>
Tensor<Real> attention(const Tensor<Real>& Q, const Tensor<Real>& K, const Tensor<Real>& V, Real tau) {
    if (Q.rank() != 3 || K.rank() != 3 || V.rank() != 3)
        throw ShapeError("attention: expected (h,s,d) tensors");
    if (Q.shape[0] != K.shape[0] || Q.shape[2] != K.shape[2] || K.shape != V.shape)
        throw ShapeError("attention: head/dim mismatch Q" + shape_str(Q.shape) + " K" + shape_str(K.shape) +
                         " V" + shape_str(V.shape));
    if (tau <= 0) throw ConfigError("attention: tau must be positive");
    const int d = Q.shape[2];
    auto logits = scale(matmul(Q, transpose_last2(K)), tau / std::sqrt(static_cast<Real>(d)));
    return matmul(softmax_lastdim(logits), V);
}

// gamma * Q_c + (1 - gamma) * Q_cs
template <typename Real>
Tensor<Real> blend_queries(const Tensor<Real>& q_content, const Tensor<Real>& q_output, Real gamma) {
    if (gamma < 0 || gamma > 1) throw ConfigError("blend_queries: gamma outside [0,1]");
    detail::require_same_shape(q_content, q_output, "blend_queries");
    if (gamma == Real(1)) return q_content;
    if (gamma == Real(0)) return q_output;
    return add(scale(q_content, gamma), scale(q_output, Real(1) - gamma));
}

// Per-channel renormalization of x to y's mean/std. Channels along axis 0.
template <typename Real>
Tensor<Real> adain(const Tensor<Real>& x, const Tensor<Real>& y, Real eps = Real(1e-5)) {
    if (x.rank() < 1 || y.rank() < 1 || x.shape[0] != y.shape[0])
        throw ShapeError("adain: channel mismatch " + shape_str(x.shape) + " vs " + shape_str(y.shape));
    const int C = x.shape[0];
    const int64_t nx = x.numel() / C, ny = y.numel() / C;
    Tensor<Real> out(x.shape);
    const Real* px = x.ptr();
    const Real* py = y.ptr();
    Real* po = out.ptr();
    for (int c = 0; c < C; ++c) {
        const Real* xs = px + c * nx;
        const Real* ys = py + c * ny;
        Real mx = 0, my = 0;
        for (int64_t i = 0; i < nx; ++i) mx += xs[i];
        for (int64_t i = 0; i < ny; ++i) my += ys[i];
        mx /= static_cast<Real>(nx);
        my /= static_cast<Real>(ny);
        Real vx = 0, vy = 0;
        for (int64_t i = 0; i < nx; ++i) vx += (xs[i] - mx) * (xs[i] - mx);
        for (int64_t i = 0; i < ny; ++i) vy += (ys[i] - my) * (ys[i] - my);
        vx /= static_cast<Real>(nx);
        vy /= static_cast<Real>(ny);
        const Real sx = std::sqrt(vx), sy = std::sqrt(vy);
        const Real k = sy / (sx + eps);
        Real* os = po + c * nx;
        for (int64_t i = 0; i < nx; ++i) os[i] = k * (xs[i] - mx) + my;
    }
    check_finite(out, "adain");
    return out;
}

// Concatenation of style K/V along the sequence axis, style-image order.
// One joint attention over n*s keys realizes the multi-style aggregation.
template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> concat_style_features(const std::vector<AttentionTap<Real>>& taps) {
    if (taps.empty()) throw ShapeError("concat_style_features: no taps");
    const Shape ref = taps[0].K.shape;
    for (const auto& t : taps)
        if (t.K.shape != ref || t.V.shape != ref)
            throw ShapeError("concat_style_features: heterogeneous tap shapes " + shape_str(ref) + " vs " +
                             shape_str(t.K.shape));
    if (taps.size() == 1) return {taps[0].K, taps[0].V};
    const int h = ref[0], s = ref[1], d = ref[2];
    const int n = static_cast<int>(taps.size());
    Tensor<Real> K({h, n * s, d});
    Tensor<Real> V({h, n * s, d});
    for (int hh = 0; hh < h; ++hh)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < s; ++j)
                for (int c = 0; c < d; ++c) {
                    const int64_t dst = ((static_cast<int64_t>(hh) * n * s) + i * s + j) * d + c;
                    const int64_t src = ((static_cast<int64_t>(hh) * s) + j) * d + c;
                    K[dst] = taps[static_cast<size_t>(i)].K[src];
                    V[dst] = taps[static_cast<size_t>(i)].V[src];
                }
    return {K, V};
}

// (stream, timestep, block) -> tap. Pipelines fill one timestep at a time and
// drop it; analysis tools may hold several.
template <typename Real>
struct FeatureCache {
    int n = 0;  // number of style images
    std::map<std::tuple<StreamId, int, int>, AttentionTap<Real>> taps;

    void put(AttentionTap<Real> tap) {
        taps[std::make_tuple(tap.stream, tap.timestep, tap.block_index)] = std::move(tap);
    }
    bool has(const StreamId& s, int t, int block) const {
        return taps.count(std::make_tuple(s, t, block)) > 0;
    }
    const AttentionTap<Real>& get(const StreamId& s, int t, int block) const {
        auto it = taps.find(std::make_tuple(s, t, block));
        if (it == taps.end())
            throw NumericError("FeatureCache: missing tap " + s.name() + " t=" + std::to_string(t) +
                               " block=" + std::to_string(block));
        return it->second;
    }
    std::vector<AttentionTap<Real>> style_taps(int t, int block) const {
        std::vector<AttentionTap<Real>> out;
        for (int i = 1; i <= n; ++i) out.push_back(get(StreamId::style(i), t, block));
        return out;
    }
};

}  // namespace vshuffle

#endif
