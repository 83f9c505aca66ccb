#ifndef VSHUFFLE_LOSSES_HPP
#define VSHUFFLE_LOSSES_HPP

#include <map>
#include <vector>

#include "vshuffle/features.hpp"
#include "vshuffle/rng.hpp"
#include "vshuffle/tensor.hpp"

namespace vshuffle {

enum class ShuffleAxis { Heads, Sequence, Channels };

inline char shuffle_axis_tag(ShuffleAxis a) {
    switch (a) {
        case ShuffleAxis::Heads: return 'h';
        case ShuffleAxis::Sequence: return 's';
        default: return 'd';
    }
}

inline ShuffleAxis parse_shuffle_axis(const std::string& s) {
    if (s == "h") return ShuffleAxis::Heads;
    if (s == "s") return ShuffleAxis::Sequence;
    if (s == "d") return ShuffleAxis::Channels;
    throw ConfigError("unknown shuffle axis: " + s);
}

struct ShuffleSpec {
    ShuffleAxis axis = ShuffleAxis::Sequence;
    int m = 1;  // draws per evaluation
    uint64_t rng_seed = 0;
    enum class Resample { PerTimestep, PerInnerStep } resample = Resample::PerTimestep;
    bool identity_permutations = false;  // diagnostic: phi = id

    void validate() const {
        if (m < 1) throw ConfigError("ShuffleSpec: m must be >= 1");
    }
};

struct HsrSpec {
    double alpha = 0.4;
    double t1_frac = 0.2;
    double t2_frac = 0.9;
    double beta = 0.24;

    void validate() const {
        if (alpha < 0 || alpha > 1) throw ConfigError("HsrSpec: alpha outside [0,1]");
        if (!(t1_frac >= 0 && t1_frac <= t2_frac && t2_frac <= 1))
            throw ConfigError("HsrSpec: window fractions must satisfy 0 <= t1 <= t2 <= 1");
        if (beta < 0) throw ConfigError("HsrSpec: beta must be >= 0");
    }
    int t1_abs(int T) const { return static_cast<int>(std::lround(t1_frac * T)); }
    int t2_abs(int T) const { return static_cast<int>(std::lround(t2_frac * T)); }
    bool in_window(int t, int T) const { return t >= t1_abs(T) && t <= t2_abs(T); }
};

struct PermutationRecord {
    int t = -1;
    int block = -1;
    uint64_t draw = 0;
    int image = 0;
    char axis = 's';
    std::vector<int> perm;
};

// block -> tap for one stream at one timestep
template <typename Real>
using StreamTaps = std::map<int, AttentionTap<Real>>;

// ---------------------------------------------------------------------------
// shuffle operator
// ---------------------------------------------------------------------------

// Stacked style values (n, h, s, d).
template <typename Real>
Tensor<Real> stack_style_values(const std::vector<AttentionTap<Real>>& taps) {
    if (taps.empty()) throw ShapeError("stack_style_values: no taps");
    const Shape ref = taps[0].V.shape;
    const int n = static_cast<int>(taps.size());
    Tensor<Real> out({n, ref[0], ref[1], ref[2]});
    const int64_t per = numel_of(ref);
    for (int i = 0; i < n; ++i) {
        if (taps[static_cast<size_t>(i)].V.shape != ref)
            throw ShapeError("stack_style_values: heterogeneous shapes");
        std::copy(taps[static_cast<size_t>(i)].V.ptr(), taps[static_cast<size_t>(i)].V.ptr() + per,
                  out.ptr() + i * per);
    }
    return out;
}

// One permutation per style image along the chosen axis; for the sequence
// axis the permutation is shared across heads within that image. The draw is
// fully determined by (spec.rng_seed, draw_index, image).
template <typename Real>
Tensor<Real> shuffle_values(const Tensor<Real>& v, const ShuffleSpec& spec, uint64_t draw_index,
                            std::vector<PermutationRecord>* transcript = nullptr, int record_t = -1,
                            int record_block = -1) {
    if (v.rank() != 4) throw ShapeError("shuffle_values: expected (n,h,s,d), got " + shape_str(v.shape));
    spec.validate();
    const int n = v.shape[0], h = v.shape[1], s = v.shape[2], d = v.shape[3];
    Tensor<Real> out(v.shape);
    const Real* pv = v.ptr();
    Real* po = out.ptr();
    for (int img = 0; img < n; ++img) {
        const int extent = spec.axis == ShuffleAxis::Heads ? h
                           : spec.axis == ShuffleAxis::Sequence ? s
                                                                : d;
        std::vector<int> perm;
        if (spec.identity_permutations) {
            perm.resize(static_cast<size_t>(extent));
            for (int i = 0; i < extent; ++i) perm[static_cast<size_t>(i)] = i;
        } else {
            Rng rng(mix_key(spec.rng_seed, draw_index, static_cast<uint64_t>(img) + 1));
            perm = rng.permutation(extent);
        }
        if (transcript) {
            PermutationRecord rec;
            rec.t = record_t;
            rec.block = record_block;
            rec.draw = draw_index;
            rec.image = img;
            rec.axis = shuffle_axis_tag(spec.axis);
            rec.perm = perm;
            transcript->push_back(std::move(rec));
        }
        const int64_t base = static_cast<int64_t>(img) * h * s * d;
        for (int hh = 0; hh < h; ++hh)
            for (int j = 0; j < s; ++j)
                for (int c = 0; c < d; ++c) {
                    int sh = hh, sj = j, sc = c;
                    switch (spec.axis) {
                        case ShuffleAxis::Heads: sh = perm[static_cast<size_t>(hh)]; break;
                        case ShuffleAxis::Sequence: sj = perm[static_cast<size_t>(j)]; break;
                        case ShuffleAxis::Channels: sc = perm[static_cast<size_t>(c)]; break;
                    }
                    po[base + (static_cast<int64_t>(hh) * s + j) * d + c] =
                        pv[base + (static_cast<int64_t>(sh) * s + sj) * d + sc];
                }
    }
    return out;
}

// (n,h,s,d) -> (h, n*s, d), style-image order along the sequence axis.
template <typename Real>
Tensor<Real> concat_seq_4d(const Tensor<Real>& v) {
    if (v.rank() != 4) throw ShapeError("concat_seq_4d: expected (n,h,s,d)");
    const int n = v.shape[0], h = v.shape[1], s = v.shape[2], d = v.shape[3];
    Tensor<Real> out({h, n * s, d});
    const Real* pv = v.ptr();
    Real* po = out.ptr();
    for (int hh = 0; hh < h; ++hh)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < s; ++j)
                for (int c = 0; c < d; ++c)
                    po[(static_cast<int64_t>(hh) * n * s + i * s + j) * d + c] =
                        pv[((static_cast<int64_t>(i) * h + hh) * s + j) * d + c];
    return out;
}

// ---------------------------------------------------------------------------
// loss family
// ---------------------------------------------------------------------------

namespace detail_loss {

template <typename Real>
void require_blocks(const StreamTaps<Real>& out, const StreamTaps<Real>& other, const char* what) {
    for (const auto& [block, tap] : out) {
        (void)tap;
        if (!other.count(block))
            throw NumericError(std::string("loss: missing ") + what + " tap for block " +
                               std::to_string(block));
    }
}

template <typename Real>
Tensor<Real> mean_over_blocks(std::vector<Tensor<Real>> terms) {
    Tensor<Real> acc = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return scale(acc, Real(1) / static_cast<Real>(terms.size()));
}

// Style term against concatenated (optionally shuffled) style features. One
// draw; target branch is built from detached taps, so no gradient flows into
// it by construction.
template <typename Real>
Tensor<Real> style_term_one_draw(const StreamTaps<Real>& out, const StreamTaps<Real>& content,
                                 const std::vector<StreamTaps<Real>>& styles, Real tau,
                                 const ShuffleSpec* shuffle, int t, uint64_t draw,
                                 std::vector<PermutationRecord>* transcript) {
    std::vector<Tensor<Real>> terms;
    for (const auto& [block, tap_out] : out) {
        std::vector<AttentionTap<Real>> style_taps;
        for (const auto& st : styles) style_taps.push_back(st.at(block));
        auto [k_cat, v_cat] = concat_style_features(style_taps);
        Tensor<Real> v_target = v_cat;
        if (shuffle) {
            auto v4 = stack_style_values(style_taps);
            const uint64_t block_draw = mix_key(draw, static_cast<uint64_t>(block) + 1);
            v_target = concat_seq_4d(shuffle_values(v4, *shuffle, block_draw, transcript, t, block));
        }
        auto target =
            attention(content.at(block).Q.detach(), k_cat.detach(), v_target.detach(), tau).detach();
        auto out_attn = attention(tap_out.Q, tap_out.K, tap_out.V, tau);
        terms.push_back(l1_mean(out_attn, target));
    }
    return mean_over_blocks(std::move(terms));
}

template <typename Real>
Tensor<Real> content_term(const StreamTaps<Real>& out, const StreamTaps<Real>& content) {
    std::vector<Tensor<Real>> terms;
    for (const auto& [block, tap_out] : out)
        terms.push_back(l1_mean(tap_out.Q, content.at(block).Q.detach()));
    return mean_over_blocks(std::move(terms));
}

// L_s + beta * L_c against unshuffled concatenated style features.
template <typename Real>
Tensor<Real> loss_ad_concat(const StreamTaps<Real>& out, const StreamTaps<Real>& content,
                            const std::vector<StreamTaps<Real>>& styles, Real beta, Real tau) {
    require_blocks(out, content, "content");
    for (const auto& st : styles) require_blocks(out, st, "style");
    auto style = style_term_one_draw(out, content, styles, tau, nullptr, -1, 0, nullptr);
    auto cont = content_term(out, content);
    return add(style, scale(cont, beta));
}

}  // namespace detail_loss

// || Q_cs - Q_c ||_1, mean over blocks; the content guidance term.
template <typename Real>
Tensor<Real> loss_content(const StreamTaps<Real>& out, const StreamTaps<Real>& content) {
    detail_loss::require_blocks(out, content, "content");
    return detail_loss::content_term(out, content);
}

template <typename Real>
Tensor<Real> loss_content(const Tensor<Real>& q_out, const Tensor<Real>& q_content) {
    return l1_mean(q_out, q_content.detach());
}

// Attention-distillation loss for a single style image.
template <typename Real>
Tensor<Real> loss_ad(const StreamTaps<Real>& out, const StreamTaps<Real>& content,
                     const StreamTaps<Real>& style, Real beta, Real tau) {
    return detail_loss::loss_ad_concat(out, content, std::vector<StreamTaps<Real>>{style}, beta, tau);
}

// Shuffled style guidance: mean over m draws of the attention discrepancy
// against concatenated shuffled style values.
template <typename Real>
Tensor<Real> loss_style_shuffled(const StreamTaps<Real>& out, const StreamTaps<Real>& content,
                                 const std::vector<StreamTaps<Real>>& styles, const ShuffleSpec& spec,
                                 Real tau, int t, uint64_t draw_offset = 0,
                                 std::vector<PermutationRecord>* transcript = nullptr) {
    spec.validate();
    detail_loss::require_blocks(out, content, "content");
    if (styles.empty()) throw NumericError("loss_style_shuffled: no style streams");
    for (const auto& st : styles) detail_loss::require_blocks(out, st, "style");
    Tensor<Real> acc;
    for (int i = 0; i < spec.m; ++i) {
        const uint64_t draw =
            mix_key(static_cast<uint64_t>(t) + 1, static_cast<uint64_t>(i) + draw_offset + 1);
        auto term = detail_loss::style_term_one_draw(out, content, styles, tau, &spec, t, draw, transcript);
        acc = acc.defined() ? add(acc, term) : term;
    }
    return scale(acc, Real(1) / static_cast<Real>(spec.m));
}

// L_VS = L_S + beta * L_c
template <typename Real>
Tensor<Real> loss_vshuffle(const StreamTaps<Real>& out, const StreamTaps<Real>& content,
                           const std::vector<StreamTaps<Real>>& styles, const ShuffleSpec& spec,
                           Real beta, Real tau, int t, uint64_t draw_offset = 0,
                           std::vector<PermutationRecord>* transcript = nullptr) {
    auto style = loss_style_shuffled(out, content, styles, spec, tau, t, draw_offset, transcript);
    auto cont = detail_loss::content_term(out, content);
    return add(style, scale(cont, beta));
}

// Piecewise hybrid: alpha * L_VS + (1-alpha) * L_AD inside [t1,t2], L_AD
// outside. The alpha endpoints are explicit branches so each endpoint is the
// other loss bit for bit, gradients included.
template <typename Real>
Tensor<Real> loss_hsr(int t, int T, const HsrSpec& hsr, const ShuffleSpec& shuffle,
                      const StreamTaps<Real>& out, const StreamTaps<Real>& content,
                      const std::vector<StreamTaps<Real>>& styles, Real tau, uint64_t draw_offset = 0,
                      std::vector<PermutationRecord>* transcript = nullptr) {
    hsr.validate();
    const Real beta = static_cast<Real>(hsr.beta);
    if (!hsr.in_window(t, T) || hsr.alpha == 0.0)
        return detail_loss::loss_ad_concat(out, content, styles, beta, tau);
    if (hsr.alpha == 1.0)
        return loss_vshuffle(out, content, styles, shuffle, beta, tau, t, draw_offset, transcript);
    auto vs = loss_vshuffle(out, content, styles, shuffle, beta, tau, t, draw_offset, transcript);
    auto ad = detail_loss::loss_ad_concat(out, content, styles, beta, tau);
    const Real a = static_cast<Real>(hsr.alpha);
    return add(scale(vs, a), scale(ad, Real(1) - a));
}

}  // namespace vshuffle

#endif
