#ifndef VSHUFFLE_DENOISER_HPP
#define VSHUFFLE_DENOISER_HPP

#include <map>
#include <set>
#include <string>
#include <vector>

#include "vshuffle/features.hpp"
#include "vshuffle/rng.hpp"
#include "vshuffle/schedule.hpp"
#include "vshuffle/tensor.hpp"

namespace vshuffle {

// Micro attention-UNet across three resolutions S -> S/2 -> S/4. Sixteen
// self-attention blocks by default, numbered in forward-pass order so the
// last six (10..15) sit on the decoder side; attention lives at the two
// lower resolutions, full resolution is conv-only.
struct DenoiserConfig {
    int image_size = 32;
    int channels = 3;
    int base_width = 32;
    int num_attention_blocks = 16;
    int attention_heads = 4;
    int head_dim = 8;
    int timestep_embedding_dim = 64;
    int norm_groups = 8;

    int attn_width() const { return attention_heads * head_dim; }
    int width(int stage) const { return base_width * (stage + 1); }  // stage 0,1,2

    // per-stage attention counts in forward order: encB, encC, mid, decC, decB
    std::vector<int> attention_layout() const {
        std::vector<int> counts = {3, 4, 3, 3, 3};
        counts[2] += num_attention_blocks - 16;  // extras widen the bottleneck
        return counts;
    }

    // default transfer window: the six decoder-side blocks
    std::vector<int> decoder_blocks() const {
        std::vector<int> out;
        for (int b = num_attention_blocks - 6; b < num_attention_blocks; ++b) out.push_back(b);
        return out;
    }

    void validate() const {
        if (image_size < 4 || image_size % 4 != 0)
            throw ConfigError("DenoiserConfig: image_size must be a positive multiple of 4");
        if (channels != 3) throw ConfigError("DenoiserConfig: only 3-channel images supported");
        if (base_width < 8 || base_width % 8 != 0)
            throw ConfigError("DenoiserConfig: base_width must be a positive multiple of 8");
        if (num_attention_blocks < 16)
            throw ConfigError("DenoiserConfig: need at least 16 attention blocks");
        if (attention_heads < 1 || head_dim < 1) throw ConfigError("DenoiserConfig: bad attention dims");
        if (timestep_embedding_dim < 2 || timestep_embedding_dim % 2 != 0)
            throw ConfigError("DenoiserConfig: timestep_embedding_dim must be even");
        for (int stage = 0; stage < 3; ++stage)
            if (width(stage) % norm_groups != 0 || 2 * width(stage) % norm_groups != 0)
                throw ConfigError("DenoiserConfig: stage widths must divide norm groups");
    }
};

template <typename Real>
struct DenoiserModel {
    DenoiserConfig config;
    std::map<std::string, Tensor<Real>> params;
    int64_t trained_steps = 0;
};

struct TapRequest {
    std::vector<int> blocks;
    StreamId stream = StreamId::output();
    int timestep_tag = -1;
    bool detach = true;
};

template <typename Real>
struct ForwardResult {
    Tensor<Real> eps;
    std::vector<AttentionTap<Real>> taps;
};

namespace detail_unet {

template <typename Real>
Tensor<Real> sinusoidal_embedding(int t, int dim) {
    Tensor<Real> e({1, dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * (half > 1 ? static_cast<double>(i) / (half - 1) : 0.0));
        e[i] = static_cast<Real>(std::sin(t * freq));
        e[half + i] = static_cast<Real>(std::cos(t * freq));
    }
    return e;
}

template <typename Real>
class UnetPass {
public:
    using Params = std::map<std::string, Tensor<Real>>;

    UnetPass(const DenoiserConfig& cfg, const Params& params, const TapRequest* tap_req,
             const std::map<int, Tensor<Real>>* inject)
        : cfg_(cfg), params_(params), tap_req_(tap_req), inject_(inject) {}

    ForwardResult<Real> run(const Tensor<Real>& z, int train_t) {
        if (z.shape != Shape{cfg_.channels, cfg_.image_size, cfg_.image_size})
            throw ShapeError("denoiser forward: latent shape " + shape_str(z.shape) + " does not match config");
        if (tap_req_)
            for (int b : tap_req_->blocks)
                if (b < 0 || b >= cfg_.num_attention_blocks)
                    throw ConfigError("tap request: block " + std::to_string(b) + " outside 0.." +
                                      std::to_string(cfg_.num_attention_blocks - 1));
        if (inject_)
            for (const auto& [b, f] : *inject_)
                if (b < 0 || b >= cfg_.num_attention_blocks)
                    throw ConfigError("injection: block " + std::to_string(b) + " outside 0.." +
                                      std::to_string(cfg_.num_attention_blocks - 1));

        const auto layout = cfg_.attention_layout();
        const int S = cfg_.image_size;

        // timestep trunk
        auto temb = sinusoidal_embedding<Real>(train_t, cfg_.timestep_embedding_dim);
        temb = silu(add_rowvec(matmul(temb, p("temb.fc1.w")), p("temb.fc1.b")));
        temb_ = add_rowvec(matmul(temb, p("temb.fc2.w")), p("temb.fc2.b"));

        int attn_idx = 0;
        auto x = conv2d(z, p("conv_in.w"), p("conv_in.b"), 3);
        x = res_block("enc_a.res", x, cfg_.width(0), cfg_.width(0), S);
        auto skip_a = x;
        x = conv2d(x, p("down0.w"), p("down0.b"), 3, 2);
        x = res_block("enc_b.res", x, cfg_.width(1), cfg_.width(1), S / 2);
        for (int i = 0; i < layout[0]; ++i) x = attn_block(attn_idx++, x, cfg_.width(1), S / 2);
        auto skip_b = x;
        x = conv2d(x, p("down1.w"), p("down1.b"), 3, 2);
        x = res_block("enc_c.res", x, cfg_.width(2), cfg_.width(2), S / 4);
        for (int i = 0; i < layout[1]; ++i) x = attn_block(attn_idx++, x, cfg_.width(2), S / 4);
        auto skip_c = x;
        x = res_block("mid.res1", x, cfg_.width(2), cfg_.width(2), S / 4);
        for (int i = 0; i < layout[2]; ++i) x = attn_block(attn_idx++, x, cfg_.width(2), S / 4);
        x = res_block("mid.res2", x, cfg_.width(2), cfg_.width(2), S / 4);

        x = concat_channels(x, skip_c, S / 4);
        x = res_block("dec_c.res", x, 2 * cfg_.width(2), cfg_.width(2), S / 4);
        for (int i = 0; i < layout[3]; ++i) x = attn_block(attn_idx++, x, cfg_.width(2), S / 4);
        x = upsample_nearest2(x);
        x = conv2d(x, p("up0.w"), p("up0.b"), 3);
        x = concat_channels(x, skip_b, S / 2);
        x = res_block("dec_b.res", x, 2 * cfg_.width(1), cfg_.width(1), S / 2);
        for (int i = 0; i < layout[4]; ++i) x = attn_block(attn_idx++, x, cfg_.width(1), S / 2);
        x = upsample_nearest2(x);
        x = conv2d(x, p("up1.w"), p("up1.b"), 3);
        x = concat_channels(x, skip_a, S);
        x = res_block("dec_a.res", x, 2 * cfg_.width(0), cfg_.width(0), S);

        auto flat = reshape(x, {cfg_.width(0), S * S});
        flat = silu(group_norm(flat, p("out.gn.g"), p("out.gn.b"), cfg_.norm_groups));
        auto eps = conv2d(reshape(flat, {cfg_.width(0), S, S}), p("out.conv.w"), p("out.conv.b"), 3);

        ForwardResult<Real> out;
        out.eps = eps;
        out.taps = std::move(taps_);
        return out;
    }

private:
    const Tensor<Real>& p(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw NumericError("denoiser: missing parameter " + name);
        return it->second;
    }

    Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b, int hw) {
        auto cat = concat_axis0(std::vector<Tensor<Real>>{reshape(a, {a.shape[0], hw * hw}),
                                                          reshape(b, {b.shape[0], hw * hw})});
        return reshape(cat, {a.shape[0] + b.shape[0], hw, hw});
    }

    Tensor<Real> res_block(const std::string& name, const Tensor<Real>& x, int cin, int cout, int hw) {
        auto h = reshape(x, {cin, hw * hw});
        h = silu(group_norm(h, p(name + ".gn1.g"), p(name + ".gn1.b"), cfg_.norm_groups));
        auto y = conv2d(reshape(h, {cin, hw, hw}), p(name + ".conv1.w"), p(name + ".conv1.b"), 3);
        auto tproj = add_rowvec(matmul(temb_, p(name + ".temb.w")), p(name + ".temb.b"));  // (1, cout)
        y = reshape(add_colvec(reshape(y, {cout, hw * hw}), reshape(tproj, {cout})), {cout, hw * hw});
        y = silu(group_norm(y, p(name + ".gn2.g"), p(name + ".gn2.b"), cfg_.norm_groups));
        y = conv2d(reshape(y, {cout, hw, hw}), p(name + ".conv2.w"), p(name + ".conv2.b"), 3);
        Tensor<Real> skip = x;
        if (cin != cout) skip = conv2d(x, p(name + ".skip.w"), p(name + ".skip.b"), 1, 1, 0);
        return reshape(add(reshape(y, {cout, hw * hw}), reshape(skip, {cout, hw * hw})), {cout, hw, hw});
    }

    Tensor<Real> attn_block(int idx, const Tensor<Real>& x, int c, int hw) {
        const std::string name = "attn" + std::to_string(idx);
        const int s = hw * hw;
        auto flat = reshape(x, {c, s});
        auto tokens = transpose_last2(group_norm(flat, p(name + ".gn.g"), p(name + ".gn.b"), cfg_.norm_groups));
        auto Q = split_heads(add_rowvec(matmul(tokens, p(name + ".wq")), p(name + ".bq")), cfg_.attention_heads);
        auto K = split_heads(add_rowvec(matmul(tokens, p(name + ".wk")), p(name + ".bk")), cfg_.attention_heads);
        auto V = split_heads(add_rowvec(matmul(tokens, p(name + ".wv")), p(name + ".bv")), cfg_.attention_heads);

        if (tap_req_ && std::find(tap_req_->blocks.begin(), tap_req_->blocks.end(), idx) != tap_req_->blocks.end()) {
            AttentionTap<Real> tap;
            tap.block_index = idx;
            tap.timestep = tap_req_->timestep_tag;
            tap.stream = tap_req_->stream;
            tap.Q = tap_req_->detach ? Q.detach() : Q;
            tap.K = tap_req_->detach ? K.detach() : K;
            tap.V = tap_req_->detach ? V.detach() : V;
            taps_.push_back(std::move(tap));
        }

        Tensor<Real> attn_out;
        const Tensor<Real>* f = nullptr;
        if (inject_) {
            auto it = inject_->find(idx);
            if (it != inject_->end()) f = &it->second;
        }
        if (f) {
            if (f->shape != Q.shape)
                throw ShapeError("injection at block " + std::to_string(idx) + ": f shape " +
                                 shape_str(f->shape) + " vs native " + shape_str(Q.shape));
            attn_out = *f;
        } else {
            attn_out = attention(Q, K, V, Real(1));
        }
        auto y = add_rowvec(matmul(merge_heads(attn_out), p(name + ".wo")), p(name + ".bo"));
        return reshape(add(flat, transpose_last2(y)), {c, hw, hw});
    }

    const DenoiserConfig& cfg_;
    const Params& params_;
    const TapRequest* tap_req_;
    const std::map<int, Tensor<Real>>* inject_;
    Tensor<Real> temb_;
    std::vector<AttentionTap<Real>> taps_;
};

}  // namespace detail_unet

// Isolated single-block forward with optional replacement of the attention
// output ahead of the output projection. x:(s, h*d tokens at that block's
// channel width); used directly by the injection paths and their tests.
template <typename Real>
Tensor<Real> attention_block_forward(const Tensor<Real>& x_tokens,
                                     const std::map<std::string, Tensor<Real>>& params,
                                     const std::string& name, int heads, int norm_groups,
                                     const Tensor<Real>* injected = nullptr) {
    auto need = [&](const std::string& k) -> const Tensor<Real>& {
        auto it = params.find(name + k);
        if (it == params.end()) throw NumericError("attention_block_forward: missing " + name + k);
        return it->second;
    };
    auto flat = transpose_last2(x_tokens);  // (c, s)
    auto tokens = transpose_last2(group_norm(flat, need(".gn.g"), need(".gn.b"), norm_groups));
    auto Q = split_heads(add_rowvec(matmul(tokens, need(".wq")), need(".bq")), heads);
    auto K = split_heads(add_rowvec(matmul(tokens, need(".wk")), need(".bk")), heads);
    auto V = split_heads(add_rowvec(matmul(tokens, need(".wv")), need(".bv")), heads);
    Tensor<Real> attn_out;
    if (injected) {
        if (injected->shape != Q.shape)
            throw ShapeError("attention_block_forward: f shape " + shape_str(injected->shape) +
                             " vs native " + shape_str(Q.shape));
        attn_out = *injected;
    } else {
        attn_out = attention(Q, K, V, Real(1));
    }
    auto y = add_rowvec(matmul(merge_heads(attn_out), need(".wo")), need(".bo"));
    return add(x_tokens, y);
}

template <typename Real>
ForwardResult<Real> forward_with_params(const DenoiserConfig& cfg,
                                        const std::map<std::string, Tensor<Real>>& params,
                                        const Tensor<Real>& z, int train_t,
                                        const TapRequest* taps = nullptr,
                                        const std::map<int, Tensor<Real>>* inject = nullptr) {
    detail_unet::UnetPass<Real> pass(cfg, params, taps, inject);
    return pass.run(z, train_t);
}

template <typename Real>
ForwardResult<Real> forward(const DenoiserModel<Real>& model, const Tensor<Real>& z, int train_t,
                            const TapRequest* taps = nullptr,
                            const std::map<int, Tensor<Real>>* inject = nullptr) {
    return forward_with_params(model.config, model.params, z, train_t, taps, inject);
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

template <typename Real>
DenoiserModel<Real> init_model(const DenoiserConfig& cfg, uint64_t seed) {
    cfg.validate();
    DenoiserModel<Real> m;
    m.config = cfg;
    Rng rng(mix_key(seed, 0x696e6974ULL));

    auto conv = [&](const std::string& name, int cout, int cin, int k, bool zero = false) {
        const Real std_w = zero ? Real(0) : static_cast<Real>(std::sqrt(2.0 / (cin * k * k)));
        m.params[name + ".w"] = Tensor<Real>::randn({cout, cin * k * k}, rng, std_w);
        m.params[name + ".b"] = Tensor<Real>({cout}, Real(0));
    };
    auto linear = [&](const std::string& wname, const std::string& bname, int in, int out,
                      bool zero = false) {
        const Real std_w = zero ? Real(0) : static_cast<Real>(std::sqrt(1.0 / in));
        m.params[wname] = Tensor<Real>::randn({in, out}, rng, std_w);
        m.params[bname] = Tensor<Real>({out}, Real(0));
    };
    auto gn = [&](const std::string& name, int c) {
        m.params[name + ".g"] = Tensor<Real>({c}, Real(1));
        m.params[name + ".b"] = Tensor<Real>({c}, Real(0));
    };
    auto res = [&](const std::string& name, int cin, int cout) {
        gn(name + ".gn1", cin);
        conv(name + ".conv1", cout, cin, 3);
        linear(name + ".temb.w", name + ".temb.b", cfg.timestep_embedding_dim, cout);
        gn(name + ".gn2", cout);
        conv(name + ".conv2", cout, cout, 3);
        if (cin != cout) conv(name + ".skip", cout, cin, 1);
    };
    auto attn = [&](int idx, int c) {
        const std::string name = "attn" + std::to_string(idx);
        gn(name + ".gn", c);
        linear(name + ".wq", name + ".bq", c, cfg.attn_width());
        linear(name + ".wk", name + ".bk", c, cfg.attn_width());
        linear(name + ".wv", name + ".bv", c, cfg.attn_width());
        // zero-init output projection so untrained attention is a no-op
        linear(name + ".wo", name + ".bo", cfg.attn_width(), c, true);
    };

    const int w0 = cfg.width(0), w1 = cfg.width(1), w2 = cfg.width(2);
    const int td = cfg.timestep_embedding_dim;
    linear("temb.fc1.w", "temb.fc1.b", td, td);
    linear("temb.fc2.w", "temb.fc2.b", td, td);
    conv("conv_in", w0, cfg.channels, 3);
    res("enc_a.res", w0, w0);
    conv("down0", w1, w0, 3);
    res("enc_b.res", w1, w1);
    conv("down1", w2, w1, 3);
    res("enc_c.res", w2, w2);
    res("mid.res1", w2, w2);
    res("mid.res2", w2, w2);
    res("dec_c.res", 2 * w2, w2);
    conv("up0", w1, w2, 3);
    res("dec_b.res", 2 * w1, w1);
    conv("up1", w0, w1, 3);
    res("dec_a.res", 2 * w0, w0);
    gn("out.gn", w0);
    conv("out.conv", cfg.channels, w0, 3, true);  // zero-init: eps starts at 0

    const auto layout = cfg.attention_layout();
    int idx = 0;
    const int stage_width[5] = {w1, w2, w2, w2, w1};
    for (int stage = 0; stage < 5; ++stage)
        for (int i = 0; i < layout[static_cast<size_t>(stage)]; ++i) attn(idx++, stage_width[stage]);

    return m;
}

// ---------------------------------------------------------------------------
// DDPM training
// ---------------------------------------------------------------------------

struct TrainOptions {
    int steps = 2000;
    int batch_size = 4;
    double lr = 2e-3;
    uint64_t seed = 0;
};

// Standard noise-prediction objective on clean latents in [-1,1]:
// minimize E || eps - model(sqrt(abar_t) x0 + sqrt(1-abar_t) eps, t) ||^2.
template <typename Real>
std::vector<double> train(DenoiserModel<Real>& model, const std::vector<Tensor<Real>>& latents,
                          const Schedule<Real>& sched, const TrainOptions& opts) {
    if (latents.empty()) throw ConfigError("train: empty dataset");
    const Shape want{model.config.channels, model.config.image_size, model.config.image_size};
    for (const auto& l : latents)
        if (l.shape != want)
            throw ShapeError("train: dataset image " + shape_str(l.shape) + " does not match config " +
                             shape_str(want));
    std::vector<double> losses;
    if (opts.steps == 0) return losses;

    Rng rng(mix_key(opts.seed, 0x747261696eULL));
    std::map<std::string, AdamState<Real>> moments;
    for (const auto& [name, par] : model.params) moments[name] = AdamState<Real>::zeros_like(par);

    for (int step = 0; step < opts.steps; ++step) {
        try {
            GradTape<Real> tape;
            std::map<std::string, Tensor<Real>> leaves;
            for (const auto& [name, par] : model.params) leaves[name] = tape.leaf(par);

            Tensor<Real> loss;
            for (int b = 0; b < opts.batch_size; ++b) {
                const auto& x0 = latents[static_cast<size_t>(rng.below(latents.size()))];
                const int t = static_cast<int>(rng.below(static_cast<uint64_t>(sched.train_steps)));
                auto eps = Tensor<Real>::randn(want, rng);
                const Real a = sched.alphas_bar_train[static_cast<size_t>(t)];
                const Real sa = std::sqrt(a), sb = std::sqrt(Real(1) - a);
                Tensor<Real> zt(want);
                for (int64_t i = 0; i < zt.numel(); ++i) zt[i] = sa * x0[i] + sb * eps[i];
                auto pred = forward_with_params(model.config, leaves, zt, t);
                auto l = mse_mean(pred.eps, eps);
                loss = loss.defined() ? add(loss, l) : l;
            }
            loss = scale(loss, Real(1) / static_cast<Real>(opts.batch_size));
            losses.push_back(static_cast<double>(loss.item()));
            backward(loss);

            for (auto& [name, par] : model.params) {
                Tensor<Real> np;
                AdamState<Real> ns;
                if (!adam_step(par, leaves[name].grad_tensor(), moments[name], static_cast<Real>(opts.lr),
                               static_cast<int64_t>(step) + 1, np, ns))
                    throw NumericError("non-finite gradient for " + name);
                par = np;
                moments[name] = ns;
            }
        } catch (const NumericError& e) {
            throw NumericError("train: diverged at step " + std::to_string(step) + ": " + e.what());
        }
    }
    model.trained_steps += opts.steps;
    return losses;
}

inline double smoothed_loss(const std::vector<double>& losses, size_t window, bool tail) {
    if (losses.empty()) return 0;
    window = std::min(window, losses.size());
    double acc = 0;
    const size_t start = tail ? losses.size() - window : 0;
    for (size_t i = start; i < start + window; ++i) acc += losses[i];
    return acc / static_cast<double>(window);
}

}  // namespace vshuffle

#endif
