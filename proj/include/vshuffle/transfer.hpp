#ifndef VSHUFFLE_TRANSFER_HPP
#define VSHUFFLE_TRANSFER_HPP

#include <chrono>
#include <string>
#include <vector>

#include "vshuffle/diffusion.hpp"
#include "vshuffle/image.hpp"
#include "vshuffle/losses.hpp"

namespace vshuffle {

enum class TransferMethod { StyleID, AD, VShuffle };

inline std::string transfer_method_name(TransferMethod m) {
    switch (m) {
        case TransferMethod::StyleID: return "styleid";
        case TransferMethod::AD: return "ad";
        default: return "vshuffle";
    }
}

inline TransferMethod parse_transfer_method(const std::string& s) {
    if (s == "styleid") return TransferMethod::StyleID;
    if (s == "ad") return TransferMethod::AD;
    if (s == "vshuffle") return TransferMethod::VShuffle;
    throw ConfigError("unknown transfer method: " + s);
}

struct TransferConfig {
    TransferMethod method = TransferMethod::VShuffle;
    int T = 200;
    HsrSpec hsr;           // alpha, window, beta
    ShuffleSpec shuffle;   // axis, m, seed, resample policy
    double gamma = 0.75;   // StyleID query blend
    double tau = 1.0;      // attention temperature (1.5 for the StyleID baseline)
    int n = 1;
    int inner_steps = 10;
    double lr = 0.05;
    std::vector<int> blocks;  // empty: the model's decoder blocks

    void validate() const {
        if (T < 1) throw ConfigError("TransferConfig: T must be >= 1");
        if (n < 1) throw ConfigError("TransferConfig: n must be >= 1");
        if (method != TransferMethod::VShuffle && n != 1)
            throw ConfigError("TransferConfig: only vshuffle accepts n > 1");
        if (method != TransferMethod::StyleID) {
            if (inner_steps < 0) throw ConfigError("TransferConfig: inner_steps must be >= 0");
            if (lr <= 0) throw ConfigError("TransferConfig: lr must be positive");
            hsr.validate();
            shuffle.validate();
        }
        if (gamma < 0 || gamma > 1) throw ConfigError("TransferConfig: gamma outside [0,1]");
        if (tau <= 0) throw ConfigError("TransferConfig: tau must be positive");
    }

    std::vector<int> effective_blocks(const DenoiserConfig& cfg) const {
        auto b = blocks.empty() ? cfg.decoder_blocks() : blocks;
        for (int idx : b)
            if (idx < 0 || idx >= cfg.num_attention_blocks)
                throw ConfigError("TransferConfig: block " + std::to_string(idx) + " outside 0.." +
                                  std::to_string(cfg.num_attention_blocks - 1));
        return b;
    }
};

struct TimestepRecord {
    int t = 0;
    std::vector<double> inner_losses;
};

template <typename Real>
struct TransferResult {
    Image image;
    Tensor<Real> final_latent;
    std::vector<TimestepRecord> losses;
    std::vector<PermutationRecord> transcript;
    double elapsed_seconds = 0;
    TransferConfig config;
};

namespace detail_transfer {

template <typename Real>
StreamTaps<Real> taps_by_block(std::vector<AttentionTap<Real>>&& taps) {
    StreamTaps<Real> out;
    for (auto& tap : taps) out[tap.block_index] = std::move(tap);
    return out;
}

template <typename Real>
StreamTaps<Real> extract_stream(const DenoiserModel<Real>& model, const Tensor<Real>& z, int train_t,
                                const std::vector<int>& blocks, StreamId stream, int t_tag) {
    TapRequest req;
    req.blocks = blocks;
    req.stream = stream;
    req.timestep_tag = t_tag;
    req.detach = true;
    auto res = forward(model, z.detach(), train_t, &req);
    return taps_by_block(std::move(res.taps));
}

}  // namespace detail_transfer

// StyleID: AdaIN initialization of the noise latent plus per-block injection
// of Softmax(tau QK/sqrt(d)) V computed from blended content/output queries
// against the style stream. Inference only, no optimization.
template <typename Real>
TransferResult<Real> run_styleid(const DenoiserModel<Real>& model, const Schedule<Real>& sched,
                                 const Tensor<Real>& content_latent,
                                 const std::vector<Tensor<Real>>& style_latents,
                                 const TransferConfig& cfg) {
    const auto t_start = std::chrono::steady_clock::now();
    cfg.validate();
    if (cfg.method != TransferMethod::StyleID) throw ConfigError("run_styleid: config method mismatch");
    if (style_latents.size() != 1) throw ConfigError("run_styleid: exactly one style image required");
    if (model.trained_steps == 0) throw ConfigError("run_styleid: model is untrained");
    detail::require_same_shape(content_latent, style_latents[0], "run_styleid");
    const auto blocks = cfg.effective_blocks(model.config);

    auto traj_c = ddim_invert(model, sched, content_latent, "content");
    auto traj_s = ddim_invert(model, sched, style_latents[0], "style1");

    auto zT_c = traj_c.at(cfg.T);
    auto zT_s = traj_s.at(cfg.T);
    const int spatial = static_cast<int>(zT_c.numel()) / zT_c.shape[0];
    auto z = adain(reshape(zT_c, {zT_c.shape[0], spatial}), reshape(zT_s, {zT_s.shape[0], spatial}));
    z = reshape(z, content_latent.shape);

    const Real gamma = static_cast<Real>(cfg.gamma);
    const Real tau = static_cast<Real>(cfg.tau);
    TransferResult<Real> result;
    result.config = cfg;
    for (int t = cfg.T; t >= 1; --t) {
        const int label = sched.train_index(t);
        auto taps_c = detail_transfer::extract_stream(model, traj_c.at(t), label, blocks,
                                                      StreamId::content(), t);
        auto taps_s = detail_transfer::extract_stream(model, traj_s.at(t), label, blocks,
                                                      StreamId::style(1), t);
        auto taps_out = detail_transfer::extract_stream(model, z, label, blocks, StreamId::output(), t);

        std::map<int, Tensor<Real>> inject;
        for (int b : blocks) {
            auto q = blend_queries(taps_c.at(b).Q, taps_out.at(b).Q, gamma);
            inject[b] = attention(q, taps_s.at(b).K, taps_s.at(b).V, tau);
        }
        auto eps = forward(model, z, label, nullptr, &inject).eps;
        z = ddim_step(model, sched, z, t, &eps);
    }

    result.final_latent = z;
    result.image = decode_image(z);
    result.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

namespace detail_transfer {

// Shared optimization pipeline for AD and V-Shuffle. Initializes the output
// latent with the clean content latent and, walking t = T..1, replaces it by
// the result of inner_steps Adam iterations on the per-timestep loss. The AD
// and alpha=0 paths evaluate the identical loss expression, which is what
// makes the endpoint equivalences hold bit for bit end to end.
template <typename Real>
TransferResult<Real> run_optimized(const DenoiserModel<Real>& model, const Schedule<Real>& sched,
                                   const Tensor<Real>& content_latent,
                                   const std::vector<Tensor<Real>>& style_latents,
                                   const TransferConfig& cfg) {
    const auto t_start = std::chrono::steady_clock::now();
    cfg.validate();
    if (model.trained_steps == 0) throw ConfigError("transfer: model is untrained");
    if (static_cast<int>(style_latents.size()) != cfg.n)
        throw ConfigError("transfer: config n=" + std::to_string(cfg.n) + " but " +
                          std::to_string(style_latents.size()) + " style images supplied");
    for (const auto& s : style_latents) detail::require_same_shape(content_latent, s, "transfer");
    const auto blocks = cfg.effective_blocks(model.config);
    const Real beta = static_cast<Real>(cfg.hsr.beta);
    const Real tau = static_cast<Real>(cfg.tau);

    auto traj_c = ddim_invert(model, sched, content_latent, "content");
    std::vector<Trajectory<Real>> traj_s;
    for (size_t i = 0; i < style_latents.size(); ++i)
        traj_s.push_back(ddim_invert(model, sched, style_latents[i],
                                     "style" + std::to_string(i + 1)));

    TransferResult<Real> result;
    result.config = cfg;
    Tensor<Real> z = content_latent.clone();  // z_T^{cs} = z_0^c

    for (int t = cfg.T; t >= 1; --t) {
        const int label = sched.train_index(t);
        auto taps_c = extract_stream(model, traj_c.at(t), label, blocks, StreamId::content(), t);
        std::vector<StreamTaps<Real>> taps_s;
        for (size_t i = 0; i < traj_s.size(); ++i)
            taps_s.push_back(extract_stream(model, traj_s[i].at(t), label, blocks,
                                            StreamId::style(static_cast<int>(i) + 1), t));

        TimestepRecord rec;
        rec.t = t;
        AdamState<Real> adam = AdamState<Real>::zeros_like(z);
        for (int k = 0; k < cfg.inner_steps; ++k) {
            GradTape<Real> tape;
            auto zl = tape.leaf(z);
            TapRequest req;
            req.blocks = blocks;
            req.stream = StreamId::output();
            req.timestep_tag = t;
            req.detach = false;
            auto fwd = forward_with_params(model.config, model.params, zl, label, &req);
            auto taps_out = taps_by_block(std::move(fwd.taps));

            const uint64_t offset =
                cfg.shuffle.resample == ShuffleSpec::Resample::PerInnerStep
                    ? static_cast<uint64_t>(k) * static_cast<uint64_t>(cfg.shuffle.m)
                    : 0;
            std::vector<PermutationRecord>* transcript =
                (k == 0 || cfg.shuffle.resample == ShuffleSpec::Resample::PerInnerStep)
                    ? &result.transcript
                    : nullptr;
            Tensor<Real> loss;
            if (cfg.method == TransferMethod::AD) {
                loss = detail_loss::loss_ad_concat(taps_out, taps_c, taps_s, beta, tau);
            } else {
                loss = loss_hsr(t, cfg.T, cfg.hsr, cfg.shuffle, taps_out, taps_c, taps_s, tau, offset,
                                transcript);
            }
            rec.inner_losses.push_back(static_cast<double>(loss.item()));
            backward(loss);

            Tensor<Real> z_next;
            AdamState<Real> adam_next;
            if (!adam_step(z, zl.grad_tensor(), adam, static_cast<Real>(cfg.lr),
                           static_cast<int64_t>(k) + 1, z_next, adam_next))
                throw NumericError("transfer: optimizer diverged at t=" + std::to_string(t) +
                                   " inner step " + std::to_string(k));
            z = z_next;
            adam = adam_next;
        }
        result.losses.push_back(std::move(rec));
    }

    result.final_latent = z;
    result.image = decode_image(z);
    result.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

}  // namespace detail_transfer

// Attention distillation: per-timestep latent optimization against the
// single-style attention target.
template <typename Real>
TransferResult<Real> run_ad(const DenoiserModel<Real>& model, const Schedule<Real>& sched,
                            const Tensor<Real>& content_latent,
                            const std::vector<Tensor<Real>>& style_latents, const TransferConfig& cfg) {
    if (cfg.method != TransferMethod::AD) throw ConfigError("run_ad: config method mismatch");
    return detail_transfer::run_optimized(model, sched, content_latent, style_latents, cfg);
}

// V-Shuffle: the same optimization loop driven by the hybrid shuffled loss
// over one or more style trajectories.
template <typename Real>
TransferResult<Real> run_vshuffle(const DenoiserModel<Real>& model, const Schedule<Real>& sched,
                                  const Tensor<Real>& content_latent,
                                  const std::vector<Tensor<Real>>& style_latents,
                                  const TransferConfig& cfg) {
    if (cfg.method != TransferMethod::VShuffle) throw ConfigError("run_vshuffle: config method mismatch");
    return detail_transfer::run_optimized(model, sched, content_latent, style_latents, cfg);
}

template <typename Real>
TransferResult<Real> run_transfer(const DenoiserModel<Real>& model, const Schedule<Real>& sched,
                                  const Tensor<Real>& content_latent,
                                  const std::vector<Tensor<Real>>& style_latents,
                                  const TransferConfig& cfg) {
    switch (cfg.method) {
        case TransferMethod::StyleID: return run_styleid(model, sched, content_latent, style_latents, cfg);
        case TransferMethod::AD: return run_ad(model, sched, content_latent, style_latents, cfg);
        default: return run_vshuffle(model, sched, content_latent, style_latents, cfg);
    }
}

}  // namespace vshuffle

#endif
