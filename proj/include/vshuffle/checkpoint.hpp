#ifndef VSHUFFLE_CHECKPOINT_HPP
#define VSHUFFLE_CHECKPOINT_HPP

#include <json.hpp>

#include <cstring>
#include <fstream>

#include "vshuffle/denoiser.hpp"
#include "vshuffle/diffusion.hpp"

namespace vshuffle {

// Container layout: magic "VSHF", version u32 LE, metadata-length u64 LE,
// UTF-8 JSON metadata (kind tag, config, tensor index with name/shape/byte
// offset), then raw little-endian float32 payloads back to back. Bit-exact
// round trip.
inline constexpr uint32_t kContainerVersion = 1;

struct Container {
    std::string kind;
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;  // in file order

    const Tensor<float>& get(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw IoError("container: missing tensor " + name);
    }
};

namespace detail_ckpt {

template <typename T>
void write_le(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_le(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw IoError("container: truncated header");
    return v;
}

}  // namespace detail_ckpt

inline void write_container(const std::string& path, const std::string& kind, nlohmann::json extra_meta,
                            const std::vector<std::pair<std::string, Tensor<float>>>& tensors) {
    nlohmann::json meta = std::move(extra_meta);
    meta["kind"] = kind;
    nlohmann::json index = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        nlohmann::json entry;
        entry["name"] = name;
        entry["shape"] = t.shape;
        entry["offset"] = offset;
        index.push_back(std::move(entry));
        offset += static_cast<uint64_t>(t.numel()) * sizeof(float);
    }
    meta["tensors"] = std::move(index);
    const std::string meta_str = meta.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("write_container: cannot open " + path);
    f.write("VSHF", 4);
    detail_ckpt::write_le<uint32_t>(f, kContainerVersion);
    detail_ckpt::write_le<uint64_t>(f, static_cast<uint64_t>(meta_str.size()));
    f.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    for (const auto& [name, t] : tensors)
        f.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!f) throw IoError("write_container: short write to " + path);
}

inline Container read_container(const std::string& path, const std::string& expect_kind = "") {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_container: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "VSHF", 4) != 0)
        throw IoError("read_container: " + path + " is not a VSHF container");
    const uint32_t version = detail_ckpt::read_le<uint32_t>(f);
    if (version != kContainerVersion)
        throw IoError("read_container: unsupported version " + std::to_string(version));
    const uint64_t meta_len = detail_ckpt::read_le<uint64_t>(f);
    std::string meta_str(meta_len, '\0');
    f.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
    if (!f) throw IoError("read_container: truncated metadata");

    Container c;
    try {
        c.meta = nlohmann::json::parse(meta_str);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("read_container: bad metadata: ") + e.what());
    }
    c.kind = c.meta.value("kind", "");
    if (!expect_kind.empty() && c.kind != expect_kind)
        throw IoError("read_container: expected kind " + expect_kind + ", found " + c.kind);

    for (const auto& entry : c.meta.at("tensors")) {
        Shape shape = entry.at("shape").get<Shape>();
        Tensor<float> t(shape);
        f.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
        if (!f) throw IoError("read_container: truncated payload for " + entry.at("name").get<std::string>());
        c.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
    return c;
}

// ---------------------------------------------------------------------------
// typed wrappers
// ---------------------------------------------------------------------------

struct ScheduleParams {
    int train_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    template <typename Real>
    Schedule<Real> build(int T) const {
        return Schedule<Real>::linear_beta(T, train_steps, beta_start, beta_end);
    }
};

inline nlohmann::json denoiser_config_json(const DenoiserConfig& cfg) {
    return {{"image_size", cfg.image_size},
            {"channels", cfg.channels},
            {"base_width", cfg.base_width},
            {"num_attention_blocks", cfg.num_attention_blocks},
            {"attention_heads", cfg.attention_heads},
            {"head_dim", cfg.head_dim},
            {"timestep_embedding_dim", cfg.timestep_embedding_dim},
            {"norm_groups", cfg.norm_groups}};
}

inline DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
    DenoiserConfig cfg;
    cfg.image_size = j.at("image_size").get<int>();
    cfg.channels = j.at("channels").get<int>();
    cfg.base_width = j.at("base_width").get<int>();
    cfg.num_attention_blocks = j.at("num_attention_blocks").get<int>();
    cfg.attention_heads = j.at("attention_heads").get<int>();
    cfg.head_dim = j.at("head_dim").get<int>();
    cfg.timestep_embedding_dim = j.at("timestep_embedding_dim").get<int>();
    cfg.norm_groups = j.at("norm_groups").get<int>();
    cfg.validate();
    return cfg;
}

inline void save_model(const std::string& path, const DenoiserModel<float>& model,
                       const ScheduleParams& sched) {
    nlohmann::json meta;
    meta["config"] = denoiser_config_json(model.config);
    meta["trained_steps"] = model.trained_steps;
    meta["schedule"] = {{"train_steps", sched.train_steps},
                        {"beta_start", sched.beta_start},
                        {"beta_end", sched.beta_end}};
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    for (const auto& [name, t] : model.params) tensors.emplace_back(name, t);
    write_container(path, "MODEL", std::move(meta), tensors);
}

inline std::pair<DenoiserModel<float>, ScheduleParams> load_model(const std::string& path) {
    Container c = read_container(path, "MODEL");
    DenoiserModel<float> model;
    model.config = denoiser_config_from_json(c.meta.at("config"));
    model.trained_steps = c.meta.at("trained_steps").get<int64_t>();
    for (auto& [name, t] : c.tensors) model.params[name] = std::move(t);
    ScheduleParams sched;
    sched.train_steps = c.meta.at("schedule").at("train_steps").get<int>();
    sched.beta_start = c.meta.at("schedule").at("beta_start").get<double>();
    sched.beta_end = c.meta.at("schedule").at("beta_end").get<double>();
    return {std::move(model), sched};
}

inline void save_trajectory(const std::string& path, const Trajectory<float>& traj) {
    nlohmann::json meta;
    meta["T"] = traj.T;
    meta["source_tag"] = traj.source_tag;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    for (int t = 0; t <= traj.T; ++t) tensors.emplace_back("z/" + std::to_string(t), traj.at(t));
    write_container(path, "TRAJ", std::move(meta), tensors);
}

inline Trajectory<float> load_trajectory(const std::string& path) {
    Container c = read_container(path, "TRAJ");
    Trajectory<float> traj;
    traj.T = c.meta.at("T").get<int>();
    traj.source_tag = c.meta.at("source_tag").get<std::string>();
    for (int t = 0; t <= traj.T; ++t) traj.latents.push_back(c.get("z/" + std::to_string(t)));
    return traj;
}

inline void save_feature_cache(const std::string& path, const FeatureCache<float>& cache) {
    nlohmann::json meta;
    meta["n"] = cache.n;
    nlohmann::json entries = nlohmann::json::array();
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    int i = 0;
    for (const auto& [key, tap] : cache.taps) {
        const auto& [stream, t, block] = key;
        entries.push_back({{"stream", static_cast<int>(stream.kind)},
                           {"style_index", stream.style_index},
                           {"t", t},
                           {"block", block}});
        const std::string base = "tap" + std::to_string(i++) + "/";
        tensors.emplace_back(base + "Q", tap.Q);
        tensors.emplace_back(base + "K", tap.K);
        tensors.emplace_back(base + "V", tap.V);
    }
    meta["entries"] = std::move(entries);
    write_container(path, "FEAT", std::move(meta), tensors);
}

inline FeatureCache<float> load_feature_cache(const std::string& path) {
    Container c = read_container(path, "FEAT");
    FeatureCache<float> cache;
    cache.n = c.meta.at("n").get<int>();
    int i = 0;
    for (const auto& entry : c.meta.at("entries")) {
        AttentionTap<float> tap;
        tap.stream.kind = static_cast<StreamId::Kind>(entry.at("stream").get<int>());
        tap.stream.style_index = entry.at("style_index").get<int>();
        tap.timestep = entry.at("t").get<int>();
        tap.block_index = entry.at("block").get<int>();
        const std::string base = "tap" + std::to_string(i++) + "/";
        tap.Q = c.get(base + "Q");
        tap.K = c.get(base + "K");
        tap.V = c.get(base + "V");
        cache.put(std::move(tap));
    }
    return cache;
}

}  // namespace vshuffle

#endif
