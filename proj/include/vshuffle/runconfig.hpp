#ifndef VSHUFFLE_RUNCONFIG_HPP
#define VSHUFFLE_RUNCONFIG_HPP

#include <json.hpp>

#include <fstream>
#include <set>

#include "vshuffle/checkpoint.hpp"
#include "vshuffle/evalkit.hpp"
#include "vshuffle/textures.hpp"

namespace vshuffle {

// Command configuration: built-in defaults, overlaid by a JSON config file,
// overlaid by CLI flags. The fully resolved config is echoed into every run
// record so a run is reproducible from that one document.

namespace detail_cfg {

inline void check_keys(const nlohmann::json& j, const std::string& where,
                       const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
    }
}

}  // namespace detail_cfg

// Texture spec strings: "texture:<kind>:<palette_seed>[:<ncolors>]"; anything
// else is a PNG path.
struct ImageSource {
    bool is_texture = false;
    std::string path;
    TextureDomainSpec texture;

    static ImageSource parse(const std::string& s, int image_size) {
        ImageSource src;
        if (s.rfind("texture:", 0) != 0) {
            src.path = s;
            return src;
        }
        src.is_texture = true;
        std::string rest = s.substr(8);
        const auto c1 = rest.find(':');
        if (c1 == std::string::npos) throw ConfigError("texture spec needs a palette seed: " + s);
        src.texture.kind = parse_texture_kind(rest.substr(0, c1));
        std::string tail = rest.substr(c1 + 1);
        const auto c2 = tail.find(':');
        try {
            if (c2 == std::string::npos) {
                src.texture.palette_seed = std::stoull(tail);
            } else {
                src.texture.palette_seed = std::stoull(tail.substr(0, c2));
                src.texture.ncolors = std::stoi(tail.substr(c2 + 1));
            }
        } catch (const std::exception&) {
            throw ConfigError("bad texture spec: " + s);
        }
        src.texture.size = image_size;
        return src;
    }

    std::vector<Image> load(int count) const {
        if (is_texture) return make_texture_dataset(texture, count);
        if (count != 1) throw ConfigError("a PNG path supplies exactly one image: " + path);
        return {read_png(path)};
    }
};

struct TrainParams {
    DenoiserConfig model;
    ScheduleParams schedule;
    TrainOptions trainer;
    std::vector<std::string> dataset;  // texture specs or paths
    int images_per_source = 8;
    std::string out = "model.vshf";
    int previews = 0;
    std::string out_dir = ".";

    static const std::set<std::string>& keys() {
        static const std::set<std::string> k{"model", "schedule", "trainer", "dataset",
                                             "images_per_source", "out", "previews", "out_dir"};
        return k;
    }

    void apply_json(const nlohmann::json& j) {
        detail_cfg::check_keys(j, "train config", keys());
        if (j.contains("model")) {
            const auto& m = j.at("model");
            detail_cfg::check_keys(m, "train.model",
                                   {"image_size", "channels", "base_width", "num_attention_blocks",
                                    "attention_heads", "head_dim", "timestep_embedding_dim",
                                    "norm_groups"});
            model.image_size = detail_cfg::get_or(m, "image_size", model.image_size);
            model.channels = detail_cfg::get_or(m, "channels", model.channels);
            model.base_width = detail_cfg::get_or(m, "base_width", model.base_width);
            model.num_attention_blocks =
                detail_cfg::get_or(m, "num_attention_blocks", model.num_attention_blocks);
            model.attention_heads = detail_cfg::get_or(m, "attention_heads", model.attention_heads);
            model.head_dim = detail_cfg::get_or(m, "head_dim", model.head_dim);
            model.timestep_embedding_dim =
                detail_cfg::get_or(m, "timestep_embedding_dim", model.timestep_embedding_dim);
            model.norm_groups = detail_cfg::get_or(m, "norm_groups", model.norm_groups);
        }
        if (j.contains("schedule")) {
            const auto& s = j.at("schedule");
            detail_cfg::check_keys(s, "train.schedule", {"train_steps", "beta_start", "beta_end"});
            schedule.train_steps = detail_cfg::get_or(s, "train_steps", schedule.train_steps);
            schedule.beta_start = detail_cfg::get_or(s, "beta_start", schedule.beta_start);
            schedule.beta_end = detail_cfg::get_or(s, "beta_end", schedule.beta_end);
        }
        if (j.contains("trainer")) {
            const auto& t = j.at("trainer");
            detail_cfg::check_keys(t, "train.trainer", {"steps", "batch_size", "lr", "seed"});
            trainer.steps = detail_cfg::get_or(t, "steps", trainer.steps);
            trainer.batch_size = detail_cfg::get_or(t, "batch_size", trainer.batch_size);
            trainer.lr = detail_cfg::get_or(t, "lr", trainer.lr);
            trainer.seed = detail_cfg::get_or(t, "seed", trainer.seed);
        }
        dataset = detail_cfg::get_or(j, "dataset", dataset);
        images_per_source = detail_cfg::get_or(j, "images_per_source", images_per_source);
        out = detail_cfg::get_or(j, "out", out);
        previews = detail_cfg::get_or(j, "previews", previews);
        out_dir = detail_cfg::get_or(j, "out_dir", out_dir);
    }

    void validate() const {
        model.validate();
        if (trainer.steps < 0 || trainer.batch_size < 1) throw ConfigError("train: bad trainer settings");
        if (dataset.empty()) throw ConfigError("train: dataset must list at least one source");
        if (images_per_source < 1) throw ConfigError("train: images_per_source must be >= 1");
    }

    nlohmann::json echo() const {
        return {{"model", denoiser_config_json(model)},
                {"schedule",
                 {{"train_steps", schedule.train_steps},
                  {"beta_start", schedule.beta_start},
                  {"beta_end", schedule.beta_end}}},
                {"trainer",
                 {{"steps", trainer.steps},
                  {"batch_size", trainer.batch_size},
                  {"lr", trainer.lr},
                  {"seed", trainer.seed}}},
                {"dataset", dataset},
                {"images_per_source", images_per_source},
                {"out", out},
                {"previews", previews},
                {"out_dir", out_dir}};
    }
};

struct StylizeParams {
    std::string checkpoint;
    std::string content;
    std::vector<std::string> styles;
    std::string method = "vshuffle";
    int T = 200;
    double alpha = 0.4;
    double beta = 0.24;
    double gamma = 0.75;
    double tau = 0;  // 0: auto (1.5 for styleid, 1.0 otherwise)
    double t1 = 0.2;
    double t2 = 0.9;
    int n = 1;
    int m = 1;
    std::string axis = "s";
    std::string resample = "per-timestep";
    int inner_steps = 10;
    double lr = 0.05;
    std::vector<int> blocks;  // empty: decoder blocks of the model
    uint64_t seed = 0;
    std::string out_dir = "out";
    std::string name = "stylized";

    static const std::set<std::string>& keys() {
        static const std::set<std::string> k{
            "checkpoint", "content", "styles", "method", "T",  "alpha",       "beta", "gamma",
            "tau",        "t1",      "t2",     "n",      "m",  "axis",        "resample",
            "inner_steps", "lr",     "blocks", "seed",   "out_dir", "name"};
        return k;
    }

    void apply_json(const nlohmann::json& j) {
        detail_cfg::check_keys(j, "stylize config", keys());
        checkpoint = detail_cfg::get_or(j, "checkpoint", checkpoint);
        content = detail_cfg::get_or(j, "content", content);
        styles = detail_cfg::get_or(j, "styles", styles);
        method = detail_cfg::get_or(j, "method", method);
        T = detail_cfg::get_or(j, "T", T);
        alpha = detail_cfg::get_or(j, "alpha", alpha);
        beta = detail_cfg::get_or(j, "beta", beta);
        gamma = detail_cfg::get_or(j, "gamma", gamma);
        tau = detail_cfg::get_or(j, "tau", tau);
        t1 = detail_cfg::get_or(j, "t1", t1);
        t2 = detail_cfg::get_or(j, "t2", t2);
        n = detail_cfg::get_or(j, "n", n);
        m = detail_cfg::get_or(j, "m", m);
        axis = detail_cfg::get_or(j, "axis", axis);
        resample = detail_cfg::get_or(j, "resample", resample);
        inner_steps = detail_cfg::get_or(j, "inner_steps", inner_steps);
        lr = detail_cfg::get_or(j, "lr", lr);
        blocks = detail_cfg::get_or(j, "blocks", blocks);
        seed = detail_cfg::get_or(j, "seed", seed);
        out_dir = detail_cfg::get_or(j, "out_dir", out_dir);
        name = detail_cfg::get_or(j, "name", name);
    }

    double effective_tau() const {
        if (tau > 0) return tau;
        return method == "styleid" ? 1.5 : 1.0;
    }

    TransferConfig transfer_config() const {
        TransferConfig cfg;
        cfg.method = parse_transfer_method(method);
        cfg.T = T;
        cfg.hsr.alpha = alpha;
        cfg.hsr.beta = beta;
        cfg.hsr.t1_frac = t1;
        cfg.hsr.t2_frac = t2;
        cfg.gamma = gamma;
        cfg.tau = effective_tau();
        cfg.n = n;
        cfg.shuffle.m = m;
        cfg.shuffle.axis = parse_shuffle_axis(axis);
        if (resample == "per-timestep")
            cfg.shuffle.resample = ShuffleSpec::Resample::PerTimestep;
        else if (resample == "per-inner-step")
            cfg.shuffle.resample = ShuffleSpec::Resample::PerInnerStep;
        else
            throw ConfigError("stylize: unknown resample policy '" + resample + "'");
        cfg.shuffle.rng_seed = seed;
        cfg.inner_steps = inner_steps;
        cfg.lr = lr;
        cfg.blocks = blocks;
        cfg.validate();
        return cfg;
    }

    nlohmann::json echo() const {
        return {{"checkpoint", checkpoint},
                {"content", content},
                {"styles", styles},
                {"method", method},
                {"T", T},
                {"alpha", alpha},
                {"beta", beta},
                {"gamma", gamma},
                {"tau", effective_tau()},
                {"t1", t1},
                {"t2", t2},
                {"n", n},
                {"m", m},
                {"axis", axis},
                {"resample", resample},
                {"inner_steps", inner_steps},
                {"lr", lr},
                {"blocks", blocks},
                {"seed", seed},
                {"out_dir", out_dir},
                {"name", name}};
    }
};

struct SweepParams {
    StylizeParams base;                  // checkpoint, content, styles, transfer settings
    std::vector<SweepCell> grid;
    int parallelism = 1;
    int style_pool = 5;
    std::string out_dir = "sweep";

    static SweepCell cell_from_json(const nlohmann::json& j) {
        detail_cfg::check_keys(j, "sweep.grid cell", {"method", "beta", "alpha", "n", "m", "seed"});
        SweepCell c;
        c.method = parse_transfer_method(detail_cfg::get_or<std::string>(j, "method", "vshuffle"));
        c.beta = detail_cfg::get_or(j, "beta", c.beta);
        c.alpha = detail_cfg::get_or(j, "alpha", c.alpha);
        c.n = detail_cfg::get_or(j, "n", c.n);
        c.m = detail_cfg::get_or(j, "m", c.m);
        c.seed = detail_cfg::get_or(j, "seed", c.seed);
        return c;
    }

    void apply_json(const nlohmann::json& j) {
        detail_cfg::check_keys(j, "sweep config",
                               {"base", "grid", "parallelism", "style_pool", "out_dir"});
        if (j.contains("base")) base.apply_json(j.at("base"));
        if (j.contains("grid")) {
            grid.clear();
            for (const auto& cell : j.at("grid")) grid.push_back(cell_from_json(cell));
        }
        parallelism = detail_cfg::get_or(j, "parallelism", parallelism);
        style_pool = detail_cfg::get_or(j, "style_pool", style_pool);
        out_dir = detail_cfg::get_or(j, "out_dir", out_dir);
    }

    nlohmann::json echo() const {
        nlohmann::json cells = nlohmann::json::array();
        for (const auto& c : grid)
            cells.push_back({{"method", transfer_method_name(c.method)},
                             {"beta", c.beta},
                             {"alpha", c.alpha},
                             {"n", c.n},
                             {"m", c.m},
                             {"seed", c.seed}});
        return {{"base", base.echo()},
                {"grid", cells},
                {"parallelism", parallelism},
                {"style_pool", style_pool},
                {"out_dir", out_dir}};
    }
};

inline nlohmann::json load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
}

}  // namespace vshuffle

#endif
