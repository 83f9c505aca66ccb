// vshuffle command-line interface: train / stylize / sweep / pca /
// ablate-axis / verify. Exit codes: 0 ok, 1 runtime failure, 2 usage or
// config error.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "vshuffle/runconfig.hpp"
#include "vshuffle/verify.hpp"

namespace fs = std::filesystem;
using namespace vshuffle;
using nlohmann::json;

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw IoError("short write to " + path);
}

void require_file(const std::string& path, const std::string& what) {
    if (path.empty()) throw ConfigError(what + " path is required");
    if (!fs::exists(path)) throw ConfigError(what + " not found: " + path);
}

std::vector<Image> load_style_images(const StylizeParams& p, int image_size) {
    if (p.styles.empty()) throw ConfigError("at least one style source is required");
    std::vector<Image> styles;
    if (p.styles.size() == 1) {
        auto src = ImageSource::parse(p.styles[0], image_size);
        styles = src.load(src.is_texture ? p.n : 1);
    } else {
        for (const auto& s : p.styles) {
            auto imgs = ImageSource::parse(s, image_size).load(1);
            styles.push_back(imgs[0]);
        }
    }
    if (static_cast<int>(styles.size()) != p.n)
        throw ConfigError("method '" + p.method + "' with n=" + std::to_string(p.n) + " needs exactly " +
                          std::to_string(p.n) + " style images, got " + std::to_string(styles.size()) +
                          " (vshuffle accepts n>1, styleid and ad require n=1)");
    return styles;
}

json transcript_json(const std::vector<PermutationRecord>& transcript) {
    json out = json::array();
    for (const auto& r : transcript)
        out.push_back({{"t", r.t},
                       {"block", r.block},
                       {"draw", r.draw},
                       {"image", r.image},
                       {"axis", std::string(1, r.axis)},
                       {"perm", r.perm}});
    return out;
}

json losses_json(const std::vector<TimestepRecord>& recs) {
    json out = json::array();
    for (const auto& r : recs) out.push_back({{"t", r.t}, {"inner", r.inner_losses}});
    return out;
}

json metrics_json(const MetricReport& m) {
    return {{"style_gram", m.style_proxy_gram},
            {"style_hist", m.style_proxy_hist},
            {"content_edge", m.content_proxy_edge},
            {"content_query", m.content_proxy_query}};
}

int cmd_train(const TrainParams& p) {
    p.validate();
    fs::create_directories(p.out_dir);
    if (fs::path(p.out).has_parent_path()) fs::create_directories(fs::path(p.out).parent_path());

    std::vector<Image> images;
    for (const auto& srcspec : p.dataset) {
        auto src = ImageSource::parse(srcspec, p.model.image_size);
        auto imgs = src.load(src.is_texture ? p.images_per_source : 1);
        images.insert(images.end(), imgs.begin(), imgs.end());
    }
    std::vector<Tensor<float>> latents;
    for (const auto& im : images) {
        if (im.width != p.model.image_size || im.height != p.model.image_size)
            throw ConfigError("dataset image size " + std::to_string(im.width) + "x" +
                              std::to_string(im.height) + " does not match model image_size " +
                              std::to_string(p.model.image_size));
        latents.push_back(encode_image<float>(im));
    }

    auto model = init_model<float>(p.model, p.trainer.seed);
    auto sched = Schedule<float>::linear_beta(p.schedule.train_steps, p.schedule.train_steps,
                                              p.schedule.beta_start, p.schedule.beta_end);
    const auto t0 = std::chrono::steady_clock::now();
    auto losses = train(model, latents, sched, p.trainer);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    save_model(p.out, model, p.schedule);

    for (int i = 0; i < p.previews && i < static_cast<int>(images.size()); ++i)
        write_png((fs::path(p.out_dir) / ("preview" + std::to_string(i) + ".png")).string(), images[i]);

    json record;
    record["command"] = "train";
    record["config"] = p.echo();
    record["losses"] = losses;
    record["timing_ms"] = elapsed * 1000.0;
    write_text(p.out + ".run.json", record.dump(2) + "\n");

    const double head = smoothed_loss(losses, 50, false);
    const double tail = smoothed_loss(losses, 50, true);
    std::cout << "trained " << p.trainer.steps << " steps on " << latents.size() << " images\n";
    std::cout << "smoothed loss: " << head << " -> " << tail << "\n";
    std::cout << "checkpoint: " << p.out << "\n";
    return 0;
}

int cmd_stylize(const StylizeParams& p) {
    require_file(p.checkpoint, "checkpoint");
    if (p.content.empty()) throw ConfigError("content source is required");
    auto cfg = p.transfer_config();  // validates method/n constraints before any work

    auto [model, sched_params] = load_model(p.checkpoint);
    auto sched = sched_params.build<float>(p.T);
    auto content_imgs = ImageSource::parse(p.content, model.config.image_size).load(1);
    auto style_imgs = load_style_images(p, model.config.image_size);
    for (const auto& im : style_imgs)
        if (im.width != content_imgs[0].width || im.height != content_imgs[0].height)
            throw ConfigError("style image size differs from content image size");
    if (content_imgs[0].width != model.config.image_size ||
        content_imgs[0].height != model.config.image_size)
        throw ConfigError("image size " + std::to_string(content_imgs[0].width) +
                          " does not match the checkpoint's image_size " +
                          std::to_string(model.config.image_size));

    auto content = encode_image<float>(content_imgs[0]);
    std::vector<Tensor<float>> styles;
    for (const auto& im : style_imgs) styles.push_back(encode_image<float>(im));

    auto result = run_transfer(model, sched, content, styles, cfg);

    fs::create_directories(p.out_dir);
    const std::string png_path = (fs::path(p.out_dir) / (p.name + ".png")).string();
    write_png(png_path, result.image);

    json record;
    record["command"] = "stylize";
    record["config"] = p.echo();
    record["effective_blocks"] = cfg.effective_blocks(model.config);
    record["losses"] = losses_json(result.losses);
    record["permutations"] = transcript_json(result.transcript);
    record["timing_ms"] = result.elapsed_seconds * 1000.0;
    write_text((fs::path(p.out_dir) / (p.name + ".run.json")).string(), record.dump(2) + "\n");

    std::cout << "stylized image: " << png_path << "\n";
    return 0;
}

int cmd_sweep(const SweepParams& p) {
    if (p.grid.empty()) throw ConfigError("sweep grid is empty");
    require_file(p.base.checkpoint, "checkpoint");
    auto [model, sched_params] = load_model(p.base.checkpoint);
    auto sched = sched_params.build<float>(p.base.T);

    SweepContext<float> ctx;
    ctx.model = &model;
    ctx.sched = &sched;
    if (p.base.content.empty()) throw ConfigError("sweep needs a content source");
    ctx.content_image = ImageSource::parse(p.base.content, model.config.image_size).load(1)[0];
    if (p.base.styles.empty()) throw ConfigError("sweep needs a style source");
    auto style_src = ImageSource::parse(p.base.styles[0], model.config.image_size);
    if (p.base.styles.size() == 1 && style_src.is_texture) {
        ctx.style_images = style_src.load(p.style_pool);
    } else {
        for (const auto& s : p.base.styles)
            ctx.style_images.push_back(ImageSource::parse(s, model.config.image_size).load(1)[0]);
    }
    ctx.base = p.base.transfer_config();

    auto rows = run_sweep(ctx, p.grid, p.parallelism);

    fs::create_directories(p.out_dir);
    const std::string csv = sweep_csv(rows);
    write_text((fs::path(p.out_dir) / "sweep.csv").string(), csv);

    json record;
    record["command"] = "sweep";
    record["config"] = p.echo();
    json cells = json::array();
    int failures = 0;
    for (const auto& r : rows) {
        json cell;
        cell["failed"] = r.failed;
        if (r.failed) {
            cell["error"] = r.error;
            ++failures;
        } else {
            cell["metrics"] = metrics_json(r.metrics);
            cell["pareto"] = r.pareto;
        }
        cells.push_back(std::move(cell));
    }
    record["cells"] = std::move(cells);
    write_text((fs::path(p.out_dir) / "sweep.run.json").string(), record.dump(2) + "\n");

    std::cout << csv;
    if (failures) {
        for (const auto& r : rows)
            if (r.failed)
                std::cerr << "cell failed (" << transfer_method_name(r.cell.method) << " beta="
                          << r.cell.beta << " alpha=" << r.cell.alpha << " n=" << r.cell.n
                          << " m=" << r.cell.m << "): " << r.error << "\n";
        std::cerr << failures << " of " << rows.size() << " cells failed\n";
        return 1;
    }
    return 0;
}

struct PcaParams {
    std::string checkpoint;
    std::string styles;
    int n = 3;
    int T = 200;
    int t = 100;
    int block = 12;
    int k = 3;
    std::string out_dir = "pca";

    void apply_json(const json& j) {
        detail_cfg::check_keys(j, "pca config",
                               {"checkpoint", "styles", "n", "T", "t", "block", "k", "out_dir"});
        checkpoint = detail_cfg::get_or(j, "checkpoint", checkpoint);
        styles = detail_cfg::get_or(j, "styles", styles);
        n = detail_cfg::get_or(j, "n", n);
        T = detail_cfg::get_or(j, "T", T);
        t = detail_cfg::get_or(j, "t", t);
        block = detail_cfg::get_or(j, "block", block);
        k = detail_cfg::get_or(j, "k", k);
        out_dir = detail_cfg::get_or(j, "out_dir", out_dir);
    }
    json echo() const {
        return {{"checkpoint", checkpoint}, {"styles", styles}, {"n", n}, {"T", T},
                {"t", t},                   {"block", block},   {"k", k}, {"out_dir", out_dir}};
    }
};

int cmd_pca(const PcaParams& p) {
    require_file(p.checkpoint, "checkpoint");
    if (p.styles.empty()) throw ConfigError("pca needs a style source");
    if (p.t < 1 || p.t > p.T) throw ConfigError("pca: t must lie in 1..T");
    auto [model, sched_params] = load_model(p.checkpoint);
    auto sched = sched_params.build<float>(p.T);
    auto styles = ImageSource::parse(p.styles, model.config.image_size).load(p.n);

    FeatureCache<float> cache;
    cache.n = static_cast<int>(styles.size());
    for (size_t i = 0; i < styles.size(); ++i) {
        auto traj = ddim_invert(model, sched, encode_image<float>(styles[i]),
                                "style" + std::to_string(i + 1));
        TapRequest req;
        req.blocks = {p.block};
        req.stream = StreamId::style(static_cast<int>(i) + 1);
        req.timestep_tag = p.t;
        auto res = forward(model, traj.at(p.t), sched.train_index(p.t), &req);
        for (auto& tap : res.taps) cache.put(std::move(tap));
    }
    auto pca = pca_value_features(cache, p.t, p.block, p.k);

    fs::create_directories(p.out_dir);
    for (size_t i = 0; i < pca.maps.size(); ++i)
        write_png((fs::path(p.out_dir) / ("pca_style" + std::to_string(i + 1) + ".png")).string(),
                  pca.maps[i]);
    json record;
    record["command"] = "pca";
    record["config"] = p.echo();
    record["explained_variance_ratios"] = pca.explained;
    write_text((fs::path(p.out_dir) / "pca.run.json").string(), record.dump(2) + "\n");

    std::cout << "explained variance ratios:";
    for (double r : pca.explained) std::cout << " " << r;
    std::cout << "\n";
    return 0;
}

struct AblateParams {
    std::string checkpoint;
    std::string content;
    std::string style;
    int T = 200;
    int m = 1;
    int inner_steps = 10;
    double lr = 0.05;
    double beta = 0.24;
    uint64_t seed = 0;
    std::string out_dir = "ablate";

    void apply_json(const json& j) {
        detail_cfg::check_keys(j, "ablate-axis config",
                               {"checkpoint", "content", "style", "T", "m", "inner_steps", "lr", "beta",
                                "seed", "out_dir"});
        checkpoint = detail_cfg::get_or(j, "checkpoint", checkpoint);
        content = detail_cfg::get_or(j, "content", content);
        style = detail_cfg::get_or(j, "style", style);
        T = detail_cfg::get_or(j, "T", T);
        m = detail_cfg::get_or(j, "m", m);
        inner_steps = detail_cfg::get_or(j, "inner_steps", inner_steps);
        lr = detail_cfg::get_or(j, "lr", lr);
        beta = detail_cfg::get_or(j, "beta", beta);
        seed = detail_cfg::get_or(j, "seed", seed);
        out_dir = detail_cfg::get_or(j, "out_dir", out_dir);
    }
    json echo() const {
        return {{"checkpoint", checkpoint},
                {"content", content},
                {"style", style},
                {"T", T},
                {"m", m},
                {"inner_steps", inner_steps},
                {"lr", lr},
                {"beta", beta},
                {"seed", seed},
                {"out_dir", out_dir}};
    }
};

int cmd_ablate_axis(const AblateParams& p) {
    require_file(p.checkpoint, "checkpoint");
    if (p.content.empty() || p.style.empty()) throw ConfigError("ablate-axis needs content and style");
    auto [model, sched_params] = load_model(p.checkpoint);
    auto sched = sched_params.build<float>(p.T);
    auto content = ImageSource::parse(p.content, model.config.image_size).load(1)[0];
    auto style = ImageSource::parse(p.style, model.config.image_size).load(1)[0];

    TransferConfig base;
    base.method = TransferMethod::VShuffle;
    base.T = p.T;
    base.hsr.beta = p.beta;
    base.shuffle.m = p.m;
    base.shuffle.rng_seed = p.seed;
    base.inner_steps = p.inner_steps;
    base.lr = p.lr;

    auto res = run_axis_ablation(model, sched, content, style, base);

    fs::create_directories(p.out_dir);
    write_png((fs::path(p.out_dir) / "grid.png").string(), res.grid);
    const char* axis_names[3] = {"h", "s", "d"};
    std::string csv = "axis,style_gram,style_hist,content_edge,content_query\n";
    for (int i = 0; i < 3; ++i) {
        write_png((fs::path(p.out_dir) / (std::string("axis_") + axis_names[i] + ".png")).string(),
                  res.runs[static_cast<size_t>(i)].image);
        char buf[200];
        std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%.10g,%.10g\n", axis_names[i],
                      res.metrics[static_cast<size_t>(i)].style_proxy_gram,
                      res.metrics[static_cast<size_t>(i)].style_proxy_hist,
                      res.metrics[static_cast<size_t>(i)].content_proxy_edge,
                      res.metrics[static_cast<size_t>(i)].content_proxy_query);
        csv += buf;
    }
    write_text((fs::path(p.out_dir) / "ablate.csv").string(), csv);

    json record;
    record["command"] = "ablate-axis";
    record["config"] = p.echo();
    for (int i = 0; i < 3; ++i)
        record["metrics"][axis_names[i]] = metrics_json(res.metrics[static_cast<size_t>(i)]);
    write_text((fs::path(p.out_dir) / "ablate.run.json").string(), record.dump(2) + "\n");

    std::cout << csv;
    return 0;
}

int cmd_verify() {
    auto checks = run_verification_suite();
    bool all_pass = true;
    for (const auto& c : checks) {
        std::cout << (c.pass ? "PASS" : "FAIL") << "  " << c.name << " - " << c.detail << "\n";
        all_pass &= c.pass;
    }
    std::cout << (all_pass ? "verification suite passed" : "verification suite FAILED") << "\n";
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vshuffle: value-shuffled diffusion style transfer"};
    app.require_subcommand(1);

    std::string config_path;

    // ---- train ----
    TrainParams train_p;
    train_p.dataset = {"texture:stripes:1", "texture:checker:2", "texture:noise-palette:3",
                       "texture:blobs:4"};
    auto* train_cmd = app.add_subcommand("train", "train the micro denoiser on procedural textures");
    train_cmd->add_option("--config", config_path, "JSON config file");
    int t_image_size = -1, t_base_width = -1, t_steps = -1, t_batch = -1, t_previews = -1;
    double t_lr = -1;
    uint64_t t_seed = 0;
    std::string t_out;
    std::vector<std::string> t_dataset;
    train_cmd->add_option("--image-size", t_image_size, "model image size");
    train_cmd->add_option("--base-width", t_base_width, "model base width");
    train_cmd->add_option("--steps", t_steps, "training steps");
    train_cmd->add_option("--batch-size", t_batch, "batch size");
    train_cmd->add_option("--lr", t_lr, "training learning rate");
    auto* t_seed_opt = train_cmd->add_option("--seed", t_seed, "training seed");
    train_cmd->add_option("--out", t_out, "checkpoint output path");
    train_cmd->add_option("--dataset", t_dataset, "dataset sources (texture specs or PNG paths)");
    train_cmd->add_option("--previews", t_previews, "write N dataset previews");

    // ---- stylize ----
    StylizeParams sty;
    auto* sty_cmd = app.add_subcommand("stylize", "run styleid / ad / vshuffle on one content image");
    sty_cmd->add_option("--config", config_path, "JSON config file");
    StylizeParams sty_flags;
    auto* o_ckpt = sty_cmd->add_option("--checkpoint", sty_flags.checkpoint, "model checkpoint");
    auto* o_content = sty_cmd->add_option("--content", sty_flags.content,
                                          "content image (path or texture spec)");
    auto* o_styles = sty_cmd->add_option("--style", sty_flags.styles,
                                         "style images (paths or one texture spec)");
    auto* o_method = sty_cmd->add_option("--method", sty_flags.method, "styleid | ad | vshuffle");
    auto* o_T = sty_cmd->add_option("--T", sty_flags.T, "inference timesteps");
    auto* o_alpha = sty_cmd->add_option("--alpha", sty_flags.alpha, "HSR hybrid weight");
    auto* o_beta = sty_cmd->add_option("--beta", sty_flags.beta, "content weight");
    auto* o_gamma = sty_cmd->add_option("--gamma", sty_flags.gamma, "styleid query blend");
    auto* o_tau = sty_cmd->add_option("--tau", sty_flags.tau, "attention temperature");
    auto* o_t1 = sty_cmd->add_option("--t1", sty_flags.t1, "window start fraction");
    auto* o_t2 = sty_cmd->add_option("--t2", sty_flags.t2, "window end fraction");
    auto* o_n = sty_cmd->add_option("--n", sty_flags.n, "number of style images");
    auto* o_m = sty_cmd->add_option("--m", sty_flags.m, "shuffle draws per timestep");
    auto* o_axis = sty_cmd->add_option("--axis", sty_flags.axis, "shuffle axis h|s|d");
    auto* o_resample = sty_cmd->add_option("--resample", sty_flags.resample,
                                           "per-timestep | per-inner-step");
    auto* o_inner = sty_cmd->add_option("--inner-steps", sty_flags.inner_steps,
                                        "Adam steps per timestep");
    auto* o_lr = sty_cmd->add_option("--lr", sty_flags.lr, "optimization learning rate");
    auto* o_blocks = sty_cmd->add_option("--blocks", sty_flags.blocks, "attention block indices");
    auto* o_seed = sty_cmd->add_option("--seed", sty_flags.seed, "shuffle seed");
    auto* o_outdir = sty_cmd->add_option("--out-dir", sty_flags.out_dir, "output directory");
    auto* o_name = sty_cmd->add_option("--name", sty_flags.name, "output name stem");

    // ---- sweep ----
    SweepParams sweep_p;
    auto* sweep_cmd = app.add_subcommand("sweep",
                                         "grid of transfers with proxy metrics and Pareto flags");
    sweep_cmd->add_option("--config", config_path, "JSON config file (required)")->required();
    int sweep_par = -1;
    sweep_cmd->add_option("--parallelism", sweep_par, "worker threads (capped by VSHUFFLE_THREADS)");
    std::string sweep_out;
    sweep_cmd->add_option("--out-dir", sweep_out, "output directory");

    // ---- pca ----
    PcaParams pca_p;
    auto* pca_cmd = app.add_subcommand("pca", "PCA maps of style value features at one (t, block)");
    pca_cmd->add_option("--config", config_path, "JSON config file");
    PcaParams pca_flags;
    auto* pc_ckpt = pca_cmd->add_option("--checkpoint", pca_flags.checkpoint, "model checkpoint");
    auto* pc_styles = pca_cmd->add_option("--styles", pca_flags.styles,
                                          "style source (texture spec or path)");
    auto* pc_n = pca_cmd->add_option("--n", pca_flags.n, "number of style images");
    auto* pc_T = pca_cmd->add_option("--T", pca_flags.T, "inference timesteps");
    auto* pc_t = pca_cmd->add_option("--t", pca_flags.t, "timestep to analyze");
    auto* pc_block = pca_cmd->add_option("--block", pca_flags.block, "attention block");
    auto* pc_k = pca_cmd->add_option("--k", pca_flags.k, "principal components");
    auto* pc_out = pca_cmd->add_option("--out-dir", pca_flags.out_dir, "output directory");

    // ---- ablate-axis ----
    AblateParams abl_p;
    auto* abl_cmd = app.add_subcommand("ablate-axis", "compare h/s/d shuffle axes on one pair");
    abl_cmd->add_option("--config", config_path, "JSON config file");
    AblateParams abl_flags;
    auto* ab_ckpt = abl_cmd->add_option("--checkpoint", abl_flags.checkpoint, "model checkpoint");
    auto* ab_content = abl_cmd->add_option("--content", abl_flags.content, "content source");
    auto* ab_style = abl_cmd->add_option("--style", abl_flags.style, "style source");
    auto* ab_T = abl_cmd->add_option("--T", abl_flags.T, "inference timesteps");
    auto* ab_m = abl_cmd->add_option("--m", abl_flags.m, "shuffle draws");
    auto* ab_inner = abl_cmd->add_option("--inner-steps", abl_flags.inner_steps,
                                         "Adam steps per timestep");
    auto* ab_lr = abl_cmd->add_option("--lr", abl_flags.lr, "learning rate");
    auto* ab_beta = abl_cmd->add_option("--beta", abl_flags.beta, "content weight");
    auto* ab_seed = abl_cmd->add_option("--seed", abl_flags.seed, "shuffle seed");
    auto* ab_out = abl_cmd->add_option("--out-dir", abl_flags.out_dir, "output directory");

    auto* verify_cmd = app.add_subcommand("verify", "run the gradient and invariant oracle suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*train_cmd) {
            if (!config_path.empty()) train_p.apply_json(load_config_file(config_path));
            if (t_image_size > 0) train_p.model.image_size = t_image_size;
            if (t_base_width > 0) train_p.model.base_width = t_base_width;
            if (t_steps >= 0) train_p.trainer.steps = t_steps;
            if (t_batch > 0) train_p.trainer.batch_size = t_batch;
            if (t_lr > 0) train_p.trainer.lr = t_lr;
            if (t_seed_opt->count()) train_p.trainer.seed = t_seed;
            if (!t_out.empty()) train_p.out = t_out;
            if (!t_dataset.empty()) train_p.dataset = t_dataset;
            if (t_previews >= 0) train_p.previews = t_previews;
            return cmd_train(train_p);
        }
        if (*sty_cmd) {
            if (!config_path.empty()) sty.apply_json(load_config_file(config_path));
            if (o_ckpt->count()) sty.checkpoint = sty_flags.checkpoint;
            if (o_content->count()) sty.content = sty_flags.content;
            if (o_styles->count()) sty.styles = sty_flags.styles;
            if (o_method->count()) sty.method = sty_flags.method;
            if (o_T->count()) sty.T = sty_flags.T;
            if (o_alpha->count()) sty.alpha = sty_flags.alpha;
            if (o_beta->count()) sty.beta = sty_flags.beta;
            if (o_gamma->count()) sty.gamma = sty_flags.gamma;
            if (o_tau->count()) sty.tau = sty_flags.tau;
            if (o_t1->count()) sty.t1 = sty_flags.t1;
            if (o_t2->count()) sty.t2 = sty_flags.t2;
            if (o_n->count()) sty.n = sty_flags.n;
            if (o_m->count()) sty.m = sty_flags.m;
            if (o_axis->count()) sty.axis = sty_flags.axis;
            if (o_resample->count()) sty.resample = sty_flags.resample;
            if (o_inner->count()) sty.inner_steps = sty_flags.inner_steps;
            if (o_lr->count()) sty.lr = sty_flags.lr;
            if (o_blocks->count()) sty.blocks = sty_flags.blocks;
            if (o_seed->count()) sty.seed = sty_flags.seed;
            if (o_outdir->count()) sty.out_dir = sty_flags.out_dir;
            if (o_name->count()) sty.name = sty_flags.name;
            return cmd_stylize(sty);
        }
        if (*sweep_cmd) {
            sweep_p.apply_json(load_config_file(config_path));
            if (sweep_par > 0) sweep_p.parallelism = sweep_par;
            if (!sweep_out.empty()) sweep_p.out_dir = sweep_out;
            return cmd_sweep(sweep_p);
        }
        if (*pca_cmd) {
            if (!config_path.empty()) pca_p.apply_json(load_config_file(config_path));
            if (pc_ckpt->count()) pca_p.checkpoint = pca_flags.checkpoint;
            if (pc_styles->count()) pca_p.styles = pca_flags.styles;
            if (pc_n->count()) pca_p.n = pca_flags.n;
            if (pc_T->count()) pca_p.T = pca_flags.T;
            if (pc_t->count()) pca_p.t = pca_flags.t;
            if (pc_block->count()) pca_p.block = pca_flags.block;
            if (pc_k->count()) pca_p.k = pca_flags.k;
            if (pc_out->count()) pca_p.out_dir = pca_flags.out_dir;
            return cmd_pca(pca_p);
        }
        if (*abl_cmd) {
            if (!config_path.empty()) abl_p.apply_json(load_config_file(config_path));
            if (ab_ckpt->count()) abl_p.checkpoint = abl_flags.checkpoint;
            if (ab_content->count()) abl_p.content = abl_flags.content;
            if (ab_style->count()) abl_p.style = abl_flags.style;
            if (ab_T->count()) abl_p.T = abl_flags.T;
            if (ab_m->count()) abl_p.m = abl_flags.m;
            if (ab_inner->count()) abl_p.inner_steps = abl_flags.inner_steps;
            if (ab_lr->count()) abl_p.lr = abl_flags.lr;
            if (ab_beta->count()) abl_p.beta = abl_flags.beta;
            if (ab_seed->count()) abl_p.seed = abl_flags.seed;
            if (ab_out->count()) abl_p.out_dir = abl_flags.out_dir;
            return cmd_ablate_axis(abl_p);
        }
        if (*verify_cmd) return cmd_verify();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
