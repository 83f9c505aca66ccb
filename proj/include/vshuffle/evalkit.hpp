#ifndef VSHUFFLE_EVALKIT_HPP
#define VSHUFFLE_EVALKIT_HPP

#include <array>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <thread>

#include "vshuffle/transfer.hpp"

namespace vshuffle {

// Desk-scale stand-ins for the usual pretrained-network metrics: Gram and
// color-histogram distances for style, Sobel-edge correlation and query-
// feature distance for content. Lower is better for all four.
struct MetricReport {
    double style_proxy_gram = 0;
    double style_proxy_hist = 0;
    double content_proxy_edge = 0;
    double content_proxy_query = 0;
};

namespace detail_eval {

inline std::vector<double> sobel_magnitude(const Image& img) {
    const int H = img.height, W = img.width;
    std::vector<double> luma(static_cast<size_t>(H) * W);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const uint8_t* px = &img.rgb[(static_cast<size_t>(i) * W + j) * 3];
            luma[static_cast<size_t>(i) * W + j] = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        }
    std::vector<double> mag(static_cast<size_t>(H) * W, 0.0);
    auto at = [&](int i, int j) {
        i = std::min(H - 1, std::max(0, i));
        j = std::min(W - 1, std::max(0, j));
        return luma[static_cast<size_t>(i) * W + j];
    };
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const double gx = at(i - 1, j + 1) + 2 * at(i, j + 1) + at(i + 1, j + 1) -
                              at(i - 1, j - 1) - 2 * at(i, j - 1) - at(i + 1, j - 1);
            const double gy = at(i + 1, j - 1) + 2 * at(i + 1, j) + at(i + 1, j + 1) -
                              at(i - 1, j - 1) - 2 * at(i - 1, j) - at(i - 1, j + 1);
            mag[static_cast<size_t>(i) * W + j] = std::sqrt(gx * gx + gy * gy);
        }
    return mag;
}

// 1 - normalized cross-correlation; constant maps compare equal to constant
// maps and maximally distant from structured ones.
inline double edge_distance(const Image& a, const Image& b) {
    auto ma = sobel_magnitude(a);
    auto mb = sobel_magnitude(b);
    const size_t n = ma.size();
    double mean_a = 0, mean_b = 0;
    for (size_t i = 0; i < n; ++i) {
        mean_a += ma[i];
        mean_b += mb[i];
    }
    mean_a /= static_cast<double>(n);
    mean_b /= static_cast<double>(n);
    double cov = 0, va = 0, vb = 0;
    for (size_t i = 0; i < n; ++i) {
        cov += (ma[i] - mean_a) * (mb[i] - mean_b);
        va += (ma[i] - mean_a) * (ma[i] - mean_a);
        vb += (mb[i] - mean_b) * (mb[i] - mean_b);
    }
    const double denom = std::sqrt(va * vb);
    double ncc;
    if (denom < 1e-12)
        ncc = (va < 1e-12 && vb < 1e-12) ? 1.0 : 0.0;
    else
        ncc = cov / denom;
    return 1.0 - ncc;
}

inline std::array<std::array<double, 32>, 3> color_histogram(const Image& img) {
    std::array<std::array<double, 32>, 3> h{};
    for (size_t px = 0; px < img.rgb.size(); px += 3)
        for (int c = 0; c < 3; ++c) ++h[static_cast<size_t>(c)][img.rgb[px + static_cast<size_t>(c)] / 8];
    const double total = static_cast<double>(img.rgb.size() / 3);
    for (auto& channel : h)
        for (auto& bin : channel) bin /= total;
    return h;
}

inline double histogram_distance(const Image& a, const Image& b) {
    const auto ha = color_histogram(a);
    const auto hb = color_histogram(b);
    double acc = 0;
    for (int c = 0; c < 3; ++c)
        for (int k = 0; k < 32; ++k) acc += std::abs(ha[static_cast<size_t>(c)][static_cast<size_t>(k)] -
                                                     hb[static_cast<size_t>(c)][static_cast<size_t>(k)]);
    return acc / 3.0;
}

// Gram matrix (hd x hd) of one tap's value tokens.
template <typename Real>
std::vector<double> gram_of_tap(const AttentionTap<Real>& tap) {
    const int h = tap.heads(), s = tap.tokens(), d = tap.head_dim();
    const int hd = h * d;
    std::vector<double> g(static_cast<size_t>(hd) * hd, 0.0);
    for (int j = 0; j < s; ++j) {
        std::vector<double> row(static_cast<size_t>(hd));
        for (int hh = 0; hh < h; ++hh)
            for (int c = 0; c < d; ++c)
                row[static_cast<size_t>(hh) * d + c] =
                    static_cast<double>(tap.V[(static_cast<int64_t>(hh) * s + j) * d + c]);
        for (int a = 0; a < hd; ++a)
            for (int b = 0; b < hd; ++b)
                g[static_cast<size_t>(a) * hd + b] += row[static_cast<size_t>(a)] * row[static_cast<size_t>(b)];
    }
    for (auto& v : g) v /= static_cast<double>(s);
    return g;
}

template <typename Real>
StreamTaps<Real> feature_taps(const DenoiserModel<Real>& model, const Image& img,
                              const std::vector<int>& blocks, int train_t) {
    TapRequest req;
    req.blocks = blocks;
    req.stream = StreamId::content();
    req.timestep_tag = 0;
    auto res = forward(model, encode_image<Real>(img), train_t, &req);
    StreamTaps<Real> out;
    for (auto& tap : res.taps) out[tap.block_index] = std::move(tap);
    return out;
}

}  // namespace detail_eval

template <typename Real>
MetricReport compute_metrics(const Image& stylized, const Image& content,
                             const std::vector<Image>& styles, const DenoiserModel<Real>& model,
                             int feature_train_t = 500, std::vector<int> blocks = {}) {
    if (styles.empty()) throw ConfigError("compute_metrics: need at least one style image");
    if (stylized.width != content.width || stylized.height != content.height)
        throw ConfigError("compute_metrics: image sizes differ");
    if (blocks.empty()) blocks = model.config.decoder_blocks();

    MetricReport rep;
    rep.content_proxy_edge = detail_eval::edge_distance(stylized, content);

    double hist = 0;
    for (const auto& s : styles) hist += detail_eval::histogram_distance(stylized, s);
    rep.style_proxy_hist = hist / static_cast<double>(styles.size());

    auto taps_cs = detail_eval::feature_taps(model, stylized, blocks, feature_train_t);
    auto taps_c = detail_eval::feature_taps(model, content, blocks, feature_train_t);

    double qdist = 0;
    for (int b : blocks) qdist += static_cast<double>(l1_mean(taps_cs.at(b).Q, taps_c.at(b).Q).item());
    rep.content_proxy_query = qdist / static_cast<double>(blocks.size());

    double gram = 0;
    for (const auto& s : styles) {
        auto taps_s = detail_eval::feature_taps(model, s, blocks, feature_train_t);
        double per_style = 0;
        for (int b : blocks) {
            auto g_cs = detail_eval::gram_of_tap(taps_cs.at(b));
            auto g_s = detail_eval::gram_of_tap(taps_s.at(b));
            double acc = 0;
            for (size_t i = 0; i < g_cs.size(); ++i) acc += std::abs(g_cs[i] - g_s[i]);
            per_style += acc / static_cast<double>(g_cs.size());
        }
        gram += per_style / static_cast<double>(blocks.size());
    }
    rep.style_proxy_gram = gram / static_cast<double>(styles.size());
    return rep;
}

// ---------------------------------------------------------------------------
// PCA of value features
// ---------------------------------------------------------------------------

namespace detail_eig {

// Cyclic Jacobi for symmetric matrices; deterministic sweep order.
inline void jacobi_eigen(std::vector<double>& a, int n, std::vector<double>& vecs) {
    vecs.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) vecs[static_cast<size_t>(i) * n + i] = 1.0;
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a[static_cast<size_t>(p) * n + q] * a[static_cast<size_t>(p) * n + q];
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = a[static_cast<size_t>(p) * n + q];
                if (std::abs(apq) < 1e-30) continue;
                const double app = a[static_cast<size_t>(p) * n + p];
                const double aqq = a[static_cast<size_t>(q) * n + q];
                const double theta = (aqq - app) / (2 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
                const double c = 1.0 / std::sqrt(t * t + 1);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = a[static_cast<size_t>(k) * n + p];
                    const double akq = a[static_cast<size_t>(k) * n + q];
                    a[static_cast<size_t>(k) * n + p] = c * akp - s * akq;
                    a[static_cast<size_t>(k) * n + q] = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a[static_cast<size_t>(p) * n + k];
                    const double aqk = a[static_cast<size_t>(q) * n + k];
                    a[static_cast<size_t>(p) * n + k] = c * apk - s * aqk;
                    a[static_cast<size_t>(q) * n + k] = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = vecs[static_cast<size_t>(k) * n + p];
                    const double vkq = vecs[static_cast<size_t>(k) * n + q];
                    vecs[static_cast<size_t>(k) * n + p] = c * vkp - s * vkq;
                    vecs[static_cast<size_t>(k) * n + q] = s * vkp + c * vkq;
                }
            }
    }
}

}  // namespace detail_eig

struct PcaResult {
    std::vector<Image> maps;        // one spatial projection per style image
    std::vector<double> explained;  // k variance ratios
    Tensor<double> components;      // (k, h*d)
    Tensor<double> scores;          // (n*s, k)
};

// PCA of the joint (n*s, h*d) value matrix at one (t, block): column-centered
// covariance eigendecomposition, deterministic sign fix (largest-|loading|
// coordinate made positive), per-component min-max color mapping.
template <typename Real>
PcaResult pca_value_features(const FeatureCache<Real>& cache, int t, int block, int k = 3) {
    auto taps = cache.style_taps(t, block);
    if (taps.empty()) throw ConfigError("pca_value_features: cache has no style taps");
    const int h = taps[0].heads(), s = taps[0].tokens(), d = taps[0].head_dim();
    const int hd = h * d;
    const int n = static_cast<int>(taps.size());
    const int rows = n * s;
    if (s < k) throw ConfigError("pca_value_features: fewer tokens than components");

    Tensor<double> x({rows, hd});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < s; ++j)
            for (int hh = 0; hh < h; ++hh)
                for (int c = 0; c < d; ++c)
                    x[(static_cast<int64_t>(i) * s + j) * hd + hh * d + c] = static_cast<double>(
                        taps[static_cast<size_t>(i)].V[(static_cast<int64_t>(hh) * s + j) * d + c]);
    for (int c = 0; c < hd; ++c) {
        double mean = 0;
        for (int r = 0; r < rows; ++r) mean += x[static_cast<int64_t>(r) * hd + c];
        mean /= rows;
        for (int r = 0; r < rows; ++r) x[static_cast<int64_t>(r) * hd + c] -= mean;
    }

    std::vector<double> cov(static_cast<size_t>(hd) * hd, 0.0);
    for (int r = 0; r < rows; ++r)
        for (int a = 0; a < hd; ++a)
            for (int b = 0; b < hd; ++b)
                cov[static_cast<size_t>(a) * hd + b] +=
                    x[static_cast<int64_t>(r) * hd + a] * x[static_cast<int64_t>(r) * hd + b];
    const double norm = rows > 1 ? rows - 1 : 1;
    for (auto& v : cov) v /= norm;

    std::vector<double> diag = cov, vecs;
    detail_eig::jacobi_eigen(diag, hd, vecs);
    std::vector<std::pair<double, int>> eig;
    for (int i = 0; i < hd; ++i)
        eig.emplace_back(std::max(0.0, diag[static_cast<size_t>(i) * hd + i]), i);
    std::sort(eig.begin(), eig.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    double total = 0;
    for (const auto& [v, idx] : eig) total += v;

    PcaResult out;
    out.components = Tensor<double>({k, hd}, 0.0);
    out.explained.assign(static_cast<size_t>(k), 0.0);
    const double rank_eps = total * 1e-12;
    for (int comp = 0; comp < k; ++comp) {
        const double lambda = eig[static_cast<size_t>(comp)].first;
        if (lambda <= rank_eps) continue;  // degenerate rank: zero component
        out.explained[static_cast<size_t>(comp)] = total > 0 ? lambda / total : 0.0;
        const int col = eig[static_cast<size_t>(comp)].second;
        int arg = 0;
        double best = 0;
        for (int i = 0; i < hd; ++i) {
            const double v = std::abs(vecs[static_cast<size_t>(i) * hd + col]);
            if (v > best) {
                best = v;
                arg = i;
            }
        }
        const double sign = vecs[static_cast<size_t>(arg) * hd + col] >= 0 ? 1.0 : -1.0;
        for (int i = 0; i < hd; ++i)
            out.components[static_cast<int64_t>(comp) * hd + i] =
                sign * vecs[static_cast<size_t>(i) * hd + col];
    }

    out.scores = Tensor<double>({rows, k}, 0.0);
    for (int r = 0; r < rows; ++r)
        for (int comp = 0; comp < k; ++comp) {
            double acc = 0;
            for (int i = 0; i < hd; ++i)
                acc += x[static_cast<int64_t>(r) * hd + i] * out.components[static_cast<int64_t>(comp) * hd + i];
            out.scores[static_cast<int64_t>(r) * k + comp] = acc;
        }

    // min-max per component over all tokens, mapped to 8-bit channels
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(s))));
    if (side * side != s) throw ConfigError("pca_value_features: non-square token grid");
    std::vector<double> lo(static_cast<size_t>(k), 1e300), hi(static_cast<size_t>(k), -1e300);
    for (int r = 0; r < rows; ++r)
        for (int comp = 0; comp < k; ++comp) {
            lo[static_cast<size_t>(comp)] = std::min(lo[static_cast<size_t>(comp)], out.scores[static_cast<int64_t>(r) * k + comp]);
            hi[static_cast<size_t>(comp)] = std::max(hi[static_cast<size_t>(comp)], out.scores[static_cast<int64_t>(r) * k + comp]);
        }
    for (int i = 0; i < n; ++i) {
        Image map;
        map.width = map.height = side;
        map.rgb.assign(static_cast<size_t>(side) * side * 3, 0);
        for (int j = 0; j < s; ++j)
            for (int c = 0; c < 3; ++c) {
                if (c >= k) continue;
                const double span = hi[static_cast<size_t>(c)] - lo[static_cast<size_t>(c)];
                const double v = span > 0
                                     ? (out.scores[(static_cast<int64_t>(i) * s + j) * k + c] - lo[static_cast<size_t>(c)]) / span
                                     : 0.5;
                map.rgb[static_cast<size_t>(j) * 3 + c] = static_cast<uint8_t>(std::lround(v * 255.0));
            }
        out.maps.push_back(std::move(map));
    }
    return out;
}

// Mean lag-1 spatial autocorrelation of the first projection channel.
inline double projection_autocorrelation(const Image& map) {
    const int H = map.height, W = map.width;
    std::vector<double> v(static_cast<size_t>(H) * W);
    for (size_t i = 0; i < v.size(); ++i) v[i] = map.rgb[i * 3] / 255.0;
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    if (var < 1e-12) return 0.0;
    double num = 0;
    int count = 0;
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            if (j + 1 < W) {
                num += (v[static_cast<size_t>(i) * W + j] - mean) * (v[static_cast<size_t>(i) * W + j + 1] - mean);
                ++count;
            }
            if (i + 1 < H) {
                num += (v[static_cast<size_t>(i) * W + j] - mean) * (v[static_cast<size_t>(i + 1) * W + j] - mean);
                ++count;
            }
        }
    return (num / count) / (var / static_cast<double>(v.size()));
}

// ---------------------------------------------------------------------------
// axis ablation
// ---------------------------------------------------------------------------

template <typename Real>
struct AxisAblationResult {
    std::array<TransferResult<Real>, 3> runs;  // h, s, d
    std::array<MetricReport, 3> metrics;
    Image grid;
};

inline Image hconcat_images(const std::vector<Image>& imgs) {
    if (imgs.empty()) throw ConfigError("hconcat_images: empty");
    Image out;
    out.height = imgs[0].height;
    for (const auto& im : imgs) {
        if (im.height != out.height) throw ConfigError("hconcat_images: heights differ");
        out.width += im.width;
    }
    out.rgb.assign(static_cast<size_t>(out.width) * out.height * 3, 0);
    int xoff = 0;
    for (const auto& im : imgs) {
        for (int i = 0; i < im.height; ++i)
            for (int j = 0; j < im.width; ++j)
                for (int c = 0; c < 3; ++c)
                    out.rgb[(static_cast<size_t>(i) * out.width + xoff + j) * 3 + c] =
                        im.rgb[(static_cast<size_t>(i) * im.width + j) * 3 + c];
        xoff += im.width;
    }
    return out;
}

// Axis probe: pure shuffled loss (alpha=1, full window) along each of
// the three axes on one content/style pair.
template <typename Real>
AxisAblationResult<Real> run_axis_ablation(const DenoiserModel<Real>& model, const Schedule<Real>& sched,
                                           const Image& content_img, const Image& style_img,
                                           TransferConfig cfg, int feature_train_t = 500) {
    cfg.method = TransferMethod::VShuffle;
    cfg.n = 1;
    cfg.hsr.alpha = 1.0;
    cfg.hsr.t1_frac = 0.0;
    cfg.hsr.t2_frac = 1.0;
    auto content = encode_image<Real>(content_img);
    std::vector<Tensor<Real>> styles{encode_image<Real>(style_img)};

    AxisAblationResult<Real> out;
    const ShuffleAxis axes[3] = {ShuffleAxis::Heads, ShuffleAxis::Sequence, ShuffleAxis::Channels};
    for (int i = 0; i < 3; ++i) {
        TransferConfig run_cfg = cfg;
        run_cfg.shuffle.axis = axes[i];
        out.runs[static_cast<size_t>(i)] = run_vshuffle(model, sched, content, styles, run_cfg);
        out.metrics[static_cast<size_t>(i)] = compute_metrics(out.runs[static_cast<size_t>(i)].image,
                                                              content_img, {style_img}, model,
                                                              feature_train_t, cfg.blocks);
    }
    out.grid = hconcat_images({content_img, style_img, out.runs[0].image, out.runs[1].image,
                               out.runs[2].image});
    return out;
}

// ---------------------------------------------------------------------------
// sweep harness
// ---------------------------------------------------------------------------

struct SweepCell {
    TransferMethod method = TransferMethod::VShuffle;
    double beta = 0.24;
    double alpha = 0.4;
    int n = 1;
    int m = 1;
    uint64_t seed = 0;
};

struct SweepRow {
    SweepCell cell;
    MetricReport metrics;
    bool pareto = false;
    bool failed = false;
    std::string error;
};

// pareto_flag: not dominated on (style_proxy_gram, content_proxy_edge).
inline void mark_pareto(std::vector<SweepRow>& rows) {
    std::vector<int> idx;
    for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
        rows[static_cast<size_t>(i)].pareto = false;
        if (!rows[static_cast<size_t>(i)].failed) idx.push_back(i);
    }
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        const auto& ma = rows[static_cast<size_t>(a)].metrics;
        const auto& mb = rows[static_cast<size_t>(b)].metrics;
        if (ma.style_proxy_gram != mb.style_proxy_gram) return ma.style_proxy_gram < mb.style_proxy_gram;
        return ma.content_proxy_edge < mb.content_proxy_edge;
    });
    double best_lt = 1e300;  // min content among strictly smaller style values
    size_t i = 0;
    while (i < idx.size()) {
        size_t j = i;
        const double style = rows[static_cast<size_t>(idx[i])].metrics.style_proxy_gram;
        double group_min = 1e300;
        while (j < idx.size() && rows[static_cast<size_t>(idx[j])].metrics.style_proxy_gram == style) {
            group_min = std::min(group_min, rows[static_cast<size_t>(idx[j])].metrics.content_proxy_edge);
            ++j;
        }
        for (size_t k = i; k < j; ++k) {
            auto& row = rows[static_cast<size_t>(idx[k])];
            row.pareto = row.metrics.content_proxy_edge <= group_min &&
                         row.metrics.content_proxy_edge < best_lt;
        }
        best_lt = std::min(best_lt, group_min);
        i = j;
    }
}

template <typename Real>
struct SweepContext {
    const DenoiserModel<Real>* model = nullptr;
    const Schedule<Real>* sched = nullptr;
    Image content_image;
    std::vector<Image> style_images;  // pool; a cell with n takes the first n
    TransferConfig base;
    int feature_train_t = 500;
};

inline int effective_parallelism(int requested) {
    int p = std::max(1, requested);
    if (const char* env = std::getenv("VSHUFFLE_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1) p = std::min(p, cap);
    }
    return p;
}

template <typename Real>
std::vector<SweepRow> run_sweep(const SweepContext<Real>& ctx, const std::vector<SweepCell>& grid,
                                int parallelism) {
    if (grid.empty()) throw ConfigError("run_sweep: empty grid");
    if (!ctx.model || !ctx.sched) throw ConfigError("run_sweep: missing model or schedule");
    std::vector<SweepRow> rows(grid.size());
    const int workers = std::min<int>(effective_parallelism(parallelism), static_cast<int>(grid.size()));

    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= grid.size()) break;
            SweepRow& row = rows[i];
            row.cell = grid[i];
            try {
                if (row.cell.n < 1 || row.cell.n > static_cast<int>(ctx.style_images.size()))
                    throw ConfigError("cell n=" + std::to_string(row.cell.n) + " exceeds style pool " +
                                      std::to_string(ctx.style_images.size()));
                TransferConfig cfg = ctx.base;
                cfg.method = row.cell.method;
                cfg.hsr.beta = row.cell.beta;
                cfg.hsr.alpha = row.cell.alpha;
                cfg.n = row.cell.n;
                cfg.shuffle.m = row.cell.m;
                cfg.shuffle.rng_seed = row.cell.seed;
                auto content = encode_image<Real>(ctx.content_image);
                std::vector<Tensor<Real>> styles;
                std::vector<Image> style_imgs(ctx.style_images.begin(),
                                              ctx.style_images.begin() + row.cell.n);
                for (const auto& im : style_imgs) styles.push_back(encode_image<Real>(im));
                auto res = run_transfer(*ctx.model, *ctx.sched, content, styles, cfg);
                row.metrics = compute_metrics(res.image, ctx.content_image, style_imgs, *ctx.model,
                                              ctx.feature_train_t, ctx.base.blocks);
            } catch (const std::exception& e) {
                row.failed = true;
                row.error = e.what();
            }
        }
    };
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    mark_pareto(rows);
    return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = "method,beta,alpha,n,m,seed,style_gram,style_hist,content_edge,content_query,pareto\n";
    char buf[320];
    for (const auto& r : rows) {
        if (r.failed) {
            std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%d,%d,%llu,nan,nan,nan,nan,0\n",
                          transfer_method_name(r.cell.method).c_str(), r.cell.beta, r.cell.alpha,
                          r.cell.n, r.cell.m, static_cast<unsigned long long>(r.cell.seed));
        } else {
            std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%d,%d,%llu,%.10g,%.10g,%.10g,%.10g,%d\n",
                          transfer_method_name(r.cell.method).c_str(), r.cell.beta, r.cell.alpha,
                          r.cell.n, r.cell.m, static_cast<unsigned long long>(r.cell.seed),
                          r.metrics.style_proxy_gram, r.metrics.style_proxy_hist,
                          r.metrics.content_proxy_edge, r.metrics.content_proxy_query,
                          r.pareto ? 1 : 0);
        }
        out += buf;
    }
    return out;
}

}  // namespace vshuffle

#endif
