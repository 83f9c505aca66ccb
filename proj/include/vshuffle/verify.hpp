#ifndef VSHUFFLE_VERIFY_HPP
#define VSHUFFLE_VERIFY_HPP

#include <functional>
#include <sstream>

#include "vshuffle/diffusion.hpp"
#include "vshuffle/evalkit.hpp"
#include "vshuffle/losses.hpp"

namespace vshuffle {

// Self-contained oracle suite behind the `verify` command. Each check pairs a
// library code path with an independent reference computation.
struct VerifyCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

namespace detail_verify {

inline double rel_linf(const Tensor<double>& a, const Tensor<double>& b) {
    double diff = 0, ref = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        ref = std::max(ref, std::abs(b[i]));
    }
    return diff / (ref + 1e-12);
}

}  // namespace detail_verify

inline std::vector<VerifyCheck> run_verification_suite() {
    std::vector<VerifyCheck> checks;
    auto add = [&](const std::string& name, std::function<std::string()> body) {
        VerifyCheck c;
        c.name = name;
        try {
            c.detail = body();
            c.pass = true;
        } catch (const std::exception& e) {
            c.pass = false;
            c.detail = e.what();
        }
        checks.push_back(std::move(c));
    };

    add("softmax rows sum to one", [] {
        Rng rng(1);
        double worst = 0;
        for (int rep = 0; rep < 200; ++rep) {
            auto x = Tensor<float>::randn({5, 9}, rng, 20.0f);
            auto y = softmax_lastdim(x);
            for (int r = 0; r < 5; ++r) {
                double s = 0;
                for (int j = 0; j < 9; ++j) s += y[r * 9 + j];
                worst = std::max(worst, std::abs(s - 1.0));
            }
        }
        if (worst > 1e-6) throw NumericError("row sum deviation " + std::to_string(worst));
        return "max deviation " + std::to_string(worst);
    });

    add("matmul matches a naive triple loop", [] {
        Rng rng(2);
        for (int rep = 0; rep < 20; ++rep) {
            const int p = 1 + static_cast<int>(rng.below(8));
            const int q = 1 + static_cast<int>(rng.below(8));
            const int r = 1 + static_cast<int>(rng.below(8));
            auto a = Tensor<double>::randn({p, q}, rng);
            auto b = Tensor<double>::randn({q, r}, rng);
            auto c = matmul(a, b);
            for (int i = 0; i < p; ++i)
                for (int j = 0; j < r; ++j) {
                    double acc = 0;
                    for (int k = 0; k < q; ++k) acc += a[i * q + k] * b[k * r + j];
                    if (c[i * r + j] != acc)
                        throw NumericError("mismatch at rep " + std::to_string(rep));
                }
        }
        return "20 shapes exact";
    });

    add("backward matches central finite differences", [] {
        double worst = 0;
        for (uint64_t seed = 0; seed < 5; ++seed) {
            Rng rng(100 + seed);
            auto x0 = Tensor<double>::randn({3, 4}, rng);
            auto w = Tensor<double>::randn({4, 3}, rng);
            auto target = Tensor<double>::randn({3, 3}, rng);
            auto eval = [&](const Tensor<double>& xin, Tensor<double>* grad) {
                GradTape<double> tape;
                auto x = tape.leaf(xin);
                auto y = softmax_lastdim(silu(matmul(x, w)));
                auto loss = l1_mean(y, target);
                if (grad) {
                    backward(loss);
                    *grad = x.grad_tensor().clone();
                }
                return loss.item();
            };
            Tensor<double> analytic;
            eval(x0, &analytic);
            auto fd = finite_diff_grad<double>(
                [&](const Tensor<double>& t) { return eval(t, nullptr); }, x0, 1e-6);
            worst = std::max(worst, detail_verify::rel_linf(analytic, fd));
        }
        if (worst > 1e-3) throw NumericError("rel Linf " + std::to_string(worst));
        return "rel Linf " + std::to_string(worst);
    });

    add("value shuffle preserves the token multiset", [] {
        Rng rng(3);
        ShuffleSpec spec;
        spec.rng_seed = 7;
        for (uint64_t draw = 0; draw < 50; ++draw) {
            auto v = Tensor<float>::randn({2, 3, 9, 4}, rng);
            auto s = shuffle_values(v, spec, draw);
            for (int img = 0; img < 2; ++img)
                for (int h = 0; h < 3; ++h)
                    for (int c = 0; c < 4; ++c) {
                        std::vector<float> a, b;
                        for (int j = 0; j < 9; ++j) {
                            a.push_back(v[((img * 3 + h) * 9 + j) * 4 + c]);
                            b.push_back(s[((img * 3 + h) * 9 + j) * 4 + c]);
                        }
                        std::sort(a.begin(), a.end());
                        std::sort(b.begin(), b.end());
                        if (a != b) throw NumericError("multiset broken at draw " + std::to_string(draw));
                    }
        }
        return "50 draws exact";
    });

    add("attention equivariance under joint K,V permutation", [] {
        Rng rng(4);
        int changed = 0, total = 0;
        for (int rep = 0; rep < 50; ++rep) {
            const int s = 3 + static_cast<int>(rng.below(5));
            auto Q = Tensor<double>::randn({2, 4, 3}, rng);
            auto K = Tensor<double>::randn({2, s, 3}, rng);
            auto V = Tensor<double>::randn({2, s, 3}, rng);
            Rng prng(900 + static_cast<uint64_t>(rep));
            auto perm = prng.permutation(s);
            bool id = true;
            for (int i = 0; i < s; ++i) id &= perm[static_cast<size_t>(i)] == i;
            if (id) continue;
            auto permute = [&](const Tensor<double>& x) {
                Tensor<double> out(x.shape);
                for (int h = 0; h < 2; ++h)
                    for (int i = 0; i < s; ++i)
                        for (int c = 0; c < 3; ++c)
                            out[(h * s + i) * 3 + c] = x[(h * s + perm[static_cast<size_t>(i)]) * 3 + c];
                return out;
            };
            auto base = attention(Q, K, V, 1.0);
            auto joint = attention(Q, permute(K), permute(V), 1.0);
            for (int64_t i = 0; i < base.numel(); ++i)
                if (std::abs(base[i] - joint[i]) > 1e-6)
                    throw NumericError("joint permutation changed attention");
            auto vonly = attention(Q, K, permute(V), 1.0);
            double d = 0;
            for (int64_t i = 0; i < base.numel(); ++i) d = std::max(d, std::abs(base[i] - vonly[i]));
            ++total;
            if (d > 1e-6) ++changed;
        }
        if (changed < static_cast<int>(0.99 * total))
            throw NumericError("V-only shuffle changed only " + std::to_string(changed) + "/" +
                               std::to_string(total));
        return std::to_string(changed) + "/" + std::to_string(total) + " V-only cases changed";
    });

    add("adain is idempotent", [] {
        Rng rng(5);
        Tensor<double> x({3, 16});
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 16; ++i) x[c * 16 + i] = 0.3 * c + (i % 2 ? 0.9 : -0.9);
        auto y = Tensor<double>::randn({3, 16}, rng);
        auto once = adain(x, y);
        auto twice = adain(once, y);
        for (int64_t i = 0; i < x.numel(); ++i)
            if (std::abs(once[i] - twice[i]) > 1e-5) throw NumericError("idempotence violated");
        return "max drift below 1e-5";
    });

    add("ddim invert and step are exact inverses", [] {
        auto sched = Schedule<double>::linear_beta(20, 200);
        DenoiserConfig cfg;
        cfg.image_size = 4;
        cfg.base_width = 8;
        cfg.timestep_embedding_dim = 8;
        auto model = init_model<double>(cfg, 1);
        Rng rng(6);
        double worst = 0;
        for (int t : {1, 7, 20}) {
            auto z = Tensor<double>::randn({3, 4, 4}, rng);
            auto eps = Tensor<double>::randn({3, 4, 4}, rng);
            auto up = ddim_invert_step(sched, z, t, eps);
            auto back = ddim_step(model, sched, up, t, &eps);
            for (int64_t i = 0; i < z.numel(); ++i) worst = std::max(worst, std::abs(back[i] - z[i]));
        }
        if (worst > 1e-10) throw NumericError("round trip error " + std::to_string(worst));
        return "max error " + std::to_string(worst);
    });

    add("pareto flags match the quadratic dominance oracle", [] {
        Rng rng(7);
        for (int rep = 0; rep < 20; ++rep) {
            std::vector<SweepRow> rows(12);
            for (auto& r : rows) {
                r.metrics.style_proxy_gram = std::floor(rng.uniform() * 5) / 5.0;  // force ties
                r.metrics.content_proxy_edge = std::floor(rng.uniform() * 5) / 5.0;
            }
            mark_pareto(rows);
            for (size_t i = 0; i < rows.size(); ++i) {
                bool dominated = false;
                for (size_t j = 0; j < rows.size(); ++j) {
                    if (i == j) continue;
                    const auto& a = rows[j].metrics;
                    const auto& b = rows[i].metrics;
                    if (a.style_proxy_gram <= b.style_proxy_gram &&
                        a.content_proxy_edge <= b.content_proxy_edge &&
                        (a.style_proxy_gram < b.style_proxy_gram ||
                         a.content_proxy_edge < b.content_proxy_edge))
                        dominated = true;
                }
                if (rows[i].pareto == dominated)
                    throw NumericError("flag mismatch at rep " + std::to_string(rep));
            }
        }
        return "20 random fronts exact";
    });

    add("adam first step moves by lr", [] {
        auto p = Tensor<double>::from({3}, {0, 0, 0});
        auto g = Tensor<double>::from({3}, {2.0, -5.0, 0.1});
        auto st = AdamState<double>::zeros_like(p);
        Tensor<double> p2;
        AdamState<double> st2;
        if (!adam_step(p, g, st, 0.05, 1, p2, st2)) throw NumericError("step rejected");
        for (int i = 0; i < 3; ++i) {
            const double want = g[i] > 0 ? -0.05 : 0.05;
            if (std::abs(p2[i] - want) > 1e-4) throw NumericError("first step magnitude off");
        }
        return "bias-corrected first step = lr * sign(g)";
    });

    return checks;
}

}  // namespace vshuffle

#endif
