#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "vshuffle/losses.hpp"
#include "vshuffle/rng.hpp"

using namespace vshuffle;

namespace {

template <typename Real>
AttentionTap<Real> random_tap(Rng& rng, int h, int s, int d, int block) {
    AttentionTap<Real> tap;
    tap.block_index = block;
    tap.Q = Tensor<Real>::randn({h, s, d}, rng);
    tap.K = Tensor<Real>::randn({h, s, d}, rng);
    tap.V = Tensor<Real>::randn({h, s, d}, rng);
    return tap;
}

template <typename Real>
StreamTaps<Real> random_stream(Rng& rng, const std::vector<int>& blocks, int h, int s, int d) {
    StreamTaps<Real> out;
    for (int b : blocks) out[b] = random_tap<Real>(rng, h, s, d, b);
    return out;
}

}  // namespace

TEST_CASE("shuffle of extent-1 axis and constant rows is the identity") {
    Rng rng(1);
    ShuffleSpec spec;
    spec.axis = ShuffleAxis::Sequence;
    auto v1 = Tensor<double>::randn({2, 3, 1, 4}, rng);
    auto s1 = shuffle_values(v1, spec, 9);
    for (int64_t i = 0; i < v1.numel(); ++i) CHECK(s1[i] == v1[i]);

    // constant along s: any permutation leaves it bitwise unchanged
    Tensor<double> vc({1, 2, 5, 3});
    for (int h = 0; h < 2; ++h)
        for (int j = 0; j < 5; ++j)
            for (int c = 0; c < 3; ++c) vc[(h * 5 + j) * 3 + c] = h * 10.0 + c;
    auto sc = shuffle_values(vc, spec, 3);
    for (int64_t i = 0; i < vc.numel(); ++i) CHECK(sc[i] == vc[i]);
}

TEST_CASE("seeded shuffle draw is frozen") {
    // golden: spec.rng_seed=42, draw_index=0, image 0, s=3
    ShuffleSpec spec;
    spec.rng_seed = 42;
    auto v = Tensor<double>::from({1, 1, 3, 2}, {0, 1, 10, 11, 20, 21});
    std::vector<PermutationRecord> transcript;
    auto s = shuffle_values(v, spec, 0, &transcript);
    REQUIRE(transcript.size() == 1);
    const auto perm = transcript[0].perm;
    // frozen from the first run of this seed
    CHECK(perm == std::vector<int>{2, 0, 1});
    for (int j = 0; j < 3; ++j)
        for (int c = 0; c < 2; ++c) CHECK(s[j * 2 + c] == v[perm[static_cast<size_t>(j)] * 2 + c]);
    // multiset of rows preserved bitwise
    std::vector<std::pair<double, double>> rows_in, rows_out;
    for (int j = 0; j < 3; ++j) {
        rows_in.emplace_back(v[j * 2], v[j * 2 + 1]);
        rows_out.emplace_back(s[j * 2], s[j * 2 + 1]);
    }
    std::sort(rows_in.begin(), rows_in.end());
    std::sort(rows_out.begin(), rows_out.end());
    CHECK(rows_in == rows_out);
}

TEST_CASE("shuffle preserves the sequence-axis multiset bitwise across many draws") {
    Rng shape_rng(99);
    ShuffleSpec spec;
    spec.rng_seed = 5;
    for (uint64_t draw = 0; draw < 200; ++draw) {
        const int n = 1 + static_cast<int>(shape_rng.below(3));
        const int h = 1 + static_cast<int>(shape_rng.below(4));
        const int s = 1 + static_cast<int>(shape_rng.below(16));
        const int d = 1 + static_cast<int>(shape_rng.below(8));
        auto v = Tensor<float>::randn({n, h, s, d}, shape_rng);
        auto out = shuffle_values(v, spec, draw);
        for (int i = 0; i < n; ++i)
            for (int hh = 0; hh < h; ++hh)
                for (int c = 0; c < d; ++c) {
                    std::vector<float> col_in, col_out;
                    for (int j = 0; j < s; ++j) {
                        col_in.push_back(v[((static_cast<int64_t>(i) * h + hh) * s + j) * d + c]);
                        col_out.push_back(out[((static_cast<int64_t>(i) * h + hh) * s + j) * d + c]);
                    }
                    std::sort(col_in.begin(), col_in.end());
                    std::sort(col_out.begin(), col_out.end());
                    CHECK(col_in == col_out);
                }
    }
}

TEST_CASE("sequence shuffle shares one permutation across heads per image") {
    Rng rng(7);
    auto v = Tensor<double>::randn({2, 3, 4, 1}, rng);
    ShuffleSpec spec;
    spec.rng_seed = 11;
    std::vector<PermutationRecord> transcript;
    auto out = shuffle_values(v, spec, 1, &transcript);
    REQUIRE(transcript.size() == 2);  // one per image
    for (int img = 0; img < 2; ++img) {
        const auto& perm = transcript[static_cast<size_t>(img)].perm;
        for (int h = 0; h < 3; ++h)
            for (int j = 0; j < 4; ++j)
                CHECK(out[((img * 3 + h) * 4 + j)] == v[((img * 3 + h) * 4 + perm[static_cast<size_t>(j)])]);
    }
}

TEST_CASE("head and channel axis shuffles move whole slices") {
    Rng rng(17);
    auto v = Tensor<double>::randn({1, 3, 2, 4}, rng);
    ShuffleSpec spec;
    spec.rng_seed = 23;
    spec.axis = ShuffleAxis::Heads;
    std::vector<PermutationRecord> tr;
    auto out = shuffle_values(v, spec, 0, &tr);
    const auto perm = tr[0].perm;
    for (int h = 0; h < 3; ++h)
        for (int j = 0; j < 2; ++j)
            for (int c = 0; c < 4; ++c)
                CHECK(out[(h * 2 + j) * 4 + c] == v[(perm[static_cast<size_t>(h)] * 2 + j) * 4 + c]);

    spec.axis = ShuffleAxis::Channels;
    tr.clear();
    auto outc = shuffle_values(v, spec, 0, &tr);
    const auto permc = tr[0].perm;
    for (int h = 0; h < 3; ++h)
        for (int j = 0; j < 2; ++j)
            for (int c = 0; c < 4; ++c)
                CHECK(outc[(h * 2 + j) * 4 + c] == v[(h * 2 + j) * 4 + permc[static_cast<size_t>(c)]]);
}

TEST_CASE("loss_content basics") {
    Rng rng(2);
    auto q = Tensor<double>::randn({2, 3, 4}, rng);
    CHECK(loss_content(q, q).item() == 0.0);
    auto q2 = add_scalar(q.detach(), 2.0);
    CHECK(loss_content(q2, q).item() == doctest::Approx(2.0).epsilon(1e-12));
    // matches the naive loop oracle on a random pair
    auto a = Tensor<double>::randn({2, 3, 4}, rng);
    CHECK(loss_content(a, q).item() == doctest::Approx(oracles::l1_mean_naive(*a.data, *q.data)));
}

TEST_CASE("loss_ad vanishes on matching streams and splits into terms") {
    Rng rng(4);
    const std::vector<int> blocks{10, 11};
    auto content = random_stream<double>(rng, blocks, 2, 4, 3);
    // output stream identical to content, style identical to content
    CHECK(loss_ad(content, content, content, 0.24, 1.0).item() == 0.0);

    auto out = random_stream<double>(rng, blocks, 2, 4, 3);
    auto style = random_stream<double>(rng, blocks, 2, 4, 3);
    const double beta = 0.24;
    const double full = loss_ad(out, content, style, beta, 1.0).item();
    const double style_only = loss_ad(out, content, style, 0.0, 1.0).item();
    const double content_only = loss_content(out, content).item();
    CHECK(full == doctest::Approx(style_only + beta * content_only).epsilon(1e-12));
}

TEST_CASE("identity permutation degenerates the shuffled loss to the AD style term") {
    Rng rng(6);
    const std::vector<int> blocks{10, 11, 12};
    auto out = random_stream<double>(rng, blocks, 2, 4, 3);
    auto content = random_stream<double>(rng, blocks, 2, 4, 3);
    auto style = random_stream<double>(rng, blocks, 2, 4, 3);
    ShuffleSpec spec;
    spec.identity_permutations = true;
    spec.m = 1;
    const double shuffled = loss_style_shuffled(out, content, std::vector<StreamTaps<double>>{style},
                                                spec, 1.0, 17)
                                .item();
    const double ad_style = loss_ad(out, content, style, 0.0, 1.0).item();
    CHECK(shuffled == ad_style);  // bitwise
}

TEST_CASE("constant-V style features make shuffling a no-op") {
    Rng rng(61);
    const std::vector<int> blocks{10};
    auto out = random_stream<double>(rng, blocks, 2, 5, 3);
    auto content = random_stream<double>(rng, blocks, 2, 5, 3);
    auto style = random_stream<double>(rng, blocks, 2, 5, 3);
    // make V constant along s
    for (int h = 0; h < 2; ++h)
        for (int j = 0; j < 5; ++j)
            for (int c = 0; c < 3; ++c) style[10].V[(h * 5 + j) * 3 + c] = h + 0.5 * c;
    ShuffleSpec random_spec;
    random_spec.m = 3;
    random_spec.rng_seed = 9;
    ShuffleSpec id_spec = random_spec;
    id_spec.identity_permutations = true;
    const auto styles = std::vector<StreamTaps<double>>{style};
    CHECK(loss_style_shuffled(out, content, styles, random_spec, 1.0, 3).item() ==
          loss_style_shuffled(out, content, styles, id_spec, 1.0, 3).item());
}

TEST_CASE("m-fold loss equals the mean of single-draw losses at matching offsets") {
    Rng rng(8);
    const std::vector<int> blocks{10, 11};
    auto out = random_stream<double>(rng, blocks, 2, 4, 3);
    auto content = random_stream<double>(rng, blocks, 2, 4, 3);
    auto s1 = random_stream<double>(rng, blocks, 2, 4, 3);
    auto s2 = random_stream<double>(rng, blocks, 2, 4, 3);
    const auto styles = std::vector<StreamTaps<double>>{s1, s2};
    ShuffleSpec spec;
    spec.m = 5;
    spec.rng_seed = 31;
    const double m5 = loss_style_shuffled(out, content, styles, spec, 1.0, 12).item();
    ShuffleSpec one = spec;
    one.m = 1;
    double acc = 0;
    for (uint64_t i = 0; i < 5; ++i)
        acc += loss_style_shuffled(out, content, styles, one, 1.0, 12, i).item();
    CHECK(m5 == doctest::Approx(acc / 5).epsilon(1e-12));
}

TEST_CASE("loss_vshuffle composes style and content terms") {
    Rng rng(10);
    const std::vector<int> blocks{10};
    auto out = random_stream<double>(rng, blocks, 2, 4, 3);
    auto content = random_stream<double>(rng, blocks, 2, 4, 3);
    auto style = random_stream<double>(rng, blocks, 2, 4, 3);
    const auto styles = std::vector<StreamTaps<double>>{style};
    ShuffleSpec spec;
    spec.rng_seed = 3;
    const double vs = loss_vshuffle(out, content, styles, spec, 0.24, 1.0, 5).item();
    const double s_term = loss_style_shuffled(out, content, styles, spec, 1.0, 5).item();
    const double c_term = loss_content(out, content).item();
    CHECK(vs == doctest::Approx(s_term + 0.24 * c_term).epsilon(1e-12));
    CHECK(loss_vshuffle(out, content, styles, spec, 0.0, 1.0, 5).item() == s_term);
    // perfect-match streams: with phi = id every term vanishes exactly
    ShuffleSpec id_spec = spec;
    id_spec.identity_permutations = true;
    CHECK(loss_vshuffle(content, content, std::vector<StreamTaps<double>>{content}, id_spec, 0.7, 1.0, 5)
              .item() == 0.0);
}

TEST_CASE("loss_hsr branches bitwise at the window and at alpha endpoints") {
    Rng rng(12);
    const std::vector<int> blocks{10, 11};
    auto out = random_stream<double>(rng, blocks, 2, 4, 3);
    auto content = random_stream<double>(rng, blocks, 2, 4, 3);
    auto style = random_stream<double>(rng, blocks, 2, 4, 3);
    const auto styles = std::vector<StreamTaps<double>>{style};
    const int T = 100;
    HsrSpec hsr;  // window [20, 90]
    ShuffleSpec spec;
    spec.rng_seed = 77;

    const double ad = loss_ad(out, content, style, static_cast<double>(hsr.beta), 1.0).item();
    // outside window: any alpha
    hsr.alpha = 0.9;
    CHECK(loss_hsr(5, T, hsr, spec, out, content, styles, 1.0).item() == ad);
    CHECK(loss_hsr(95, T, hsr, spec, out, content, styles, 1.0).item() == ad);
    // window bounds inclusive
    hsr.alpha = 0.0;
    CHECK(loss_hsr(20, T, hsr, spec, out, content, styles, 1.0).item() == ad);
    CHECK(loss_hsr(90, T, hsr, spec, out, content, styles, 1.0).item() == ad);
    // alpha endpoints inside the window
    hsr.alpha = 1.0;
    const double vs =
        loss_vshuffle(out, content, styles, spec, static_cast<double>(hsr.beta), 1.0, 50).item();
    CHECK(loss_hsr(50, T, hsr, spec, out, content, styles, 1.0).item() == vs);
    CHECK_THROWS_AS([&] {
        HsrSpec bad;
        bad.alpha = 1.5;
        loss_hsr(50, T, bad, spec, out, content, styles, 1.0);
    }(), ConfigError);
}

TEST_CASE("loss_hsr is affine in alpha inside the window") {
    Rng rng(14);
    const std::vector<int> blocks{10, 11, 12};
    auto out = random_stream<double>(rng, blocks, 2, 5, 4);
    auto content = random_stream<double>(rng, blocks, 2, 5, 4);
    auto s1 = random_stream<double>(rng, blocks, 2, 5, 4);
    auto s2 = random_stream<double>(rng, blocks, 2, 5, 4);
    const auto styles = std::vector<StreamTaps<double>>{s1, s2};
    const int T = 100;
    ShuffleSpec spec;
    spec.rng_seed = 5;
    spec.m = 2;
    HsrSpec hsr;
    hsr.alpha = 0.0;
    const double lo = loss_hsr(50, T, hsr, spec, out, content, styles, 1.0).item();
    hsr.alpha = 1.0;
    const double hi = loss_hsr(50, T, hsr, spec, out, content, styles, 1.0).item();
    for (double a : {0.25, 0.5, 0.75}) {
        hsr.alpha = a;
        const double v = loss_hsr(50, T, hsr, spec, out, content, styles, 1.0).item();
        CHECK(std::abs(v - (a * hi + (1 - a) * lo)) <= 1e-9);
    }
}

// Exhaustive oracle: at s <= 4, average the loss over every permutation both
// through the library (forced draws) and through a from-scratch evaluation.
TEST_CASE("mean over all permutations matches brute-force enumeration") {
    Rng rng(16);
    const int h = 2, s = 3, d = 2;
    const std::vector<int> blocks{10};
    auto out = random_stream<double>(rng, blocks, h, s, d);
    auto content = random_stream<double>(rng, blocks, h, s, d);
    auto style = random_stream<double>(rng, blocks, h, s, d);

    // library side: find, for each permutation, a draw index that realizes it
    // (identity handled by the diagnostic switch is not enough here, so scan
    // draws until every permutation of s=3 appears)
    std::map<std::vector<int>, double> lib_loss_by_perm;
    ShuffleSpec spec;
    spec.rng_seed = 1234;
    spec.m = 1;
    for (uint64_t offset = 0; offset < 4000 && lib_loss_by_perm.size() < 6; ++offset) {
        std::vector<PermutationRecord> tr;
        const double v = loss_style_shuffled(out, content, std::vector<StreamTaps<double>>{style}, spec,
                                             1.0, 7, offset, &tr)
                             .item();
        REQUIRE(tr.size() == 1);
        lib_loss_by_perm.emplace(tr[0].perm, v);
    }
    REQUIRE(lib_loss_by_perm.size() == 6);
    double lib_mean = 0;
    for (const auto& [perm, v] : lib_loss_by_perm) lib_mean += v;
    lib_mean /= 6;

    // oracle side: naive attention + l1 for each explicit permutation
    std::vector<int> perm{0, 1, 2};
    double oracle_mean = 0;
    int count = 0;
    do {
        std::vector<double> shuffled(static_cast<size_t>(h) * s * d);
        for (int hh = 0; hh < h; ++hh)
            for (int j = 0; j < s; ++j)
                for (int c = 0; c < d; ++c)
                    shuffled[(static_cast<size_t>(hh) * s + j) * d + c] =
                        style[10].V[(hh * s + perm[static_cast<size_t>(j)]) * d + c];
        auto target = oracles::attention_naive(*content[10].Q.data, *style[10].K.data, shuffled, h, s, s,
                                               d, 1.0);
        auto outa = oracles::attention_naive(*out[10].Q.data, *out[10].K.data, *out[10].V.data, h, s, s,
                                             d, 1.0);
        oracle_mean += oracles::l1_mean_naive(outa, target);
        ++count;
    } while (std::next_permutation(perm.begin(), perm.end()));
    oracle_mean /= count;

    CHECK(std::abs(lib_mean - oracle_mean) <= 1e-9);
}
