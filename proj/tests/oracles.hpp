// Independent reference implementations used to pin expected values.
// Everything here is deliberately naive (plain loops, no shared code with
// the library kernels) so it can serve as an oracle for them.
#ifndef VSHUFFLE_TEST_ORACLES_HPP
#define VSHUFFLE_TEST_ORACLES_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include "vshuffle/tensor.hpp"

namespace oracles {

// C[p,r] = A[p,q] * B[q,r], triple loop in the naive i-j-k order.
template <typename Real>
std::vector<Real> matmul_naive(const std::vector<Real>& a, const std::vector<Real>& b, int p, int q, int r) {
    std::vector<Real> c(static_cast<size_t>(p) * r, Real(0));
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < r; ++j) {
            Real acc = 0;
            for (int k = 0; k < q; ++k) acc += a[static_cast<size_t>(i) * q + k] * b[static_cast<size_t>(k) * r + j];
            c[static_cast<size_t>(i) * r + j] = acc;
        }
    return c;
}

template <typename Real>
Real l1_mean_naive(const std::vector<Real>& a, const std::vector<Real>& b) {
    Real acc = 0;
    for (size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc / static_cast<Real>(a.size());
}

// Per-head attention with temperature, scalar loops only.
// q:(h,sq,d) k/v:(h,sk,d) -> (h,sq,d)
template <typename Real>
std::vector<Real> attention_naive(const std::vector<Real>& q, const std::vector<Real>& k,
                                  const std::vector<Real>& v, int h, int sq, int sk, int d, Real tau) {
    std::vector<Real> out(static_cast<size_t>(h) * sq * d, Real(0));
    const Real scale = tau / std::sqrt(static_cast<Real>(d));
    for (int hh = 0; hh < h; ++hh) {
        for (int i = 0; i < sq; ++i) {
            std::vector<Real> logits(static_cast<size_t>(sk));
            for (int j = 0; j < sk; ++j) {
                Real acc = 0;
                for (int c = 0; c < d; ++c)
                    acc += q[(static_cast<size_t>(hh) * sq + i) * d + c] *
                           k[(static_cast<size_t>(hh) * sk + j) * d + c];
                logits[static_cast<size_t>(j)] = acc * scale;
            }
            Real mx = logits[0];
            for (int j = 1; j < sk; ++j) mx = std::max(mx, logits[static_cast<size_t>(j)]);
            Real z = 0;
            for (int j = 0; j < sk; ++j) {
                logits[static_cast<size_t>(j)] = std::exp(logits[static_cast<size_t>(j)] - mx);
                z += logits[static_cast<size_t>(j)];
            }
            for (int c = 0; c < d; ++c) {
                Real acc = 0;
                for (int j = 0; j < sk; ++j)
                    acc += logits[static_cast<size_t>(j)] / z * v[(static_cast<size_t>(hh) * sk + j) * d + c];
                out[(static_cast<size_t>(hh) * sq + i) * d + c] = acc;
            }
        }
    }
    return out;
}

// Relative L-infinity distance between two gradients.
template <typename Real>
double rel_linf(const vshuffle::Tensor<Real>& a, const vshuffle::Tensor<Real>& b) {
    double max_diff = 0, max_ref = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        max_diff = std::max(max_diff, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
        max_ref = std::max(max_ref, std::abs(static_cast<double>(b[i])));
    }
    return max_diff / (max_ref + 1e-12);
}

}  // namespace oracles

#endif
