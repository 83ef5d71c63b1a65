#ifndef ILKD_TRIPLET_HPP
#define ILKD_TRIPLET_HPP

#include "ilkd/tensor.hpp"

#include <limits>
#include <vector>

namespace ilkd {

struct Triplet {
    int anchor = -1;
    int positive = -1;
    int negative = -1;
};

/// Squared Euclidean distances between all row pairs, shape (N, N).
template <typename T>
Tensor<T> pairwise_sqdist(const Tensor<T>& z) {
    const int n = z.dim(0), d = z.dim(1);
    Tensor<T> out({n, n}, T(0));
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            T s = T(0);
            const T* a = z.data() + static_cast<int64_t>(i) * d;
            const T* b = z.data() + static_cast<int64_t>(j) * d;
            for (int c = 0; c < d; ++c) {
                const T t = a[c] - b[c];
                s += t * t;
            }
            out(i, j) = s;
            out(j, i) = s;
        }
    return out;
}

/// Batch-hard mining. Per anchor: positive = same-class sample at maximum
/// squared distance, negative = other-class sample at minimum squared
/// distance; ties keep the first index. Anchors lacking either partner are
/// skipped; no valid anchor yields an empty list.
template <typename T>
std::vector<Triplet> mine_triplets(const Tensor<T>& z, const std::vector<int>& labels) {
    const int n = z.dim(0);
    ILKD_CHECK(static_cast<int>(labels.size()) == n, "labels/batch size mismatch");
    Tensor<T> dist = pairwise_sqdist(z);
    std::vector<Triplet> out;
    for (int a = 0; a < n; ++a) {
        int pos = -1, neg = -1;
        T pos_d = -std::numeric_limits<T>::infinity();
        T neg_d = std::numeric_limits<T>::infinity();
        for (int j = 0; j < n; ++j) {
            if (j == a) continue;
            if (labels[j] == labels[a]) {
                if (dist(a, j) > pos_d) {
                    pos_d = dist(a, j);
                    pos = j;
                }
            } else if (dist(a, j) < neg_d) {
                neg_d = dist(a, j);
                neg = j;
            }
        }
        if (pos >= 0 && neg >= 0) out.push_back({a, pos, neg});
    }
    return out;
}

/// Hinge triplet loss, mean over the given triplets, squared Euclidean
/// distance on raw embeddings. An empty list gives 0 and leaves *dz all
/// zero (callers treat that as "no triplet term this batch"). When dz is
/// non-null it is overwritten with dL/dZ.
template <typename T>
T triplet_loss(const Tensor<T>& z, const std::vector<Triplet>& trips, T margin, Tensor<T>* dz = nullptr) {
    ILKD_CHECK(margin > T(0), "margin must be positive");
    const int n = z.dim(0), d = z.dim(1);
    if (dz) *dz = Tensor<T>(z.shape(), T(0));
    if (trips.empty()) return T(0);

    auto row = [&](int i) { return z.data() + static_cast<int64_t>(i) * d; };
    const T inv = T(1) / static_cast<T>(trips.size());
    T total = T(0);
    for (const Triplet& t : trips) {
        ILKD_CHECK(t.anchor >= 0 && t.anchor < n && t.positive >= 0 && t.positive < n && t.negative >= 0 &&
                       t.negative < n && t.anchor != t.positive,
                   "invalid triplet indices");
        const T *a = row(t.anchor), *p = row(t.positive), *g = row(t.negative);
        T dap = T(0), dan = T(0);
        for (int c = 0; c < d; ++c) {
            const T u = a[c] - p[c], v = a[c] - g[c];
            dap += u * u;
            dan += v * v;
        }
        const T h = dap - dan + margin;
        if (h <= T(0)) continue;
        total += h;
        if (dz) {
            T* da = dz->data() + static_cast<int64_t>(t.anchor) * d;
            T* dp = dz->data() + static_cast<int64_t>(t.positive) * d;
            T* dn = dz->data() + static_cast<int64_t>(t.negative) * d;
            for (int c = 0; c < d; ++c) {
                const T u = a[c] - p[c], v = a[c] - g[c];
                da[c] += (T(2) * u - T(2) * v) * inv;
                dp[c] -= T(2) * u * inv;
                dn[c] += T(2) * v * inv;
            }
        }
    }
    return total * inv;
}

}  // namespace ilkd

#endif
