#ifndef ILKD_DISTILL_HPP
#define ILKD_DISTILL_HPP

#include "ilkd/tensor.hpp"

#include <cmath>
#include <vector>

namespace ilkd {

namespace detail {

template <typename T>
constexpr T tiny() {
    return T(1e-20);
}

/// Channel-attention reduction: (N,C,H,W) -> (N,H*W), sum over channels of
/// squared activations.
template <typename T>
Tensor<T> attention_map(const Tensor<T>& x) {
    const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> a({n, hw}, T(0));
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            const T* p = x.data() + (static_cast<int64_t>(ni) * c + ci) * hw;
            T* q = a.data() + static_cast<int64_t>(ni) * hw;
            for (int i = 0; i < hw; ++i) q[i] += p[i] * p[i];
        }
    return a;
}

}  // namespace detail

/// Attention-matching loss between teacher and student feature maps: per
/// layer and sample, flatten, L2-normalize (epsilon-guarded denominator),
/// take the L2 norm of the difference; sum over layers, mean over the
/// batch. Gradient flows into the student maps only. With
/// channel_attention set, maps are first reduced to per-position
/// channel-squared-sum attention maps.
template <typename T>
T feature_attention_loss(const std::vector<Tensor<T>>& teacher_maps, const std::vector<Tensor<T>>& student_maps,
                         std::vector<Tensor<T>>* dstudent = nullptr, bool channel_attention = false,
                         T eps = T(1e-8)) {
    ILKD_CHECK(teacher_maps.size() == student_maps.size(), "layer count mismatch");
    ILKD_CHECK(!teacher_maps.empty(), "no feature maps");
    const int n = teacher_maps.front().dim(0);
    if (dstudent) {
        dstudent->clear();
        for (const auto& m : student_maps) dstudent->emplace_back(m.shape(), T(0));
    }

    T total = T(0);
    for (size_t l = 0; l < teacher_maps.size(); ++l) {
        ILKD_CHECK(teacher_maps[l].same_shape(student_maps[l]),
                   "teacher/student map shape mismatch at layer " + std::to_string(l));
        ILKD_CHECK(teacher_maps[l].dim(0) == n, "inconsistent batch across layers");

        const Tensor<T>* tm = &teacher_maps[l];
        const Tensor<T>* sm = &student_maps[l];
        Tensor<T> ta, sa;
        if (channel_attention) {
            ta = detail::attention_map(teacher_maps[l]);
            sa = detail::attention_map(student_maps[l]);
            tm = &ta;
            sm = &sa;
        }
        const int64_t m = tm->numel() / n;

        for (int i = 0; i < n; ++i) {
            const T* t = tm->data() + i * m;
            const T* s = sm->data() + i * m;
            T tn = T(0), sn = T(0);
            for (int64_t j = 0; j < m; ++j) {
                tn += t[j] * t[j];
                sn += s[j] * s[j];
            }
            const T rt = std::sqrt(tn), rs = std::sqrt(sn);
            const T dt = rt + eps, ds = rs + eps;
            T diff2 = T(0);
            for (int64_t j = 0; j < m; ++j) {
                const T u = t[j] / dt - s[j] / ds;
                diff2 += u * u;
            }
            const T diff = std::sqrt(diff2);
            total += diff;
            if (!dstudent || diff < detail::tiny<T>()) continue;

            // d diff / d u_s = (u_s - u_t) / diff, then through the
            // normalization Jacobian: I/ds - s s^T / (rs * ds^2).
            T sg = T(0);  // s . g
            std::vector<T> g(static_cast<size_t>(m));
            for (int64_t j = 0; j < m; ++j) {
                g[static_cast<size_t>(j)] = (s[j] / ds - t[j] / dt) / diff;
                sg += s[j] * g[static_cast<size_t>(j)];
            }
            const T invn = T(1) / static_cast<T>(n);
            T* out = (*dstudent)[l].data();
            const T corr = rs > detail::tiny<T>() ? sg / (rs * ds * ds) : T(0);
            if (!channel_attention) {
                T* o = out + i * m;
                for (int64_t j = 0; j < m; ++j) o[j] += (g[static_cast<size_t>(j)] / ds - s[j] * corr) * invn;
            } else {
                // chain through a_j = sum_c x_{c,j}^2
                const int ch = student_maps[l].dim(1);
                const int hw = student_maps[l].dim(2) * student_maps[l].dim(3);
                for (int64_t j = 0; j < m; ++j) {
                    const T da = (g[static_cast<size_t>(j)] / ds - s[j] * corr) * invn;
                    for (int ci = 0; ci < ch; ++ci) {
                        const int64_t idx = (static_cast<int64_t>(i) * ch + ci) * hw + j;
                        out[idx] += T(2) * student_maps[l][idx] * da;
                    }
                }
            }
        }
    }
    return total / static_cast<T>(n);
}

/// Sample covariance of the rows of Z, 1/(n-1) normalization.
template <typename T>
Tensor<T> covariance_matrix(const Tensor<T>& z) {
    const int n = z.dim(0), d = z.dim(1);
    ILKD_CHECK(n >= 2, "covariance needs at least two rows");
    Tensor<T> mean({d}, T(0));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) mean[j] += z(i, j);
    for (int j = 0; j < d; ++j) mean[j] /= static_cast<T>(n);
    Tensor<T> zc({n, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) zc(i, j) = z(i, j) - mean[j];
    Tensor<T> c({d, d});
    c.mat2d().noalias() = zc.mat2d().transpose() * zc.mat2d();
    const T inv = T(1) / static_cast<T>(n - 1);
    for (int64_t i = 0; i < c.numel(); ++i) c[i] *= inv;
    return c;
}

/// Decorrelation penalty: mean squared off-diagonal covariance entry with
/// a 1/d factor, d the embedding dimension. Optional gradient in *dz.
template <typename T>
T covariance_penalty(const Tensor<T>& z, Tensor<T>* dz = nullptr) {
    const int n = z.dim(0), d = z.dim(1);
    Tensor<T> c = covariance_matrix(z);
    T loss = T(0);
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
            if (a != b) loss += c(a, b) * c(a, b);
    loss /= static_cast<T>(d);

    if (dz) {
        // dL/dC = (2/d) C with zeroed diagonal; dL/dZ = 2/(n-1) Zc (dL/dC).
        // The centering Jacobian drops out because Zc has zero column sums.
        Tensor<T> g = c;
        const T s = T(2) / static_cast<T>(d);
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) g(a, b) = a == b ? T(0) : s * g(a, b);
        Tensor<T> mean({d}, T(0));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) mean[j] += z(i, j);
        for (int j = 0; j < d; ++j) mean[j] /= static_cast<T>(n);
        Tensor<T> zc({n, d});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) zc(i, j) = z(i, j) - mean[j];
        *dz = Tensor<T>(z.shape());
        dz->mat2d().noalias() = zc.mat2d() * g.mat2d() * (T(2) / static_cast<T>(n - 1));
    }
    return loss;
}

/// Decorrelation applied to both sides of an embedding pair. Only the
/// student side carries gradient; the teacher term is a logged constant.
template <typename T>
struct CovLoss {
    T total;
    T student;
    T teacher;
};

template <typename T>
CovLoss<T> covariance_loss(const Tensor<T>& z_student, const Tensor<T>& z_teacher, Tensor<T>* dz_student = nullptr) {
    CovLoss<T> out;
    out.student = covariance_penalty(z_student, dz_student);
    out.teacher = covariance_penalty<T>(z_teacher, nullptr);
    out.total = out.student + out.teacher;
    return out;
}

/// Mean row-wise Euclidean distance between two embedding batches.
/// Optional gradients with respect to each side.
template <typename T>
T embedding_distance(const Tensor<T>& za, const Tensor<T>& zb, Tensor<T>* dza = nullptr, Tensor<T>* dzb = nullptr) {
    ILKD_CHECK(za.same_shape(zb), "embedding pair shape mismatch");
    const int n = za.dim(0), d = za.dim(1);
    if (dza) *dza = Tensor<T>(za.shape(), T(0));
    if (dzb) *dzb = Tensor<T>(zb.shape(), T(0));
    T total = T(0);
    for (int i = 0; i < n; ++i) {
        const T* a = za.data() + static_cast<int64_t>(i) * d;
        const T* b = zb.data() + static_cast<int64_t>(i) * d;
        T s = T(0);
        for (int j = 0; j < d; ++j) {
            const T u = a[j] - b[j];
            s += u * u;
        }
        const T r = std::sqrt(s);
        total += r;
        if (r < detail::tiny<T>()) continue;
        const T inv = T(1) / (static_cast<T>(n) * r);
        if (dza) {
            T* p = dza->data() + static_cast<int64_t>(i) * d;
            for (int j = 0; j < d; ++j) p[j] = (a[j] - b[j]) * inv;
        }
        if (dzb) {
            T* p = dzb->data() + static_cast<int64_t>(i) * d;
            for (int j = 0; j < d; ++j) p[j] = (b[j] - a[j]) * inv;
        }
    }
    return total / static_cast<T>(n);
}

/// Combined distillation loss: attention matching plus two-sided
/// decorrelation. Values are always all computed; the *_in_grad flags
/// control which terms write gradients (ablation modes log the excluded
/// term without letting it steer training).
template <typename T>
struct KdLoss {
    T total;
    T fam;
    T cov;
    T cov_student;
    T cov_teacher;
};

template <typename T>
KdLoss<T> kd_loss(const std::vector<Tensor<T>>& teacher_maps, const std::vector<Tensor<T>>& student_maps,
                  const Tensor<T>& z_student, const Tensor<T>& z_teacher,
                  std::vector<Tensor<T>>* dstudent_maps = nullptr, Tensor<T>* dz_student = nullptr,
                  bool fam_in_grad = true, bool cov_in_grad = true, bool channel_attention = false) {
    KdLoss<T> out;
    out.fam = feature_attention_loss(teacher_maps, student_maps, fam_in_grad ? dstudent_maps : nullptr,
                                     channel_attention);
    if (dstudent_maps && !fam_in_grad) {
        dstudent_maps->clear();
        for (const auto& m : student_maps) dstudent_maps->emplace_back(m.shape(), T(0));
    }
    CovLoss<T> cov = covariance_loss(z_student, z_teacher, cov_in_grad ? dz_student : nullptr);
    if (dz_student && !cov_in_grad) *dz_student = Tensor<T>(z_student.shape(), T(0));
    out.cov = cov.total;
    out.cov_student = cov.student;
    out.cov_teacher = cov.teacher;
    out.total = out.fam + out.cov;
    return out;
}

}  // namespace ilkd

#endif
