#ifndef ILKD_NN_ADAM_HPP
#define ILKD_NN_ADAM_HPP

#include "ilkd/nn/layers.hpp"
#include "ilkd/serialize.hpp"

#include <cmath>
#include <vector>

namespace ilkd::nn {

/// Adam with L2 weight decay folded into the gradient.
template <typename T>
class Adam {
public:
    Adam() = default;
    Adam(std::vector<Param<T>*> params, T lr, T weight_decay, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : params_(std::move(params)), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
        for (Param<T>* p : params_) {
            m_.emplace_back(p->value.shape(), T(0));
            v_.emplace_back(p->value.shape(), T(0));
        }
    }

    void step() {
        ++t_;
        const T bc1 = T(1) - std::pow(b1_, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(b2_, static_cast<T>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Param<T>& p = *params_[i];
            T* m = m_[i].data();
            T* v = v_[i].data();
            const int64_t n = p.value.numel();
            for (int64_t j = 0; j < n; ++j) {
                const T g = p.grad[j] + wd_ * p.value[j];
                m[j] = b1_ * m[j] + (T(1) - b1_) * g;
                v[j] = b2_ * v[j] + (T(1) - b2_) * g * g;
                const T mh = m[j] / bc1;
                const T vh = v[j] / bc2;
                p.value[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
            }
        }
    }

    void zero_grad() {
        for (Param<T>* p : params_) p->zero_grad();
    }

    void set_lr(T lr) { lr_ = lr; }
    T lr() const { return lr_; }
    int64_t steps() const { return t_; }

    void save(std::ostream& os) const {
        io::write_i64(os, t_);
        io::write_u64(os, m_.size());
        for (size_t i = 0; i < m_.size(); ++i) {
            io::write_tensor(os, m_[i]);
            io::write_tensor(os, v_[i]);
        }
    }

    void load(std::istream& is) {
        t_ = io::read_i64(is);
        uint64_t n = io::read_u64(is);
        ILKD_CHECK(n == m_.size(), "optimizer state count mismatch");
        for (size_t i = 0; i < m_.size(); ++i) {
            Tensor<T> m = io::read_tensor<T>(is);
            Tensor<T> v = io::read_tensor<T>(is);
            ILKD_CHECK(m.shape() == m_[i].shape(), "optimizer moment shape mismatch");
            m_[i] = std::move(m);
            v_[i] = std::move(v);
        }
    }

private:
    std::vector<Param<T>*> params_;
    std::vector<Tensor<T>> m_, v_;
    T lr_ = T(1e-3), wd_ = T(0), b1_ = T(0.9), b2_ = T(0.999), eps_ = T(1e-8);
    int64_t t_ = 0;
};

}  // namespace ilkd::nn

#endif
