#ifndef ILKD_NN_LAYERS_HPP
#define ILKD_NN_LAYERS_HPP

#include "ilkd/random.hpp"
#include "ilkd/serialize.hpp"
#include "ilkd/tensor.hpp"

#include <cmath>
#include <memory>
#include <string>
#include <vector>

// Minimal layer zoo with hand-written backward passes. Forward pushes
// whatever backward needs onto an external tape; backward pops in exact
// reverse order. Keeping the tape outside the layers lets one model run
// several live forward passes (real batch + synthetic batch) before any
// backward.

namespace ilkd::nn {

template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    void init_shape(Shape s) {
        value = Tensor<T>(s);
        grad = Tensor<T>(std::move(s));
    }
    void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
using Tape = std::vector<Tensor<T>>;

template <typename T>
Tensor<T> pop(Tape<T>& tape) {
    ILKD_CHECK(!tape.empty(), "tape underflow");
    Tensor<T> t = std::move(tape.back());
    tape.pop_back();
    return t;
}

// ---------------------------------------------------------------------------
// conv primitives

/// (N,C,H,W) -> (C*k*k, N*Ho*Wo); column index is ((n*Ho)+ho)*Wo+wo.
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, int k, int stride, int pad, int ho, int wo) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<T> cols({c * k * k, n * ho * wo});
    const int64_t col_w = static_cast<int64_t>(n) * ho * wo;
    for (int ci = 0; ci < c; ++ci) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                T* row = cols.data() + (static_cast<int64_t>(ci) * k * k + ki * k + kj) * col_w;
                for (int ni = 0; ni < n; ++ni) {
                    const T* src = x.data() + (static_cast<int64_t>(ni) * c + ci) * h * w;
                    for (int oi = 0; oi < ho; ++oi) {
                        const int ii = oi * stride - pad + ki;
                        T* dst = row + (static_cast<int64_t>(ni) * ho + oi) * wo;
                        if (ii < 0 || ii >= h) {
                            std::fill(dst, dst + wo, T(0));
                            continue;
                        }
                        for (int oj = 0; oj < wo; ++oj) {
                            const int jj = oj * stride - pad + kj;
                            dst[oj] = (jj >= 0 && jj < w) ? src[ii * w + jj] : T(0);
                        }
                    }
                }
            }
        }
    }
    return cols;
}

/// Adjoint of im2col: scatter-add columns back into an (N,C,H,W) image.
template <typename T>
Tensor<T> col2im(const Tensor<T>& cols, int n, int c, int h, int w, int k, int stride, int pad, int ho, int wo) {
    Tensor<T> x({n, c, h, w});
    const int64_t col_w = static_cast<int64_t>(n) * ho * wo;
    for (int ci = 0; ci < c; ++ci) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const T* row = cols.data() + (static_cast<int64_t>(ci) * k * k + ki * k + kj) * col_w;
                for (int ni = 0; ni < n; ++ni) {
                    T* dst = x.data() + (static_cast<int64_t>(ni) * c + ci) * h * w;
                    for (int oi = 0; oi < ho; ++oi) {
                        const int ii = oi * stride - pad + ki;
                        if (ii < 0 || ii >= h) continue;
                        const T* src = row + (static_cast<int64_t>(ni) * ho + oi) * wo;
                        for (int oj = 0; oj < wo; ++oj) {
                            const int jj = oj * stride - pad + kj;
                            if (jj >= 0 && jj < w) dst[ii * w + jj] += src[oj];
                        }
                    }
                }
            }
        }
    }
    return x;
}

/// NCHW -> (C, N*H*W) with column index ((n*H)+h)*W+w.
template <typename T>
Tensor<T> nchw_to_cmat(const Tensor<T>& x) {
    const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> m({c, n * hw});
    for (int ni = 0; ni < n; ++ni)
        m.mat(c, n * hw).middleCols(ni * hw, hw) = x.mat(n * c, hw).middleRows(ni * c, c);
    return m;
}

template <typename T>
Tensor<T> cmat_to_nchw(const Tensor<T>& m, int n, int c, int h, int w) {
    const int hw = h * w;
    Tensor<T> x({n, c, h, w});
    for (int ni = 0; ni < n; ++ni)
        x.mat(n * c, hw).middleRows(ni * c, c) = m.mat(c, n * hw).middleCols(ni * hw, hw);
    return x;
}

// ---------------------------------------------------------------------------

template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride, int pad, bool with_bias, Rng& rng)
        : name_(std::move(name)), in_(in_ch), out_(out_ch), k_(ksize), stride_(stride), pad_(pad), has_bias_(with_bias) {
        weight_.name = name_ + ".weight";
        weight_.init_shape({out_ch, in_ch, ksize, ksize});
        const T sd = std::sqrt(T(2) / static_cast<T>(in_ch * ksize * ksize));
        rng.fill_normal(weight_.value.data(), weight_.value.numel(), T(0), sd);
        if (has_bias_) {
            bias_.name = name_ + ".bias";
            bias_.init_shape({out_ch});
        }
    }

    int out_h(int h) const { return (h + 2 * pad_ - k_) / stride_ + 1; }

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const {
        ILKD_CHECK(x.ndims() == 4 && x.dim(1) == in_, name_ + ": input shape " + shape_str(x.shape()));
        const int n = x.dim(0), ho = out_h(x.dim(2)), wo = out_h(x.dim(3));
        Tensor<T> cols = im2col(x, k_, stride_, pad_, ho, wo);
        Tensor<T> ymat({out_, n * ho * wo});
        ymat.mat2d().noalias() = weight_.value.mat(out_, in_ * k_ * k_) * cols.mat2d();
        if (has_bias_) ymat.mat2d().colwise() += bias_.value.vec();
        Tensor<T> y = cmat_to_nchw(ymat, n, out_, ho, wo);
        if (tape) {
            Tensor<T> meta({4});
            meta[0] = T(x.dim(0)); meta[1] = T(x.dim(2)); meta[2] = T(x.dim(3)); meta[3] = T(0);
            tape->push_back(std::move(cols));
            tape->push_back(std::move(meta));
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy, Tape<T>& tape, bool want_dx, bool acc_param_grads) {
        Tensor<T> meta = pop(tape);
        Tensor<T> cols = pop(tape);
        const int n = static_cast<int>(meta[0]), h = static_cast<int>(meta[1]), w = static_cast<int>(meta[2]);
        const int ho = out_h(h), wo = out_h(w);
        Tensor<T> dymat = nchw_to_cmat(dy);
        if (acc_param_grads) {
            weight_.grad.mat(out_, in_ * k_ * k_).noalias() += dymat.mat2d() * cols.mat2d().transpose();
            if (has_bias_) bias_.grad.vec() += dymat.mat2d().rowwise().sum();
        }
        if (!want_dx) return {};
        Tensor<T> dcols({in_ * k_ * k_, n * ho * wo});
        dcols.mat2d().noalias() = weight_.value.mat(out_, in_ * k_ * k_).transpose() * dymat.mat2d();
        return col2im(dcols, n, in_, h, w, k_, stride_, pad_, ho, wo);
    }

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&weight_);
        if (has_bias_) out.push_back(&bias_);
    }

private:
    std::string name_;
    int in_ = 0, out_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
    bool has_bias_ = true;
    Param<T> weight_, bias_;
};

/// Stride-s transposed convolution, the adjoint of Conv2d with the same
/// geometry. Weight layout (in_ch, out_ch, k, k). Requires
/// (Ho + 2p - k) divisible by s, which holds for the k=4,s=2,p=1 upsamplers
/// used by the generator.
template <typename T>
class ConvTranspose2d {
public:
    ConvTranspose2d() = default;
    ConvTranspose2d(std::string name, int in_ch, int out_ch, int ksize, int stride, int pad, Rng& rng)
        : name_(std::move(name)), in_(in_ch), out_(out_ch), k_(ksize), stride_(stride), pad_(pad) {
        weight_.name = name_ + ".weight";
        weight_.init_shape({in_ch, out_ch, ksize, ksize});
        const T sd = std::sqrt(T(2) / static_cast<T>(in_ch * ksize * ksize));
        rng.fill_normal(weight_.value.data(), weight_.value.numel(), T(0), sd);
        bias_.name = name_ + ".bias";
        bias_.init_shape({out_ch});
    }

    int out_h(int h) const { return (h - 1) * stride_ - 2 * pad_ + k_; }

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const {
        ILKD_CHECK(x.ndims() == 4 && x.dim(1) == in_, name_ + ": input shape " + shape_str(x.shape()));
        const int n = x.dim(0), hi = x.dim(2), wi = x.dim(3);
        const int ho = out_h(hi), wo = out_h(wi);
        ILKD_CHECK((ho + 2 * pad_ - k_) % stride_ == 0, name_ + ": unsupported geometry");
        Tensor<T> xmat = nchw_to_cmat(x);
        Tensor<T> cols({out_ * k_ * k_, n * hi * wi});
        cols.mat2d().noalias() = weight_.value.mat(in_, out_ * k_ * k_).transpose() * xmat.mat2d();
        Tensor<T> y = col2im(cols, n, out_, ho, wo, k_, stride_, pad_, hi, wi);
        for (int ni = 0; ni < n; ++ni)
            for (int c = 0; c < out_; ++c) {
                T* p = y.data() + (static_cast<int64_t>(ni) * out_ + c) * ho * wo;
                for (int i = 0; i < ho * wo; ++i) p[i] += bias_.value[c];
            }
        if (tape) {
            Tensor<T> meta({4});
            meta[0] = T(n); meta[1] = T(hi); meta[2] = T(wi); meta[3] = T(0);
            tape->push_back(std::move(xmat));
            tape->push_back(std::move(meta));
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy, Tape<T>& tape, bool want_dx, bool acc_param_grads) {
        Tensor<T> meta = pop(tape);
        Tensor<T> xmat = pop(tape);
        const int n = static_cast<int>(meta[0]), hi = static_cast<int>(meta[1]), wi = static_cast<int>(meta[2]);
        Tensor<T> dcols = im2col(dy, k_, stride_, pad_, hi, wi);
        if (acc_param_grads) {
            weight_.grad.mat(in_, out_ * k_ * k_).noalias() += xmat.mat2d() * dcols.mat2d().transpose();
            const int ho = dy.dim(2), wo = dy.dim(3);
            for (int ni = 0; ni < n; ++ni)
                for (int c = 0; c < out_; ++c) {
                    const T* p = dy.data() + (static_cast<int64_t>(ni) * out_ + c) * ho * wo;
                    T s = T(0);
                    for (int i = 0; i < ho * wo; ++i) s += p[i];
                    bias_.grad[c] += s;
                }
        }
        if (!want_dx) return {};
        Tensor<T> dxmat({in_, n * hi * wi});
        dxmat.mat2d().noalias() = weight_.value.mat(in_, out_ * k_ * k_) * dcols.mat2d();
        return cmat_to_nchw(dxmat, n, in_, hi, wi);
    }

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }

private:
    std::string name_;
    int in_ = 0, out_ = 0, k_ = 0, stride_ = 2, pad_ = 1;
    Param<T> weight_, bias_;
};

/// Group normalization with per-channel affine. Identical in train and
/// eval mode, so a frozen teacher and a parameter-equal student produce
/// bit-equal outputs on the same batch.
template <typename T>
class GroupNorm {
public:
    GroupNorm() = default;
    GroupNorm(std::string name, int channels, int groups) : name_(std::move(name)), c_(channels), g_(groups) {
        ILKD_CHECK(channels % groups == 0, name_ + ": channels not divisible by groups");
        gamma_.name = name_ + ".gamma";
        gamma_.init_shape({channels});
        gamma_.value.fill(T(1));
        beta_.name = name_ + ".beta";
        beta_.init_shape({channels});
    }

    static int pick_groups(int channels) {
        for (int g : {8, 4, 2})
            if (channels % g == 0 && channels / g >= 2) return g;
        return 1;
    }

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const {
        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        ILKD_CHECK(x.dim(1) == c_, name_ + ": channel mismatch");
        const int cpg = c_ / g_;
        const int64_t gl = static_cast<int64_t>(cpg) * h * w;  // elems per group
        Tensor<T> xhat(x.shape());
        Tensor<T> inv({n * g_});
        for (int ni = 0; ni < n; ++ni)
            for (int gi = 0; gi < g_; ++gi) {
                const T* src = x.data() + (static_cast<int64_t>(ni) * c_ + gi * cpg) * h * w;
                T* dst = xhat.data() + (static_cast<int64_t>(ni) * c_ + gi * cpg) * h * w;
                T mean = T(0);
                for (int64_t i = 0; i < gl; ++i) mean += src[i];
                mean /= static_cast<T>(gl);
                T var = T(0);
                for (int64_t i = 0; i < gl; ++i) {
                    const T d = src[i] - mean;
                    var += d * d;
                }
                var /= static_cast<T>(gl);
                const T is = T(1) / std::sqrt(var + eps_);
                inv[ni * g_ + gi] = is;
                for (int64_t i = 0; i < gl; ++i) dst[i] = (src[i] - mean) * is;
            }
        Tensor<T> y(x.shape());
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c_; ++ci) {
                const T* src = xhat.data() + (static_cast<int64_t>(ni) * c_ + ci) * h * w;
                T* dst = y.data() + (static_cast<int64_t>(ni) * c_ + ci) * h * w;
                const T ga = gamma_.value[ci], be = beta_.value[ci];
                for (int i = 0; i < h * w; ++i) dst[i] = ga * src[i] + be;
            }
        if (tape) {
            tape->push_back(std::move(xhat));
            tape->push_back(std::move(inv));
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy, Tape<T>& tape, bool /*want_dx*/, bool acc_param_grads) {
        Tensor<T> inv = pop(tape);
        Tensor<T> xhat = pop(tape);
        const int n = dy.dim(0), h = dy.dim(2), w = dy.dim(3);
        const int cpg = c_ / g_;
        const int64_t gl = static_cast<int64_t>(cpg) * h * w;
        if (acc_param_grads) {
            for (int ci = 0; ci < c_; ++ci) {
                T dg = T(0), db = T(0);
                for (int ni = 0; ni < n; ++ni) {
                    const T* dyp = dy.data() + (static_cast<int64_t>(ni) * c_ + ci) * h * w;
                    const T* xp = xhat.data() + (static_cast<int64_t>(ni) * c_ + ci) * h * w;
                    for (int i = 0; i < h * w; ++i) {
                        dg += dyp[i] * xp[i];
                        db += dyp[i];
                    }
                }
                gamma_.grad[ci] += dg;
                beta_.grad[ci] += db;
            }
        }
        // dxhat = dy * gamma; dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
        Tensor<T> dx(dy.shape());
        for (int ni = 0; ni < n; ++ni)
            for (int gi = 0; gi < g_; ++gi) {
                const int64_t base = (static_cast<int64_t>(ni) * c_ + gi * cpg) * h * w;
                T m1 = T(0), m2 = T(0);
                for (int ci = 0; ci < cpg; ++ci) {
                    const T ga = gamma_.value[gi * cpg + ci];
                    const T* dyp = dy.data() + base + static_cast<int64_t>(ci) * h * w;
                    const T* xp = xhat.data() + base + static_cast<int64_t>(ci) * h * w;
                    for (int i = 0; i < h * w; ++i) {
                        const T dxh = dyp[i] * ga;
                        m1 += dxh;
                        m2 += dxh * xp[i];
                    }
                }
                m1 /= static_cast<T>(gl);
                m2 /= static_cast<T>(gl);
                const T is = inv[ni * g_ + gi];
                for (int ci = 0; ci < cpg; ++ci) {
                    const T ga = gamma_.value[gi * cpg + ci];
                    const T* dyp = dy.data() + base + static_cast<int64_t>(ci) * h * w;
                    const T* xp = xhat.data() + base + static_cast<int64_t>(ci) * h * w;
                    T* dxp = dx.data() + base + static_cast<int64_t>(ci) * h * w;
                    for (int i = 0; i < h * w; ++i) dxp[i] = is * (dyp[i] * ga - m1 - xp[i] * m2);
                }
            }
        return dx;
    }

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }

private:
    std::string name_;
    int c_ = 0, g_ = 1;
    static constexpr T eps_ = T(1e-5);
    Param<T> gamma_, beta_;
};

template <typename T>
class ReLU {
public:
    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const {
        Tensor<T> y(x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
        if (tape) tape->push_back(y);
        return y;
    }
    Tensor<T> backward(const Tensor<T>& dy, Tape<T>& tape) {
        Tensor<T> y = pop(tape);
        Tensor<T> dx(dy.shape());
        for (int64_t i = 0; i < dy.numel(); ++i) dx[i] = y[i] > T(0) ? dy[i] : T(0);
        return dx;
    }
};

template <typename T>
class Tanh {
public:
    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const {
        Tensor<T> y(x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) y[i] = std::tanh(x[i]);
        if (tape) tape->push_back(y);
        return y;
    }
    Tensor<T> backward(const Tensor<T>& dy, Tape<T>& tape) {
        Tensor<T> y = pop(tape);
        Tensor<T> dx(dy.shape());
        for (int64_t i = 0; i < dy.numel(); ++i) dx[i] = dy[i] * (T(1) - y[i] * y[i]);
        return dx;
    }
};

template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(std::string name, int in_dim, int out_dim, Rng& rng) : name_(std::move(name)), in_(in_dim), out_(out_dim) {
        weight_.name = name_ + ".weight";
        weight_.init_shape({out_dim, in_dim});
        const T sd = std::sqrt(T(2) / static_cast<T>(in_dim));
        rng.fill_normal(weight_.value.data(), weight_.value.numel(), T(0), sd);
        bias_.name = name_ + ".bias";
        bias_.init_shape({out_dim});
    }

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const {
        ILKD_CHECK(x.ndims() == 2 && x.dim(1) == in_, name_ + ": input shape " + shape_str(x.shape()));
        Tensor<T> y({x.dim(0), out_});
        y.mat2d().noalias() = x.mat2d() * weight_.value.mat2d().transpose();
        y.mat2d().rowwise() += bias_.value.vec().transpose();
        if (tape) tape->push_back(x);
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy, Tape<T>& tape, bool want_dx, bool acc_param_grads) {
        Tensor<T> x = pop(tape);
        if (acc_param_grads) {
            weight_.grad.mat2d().noalias() += dy.mat2d().transpose() * x.mat2d();
            bias_.grad.vec() += dy.mat2d().colwise().sum();
        }
        if (!want_dx) return {};
        Tensor<T> dx(x.shape());
        dx.mat2d().noalias() = dy.mat2d() * weight_.value.mat2d();
        return dx;
    }

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }

private:
    std::string name_;
    int in_ = 0, out_ = 0;
    Param<T> weight_, bias_;
};

/// (N,C,H,W) -> (N,C) mean over the spatial grid.
template <typename T>
class GlobalAvgPool {
public:
    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const {
        const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
        Tensor<T> y({n, c});
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci) {
                const T* p = x.data() + (static_cast<int64_t>(ni) * c + ci) * hw;
                T s = T(0);
                for (int i = 0; i < hw; ++i) s += p[i];
                y(ni, ci) = s / static_cast<T>(hw);
            }
        if (tape) {
            Tensor<T> meta({2});
            meta[0] = T(x.dim(2));
            meta[1] = T(x.dim(3));
            tape->push_back(std::move(meta));
        }
        return y;
    }
    Tensor<T> backward(const Tensor<T>& dy, Tape<T>& tape) {
        Tensor<T> meta = pop(tape);
        const int h = static_cast<int>(meta[0]), w = static_cast<int>(meta[1]);
        const int n = dy.dim(0), c = dy.dim(1), hw = h * w;
        Tensor<T> dx({n, c, h, w});
        const T scale = T(1) / static_cast<T>(hw);
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci) {
                T* p = dx.data() + (static_cast<int64_t>(ni) * c + ci) * hw;
                const T g = dy(ni, ci) * scale;
                for (int i = 0; i < hw; ++i) p[i] = g;
            }
        return dx;
    }
};

// ---------------------------------------------------------------------------

/// Serialize parameter values (not grads) in collection order.
template <typename T>
void save_params(std::ostream& os, const std::vector<Param<T>*>& params) {
    io::write_u64(os, params.size());
    for (const Param<T>* p : params) {
        io::write_string(os, p->name);
        io::write_tensor(os, p->value);
    }
}

template <typename T>
void load_params(std::istream& is, const std::vector<Param<T>*>& params) {
    uint64_t n = io::read_u64(is);
    ILKD_CHECK(n == params.size(), "parameter count mismatch in stream");
    for (Param<T>* p : params) {
        std::string name = io::read_string(is);
        ILKD_CHECK(name == p->name, "parameter order mismatch: " + name + " vs " + p->name);
        Tensor<T> v = io::read_tensor<T>(is);
        ILKD_CHECK(v.shape() == p->value.shape(), "parameter shape mismatch for " + name);
        p->value = std::move(v);
    }
}

template <typename T>
uint64_t params_checksum(const std::vector<Param<T>*>& params) {
    uint64_t h = 1469598103934665603ull;
    for (const Param<T>* p : params)
        h = io::hash_bytes(p->value.data(), static_cast<size_t>(p->value.numel()) * sizeof(T), h);
    return h;
}

}  // namespace ilkd::nn

#endif
