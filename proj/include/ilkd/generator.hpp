#ifndef ILKD_GENERATOR_HPP
#define ILKD_GENERATOR_HPP

#include "ilkd/backbone.hpp"
#include "ilkd/distill.hpp"
#include "ilkd/nn/adam.hpp"
#include "ilkd/nn/layers.hpp"

#include <string>
#include <vector>

namespace ilkd {

struct GeneratorSpec {
    int latent_dim = 100;
    int out_channels = 3;
    int height = 32;
    int width = 32;
    int base_width = 16;
    // Normalized pixel range per channel: the image of [0,1] raw pixels
    // under the stream's (x - mean) / std transform.
    std::vector<float> range_lo;
    std::vector<float> range_hi;

    bool operator==(const GeneratorSpec&) const = default;
};

/// Shallow latent-to-image decoder: a linear projection to a coarse grid,
/// two stride-2 transposed convolutions, and a final 3x3 convolution, with
/// tanh squashed into the dataset's normalized pixel range. Trained purely
/// adversarially; there is no encoder and no reconstruction term.
template <typename T>
class ReplayGenerator {
public:
    ReplayGenerator(const GeneratorSpec& spec, uint64_t seed) : spec_(spec) {
        ILKD_CHECK(spec.height % 4 == 0 && spec.width % 4 == 0, "generator needs H, W divisible by 4");
        ILKD_CHECK(static_cast<int>(spec.range_lo.size()) == spec.out_channels &&
                       static_cast<int>(spec.range_hi.size()) == spec.out_channels,
                   "generator range size mismatch");
        Rng rng(splitmix64(seed ^ fnv1a64("generator")));
        const int w = spec.base_width;
        ch0_ = 4 * w;
        const int ch1 = 2 * w, ch2 = w;
        h4_ = spec.height / 4;
        w4_ = spec.width / 4;
        fc_ = nn::Linear<T>("gen.fc", spec.latent_dim, ch0_ * h4_ * w4_, rng);
        up1_ = nn::ConvTranspose2d<T>("gen.up1", ch0_, ch1, 4, 2, 1, rng);
        gn1_ = nn::GroupNorm<T>("gen.gn1", ch1, nn::GroupNorm<T>::pick_groups(ch1));
        up2_ = nn::ConvTranspose2d<T>("gen.up2", ch1, ch2, 4, 2, 1, rng);
        gn2_ = nn::GroupNorm<T>("gen.gn2", ch2, nn::GroupNorm<T>::pick_groups(ch2));
        out_ = nn::Conv2d<T>("gen.out", ch2, spec.out_channels, 3, 1, 1, true, rng);
        fc_.collect(params_);
        up1_.collect(params_);
        gn1_.collect(params_);
        up2_.collect(params_);
        gn2_.collect(params_);
        out_.collect(params_);
    }

    ReplayGenerator(const ReplayGenerator&) = delete;
    ReplayGenerator& operator=(const ReplayGenerator&) = delete;

    const GeneratorSpec& spec() const { return spec_; }

    Tensor<T> generate(const Tensor<T>& z, nn::Tape<T>* tape = nullptr) const {
        ILKD_CHECK(z.ndims() == 2 && z.dim(1) == spec_.latent_dim,
                   "latent batch shape " + shape_str(z.shape()));
        const int n = z.dim(0);
        Tensor<T> h = fc_.forward(z, tape);
        h = relu_.forward(h, tape);
        h.reshape({n, ch0_, h4_, w4_});
        h = up1_.forward(h, tape);
        h = gn1_.forward(h, tape);
        h = relu_.forward(h, tape);
        h = up2_.forward(h, tape);
        h = gn2_.forward(h, tape);
        h = relu_.forward(h, tape);
        h = out_.forward(h, tape);
        h = tanh_.forward(h, tape);
        // map (-1, 1) into the per-channel normalized pixel range
        const int hw = spec_.height * spec_.width;
        for (int ni = 0; ni < n; ++ni)
            for (int c = 0; c < spec_.out_channels; ++c) {
                const T a = T(0.5) * (T(spec_.range_hi[c]) - T(spec_.range_lo[c]));
                const T b = T(0.5) * (T(spec_.range_hi[c]) + T(spec_.range_lo[c]));
                T* p = h.data() + (static_cast<int64_t>(ni) * spec_.out_channels + c) * hw;
                for (int i = 0; i < hw; ++i) p[i] = a * p[i] + b;
            }
        ILKD_CHECK(h.all_finite(), "non-finite generator output");
        return h;
    }

    /// Gradient of a loss on the generated images into phi.
    void backward(const Tensor<T>& dimg, nn::Tape<T>& tape, bool acc_param_grads = true) {
        const int n = dimg.dim(0);
        Tensor<T> g = dimg;
        const int hw = spec_.height * spec_.width;
        for (int ni = 0; ni < n; ++ni)
            for (int c = 0; c < spec_.out_channels; ++c) {
                const T a = T(0.5) * (T(spec_.range_hi[c]) - T(spec_.range_lo[c]));
                T* p = g.data() + (static_cast<int64_t>(ni) * spec_.out_channels + c) * hw;
                for (int i = 0; i < hw; ++i) p[i] *= a;
            }
        g = tanh_.backward(g, tape);
        g = out_.backward(g, tape, true, acc_param_grads);
        g = relu_.backward(g, tape);
        g = gn2_.backward(g, tape, true, acc_param_grads);
        g = up2_.backward(g, tape, true, acc_param_grads);
        g = relu_.backward(g, tape);
        g = gn1_.backward(g, tape, true, acc_param_grads);
        g = up1_.backward(g, tape, true, acc_param_grads);
        g.reshape({n, ch0_ * h4_ * w4_});
        g = relu_.backward(g, tape);
        fc_.backward(g, tape, false, acc_param_grads);
    }

    std::vector<nn::Param<T>*>& params() { return params_; }
    void zero_grad() {
        for (auto* p : params_) p->zero_grad();
    }
    uint64_t checksum() const { return nn::params_checksum(params_); }
    void save(std::ostream& os) const { nn::save_params(os, params_); }
    void load(std::istream& is) { nn::load_params(is, params_); }

private:
    GeneratorSpec spec_;
    int ch0_ = 0, h4_ = 0, w4_ = 0;
    nn::Linear<T> fc_;
    nn::ConvTranspose2d<T> up1_, up2_;
    nn::GroupNorm<T> gn1_, gn2_;
    nn::Conv2d<T> out_;
    nn::ReLU<T> relu_;
    nn::Tanh<T> tanh_;
    std::vector<nn::Param<T>*> params_;
};

/// n independent standard-normal latent vectors.
template <typename T>
Tensor<T> sample_latent(int n, int latent_dim, Rng& rng) {
    ILKD_CHECK(n >= 1, "latent batch size must be >= 1");
    Tensor<T> z({n, latent_dim});
    rng.fill_normal(z.data(), z.numel(), T(0), T(1));
    return z;
}

template <typename T>
struct GeneratorStepOut {
    T loss_g = T(0);  // -D_E, always <= 0
    T d_e = T(0);
};

/// Fills generator parameter gradients for L_G = -D_E(student(x_g),
/// teacher(x_g)). Both backbones contribute input gradients only; their
/// parameters stay untouched.
template <typename T>
GeneratorStepOut<T> compute_generator_grads(ReplayGenerator<T>& gen, EmbeddingBackbone<T>& student,
                                            EmbeddingBackbone<T>& teacher, const Tensor<T>& z) {
    nn::Tape<T> tape_g, tape_s, tape_t;
    Tensor<T> xg = gen.generate(z, &tape_g);
    Tensor<T> zs = student.forward(xg, &tape_s);
    Tensor<T> zt = teacher.forward(xg, &tape_t);
    Tensor<T> dzs, dzt;
    const T d_e = embedding_distance(zs, zt, &dzs, &dzt);
    // L_G = -D_E, so flip both embedding gradients
    for (int64_t i = 0; i < dzs.numel(); ++i) dzs[i] = -dzs[i];
    for (int64_t i = 0; i < dzt.numel(); ++i) dzt[i] = -dzt[i];
    Tensor<T> dx_s = student.backward(dzs, {}, tape_s, true, false);
    Tensor<T> dx_t = teacher.backward(dzt, {}, tape_t, true, false);
    for (int64_t i = 0; i < dx_s.numel(); ++i) dx_s[i] += dx_t[i];
    gen.zero_grad();
    gen.backward(dx_s, tape_g, true);
    GeneratorStepOut<T> out;
    out.d_e = d_e;
    out.loss_g = -d_e;
    ILKD_CHECK(std::isfinite(static_cast<double>(out.loss_g)), "non-finite generator loss");
    return out;
}

/// One adversarial update on phi; returns the pre-update loss.
template <typename T>
GeneratorStepOut<T> generator_step(ReplayGenerator<T>& gen, EmbeddingBackbone<T>& student,
                                   EmbeddingBackbone<T>& teacher, const Tensor<T>& z, nn::Adam<T>& opt) {
    GeneratorStepOut<T> out = compute_generator_grads(gen, student, teacher, z);
    opt.step();
    return out;
}

}  // namespace ilkd

#endif
