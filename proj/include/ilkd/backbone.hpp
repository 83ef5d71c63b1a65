#ifndef ILKD_BACKBONE_HPP
#define ILKD_BACKBONE_HPP

#include "ilkd/nn/layers.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ilkd {

struct BackboneSpec {
    std::string preset = "resnet18";
    int in_channels = 3;
    int stem_width = 64;
    std::vector<int> stage_widths{64, 128, 256, 512};
    std::vector<int> stage_blocks{2, 2, 2, 2};
    std::vector<int> stage_strides{1, 2, 2, 2};

    int embedding_dim() const { return stage_widths.back(); }
    int num_blocks() const {
        int n = 0;
        for (int b : stage_blocks) n += b;
        return n;
    }
    bool operator==(const BackboneSpec&) const = default;
};

/// Named presets. "resnet18" is the full-size 512-d network; "micro" and
/// "toy" are scaled-down variants with the same topology for fast tests.
inline BackboneSpec backbone_preset(const std::string& name, int in_channels) {
    BackboneSpec s;
    s.preset = name;
    s.in_channels = in_channels;
    if (name == "resnet18") {
        // defaults above
    } else if (name == "resnet10") {
        s.stage_blocks = {1, 1, 1, 1};
    } else if (name == "micro") {
        s.stem_width = 8;
        s.stage_widths = {8, 16, 32};
        s.stage_blocks = {1, 1, 1};
        s.stage_strides = {1, 2, 2};
    } else if (name == "toy") {
        s.stem_width = 4;
        s.stage_widths = {4, 8};
        s.stage_blocks = {1, 1};
        s.stage_strides = {1, 2};
    } else {
        fail("unknown backbone preset: " + name);
    }
    return s;
}

namespace detail {

template <typename T>
struct BasicBlock {
    nn::Conv2d<T> conv1, conv2;
    nn::GroupNorm<T> gn1, gn2;
    nn::ReLU<T> relu;
    bool has_down = false;
    nn::Conv2d<T> down_conv;
    nn::GroupNorm<T> down_gn;

    BasicBlock(const std::string& name, int in_ch, int out_ch, int stride, Rng& rng)
        : conv1(name + ".conv1", in_ch, out_ch, 3, stride, 1, false, rng),
          conv2(name + ".conv2", out_ch, out_ch, 3, 1, 1, false, rng),
          gn1(name + ".gn1", out_ch, nn::GroupNorm<T>::pick_groups(out_ch)),
          gn2(name + ".gn2", out_ch, nn::GroupNorm<T>::pick_groups(out_ch)),
          has_down(stride != 1 || in_ch != out_ch) {
        if (has_down) {
            down_conv = nn::Conv2d<T>(name + ".down.conv", in_ch, out_ch, 1, stride, 0, false, rng);
            down_gn = nn::GroupNorm<T>(name + ".down.gn", out_ch, nn::GroupNorm<T>::pick_groups(out_ch));
        }
    }

    Tensor<T> forward(const Tensor<T>& x, nn::Tape<T>* tape) const {
        Tensor<T> h = conv1.forward(x, tape);
        h = gn1.forward(h, tape);
        h = relu.forward(h, tape);
        h = conv2.forward(h, tape);
        h = gn2.forward(h, tape);
        Tensor<T> s = has_down ? down_gn.forward(down_conv.forward(x, tape), tape) : x;
        ILKD_CHECK(h.same_shape(s), "residual shape mismatch");
        for (int64_t i = 0; i < h.numel(); ++i) h[i] += s[i];
        return relu.forward(h, tape);
    }

    Tensor<T> backward(const Tensor<T>& dy, nn::Tape<T>& tape, bool want_dx, bool acc) {
        nn::ReLU<T> r;  // stateless
        Tensor<T> g = r.backward(dy, tape);
        Tensor<T> dx_short;
        if (has_down) {
            Tensor<T> t = down_gn.backward(g, tape, true, acc);
            dx_short = down_conv.backward(t, tape, want_dx, acc);
        } else {
            dx_short = g;
        }
        Tensor<T> t = gn2.backward(g, tape, true, acc);
        t = conv2.backward(t, tape, true, acc);
        t = r.backward(t, tape);
        t = gn1.backward(t, tape, true, acc);
        Tensor<T> dx_main = conv1.backward(t, tape, want_dx, acc);
        if (!want_dx) return {};
        if (has_down) {
            for (int64_t i = 0; i < dx_main.numel(); ++i) dx_main[i] += dx_short[i];
            return dx_main;
        }
        for (int64_t i = 0; i < dx_short.numel(); ++i) dx_short[i] += dx_main[i];
        return dx_short;
    }

    void collect(std::vector<nn::Param<T>*>& out) {
        conv1.collect(out);
        gn1.collect(out);
        conv2.collect(out);
        gn2.collect(out);
        if (has_down) {
            down_conv.collect(out);
            down_gn.collect(out);
        }
    }
};

}  // namespace detail

/// Residual embedding network. f(x) maps an image batch (N,C,H,W) to raw
/// embeddings (N,d). Intermediate activations ("taps": stem output plus
/// every block output, post-ReLU) feed the attention-matching loss.
///
/// Not copyable; snapshot via copy_params_from on a second instance built
/// from the same spec.
template <typename T>
class EmbeddingBackbone {
public:
    EmbeddingBackbone(const BackboneSpec& spec, uint64_t seed) : spec_(spec) {
        Rng rng(splitmix64(seed ^ fnv1a64("backbone")));
        stem_conv_ = nn::Conv2d<T>("stem.conv", spec.in_channels, spec.stem_width, 3, 1, 1, false, rng);
        stem_gn_ = nn::GroupNorm<T>("stem.gn", spec.stem_width, nn::GroupNorm<T>::pick_groups(spec.stem_width));
        blocks_.reserve(static_cast<size_t>(spec.num_blocks()));
        int in_ch = spec.stem_width;
        for (size_t si = 0; si < spec.stage_widths.size(); ++si) {
            const int width = spec.stage_widths[si];
            for (int bi = 0; bi < spec.stage_blocks[si]; ++bi) {
                const int stride = bi == 0 ? spec.stage_strides[si] : 1;
                std::string name = "stage" + std::to_string(si) + ".block" + std::to_string(bi);
                blocks_.emplace_back(name, in_ch, width, stride, rng);
                in_ch = width;
            }
        }
        stem_conv_.collect(params_);
        stem_gn_.collect(params_);
        for (auto& b : blocks_) b.collect(params_);
    }

    EmbeddingBackbone(const EmbeddingBackbone&) = delete;
    EmbeddingBackbone& operator=(const EmbeddingBackbone&) = delete;

    const BackboneSpec& spec() const { return spec_; }
    int embedding_dim() const { return spec_.embedding_dim(); }
    int num_taps() const { return 1 + spec_.num_blocks(); }

    /// Training-mode forward. Pushes onto `tape`; fills `taps` when given.
    Tensor<T> forward(const Tensor<T>& x, nn::Tape<T>* tape, std::vector<Tensor<T>>* taps = nullptr) const {
        ILKD_CHECK(x.ndims() == 4 && x.dim(1) == spec_.in_channels,
                   "backbone input shape " + shape_str(x.shape()));
        if (taps) taps->clear();
        Tensor<T> h = stem_conv_.forward(x, tape);
        h = stem_gn_.forward(h, tape);
        h = relu_.forward(h, tape);
        if (taps) taps->push_back(h);
        for (const auto& b : blocks_) {
            h = b.forward(h, tape);
            if (taps) taps->push_back(h);
        }
        return gap_.forward(h, tape);
    }

    /// Inference forward, no tape, no taps.
    Tensor<T> embed(const Tensor<T>& x) const { return forward(x, nullptr, nullptr); }

    /// Reverse pass. `dz` is the gradient at the embeddings; `tap_grads`
    /// is either empty or one gradient per tap (empty tensors allowed for
    /// taps without a contribution). Returns d(input) when requested.
    Tensor<T> backward(const Tensor<T>& dz, const std::vector<Tensor<T>>& tap_grads, nn::Tape<T>& tape,
                       bool want_dx, bool acc_param_grads) {
        ILKD_CHECK(tap_grads.empty() || static_cast<int>(tap_grads.size()) == num_taps(),
                   "tap gradient count mismatch");
        auto inject = [&](Tensor<T>& g, int tap_idx) {
            if (tap_grads.empty() || tap_grads[static_cast<size_t>(tap_idx)].empty()) return;
            const Tensor<T>& tg = tap_grads[static_cast<size_t>(tap_idx)];
            ILKD_CHECK(g.same_shape(tg), "tap gradient shape mismatch at tap " + std::to_string(tap_idx));
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += tg[i];
        };
        Tensor<T> g = gap_.backward(dz, tape);
        for (int bi = static_cast<int>(blocks_.size()) - 1; bi >= 0; --bi) {
            inject(g, bi + 1);
            g = blocks_[static_cast<size_t>(bi)].backward(g, tape, true, acc_param_grads);
        }
        inject(g, 0);
        g = relu_.backward(g, tape);
        g = stem_gn_.backward(g, tape, true, acc_param_grads);
        return stem_conv_.backward(g, tape, want_dx, acc_param_grads);
    }

    std::vector<nn::Param<T>*>& params() { return params_; }
    const std::vector<nn::Param<T>*>& params() const { return params_; }

    void zero_grad() {
        for (auto* p : params_) p->zero_grad();
    }

    uint64_t checksum() const { return nn::params_checksum(params_); }

    void copy_params_from(const EmbeddingBackbone& other) {
        ILKD_CHECK(spec_ == other.spec_, "backbone spec mismatch in copy");
        for (size_t i = 0; i < params_.size(); ++i) params_[i]->value = other.params_[i]->value;
    }

    void save(std::ostream& os) const { nn::save_params(os, params_); }
    void load(std::istream& is) { nn::load_params(is, params_); }

private:
    BackboneSpec spec_;
    nn::Conv2d<T> stem_conv_;
    nn::GroupNorm<T> stem_gn_;
    nn::ReLU<T> relu_;
    nn::GlobalAvgPool<T> gap_;
    std::vector<detail::BasicBlock<T>> blocks_;
    std::vector<nn::Param<T>*> params_;
};

}  // namespace ilkd

#endif
