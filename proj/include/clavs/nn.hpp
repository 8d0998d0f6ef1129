#pragma once

// Parameterized building blocks: LoRA-adapted linear maps, audio-guided
// channel modulation, cross-attention fusion, patch embedding, mask decoding
// and the expandable class head. Frozen weights stand in for a pretrained
// backbone and are drawn from per-layer seeded Gaussians.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clavs/rng.hpp"
#include "clavs/tensor.hpp"

namespace clavs {

struct NamedParam {
    std::string name;
    Tensor tensor;
};

inline Tensor gaussian_tensor(Shape shape, double stddev, Rng& rng,
                              bool requires_grad = false) {
    std::vector<double> d(shape_numel(shape));
    for (auto& v : d) v = rng.gaussian(0.0, stddev);
    return Tensor::from_data(std::move(shape), std::move(d), requires_grad);
}

// y = x W^T + b for row-token inputs x [n x d_in], W [d_out x d_in]
inline Tensor linear_rows(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y = matmul(x, transpose2d(w));
    return b.defined() ? add(y, b) : y;
}

// ---------------------------------------------------------------------------
// LoRALinear: frozen base W0, bias plus trainable low-rank update (alpha/r) B A.
// The update path is evaluated as B (A x) so the dense delta never
// materializes. B starts at zero, making a fresh layer exactly the base map.

class LoRALinear {
public:
    LoRALinear() = default;

    LoRALinear(std::string name, std::size_t d_out, std::size_t d_in, std::size_t rank,
               double alpha, std::uint64_t seed, bool zero_base = false)
        : name_(std::move(name)), d_in_(d_in), d_out_(d_out), rank_(rank), alpha_(alpha) {
        if (rank == 0 || rank >= std::min(d_in, d_out))
            throw ConfigError("LoRALinear " + name_ + ": rank " + std::to_string(rank) +
                              " must lie in [1, min(" + std::to_string(d_in) + ", " +
                              std::to_string(d_out) + "))");
        Rng rng(mix_seed(seed, name_));
        if (zero_base) {
            w0_ = Tensor::zeros({d_out, d_in});
            bias_ = Tensor::zeros({d_out});
        } else {
            w0_ = gaussian_tensor({d_out, d_in}, 1.0 / std::sqrt(double(d_in)), rng);
            bias_ = gaussian_tensor({d_out}, 0.01, rng);
        }
        a_ = gaussian_tensor({rank, d_in}, 1.0 / std::sqrt(double(d_in)), rng, true);
        b_ = Tensor::zeros({d_out, rank}, true);
    }

    Tensor forward(const Tensor& x) const {
        check_input(x);
        Tensor y0 = linear_rows(x, w0_, bias_);
        Tensor ax = matmul(x, transpose2d(a_));
        Tensor bax = matmul(ax, transpose2d(b_));
        return add(y0, scale(bax, alpha_ / double(rank_)));
    }

    // base map only; what the layer computed before any adaptation
    Tensor forward_frozen(const Tensor& x) const {
        check_input(x);
        return linear_rows(x, w0_, bias_);
    }

    void collect_trainable(std::vector<NamedParam>& out) const {
        out.push_back({name_ + ".lora_a", a_});
        out.push_back({name_ + ".lora_b", b_});
    }

    void collect_frozen(std::vector<NamedParam>& out) const {
        out.push_back({name_ + ".w0", w0_});
        out.push_back({name_ + ".bias", bias_});
    }

    const std::string& name() const { return name_; }
    std::size_t rank() const { return rank_; }
    double alpha() const { return alpha_; }
    double scaling() const { return alpha_ / double(rank_); }
    Tensor base_weight() const { return w0_; }
    Tensor base_bias() const { return bias_; }
    Tensor lora_a() const { return a_; }
    Tensor lora_b() const { return b_; }

private:
    void check_input(const Tensor& x) const {
        if (x.rank() == 0 || x.shape().back() != d_in_)
            throw DimensionError("LoRALinear " + name_ + ": input " + shape_str(x.shape()) +
                                 " does not end in d_in=" + std::to_string(d_in_));
    }

    std::string name_;
    std::size_t d_in_ = 0, d_out_ = 0, rank_ = 0;
    double alpha_ = 0.0;
    Tensor w0_, bias_, a_, b_;
};

// ---------------------------------------------------------------------------
// FiLMConditioner: projects a pooled audio vector to per-channel (gamma, beta)
// and applies (1 + gamma) * x + beta over the visual tokens. Zero-initialized
// projection makes the operator an exact identity.

class FiLMConditioner {
public:
    FiLMConditioner() = default;

    FiLMConditioner(std::string name, std::size_t d_v, std::size_t d_a)
        : name_(std::move(name)), d_v_(d_v), d_a_(d_a) {
        proj_w_ = Tensor::zeros({2 * d_v, d_a}, true);
        proj_b_ = Tensor::zeros({2 * d_v}, true);
    }

    Tensor forward(const Tensor& x_v, const Tensor& audio_pooled) const {
        if (x_v.rank() != 2 || x_v.shape()[1] != d_v_)
            throw DimensionError("FiLM " + name_ + ": visual tokens " + shape_str(x_v.shape()) +
                                 " do not match d_v=" + std::to_string(d_v_));
        if (audio_pooled.size() != d_a_)
            throw DimensionError("FiLM " + name_ + ": audio vector " +
                                 shape_str(audio_pooled.shape()) + " does not match d_a=" +
                                 std::to_string(d_a_));
        Tensor a_row = reshape(audio_pooled, {1, d_a_});
        Tensor gb = linear_rows(a_row, proj_w_, proj_b_);  // [1 x 2 d_v]
        Tensor gamma = reshape(slice_last(gb, 0, d_v_), {d_v_});
        Tensor beta = reshape(slice_last(gb, d_v_, d_v_), {d_v_});
        return add(mul(x_v, add_const(gamma, 1.0)), beta);
    }

    void collect_trainable(std::vector<NamedParam>& out) const {
        out.push_back({name_ + ".proj_w", proj_w_});
        out.push_back({name_ + ".proj_b", proj_b_});
    }

    Tensor proj_w() const { return proj_w_; }
    Tensor proj_b() const { return proj_b_; }

private:
    std::string name_;
    std::size_t d_v_ = 0, d_a_ = 0;
    Tensor proj_w_, proj_b_;
};

// ---------------------------------------------------------------------------
// CrossAttention: queries from (conditioned) visual tokens, keys/values from
// audio tokens, residual into layer norm.

class CrossAttention {
public:
    CrossAttention() = default;

    CrossAttention(std::string name, std::size_t d_v, std::size_t d_a, std::uint64_t seed)
        : name_(std::move(name)), d_v_(d_v), d_a_(d_a) {
        Rng rng(mix_seed(seed, name_));
        wq_ = gaussian_tensor({d_v, d_v}, 1.0 / std::sqrt(double(d_v)), rng, true);
        wk_ = gaussian_tensor({d_v, d_a}, 1.0 / std::sqrt(double(d_a)), rng, true);
        wv_ = gaussian_tensor({d_v, d_a}, 1.0 / std::sqrt(double(d_a)), rng, true);
        ln_gain_ = Tensor::full({d_v}, 1.0, true);
        ln_bias_ = Tensor::zeros({d_v}, true);
    }

    Tensor forward(const Tensor& x_v, const Tensor& x_a) const {
        return forward_with_attention(x_v, x_a).first;
    }

    std::pair<Tensor, Tensor> forward_with_attention(const Tensor& x_v,
                                                     const Tensor& x_a) const {
        if (x_v.rank() != 2 || x_v.shape()[1] != d_v_)
            throw DimensionError("CrossAttention " + name_ + ": visual tokens " +
                                 shape_str(x_v.shape()));
        if (x_a.rank() != 2 || x_a.shape()[1] != d_a_)
            throw DimensionError("CrossAttention " + name_ + ": audio tokens " +
                                 shape_str(x_a.shape()));
        if (x_a.shape()[0] == 0)
            throw ContractError("CrossAttention " + name_ + ": no audio context (m = 0)");
        Tensor q = matmul(x_v, transpose2d(wq_));
        Tensor k = matmul(x_a, transpose2d(wk_));
        Tensor v = matmul(x_a, transpose2d(wv_));
        Tensor attn = softmax(scale(matmul(q, transpose2d(k)), 1.0 / std::sqrt(double(d_v_))),
                              -1);
        Tensor fused = layer_norm(add(x_v, matmul(attn, v)), ln_gain_, ln_bias_);
        return {fused, attn};
    }

    void collect_trainable(std::vector<NamedParam>& out) const {
        out.push_back({name_ + ".wq", wq_});
        out.push_back({name_ + ".wk", wk_});
        out.push_back({name_ + ".wv", wv_});
        out.push_back({name_ + ".ln_gain", ln_gain_});
        out.push_back({name_ + ".ln_bias", ln_bias_});
    }

private:
    std::string name_;
    std::size_t d_v_ = 0, d_a_ = 0;
    Tensor wq_, wk_, wv_, ln_gain_, ln_bias_;
};

// ---------------------------------------------------------------------------
// PatchEmbed: non-overlapping p x p patches -> linear projection -> positions.
// Projection and positions belong to the simulated pretrained backbone.

class PatchEmbed {
public:
    PatchEmbed() = default;

    PatchEmbed(std::string name, std::size_t h, std::size_t w, std::size_t patch,
               std::size_t d_v, std::uint64_t seed)
        : name_(std::move(name)), h_(h), w_(w), patch_(patch), d_v_(d_v) {
        if (patch == 0 || h % patch != 0 || w % patch != 0)
            throw ConfigError("PatchEmbed " + name_ + ": " + std::to_string(h) + "x" +
                              std::to_string(w) + " frame not divisible by patch " +
                              std::to_string(patch));
        grid_h_ = h / patch;
        grid_w_ = w / patch;
        Rng rng(mix_seed(seed, name_));
        const std::size_t in_dim = patch * patch * 3;
        proj_w_ = gaussian_tensor({d_v, in_dim}, 1.0 / std::sqrt(double(in_dim)), rng);
        proj_b_ = gaussian_tensor({d_v}, 0.01, rng);
        pos_ = gaussian_tensor({grid_h_ * grid_w_, d_v}, 0.02, rng);
    }

    std::size_t tokens() const { return grid_h_ * grid_w_; }
    std::size_t grid_h() const { return grid_h_; }
    std::size_t grid_w() const { return grid_w_; }

    // frame: row-major H x W x 3 pixel data
    Tensor forward(std::span<const double> frame) const {
        if (frame.size() != h_ * w_ * 3)
            throw DimensionError("PatchEmbed " + name_ + ": frame has " +
                                 std::to_string(frame.size()) + " values, expected " +
                                 std::to_string(h_ * w_ * 3));
        const std::size_t in_dim = patch_ * patch_ * 3;
        std::vector<double> patches(tokens() * in_dim);
        for (std::size_t gy = 0; gy < grid_h_; ++gy)
            for (std::size_t gx = 0; gx < grid_w_; ++gx) {
                double* dst = patches.data() + (gy * grid_w_ + gx) * in_dim;
                for (std::size_t py = 0; py < patch_; ++py)
                    for (std::size_t px = 0; px < patch_; ++px)
                        for (std::size_t c = 0; c < 3; ++c)
                            *dst++ = frame[((gy * patch_ + py) * w_ + gx * patch_ + px) * 3 + c];
            }
        Tensor x = Tensor::from_data({tokens(), in_dim}, std::move(patches));
        return add(linear_rows(x, proj_w_, proj_b_), pos_);
    }

    void collect_frozen(std::vector<NamedParam>& out) const {
        out.push_back({name_ + ".proj_w", proj_w_});
        out.push_back({name_ + ".proj_b", proj_b_});
        out.push_back({name_ + ".pos", pos_});
    }

    Tensor positions() const { return pos_; }

private:
    std::string name_;
    std::size_t h_ = 0, w_ = 0, patch_ = 0, d_v_ = 0, grid_h_ = 0, grid_w_ = 0;
    Tensor proj_w_, proj_b_, pos_;
};

// ---------------------------------------------------------------------------
// Pre-norm transformer block with single-head self-attention; every linear map
// is LoRA-adapted over a frozen base.

class TransformerBlock {
public:
    TransformerBlock() = default;

    TransformerBlock(std::string name, std::size_t d_v, std::size_t mlp_dim, std::size_t rank,
                     double alpha, std::uint64_t seed)
        : name_(std::move(name)),
          d_v_(d_v),
          q_(name_ + ".attn_q", d_v, d_v, rank, alpha, seed),
          k_(name_ + ".attn_k", d_v, d_v, rank, alpha, seed),
          v_(name_ + ".attn_v", d_v, d_v, rank, alpha, seed),
          o_(name_ + ".attn_o", d_v, d_v, rank, alpha, seed),
          fc1_(name_ + ".mlp_fc1", mlp_dim, d_v, rank, alpha, seed),
          fc2_(name_ + ".mlp_fc2", d_v, mlp_dim, rank, alpha, seed) {
        ln1_gain_ = Tensor::full({d_v}, 1.0, true);
        ln1_bias_ = Tensor::zeros({d_v}, true);
        ln2_gain_ = Tensor::full({d_v}, 1.0, true);
        ln2_bias_ = Tensor::zeros({d_v}, true);
    }

    Tensor forward(const Tensor& x) const { return run(x, false); }
    Tensor forward_frozen(const Tensor& x) const { return run(x, true); }

    void collect_trainable(std::vector<NamedParam>& out) const {
        q_.collect_trainable(out);
        k_.collect_trainable(out);
        v_.collect_trainable(out);
        o_.collect_trainable(out);
        fc1_.collect_trainable(out);
        fc2_.collect_trainable(out);
        out.push_back({name_ + ".ln1_gain", ln1_gain_});
        out.push_back({name_ + ".ln1_bias", ln1_bias_});
        out.push_back({name_ + ".ln2_gain", ln2_gain_});
        out.push_back({name_ + ".ln2_bias", ln2_bias_});
    }

    void collect_frozen(std::vector<NamedParam>& out) const {
        q_.collect_frozen(out);
        k_.collect_frozen(out);
        v_.collect_frozen(out);
        o_.collect_frozen(out);
        fc1_.collect_frozen(out);
        fc2_.collect_frozen(out);
    }

    void collect_lora_layers(std::vector<const LoRALinear*>& out) const {
        out.push_back(&q_);
        out.push_back(&k_);
        out.push_back(&v_);
        out.push_back(&o_);
        out.push_back(&fc1_);
        out.push_back(&fc2_);
    }

private:
    Tensor run(const Tensor& x, bool frozen) const {
        auto apply = [frozen](const LoRALinear& l, const Tensor& t) {
            return frozen ? l.forward_frozen(t) : l.forward(t);
        };
        Tensor h = layer_norm(x, ln1_gain_, ln1_bias_);
        Tensor q = apply(q_, h);
        Tensor k = apply(k_, h);
        Tensor v = apply(v_, h);
        Tensor attn = softmax(scale(matmul(q, transpose2d(k)), 1.0 / std::sqrt(double(d_v_))),
                              -1);
        Tensor x1 = add(x, apply(o_, matmul(attn, v)));
        Tensor h2 = layer_norm(x1, ln2_gain_, ln2_bias_);
        return add(x1, apply(fc2_, gelu(apply(fc1_, h2))));
    }

    std::string name_;
    std::size_t d_v_ = 0;
    LoRALinear q_, k_, v_, o_, fc1_, fc2_;
    Tensor ln1_gain_, ln1_bias_, ln2_gain_, ln2_bias_;
};

// ---------------------------------------------------------------------------
// MaskDecoder: LoRA-adapted linears from fused tokens to per-patch logit
// blocks, reassembled spatially and bilinearly resized to frame resolution.
// The final projection starts from a zero base so a fresh decoder emits zero
// logits (sigmoid 0.5) everywhere.

class MaskDecoder {
public:
    MaskDecoder() = default;

    MaskDecoder(std::string name, std::size_t d_v, std::size_t grid_h, std::size_t grid_w,
                std::size_t patch, std::size_t rank, double alpha, std::uint64_t seed)
        : name_(std::move(name)),
          grid_h_(grid_h),
          grid_w_(grid_w),
          patch_(patch),
          hidden_(name_ + ".hidden", d_v, d_v, rank, alpha, seed),
          out_(name_ + ".out", patch * patch, d_v, rank, alpha, seed, /*zero_base=*/true) {}

    Tensor forward(const Tensor& fused) const { return run(fused, false); }
    Tensor forward_frozen(const Tensor& fused) const { return run(fused, true); }

    std::size_t out_h() const { return grid_h_ * patch_; }
    std::size_t out_w() const { return grid_w_ * patch_; }

    void collect_trainable(std::vector<NamedParam>& out) const {
        hidden_.collect_trainable(out);
        out_.collect_trainable(out);
    }

    void collect_frozen(std::vector<NamedParam>& out) const {
        hidden_.collect_frozen(out);
        out_.collect_frozen(out);
    }

    void collect_lora_layers(std::vector<const LoRALinear*>& out) const {
        out.push_back(&hidden_);
        out.push_back(&out_);
    }

private:
    Tensor run(const Tensor& fused, bool frozen) const {
        if (fused.rank() != 2 || fused.shape()[0] != grid_h_ * grid_w_)
            throw DimensionError("MaskDecoder " + name_ + ": got " + shape_str(fused.shape()) +
                                 " tokens, configured grid is " + std::to_string(grid_h_) + "x" +
                                 std::to_string(grid_w_));
        Tensor h = frozen ? gelu(hidden_.forward_frozen(fused)) : gelu(hidden_.forward(fused));
        Tensor blocks = frozen ? out_.forward_frozen(h) : out_.forward(h);
        Tensor map = assemble_patch_grid(blocks, grid_h_, grid_w_, patch_);
        if (map.shape()[0] != out_h() || map.shape()[1] != out_w())
            map = bilinear_upsample2d(map, out_h(), out_w());
        return map;
    }

    std::string name_;
    std::size_t grid_h_ = 0, grid_w_ = 0, patch_ = 0;
    LoRALinear hidden_, out_;
};

// ---------------------------------------------------------------------------
// ClassHead: linear map over pooled features whose output rows grow as new
// classes arrive. New rows are zero so existing logits are untouched.

class ClassHead {
public:
    ClassHead() = default;

    ClassHead(std::string name, std::size_t d_v, std::size_t classes = 0)
        : name_(std::move(name)), d_v_(d_v), classes_(classes) {
        w_ = Tensor::zeros({classes, d_v}, true);
        b_ = Tensor::zeros({classes}, true);
    }

    std::size_t classes() const { return classes_; }

    void expand_to(std::size_t classes) {
        if (classes < classes_)
            throw ContractError("ClassHead " + name_ + ": cannot shrink from " +
                                std::to_string(classes_) + " to " + std::to_string(classes));
        if (classes == classes_) return;
        Tensor nw = Tensor::zeros({classes, d_v_}, true);
        Tensor nb = Tensor::zeros({classes}, true);
        auto wv = nw.values_mut();
        auto bv = nb.values_mut();
        for (std::size_t i = 0; i < classes_ * d_v_; ++i) wv[i] = w_.values()[i];
        for (std::size_t i = 0; i < classes_; ++i) bv[i] = b_.values()[i];
        w_ = nw;
        b_ = nb;
        classes_ = classes;
    }

    // pooled feature vector [d_v] -> class logits [classes]
    Tensor forward(const Tensor& pooled) const {
        if (classes_ == 0)
            throw ContractError("ClassHead " + name_ + ": no classes registered yet");
        if (pooled.size() != d_v_)
            throw ContractError("ClassHead " + name_ + ": pooled features " +
                                shape_str(pooled.shape()) + " do not match d_v=" +
                                std::to_string(d_v_));
        Tensor row = reshape(pooled, {1, d_v_});
        return reshape(linear_rows(row, w_, b_), {classes_});
    }

    void collect_trainable(std::vector<NamedParam>& out) const {
        out.push_back({name_ + ".w", w_});
        out.push_back({name_ + ".b", b_});
    }

    Tensor weight() const { return w_; }
    Tensor bias() const { return b_; }

private:
    std::string name_;
    std::size_t d_v_ = 0, classes_ = 0;
    Tensor w_, b_;
};

// mean-pool tokens then map to class logits
inline Tensor classify(const ClassHead& head, const Tensor& fused_tokens) {
    return head.forward(reduce_mean(fused_tokens, 0));
}

// ---------------------------------------------------------------------------
// VisualEncoder: patch tokens + positions through a stack of LoRA-adapted
// transformer blocks. The frozen bases simulate the pretrained backbone.

class VisualEncoder {
public:
    VisualEncoder() = default;

    VisualEncoder(std::string name, std::size_t h, std::size_t w, std::size_t patch,
                  std::size_t d_v, std::size_t mlp_dim, std::size_t n_blocks, std::size_t rank,
                  double alpha, std::uint64_t seed)
        : embed_(name + ".embed", h, w, patch, d_v, seed) {
        for (std::size_t i = 0; i < n_blocks; ++i)
            blocks_.emplace_back(name + ".block" + std::to_string(i), d_v, mlp_dim, rank,
                                 alpha, seed);
    }

    Tensor forward(std::span<const double> frame) const {
        Tensor x = embed_.forward(frame);
        for (const auto& b : blocks_) x = b.forward(x);
        return x;
    }

    Tensor forward_frozen(std::span<const double> frame) const {
        Tensor x = embed_.forward(frame);
        for (const auto& b : blocks_) x = b.forward_frozen(x);
        return x;
    }

    std::size_t tokens() const { return embed_.tokens(); }
    const PatchEmbed& embed() const { return embed_; }
    PatchEmbed& embed() { return embed_; }

    void collect_trainable(std::vector<NamedParam>& out) const {
        for (const auto& b : blocks_) b.collect_trainable(out);
    }

    void collect_frozen(std::vector<NamedParam>& out) const {
        embed_.collect_frozen(out);
        for (const auto& b : blocks_) b.collect_frozen(out);
    }

    void collect_lora_layers(std::vector<const LoRALinear*>& out) const {
        for (const auto& b : blocks_) b.collect_lora_layers(out);
    }

private:
    PatchEmbed embed_;
    std::vector<TransformerBlock> blocks_;
};

// ---------------------------------------------------------------------------
// AudioEncoder: frozen two-layer MLP mapping raw audio vectors to embeddings.

class AudioEncoder {
public:
    AudioEncoder() = default;

    AudioEncoder(std::string name, std::size_t d_raw, std::size_t d_a, std::uint64_t seed)
        : name_(std::move(name)), d_raw_(d_raw) {
        Rng rng(mix_seed(seed, name_));
        w1_ = gaussian_tensor({d_a, d_raw}, 1.0 / std::sqrt(double(d_raw)), rng);
        b1_ = gaussian_tensor({d_a}, 0.01, rng);
        w2_ = gaussian_tensor({d_a, d_a}, 1.0 / std::sqrt(double(d_a)), rng);
        b2_ = gaussian_tensor({d_a}, 0.01, rng);
    }

    // audio [T x d_raw] -> [T x d_a]
    Tensor forward(const Tensor& audio) const {
        if (audio.rank() != 2 || audio.shape()[1] != d_raw_)
            throw DimensionError("AudioEncoder " + name_ + ": audio " +
                                 shape_str(audio.shape()) + " does not match d_raw=" +
                                 std::to_string(d_raw_));
        return linear_rows(gelu(linear_rows(audio, w1_, b1_)), w2_, b2_);
    }

    void collect_frozen(std::vector<NamedParam>& out) const {
        out.push_back({name_ + ".w1", w1_});
        out.push_back({name_ + ".b1", b1_});
        out.push_back({name_ + ".w2", w2_});
        out.push_back({name_ + ".b2", b2_});
    }

private:
    std::string name_;
    std::size_t d_raw_ = 0;
    Tensor w1_, b1_, w2_, b2_;
};

}  // namespace clavs
