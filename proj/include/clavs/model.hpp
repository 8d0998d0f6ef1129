#pragma once

// Full model assembly: LoRA-adapted visual encoder, frozen audio encoder,
// optional audio-guided pre-fusion conditioning, cross-attention fusion, LoRA
// mask decoder and an expandable class head. Frames are processed one at a
// time with shared weights; audio tokens for the whole clip serve as keys and
// values of the fusion step.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clavs/checkpoint.hpp"
#include "clavs/nn.hpp"
#include "clavs/tensor.hpp"

namespace clavs {

enum class TaskMode { Binary, Semantic };

struct ModelConfig {
    std::size_t frame_h = 16;
    std::size_t frame_w = 16;
    std::size_t patch = 4;
    std::size_t d_v = 32;
    std::size_t d_a = 16;
    std::size_t d_raw = 16;
    std::size_t mlp_dim = 64;
    std::size_t encoder_blocks = 2;
    std::size_t rank = 8;
    double alpha = 16.0;
    TaskMode mode = TaskMode::Semantic;
    bool pre_conditioning = true;  // audio-guided conditioning before fusion
    std::uint64_t seed = 0;
};

struct ModelOutput {
    std::vector<Tensor> mask_logits;     // per frame, [H x W]
    std::optional<Tensor> class_logits;  // semantic mode only
    std::vector<Tensor> fused;           // per frame, [tokens x d_v]
};

class AvsModel {
public:
    explicit AvsModel(ModelConfig cfg)
        : cfg_(cfg),
          visual_("enc", cfg.frame_h, cfg.frame_w, cfg.patch, cfg.d_v, cfg.mlp_dim,
                  cfg.encoder_blocks, cfg.rank, cfg.alpha, cfg.seed),
          audio_("audio", cfg.d_raw, cfg.d_a, cfg.seed),
          fusion_("fuse", cfg.d_v, cfg.d_a, cfg.seed),
          decoder_("dec", cfg.d_v, cfg.frame_h / cfg.patch, cfg.frame_w / cfg.patch, cfg.patch,
                   cfg.rank, cfg.alpha, cfg.seed),
          head_("head", cfg.d_v, 0) {
        if (cfg.pre_conditioning) film_.emplace("film", cfg.d_v, cfg.d_a);
    }

    const ModelConfig& config() const { return cfg_; }

    // frames: T*H*W*3 row-major pixels, audio: T*d_raw vectors
    ModelOutput forward(std::span<const double> frames, std::span<const double> audio) const {
        return run(frames, audio, false);
    }

    // base-weights-only path (LoRA branches skipped); reference for the
    // zero-init identity checks
    ModelOutput forward_frozen(std::span<const double> frames,
                               std::span<const double> audio) const {
        return run(frames, audio, true);
    }

    // Stable-ordered list of everything the optimizer may touch. Frozen base
    // weights never appear here.
    std::vector<NamedParam> trainable_parameters() const {
        std::vector<NamedParam> out;
        visual_.collect_trainable(out);
        if (film_.has_value()) film_->collect_trainable(out);
        fusion_.collect_trainable(out);
        decoder_.collect_trainable(out);
        if (cfg_.mode == TaskMode::Semantic) head_.collect_trainable(out);
        return out;
    }

    std::vector<NamedParam> frozen_parameters() const {
        std::vector<NamedParam> out;
        visual_.collect_frozen(out);
        audio_.collect_frozen(out);
        decoder_.collect_frozen(out);
        return out;
    }

    // The anchored subset: LoRA factors of encoder and decoder when
    // restricted (the default), otherwise every trainable except the class
    // head, which grows across tasks and is never anchored.
    std::vector<NamedParam> anchored_parameters(bool restrict_to_lora_decoder) const {
        std::vector<NamedParam> out;
        for (auto& p : trainable_parameters()) {
            if (p.name.rfind("head.", 0) == 0) continue;
            if (restrict_to_lora_decoder) {
                bool lora = p.name.ends_with(".lora_a") || p.name.ends_with(".lora_b");
                if (!lora) continue;
            }
            out.push_back(std::move(p));
        }
        return out;
    }

    ClassHead& class_head() { return head_; }
    const ClassHead& class_head() const { return head_; }
    VisualEncoder& visual_encoder() { return visual_; }
    const CrossAttention& fusion() const { return fusion_; }
    std::optional<FiLMConditioner>& film() { return film_; }

    std::vector<const LoRALinear*> lora_layers() const {
        std::vector<const LoRALinear*> out;
        visual_.collect_lora_layers(out);
        decoder_.collect_lora_layers(out);
        return out;
    }

    // ---- checkpoint support -------------------------------------------------

    ckpt::TensorTable export_parameters() const {
        ckpt::TensorTable t;
        for (const auto& p : trainable_parameters())
            t[p.name] = {p.tensor.shape(),
                         {p.tensor.values().begin(), p.tensor.values().end()}};
        for (const auto& p : frozen_parameters())
            t[p.name] = {p.tensor.shape(),
                         {p.tensor.values().begin(), p.tensor.values().end()}};
        return t;
    }

    void load_parameters(const ckpt::TensorTable& table) {
        // the head may have grown since construction
        auto hw = table.find("head.w");
        if (hw != table.end() && cfg_.mode == TaskMode::Semantic)
            head_.expand_to(hw->second.first.at(0));
        auto restore = [&table](std::vector<NamedParam> params) {
            for (auto& p : params) {
                auto it = table.find(p.name);
                if (it == table.end()) throw IoError("checkpoint: missing tensor " + p.name);
                if (it->second.first != p.tensor.shape())
                    throw IoError("checkpoint: shape mismatch for " + p.name + ": stored " +
                                  shape_str(it->second.first) + " vs model " +
                                  shape_str(p.tensor.shape()));
                auto dst = p.tensor.values_mut();
                const auto& src = it->second.second;
                for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i];
            }
        };
        restore(trainable_parameters());
        restore(frozen_parameters());
    }

private:
    ModelOutput run(std::span<const double> frames, std::span<const double> audio,
                    bool frozen) const {
        const std::size_t frame_elems = cfg_.frame_h * cfg_.frame_w * 3;
        if (frames.size() % frame_elems != 0)
            throw ContractError("model forward: frame buffer of " +
                                std::to_string(frames.size()) +
                                " values is not a whole number of frames");
        const std::size_t t_frames = frames.size() / frame_elems;
        if (t_frames == 0) throw ContractError("model forward: no frames");
        if (audio.size() != t_frames * cfg_.d_raw)
            throw ContractError("model forward: " + std::to_string(t_frames) + " frames vs " +
                                std::to_string(audio.size() / cfg_.d_raw) +
                                " audio vectors (misaligned temporal axes)");

        Tensor audio_in = Tensor::from_data({t_frames, cfg_.d_raw},
                                            {audio.begin(), audio.end()});
        Tensor x_a = audio_.forward(audio_in);  // [T x d_a]

        ModelOutput out;
        Tensor pooled_acc;
        for (std::size_t t = 0; t < t_frames; ++t) {
            auto frame = frames.subspan(t * frame_elems, frame_elems);
            Tensor x_v = frozen ? visual_.forward_frozen(frame) : visual_.forward(frame);
            Tensor conditioned = x_v;
            if (film_.has_value()) {
                // temporally aligned audio embedding of this frame
                Tensor a_t = reshape(slice_rows(x_a, t, 1), {cfg_.d_a});
                conditioned = film_->forward(x_v, a_t);
            }
            Tensor fused = fusion_.forward(conditioned, x_a);
            Tensor logits = frozen ? decoder_.forward_frozen(fused) : decoder_.forward(fused);
            out.mask_logits.push_back(logits);
            out.fused.push_back(fused);
            if (cfg_.mode == TaskMode::Semantic) {
                Tensor pooled = reduce_mean(fused, 0);  // [d_v]
                pooled_acc = pooled_acc.defined() ? add(pooled_acc, pooled) : pooled;
            }
        }
        if (cfg_.mode == TaskMode::Semantic && head_.classes() > 0) {
            Tensor clip_feature = scale(pooled_acc, 1.0 / double(t_frames));
            out.class_logits = head_.forward(clip_feature);
        }
        return out;
    }

    ModelConfig cfg_;
    VisualEncoder visual_;
    AudioEncoder audio_;
    std::optional<FiLMConditioner> film_;
    CrossAttention fusion_;
    MaskDecoder decoder_;
    ClassHead head_;
};

}  // namespace clavs
