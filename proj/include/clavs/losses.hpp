#pragma once

// Segmentation, classification and composite objectives. Per-frame BCE and
// Dice are averaged over the supervised frames of a sample before any batch
// averaging; unsupervised frames never touch the loss.

#include <optional>
#include <span>
#include <vector>

#include "clavs/tensor.hpp"

namespace clavs {

struct LossConfig {
    double lambda_cls = 0.5;
    double dice_smooth = 1.0;
};

namespace detail {

inline void check_frames(std::span<const Tensor> logits, std::span<const Tensor> masks,
                         std::span<const std::uint8_t> supervised) {
    if (logits.size() != masks.size() || logits.size() != supervised.size())
        throw ContractError("loss: got " + std::to_string(logits.size()) + " logit frames, " +
                            std::to_string(masks.size()) + " masks, " +
                            std::to_string(supervised.size()) + " supervision flags");
    for (std::size_t t = 0; t < logits.size(); ++t)
        if (logits[t].shape() != masks[t].shape())
            throw DimensionError("loss: frame " + std::to_string(t) + " logits " +
                                 shape_str(logits[t].shape()) + " vs mask " +
                                 shape_str(masks[t].shape()));
}

inline std::size_t supervised_count(std::span<const std::uint8_t> supervised) {
    std::size_t n = 0;
    for (auto f : supervised) n += f ? 1 : 0;
    if (n == 0) throw ContractError("loss: sample has no supervised frames");
    return n;
}

}  // namespace detail

// mean BCE over supervised pixels, frame means averaged across supervised frames
inline Tensor bce_loss(std::span<const Tensor> logits, std::span<const Tensor> masks,
                       std::span<const std::uint8_t> supervised) {
    detail::check_frames(logits, masks, supervised);
    const std::size_t n = detail::supervised_count(supervised);
    Tensor acc;
    for (std::size_t t = 0; t < logits.size(); ++t) {
        if (!supervised[t]) continue;
        Tensor frame = bce_with_logits_mean(logits[t], masks[t]);
        acc = acc.defined() ? add(acc, frame) : frame;
    }
    return scale(acc, 1.0 / double(n));
}

// 1 - (2 sum(p m) + s) / (sum p + sum m + s) with p = sigmoid(logits)
inline Tensor dice_frame(const Tensor& logits, const Tensor& mask, double smooth) {
    Tensor p = sigmoid(logits);
    Tensor inter = reduce_sum(mul(p, mask));
    Tensor denom = add(reduce_sum(p), reduce_sum(mask));
    Tensor ratio = div(add_const(scale(inter, 2.0), smooth), add_const(denom, smooth));
    return add_const(scale(ratio, -1.0), 1.0);
}

inline Tensor dice_loss(std::span<const Tensor> logits, std::span<const Tensor> masks,
                        std::span<const std::uint8_t> supervised, double smooth = 1.0) {
    detail::check_frames(logits, masks, supervised);
    const std::size_t n = detail::supervised_count(supervised);
    Tensor acc;
    for (std::size_t t = 0; t < logits.size(); ++t) {
        if (!supervised[t]) continue;
        Tensor frame = dice_frame(logits[t], masks[t], smooth);
        acc = acc.defined() ? add(acc, frame) : frame;
    }
    return scale(acc, 1.0 / double(n));
}

// per-sample segmentation objective: BCE + Dice
inline Tensor seg_loss(std::span<const Tensor> logits, std::span<const Tensor> masks,
                       std::span<const std::uint8_t> supervised, const LossConfig& cfg = {}) {
    return add(bce_loss(logits, masks, supervised),
               dice_loss(logits, masks, supervised, cfg.dice_smooth));
}

inline Tensor cls_loss(const Tensor& class_logits, std::size_t label) {
    return cross_entropy_with_logits(class_logits, label);
}

// mean of per-sample scalars over a batch
inline Tensor batch_mean(std::span<const Tensor> per_sample) {
    if (per_sample.empty()) throw ContractError("batch_mean: empty batch");
    Tensor acc = per_sample[0];
    for (std::size_t i = 1; i < per_sample.size(); ++i) acc = add(acc, per_sample[i]);
    return scale(acc, 1.0 / double(per_sample.size()));
}

// seg + lambda_cls * cls + stab; absent terms contribute nothing
inline Tensor total_loss(const Tensor& seg, const std::optional<Tensor>& cls,
                         const std::optional<Tensor>& stab, const LossConfig& cfg = {}) {
    if (cfg.lambda_cls < 0.0) throw ConfigError("total_loss: lambda_cls must be >= 0");
    Tensor t = seg;
    if (cls.has_value()) t = add(t, scale(*cls, cfg.lambda_cls));
    if (stab.has_value()) t = add(t, *stab);
    return t;
}

}  // namespace clavs
