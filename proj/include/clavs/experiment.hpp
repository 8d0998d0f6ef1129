#pragma once

// End-to-end experiment driver: configuration and presets, the continual
// training/evaluation loop over a protocol schedule, accuracy-matrix assembly,
// checkpoint/resume, the ablation suite and result emission. Every stochastic
// choice derives from (seed, tag, indices), so a (config, seed) pair fully
// determines the numeric content of a run and a checkpoint resume continues
// the remaining tasks bitwise.

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "clavs/anchoring.hpp"
#include "clavs/checkpoint.hpp"
#include "clavs/losses.hpp"
#include "clavs/metrics.hpp"
#include "clavs/model.hpp"
#include "clavs/synth.hpp"
#include "clavs/tensor.hpp"

namespace clavs {

constexpr const char* kVersionString = "clavs-0.1.0";

// ---------------------------------------------------------------------------
// configuration

struct ExperimentConfig {
    Protocol protocol = Protocol::CIL;
    DataConfig data;

    // model dimensions
    std::size_t patch = 4;
    std::size_t d_v = 32;
    std::size_t d_a = 16;
    std::size_t mlp_dim = 64;
    std::size_t encoder_blocks = 2;
    std::size_t rank = 8;
    double alpha = 16.0;

    // optimization
    std::size_t epochs = 30;
    std::size_t batch_size = 4;
    double lr = 1e-3;
    double weight_decay = 5e-4;
    double lambda_cls = 0.5;
    double dice_smooth = 1.0;

    // anchoring
    double c = 0.3;
    double xi = 0.1;
    bool lra = true;
    bool restrict_anchor_to_lora_decoder = true;

    // architecture ablation
    bool pre_conditioning = true;

    // evaluation cadence (anytime inference over long task streams)
    std::size_t eval_every = 1;

    std::string preset_name = "custom";
    std::string out_dir = "runs";
};

inline bool protocol_is_semantic(Protocol p) {
    return p == Protocol::TIL || p == Protocol::CIL;
}

inline ExperimentConfig preset_config(const std::string& name) {
    ExperimentConfig cfg;
    cfg.preset_name = name;
    if (name == "ss-desk") {
        cfg.protocol = Protocol::CIL;
        cfg.data.classes = 7;
        cfg.data.split_base = 3;
        cfg.data.split_increment = 2;
        cfg.epochs = 10;
    } else if (name == "ms-desk") {
        cfg.protocol = Protocol::TFCL;
        cfg.data.classes = 12;
        cfg.data.split_base = 4;
        cfg.data.split_increment = 2;
        cfg.data.tfcl_rho = 0.25;
        cfg.epochs = 10;
    } else if (name == "ss-paper-split") {
        cfg.protocol = Protocol::CIL;
        cfg.data.classes = 23;
        cfg.data.split_base = 11;
        cfg.data.split_increment = 2;
        cfg.epochs = 30;
    } else if (name == "ms-paper-split") {
        cfg.protocol = Protocol::TFCL;
        cfg.data.classes = 31 + 5 * 49;  // 31-5 split, 50 tasks
        cfg.data.split_base = 31;
        cfg.data.split_increment = 5;
        cfg.data.tfcl_rho = 0.25;
        cfg.epochs = 30;
        cfg.eval_every = 5;
    } else {
        throw ConfigError("unknown preset '" + name +
                          "' (ss-desk, ms-desk, ss-paper-split, ms-paper-split)");
    }
    return cfg;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    return {{"protocol", protocol_name(c.protocol)},
            {"preset", c.preset_name},
            {"data",
             {{"classes", c.data.classes},
              {"split_base", c.data.split_base},
              {"split_increment", c.data.split_increment},
              {"frames_t", c.data.frames_t},
              {"h", c.data.h},
              {"w", c.data.w},
              {"d_raw", c.data.d_raw},
              {"train_per_task", c.data.train_per_task},
              {"test_per_task", c.data.test_per_task},
              {"audio_noise", c.data.audio_noise},
              {"dil_tasks", c.data.dil_tasks},
              {"tfcl_rho", c.data.tfcl_rho}}},
            {"model",
             {{"patch", c.patch},
              {"d_v", c.d_v},
              {"d_a", c.d_a},
              {"mlp_dim", c.mlp_dim},
              {"encoder_blocks", c.encoder_blocks},
              {"rank", c.rank},
              {"alpha", c.alpha}}},
            {"train",
             {{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"lambda_cls", c.lambda_cls},
              {"dice_smooth", c.dice_smooth}}},
            {"anchor",
             {{"c", c.c},
              {"xi", c.xi},
              {"lra", c.lra},
              {"restrict_to_lora_decoder", c.restrict_anchor_to_lora_decoder}}},
            {"pre_conditioning", c.pre_conditioning},
            {"eval_every", c.eval_every}};
}

// flat key=value configuration (dots select nested fields); '#' starts a comment
inline std::map<std::string, std::string> parse_kv_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        kv[key] = val;
    }
    return kv;
}

inline ExperimentConfig apply_kv(ExperimentConfig cfg,
                                 const std::map<std::string, std::string>& kv) {
    auto as_u = [](const std::string& v) { return static_cast<std::size_t>(std::stoull(v)); };
    auto as_d = [](const std::string& v) { return std::stod(v); };
    auto as_b = [](const std::string& v) {
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("expected boolean, got '" + v + "'");
    };
    for (const auto& [k, v] : kv) {
        if (k == "preset") cfg = preset_config(v);
    }
    for (const auto& [k, v] : kv) {
        if (k == "preset") continue;
        else if (k == "protocol") cfg.protocol = protocol_from_name(v);
        else if (k == "data.classes") cfg.data.classes = as_u(v);
        else if (k == "data.split_base") cfg.data.split_base = as_u(v);
        else if (k == "data.split_increment") cfg.data.split_increment = as_u(v);
        else if (k == "data.frames_t") cfg.data.frames_t = as_u(v);
        else if (k == "data.h") cfg.data.h = as_u(v);
        else if (k == "data.w") cfg.data.w = as_u(v);
        else if (k == "data.d_raw") cfg.data.d_raw = as_u(v);
        else if (k == "data.train_per_task") cfg.data.train_per_task = as_u(v);
        else if (k == "data.test_per_task") cfg.data.test_per_task = as_u(v);
        else if (k == "data.audio_noise") cfg.data.audio_noise = as_d(v);
        else if (k == "data.dil_tasks") cfg.data.dil_tasks = as_u(v);
        else if (k == "data.tfcl_rho") cfg.data.tfcl_rho = as_d(v);
        else if (k == "model.patch") cfg.patch = as_u(v);
        else if (k == "model.d_v") cfg.d_v = as_u(v);
        else if (k == "model.d_a") cfg.d_a = as_u(v);
        else if (k == "model.mlp_dim") cfg.mlp_dim = as_u(v);
        else if (k == "model.encoder_blocks") cfg.encoder_blocks = as_u(v);
        else if (k == "model.rank") cfg.rank = as_u(v);
        else if (k == "model.alpha") cfg.alpha = as_d(v);
        else if (k == "train.epochs") cfg.epochs = as_u(v);
        else if (k == "train.batch_size") cfg.batch_size = as_u(v);
        else if (k == "train.lr") cfg.lr = as_d(v);
        else if (k == "train.weight_decay") cfg.weight_decay = as_d(v);
        else if (k == "train.lambda_cls") cfg.lambda_cls = as_d(v);
        else if (k == "train.dice_smooth") cfg.dice_smooth = as_d(v);
        else if (k == "anchor.c") cfg.c = as_d(v);
        else if (k == "anchor.xi") cfg.xi = as_d(v);
        else if (k == "anchor.lra") cfg.lra = as_b(v);
        else if (k == "anchor.restrict_to_lora_decoder")
            cfg.restrict_anchor_to_lora_decoder = as_b(v);
        else if (k == "pre_conditioning") cfg.pre_conditioning = as_b(v);
        else if (k == "eval_every") cfg.eval_every = as_u(v);
        else if (k == "out_dir") cfg.out_dir = v;
        else throw ConfigError("unknown config key '" + k + "'");
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// run record

struct RunRecord {
    std::string version = kVersionString;
    std::uint64_t seed = 0;
    nlohmann::json config_echo;
    std::map<std::string, AccuracyMatrix> matrices;   // keyed by metric name
    std::map<std::string, ClMetrics> cl;              // derived per metric
    std::vector<std::vector<double>> loss_curves;     // [task][epoch] mean loss
    std::vector<double> wall_clock_s;                 // per task, non-deterministic
};

// numeric-content equality; wall clock excluded by design
inline bool records_equal_numeric(const RunRecord& a, const RunRecord& b) {
    if (a.seed != b.seed || a.config_echo != b.config_echo) return false;
    if (a.matrices.size() != b.matrices.size() || a.loss_curves != b.loss_curves) return false;
    for (const auto& [name, ma] : a.matrices) {
        auto it = b.matrices.find(name);
        if (it == b.matrices.end()) return false;
        if (ma.values != it->second.values || ma.filled != it->second.filled) return false;
    }
    return true;
}

// comparison helper for resumed runs: rows strictly after `from_task` only
inline bool records_equal_from_task(const RunRecord& a, const RunRecord& b,
                                    std::size_t from_task) {
    for (const auto& [name, ma] : a.matrices) {
        auto it = b.matrices.find(name);
        if (it == b.matrices.end()) return false;
        const auto& mb = it->second;
        if (ma.tasks != mb.tasks) return false;
        for (std::size_t t = from_task; t < ma.tasks; ++t)
            for (std::size_t k = 0; k < ma.tasks; ++k) {
                if (ma.is_filled(t, k) != mb.is_filled(t, k)) return false;
                if (ma.is_filled(t, k) && ma.at(t, k) != mb.at(t, k)) return false;
            }
    }
    if (a.loss_curves.size() != b.loss_curves.size()) return false;
    for (std::size_t k = from_task; k < a.loss_curves.size(); ++k)
        if (a.loss_curves[k] != b.loss_curves[k]) return false;
    return true;
}

// ---------------------------------------------------------------------------
// the continual experiment

class Experiment {
public:
    Experiment(ExperimentConfig cfg, std::uint64_t seed)
        : cfg_(std::move(cfg)),
          seed_(seed),
          semantic_(protocol_is_semantic(cfg_.protocol)),
          schedule_(build_schedule(cfg_.protocol, cfg_.data, seed)),
          model_(make_model_config()),
          opt_(AdamWConfig{cfg_.lr, cfg_.weight_decay, 0.9, 0.999, 1e-8}),
          anchor_(AnchorConfig{cfg_.c, cfg_.xi}) {
        record_.seed = seed;
        record_.config_echo = config_to_json(cfg_);
        const std::size_t t_n = schedule_.tasks.size();
        for (const auto& name : metric_names()) record_.matrices.emplace(name, AccuracyMatrix(name, t_n));
        record_.loss_curves.assign(t_n, {});
        record_.wall_clock_s.assign(t_n, 0.0);
    }

    const ProtocolSchedule& schedule() const { return schedule_; }
    AvsModel& model() { return model_; }
    const RunRecord& record() const { return record_; }
    std::size_t completed_tasks() const { return completed_tasks_; }

    std::vector<std::string> metric_names() const {
        std::vector<std::string> names{"map", "maxf", "miou", "dice", "aupr"};
        if (semantic_) names.push_back("clsacc");
        return names;
    }

    // Runs tasks [completed, T). `checkpoint_dir` empty means no disk writes.
    RunRecord run(const std::string& checkpoint_dir = "") {
        const long live_baseline = Sample::live();
        for (std::size_t k = completed_tasks_; k < schedule_.tasks.size(); ++k) {
            auto t0 = std::chrono::steady_clock::now();
            train_task(k);
            if (cfg_.lra) anchor_.consolidate(model_.trainable_parameters());
            record_.wall_clock_s[k] =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            completed_tasks_ = k + 1;
            // exemplar-freedom inspection hook: no sample survives the boundary
            if (Sample::live() != live_baseline)
                throw ContractError("exemplar leak: " +
                                    std::to_string(Sample::live() - live_baseline) +
                                    " samples retained after task " + std::to_string(k));
            if (should_evaluate(k)) evaluate_row(k);
            if (!checkpoint_dir.empty()) save_checkpoint(checkpoint_path(checkpoint_dir, k));
        }
        finalize_cl_metrics();
        return record_;
    }

    // ---- checkpointing ------------------------------------------------------

    std::string checkpoint_path(const std::string& dir, std::size_t task) const {
        return (std::filesystem::path(dir) / (run_basename() + "_ckpt_task" +
                                              std::to_string(task) + ".bin"))
            .string();
    }

    std::string run_basename() const {
        std::ostringstream os;
        os << protocol_name(cfg_.protocol) << "_s" << seed_ << "_precond"
           << (cfg_.pre_conditioning ? 1 : 0) << "_lra" << (cfg_.lra ? 1 : 0);
        return os.str();
    }

    void save_checkpoint(const std::string& path) const {
        ckpt::Archive a;
        a.config_json = config_to_json(cfg_).dump();
        a.sections["params"] = model_.export_parameters();

        ckpt::TensorTable opt_m, opt_v;
        for (const auto& [name, slot] : opt_.slots()) {
            opt_m[name] = {Shape{slot.m.size()}, slot.m};
            opt_v[name] = {Shape{slot.v.size()}, slot.v};
        }
        a.sections["adamw.m"] = std::move(opt_m);
        a.sections["adamw.v"] = std::move(opt_v);

        ckpt::TensorTable an_a, an_o, an_p, an_s;
        for (const auto& [name, e] : anchor_.entries()) {
            an_a[name] = {Shape{e.anchor.size()}, e.anchor};
            an_o[name] = {Shape{e.omega.size()}, e.omega};
            an_p[name] = {Shape{e.path.size()}, e.path};
            an_s[name] = {Shape{e.start.size()}, e.start};
        }
        a.sections["anchor.anchor"] = std::move(an_a);
        a.sections["anchor.omega"] = std::move(an_o);
        a.sections["anchor.path"] = std::move(an_p);
        a.sections["anchor.start"] = std::move(an_s);

        for (const auto& [name, m] : record_.matrices) {
            ckpt::TensorTable t;
            t["values"] = {Shape{m.values.size()}, m.values};
            std::vector<double> filled(m.filled.begin(), m.filled.end());
            t["filled"] = {Shape{filled.size()}, filled};
            a.sections["matrix." + name] = std::move(t);
        }

        ckpt::TensorTable loss_tbl;
        for (std::size_t k = 0; k < record_.loss_curves.size(); ++k)
            loss_tbl["task" + std::to_string(k)] = {Shape{record_.loss_curves[k].size()},
                                                    record_.loss_curves[k]};
        a.sections["loss"] = std::move(loss_tbl);

        ckpt::TensorTable wall_tbl;
        wall_tbl["seconds"] = {Shape{record_.wall_clock_s.size()}, record_.wall_clock_s};
        a.sections["wall"] = std::move(wall_tbl);

        ckpt::TensorTable meta;
        ckpt::put_scalar(meta, "adamw.steps", double(opt_.steps()));
        ckpt::put_scalar(meta, "anchor.consolidated", anchor_.consolidated() ? 1.0 : 0.0);
        ckpt::put_scalar(meta, "completed_tasks", double(completed_tasks_));
        ckpt::put_scalar(meta, "seed", double(seed_));
        ckpt::put_scalar(meta, "head_classes", double(model_.class_head().classes()));
        a.sections["meta"] = std::move(meta);

        ckpt::save(a, path);
    }

    void load_checkpoint(const std::string& path) {
        ckpt::Archive a = ckpt::load(path);
        if (a.config_json != config_to_json(cfg_).dump())
            throw ConfigError("checkpoint config does not match the current configuration");
        const auto& meta = a.sections.at("meta");
        if (std::uint64_t(ckpt::get_scalar(meta, "seed")) != seed_)
            throw ConfigError("checkpoint seed does not match the requested seed");

        if (semantic_) {
            const std::size_t head = std::size_t(ckpt::get_scalar(meta, "head_classes"));
            if (head > 0) {
                model_.class_head().expand_to(head);
                rebuild_label_slots(std::size_t(ckpt::get_scalar(meta, "completed_tasks")));
            }
        }
        model_.load_parameters(a.sections.at("params"));

        opt_.slots().clear();
        for (const auto& [name, entry] : a.sections.at("adamw.m"))
            opt_.slots()[name].m = entry.second;
        for (const auto& [name, entry] : a.sections.at("adamw.v"))
            opt_.slots()[name].v = entry.second;
        opt_.set_steps(std::uint64_t(ckpt::get_scalar(meta, "adamw.steps")));

        anchor_.entries().clear();
        for (const auto& [name, entry] : a.sections.at("anchor.anchor"))
            anchor_.entries()[name].anchor = entry.second;
        for (const auto& [name, entry] : a.sections.at("anchor.omega"))
            anchor_.entries()[name].omega = entry.second;
        for (const auto& [name, entry] : a.sections.at("anchor.path"))
            anchor_.entries()[name].path = entry.second;
        for (const auto& [name, entry] : a.sections.at("anchor.start"))
            anchor_.entries()[name].start = entry.second;
        anchor_.set_consolidated(ckpt::get_scalar(meta, "anchor.consolidated") != 0.0);

        for (auto& [name, m] : record_.matrices) {
            const auto& t = a.sections.at("matrix." + name);
            m.values = t.at("values").second;
            const auto& filled = t.at("filled").second;
            m.filled.assign(filled.size(), 0);
            for (std::size_t i = 0; i < filled.size(); ++i)
                m.filled[i] = filled[i] != 0.0 ? 1 : 0;
        }
        const auto& loss_tbl = a.sections.at("loss");
        for (std::size_t k = 0; k < record_.loss_curves.size(); ++k)
            record_.loss_curves[k] = loss_tbl.at("task" + std::to_string(k)).second;
        record_.wall_clock_s = a.sections.at("wall").at("seconds").second;

        completed_tasks_ = std::size_t(ckpt::get_scalar(meta, "completed_tasks"));
    }

private:
    ModelConfig make_model_config() const {
        ModelConfig m;
        m.frame_h = cfg_.data.h;
        m.frame_w = cfg_.data.w;
        m.patch = cfg_.patch;
        m.d_v = cfg_.d_v;
        m.d_a = cfg_.d_a;
        m.d_raw = cfg_.data.d_raw;
        m.mlp_dim = cfg_.mlp_dim;
        m.encoder_blocks = cfg_.encoder_blocks;
        m.rank = cfg_.rank;
        m.alpha = cfg_.alpha;
        m.mode = semantic_ ? TaskMode::Semantic : TaskMode::Binary;
        m.pre_conditioning = cfg_.pre_conditioning;
        m.seed = mix_seed(seed_, "model-init");
        return m;
    }

    void rebuild_label_slots(std::size_t tasks_done) {
        label_slot_.clear();
        for (std::size_t k = 0; k < tasks_done; ++k)
            for (auto cls : schedule_.tasks[k].classes)
                label_slot_.emplace(cls, label_slot_.size());
    }

    void expand_head_for_task(std::size_t k) {
        if (!semantic_) return;
        for (auto cls : schedule_.tasks[k].classes)
            label_slot_.emplace(cls, label_slot_.size());
        model_.class_head().expand_to(label_slot_.size());
    }

    bool should_evaluate(std::size_t k) const {
        if (k + 1 == schedule_.tasks.size()) return true;  // always after the last task
        return ((k + 1) % cfg_.eval_every) == 0;
    }

    void train_task(std::size_t k) {
        expand_head_for_task(k);
        auto trainables = model_.trainable_parameters();
        if (cfg_.lra)
            anchor_.track(model_.anchored_parameters(cfg_.restrict_anchor_to_lora_decoder));

        auto train = make_train_samples(schedule_, k);
        std::vector<std::size_t> order(train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

        LossConfig loss_cfg{cfg_.lambda_cls, cfg_.dice_smooth};
        auto& curve = record_.loss_curves[k];
        curve.clear();

        for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
            Rng shuffle_rng(mix_seed(seed_, "shuffle", k, epoch));
            shuffle_rng.shuffle(order);
            double epoch_loss = 0.0;
            std::size_t batches = 0;
            for (std::size_t cursor = 0; cursor < order.size(); cursor += cfg_.batch_size) {
                const std::size_t take = std::min(cfg_.batch_size, order.size() - cursor);
                AdamW::zero_grad(trainables);

                std::vector<Tensor> segs, clses;
                for (std::size_t b = 0; b < take; ++b) {
                    const Sample& s = train[order[cursor + b]];
                    auto out = model_.forward(s.frames, s.audio);
                    std::vector<Tensor> masks;
                    masks.reserve(s.frames_t);
                    for (std::size_t t = 0; t < s.frames_t; ++t) {
                        std::vector<double> m(s.masks.begin() + long(t * s.h * s.w),
                                              s.masks.begin() + long((t + 1) * s.h * s.w));
                        masks.push_back(Tensor::from_data({s.h, s.w}, std::move(m)));
                    }
                    segs.push_back(seg_loss(out.mask_logits, masks, s.supervised, loss_cfg));
                    if (semantic_ && s.class_label.has_value())
                        clses.push_back(
                            cls_loss(*out.class_logits, label_slot_.at(*s.class_label)));
                }

                Tensor loss = batch_mean(segs);
                if (!clses.empty())
                    loss = add(loss, scale(batch_mean(clses), cfg_.lambda_cls));
                if (cfg_.lra && cfg_.c > 0.0 && anchor_.consolidated())
                    loss = add(loss, anchor_.stability_loss(trainables));

                const double loss_value = loss.item();
                if (!std::isfinite(loss_value))
                    throw TrainingError("non-finite loss at task " + std::to_string(k) +
                                        ", epoch " + std::to_string(epoch));
                backward(loss);
                auto deltas = opt_.step(trainables);
                if (cfg_.lra) anchor_.accumulate(trainables, deltas);

                epoch_loss += loss_value;
                ++batches;
            }
            curve.push_back(batches ? epoch_loss / double(batches) : 0.0);
        }
    }

    void evaluate_row(std::size_t k) {
        const std::size_t t_n = schedule_.tasks.size();
        for (std::size_t e = 0; e <= std::min(k + 1, t_n - 1); ++e) {
            auto test = make_test_samples(schedule_, e);
            double sum_ap = 0, sum_maxf = 0, sum_iou = 0, sum_dice = 0, sum_aupr = 0;
            std::size_t scored = 0, cls_total = 0, cls_correct = 0;
            for (const auto& s : test) {
                auto out = model_.forward(s.frames, s.audio);
                SegScores acc{};
                std::size_t frames_scored = 0;
                for (std::size_t t = 0; t < s.frames_t; ++t) {
                    Tensor conf = sigmoid(out.mask_logits[t]);
                    std::span<const std::uint8_t> target(s.masks.data() + t * s.h * s.w,
                                                         s.h * s.w);
                    bool any = false;
                    for (auto m : target) any |= m != 0;
                    if (!any) continue;  // AP undefined; skip the frame
                    auto scores = score_confidences(conf.values(), target);
                    acc.ap += scores.ap;
                    acc.maxf += scores.maxf;
                    acc.iou += scores.iou;
                    acc.dice += scores.dice;
                    acc.aupr += scores.aupr;
                    ++frames_scored;
                }
                if (frames_scored == 0) continue;
                sum_ap += acc.ap / double(frames_scored);
                sum_maxf += acc.maxf / double(frames_scored);
                sum_iou += acc.iou / double(frames_scored);
                sum_dice += acc.dice / double(frames_scored);
                sum_aupr += acc.aupr / double(frames_scored);
                ++scored;

                // classification accuracy; the one-ahead task has no head rows yet
                if (semantic_ && s.class_label.has_value() && e <= k) {
                    std::vector<std::size_t> allowed;
                    if (cfg_.protocol == Protocol::TIL) {
                        for (auto cls : schedule_.tasks[e].classes)
                            allowed.push_back(label_slot_.at(cls));
                    } else {
                        for (std::size_t i = 0; i < label_slot_.size(); ++i) allowed.push_back(i);
                    }
                    const auto& logits = *out.class_logits;
                    std::size_t best = allowed[0];
                    for (auto slot : allowed)
                        if (logits.values()[slot] > logits.values()[best]) best = slot;
                    ++cls_total;
                    if (best == label_slot_.at(*s.class_label)) ++cls_correct;
                }
            }
            if (scored == 0)
                throw ContractError("evaluation of task " + std::to_string(e) +
                                    " scored no samples");
            record_.matrices.at("map").set(k, e, sum_ap / double(scored));
            record_.matrices.at("maxf").set(k, e, sum_maxf / double(scored));
            record_.matrices.at("miou").set(k, e, sum_iou / double(scored));
            record_.matrices.at("dice").set(k, e, sum_dice / double(scored));
            record_.matrices.at("aupr").set(k, e, sum_aupr / double(scored));
            if (semantic_ && cls_total > 0)
                record_.matrices.at("clsacc").set(k, e, double(cls_correct) / double(cls_total));
        }
    }

    void finalize_cl_metrics() {
        record_.cl.clear();
        for (const auto& [name, m] : record_.matrices) record_.cl[name] = cl_metrics(m);
    }

    ExperimentConfig cfg_;
    std::uint64_t seed_;
    bool semantic_;
    ProtocolSchedule schedule_;
    AvsModel model_;
    AdamW opt_;
    AnchorState anchor_;
    RunRecord record_;
    std::map<std::size_t, std::size_t> label_slot_;
    std::size_t completed_tasks_ = 0;
};

// ---------------------------------------------------------------------------
// top-level entry points

inline RunRecord run_experiment(const ExperimentConfig& cfg, std::uint64_t seed,
                                const std::string& checkpoint_dir = "",
                                const std::string& resume_from = "") {
    Experiment exp(cfg, seed);
    if (!resume_from.empty()) exp.load_checkpoint(resume_from);
    return exp.run(checkpoint_dir);
}

// ---------------------------------------------------------------------------
// result emission

inline nlohmann::json cl_to_json(const ClMetrics& m) {
    nlohmann::json j{{"la", m.la}, {"aa", m.aa}};
    if (m.forgetting.has_value()) j["forgetting"] = *m.forgetting;
    if (m.bwt.has_value()) j["bwt"] = *m.bwt;
    if (m.fwt.has_value()) j["fwt"] = *m.fwt;
    return j;
}

inline nlohmann::json record_to_json(const RunRecord& r) {
    nlohmann::json matrices = nlohmann::json::object();
    for (const auto& [name, m] : r.matrices) {
        matrices[name] = {{"tasks", m.tasks},
                          {"values", m.values},
                          {"filled", m.filled},
                          {"cl", cl_to_json(r.cl.at(name))}};
    }
    return {{"version", r.version},
            {"seed", r.seed},
            {"config", r.config_echo},
            {"matrices", matrices},
            {"loss_curves", r.loss_curves},
            {"wall_clock_s", r.wall_clock_s}};
}

inline RunRecord record_from_json(const nlohmann::json& j) {
    RunRecord r;
    r.version = j.at("version").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_echo = j.at("config");
    for (const auto& [name, jm] : j.at("matrices").items()) {
        AccuracyMatrix m(name, jm.at("tasks").get<std::size_t>());
        m.values = jm.at("values").get<std::vector<double>>();
        m.filled = jm.at("filled").get<std::vector<std::uint8_t>>();
        r.matrices.emplace(name, std::move(m));
        r.cl[name] = cl_metrics(r.matrices.at(name));
    }
    r.loss_curves = j.at("loss_curves").get<std::vector<std::vector<double>>>();
    r.wall_clock_s = j.at("wall_clock_s").get<std::vector<double>>();
    return r;
}

// writes matrix CSVs, the heatmap-ready long format, and the record JSON;
// file names embed protocol, seed and ablation flags
inline std::vector<std::string> emit_results(const RunRecord& r, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (!fs::exists(dir)) throw IoError("emit_results: cannot create directory " + dir);

    std::ostringstream base;
    base << r.config_echo.at("protocol").get<std::string>() << "_s" << r.seed << "_precond"
         << (r.config_echo.at("pre_conditioning").get<bool>() ? 1 : 0) << "_lra"
         << (r.config_echo.at("anchor").at("lra").get<bool>() ? 1 : 0);

    std::vector<std::string> written;
    auto write_file = [&](const std::string& name, const std::string& content) {
        auto path = (fs::path(dir) / name).string();
        std::ofstream os(path);
        if (!os) throw IoError("emit_results: cannot write " + path);
        os << content;
        written.push_back(path);
    };

    for (const auto& [name, m] : r.matrices) {
        write_file(base.str() + "_matrix_" + name + ".csv", matrix_to_csv(m));
        write_file(base.str() + "_heatmap_" + name + ".csv", matrix_to_long_csv(m));
    }
    write_file(base.str() + "_record.json", record_to_json(r).dump(2) + "\n");
    return written;
}

// ---------------------------------------------------------------------------
// ablation suite: the four (pre-conditioning x anchoring) variants under
// shared seeds, summarized by Avg mAP / Avg For / Avg F1 / Avg mIoU

struct AblationVariant {
    std::string name;
    bool pre_conditioning;
    bool lra;
};

inline const std::array<AblationVariant, 4>& ablation_variants() {
    static const std::array<AblationVariant, 4> v{{{"full", true, true},
                                                   {"no_precond", false, true},
                                                   {"no_lra", true, false},
                                                   {"neither", false, false}}};
    return v;
}

struct AblationSummaryRow {
    std::string variant;
    double avg_map = 0.0, avg_forgetting = 0.0, avg_maxf = 0.0, avg_miou = 0.0;
};

struct AblationResult {
    // records[variant][seed index]
    std::array<std::vector<RunRecord>, 4> records;
    std::vector<std::uint64_t> seeds;
    std::array<AblationSummaryRow, 4> summary;
};

inline double record_avg_map(const RunRecord& r) { return r.cl.at("map").aa; }
inline double record_avg_forgetting(const RunRecord& r) {
    return r.cl.at("map").forgetting.value_or(0.0);
}

inline AblationResult run_ablation_suite(const ExperimentConfig& base,
                                         std::span<const std::uint64_t> seeds,
                                         const std::string& dir = "") {
    AblationResult res;
    res.seeds.assign(seeds.begin(), seeds.end());
    for (std::size_t vi = 0; vi < ablation_variants().size(); ++vi) {
        const auto& variant = ablation_variants()[vi];
        ExperimentConfig cfg = base;
        cfg.pre_conditioning = variant.pre_conditioning;
        cfg.lra = variant.lra;
        AblationSummaryRow row;
        row.variant = variant.name;
        for (auto seed : seeds) {
            RunRecord r = run_experiment(cfg, seed);
            row.avg_map += record_avg_map(r);
            row.avg_forgetting += record_avg_forgetting(r);
            row.avg_maxf += r.cl.at("maxf").aa;
            row.avg_miou += r.cl.at("miou").aa;
            if (!dir.empty()) emit_results(r, dir);
            res.records[vi].push_back(std::move(r));
        }
        const double n = double(seeds.size());
        row.avg_map /= n;
        row.avg_forgetting /= n;
        row.avg_maxf /= n;
        row.avg_miou /= n;
        res.summary[vi] = row;
    }
    if (!dir.empty()) {
        std::ofstream os(std::filesystem::path(dir) / "ablation_table.csv");
        if (!os) throw IoError("ablation: cannot write summary table");
        os << "variant,pre_conditioning,lra,avg_map,avg_forgetting,avg_maxf,avg_miou\n";
        os.precision(17);
        for (std::size_t vi = 0; vi < 4; ++vi) {
            const auto& v = ablation_variants()[vi];
            const auto& s = res.summary[vi];
            os << v.name << ',' << (v.pre_conditioning ? 1 : 0) << ',' << (v.lra ? 1 : 0) << ','
               << s.avg_map << ',' << s.avg_forgetting << ',' << s.avg_maxf << ',' << s.avg_miou
               << '\n';
        }
    }
    return res;
}

}  // namespace clavs
