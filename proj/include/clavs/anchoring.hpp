#pragma once

// AdamW with decoupled weight decay, and the low-rank anchoring state: an
// online per-parameter path integral of -g * dtheta, consolidated into
// non-negative importances at task boundaries, feeding a quadratic penalty
// that holds adapted weights near their previous-task anchors.

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "clavs/nn.hpp"
#include "clavs/tensor.hpp"

namespace clavs {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct AdamWConfig {
    double lr = 1e-3;
    double weight_decay = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AdamW {
public:
    struct Slot {
        std::vector<double> m, v;
    };

    AdamW() = default;
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    const AdamWConfig& config() const { return cfg_; }
    std::uint64_t steps() const { return t_; }

    // One update over the given parameters, reading gradients off the tensors.
    // Returns the realized per-parameter deltas (Adam direction plus decay),
    // aligned with the input order, for importance tracking.
    std::vector<std::vector<double>> step(std::span<const NamedParam> params) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        std::vector<std::vector<double>> deltas;
        deltas.reserve(params.size());
        for (const auto& p : params) {
            auto theta = const_cast<Tensor&>(p.tensor).values_mut();
            auto g = p.tensor.grad();
            Slot& slot = slots_[p.name];
            // grown parameters (expanded class head) keep their prefix state
            if (slot.m.size() < theta.size()) {
                slot.m.resize(theta.size(), 0.0);
                slot.v.resize(theta.size(), 0.0);
            }
            std::vector<double> delta(theta.size());
            for (std::size_t i = 0; i < theta.size(); ++i) {
                if (std::isnan(g[i]))
                    throw TrainingError("NaN gradient in parameter " + p.name);
                slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g[i];
                slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                const double mhat = slot.m[i] / bc1;
                const double vhat = slot.v[i] / bc2;
                double d = -cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
                d -= cfg_.lr * cfg_.weight_decay * theta[i];
                theta[i] += d;
                delta[i] = d;
            }
            deltas.push_back(std::move(delta));
        }
        return deltas;
    }

    static void zero_grad(std::span<const NamedParam> params) {
        for (const auto& p : params) const_cast<Tensor&>(p.tensor).zero_grad();
    }

    // checkpoint access
    std::map<std::string, Slot>& slots() { return slots_; }
    const std::map<std::string, Slot>& slots() const { return slots_; }
    void set_steps(std::uint64_t t) { t_ = t; }

private:
    AdamWConfig cfg_;
    std::uint64_t t_ = 0;
    std::map<std::string, Slot> slots_;
};

// ---------------------------------------------------------------------------

struct AnchorConfig {
    double c = 0.3;    // penalty strength
    double xi = 0.1;   // displacement damping in the consolidation normalizer
};

class AnchorState {
public:
    struct Entry {
        std::vector<double> anchor;     // theta* at last consolidation
        std::vector<double> omega;      // importances, >= 0
        std::vector<double> path;       // running accumulator of -g * dtheta
        std::vector<double> start;      // theta at task start
    };

    AnchorState() = default;
    explicit AnchorState(AnchorConfig cfg) : cfg_(cfg) {}

    const AnchorConfig& config() const { return cfg_; }
    bool consolidated() const { return consolidated_; }

    // Begins tracking the given parameters (idempotent per name). Snapshot of
    // theta becomes the task-start reference for new entries.
    void track(std::span<const NamedParam> params) {
        for (const auto& p : params) {
            auto [it, fresh] = entries_.try_emplace(p.name);
            if (fresh) {
                auto v = p.tensor.values();
                it->second.anchor.assign(v.begin(), v.end());
                it->second.omega.assign(v.size(), 0.0);
                it->second.path.assign(v.size(), 0.0);
                it->second.start.assign(v.begin(), v.end());
            }
        }
    }

    // Accumulates path integrals for tracked parameters; grads are read off
    // the tensors, deltas come from the optimizer step they belong to.
    void accumulate(std::span<const NamedParam> params,
                    const std::vector<std::vector<double>>& deltas) {
        if (params.size() != deltas.size())
            throw ContractError("anchor accumulate: " + std::to_string(params.size()) +
                                " params vs " + std::to_string(deltas.size()) + " deltas");
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            auto it = entries_.find(params[pi].name);
            if (it == entries_.end()) continue;
            auto g = params[pi].tensor.grad();
            const auto& d = deltas[pi];
            if (g.size() != d.size() || g.size() != it->second.path.size())
                throw ContractError("anchor accumulate: size mismatch for " + params[pi].name);
            for (std::size_t i = 0; i < d.size(); ++i) it->second.path[i] += -g[i] * d[i];
        }
    }

    // Task-boundary consolidation:
    //   omega += max(0, path) / ((theta - start)^2 + xi); anchor = start = theta
    void consolidate(std::span<const NamedParam> params) {
        for (const auto& p : params) {
            auto it = entries_.find(p.name);
            if (it == entries_.end()) continue;
            Entry& e = it->second;
            auto v = p.tensor.values();
            for (std::size_t i = 0; i < v.size(); ++i) {
                const double disp = v[i] - e.start[i];
                const double gain = std::max(0.0, e.path[i]) / (disp * disp + cfg_.xi);
                e.omega[i] += gain;
                e.anchor[i] = v[i];
                e.start[i] = v[i];
                e.path[i] = 0.0;
            }
        }
        consolidated_ = true;
    }

    // Differentiable penalty (c/2) * sum omega_i (theta_i - anchor_i)^2.
    // Importances and anchors enter as constants; identically zero before the
    // first consolidation.
    Tensor stability_loss(std::span<const NamedParam> params) const {
        if (!consolidated_) return Tensor::scalar(0.0);
        Tensor acc;
        for (const auto& p : params) {
            auto it = entries_.find(p.name);
            if (it == entries_.end()) continue;
            const Entry& e = it->second;
            Tensor anchor = Tensor::from_data(p.tensor.shape(), e.anchor);
            Tensor omega = Tensor::from_data(p.tensor.shape(), e.omega);
            Tensor term = reduce_sum(mul(omega, square(sub(p.tensor, anchor))));
            acc = acc.defined() ? add(acc, term) : term;
        }
        if (!acc.defined()) return Tensor::scalar(0.0);
        return scale(acc, 0.5 * cfg_.c);
    }

    std::map<std::string, Entry>& entries() { return entries_; }
    const std::map<std::string, Entry>& entries() const { return entries_; }
    void set_consolidated(bool v) { consolidated_ = v; }

private:
    AnchorConfig cfg_;
    bool consolidated_ = false;
    std::map<std::string, Entry> entries_;
};

}  // namespace clavs
