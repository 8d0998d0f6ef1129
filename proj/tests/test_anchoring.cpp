#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "clavs/anchoring.hpp"
#include "testutil.hpp"

using clavs::NamedParam;
using clavs::Tensor;

namespace {

std::vector<NamedParam> one_param(const Tensor& t, const std::string& name = "p") {
    return {{name, t}};
}

}  // namespace

TEST_CASE("adamw first step with unit gradient moves by about -lr") {
    clavs::AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    clavs::AdamW opt(cfg);

    Tensor p = Tensor::from_data({1}, {0.5}, true);
    auto params = one_param(p);
    clavs::backward(clavs::reduce_sum(p));  // gradient = 1
    auto deltas = opt.step(params);

    // bias-corrected mhat/sqrt(vhat) is exactly 1 on the first step
    double expected = -cfg.lr / (1.0 + cfg.eps);
    REQUIRE(std::abs(deltas[0][0] - expected) < 1e-15);
    REQUIRE(std::abs(p.values()[0] - (0.5 + expected)) < 1e-15);
}

TEST_CASE("adamw zero gradient and zero decay is a no-op") {
    clavs::AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    clavs::AdamW opt(cfg);
    Tensor p = Tensor::from_data({3}, {1.0, -2.0, 0.25}, true);
    auto params = one_param(p);
    p.zero_grad();
    auto deltas = opt.step(params);
    for (double d : deltas[0]) REQUIRE(d == 0.0);
    REQUIRE(p.values()[0] == 1.0);
}

TEST_CASE("adamw decoupled decay alone multiplies by (1 - lr*wd)") {
    clavs::AdamWConfig cfg;
    clavs::AdamW opt(cfg);
    Tensor p = Tensor::from_data({2}, {2.0, -4.0}, true);
    auto params = one_param(p);
    p.zero_grad();
    opt.step(params);
    const double shrink = 1.0 - cfg.lr * cfg.weight_decay;
    REQUIRE(std::abs(p.values()[0] - 2.0 * shrink) < 1e-15);
    REQUIRE(std::abs(p.values()[1] - (-4.0) * shrink) < 1e-15);
}

TEST_CASE("adamw rejects NaN gradients with the parameter name") {
    clavs::AdamW opt;
    Tensor p = Tensor::from_data({1}, {1.0}, true);
    auto params = one_param(p, "enc.block0.attn_q.lora_a");
    p.zero_grad();
    const_cast<double&>(p.grad()[0]);  // force allocation
    p.node()->grad[0] = std::nan("");
    REQUIRE_THROWS_MATCHES(opt.step(params), clavs::TrainingError,
                           Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring(
                               "enc.block0.attn_q.lora_a")));
}

TEST_CASE("importance accumulation sign arithmetic") {
    clavs::AnchorState anchor;
    Tensor p = Tensor::from_data({1}, {1.0}, true);
    auto params = one_param(p);
    anchor.track(params);

    p.zero_grad();
    p.node()->ensure_grad();
    p.node()->grad[0] = 2.0;
    anchor.accumulate(params, {{-0.01}});
    REQUIRE(std::abs(anchor.entries().at("p").path[0] - 0.02) < 1e-15);

    // zero delta leaves the accumulator alone
    anchor.accumulate(params, {{0.0}});
    REQUIRE(std::abs(anchor.entries().at("p").path[0] - 0.02) < 1e-15);
}

TEST_CASE("consolidation normalizes the path by squared displacement") {
    clavs::AnchorConfig cfg;
    cfg.xi = 0.01;
    clavs::AnchorState anchor(cfg);
    Tensor p = Tensor::from_data({1}, {0.0}, true);
    auto params = one_param(p);
    anchor.track(params);

    anchor.entries().at("p").path[0] = 0.02;
    p.values_mut()[0] = 0.1;  // displacement 0.1 from start 0.0
    anchor.consolidate(params);

    REQUIRE(std::abs(anchor.entries().at("p").omega[0] - 1.0) < 1e-12);
    REQUIRE(anchor.entries().at("p").anchor[0] == 0.1);
    REQUIRE(anchor.entries().at("p").start[0] == 0.1);
    REQUIRE(anchor.entries().at("p").path[0] == 0.0);
}

TEST_CASE("consolidation without training keeps omega, moves the anchor") {
    clavs::AnchorState anchor;
    Tensor p = Tensor::from_data({2}, {0.3, -0.7}, true);
    auto params = one_param(p);
    anchor.track(params);
    anchor.consolidate(params);
    REQUIRE(anchor.entries().at("p").omega[0] == 0.0);
    REQUIRE(anchor.entries().at("p").omega[1] == 0.0);
    REQUIRE(anchor.entries().at("p").anchor[0] == 0.3);
}

TEST_CASE("negative path integrals clamp to zero contribution") {
    clavs::AnchorState anchor;
    Tensor p = Tensor::from_data({1}, {0.0}, true);
    auto params = one_param(p);
    anchor.track(params);
    anchor.entries().at("p").path[0] = -5.0;
    p.values_mut()[0] = 0.2;
    anchor.consolidate(params);
    REQUIRE(anchor.entries().at("p").omega[0] == 0.0);
}

TEST_CASE("omega never decreases across consolidations") {
    clavs::Rng rng(3);
    clavs::AnchorState anchor;
    Tensor p = Tensor::from_data({4}, {0, 0, 0, 0}, true);
    auto params = one_param(p);
    anchor.track(params);
    std::vector<double> prev(4, 0.0);
    for (int round = 0; round < 5; ++round) {
        for (std::size_t i = 0; i < 4; ++i) {
            anchor.entries().at("p").path[i] = rng.uniform(-1.0, 1.0);
            p.values_mut()[i] += rng.uniform(-0.3, 0.3);
        }
        anchor.consolidate(params);
        for (std::size_t i = 0; i < 4; ++i) {
            REQUIRE(anchor.entries().at("p").omega[i] >= prev[i]);
            REQUIRE(anchor.entries().at("p").omega[i] >= 0.0);
            prev[i] = anchor.entries().at("p").omega[i];
        }
    }
}

TEST_CASE("stability loss is zero before consolidation and at the anchor") {
    clavs::AnchorState anchor;
    Tensor p = Tensor::from_data({2}, {1.0, 2.0}, true);
    auto params = one_param(p);
    anchor.track(params);
    REQUIRE(anchor.stability_loss(params).item() == 0.0);

    anchor.entries().at("p").path = {0.5, 0.5};
    anchor.consolidate(params);
    // theta == theta*: penalty is exactly zero
    REQUIRE(anchor.stability_loss(params).item() == 0.0);
}

TEST_CASE("stability loss hand value") {
    clavs::AnchorConfig cfg;
    cfg.c = 0.3;
    clavs::AnchorState anchor(cfg);
    Tensor p = Tensor::from_data({1}, {0.0}, true);
    auto params = one_param(p);
    anchor.track(params);
    anchor.consolidate(params);
    anchor.entries().at("p").omega[0] = 1.0;
    p.values_mut()[0] = 0.2;
    // (c/2) * omega * 0.2^2 = 0.15 * 0.04
    REQUIRE(std::abs(anchor.stability_loss(params).item() - 0.006) < 1e-15);
}

TEST_CASE("stability gradient is c * omega * (theta - anchor)") {
    clavs::Rng rng(7);
    clavs::AnchorConfig cfg;
    cfg.c = 0.3;
    clavs::AnchorState anchor(cfg);
    Tensor p = testutil::random_tensor({5}, rng, true);
    auto params = one_param(p);
    anchor.track(params);
    anchor.consolidate(params);
    auto& e = anchor.entries().at("p");
    for (auto& w : e.omega) w = rng.uniform(0.0, 3.0);
    for (auto& v : p.values_mut()) v += rng.uniform(-0.5, 0.5);

    p.zero_grad();
    clavs::backward(anchor.stability_loss(params));
    for (std::size_t i = 0; i < 5; ++i) {
        double analytic = cfg.c * e.omega[i] * (p.values()[i] - e.anchor[i]);
        REQUIRE(std::abs(p.grad()[i] - analytic) < 1e-10);
    }

    auto res = testutil::check_gradients([&]() { return anchor.stability_loss(params); }, {p});
    REQUIRE(res.max_rel_err < 1e-6);
}

TEST_CASE("path integral approximates the loss decrease on a quadratic") {
    // f(theta) = theta^2 / 2; gradient descent from 1.0 to near 0 makes the
    // accumulated -g * dtheta track f(start) - f(end)
    clavs::AdamWConfig ocfg;
    ocfg.lr = 1e-3;
    ocfg.weight_decay = 0.0;
    clavs::AdamW opt(ocfg);
    clavs::AnchorState anchor;

    Tensor p = Tensor::from_data({1}, {1.0}, true);
    auto params = one_param(p);
    anchor.track(params);

    for (int it = 0; it < 4000; ++it) {
        clavs::AdamW::zero_grad(params);
        Tensor loss = clavs::scale(clavs::reduce_sum(clavs::square(p)), 0.5);
        clavs::backward(loss);
        auto deltas = opt.step(params);
        anchor.accumulate(params, deltas);
    }
    const double f_start = 0.5;
    const double f_end = 0.5 * p.values()[0] * p.values()[0];
    const double drop = f_start - f_end;
    const double path = anchor.entries().at("p").path[0];
    REQUIRE(std::abs(path - drop) < 0.1 * drop);
}
