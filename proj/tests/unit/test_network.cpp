#include <doctest.h>

#include <cmath>
#include <random>

#include "drouter/adamw.hpp"
#include "drouter/error.hpp"
#include "drouter/features.hpp"
#include "drouter/network.hpp"
#include "drouter/trainer.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace drouter;
using doctest::Approx;

namespace {

CohortTable table_with_vcdr(std::vector<double> vcdr) {
    CohortTable t;
    t.experts = 2;
    std::mt19937_64 gen(3);
    for (double v : vcdr) {
        auto s = testkit::make_state(gen, 2);
        s.vcdr = v;
        s.quality_risk = 0.25;  // constant column
        s.sync_inputs_from_raw();
        t.rows.push_back(s);
    }
    return t;
}

Architecture small_arch(std::size_t m) {
    Architecture a;
    a.experts = m;
    a.branch = 4;
    a.fuse = 6;
    a.trunk = 5;
    return a;
}

}  // namespace

TEST_CASE("feature standardization uses population statistics and freezes them") {
    const auto train = table_with_vcdr({1.0, 2.0, 3.0});
    FeatureStats stats;
    const auto z = standardize_features(train, std::nullopt, &stats);
    const double sd = std::sqrt(2.0 / 3.0);
    CHECK(stats.mean[in_vcdr] == Approx(2.0));
    CHECK(stats.stddev[in_vcdr] == Approx(sd).epsilon(1e-12));
    CHECK(z.rows[2].inputs[in_vcdr] == Approx(1.0 / sd).epsilon(1e-12));
    // Constant column: centered to zero, floored std, warning recorded.
    for (const auto& r : z.rows) CHECK(r.inputs[in_quality_risk] == 0.0);
    CHECK(stats.stddev[in_quality_risk] == kFeatureStdFloor);
    CHECK_FALSE(stats.warnings.empty());
    // Raw columns stay untouched; applying stats to another split keeps them.
    CHECK(z.rows[2].vcdr == 3.0);
    const FeatureStats before = stats;
    const auto test = standardize_features(table_with_vcdr({5.0}), stats);
    CHECK(test.rows[0].inputs[in_vcdr] == Approx(3.0 / sd).epsilon(1e-12));
    CHECK(stats.mean == before.mean);
    CHECK(stats.stddev == before.stddev);
}

TEST_CASE("router state from the structural head") {
    std::mt19937_64 gen(1);
    auto s = testkit::make_state(gen, 3);
    RouterParams p(small_arch(3));
    auto r = build_router_state(s, p);
    CHECK(r.p_str == 0.5);
    CHECK(r.r_str[0] == 0.0);
    CHECK(r.r_str[1] == Approx(std::abs(s.prob_1 - 0.5)));
    CHECK(r.r_risk[0] == s.inputs[in_vim_risk_z]);
    CHECK(r.r_risk[2] == s.inputs[in_uncertainty]);

    s.inputs[in_vcdr] = 0.8;
    s.inputs[in_acdr] = 0.6;
    p.block(Block::str_head_w)[0] = 2.0;
    p.block(Block::str_head_w)[1] = 1.0;
    p.block(Block::str_head_b)[0] = -1.0;
    r = build_router_state(s, p);
    CHECK(r.p_str == Approx(0.768525).epsilon(1e-6));
    CHECK(r.r_str[0] == Approx(0.537049).epsilon(1e-6));
    s.prob_1 = r.p_str;
    CHECK(build_router_state(s, p).r_str[1] == 0.0);
}

TEST_CASE("forward pass invariants") {
    std::mt19937_64 gen(7);
    const auto arch = small_arch(6);
    for (int trial = 0; trial < 300; ++trial) {
        const auto p = RouterParams::initialize(arch, gen());
        auto s = testkit::make_state(gen, 6, trial % 10 == 0 ? 0.0 : 0.5);
        CounterRng rng(9, StreamDomain::gate_noise, trial, 0);
        const auto t = policy_forward(s, p, PolicyTemperatures{}, rng);
        double sum = 0.0;
        for (double x : t.policy.action_probs) sum += x;
        CHECK(sum == Approx(1.0).epsilon(1e-12));
        for (std::size_t j = 0; j < 6; ++j) {
            if (!s.mask.feasible(j)) {
                CHECK(t.policy.action_probs[j + 1] == 0.0);
                CHECK(t.policy.alloc[j] == 0.0);
            }
        }
        if (s.mask.empty()) {
            CHECK(t.policy.defer_mass == 0.0);
            CHECK(t.policy.action_probs[0] == 1.0);
        }
    }
}

TEST_CASE("identical params and counters give bit-identical traces") {
    std::mt19937_64 gen(8);
    const auto p = RouterParams::initialize(small_arch(4), 5);
    const auto s = testkit::make_state(gen, 4, 0.9);
    CounterRng a(1, StreamDomain::gate_noise, 2, 3), b(1, StreamDomain::gate_noise, 2, 3);
    const auto ta = policy_forward(s, p, PolicyTemperatures{}, a);
    const auto tb = policy_forward(s, p, PolicyTemperatures{}, b);
    CHECK(ta.policy.action_probs == tb.policy.action_probs);
    CHECK(ta.gate.noise == tb.gate.noise);
    CHECK(ta.fused == tb.fused);
}

TEST_CASE("analytic gradient matches finite differences on random single cases") {
    std::mt19937_64 gen(21);
    for (int trial = 0; trial < 10; ++trial) {
        auto c = testkit::random_single_case(gen, small_arch(5));
        const auto r = testkit::check_gradient(c);
        CHECK(r.failed == 0);
        CHECK(static_cast<double>(r.rel_ok) >= 0.95 * static_cast<double>(r.coords));
    }
}

TEST_CASE("gate and allocation rows of infeasible experts get no gradient") {
    std::mt19937_64 gen(5);
    const auto arch = small_arch(5);
    auto c = testkit::random_single_case(gen, arch);
    c.state.expert_labels[1] = kLabelMissing;
    c.state.sync_mask_from_labels();
    const BatchItem item{&c.state, c.key, 0};
    c.ctx.prior = nullptr;
    const auto bg = batch_gradient(c.params, std::span<const BatchItem>(&item, 1), c.ctx, c.al, c.temps, c.seed,
                                   c.epoch, Execution::serial);
    const auto& L = c.params.layout();
    for (Block b : {Block::gate_w, Block::alloc_w}) {
        const std::size_t off = L.offset[static_cast<std::size_t>(b)];
        for (std::size_t k = 0; k < arch.trunk; ++k) CHECK(bg.grad[off + 1 * arch.trunk + k] == 0.0);
    }
    CHECK(bg.grad[L.offset[static_cast<std::size_t>(Block::gate_b)] + 1] == 0.0);
    CHECK(bg.grad[L.offset[static_cast<std::size_t>(Block::alloc_b)] + 1] == 0.0);
}

TEST_CASE("permuting experts permutes the allocation and leaves the objective unchanged") {
    std::mt19937_64 gen(17);
    const auto arch = small_arch(4);
    const std::vector<std::size_t> perm{2, 0, 3, 1};  // new j  <- old perm[j]
    for (int trial = 0; trial < 20; ++trial) {
        const auto p = RouterParams::initialize(arch, gen());
        auto s = testkit::make_state(gen, 4, 0.8);
        auto pp = p;
        auto sp = s;
        for (std::size_t j = 0; j < 4; ++j) {
            sp.expert_labels[j] = s.expert_labels[perm[j]];
            for (Block w : {Block::gate_w, Block::alloc_w}) {
                for (std::size_t k = 0; k < arch.trunk; ++k)
                    pp.block(w)[j * arch.trunk + k] = p.block(w)[perm[j] * arch.trunk + k];
            }
            pp.block(Block::gate_b)[j] = p.block(Block::gate_b)[perm[j]];
            pp.block(Block::alloc_b)[j] = p.block(Block::alloc_b)[perm[j]];
        }
        sp.sync_mask_from_labels();
        std::vector<double> noise(4), noisep(4);
        CounterRng nrng(gen(), StreamDomain::test);
        for (std::size_t j = 0; j < 4; ++j) noise[j] = nrng.logistic();
        for (std::size_t j = 0; j < 4; ++j) noisep[j] = noise[perm[j]];
        const auto t = forward(p, s, PolicyTemperatures{}, noise);
        const auto tp = forward(pp, sp, PolicyTemperatures{}, noisep);
        CHECK(tp.policy.defer_mass == Approx(t.policy.defer_mass).epsilon(1e-14));
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(tp.policy.alloc[j] == Approx(t.policy.alloc[perm[j]]).epsilon(1e-12));
        CostConfig cost;
        cost.kappa = {0.1, 0.2, 0.3, 0.4};
        CostConfig costp = cost;
        for (std::size_t j = 0; j < 4; ++j) costp.kappa[j] = cost.kappa[perm[j]];
        const auto kap = cost.tier_costs(4), kapp = costp.tier_costs(4);
        const double L = routing_loss(t.policy, clinical_costs(s, cost), cost, kap);
        const double Lp = routing_loss(tp.policy, clinical_costs(sp, costp), costp, kapp);
        CHECK(Lp == Approx(L).epsilon(1e-12));
    }
}

TEST_CASE("AdamW with zero learning rate leaves params and updates moments") {
    AdamWConfig cfg;
    cfg.lr = 0.0;
    std::vector<double> p{1.0, -2.0}, g{0.5, -0.25};
    AdamWState st;
    adamw_step(cfg, st, p, g);
    CHECK(p == std::vector<double>{1.0, -2.0});
    CHECK(st.step == 1);
    CHECK(st.m[0] == Approx(0.05));
    CHECK(st.v[1] == Approx(0.001 * 0.0625));
}

TEST_CASE("AdamW first step against a closed-form oracle") {
    AdamWConfig cfg;
    std::vector<double> p{1.0, -2.0, 0.0}, g{0.5, -0.25, 0.0};
    AdamWState st;
    adamw_step(cfg, st, p, g);
    // Bias-corrected first step moves each coordinate by lr * sign(g) (up to eps) plus decay.
    CHECK(p[0] == Approx(1.0 - cfg.lr * (0.5 / (0.5 + cfg.eps) + cfg.weight_decay * 1.0)).epsilon(1e-12));
    CHECK(p[1] == Approx(-2.0 - cfg.lr * (-0.25 / (0.25 + cfg.eps) + cfg.weight_decay * -2.0)).epsilon(1e-12));
    CHECK(p[2] == 0.0);
}

TEST_CASE("repeating a train step from a snapshot is deterministic, serial or parallel") {
    std::mt19937_64 gen(4);
    const auto arch = small_arch(5);
    std::vector<DecisionState> rows;
    for (int i = 0; i < 40; ++i) rows.push_back(testkit::make_state(gen, 5));
    std::vector<BatchItem> batch;
    for (std::size_t i = 0; i < rows.size(); ++i) batch.push_back({&rows[i], i, -1});
    ObjectiveContext ctx;
    ALState al;
    al.lambda = 0.2;
    const auto p0 = RouterParams::initialize(arch, 3);
    AdamWConfig cfg;
    std::vector<std::vector<double>> results;
    for (Execution e : {Execution::serial, Execution::serial, Execution::parallel}) {
        auto p = p0;
        AdamWState st;
        train_step(p, st, cfg, batch, ctx, al, PolicyTemperatures{}, 11, 2, e);
        train_step(p, st, cfg, batch, ctx, al, PolicyTemperatures{}, 11, 3, e);
        results.emplace_back(p.values().begin(), p.values().end());
    }
    CHECK(results[0] == results[1]);
    CHECK(results[0] == results[2]);
}

TEST_CASE("a non-finite objective aborts with the offending id") {
    std::mt19937_64 gen(4);
    auto s = testkit::make_state(gen, 3, 1.0);
    s.id = "bad_row";
    s.inputs[in_vim_risk_z] = std::numeric_limits<double>::quiet_NaN();
    const BatchItem item{&s, 0, -1};
    const auto p = RouterParams::initialize(small_arch(3), 1);
    bool caught = false;
    try {
        batch_gradient(p, std::span<const BatchItem>(&item, 1), ObjectiveContext{}, ALState{}, PolicyTemperatures{}, 1,
                       0, Execution::serial);
    } catch (const NumericalError& e) {
        caught = std::string(e.what()).find("bad_row") != std::string::npos;
    } catch (const Error&) {
        caught = false;
    }
    CHECK(caught);
}
