#pragma once

// Router network: three branch encoders (risk, structure, AI logits), a
// fusion layer, a defer head, a shared expert trunk with gating and
// allocation heads, and the scalar structural-risk head. Gradients are
// hand-derived reverse mode for this fixed architecture.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "drouter/cohort_table.hpp"
#include "drouter/policy.hpp"

namespace drouter {

struct Architecture {
    std::size_t experts = 12;
    std::size_t branch = 16;  // width of each branch encoder
    std::size_t fuse = 32;
    std::size_t trunk = 32;

    friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Named parameter blocks inside the flat parameter vector.
enum class Block : std::size_t {
    risk_w, risk_b,
    str_w, str_b,
    ai_w, ai_b,
    fuse_w, fuse_b,
    defer_w, defer_b,
    trunk_w, trunk_b,
    gate_w, gate_b,
    alloc_w, alloc_b,
    str_head_w, str_head_b,
    count_,
};

inline constexpr std::size_t kBlockCount = static_cast<std::size_t>(Block::count_);

const char* block_name(Block b);

struct ParamLayout {
    std::array<std::size_t, kBlockCount> offset{};
    std::array<std::size_t, kBlockCount> length{};
    std::size_t total = 0;

    explicit ParamLayout(const Architecture& arch);
};

/// All trainable router weights as one flat fp64 vector plus block views.
class RouterParams {
public:
    RouterParams() : layout_(Architecture{}) {}
    explicit RouterParams(const Architecture& arch);

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
    static RouterParams initialize(const Architecture& arch, std::uint64_t seed);

    const Architecture& arch() const noexcept { return arch_; }
    const ParamLayout& layout() const noexcept { return layout_; }
    std::size_t size() const noexcept { return values_.size(); }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<double> block(Block b) noexcept;
    std::span<const double> block(Block b) const noexcept;

    bool all_finite() const noexcept;

private:
    Architecture arch_;
    ParamLayout layout_;
    std::vector<double> values_;
};

struct PolicyTemperatures {
    double tau_g = 1.0;
    double tau_a = 1.0;
};

/// Router-side risk and structural feature vectors.
struct RouterState {
    std::array<double, 3> r_risk{};
    std::array<double, 2> r_str{};
    double p_str = 0.5;
};

RouterState build_router_state(const DecisionState& state, const RouterParams& params);

/// Everything the backward pass needs for one case.
struct ForwardTrace {
    RouterState router;
    std::vector<double> h_risk, h_str, h_ai;  // branch outputs (post tanh)
    std::vector<double> fused;                // h
    std::vector<double> trunk;                // z
    double defer_logit = 0.0;
    std::vector<double> gamma, beta;
    GateSample gate;
    bool repaired = false;
    std::vector<double> support;  // value entering the conditional allocation
    AllocationDist alloc;
    RoutingPolicy policy;
};

/// Forward pass with explicit logistic noise. When `frozen` is given, the
/// hard gates and the stop-gradient copy of the soft gates are taken from it
/// (straight-through surrogate used by finite-difference checks); passing the
/// trace's own gates reproduces the ordinary forward value.
ForwardTrace forward(const RouterParams& params, const DecisionState& state, const PolicyTemperatures& temps,
                     std::span<const double> noise, const ForwardTrace* frozen = nullptr);

/// Forward pass drawing the gate noise from `rng`.
ForwardTrace policy_forward(const DecisionState& state, const RouterParams& params, const PolicyTemperatures& temps,
                            CounterRng& rng);

/// Deterministic evaluation pass: zero gate noise (the logistic median).
ForwardTrace forward_mode(const RouterParams& params, const DecisionState& state, const PolicyTemperatures& temps);

/// Accumulates d(objective)/d(params) into `grad` given the objective's
/// sensitivities to the defer mass and to the conditional allocation q.
void backward(const RouterParams& params, const DecisionState& state, const ForwardTrace& trace,
              const PolicyTemperatures& temps, double grad_defer, std::span<const double> grad_alloc,
              std::span<double> grad);

}  // namespace drouter
