#pragma once

// Mask-aware dual-head policy building blocks: Gumbel-sigmoid support gates,
// masked softmax allocation, support repair, policy assembly, masked simplex
// projection and hard-action extraction. All functions are pure.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "drouter/rng.hpp"

namespace drouter {

inline constexpr double kLogitClamp = 30.0;
inline constexpr double kAllocationDenominatorClamp = 1e-8;

/// Per-case binary availability over the M experts.
class ExpertMask {
public:
    ExpertMask() = default;
    explicit ExpertMask(std::size_t experts) : bits_(experts, 0) {}
    explicit ExpertMask(std::vector<std::uint8_t> bits);

    static ExpertMask all(std::size_t experts);

    std::size_t size() const noexcept { return bits_.size(); }
    bool feasible(std::size_t j) const { return bits_[j] != 0; }
    void set(std::size_t j, bool on) { bits_[j] = on ? 1 : 0; }
    /// k_i, the number of feasible experts.
    std::size_t count() const noexcept;
    bool empty() const noexcept { return count() == 0; }
    const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }
    /// Action-level mask [1, m_1, ..., m_M]; the AI action is always feasible.
    std::vector<double> action_mask() const;

    friend bool operator==(const ExpertMask&, const ExpertMask&) = default;
    friend auto operator<=>(const ExpertMask& a, const ExpertMask& b) { return a.bits_ <=> b.bits_; }

private:
    std::vector<std::uint8_t> bits_;
};

/// Stage-I support-selection gates for one case.
struct GateSample {
    std::vector<double> hard;   // 1[clamp(gamma) + eta >= 0] on feasible experts
    std::vector<double> soft;   // sigma((clamp(gamma) + eta) / tau_g)
    std::vector<double> st;     // straight-through value; forward equals hard
    std::vector<double> noise;  // logistic draws, one per expert (masked ones included)
};

struct AllocationDist {
    std::vector<double> probs;
};

struct RoutingPolicy {
    double defer_mass = 0.0;
    std::vector<double> alloc;         // q_i, length M
    std::vector<double> action_probs;  // pi_i, length M + 1
};

double sigmoid(double x) noexcept;
double clamp_logit(double x) noexcept;

/// Draws M logistic variables from `rng` and evaluates the gates.
GateSample gumbel_sigmoid_gate(std::span<const double> gamma, const ExpertMask& mask, double tau_g,
                               CounterRng& rng);

/// Same gates with caller-supplied logistic noise.
GateSample gumbel_sigmoid_gate(std::span<const double> gamma, const ExpertMask& mask, double tau_g,
                               std::span<const double> noise);

/// d soft_j / d gamma_j for every expert: soft(1-soft)/tau_g on feasible
/// experts whose logit is inside the clamp range, exactly zero elsewhere.
std::vector<double> gate_soft_gradient(const GateSample& gate, std::span<const double> gamma,
                                       const ExpertMask& mask, double tau_g);

/// Returns `hard` if it selects at least one expert, otherwise the full mask.
std::vector<double> repair_support(std::span<const double> hard, const ExpertMask& mask);

/// Masked, temperature-scaled softmax over feasible experts.
AllocationDist masked_allocation(std::span<const double> beta, const ExpertMask& mask, double tau_a);

/// Restriction of `alloc` to `support`, renormalised.
std::vector<double> conditional_allocation(const AllocationDist& alloc, std::span<const double> support);

/// pi = (1 - d, d q) with d = 1[k > 0] sigma(defer_logit).
RoutingPolicy assemble_policy(double defer_logit, std::span<const double> q, const ExpertMask& mask);

/// (v * mask) / <1, v * mask>.
std::vector<double> project_masked_simplex(std::span<const double> v, std::span<const double> action_mask);

/// Masked argmax; ties go to the AI action, then to the lowest expert index.
std::size_t hard_action(const RoutingPolicy& policy, const ExpertMask& mask);

}  // namespace drouter
