#pragma once

// Rank-majorization Jensen-Shannon regularizer on the descending-sorted
// conditional allocation, active only when the cumulative top-rank mass
// exceeds a truncated geometric reference by more than a margin.

#include <cstddef>
#include <span>
#include <vector>

#include "drouter/objective.hpp"

namespace drouter {

/// Allocation entries below this value are scored with a linear tail,
/// x log(floor), so the entropy term stays Lipschitz at zero mass.
inline constexpr double kAllocationEntropyFloor = 1e-4;

/// g_{k,rho}(t) = (1 - rho) rho^(t-1) / (1 - rho^k), t = 1..k.
std::vector<double> truncated_geometric(std::size_t k, double varrho);

/// max_t (R(t) - G(t)) over prefixes of the sorted profile and its reference
/// (both distributions, so the full prefix contributes exactly 0).
double max_prefix_excess(std::span<const double> sorted_desc, std::span<const double> reference);

/// chi = 1[max_t (R(t) - G(t)) > margin].
bool rank_penalty_active(std::span<const double> sorted_desc, std::span<const double> reference, double margin);

/// JS(r || g) with natural logs and 0 log 0 = 0.
double js_divergence(std::span<const double> r, std::span<const double> g);

/// Sum_i d_i chi_i JS(r_i || g_{k_i}) / D_+, zero when D_+ = 0. With `grad`,
/// adds scale * d(penalty)/d(d_i) and d(penalty)/d(q_i).
double rank_js_penalty(std::span<const RoutingPolicy> policies, std::span<const ExpertMask> masks,
                       const RankJsConfig& cfg, PenaltyGradient* grad = nullptr, double scale = 1.0);

}  // namespace drouter
