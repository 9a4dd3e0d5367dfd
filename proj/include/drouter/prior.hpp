#pragma once

// Availability-family / cluster grouping, the hierarchical reliability prior
// over experts (global -> family -> group shrinkage), and the deferred-load
// weighted KL penalty that pulls each group's allocation towards it.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "drouter/cohort_table.hpp"
#include "drouter/objective.hpp"

namespace drouter {

inline constexpr double kPriorFloor = 1e-12;

struct PriorHyper {
    double n_fam0 = 20.0;
    double n_grp0 = 10.0;
    double rho_glob = 0.1;
    double u_glob = 0.05;
    double u_fam = 0.05;
    double u_grp = 0.05;
    double tau_bad = 1.0;
    std::vector<double> capacity;  // v_j; empty -> all ones
    std::size_t n_min_global = 1;
    std::size_t n_min_family = 1;
    std::size_t n_min_group = 5;
    std::size_t n_clusters = 3;
};

/// Fitted grouping rule: family = exact mask pattern, cluster = quantile bin
/// of prob_1 within the family (edges estimated on the fitting rows).
struct GroupModel {
    std::size_t n_clusters = 1;
    std::map<std::vector<std::uint8_t>, int> family_of_mask;
    std::vector<std::vector<double>> family_edges;
    std::map<std::pair<int, int>, int> group_of;
    std::vector<std::pair<int, int>> group_key;  // group id -> (family, cluster)

    std::size_t families() const noexcept { return family_edges.size(); }
    std::size_t groups() const noexcept { return group_key.size(); }
    int family(const ExpertMask& mask) const;
    int cluster(int family, double prob_1) const;
    /// Group id, or -1 when the (family, cluster) pair was never fitted.
    int group(const DecisionState& s) const;
};

struct GroupAssignment {
    GroupModel model;
    std::vector<int> family;
    std::vector<int> cluster;
    std::vector<int> group;
};

GroupModel fit_group_model(std::span<const DecisionState* const> rows, std::size_t n_clusters);
GroupAssignment assign_groups(const CohortTable& cohort, std::size_t n_clusters);
GroupAssignment apply_group_model(const GroupModel& model, const CohortTable& cohort);

/// Reliability statistics and the smoothed badness distribution of one subset.
struct PriorLevel {
    std::size_t n = 0;
    std::vector<std::uint8_t> support;   // A_S: experts feasible for some member
    std::vector<std::uint8_t> eligible;  // V_S: experts with enough observed labels
    std::vector<std::size_t> observed;
    std::vector<double> fnr, fpr, badness;
    std::vector<double> nu;      // badness-tilted distribution on V_S
    std::vector<double> nu_hat;  // with uniform floor; all zero if V_S is empty
    bool defined = false;
};

struct PriorTree {
    PriorHyper hyper;
    std::size_t experts = 0;
    PriorLevel global;
    std::vector<PriorLevel> family;
    std::vector<PriorLevel> group;
    std::vector<double> p_glob;
    std::vector<std::vector<double>> p_fam;
    std::vector<std::vector<double>> p_grp;
    std::vector<double> a_f;
    std::vector<double> a_g;
    std::vector<double> a_g_fam;
    std::vector<int> group_family;
    std::vector<bool> group_defined;
};

/// Laplace-smoothed FNR/FPR (add 1 / add 2), badness and tilted distribution
/// for the given member rows.
PriorLevel estimate_level(std::span<const DecisionState* const> rows, std::size_t experts, const CostConfig& cfg,
                          std::span<const double> kappa, const PriorHyper& hyper, std::size_t n_min, double uniform_mix);

/// Builds the prior from training rows only; `groups` must come from the same rows.
PriorTree build_prior_tree(const CohortTable& train, const GroupAssignment& groups, const CostConfig& cfg,
                           const PriorHyper& hyper);

/// Audit report: supports, badness, priors and shrinkage weights per level (JSON text).
std::string prior_report(const PriorTree& tree);

struct GsdpResult {
    double value = 0.0;
    std::size_t clamped = 0;  // entries where the prior was floored
};

/// sum_{g: D_g > 0} (D_g / D_+) KL(q~_g || p~_g); zero if D_+ = 0. Cases with
/// group -1 or an undefined prior contribute only to D_+. With `grad`, adds
/// scale * derivatives w.r.t. d_i and q_i.
GsdpResult gsdp_penalty(std::span<const RoutingPolicy> policies, std::span<const int> groups, const PriorTree& prior,
                        PenaltyGradient* grad = nullptr, double scale = 1.0);

/// KL(q || p) with 0 log 0 = 0 and p floored at kPriorFloor.
double kl_divergence(std::span<const double> q, std::span<const double> p);

}  // namespace drouter
