#pragma once

// Loss terms of the router objective: asymmetric clinical costs, the
// per-case routing loss, the deferral-budget augmented Lagrangian, and the
// weighted total over a batch (with the GSDP and rank-JS regularizers from
// prior.hpp / rank_js.hpp).

#include <cstddef>
#include <span>
#include <vector>

#include "drouter/cohort_table.hpp"
#include "drouter/policy.hpp"

namespace drouter {

struct PriorTree;

struct CostConfig {
    double c_fn = 2.0;
    double c_fp = 1.5;
    double c_fn_prior = 1.8;
    double c_fp_prior = 1.2;
    std::vector<double> kappa;  // tier cost per expert; empty -> default_kappa(M)
    double gamma_tier = 0.5;
    double w_gsdp = 0.1;
    double w_rank = 0.1;
    bool al_enabled = true;
    double rho_def = 0.5;
    double mu = 10.0;
    double eta_lambda = 0.1;

    /// Throws ConfigError unless c_fn > c_fp > 0 and all weights are >= 0.
    void validate() const;
    /// kappa resolved for M experts.
    std::vector<double> tier_costs(std::size_t experts) const;
};

/// Three tiers 0.1 / 0.2 / 0.3 assigned round-robin.
std::vector<double> default_kappa(std::size_t experts);

struct RankJsConfig {
    double varrho = 0.5;
    double margin = 0.05;
};

/// Clinical cost of keeping the AI decision and of each feasible expert.
class ClinicalCosts {
public:
    ClinicalCosts() = default;
    ClinicalCosts(double ai, std::vector<double> expert, ExpertMask mask)
        : ai_(ai), expert_(std::move(expert)), mask_(std::move(mask)) {}

    double ai() const noexcept { return ai_; }
    /// Throws ContractError for an infeasible expert.
    double expert(std::size_t j) const;
    const ExpertMask& mask() const noexcept { return mask_; }

private:
    double ai_ = 0.0;
    std::vector<double> expert_;
    ExpertMask mask_;
};

ClinicalCosts clinical_costs(const DecisionState& state, const CostConfig& cfg);

/// L_i = C_ai + d * (sum_j q_j (C_exp_j + gamma kappa_j) - C_ai).
double routing_loss(const RoutingPolicy& policy, const ClinicalCosts& costs, const CostConfig& cfg,
                    std::span<const double> kappa);

/// Marginal cost of deferring: sum_j q_j (C_exp_j + gamma kappa_j) - C_ai.
double deferral_advantage(const RoutingPolicy& policy, const ClinicalCosts& costs, const CostConfig& cfg,
                          std::span<const double> kappa);

/// Deferral-budget multiplier and its per-epoch history.
struct ALState {
    struct Record {
        int epoch = 0;
        double d_bar = 0.0;
        double violation = 0.0;
        double lambda = 0.0;
    };
    double lambda = 0.0;
    std::vector<Record> history;
};

struct ALResult {
    double penalty = 0.0;
    ALState updated;
};

/// lambda (d_bar - rho) + mu/2 [d_bar - rho]_+^2.
double al_penalty(double d_bar, const ALState& al, const CostConfig& cfg);
/// d(penalty)/d(d_bar).
double al_penalty_slope(double d_bar, const ALState& al, const CostConfig& cfg);
/// Projected ascent lambda <- [lambda + eta (d_bar - rho)]_+, with history.
void al_update(ALState& al, double d_bar, const CostConfig& cfg, int epoch);
/// Penalty at d_bar together with the epoch-end updated state.
ALResult augmented_lagrangian(double d_bar, const ALState& al, const CostConfig& cfg, int epoch = 0);

/// Sensitivities of a batch objective to each case's defer mass and allocation.
struct PenaltyGradient {
    std::vector<double> defer;
    std::vector<std::vector<double>> alloc;

    void reset(std::size_t cases, std::size_t experts);
};

struct ObjectiveBreakdown {
    double routing = 0.0;  // mean routing loss
    double gsdp = 0.0;
    double rank = 0.0;
    double al = 0.0;
    double d_bar = 0.0;
    double total = 0.0;
    std::size_t clamped_priors = 0;
};

struct ObjectiveContext {
    CostConfig cost;
    RankJsConfig rank;
    const PriorTree* prior = nullptr;  // GSDP is skipped without a prior
};

/// Batch objective: mean routing loss + w_gsdp GSDP + w_rank rank-JS + AL
/// penalty (when enabled). With `grad`, fills d(total)/d(d_i) and d(total)/d(q_i).
ObjectiveBreakdown total_objective(std::span<const RoutingPolicy> policies, std::span<const ClinicalCosts> costs,
                                   std::span<const int> groups, const ObjectiveContext& ctx, const ALState& al,
                                   PenaltyGradient* grad = nullptr);

}  // namespace drouter
