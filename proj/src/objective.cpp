#include "drouter/objective.hpp"

#include <algorithm>
#include <cmath>

#include "drouter/error.hpp"
#include "drouter/prior.hpp"
#include "drouter/rank_js.hpp"

namespace drouter {

std::vector<double> default_kappa(std::size_t experts) {
    static constexpr double tiers[] = {0.1, 0.2, 0.3};
    std::vector<double> k(experts);
    for (std::size_t j = 0; j < experts; ++j) k[j] = tiers[j % 3];
    return k;
}

void CostConfig::validate() const {
    if (!(c_fn > c_fp && c_fp > 0.0)) throw ConfigError("costs must satisfy c_fn > c_fp > 0");
    if (!(c_fn_prior >= 0.0 && c_fp_prior >= 0.0)) throw ConfigError("prior badness costs must be >= 0");
    if (!(gamma_tier >= 0.0 && w_gsdp >= 0.0 && w_rank >= 0.0 && mu >= 0.0 && eta_lambda >= 0.0))
        throw ConfigError("objective weights must be >= 0");
    if (!(rho_def >= 0.0 && rho_def <= 1.0)) throw ConfigError("rho_def must lie in [0,1]");
    for (double k : kappa) {
        if (!(k >= 0.0)) throw ConfigError("tier costs must be >= 0");
    }
}

std::vector<double> CostConfig::tier_costs(std::size_t experts) const {
    if (kappa.empty()) return default_kappa(experts);
    if (kappa.size() != experts) throw ConfigError("kappa has " + std::to_string(kappa.size()) + " entries, expected " +
                                                   std::to_string(experts));
    return kappa;
}

double ClinicalCosts::expert(std::size_t j) const {
    if (!mask_.feasible(j)) throw ContractError("clinical cost read at infeasible expert " + std::to_string(j));
    return expert_[j];
}

ClinicalCosts clinical_costs(const DecisionState& s, const CostConfig& cfg) {
    const double y = s.label;
    const double c_ai = cfg.c_fn * y * (1.0 - s.prob_1) + cfg.c_fp * (1.0 - y) * s.prob_1;
    std::vector<double> c(s.experts(), 0.0);
    for (std::size_t j = 0; j < s.experts(); ++j) {
        if (!s.mask.feasible(j)) continue;
        const int yh = s.expert_labels[j];
        if (s.label == 1 && yh == 0) c[j] = cfg.c_fn;
        if (s.label == 0 && yh == 1) c[j] = cfg.c_fp;
    }
    return ClinicalCosts(c_ai, std::move(c), s.mask);
}

double deferral_advantage(const RoutingPolicy& policy, const ClinicalCosts& costs, const CostConfig& cfg,
                          std::span<const double> kappa) {
    const auto& mask = costs.mask();
    double e = 0.0;
    for (std::size_t j = 0; j < mask.size(); ++j) {
        if (mask.feasible(j)) e += policy.alloc[j] * (costs.expert(j) + cfg.gamma_tier * kappa[j]);
    }
    return e - costs.ai();
}

double routing_loss(const RoutingPolicy& policy, const ClinicalCosts& costs, const CostConfig& cfg,
                    std::span<const double> kappa) {
    if (costs.mask().empty()) return costs.ai();
    return costs.ai() + policy.defer_mass * deferral_advantage(policy, costs, cfg, kappa);
}

double al_penalty(double d_bar, const ALState& al, const CostConfig& cfg) {
    const double v = d_bar - cfg.rho_def;
    const double pos = std::max(v, 0.0);
    return al.lambda * v + 0.5 * cfg.mu * pos * pos;
}

double al_penalty_slope(double d_bar, const ALState& al, const CostConfig& cfg) {
    return al.lambda + cfg.mu * std::max(d_bar - cfg.rho_def, 0.0);
}

void al_update(ALState& al, double d_bar, const CostConfig& cfg, int epoch) {
    const double v = d_bar - cfg.rho_def;
    al.lambda = std::max(al.lambda + cfg.eta_lambda * v, 0.0);
    al.history.push_back({epoch, d_bar, std::max(v, 0.0), al.lambda});
}

ALResult augmented_lagrangian(double d_bar, const ALState& al, const CostConfig& cfg, int epoch) {
    if (!(d_bar >= 0.0 && d_bar <= 1.0)) throw ContractError("mean deferral must lie in [0,1]");
    ALResult r;
    r.penalty = al_penalty(d_bar, al, cfg);
    r.updated = al;
    al_update(r.updated, d_bar, cfg, epoch);
    return r;
}

void PenaltyGradient::reset(std::size_t cases, std::size_t experts) {
    defer.assign(cases, 0.0);
    alloc.assign(cases, std::vector<double>(experts, 0.0));
}

ObjectiveBreakdown total_objective(std::span<const RoutingPolicy> policies, std::span<const ClinicalCosts> costs,
                                   std::span<const int> groups, const ObjectiveContext& ctx, const ALState& al,
                                   PenaltyGradient* grad) {
    const std::size_t n = policies.size();
    if (costs.size() != n) throw ContractError("total_objective: policy/cost count mismatch");
    ObjectiveBreakdown out;
    if (n == 0) return out;
    const std::size_t m = costs[0].mask().size();
    const auto kappa = ctx.cost.tier_costs(m);
    const double inv_n = 1.0 / static_cast<double>(n);
    if (grad) grad->reset(n, m);

    double d_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out.routing += routing_loss(policies[i], costs[i], ctx.cost, kappa);
        d_sum += policies[i].defer_mass;
        if (!grad || costs[i].mask().empty()) continue;
        grad->defer[i] += inv_n * deferral_advantage(policies[i], costs[i], ctx.cost, kappa);
        const auto& mask = costs[i].mask();
        for (std::size_t j = 0; j < m; ++j) {
            if (mask.feasible(j))
                grad->alloc[i][j] +=
                    inv_n * policies[i].defer_mass * (costs[i].expert(j) + ctx.cost.gamma_tier * kappa[j]);
        }
    }
    out.routing *= inv_n;
    out.d_bar = d_sum * inv_n;

    if (ctx.prior) {
        if (groups.size() != n) throw ContractError("total_objective: group count mismatch");
        const auto r = gsdp_penalty(policies, groups, *ctx.prior, ctx.cost.w_gsdp > 0.0 ? grad : nullptr, ctx.cost.w_gsdp);
        out.gsdp = r.value;
        out.clamped_priors = r.clamped;
    }
    {
        std::vector<ExpertMask> masks;
        masks.reserve(n);
        for (const auto& c : costs) masks.push_back(c.mask());
        out.rank = rank_js_penalty(policies, masks, ctx.rank, ctx.cost.w_rank > 0.0 ? grad : nullptr, ctx.cost.w_rank);
    }
    if (ctx.cost.al_enabled) {
        out.al = al_penalty(out.d_bar, al, ctx.cost);
        if (grad) {
            const double slope = al_penalty_slope(out.d_bar, al, ctx.cost) * inv_n;
            for (std::size_t i = 0; i < n; ++i) grad->defer[i] += slope;
        }
    }
    out.total = out.routing + ctx.cost.w_gsdp * out.gsdp + ctx.cost.w_rank * out.rank + out.al;
    return out;
}

}  // namespace drouter
