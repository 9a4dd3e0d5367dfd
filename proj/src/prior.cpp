#include "drouter/prior.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "drouter/error.hpp"
#include "drouter/rank_js.hpp"

namespace drouter {

namespace {

// Type-7 sample quantile of sorted data.
double quantile_sorted(const std::vector<double>& v, double p) {
    const double h = (static_cast<double>(v.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double psi(double x) { return x * std::log(std::max(x, kAllocationEntropyFloor)); }
double psi_prime(double x) {
    return std::log(std::max(x, kAllocationEntropyFloor)) + (x > kAllocationEntropyFloor ? 1.0 : 0.0);
}

// Restrict `mix` to `support` and renormalize; empty result if no mass remains.
std::vector<double> restrict_normalize(std::vector<double> mix, const std::vector<std::uint8_t>& support) {
    double s = 0.0;
    for (std::size_t j = 0; j < mix.size(); ++j) {
        if (!support[j]) mix[j] = 0.0;
        s += mix[j];
    }
    if (!(s > 0.0)) return {};
    for (auto& v : mix) v /= s;
    return mix;
}

}  // namespace

int GroupModel::family(const ExpertMask& mask) const {
    const auto it = family_of_mask.find(mask.bits());
    return it == family_of_mask.end() ? -1 : it->second;
}

int GroupModel::cluster(int f, double prob_1) const {
    const auto& edges = family_edges.at(static_cast<std::size_t>(f));
    int c = 0;
    for (double e : edges) c += e <= prob_1 ? 1 : 0;
    return c;
}

int GroupModel::group(const DecisionState& s) const {
    const int f = family(s.mask);
    if (f < 0) return -1;
    const auto it = group_of.find({f, cluster(f, s.prob_1)});
    return it == group_of.end() ? -1 : it->second;
}

GroupModel fit_group_model(std::span<const DecisionState* const> rows, std::size_t n_clusters) {
    if (rows.empty()) throw DataError("cannot assign groups on an empty cohort");
    if (n_clusters == 0) throw ConfigError("n_clusters must be positive");
    GroupModel model;
    model.n_clusters = n_clusters;
    std::vector<std::vector<double>> values;
    for (const auto* s : rows) {
        auto [it, inserted] = model.family_of_mask.try_emplace(s->mask.bits(), static_cast<int>(values.size()));
        if (inserted) values.emplace_back();
        values[static_cast<std::size_t>(it->second)].push_back(s->prob_1);
    }
    model.family_edges.resize(values.size());
    for (std::size_t f = 0; f < values.size(); ++f) {
        auto v = values[f];
        std::sort(v.begin(), v.end());
        for (std::size_t k = 1; k < n_clusters; ++k) {
            model.family_edges[f].push_back(quantile_sorted(v, static_cast<double>(k) / static_cast<double>(n_clusters)));
        }
    }
    // Group ids in order of first appearance.
    for (const auto* s : rows) {
        const int f = model.family(s->mask);
        const std::pair<int, int> key{f, model.cluster(f, s->prob_1)};
        if (model.group_of.try_emplace(key, static_cast<int>(model.group_key.size())).second) {
            model.group_key.push_back(key);
        }
    }
    return model;
}

GroupAssignment apply_group_model(const GroupModel& model, const CohortTable& cohort) {
    GroupAssignment a;
    a.model = model;
    for (const auto& s : cohort.rows) {
        const int f = model.family(s.mask);
        a.family.push_back(f);
        a.cluster.push_back(f < 0 ? -1 : model.cluster(f, s.prob_1));
        a.group.push_back(model.group(s));
    }
    return a;
}

GroupAssignment assign_groups(const CohortTable& cohort, std::size_t n_clusters) {
    std::vector<const DecisionState*> rows;
    for (const auto& s : cohort.rows) rows.push_back(&s);
    return apply_group_model(fit_group_model(rows, n_clusters), cohort);
}

PriorLevel estimate_level(std::span<const DecisionState* const> rows, std::size_t m, const CostConfig& cfg,
                          std::span<const double> kappa, const PriorHyper& hyper, std::size_t n_min,
                          double uniform_mix) {
    PriorLevel L;
    L.n = rows.size();
    L.support.assign(m, 0);
    L.eligible.assign(m, 0);
    L.observed.assign(m, 0);
    L.fnr.assign(m, 0.0);
    L.fpr.assign(m, 0.0);
    L.badness.assign(m, 0.0);
    L.nu.assign(m, 0.0);
    L.nu_hat.assign(m, 0.0);
    std::vector<std::size_t> pos(m, 0), neg(m, 0), fn(m, 0), fp(m, 0);
    for (const auto* s : rows) {
        for (std::size_t j = 0; j < m; ++j) {
            if (!s->mask.feasible(j)) continue;
            L.support[j] = 1;
            const int yh = s->expert_labels[j];
            if (yh == kLabelMissing) continue;
            ++L.observed[j];
            if (s->label == 1) {
                ++pos[j];
                fn[j] += yh == 0 ? 1 : 0;
            } else {
                ++neg[j];
                fp[j] += yh == 1 ? 1 : 0;
            }
        }
    }
    std::size_t eligible = 0;
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        L.fnr[j] = (static_cast<double>(fn[j]) + 1.0) / (static_cast<double>(pos[j]) + 2.0);
        L.fpr[j] = (static_cast<double>(fp[j]) + 1.0) / (static_cast<double>(neg[j]) + 2.0);
        L.badness[j] = cfg.c_fn_prior * L.fnr[j] + cfg.c_fp_prior * L.fpr[j] + kappa[j];
        if (L.support[j] && L.observed[j] >= n_min) {
            L.eligible[j] = 1;
            ++eligible;
            const double v = hyper.capacity.empty() ? 1.0 : hyper.capacity[j];
            L.nu[j] = v * std::exp(-hyper.tau_bad * L.badness[j]);
            z += L.nu[j];
        }
    }
    if (eligible == 0 || !(z > 0.0)) {
        std::fill(L.nu.begin(), L.nu.end(), 0.0);
        return L;
    }
    L.defined = true;
    for (std::size_t j = 0; j < m; ++j) {
        if (!L.eligible[j]) continue;
        L.nu[j] /= z;
        L.nu_hat[j] = (1.0 - uniform_mix) * L.nu[j] + uniform_mix / static_cast<double>(eligible);
    }
    return L;
}

PriorTree build_prior_tree(const CohortTable& train, const GroupAssignment& groups, const CostConfig& cfg,
                           const PriorHyper& hyper) {
    const std::size_t m = train.experts;
    if (groups.group.size() != train.rows.size()) throw ContractError("group assignment does not match the cohort");
    if (!hyper.capacity.empty()) {
        if (hyper.capacity.size() != m) throw ConfigError("capacity multipliers must have one entry per expert");
        for (double v : hyper.capacity) {
            if (!(v > 0.0)) throw ConfigError("capacity multipliers must be positive");
        }
    }
    for (double u : {hyper.u_glob, hyper.u_fam, hyper.u_grp, hyper.rho_glob}) {
        if (!(u >= 0.0 && u <= 1.0)) throw ConfigError("prior mixing weights must lie in [0,1]");
    }
    if (!(hyper.tau_bad >= 0.0 && hyper.n_fam0 >= 0.0 && hyper.n_grp0 >= 0.0))
        throw ConfigError("prior concentration and pseudo-counts must be >= 0");
    const auto kappa = cfg.tier_costs(m);

    PriorTree t;
    t.hyper = hyper;
    t.experts = m;
    const auto& model = groups.model;
    const std::size_t F = model.families(), G = model.groups();

    std::vector<const DecisionState*> all;
    std::vector<std::vector<const DecisionState*>> fam_rows(F), grp_rows(G);
    for (std::size_t i = 0; i < train.rows.size(); ++i) {
        const auto* s = &train.rows[i];
        all.push_back(s);
        if (groups.family[i] >= 0) fam_rows[static_cast<std::size_t>(groups.family[i])].push_back(s);
        if (groups.group[i] >= 0) grp_rows[static_cast<std::size_t>(groups.group[i])].push_back(s);
    }

    t.global = estimate_level(all, m, cfg, kappa, hyper, hyper.n_min_global, hyper.u_glob);
    t.p_glob = t.global.nu_hat;

    t.family.resize(F);
    t.p_fam.resize(F);
    t.a_f.resize(F);
    for (std::size_t f = 0; f < F; ++f) {
        auto& L = t.family[f];
        L = estimate_level(fam_rows[f], m, cfg, kappa, hyper, hyper.n_min_family, hyper.u_fam);
        const double n = static_cast<double>(L.n);
        t.a_f[f] = n / (n + hyper.n_fam0);
        std::vector<double> mix(m);
        for (std::size_t j = 0; j < m; ++j) mix[j] = t.a_f[f] * L.nu_hat[j] + (1.0 - t.a_f[f]) * t.p_glob[j];
        t.p_fam[f] = restrict_normalize(std::move(mix), L.support);
    }

    t.group.resize(G);
    t.p_grp.resize(G);
    t.a_g.resize(G);
    t.a_g_fam.resize(G);
    t.group_family.resize(G);
    t.group_defined.assign(G, false);
    for (std::size_t g = 0; g < G; ++g) {
        auto& L = t.group[g];
        L = estimate_level(grp_rows[g], m, cfg, kappa, hyper, hyper.n_min_group, hyper.u_grp);
        const int f = model.group_key[g].first;
        t.group_family[g] = f;
        const double n = static_cast<double>(L.n);
        t.a_g[g] = n / (n + hyper.n_grp0);
        t.a_g_fam[g] = std::max(1.0 - t.a_g[g] - hyper.rho_glob, 0.0);
        const auto& pf = t.p_fam[static_cast<std::size_t>(f)];
        std::vector<double> mix(m);
        for (std::size_t j = 0; j < m; ++j) {
            mix[j] = t.a_g[g] * L.nu_hat[j] + (pf.empty() ? 0.0 : t.a_g_fam[g] * pf[j]) + hyper.rho_glob * t.p_glob[j];
        }
        t.p_grp[g] = restrict_normalize(std::move(mix), L.support);
        t.group_defined[g] = !t.p_grp[g].empty();
    }
    return t;
}

std::string prior_report(const PriorTree& t) {
    using nlohmann::json;
    auto level = [](const PriorLevel& L) {
        return json{{"n", L.n},           {"support", L.support}, {"eligible", L.eligible},
                    {"observed", L.observed}, {"fnr", L.fnr},     {"fpr", L.fpr},
                    {"badness", L.badness}, {"nu_hat", L.nu_hat}, {"defined", L.defined}};
    };
    json j;
    j["experts"] = t.experts;
    j["hyper"] = {{"n_fam0", t.hyper.n_fam0}, {"n_grp0", t.hyper.n_grp0}, {"rho_glob", t.hyper.rho_glob},
                  {"u_glob", t.hyper.u_glob}, {"u_fam", t.hyper.u_fam},   {"u_grp", t.hyper.u_grp},
                  {"tau_bad", t.hyper.tau_bad}};
    j["global"] = level(t.global);
    j["global"]["prior"] = t.p_glob;
    j["families"] = json::array();
    for (std::size_t f = 0; f < t.family.size(); ++f) {
        auto e = level(t.family[f]);
        e["a_f"] = t.a_f[f];
        e["prior"] = t.p_fam[f];
        j["families"].push_back(e);
    }
    j["groups"] = json::array();
    for (std::size_t g = 0; g < t.group.size(); ++g) {
        auto e = level(t.group[g]);
        e["family"] = t.group_family[g];
        e["a_g"] = t.a_g[g];
        e["a_g_fam"] = t.a_g_fam[g];
        e["prior"] = t.p_grp[g];
        e["prior_defined"] = static_cast<bool>(t.group_defined[g]);
        j["groups"].push_back(e);
    }
    return j.dump(2);
}

double kl_divergence(std::span<const double> q, std::span<const double> p) {
    double kl = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j) {
        if (q[j] > 0.0) kl += q[j] * std::log(q[j] / std::max(p[j], kPriorFloor));
    }
    return kl;
}

GsdpResult gsdp_penalty(std::span<const RoutingPolicy> policies, std::span<const int> groups, const PriorTree& prior,
                        PenaltyGradient* grad, double scale) {
    if (policies.size() != groups.size()) throw ContractError("gsdp_penalty: policy/group count mismatch");
    const std::size_t n = policies.size(), m = prior.experts, G = prior.group.size();
    GsdpResult out;
    double d_plus = 0.0;
    for (const auto& p : policies) d_plus += p.defer_mass;
    if (!(d_plus > 0.0)) return out;

    auto usable = [&](int g) {
        return g >= 0 && static_cast<std::size_t>(g) < G && prior.group_defined[static_cast<std::size_t>(g)];
    };
    std::vector<double> D(G, 0.0);
    std::vector<std::vector<double>> Q(G, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        if (!usable(groups[i])) continue;
        const auto g = static_cast<std::size_t>(groups[i]);
        D[g] += policies[i].defer_mass;
        for (std::size_t j = 0; j < m; ++j) Q[g][j] += policies[i].defer_mass * policies[i].alloc[j];
    }
    // Per group: the D_g-weighted KL term, dD_g and dQ_g sensitivities.
    std::vector<double> dD(G, 0.0);
    std::vector<std::vector<double>> u(G);
    double weighted = 0.0;
    for (std::size_t g = 0; g < G; ++g) {
        if (!(D[g] > 0.0)) continue;
        const auto& p = prior.p_grp[g];
        u[g].assign(m, 0.0);
        double kl = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            if (!prior.group[g].support[j]) continue;
            const double x = Q[g][j] / D[g];
            double pj = p[j];
            if (pj < kPriorFloor) {
                pj = kPriorFloor;
                if (x > 0.0) ++out.clamped;
            }
            const double lp = std::log(pj);
            kl += psi(x) - x * lp;
            u[g][j] = psi_prime(x) - lp;
            dD[g] += psi(x) - x * psi_prime(x);
        }
        weighted += D[g] * kl;
    }
    out.value = weighted / d_plus;

    if (grad) {
        for (std::size_t i = 0; i < n; ++i) {
            double gd = -out.value;
            if (usable(groups[i]) && D[static_cast<std::size_t>(groups[i])] > 0.0) {
                const auto g = static_cast<std::size_t>(groups[i]);
                gd += dD[g];
                for (std::size_t j = 0; j < m; ++j) {
                    gd += policies[i].alloc[j] * u[g][j];
                    grad->alloc[i][j] += scale * policies[i].defer_mass * u[g][j] / d_plus;
                }
            }
            grad->defer[i] += scale * gd / d_plus;
        }
    }
    return out;
}

}  // namespace drouter
