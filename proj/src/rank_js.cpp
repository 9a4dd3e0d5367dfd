#include "drouter/rank_js.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "drouter/error.hpp"

namespace drouter {

namespace {

double floored_log(double x) { return std::log(std::max(x, kAllocationEntropyFloor)); }

}  // namespace

std::vector<double> truncated_geometric(std::size_t k, double varrho) {
    if (!(varrho > 0.0 && varrho < 1.0)) throw ConfigError("rank reference parameter must lie in (0,1)");
    std::vector<double> g(k);
    const double norm = (1.0 - varrho) / (1.0 - std::pow(varrho, static_cast<double>(k)));
    double pw = 1.0;
    for (std::size_t t = 0; t < k; ++t) {
        g[t] = norm * pw;
        pw *= varrho;
    }
    return g;
}

double max_prefix_excess(std::span<const double> r, std::span<const double> g) {
    if (r.empty()) return 0.0;
    // The full prefix is R(k) - G(k) = 0 for two distributions; it is taken
    // as exactly 0 so rounding in the running sums cannot switch chi on.
    double best = 0.0, R = 0.0, G = 0.0;
    for (std::size_t t = 0; t + 1 < r.size(); ++t) {
        R += r[t];
        G += g[t];
        best = std::max(best, R - G);
    }
    return best;
}

bool rank_penalty_active(std::span<const double> r, std::span<const double> g, double margin) {
    return max_prefix_excess(r, g) > margin;
}

double js_divergence(std::span<const double> r, std::span<const double> g) {
    double js = 0.0;
    for (std::size_t t = 0; t < r.size(); ++t) {
        const double b = 0.5 * (r[t] + g[t]);
        if (r[t] > 0.0) js += r[t] * std::log(r[t] / b);
        if (g[t] > 0.0) js += g[t] * std::log(g[t] / b);
    }
    return 0.5 * js;
}

double rank_js_penalty(std::span<const RoutingPolicy> policies, std::span<const ExpertMask> masks,
                       const RankJsConfig& cfg, PenaltyGradient* grad, double scale) {
    if (policies.size() != masks.size()) throw ContractError("rank_js_penalty: policy/mask count mismatch");
    if (cfg.margin < 0.0) throw ConfigError("rank margin must be non-negative");
    const std::size_t n = policies.size();
    double d_plus = 0.0;
    for (const auto& p : policies) d_plus += p.defer_mass;
    if (!(d_plus > 0.0)) return 0.0;

    std::vector<double> js(n, 0.0);
    std::vector<char> active(n, 0);
    std::vector<std::vector<std::size_t>> order(n);
    double weighted = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& mask = masks[i];
        const std::size_t k = mask.count();
        if (k == 0) continue;
        auto& ord = order[i];
        for (std::size_t j = 0; j < mask.size(); ++j) {
            if (mask.feasible(j)) ord.push_back(j);
        }
        const auto& q = policies[i].alloc;
        std::stable_sort(ord.begin(), ord.end(), [&](std::size_t a, std::size_t b) { return q[a] > q[b]; });
        std::vector<double> r(k);
        for (std::size_t t = 0; t < k; ++t) r[t] = q[ord[t]];
        const auto g = truncated_geometric(k, cfg.varrho);
        if (!rank_penalty_active(r, g, cfg.margin)) continue;
        active[i] = 1;
        double v = 0.0;
        for (std::size_t t = 0; t < k; ++t) {
            const double b = 0.5 * (r[t] + g[t]);
            v += r[t] * (floored_log(r[t]) - std::log(b)) + g[t] * std::log(g[t] / b);
        }
        js[i] = 0.5 * v;
        weighted += policies[i].defer_mass * js[i];
    }
    const double penalty = weighted / d_plus;

    if (grad) {
        for (std::size_t i = 0; i < n; ++i) {
            // D_+ couples every case, including inactive ones.
            grad->defer[i] += scale * ((active[i] ? js[i] : 0.0) - penalty) / d_plus;
            if (!active[i]) continue;
            const auto& q = policies[i].alloc;
            const std::size_t k = order[i].size();
            const auto g = truncated_geometric(k, cfg.varrho);
            const double coef = scale * policies[i].defer_mass / d_plus;
            for (std::size_t t = 0; t < k; ++t) {
                const double r = q[order[i][t]];
                const double b = 0.5 * (r + g[t]);
                const double above = r > kAllocationEntropyFloor ? 1.0 : 0.0;
                // d/dr of 0.5 [r (log max(r,eps) - log b) + g log(g / b)]
                const double dr = 0.5 * (floored_log(r) - std::log(b) + above - 1.0);
                grad->alloc[i][order[i][t]] += coef * dr;
            }
        }
    }
    return penalty;
}

}  // namespace drouter
