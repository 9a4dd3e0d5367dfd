#include "drouter/policy.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "drouter/error.hpp"

namespace drouter {

ExpertMask::ExpertMask(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
    for (auto& b : bits_) {
        if (b > 1) throw ContractError("expert mask entries must be 0 or 1");
    }
}

ExpertMask ExpertMask::all(std::size_t experts) {
    return ExpertMask(std::vector<std::uint8_t>(experts, 1));
}

std::size_t ExpertMask::count() const noexcept {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::vector<double> ExpertMask::action_mask() const {
    std::vector<double> m(bits_.size() + 1, 0.0);
    m[0] = 1.0;
    for (std::size_t j = 0; j < bits_.size(); ++j) m[j + 1] = bits_[j] ? 1.0 : 0.0;
    return m;
}

double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double clamp_logit(double x) noexcept { return std::clamp(x, -kLogitClamp, kLogitClamp); }

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw ContractError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " +
                            std::to_string(b) + ")");
    }
}

}  // namespace

GateSample gumbel_sigmoid_gate(std::span<const double> gamma, const ExpertMask& mask, double tau_g,
                               CounterRng& rng) {
    std::vector<double> noise(gamma.size());
    for (auto& n : noise) n = rng.logistic();
    return gumbel_sigmoid_gate(gamma, mask, tau_g, noise);
}

GateSample gumbel_sigmoid_gate(std::span<const double> gamma, const ExpertMask& mask, double tau_g,
                               std::span<const double> noise) {
    check_lengths(gamma.size(), mask.size(), "gumbel_sigmoid_gate");
    check_lengths(noise.size(), mask.size(), "gumbel_sigmoid_gate noise");
    if (!(tau_g > 0.0)) throw ContractError("gate temperature must be positive");
    const std::size_t m = gamma.size();
    GateSample g;
    g.hard.assign(m, 0.0);
    g.soft.assign(m, 0.0);
    g.st.assign(m, 0.0);
    g.noise.assign(noise.begin(), noise.end());
    for (std::size_t j = 0; j < m; ++j) {
        if (!std::isfinite(gamma[j])) throw ContractError("non-finite gating logit at expert " + std::to_string(j));
        if (!mask.feasible(j)) continue;  // masked logit is -inf: both gates stay exactly 0
        const double a = clamp_logit(gamma[j]) + noise[j];
        g.hard[j] = a >= 0.0 ? 1.0 : 0.0;
        g.soft[j] = sigmoid(a / tau_g);
        g.st[j] = g.hard[j];
    }
    return g;
}

std::vector<double> gate_soft_gradient(const GateSample& gate, std::span<const double> gamma,
                                       const ExpertMask& mask, double tau_g) {
    std::vector<double> d(mask.size(), 0.0);
    for (std::size_t j = 0; j < mask.size(); ++j) {
        if (!mask.feasible(j) || std::abs(gamma[j]) >= kLogitClamp) continue;
        d[j] = gate.soft[j] * (1.0 - gate.soft[j]) / tau_g;
    }
    return d;
}

std::vector<double> repair_support(std::span<const double> hard, const ExpertMask& mask) {
    check_lengths(hard.size(), mask.size(), "repair_support");
    double total = 0.0;
    for (double h : hard) total += h;
    if (total > 0.0) return {hard.begin(), hard.end()};
    std::vector<double> out(mask.size());
    for (std::size_t j = 0; j < mask.size(); ++j) out[j] = mask.feasible(j) ? 1.0 : 0.0;
    return out;
}

AllocationDist masked_allocation(std::span<const double> beta, const ExpertMask& mask, double tau_a) {
    check_lengths(beta.size(), mask.size(), "masked_allocation");
    if (!(tau_a > 0.0)) throw ContractError("allocation temperature must be positive");
    if (mask.empty()) throw EmptyFeasibleSetError();
    double top = -INFINITY;
    for (std::size_t j = 0; j < beta.size(); ++j) {
        if (mask.feasible(j)) top = std::max(top, beta[j] / tau_a);
    }
    AllocationDist a;
    a.probs.assign(beta.size(), 0.0);
    double z = 0.0;
    for (std::size_t j = 0; j < beta.size(); ++j) {
        if (!mask.feasible(j)) continue;
        a.probs[j] = std::exp(beta[j] / tau_a - top);
        z += a.probs[j];
    }
    for (auto& p : a.probs) p /= z;
    return a;
}

std::vector<double> conditional_allocation(const AllocationDist& alloc, std::span<const double> support) {
    check_lengths(alloc.probs.size(), support.size(), "conditional_allocation");
    double denom = 0.0;
    for (std::size_t j = 0; j < support.size(); ++j) denom += alloc.probs[j] * support[j];
    if (!(denom > kAllocationDenominatorClamp)) throw DegenerateSupportError(denom);
    std::vector<double> q(support.size());
    for (std::size_t j = 0; j < support.size(); ++j) q[j] = alloc.probs[j] * support[j] / denom;
    return q;
}

RoutingPolicy assemble_policy(double defer_logit, std::span<const double> q, const ExpertMask& mask) {
    check_lengths(q.size(), mask.size(), "assemble_policy");
    const std::size_t m = mask.size();
    RoutingPolicy p;
    p.alloc.assign(m, 0.0);
    p.action_probs.assign(m + 1, 0.0);
    if (mask.empty()) {
        p.defer_mass = 0.0;
        p.action_probs[0] = 1.0;
        return p;
    }
    p.defer_mass = sigmoid(clamp_logit(defer_logit));
    p.action_probs[0] = 1.0 - p.defer_mass;
    for (std::size_t j = 0; j < m; ++j) {
        if (!mask.feasible(j)) continue;
        p.alloc[j] = q[j];
        p.action_probs[j + 1] = p.defer_mass * q[j];
    }
    return p;
}

std::vector<double> project_masked_simplex(std::span<const double> v, std::span<const double> action_mask) {
    check_lengths(v.size(), action_mask.size(), "project_masked_simplex");
    std::vector<double> out(v.size(), 0.0);
    double total = 0.0;
    for (std::size_t a = 0; a < v.size(); ++a) {
        if (action_mask[a] != 0.0) {
            out[a] = v[a];
            total += v[a];
        }
    }
    if (!(total > 0.0)) throw DegeneratePolicyError();
    for (auto& x : out) x /= total;
    return out;
}

std::size_t hard_action(const RoutingPolicy& policy, const ExpertMask& mask) {
    check_lengths(policy.action_probs.size(), mask.size() + 1, "hard_action");
    std::size_t best = 0;
    double best_p = policy.action_probs[0];
    for (std::size_t j = 0; j < mask.size(); ++j) {
        if (!mask.feasible(j)) continue;
        if (policy.action_probs[j + 1] > best_p) {  // strict: ties keep the earlier action
            best = j + 1;
            best_p = policy.action_probs[j + 1];
        }
    }
    return best;
}

}  // namespace drouter
