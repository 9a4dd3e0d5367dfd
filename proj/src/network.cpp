#include "drouter/network.hpp"

#include <cmath>
#include <random>

#include "drouter/error.hpp"
#include "drouter/rng.hpp"

namespace drouter {

namespace {

constexpr std::size_t idx(Block b) { return static_cast<std::size_t>(b); }

// y = tanh(W x + b), W row-major out x in.
void dense_tanh(std::span<const double> w, std::span<const double> b, std::span<const double> x,
                std::vector<double>& y) {
    const std::size_t out = b.size(), in = x.size();
    y.assign(out, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
        double acc = b[o];
        const double* row = w.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
        y[o] = std::tanh(acc);
    }
}

void dense_linear(std::span<const double> w, std::span<const double> b, std::span<const double> x,
                  std::vector<double>& y) {
    const std::size_t out = b.size(), in = x.size();
    y.assign(out, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
        double acc = b[o];
        const double* row = w.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
        y[o] = acc;
    }
}

// Backward of a dense layer given dL/d(pre-activation). Accumulates weight and
// bias gradients; adds dL/dx into gx when non-empty.
void dense_backward(std::span<const double> w, std::span<const double> x, std::span<const double> gpre,
                    std::span<double> gw, std::span<double> gb, std::span<double> gx) {
    const std::size_t out = gpre.size(), in = x.size();
    for (std::size_t o = 0; o < out; ++o) {
        const double g = gpre[o];
        if (g == 0.0) continue;
        gb[o] += g;
        double* grow = gw.data() + o * in;
        const double* row = w.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) grow[i] += g * x[i];
        if (!gx.empty()) {
            for (std::size_t i = 0; i < in; ++i) gx[i] += g * row[i];
        }
    }
}

std::vector<double> tanh_backward(std::span<const double> y, std::span<const double> gy) {
    std::vector<double> g(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) g[i] = gy[i] * (1.0 - y[i] * y[i]);
    return g;
}

}  // namespace

const char* block_name(Block b) {
    static const char* names[kBlockCount] = {"risk_w",  "risk_b",  "str_w",   "str_b",      "ai_w",      "ai_b",
                                             "fuse_w",  "fuse_b",  "defer_w", "defer_b",    "trunk_w",   "trunk_b",
                                             "gate_w",  "gate_b",  "alloc_w", "alloc_b",    "str_head_w", "str_head_b"};
    return names[idx(b)];
}

ParamLayout::ParamLayout(const Architecture& a) {
    const std::size_t lengths[kBlockCount] = {
        a.branch * 3, a.branch,  a.branch * 2,        a.branch,  a.branch * 2, a.branch,
        a.fuse * 3 * a.branch,   a.fuse,              a.fuse,    1,            a.trunk * a.fuse,
        a.trunk,    a.experts * a.trunk,              a.experts, a.experts * a.trunk,
        a.experts,  2,           1,
    };
    for (std::size_t b = 0; b < kBlockCount; ++b) {
        offset[b] = total;
        length[b] = lengths[b];
        total += lengths[b];
    }
}

RouterParams::RouterParams(const Architecture& arch) : arch_(arch), layout_(arch), values_(layout_.total, 0.0) {
    if (arch.experts == 0 || arch.branch == 0 || arch.fuse == 0 || arch.trunk == 0) {
        throw ConfigError("router architecture sizes must be positive");
    }
}

RouterParams RouterParams::initialize(const Architecture& arch, std::uint64_t seed) {
    RouterParams p(arch);
    CounterRng rng(seed, StreamDomain::init);
    auto fill = [&](Block w, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : p.block(w)) v = dist(rng);
    };
    fill(Block::risk_w, 3);
    fill(Block::str_w, 2);
    fill(Block::ai_w, 2);
    fill(Block::fuse_w, 3 * arch.branch);
    fill(Block::defer_w, arch.fuse);
    fill(Block::trunk_w, arch.fuse);
    fill(Block::gate_w, arch.trunk);
    fill(Block::alloc_w, arch.trunk);
    fill(Block::str_head_w, 2);
    return p;
}

std::span<double> RouterParams::block(Block b) noexcept {
    return std::span<double>(values_).subspan(layout_.offset[idx(b)], layout_.length[idx(b)]);
}

std::span<const double> RouterParams::block(Block b) const noexcept {
    return std::span<const double>(values_).subspan(layout_.offset[idx(b)], layout_.length[idx(b)]);
}

bool RouterParams::all_finite() const noexcept {
    for (double v : values_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

RouterState build_router_state(const DecisionState& s, const RouterParams& params) {
    RouterState r;
    r.r_risk = {s.inputs[in_vim_risk_z], s.inputs[in_quality_risk], s.inputs[in_uncertainty]};
    const auto w = params.block(Block::str_head_w);
    const double b = params.block(Block::str_head_b)[0];
    r.p_str = sigmoid(w[0] * s.inputs[in_vcdr] + w[1] * s.inputs[in_acdr] + b);
    r.r_str = {2.0 * r.p_str - 1.0, std::abs(s.prob_1 - r.p_str)};
    return r;
}

ForwardTrace forward(const RouterParams& params, const DecisionState& s, const PolicyTemperatures& temps,
                     std::span<const double> noise, const ForwardTrace* frozen) {
    const std::size_t m = params.arch().experts;
    if (s.mask.size() != m) throw ContractError("state expert count does not match the router");
    ForwardTrace t;
    t.router = build_router_state(s, params);
    const std::array<double, 2> logits = {s.inputs[in_logit_0], s.inputs[in_logit_1]};
    dense_tanh(params.block(Block::risk_w), params.block(Block::risk_b), t.router.r_risk, t.h_risk);
    dense_tanh(params.block(Block::str_w), params.block(Block::str_b), t.router.r_str, t.h_str);
    dense_tanh(params.block(Block::ai_w), params.block(Block::ai_b), logits, t.h_ai);

    std::vector<double> concat;
    concat.reserve(t.h_risk.size() * 3);
    concat.insert(concat.end(), t.h_risk.begin(), t.h_risk.end());
    concat.insert(concat.end(), t.h_str.begin(), t.h_str.end());
    concat.insert(concat.end(), t.h_ai.begin(), t.h_ai.end());
    dense_tanh(params.block(Block::fuse_w), params.block(Block::fuse_b), concat, t.fused);

    std::vector<double> f;
    dense_linear(params.block(Block::defer_w), params.block(Block::defer_b), t.fused, f);
    t.defer_logit = f[0];
    dense_tanh(params.block(Block::trunk_w), params.block(Block::trunk_b), t.fused, t.trunk);
    dense_linear(params.block(Block::gate_w), params.block(Block::gate_b), t.trunk, t.gamma);
    dense_linear(params.block(Block::alloc_w), params.block(Block::alloc_b), t.trunk, t.beta);

    t.gate = gumbel_sigmoid_gate(t.gamma, s.mask, temps.tau_g, noise);
    if (s.mask.empty()) {
        t.policy = assemble_policy(t.defer_logit, std::vector<double>(m, 0.0), s.mask);
        t.support.assign(m, 0.0);
        return t;
    }
    t.alloc = masked_allocation(t.beta, s.mask, temps.tau_a);
    if (frozen == nullptr) {
        t.support = repair_support(t.gate.hard, s.mask);
        t.repaired = t.support != t.gate.hard;
    } else {
        t.repaired = frozen->repaired;
        if (t.repaired) {
            t.support = repair_support(std::vector<double>(m, 0.0), s.mask);
        } else {
            t.support.assign(m, 0.0);
            for (std::size_t j = 0; j < m; ++j) {
                if (s.mask.feasible(j)) t.support[j] = frozen->gate.hard[j] - frozen->gate.soft[j] + t.gate.soft[j];
            }
        }
    }
    const auto q = conditional_allocation(t.alloc, t.support);
    t.policy = assemble_policy(t.defer_logit, q, s.mask);
    return t;
}

ForwardTrace policy_forward(const DecisionState& state, const RouterParams& params, const PolicyTemperatures& temps,
                            CounterRng& rng) {
    std::vector<double> noise(params.arch().experts);
    for (auto& n : noise) n = rng.logistic();
    return forward(params, state, temps, noise);
}

ForwardTrace forward_mode(const RouterParams& params, const DecisionState& state, const PolicyTemperatures& temps) {
    const std::vector<double> noise(params.arch().experts, 0.0);
    return forward(params, state, temps, noise);
}

void backward(const RouterParams& params, const DecisionState& s, const ForwardTrace& t,
              const PolicyTemperatures& temps, double grad_defer, std::span<const double> grad_alloc,
              std::span<double> grad) {
    const auto& arch = params.arch();
    const std::size_t m = arch.experts;
    if (grad.size() != params.size()) throw ContractError("gradient buffer has the wrong size");
    if (s.mask.empty()) return;  // d = 0 and q is undefined: nothing depends on the parameters

    const auto& L = params.layout();
    auto gblock = [&](Block b) { return grad.subspan(L.offset[idx(b)], L.length[idx(b)]); };

    // defer head: d = sigma(clamp(f))
    const double d = t.policy.defer_mass;
    const double g_f = std::abs(t.defer_logit) < kLogitClamp ? grad_defer * d * (1.0 - d) : 0.0;

    // q = (a * s) / sum(a * s)
    const auto& a = t.alloc.probs;
    const auto& q = t.policy.alloc;
    double denom = 0.0, c = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        denom += a[j] * t.support[j];
        c += grad_alloc[j] * q[j];
    }
    std::vector<double> g_a(m, 0.0), g_gamma(m, 0.0), g_beta(m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        if (!s.mask.feasible(j)) continue;
        const double common = (grad_alloc[j] - c) / denom;
        g_a[j] = t.support[j] * common;
        if (!t.repaired && std::abs(t.gamma[j]) < kLogitClamp) {
            const double g_s = a[j] * common;  // straight-through: d s / d soft = 1
            g_gamma[j] = g_s * t.gate.soft[j] * (1.0 - t.gate.soft[j]) / temps.tau_g;
        }
    }
    double ga_mean = 0.0;
    for (std::size_t j = 0; j < m; ++j) ga_mean += a[j] * g_a[j];
    for (std::size_t j = 0; j < m; ++j) {
        if (s.mask.feasible(j)) g_beta[j] = a[j] * (g_a[j] - ga_mean) / temps.tau_a;
    }

    // heads -> trunk
    std::vector<double> g_z(arch.trunk, 0.0);
    dense_backward(params.block(Block::gate_w), t.trunk, g_gamma, gblock(Block::gate_w), gblock(Block::gate_b), g_z);
    dense_backward(params.block(Block::alloc_w), t.trunk, g_beta, gblock(Block::alloc_w), gblock(Block::alloc_b), g_z);

    std::vector<double> g_h(arch.fuse, 0.0);
    const auto g_trunk_pre = tanh_backward(t.trunk, g_z);
    dense_backward(params.block(Block::trunk_w), t.fused, g_trunk_pre, gblock(Block::trunk_w), gblock(Block::trunk_b),
                   g_h);
    const double g_f_arr[1] = {g_f};
    dense_backward(params.block(Block::defer_w), t.fused, g_f_arr, gblock(Block::defer_w), gblock(Block::defer_b),
                   g_h);

    // fusion -> branches
    std::vector<double> concat;
    concat.reserve(arch.branch * 3);
    concat.insert(concat.end(), t.h_risk.begin(), t.h_risk.end());
    concat.insert(concat.end(), t.h_str.begin(), t.h_str.end());
    concat.insert(concat.end(), t.h_ai.begin(), t.h_ai.end());
    std::vector<double> g_concat(concat.size(), 0.0);
    const auto g_fuse_pre = tanh_backward(t.fused, g_h);
    dense_backward(params.block(Block::fuse_w), concat, g_fuse_pre, gblock(Block::fuse_w), gblock(Block::fuse_b),
                   g_concat);

    const std::size_t hb = arch.branch;
    const std::span<const double> gc(g_concat);
    const auto g_risk_pre = tanh_backward(t.h_risk, gc.subspan(0, hb));
    dense_backward(params.block(Block::risk_w), t.router.r_risk, g_risk_pre, gblock(Block::risk_w),
                   gblock(Block::risk_b), {});
    const std::array<double, 2> logits = {s.inputs[in_logit_0], s.inputs[in_logit_1]};
    const auto g_ai_pre = tanh_backward(t.h_ai, gc.subspan(2 * hb, hb));
    dense_backward(params.block(Block::ai_w), logits, g_ai_pre, gblock(Block::ai_w), gblock(Block::ai_b), {});
    std::array<double, 2> g_rstr{0.0, 0.0};
    const auto g_str_pre = tanh_backward(t.h_str, gc.subspan(hb, hb));
    dense_backward(params.block(Block::str_w), t.router.r_str, g_str_pre, gblock(Block::str_w), gblock(Block::str_b),
                   g_rstr);

    // structural head: r_str = [2 p - 1, |prob_1 - p|]
    const double p = t.router.p_str;
    const double diff = s.prob_1 - p;
    const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    const double g_p = 2.0 * g_rstr[0] - sign * g_rstr[1];
    const double g_pre = g_p * p * (1.0 - p);
    auto gw = gblock(Block::str_head_w);
    gw[0] += g_pre * s.inputs[in_vcdr];
    gw[1] += g_pre * s.inputs[in_acdr];
    gblock(Block::str_head_b)[0] += g_pre;
}

}  // namespace drouter
