// Acceptance checks: one PASS/FAIL line per criterion with the measured
// value and its pinned tolerance. Exit status is the number of failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../unit/gradcheck.hpp"
#include "drouter/cohort_sim.hpp"
#include "drouter/eval.hpp"
#include "drouter/generator.hpp"
#include "drouter/pipeline.hpp"
#include "drouter/policy.hpp"
#include "drouter/prior.hpp"
#include "drouter/rank_js.hpp"

using namespace drouter;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string config_path(const std::string& name) { return std::string(DROUTER_SOURCE_DIR "/configs/") + name; }

GenerationConfig load_generation(const std::string& name) {
    std::ifstream in(config_path(name));
    if (!in) throw ConfigError("missing preset " + name);
    return generation_config_from_json(Json::parse(in));
}

// Every report produced along the way is re-checked by criterion 10.
std::vector<MetricsReport> g_reports;

// 1. Masking exactness.
Outcome masking_exactness() {
    constexpr int kDraws = 10000;
    constexpr double kSumTol = 1e-9;
    std::mt19937_64 gen(101);
    std::normal_distribution<double> nrm(0.0, 4.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int bad_zero = 0, bad_sum = 0, empties = 0, singles = 0, degenerate = 0;
    double worst = 0.0;
    for (int t = 0; t < kDraws; ++t) {
        const std::size_t m = 1 + gen() % 12;
        ExpertMask mask(m);
        if (t % 10 == 1) {
            mask.set(gen() % m, true);
        } else if (t % 10 != 0) {
            const double rate = u(gen);
            for (std::size_t j = 0; j < m; ++j) mask.set(j, u(gen) < rate);
        }
        empties += mask.count() == 0;
        singles += mask.count() == 1;
        std::vector<double> gamma(m), beta(m);
        const double spread = t % 7 == 0 ? 200.0 : 1.0;
        for (auto& x : gamma) x = spread * nrm(gen);
        for (auto& x : beta) x = spread * nrm(gen);
        const double tau_g = 0.05 + 5.0 * u(gen), tau_a = 0.05 + 5.0 * u(gen);
        CounterRng rng(t, StreamDomain::test);
        const auto gate = gumbel_sigmoid_gate(gamma, mask, tau_g, rng);
        RoutingPolicy p;
        const double defer_logit = spread * nrm(gen);
        if (mask.empty()) {
            p = assemble_policy(defer_logit, std::vector<double>(m, 0.0), mask);
        } else {
            const auto alloc = masked_allocation(beta, mask, tau_a);
            try {
                const auto q = conditional_allocation(alloc, repair_support(gate.hard, mask));
                p = assemble_policy(defer_logit, q, mask);
            } catch (const DegenerateSupportError&) {
                // Softmax mass on the selected support underflowed below the clamp.
                ++degenerate;
                continue;
            }
        }
        for (std::size_t j = 0; j < m; ++j) {
            if (mask.feasible(j)) continue;
            if (p.action_probs[j + 1] != 0.0 || gate.hard[j] != 0.0 || gate.soft[j] != 0.0) ++bad_zero;
        }
        const double dev = std::abs(std::accumulate(p.action_probs.begin(), p.action_probs.end(), 0.0) - 1.0);
        worst = std::max(worst, dev);
        if (!(dev <= kSumTol)) ++bad_sum;
    }
    return {bad_zero == 0 && bad_sum == 0 && empties > 0 && singles > 0,
            fmt("%d draws (%d empty, %d singleton, %d rejected by the support clamp): %d nonzero infeasible entries, "
                "max |sum-1| = %.2e (tol %.0e)",
                kDraws, empties, singles, degenerate, bad_zero, worst, kSumTol)};
}

// 2. Gradient oracle.
Outcome gradient_oracle() {
    constexpr int kCases = 50;
    constexpr double kShare = 0.95;
    std::mt19937_64 gen(202);
    const Architecture arch;
    std::size_t coords = 0, rel_ok = 0, abs_ok = 0, failed = 0;
    for (int t = 0; t < kCases; ++t) {
        auto c = testkit::random_single_case(gen, arch);
        const auto r = testkit::check_gradient(c, 1e-5, 1e-3, 1e-6);
        coords += r.coords;
        rel_ok += r.rel_ok;
        abs_ok += r.abs_ok;
        failed += r.failed;
    }
    const double share = static_cast<double>(rel_ok) / static_cast<double>(coords);
    return {share >= kShare && failed == 0,
            fmt("%d cases, %zu coords: %.4f within rel 1e-3 (need >= %.2f), %zu within abs 1e-6, %zu failed", kCases,
                coords, share, kShare, abs_ok, failed)};
}

// 3. Gumbel-sigmoid marginal.
Outcome gate_marginal() {
    constexpr int kDraws = 100000;
    constexpr double kSe = 3.0;
    int bad = 0;
    double worst = 0.0;
    const ExpertMask mask = ExpertMask::all(1);
    for (int v = 0; v < 20; ++v) {
        const double g = -4.0 + 8.0 * v / 19.0;
        const std::vector<double> gamma{g};
        CounterRng rng(303, StreamDomain::test, static_cast<std::uint64_t>(v));
        double hits = 0.0;
        for (int i = 0; i < kDraws; ++i) hits += gumbel_sigmoid_gate(gamma, mask, 0.7, rng).hard[0];
        const double p = 1.0 / (1.0 + std::exp(-g));
        const double z = std::abs(hits / kDraws - p) / std::sqrt(p * (1 - p) / kDraws);
        worst = std::max(worst, z);
        bad += z > kSe;
    }
    return {bad == 0, fmt("20 logits x %d draws: max deviation %.2f SE (tol %.0f SE)", kDraws, worst, kSe)};
}

std::vector<double> project_simplex(std::vector<double> v) {
    auto s = v;
    std::sort(s.begin(), s.end(), std::greater<>());
    double cum = 0.0, theta = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
        cum += s[k];
        const double t = (cum - 1.0) / static_cast<double>(k + 1);
        if (s[k] - t > 0.0) theta = t;
    }
    for (auto& x : v) x = std::max(x - theta, 0.0);
    return v;
}

// 4. GSDP load matching.
Outcome gsdp_load_matching() {
    constexpr double kKlTol = 1e-6, kLoadTol = 1e-4;
    const std::size_t m = 4, n = 6;
    PriorTree tree;
    tree.experts = m;
    PriorLevel level;
    level.support.assign(m, 1);
    tree.group.push_back(level);
    const std::vector<double> prior{0.4, 0.3, 0.2, 0.1};
    tree.p_grp.push_back(prior);
    tree.group_defined.push_back(true);

    std::mt19937_64 gen(404);
    std::vector<RoutingPolicy> pol(n);
    const std::vector<int> groups(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        pol[i].defer_mass = 0.1 + 0.15 * static_cast<double>(i);
        pol[i].alloc = testkit::random_simplex(gen, m);
    }
    const double step = 0.5;
    int iters = 0;
    for (; iters < 20000; ++iters) {
        PenaltyGradient g;
        g.reset(n, m);
        const double v = gsdp_penalty(pol, groups, tree, &g).value;
        if (v < 1e-10) break;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> x(m);
            for (std::size_t j = 0; j < m; ++j) x[j] = pol[i].alloc[j] - step * g.alloc[i][j];
            pol[i].alloc = project_simplex(x);
        }
    }
    double D = 0.0;
    std::vector<double> Q(m, 0.0);
    for (const auto& p : pol) {
        D += p.defer_mass;
        for (std::size_t j = 0; j < m; ++j) Q[j] += p.defer_mass * p.alloc[j];
    }
    double kl = 0.0, gap = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        const double q = Q[j] / D;
        if (q > 0.0) kl += q * std::log(q / prior[j]);
        gap = std::max(gap, std::abs(Q[j] - D * prior[j]));
    }
    return {kl < kKlTol && gap < kLoadTol,
            fmt("%d projected-gradient steps: KL = %.2e (tol %.0e), max |Q - D p| = %.2e (tol %.0e)", iters, kl,
                kKlTol, gap, kLoadTol)};
}

// 5. Rank-JS activation.
Outcome rank_activation() {
    constexpr int kAllocs = 1000;
    std::mt19937_64 gen(505);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int disagree = 0, full_prefix = 0, nonzero = 0, near_ref = 0;
    for (int t = 0; t < kAllocs; ++t) {
        const std::size_t k = 1 + gen() % 6;
        const double varrho = 0.2 + 0.7 * u(gen), margin = 0.1 * u(gen);
        auto r = testkit::random_simplex(gen, k);
        if (t % 2 == 0) {
            // Close to the reference: excess bounded by the margin.
            const auto g = truncated_geometric(k, varrho);
            for (std::size_t s = 0; s < k; ++s) r[s] = g[s] * (1.0 + 0.5 * margin * (u(gen) - 0.5));
            const double z = std::accumulate(r.begin(), r.end(), 0.0);
            for (auto& x : r) x /= z;
        }
        std::sort(r.begin(), r.end(), std::greater<>());
        const auto g = truncated_geometric(k, varrho);
        bool brute = false;
        double excess = 0.0;
        for (std::size_t s = 1; s < k; ++s) {
            double a = 0.0, b = 0.0;
            for (std::size_t v = 0; v < s; ++v) a += r[v], b += g[v];
            excess = std::max(excess, a - b);
            brute = brute || a - b > margin;
        }
        const bool chi = rank_penalty_active(r, g, margin);
        disagree += chi != brute;
        if (excess <= margin) {
            ++near_ref;
            if (chi) ++disagree;
        }
        // The full prefix never activates with a nonnegative margin.
        if (k > 0 && max_prefix_excess(r, g) > margin && !brute) ++full_prefix;

        // Inactive and undeferred samples contribute exactly zero.
        RoutingPolicy p;
        p.alloc = r;
        p.defer_mass = chi ? 0.0 : 0.3 + 0.6 * u(gen);
        p.action_probs.push_back(1.0 - p.defer_mass);
        for (double x : r) p.action_probs.push_back(p.defer_mass * x);
        RankJsConfig rc;
        rc.varrho = varrho;
        rc.margin = margin;
        const std::vector<RoutingPolicy> one{p};
        const std::vector<ExpertMask> mk{ExpertMask::all(k)};
        if (rank_js_penalty(one, mk, rc) != 0.0) ++nonzero;
    }
    return {disagree == 0 && full_prefix == 0 && nonzero == 0 && near_ref > 0,
            fmt("%d allocations (k <= 6, %d within margin): %d disagreements, %d full-prefix firings, %d nonzero "
                "inactive/undeferred penalties",
                kAllocs, near_ref, disagree, full_prefix, nonzero)};
}

// 6. Poisson-binomial sampler.
Outcome sampler_exactness() {
    constexpr int kSettings = 20, kDraws = 100000;
    // An exact sampler's expected TV over 2^J patterns can exceed the
    // tolerance at 1e5 draws; such settings draw until it is below half.
    constexpr double kTv = 0.01, kPmfTol = 1e-12;
    std::mt19937_64 gen(606);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    double worst_tv = 0.0, worst_pmf = 0.0, worst_floor = 0.0;
    int violations = 0, boosted = 0;
    for (int s = 0; s < kSettings; ++s) {
        const std::size_t J = 1 + gen() % 8;
        std::vector<double> phi(J);
        for (auto& p : phi) p = u(gen);
        const std::size_t k_min = gen() % (J + 1);
        // Direct convolution.
        std::vector<double> conv{1.0};
        for (double p : phi) {
            std::vector<double> next(conv.size() + 1, 0.0);
            for (std::size_t k = 0; k < conv.size(); ++k) next[k] += conv[k] * (1 - p), next[k + 1] += conv[k] * p;
            conv = next;
        }
        const auto pmf = poisson_binomial_pmf(phi);
        for (std::size_t k = 0; k <= J; ++k) worst_pmf = std::max(worst_pmf, std::abs(pmf[k] - conv[k]));

        std::vector<double> law(std::size_t{1} << J, 0.0);
        double z = 0.0;
        for (std::size_t mpat = 0; mpat < law.size(); ++mpat) {
            double p = 1.0;
            std::size_t k = 0;
            for (std::size_t j = 0; j < J; ++j) {
                const bool c = (mpat >> j) & 1U;
                p *= c ? phi[j] : 1 - phi[j];
                k += c;
            }
            if (k >= k_min) law[mpat] = p, z += p;
        }
        double floor_1e5 = 0.0;
        for (double p : law) floor_1e5 += 0.5 * std::sqrt(2.0 * (p / z) * (1 - p / z) / (M_PI * kDraws));
        long draws = kDraws;
        if (floor_1e5 > 0.5 * kTv) {
            draws = static_cast<long>(std::ceil(kDraws * std::pow(floor_1e5 / (0.5 * kTv), 2)));
            ++boosted;
        }
        std::vector<double> freq(law.size(), 0.0);
        CounterRng rng(606, StreamDomain::test, static_cast<std::uint64_t>(s));
        for (long i = 0; i < draws; ++i) {
            const auto c = conditional_correctness_sampler(phi, k_min, rng);
            std::size_t mpat = 0, k = 0;
            for (std::size_t j = 0; j < J; ++j) mpat |= std::size_t{c[j]} << j, k += c[j];
            violations += k < k_min;
            freq[mpat] += 1.0;
        }
        double tv = 0.0, floor = 0.0;
        for (std::size_t mpat = 0; mpat < law.size(); ++mpat) {
            const double p = law[mpat] / z;
            tv += 0.5 * std::abs(freq[mpat] / static_cast<double>(draws) - p);
            floor += 0.5 * std::sqrt(2.0 * p * (1 - p) / (M_PI * static_cast<double>(draws)));
        }
        worst_tv = std::max(worst_tv, tv);
        worst_floor = std::max(worst_floor, floor);
    }
    return {worst_tv < kTv && violations == 0 && worst_pmf <= kPmfTol,
            fmt("%d settings (J <= 8) x >= %d draws (%d raised above 1e5 for statistical power): max TV %.4f (tol "
                "%.2f; largest exact-sampler expectation %.4f), %d violations, max |pmf - conv| %.1e (tol %.0e)",
                kSettings, kDraws, boosted, worst_tv, kTv, worst_floor, violations, worst_pmf, kPmfTol)};
}

// 7. AL budget control.
Outcome budget_control() {
    constexpr double kSlack = 0.02;
    const auto cohort = generate_cohort(load_generation("generation.default.json")).table;
    auto cfg = load_run_config(config_path("run.sweep.json"));
    cfg.sweep.targets = {0.25, 0.40, 0.60};
    const auto points = run_sweep(cohort, cfg);
    bool ok = true;
    std::string seq;
    double prev = -1.0;
    for (const auto& p : points) {
        ok = ok && p.defer_soft <= p.target + kSlack && p.defer_soft >= prev;
        prev = p.defer_soft;
        seq += fmt("%s%.2f->%.3f", seq.empty() ? "" : ", ", p.target, p.defer_soft);
        g_reports.push_back(p.report);
    }
    return {ok, fmt("defer_soft by target: %s (need <= target + %.2f and nondecreasing)", seq.c_str(), kSlack)};
}

const MetricsBlock& overall(const MetricsReport& r, const std::string& method) {
    for (const auto& m : r.methods)
        if (m.method == method) return m.blocks.front();
    throw ContractError("missing method " + method);
}

// 8. Anti-collapse effect.
Outcome anti_collapse() {
    constexpr int kSeeds = 5;
    constexpr double kClinicalRel = 0.10;
    const auto cohort = generate_cohort(load_generation("generation.dominant_expert.json")).table;
    const auto with = load_run_config(config_path("run.default.json"));
    const auto without = load_run_config(config_path("run.no_regularizers.json"));
    double top_with = 0.0, top_without = 0.0, clin_with = 0.0, clin_without = 0.0;
    for (int s = 1; s <= kSeeds; ++s) {
        for (const auto* base : {&with, &without}) {
            auto cfg = *base;
            cfg.seed = static_cast<std::uint64_t>(s);
            const auto run = run_training(cohort, cfg);
            const auto rep = run_evaluation(run.checkpoint, cohort, "test", cfg);
            g_reports.push_back(rep);
            const auto& b = overall(rep, "router");
            const bool reg = base == &with;
            (reg ? top_with : top_without) += b.collapse.soft.top1 / kSeeds;
            (reg ? clin_with : clin_without) += b.costs.clinical / kSeeds;
        }
    }
    const double rel = std::abs(clin_with - clin_without) / clin_without;
    return {top_with < top_without && rel < kClinicalRel,
            fmt("mean soft Top1 %.3f with vs %.3f without; clinical cost %.4f vs %.4f (rel diff %.3f, tol %.2f)",
                top_with, top_without, clin_with, clin_without, rel, kClinicalRel)};
}

// 9. Routing utility.
Outcome routing_utility() {
    constexpr int kSeeds = 5;
    constexpr double kMargin = 0.20;
    auto gen_cfg = load_generation("generation.complementary.json");
    const auto base = load_run_config(config_path("run.default.json"));
    bool ok = true;
    double worst_ai = 0.0, worst_rand = 0.0, mean_router = 0.0, mean_ai = 0.0, mean_rand = 0.0;
    for (int s = 1; s <= kSeeds; ++s) {
        gen_cfg.seed = 100 + static_cast<std::uint64_t>(s);
        const auto cohort = generate_cohort(gen_cfg).table;
        auto cfg = base;
        cfg.seed = static_cast<std::uint64_t>(s);
        const auto run = run_training(cohort, cfg);
        const auto rep = run_evaluation(run.checkpoint, cohort, "test", cfg);
        g_reports.push_back(rep);
        const double router = overall(rep, "router").costs.total;
        const double ai = overall(rep, "ai_only").costs.clinical;
        const double rnd = overall(rep, "random_defer").costs.total;
        ok = ok && router <= (1.0 - kMargin) * ai && router <= (1.0 - kMargin) * rnd;
        worst_ai = std::max(worst_ai, router / ai);
        worst_rand = std::max(worst_rand, router / rnd);
        mean_router += router / kSeeds;
        mean_ai += ai / kSeeds;
        mean_rand += rnd / kSeeds;
    }
    return {ok, fmt("mean router total %.3f vs AI-only clinical %.3f and random-defer total %.3f; worst ratios "
                    "%.3f / %.3f (need <= %.2f on every seed)",
                    mean_router, mean_ai, mean_rand, worst_ai, worst_rand, 1.0 - kMargin)};
}

// 10. Metric correctness.
Outcome metric_correctness() {
    constexpr int kTables = 100;
    constexpr double kTol = 1e-12;
    std::mt19937_64 gen(1010);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int mismatches = 0;
    auto near = [&](double a, double b) {
        if (!(std::abs(a - b) <= kTol * std::max(1.0, std::abs(b)))) ++mismatches;
    };
    for (int t = 0; t < kTables; ++t) {
        const std::size_t m = 2 + gen() % 6, n = 3 + gen() % 30;
        std::vector<RoutedOutcome> v(n);
        for (auto& o : v) {
            o.label = static_cast<int>(gen() % 2);
            o.action = gen() % 3 == 0 ? 0 : 1 + gen() % m;
            o.prediction = u(gen) < 0.75 ? o.label : 1 - o.label;
            o.action_probs = testkit::random_simplex(gen, m + 1);
            o.defer_mass = 1.0 - o.action_probs[0];
        }
        double tp = 0, fp = 0, fn = 0, tn = 0;
        for (const auto& o : v) {
            tp += o.label && o.prediction;
            fp += !o.label && o.prediction;
            fn += o.label && !o.prediction;
            tn += !o.label && !o.prediction;
        }
        const auto c = confusion_metrics(v);
        near(c.accuracy, (tp + tn) / static_cast<double>(n));
        near(c.precision, tp + fp > 0 ? tp / (tp + fp) : 0.0);
        near(c.recall, tp + fn > 0 ? tp / (tp + fn) : 0.0);
        near(c.specificity, tn + fp > 0 ? tn / (tn + fp) : 0.0);
        near(c.f1, 2 * tp + fp + fn > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0);
        const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
        near(c.mcc, den > 0 ? (tp * tn - fp * fn) / std::sqrt(den) : 0.0);

        std::vector<double> f(m, 0.0);
        double routed = 0.0;
        for (const auto& o : v)
            if (o.action > 0) f[o.action - 1] += 1.0, routed += 1.0;
        const auto col = collapse_diagnostics(v, m);
        if (routed == 0.0) {
            if (col.defined) ++mismatches;
            continue;
        }
        for (auto& x : f) x /= routed;
        auto sorted = f;
        std::sort(sorted.begin(), sorted.end());
        double h = 0.0, hhi = 0.0, rank_sum = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            if (f[j] > 0) h -= f[j] * std::log(f[j]);
            hhi += f[j] * f[j];
            rank_sum += static_cast<double>(j + 1) * sorted[j];
        }
        const double M = static_cast<double>(m);
        near(col.hard.top1, sorted.back());
        near(col.hard.entropy, h);
        near(col.hard.n_eff, std::exp(h));
        near(col.hard.hhi, hhi);
        near(col.hard.hhi_norm, (hhi - 1 / M) / (1 - 1 / M));
        near(col.hard.gini_norm, (2 * rank_sum / M - (M + 1) / M) * M / (M - 1));
        const auto d = decomposition(v);
        near(d.acc * static_cast<double>(d.n), d.acc_ai * static_cast<double>(d.n_ai) +
                                                   d.acc_routed * static_cast<double>(d.n_routed));
    }
    // Identity on every report produced above.
    std::size_t blocks = 0;
    int identity_bad = 0;
    for (const auto& r : g_reports)
        for (const auto& m : r.methods)
            for (const auto& b : m.blocks) {
                ++blocks;
                const auto& d = b.decomposition;
                const double lhs = static_cast<double>(d.n) * d.acc;
                const double rhs = static_cast<double>(d.n_ai) * d.acc_ai + static_cast<double>(d.n_routed) * d.acc_routed;
                if (std::abs(lhs - rhs) > 1e-9 || d.n_ai + d.n_routed != d.n) ++identity_bad;
            }
    return {mismatches == 0 && identity_bad == 0,
            fmt("%d random tables: %d mismatches (tol %.0e); decomposition identity broken on %d of %zu report blocks",
                kTables, mismatches, kTol, identity_bad, blocks)};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// 11. End-to-end determinism.
Outcome determinism() {
    namespace fs = std::filesystem;
    const fs::path root = fs::temp_directory_path() / "drouter_acceptance";
    fs::remove_all(root);
    std::vector<std::array<std::string, 3>> runs;
    for (const char* tag : {"a", "b"}) {
        const fs::path dir = root / tag;
        fs::create_directories(dir);
        auto g = load_generation("generation.default.json");
        g.seed = 11;
        write_cohort_csv((dir / "cohort.csv").string(), generate_cohort(g).table);
        const auto cohort = read_cohort_csv((dir / "cohort.csv").string());
        auto cfg = load_run_config(config_path("run.default.json"));
        const auto run = run_training(cohort, cfg);
        save_checkpoint((dir / "checkpoint.json").string(), run.checkpoint);
        const auto ckpt = load_checkpoint((dir / "checkpoint.json").string());
        const auto rep = run_evaluation(ckpt, cohort, "test", ckpt.config);
        g_reports.push_back(rep);
        std::ofstream((dir / "metrics.json")) << to_json(rep).dump(2);
        runs.push_back({slurp(dir / "cohort.csv"), slurp(dir / "checkpoint.json"), slurp(dir / "metrics.json")});
    }
    fs::remove_all(root);
    const bool csv = runs[0][0] == runs[1][0], ck = runs[0][1] == runs[1][1], rp = runs[0][2] == runs[1][2];
    return {csv && ck && rp && !runs[0][0].empty(),
            fmt("cohort CSV %s, checkpoint %s, report %s across two runs", csv ? "identical" : "DIFFERS",
                ck ? "identical" : "DIFFERS", rp ? "identical" : "DIFFERS")};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"masking exactness", masking_exactness},     {"gradient oracle", gradient_oracle},
        {"gate marginal", gate_marginal},             {"GSDP load matching", gsdp_load_matching},
        {"rank-JS activation", rank_activation},      {"correctness sampler", sampler_exactness},
        {"budget control", budget_control},           {"anti-collapse", anti_collapse},
        {"routing utility", routing_utility},         {"metric correctness", metric_correctness},
        {"end-to-end determinism", determinism},
    };
    // Runtime budgets in seconds; criteria without one are unbounded.
    const double budget[] = {5, 30, 0, 0, 0, 0, 300, 0, 0, 0, 0};
    int failures = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (budget[k] > 0 && secs > budget[k]) {
            o.pass = false;
            o.detail += fmt(" [over the %.0f s budget]", budget[k]);
        }
        failures += !o.pass;
        std::printf("%s criterion %2zu (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].first,
                    o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures;
}
