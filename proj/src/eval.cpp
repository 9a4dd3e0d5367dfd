#include "drouter/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "drouter/error.hpp"
#include "drouter/rng.hpp"

namespace drouter {

namespace {

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

RoutedOutcome make_outcome(const DecisionState& s, const RoutingPolicy& policy) {
    RoutedOutcome o;
    o.action = hard_action(policy, s.mask);
    o.ai_prediction = s.prob_1 >= 0.5 ? 1 : 0;
    if (o.action == 0) {
        o.prediction = o.ai_prediction;
    } else {
        const int yh = s.expert_labels[o.action - 1];
        if (yh == kLabelMissing) throw ContractError("hard action selected an unavailable expert");
        o.prediction = yh;
    }
    o.label = s.label;
    o.defer_mass = policy.defer_mass;
    o.action_probs = policy.action_probs;
    o.cohort = s.cohort;
    o.vcdr = s.vcdr;
    o.acdr = s.acdr;
    o.vim_risk_z = s.vim_risk_z;
    o.uncertainty = s.uncertainty;
    return o;
}

ClassificationBlock confusion_metrics(std::span<const RoutedOutcome> outcomes) {
    ClassificationBlock b;
    for (const auto& o : outcomes) {
        if (o.label == 1) (o.prediction == 1 ? b.tp : b.fn) += 1;
        else (o.prediction == 1 ? b.fp : b.tn) += 1;
    }
    const double tp = static_cast<double>(b.tp), fp = static_cast<double>(b.fp);
    const double fn = static_cast<double>(b.fn), tn = static_cast<double>(b.tn);
    b.accuracy = ratio(tp + tn, tp + tn + fp + fn);
    b.precision = ratio(tp, tp + fp);
    b.recall = ratio(tp, tp + fn);
    b.specificity = ratio(tn, tn + fp);
    b.f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn);
    const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    b.mcc = den > 0.0 ? (tp * tn - fp * fn) / std::sqrt(den) : 0.0;
    return b;
}

CostBlock cost_metrics(std::span<const RoutedOutcome> outcomes, const CostConfig& cfg, std::span<const double> kappa) {
    CostBlock c;
    if (outcomes.empty()) return c;
    for (const auto& o : outcomes) {
        if (o.label == 1 && o.prediction == 0) c.clinical += cfg.c_fn;
        if (o.label == 0 && o.prediction == 1) c.clinical += cfg.c_fp;
        if (o.action > 0) c.expert += cfg.gamma_tier * kappa[o.action - 1];
    }
    const double n = static_cast<double>(outcomes.size());
    c.clinical /= n;
    c.expert /= n;
    c.total = c.clinical + c.expert;
    return c;
}

DeferralBlock deferral_rates(std::span<const RoutedOutcome> outcomes, std::size_t m) {
    DeferralBlock d;
    d.soft_load.assign(m, 0.0);
    d.hard_freq.assign(m, 0.0);
    if (outcomes.empty()) return d;
    for (const auto& o : outcomes) {
        d.defer_soft += o.defer_mass;
        d.defer_hard += o.action > 0 ? 1.0 : 0.0;
        for (std::size_t j = 0; j < m; ++j) d.soft_load[j] += o.action_probs[j + 1];
        if (o.action > 0) d.hard_freq[o.action - 1] += 1.0;
    }
    const double n = static_cast<double>(outcomes.size());
    d.defer_soft /= n;
    d.defer_hard /= n;
    for (auto& v : d.soft_load) v /= n;
    for (auto& v : d.hard_freq) v /= n;
    return d;
}

ConcentrationStats concentration(std::span<const double> f) {
    ConcentrationStats s;
    const std::size_t m = f.size();
    if (m == 0) return s;
    std::vector<double> sorted(f.begin(), f.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    s.top1 = sorted[0];
    s.top2 = sorted[0] + (m > 1 ? sorted[1] : 0.0);
    for (double v : f) {
        if (v > 0.0) s.entropy -= v * std::log(v);
        s.hhi += v * v;
    }
    s.n_eff = std::exp(s.entropy);
    const double M = static_cast<double>(m);
    if (m > 1) {
        s.entropy_norm = s.entropy / std::log(M);
        s.entropy_collapse = 1.0 - s.entropy_norm;
        s.hhi_norm = (s.hhi - 1.0 / M) / (1.0 - 1.0 / M);
        double total = 0.0, diff = 0.0;
        for (double a : f) {
            total += a;
            for (double b : f) diff += std::abs(a - b);
        }
        const double gini = total > 0.0 ? diff / (2.0 * M * total) : 0.0;
        s.gini_norm = gini * M / (M - 1.0);
    }
    return s;
}

CollapseBlock collapse_diagnostics(std::span<const RoutedOutcome> outcomes, std::size_t m) {
    CollapseBlock c;
    std::vector<double> hard(m, 0.0), soft(m, 0.0);
    for (const auto& o : outcomes) {
        if (o.action > 0) {
            ++c.routed;
            hard[o.action - 1] += 1.0;
        }
        for (std::size_t j = 0; j < m; ++j) soft[j] += o.action_probs[j + 1];
    }
    if (c.routed == 0 || m == 0) return c;
    c.defined = true;
    for (auto& v : hard) v /= static_cast<double>(c.routed);
    c.hard = concentration(hard);
    const double soft_total = std::accumulate(soft.begin(), soft.end(), 0.0);
    if (soft_total > 0.0) {
        for (auto& v : soft) v /= soft_total;
        c.soft = concentration(soft);
        const double M = static_cast<double>(m), mean = 1.0 / M;
        double var = 0.0, dead = 0.0;
        for (double v : soft) {
            var += (v - mean) * (v - mean);
            dead += v < 1.0 / (10.0 * M) ? 1.0 : 0.0;
        }
        c.load_cv = std::sqrt(var / M) / mean;
        c.dead_frac = dead / M;
    }
    return c;
}

DecompositionBlock decomposition(std::span<const RoutedOutcome> outcomes) {
    DecompositionBlock d;
    std::size_t ok_ai = 0, ok_routed = 0;
    for (const auto& o : outcomes) {
        const bool ok = o.prediction == o.label;
        if (o.action == 0) {
            ++d.n_ai;
            ok_ai += ok ? 1 : 0;
        } else {
            ++d.n_routed;
            ok_routed += ok ? 1 : 0;
        }
    }
    d.n = outcomes.size();
    d.acc = ratio(static_cast<double>(ok_ai + ok_routed), static_cast<double>(d.n));
    d.acc_ai = ratio(static_cast<double>(ok_ai), static_cast<double>(d.n_ai));
    d.acc_routed = ratio(static_cast<double>(ok_routed), static_cast<double>(d.n_routed));
    d.share_ai = ratio(static_cast<double>(d.n_ai), static_cast<double>(d.n));
    d.share_routed = ratio(static_cast<double>(d.n_routed), static_cast<double>(d.n));
    return d;
}

const char* to_string(RiskAxis a) { return a == RiskAxis::structural ? "structural" : "reliability"; }

std::vector<double> rank_normalize(std::span<const double> x) {
    const std::size_t n = x.size();
    std::vector<double> r(n, 0.0);
    if (n < 2) return r;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    for (std::size_t k = 0; k < n;) {
        std::size_t e = k;
        while (e + 1 < n && x[idx[e + 1]] == x[idx[k]]) ++e;
        const double avg = 0.5 * static_cast<double>(k + e);
        for (std::size_t t = k; t <= e; ++t) r[idx[t]] = avg / static_cast<double>(n - 1);
        k = e + 1;
    }
    return r;
}

RiskTable risk_stratified_costs(std::span<const RoutedOutcome> outcomes, RiskAxis axis, const CostConfig& cfg,
                                std::size_t n_bins) {
    RiskTable t;
    t.axis = axis;
    const std::size_t n = outcomes.size();
    if (n == 0) return t;
    if (n_bins == 0) throw ConfigError("risk strata need at least one bin");
    if (n < n_bins) {
        t.warnings.push_back("fewer cases than bins; using " + std::to_string(n) + " bins");
        n_bins = n;
    }
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
        a[i] = axis == RiskAxis::structural ? outcomes[i].vcdr : outcomes[i].vim_risk_z;
        b[i] = axis == RiskAxis::structural ? outcomes[i].acdr : outcomes[i].uncertainty;
    }
    const auto ra = rank_normalize(a), rb = rank_normalize(b);
    std::vector<double> score(n);
    for (std::size_t i = 0; i < n; ++i) score[i] = 0.5 * (ra[i] + rb[i]);

    // Bin by competition rank so equal scores never straddle a bin edge.
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return score[x] < score[y]; });
    std::vector<std::size_t> bin(n);
    std::size_t first = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (k > 0 && score[idx[k]] != score[idx[k - 1]]) first = k;
        bin[idx[k]] = std::min(n_bins - 1, first * n_bins / n);
    }
    std::vector<RiskBin> bins(n_bins);
    for (std::size_t k = 0; k < n_bins; ++k) {
        bins[k].bin = k;
        bins[k].score_lo = INFINITY;
        bins[k].score_hi = -INFINITY;
    }
    for (std::size_t i = 0; i < n; ++i) {
        auto& B = bins[bin[i]];
        ++B.n;
        B.score_lo = std::min(B.score_lo, score[i]);
        B.score_hi = std::max(B.score_hi, score[i]);
        const auto& o = outcomes[i];
        if (o.label == 1 && o.prediction == 0) B.clinical_cost += cfg.c_fn;
        if (o.label == 0 && o.prediction == 1) B.clinical_cost += cfg.c_fp;
    }
    for (auto& B : bins) {
        if (B.n == 0) continue;
        B.clinical_cost /= static_cast<double>(B.n);
        t.bins.push_back(B);
    }
    return t;
}

std::vector<RoutedOutcome> ai_only_outcomes(std::span<const DecisionState* const> rows) {
    std::vector<RoutedOutcome> out;
    out.reserve(rows.size());
    for (const auto* s : rows) {
        RoutingPolicy p;
        p.defer_mass = 0.0;
        p.alloc.assign(s->experts(), 0.0);
        p.action_probs.assign(s->experts() + 1, 0.0);
        p.action_probs[0] = 1.0;
        out.push_back(make_outcome(*s, p));
    }
    return out;
}

std::vector<RoutedOutcome> random_defer_outcomes(std::span<const DecisionState* const> rows, double rate,
                                                 std::uint64_t seed) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("random-defer rate must lie in [0,1]");
    std::vector<RoutedOutcome> out;
    out.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& s = *rows[i];
        const std::size_t m = s.experts(), k = s.mask.count();
        CounterRng rng(seed, StreamDomain::reference_policy, i);
        RoutingPolicy p;
        p.alloc.assign(m, 0.0);
        p.action_probs.assign(m + 1, 0.0);
        const double u = rng.uniform_open();
        if (k > 0) {
            p.defer_mass = rate;
            for (std::size_t j = 0; j < m; ++j) {
                if (s.mask.feasible(j)) p.alloc[j] = 1.0 / static_cast<double>(k);
            }
        }
        for (std::size_t j = 0; j < m; ++j) p.action_probs[j + 1] = p.defer_mass * p.alloc[j];
        p.action_probs[0] = 1.0 - p.defer_mass;
        RoutedOutcome o = make_outcome(s, p);
        // The realized action is a draw from the soft reference policy.
        o.action = 0;
        o.prediction = o.ai_prediction;
        if (k > 0 && u < rate) {
            const auto pick = static_cast<std::size_t>(rng.uniform_open() * static_cast<double>(k));
            std::size_t seen = 0;
            for (std::size_t j = 0; j < m; ++j) {
                if (!s.mask.feasible(j)) continue;
                if (seen++ == std::min(pick, k - 1)) {
                    o.action = j + 1;
                    o.prediction = s.expert_labels[j];
                    break;
                }
            }
        }
        out.push_back(std::move(o));
    }
    return out;
}

MetricsBlock metrics_block(std::span<const RoutedOutcome> outcomes, const std::string& scope, const CostConfig& cfg,
                           std::span<const double> kappa, std::size_t m) {
    MetricsBlock b;
    b.scope = scope;
    b.n = outcomes.size();
    b.classification = confusion_metrics(outcomes);
    b.costs = cost_metrics(outcomes, cfg, kappa);
    b.deferral = deferral_rates(outcomes, m);
    b.decomposition = decomposition(outcomes);
    b.collapse = collapse_diagnostics(outcomes, m);
    return b;
}

MethodReport method_report(const std::string& method, std::span<const RoutedOutcome> outcomes, const CostConfig& cfg,
                           std::span<const double> kappa, std::size_t m) {
    MethodReport r;
    r.method = method;
    r.blocks.push_back(metrics_block(outcomes, "overall", cfg, kappa, m));
    std::vector<std::string> order;
    std::map<std::string, std::vector<RoutedOutcome>> by;
    for (const auto& o : outcomes) {
        if (!by.count(o.cohort)) order.push_back(o.cohort);
        by[o.cohort].push_back(o);
    }
    for (const auto& c : order) r.blocks.push_back(metrics_block(by[c], c, cfg, kappa, m));
    r.risk.push_back(risk_stratified_costs(outcomes, RiskAxis::structural, cfg));
    r.risk.push_back(risk_stratified_costs(outcomes, RiskAxis::reliability, cfg));
    return r;
}

namespace {

OrderedJson concentration_json(const ConcentrationStats& s) {
    return {{"top1_share", s.top1},       {"top2_share", s.top2},
            {"entropy", s.entropy},       {"entropy_norm", s.entropy_norm},
            {"entropy_collapse", s.entropy_collapse}, {"n_eff", s.n_eff},
            {"hhi", s.hhi},               {"hhi_norm", s.hhi_norm},
            {"gini_norm", s.gini_norm}};
}

OrderedJson block_json(const MetricsBlock& b) {
    OrderedJson j;
    j["scope"] = b.scope;
    j["n"] = b.n;
    const auto& c = b.classification;
    j["classification"] = {{"tp", c.tp},           {"fp", c.fp},         {"fn", c.fn},
                           {"tn", c.tn},           {"accuracy", c.accuracy}, {"precision", c.precision},
                           {"recall", c.recall},   {"specificity", c.specificity}, {"f1", c.f1},
                           {"mcc", c.mcc}};
    j["costs"] = {{"clinical_cost", b.costs.clinical}, {"expert_cost", b.costs.expert}, {"total_cost", b.costs.total}};
    j["deferral"] = {{"defer_soft", b.deferral.defer_soft},
                     {"defer_hard", b.deferral.defer_hard},
                     {"soft_load", b.deferral.soft_load},
                     {"hard_freq", b.deferral.hard_freq}};
    const auto& d = b.decomposition;
    j["decomposition"] = {{"n", d.n},           {"n_ai", d.n_ai},         {"n_routed", d.n_routed},
                          {"acc", d.acc},       {"acc_ai", d.acc_ai},     {"acc_routed", d.acc_routed},
                          {"share_ai", d.share_ai}, {"share_routed", d.share_routed}};
    OrderedJson col;
    col["defined"] = b.collapse.defined;
    col["routed"] = b.collapse.routed;
    if (b.collapse.defined) {
        col["hard"] = concentration_json(b.collapse.hard);
        col["soft"] = concentration_json(b.collapse.soft);
        col["load_cv"] = b.collapse.load_cv;
        col["dead_frac"] = b.collapse.dead_frac;
    }
    j["collapse"] = col;
    return j;
}

}  // namespace

OrderedJson to_json(const MetricsReport& r) {
    OrderedJson j;
    j["schema"] = "drouter.metrics/1";
    j["split"] = r.split;
    j["experts"] = r.experts;
    j["methods"] = OrderedJson::array();
    for (const auto& m : r.methods) {
        OrderedJson mj;
        mj["method"] = m.method;
        mj["blocks"] = OrderedJson::array();
        for (const auto& b : m.blocks) mj["blocks"].push_back(block_json(b));
        mj["risk"] = OrderedJson::array();
        for (const auto& t : m.risk) {
            OrderedJson tj;
            tj["axis"] = to_string(t.axis);
            tj["bins"] = OrderedJson::array();
            for (const auto& b : t.bins)
                tj["bins"].push_back({{"bin", b.bin},
                                      {"n", b.n},
                                      {"score_lo", b.score_lo},
                                      {"score_hi", b.score_hi},
                                      {"clinical_cost", b.clinical_cost}});
            tj["warnings"] = t.warnings;
            mj["risk"].push_back(tj);
        }
        j["methods"].push_back(mj);
    }
    return j;
}

std::string metrics_csv(const MetricsReport& r) {
    std::ostringstream out;
    out << "method,scope,n,accuracy,precision,recall,specificity,f1,mcc,clinical_cost,expert_cost,total_cost,"
           "defer_soft,defer_hard,n_ai,acc_ai,n_routed,acc_routed,top1_share,n_eff,entropy_collapse,gini_norm,"
           "hhi_norm,soft_top1_share,load_cv,dead_frac\n";
    for (const auto& m : r.methods) {
        for (const auto& b : m.blocks) {
            const auto& c = b.classification;
            const auto& d = b.decomposition;
            const auto& k = b.collapse;
            auto f = [](double v) { return format_double(v); };
            out << m.method << ',' << b.scope << ',' << b.n << ',' << f(c.accuracy) << ',' << f(c.precision) << ','
                << f(c.recall) << ',' << f(c.specificity) << ',' << f(c.f1) << ',' << f(c.mcc) << ','
                << f(b.costs.clinical) << ',' << f(b.costs.expert) << ',' << f(b.costs.total) << ','
                << f(b.deferral.defer_soft) << ',' << f(b.deferral.defer_hard) << ',' << d.n_ai << ','
                << f(d.acc_ai) << ',' << d.n_routed << ',' << f(d.acc_routed) << ',';
            if (k.defined) {
                out << f(k.hard.top1) << ',' << f(k.hard.n_eff) << ',' << f(k.hard.entropy_collapse) << ','
                    << f(k.hard.gini_norm) << ',' << f(k.hard.hhi_norm) << ',' << f(k.soft.top1) << ','
                    << f(k.load_cv) << ',' << f(k.dead_frac);
            } else {
                out << "NA,NA,NA,NA,NA,NA,NA,NA";
            }
            out << '\n';
        }
    }
    return out.str();
}

std::string risk_csv(const MetricsReport& r) {
    std::ostringstream out;
    out << "method,axis,bin,n,score_lo,score_hi,clinical_cost\n";
    for (const auto& m : r.methods) {
        for (const auto& t : m.risk) {
            for (const auto& b : t.bins) {
                out << m.method << ',' << to_string(t.axis) << ',' << b.bin << ',' << b.n << ','
                    << format_double(b.score_lo) << ',' << format_double(b.score_hi) << ','
                    << format_double(b.clinical_cost) << '\n';
            }
        }
    }
    return out.str();
}

}  // namespace drouter
