#pragma once

// Deployment metrics for hard-routed decisions: confusion-matrix quality,
// realized clinical and expert cost, deferral rates, expert-concentration
// diagnostics, risk-stratified cost and the AI-only / random-defer references.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "drouter/cohort_table.hpp"
#include "drouter/json_util.hpp"
#include "drouter/objective.hpp"
#include "drouter/policy.hpp"

namespace drouter {

struct RoutedOutcome {
    std::size_t action = 0;  // 0 = keep the AI decision, j + 1 = expert j
    int prediction = 0;
    int ai_prediction = 0;
    int label = 0;
    double defer_mass = 0.0;
    std::vector<double> action_probs;
    std::string cohort;
    double vcdr = 0.0, acdr = 0.0, vim_risk_z = 0.0, uncertainty = 0.0;
};

/// Hard action by masked argmax; the final prediction is the AI call
/// 1[prob_1 >= 0.5] or the chosen expert's label.
RoutedOutcome make_outcome(const DecisionState& state, const RoutingPolicy& policy);

struct ClassificationBlock {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    double accuracy = 0.0, precision = 0.0, recall = 0.0, specificity = 0.0, f1 = 0.0, mcc = 0.0;
};

/// Ratios with a zero denominator are reported as 0.
ClassificationBlock confusion_metrics(std::span<const RoutedOutcome> outcomes);

struct CostBlock {
    double clinical = 0.0;
    double expert = 0.0;
    double total = 0.0;
};

CostBlock cost_metrics(std::span<const RoutedOutcome> outcomes, const CostConfig& cfg, std::span<const double> kappa);

struct DeferralBlock {
    double defer_soft = 0.0;
    double defer_hard = 0.0;
    std::vector<double> soft_load;  // mean pi_{i,j}
    std::vector<double> hard_freq;  // mean 1[a_i = j]
};

DeferralBlock deferral_rates(std::span<const RoutedOutcome> outcomes, std::size_t experts);

struct ConcentrationStats {
    double top1 = 0.0, top2 = 0.0;
    double entropy = 0.0;  // nats
    double entropy_norm = 0.0;
    double entropy_collapse = 0.0;
    double n_eff = 0.0;
    double hhi = 0.0, hhi_norm = 0.0;
    double gini_norm = 0.0;
};

/// Concentration measures of a distribution over M experts (sums to 1).
ConcentrationStats concentration(std::span<const double> f);

struct CollapseBlock {
    bool defined = false;  // false when nothing was routed
    std::size_t routed = 0;
    ConcentrationStats hard;  // frequencies over the routed subset
    ConcentrationStats soft;  // normalized soft loads
    double load_cv = 0.0;
    double dead_frac = 0.0;
};

CollapseBlock collapse_diagnostics(std::span<const RoutedOutcome> outcomes, std::size_t experts);

/// Overall accuracy split into AI-retained and routed parts.
struct DecompositionBlock {
    std::size_t n = 0, n_ai = 0, n_routed = 0;
    double acc = 0.0, acc_ai = 0.0, acc_routed = 0.0;
    double share_ai = 0.0, share_routed = 0.0;
};

DecompositionBlock decomposition(std::span<const RoutedOutcome> outcomes);

enum class RiskAxis { structural, reliability };
const char* to_string(RiskAxis a);

struct RiskBin {
    std::size_t bin = 0;
    std::size_t n = 0;
    double score_lo = 0.0, score_hi = 0.0;
    double clinical_cost = 0.0;
};

struct RiskTable {
    RiskAxis axis = RiskAxis::structural;
    std::vector<RiskBin> bins;
    std::vector<std::string> warnings;
};

/// Average-rank normalization to [0,1] (ties share their mean rank).
std::vector<double> rank_normalize(std::span<const double> x);

/// Structural score = mean rank of (vCDR, aCDR); reliability score = mean rank
/// of (vim_risk_z, uncertainty). Cases with equal score share a bin.
RiskTable risk_stratified_costs(std::span<const RoutedOutcome> outcomes, RiskAxis axis, const CostConfig& cfg,
                                std::size_t n_bins = 5);

std::vector<RoutedOutcome> ai_only_outcomes(std::span<const DecisionState* const> rows);

/// Defers each case with probability `rate` to a uniformly random feasible expert.
std::vector<RoutedOutcome> random_defer_outcomes(std::span<const DecisionState* const> rows, double rate,
                                                 std::uint64_t seed);

struct MetricsBlock {
    std::string scope;  // "overall" or a cohort tag
    std::size_t n = 0;
    ClassificationBlock classification;
    CostBlock costs;
    DeferralBlock deferral;
    DecompositionBlock decomposition;
    CollapseBlock collapse;
};

MetricsBlock metrics_block(std::span<const RoutedOutcome> outcomes, const std::string& scope, const CostConfig& cfg,
                           std::span<const double> kappa, std::size_t experts);

struct MethodReport {
    std::string method;
    std::vector<MetricsBlock> blocks;  // overall first, then cohorts in first-appearance order
    std::vector<RiskTable> risk;
};

MethodReport method_report(const std::string& method, std::span<const RoutedOutcome> outcomes, const CostConfig& cfg,
                           std::span<const double> kappa, std::size_t experts);

struct MetricsReport {
    std::string split;
    std::size_t experts = 0;
    std::vector<MethodReport> methods;  // router, ai_only, random_defer
};

OrderedJson to_json(const MetricsReport& r);
/// One row per (method, scope) with the scalar metrics.
std::string metrics_csv(const MetricsReport& r);
/// Long format: method, axis, bin, n, score_lo, score_hi, clinical_cost.
std::string risk_csv(const MetricsReport& r);

}  // namespace drouter
