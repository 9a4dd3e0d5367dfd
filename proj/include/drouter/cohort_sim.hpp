#pragma once

// Semi-synthetic expert labels from optic-disc/cup geometry: ellipse
// biomarkers, a per-expert logistic evidence model with temperature
// calibration, case-specific operating points, exact sampling of expert
// correctness under a minimum-panel-quality constraint, and label-matched
// retrieval of pseudo-labels for cohorts without expert reads.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "drouter/cohort_table.hpp"
#include "drouter/rng.hpp"

namespace drouter {

struct Ellipse {
    double w = 1.0;  // width (pixels)
    double h = 1.0;  // height (pixels)
    double theta = 0.0;
    double cx = 0.0;
    double cy = 0.0;
};

struct EllipseAnnotation {
    Ellipse disc;
    Ellipse cup;
};

struct Biomarkers {
    double vcdr = 0.0;
    double acdr = 0.0;
    double dec = 0.0;
    double vd_disc = 0.0;
};

/// 2 sqrt(a^2 sin^2 theta + b^2 cos^2 theta) with a = w/2, b = h/2.
double vertical_diameter(const Ellipse& e);

/// Throws DataError for a degenerate disc or non-positive axes.
Biomarkers structural_biomarkers(const EllipseAnnotation& ann);

using EvidenceFeatures = std::array<double, 5>;

/// [1, vCDR, aCDR, log VD_disc, dec].
EvidenceFeatures evidence_features(const Biomarkers& b);

struct EvidenceFit {
    EvidenceFeatures w{};
    EvidenceFeatures std_error{};  // Wald standard errors from the final Hessian
    int iterations = 0;
    bool converged = false;
    bool ridge = false;  // separation detected, refitted with the L2 fallback
    std::vector<std::string> warnings;
};

inline constexpr double kEvidenceRidge = 1e-4;

/// Maximum-likelihood logistic regression by damped Newton (step halving).
/// Stops when the gradient infinity-norm is below 1e-8 or after 100 iterations.
EvidenceFit fit_evidence_model(std::span<const EvidenceFeatures> phi, std::span<const int> y);

struct TemperatureFit {
    double T = 1.0;
    bool at_boundary = false;
    std::vector<std::string> warnings;
};

/// argmin_T NLL(sigma(s / T)) over log T in [-2.5, 2.5] by golden-section search.
TemperatureFit calibrate_temperature(std::span<const double> scores, std::span<const int> y);

struct YoudenResult {
    double tau = 0.0;
    double index = 0.0;  // Se + Sp - 1 at tau, predicting positive for vCDR > tau
};

/// Best midpoint between sorted unique values; ties go to the smallest tau.
YoudenResult youden_threshold(std::span<const double> vcdr, std::span<const int> y);

struct ExpertProfile {
    EvidenceFeatures w{};
    double T = 1.0;
    double se = 0.8;
    double sp = 0.8;
    double alpha = 1.0;
    double gamma = 1.0;
};

struct OperatingPoint {
    double se = 0.0;
    double sp = 0.0;
    double beta = 0.0;  // geometry-only difficulty
};

double logit(double p);

/// beta = exp(-kappa_diff |vCDR_med - tau|); logit Se and logit Sp shifted by
/// the calibrated evidence and penalized by beta.
OperatingPoint operating_points(double vcdr_med, double p_cal, const ExpertProfile& profile, double tau,
                                const CohortGlobals& globals);

/// Suffix table q_j(s) = P(sum_{t >= j} c_t = s), rows j = 0..J.
std::vector<std::vector<double>> poisson_binomial_suffix(std::span<const double> phi);

/// P(K = k) for k = 0..J.
std::vector<double> poisson_binomial_pmf(std::span<const double> phi);

/// Exact draw of c ~ prod Bernoulli(phi_j) conditioned on sum c >= k_min.
/// Throws InfeasibleConstraintError when P(K >= k_min) < 1e-300.
std::vector<std::uint8_t> conditional_correctness_sampler(std::span<const double> phi, std::size_t k_min,
                                                          CounterRng& rng);

/// y_hat_j = y when c_j = 1, else 1 - y.
std::vector<std::int8_t> instantiate_expert_labels(int y, std::span<const std::uint8_t> correct);

struct EmbeddingPair {
    std::vector<double> first;
    std::vector<double> second;
};

struct RetrievalPoolRow {
    const EmbeddingPair* embedding = nullptr;
    const std::vector<std::int8_t>* expert_labels = nullptr;
    int label = 0;
};

struct RetrievalResult {
    std::vector<std::size_t> neighbors;  // pool indices, best first
    std::vector<double> fused;           // fused score of each neighbor
    std::vector<std::int8_t> labels;     // per expert: first neighbor that has it, else missing
    std::vector<std::string> warnings;
};

/// Per family: cosine scores against the label-matched pool, min-max
/// normalized per query; fused by the unweighted mean; top k kept (ties to the
/// lower pool index).
RetrievalResult retrieve_pseudo_labels(const EmbeddingPair& query, std::span<const RetrievalPoolRow> pool,
                                       int y_query, std::size_t k, std::size_t experts);

void l2_normalize(std::vector<double>& v);

}  // namespace drouter
