#pragma once

// Synthetic multi-cohort benchmark: ellipse annotations per annotator, a
// simulated frozen AI model, risk signals, availability masks and expert
// labels from the geometry pipeline (or label-matched retrieval), split into
// train/val/test with fixed counts.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "drouter/cohort_sim.hpp"
#include "drouter/cohort_table.hpp"
#include "drouter/json_util.hpp"
#include "drouter/parallel.hpp"

namespace drouter {

/// p_ai = sigmoid(scale (vCDR - threshold) + shift + (noise + quality_gain q) e), e ~ N(0,1).
struct AiModelSpec {
    double scale = 25.0;
    double threshold = 0.64;
    double shift = 0.0;
    double noise = 0.3;
    double quality_gain = 0.0;
};

struct SubCohortSpec {
    std::string name;
    std::size_t train = 0, val = 0, test = 0;
    double prevalence = 0.3;
    std::vector<std::size_t> panel;  // 0-based expert indices annotating this cohort
    bool retrieval = false;          // labels from label-matched retrieval instead of the panel
    double availability = 0.85;      // per expert, dataset-style regime
    double ood_level = 0.0;          // centre of vim_risk_z
    AiModelSpec ai;

    std::size_t size() const noexcept { return train + val + test; }
};

struct ExpertSpec {
    double se = 0.8;
    double sp = 0.85;
    double alpha = 1.0;
    double gamma = 1.0;
    double fixed_phi = -1.0;  // in (0,1): fixed correctness probability, bypassing operating points
};

struct AnatomySpec {
    double disc_log_mean = 5.7;  // log pixels
    double disc_log_sd = 0.12;
    double aspect_mean = 0.04;   // log(h / w)
    double aspect_sd = 0.05;
    double cup_min = 0.2;        // cup scale = cup_min + cup_span * Beta(class)
    double cup_span = 0.7;
    double cup_beta_neg_a = 3.0, cup_beta_neg_b = 5.0;
    double cup_beta_pos_a = 5.0, cup_beta_pos_b = 3.0;
    double annotator_jitter = 0.05;  // log-scale sd of the annotator's cup size
    double center_jitter = 0.03;     // cup-centre offset sd, fraction of disc VD
};

struct GenerationConfig {
    std::size_t experts = 12;
    std::uint64_t seed = 2026;
    CohortGlobals globals;
    std::string mask_regime = "dataset";  // or "uniform"
    double uniform_availability = 0.5;
    double quality_contamination = 0.1;
    double quality_base_max = 0.3;
    std::size_t retrieval_k = 7;
    std::size_t embedding_dim = 16;
    double embedding_noise = 0.35;
    std::vector<ExpertSpec> expert_profiles;
    std::vector<SubCohortSpec> cohorts;
    AnatomySpec anatomy;

    /// Defaults scaled from a 3-cohort fundus benchmark (N = 2000, M = 12).
    static GenerationConfig defaults();
    void validate() const;
};

Json to_json(const GenerationConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
GenerationConfig generation_config_from_json(const Json& j);

struct ExpertCalibration {
    EvidenceFit fit;
    TemperatureFit temperature;
    bool fitted = false;
};

struct GenerationResult {
    CohortTable table;
    std::vector<ExpertCalibration> experts;
    YoudenResult youden;
    std::map<std::string, EmbeddingPair> embeddings;  // keyed by row id
    std::vector<std::string> warnings;
};

GenerationResult generate_cohort(const GenerationConfig& cfg, Execution exec = Execution::parallel);

/// Manifest: config hash, seed and row counts per split and sub-cohort.
OrderedJson generation_manifest(const GenerationConfig& cfg, const GenerationResult& res);

/// Sidecar table: id, a_0..a_{d-1}, b_0..b_{d-1}.
void write_embeddings_csv(const std::string& path, const GenerationResult& res);

}  // namespace drouter
