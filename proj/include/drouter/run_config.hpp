#pragma once

// Run configuration for training, evaluation and sweeps. Every field has a
// default; the JSON form rejects unknown keys and `key.path=value`
// overrides are applied on top.

#include <cstdint>
#include <string>
#include <vector>

#include "drouter/adamw.hpp"
#include "drouter/json_util.hpp"
#include "drouter/network.hpp"
#include "drouter/objective.hpp"
#include "drouter/prior.hpp"
#include "drouter/trainer.hpp"

namespace drouter {

struct PathsConfig {
    std::string cohort = "cohort.csv";
    std::string checkpoint = "checkpoint.json";
    std::string report_dir = "report";
    std::string log;  // empty: log to stderr
};

struct EvalConfig {
    std::string split = "test";
    std::size_t risk_bins = 5;
    std::uint64_t reference_seed = 17;
};

struct SweepConfig {
    std::vector<double> targets = {0.25, 0.40, 0.55, 0.70};
    bool fresh_seed = false;  // seed + target index per run
    bool parallel = false;    // run targets concurrently
};

struct RunConfig {
    PathsConfig paths;
    std::uint64_t seed = 1;
    CostConfig cost;
    PriorHyper prior;
    RankJsConfig rank;
    PolicyTemperatures temps;
    Architecture arch;
    AdamWConfig optimizer;
    TrainingConfig training;
    int threads = 0;  // 0: OpenMP default
    EvalConfig eval;
    SweepConfig sweep;

    void validate() const;
};

Json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const std::string& path);

/// Applies "section.key=value" (value parsed as JSON, else as a string).
void apply_override(Json& j, const std::string& assignment);

}  // namespace drouter
