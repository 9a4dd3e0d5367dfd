#pragma once

// End-to-end steps shared by the command-line tool and the acceptance
// suite: data preparation, training with checkpointing, evaluation against
// the reference policies, and deferral-budget sweeps.

#include <string>
#include <vector>

#include "drouter/eval.hpp"
#include "drouter/features.hpp"
#include "drouter/run_config.hpp"

namespace drouter {

/// Train/val splits standardized on train statistics, groups fitted on
/// train and applied to val, prior built from train only.
struct PreparedData {
    CohortTable train, val;
    FeatureStats stats;
    GroupModel groups;
    std::vector<int> train_groups, val_groups;
    PriorTree prior;
};

PreparedData prepare_training_data(const CohortTable& cohort, const RunConfig& cfg);

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    RunConfig config;
    RouterParams params;
    FeatureStats stats;
    AdamWState opt;
    ALState al;
    int best_epoch = -1;
    int epochs_run = 0;
    bool stopped_early = false;
};

OrderedJson to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const Json& j);
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

struct TrainRun {
    Checkpoint checkpoint;
    TrainResult result;
};

TrainRun run_training(const CohortTable& cohort, const RunConfig& cfg, const EpochCallback& on_epoch = {});

/// Router, AI-only and random-defer (at the router's hard deferral rate)
/// reports on one split.
MetricsReport run_evaluation(const Checkpoint& ckpt, const CohortTable& cohort, const std::string& split,
                             const RunConfig& cfg);

/// Router outcomes on the given rows (already standardized).
std::vector<RoutedOutcome> route_rows(const RouterParams& params, const PolicyTemperatures& temps,
                                      std::span<const DecisionState* const> rows, Execution exec = Execution::parallel);

struct SweepPoint {
    double target = 0.0;
    std::uint64_t seed = 0;
    double defer_soft = 0.0;
    double defer_hard = 0.0;
    double gap_soft = 0.0;  // realized minus target
    double gap_hard = 0.0;
    double total_cost = 0.0;
    int best_epoch = -1;
    MetricsReport report;
};

std::vector<SweepPoint> run_sweep(const CohortTable& cohort, const RunConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace drouter
