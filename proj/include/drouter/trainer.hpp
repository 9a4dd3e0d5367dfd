#pragma once

// Mini-batch gradients of the router objective, the AdamW train step, and the
// epoch loop with the deferral multiplier update and early stopping.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "drouter/adamw.hpp"
#include "drouter/cohort_table.hpp"
#include "drouter/network.hpp"
#include "drouter/objective.hpp"
#include "drouter/parallel.hpp"
#include "drouter/prior.hpp"

namespace drouter {

/// One case of a mini-batch. `key` indexes the gate-noise stream.
struct BatchItem {
    const DecisionState* state = nullptr;
    std::uint64_t key = 0;
    int group = -1;
};

struct BatchGradient {
    ObjectiveBreakdown breakdown;
    std::vector<double> grad;  // d(total)/d(params)
    std::vector<RoutingPolicy> policies;
};

/// Gate noise for a case: a pure function of (seed, key, epoch).
std::vector<double> gate_noise(std::uint64_t seed, std::uint64_t key, std::uint64_t epoch, std::size_t experts);

/// Forward, objective and reverse pass over a batch. Per-case gradients are
/// computed independently (in parallel when requested) and summed in batch
/// order, so both execution modes give bit-identical results. Throws
/// NumericalError naming the offending ids when the objective is not finite.
BatchGradient batch_gradient(const RouterParams& params, std::span<const BatchItem> batch,
                             const ObjectiveContext& ctx, const ALState& al, const PolicyTemperatures& temps,
                             std::uint64_t seed, std::uint64_t epoch, Execution exec = Execution::parallel);

/// batch_gradient followed by one AdamW update.
ObjectiveBreakdown train_step(RouterParams& params, AdamWState& opt, const AdamWConfig& opt_cfg,
                              std::span<const BatchItem> batch, const ObjectiveContext& ctx, const ALState& al,
                              const PolicyTemperatures& temps, std::uint64_t seed, std::uint64_t epoch,
                              Execution exec = Execution::parallel);

struct TrainingConfig {
    std::size_t batch_size = 64;
    int max_epochs = 150;
    int warmup = 10;
    int patience = 18;
    double violation_weight = 10.0;
    Execution exec = Execution::parallel;
};

struct EpochRecord {
    int epoch = 0;
    ObjectiveBreakdown train;  // case-weighted means over the epoch's batches
    ObjectiveBreakdown val;    // deterministic-gate pass over the validation split
    double val_score = 0.0;
    double lambda = 0.0;       // multiplier after the epoch-end update
    bool best = false;
};

/// Validation score used for model selection: the objective without the
/// multiplier term, plus a weighted budget violation.
double validation_score(const ObjectiveBreakdown& b, const CostConfig& cfg, double violation_weight);

/// Objective of the deterministic-gate policy on a whole split.
ObjectiveBreakdown evaluate_objective(const RouterParams& params, std::span<const BatchItem> rows,
                                      const ObjectiveContext& ctx, const PolicyTemperatures& temps,
                                      Execution exec = Execution::parallel);

struct TrainingInputs {
    const CohortTable* train = nullptr;  // standardized
    const CohortTable* val = nullptr;    // standardized with the train statistics
    std::vector<int> train_groups;
    std::vector<int> val_groups;
    const PriorTree* prior = nullptr;
};

struct TrainResult {
    RouterParams params;  // best checkpoint
    AdamWState opt;
    ALState al;
    int best_epoch = -1;
    int epochs_run = 0;
    bool stopped_early = false;
    std::vector<EpochRecord> history;
};

struct TrainOptions {
    Architecture arch;
    PolicyTemperatures temps;
    AdamWConfig optimizer;
    TrainingConfig training;
    ObjectiveContext objective;  // `prior` is taken from TrainingInputs
    std::uint64_t seed = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train_router(const TrainingInputs& in, const TrainOptions& opt, const EpochCallback& on_epoch = {});

}  // namespace drouter
