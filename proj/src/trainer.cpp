#include "drouter/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "drouter/error.hpp"
#include "drouter/rng.hpp"

namespace drouter {

std::vector<double> gate_noise(std::uint64_t seed, std::uint64_t key, std::uint64_t epoch, std::size_t experts) {
    CounterRng rng(seed, StreamDomain::gate_noise, key, epoch);
    std::vector<double> noise(experts);
    for (auto& n : noise) n = rng.logistic();
    return noise;
}

namespace {

void check_finite(const ObjectiveBreakdown& b, std::span<const BatchItem> batch,
                  std::span<const RoutingPolicy> policies) {
    if (std::isfinite(b.total)) return;
    std::string ids;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        bool bad = !std::isfinite(policies[i].defer_mass);
        for (double q : policies[i].alloc) bad = bad || !std::isfinite(q);
        if (bad) ids += (ids.empty() ? "" : ",") + batch[i].state->id;
    }
    if (ids.empty()) {
        for (const auto& it : batch) ids += (ids.empty() ? "" : ",") + it.state->id;
    }
    throw NumericalError("non-finite batch objective; cases: " + ids);
}

void accumulate(ObjectiveBreakdown& acc, const ObjectiveBreakdown& b, double w) {
    acc.routing += w * b.routing;
    acc.gsdp += w * b.gsdp;
    acc.rank += w * b.rank;
    acc.al += w * b.al;
    acc.d_bar += w * b.d_bar;
    acc.total += w * b.total;
    acc.clamped_priors += b.clamped_priors;
}

}  // namespace

BatchGradient batch_gradient(const RouterParams& params, std::span<const BatchItem> batch,
                             const ObjectiveContext& ctx, const ALState& al, const PolicyTemperatures& temps,
                             std::uint64_t seed, std::uint64_t epoch, Execution exec) {
    const std::size_t n = batch.size(), m = params.arch().experts, P = params.size();
    if (n == 0) throw ContractError("empty training batch");
    std::vector<ForwardTrace> traces(n);
    std::vector<ClinicalCosts> costs(n);
    for_each_index(n, exec, [&](std::size_t i) {
        const auto& s = *batch[i].state;
        for (double x : s.inputs) {
            if (!std::isfinite(x)) throw NumericalError("non-finite router input in case " + s.id);
        }
        try {
            traces[i] = forward(params, s, temps, gate_noise(seed, batch[i].key, epoch, m));
        } catch (const NumericalError& e) {
            throw NumericalError("case " + s.id + ": " + e.what());
        }
        costs[i] = clinical_costs(s, ctx.cost);
    });

    BatchGradient out;
    out.policies.reserve(n);
    std::vector<int> groups(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.policies.push_back(traces[i].policy);
        groups[i] = batch[i].group;
    }
    PenaltyGradient pg;
    out.breakdown = total_objective(out.policies, costs, groups, ctx, al, &pg);
    check_finite(out.breakdown, batch, out.policies);

    std::vector<double> per_case(n * P, 0.0);
    for_each_index(n, exec, [&](std::size_t i) {
        backward(params, *batch[i].state, traces[i], temps, pg.defer[i], pg.alloc[i],
                 std::span<double>(per_case).subspan(i * P, P));
    });
    out.grad.assign(P, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* g = per_case.data() + i * P;
        for (std::size_t k = 0; k < P; ++k) out.grad[k] += g[k];
    }
    return out;
}

ObjectiveBreakdown train_step(RouterParams& params, AdamWState& opt, const AdamWConfig& opt_cfg,
                              std::span<const BatchItem> batch, const ObjectiveContext& ctx, const ALState& al,
                              const PolicyTemperatures& temps, std::uint64_t seed, std::uint64_t epoch,
                              Execution exec) {
    auto bg = batch_gradient(params, batch, ctx, al, temps, seed, epoch, exec);
    adamw_step(opt_cfg, opt, params.values(), bg.grad);
    if (!params.all_finite()) throw NumericalError("parameters became non-finite after the optimizer step");
    return bg.breakdown;
}

double validation_score(const ObjectiveBreakdown& b, const CostConfig& cfg, double violation_weight) {
    double s = b.routing + cfg.w_gsdp * b.gsdp + cfg.w_rank * b.rank;
    if (cfg.al_enabled) s += violation_weight * std::max(b.d_bar - cfg.rho_def, 0.0);
    return s;
}

ObjectiveBreakdown evaluate_objective(const RouterParams& params, std::span<const BatchItem> rows,
                                      const ObjectiveContext& ctx, const PolicyTemperatures& temps,
                                      Execution exec) {
    const std::size_t n = rows.size();
    if (n == 0) return {};
    std::vector<RoutingPolicy> policies(n);
    std::vector<ClinicalCosts> costs(n);
    for_each_index(n, exec, [&](std::size_t i) {
        policies[i] = forward_mode(params, *rows[i].state, temps).policy;
        costs[i] = clinical_costs(*rows[i].state, ctx.cost);
    });
    std::vector<int> groups(n);
    for (std::size_t i = 0; i < n; ++i) groups[i] = rows[i].group;
    const ALState no_multiplier;
    auto b = total_objective(policies, costs, groups, ctx, no_multiplier);
    check_finite(b, rows, policies);
    return b;
}

TrainResult train_router(const TrainingInputs& in, const TrainOptions& opt, const EpochCallback& on_epoch) {
    if (!in.train || !in.val) throw ContractError("train_router needs train and validation splits");
    if (in.train->rows.empty()) throw DataError("training split is empty");
    if (in.val->rows.empty()) throw DataError("validation split is empty");
    if (in.train_groups.size() != in.train->rows.size() || in.val_groups.size() != in.val->rows.size())
        throw ContractError("group ids do not match the splits");
    const auto& tc = opt.training;
    if (tc.batch_size == 0) throw ConfigError("batch size must be positive");
    if (tc.max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
    opt.objective.cost.validate();
    if (!(opt.temps.tau_g > 0.0 && opt.temps.tau_a > 0.0)) throw ConfigError("temperatures must be positive");
    if (in.train->experts != opt.arch.experts) throw ConfigError("cohort expert count does not match architecture");

    ObjectiveContext ctx = opt.objective;
    ctx.prior = in.prior;

    std::vector<BatchItem> train_items(in.train->rows.size()), val_items(in.val->rows.size());
    for (std::size_t i = 0; i < train_items.size(); ++i) train_items[i] = {&in.train->rows[i], i, in.train_groups[i]};
    for (std::size_t i = 0; i < val_items.size(); ++i) val_items[i] = {&in.val->rows[i], i, in.val_groups[i]};

    TrainResult res;
    RouterParams params = RouterParams::initialize(opt.arch, opt.seed);
    AdamWState adam;
    ALState al;
    res.params = params;
    double best_score = INFINITY;
    std::vector<std::size_t> order(train_items.size());
    std::vector<BatchItem> batch;

    for (int epoch = 0; epoch < tc.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        CounterRng shuffle_rng(opt.seed, StreamDomain::shuffle, static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        EpochRecord rec;
        rec.epoch = epoch;
        const double inv_total = 1.0 / static_cast<double>(order.size());
        for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
            const std::size_t stop = std::min(order.size(), start + tc.batch_size);
            batch.clear();
            for (std::size_t k = start; k < stop; ++k) batch.push_back(train_items[order[k]]);
            const auto b = train_step(params, adam, opt.optimizer, batch, ctx, al, opt.temps, opt.seed,
                                      static_cast<std::uint64_t>(epoch), tc.exec);
            accumulate(rec.train, b, static_cast<double>(batch.size()) * inv_total);
        }
        // Projected ascent on the multiplier with the epoch's mean soft deferral.
        if (ctx.cost.al_enabled) al_update(al, rec.train.d_bar, ctx.cost, epoch);
        rec.lambda = al.lambda;

        rec.val = evaluate_objective(params, val_items, ctx, opt.temps, tc.exec);
        rec.val_score = validation_score(rec.val, ctx.cost, tc.violation_weight);
        const bool eligible = epoch >= tc.warmup || epoch == tc.max_epochs - 1;
        if (eligible && (rec.val_score < best_score || res.best_epoch < 0)) {
            best_score = rec.val_score;
            res.best_epoch = epoch;
            res.params = params;
            res.opt = adam;
            res.al = al;
            rec.best = true;
        }
        res.history.push_back(rec);
        res.epochs_run = epoch + 1;
        if (on_epoch) on_epoch(rec);
        if (res.best_epoch >= 0 && epoch - res.best_epoch >= tc.patience) {
            res.stopped_early = epoch + 1 < tc.max_epochs;
            break;
        }
    }
    // Keep the full multiplier history for the log even when restoring an earlier epoch.
    res.al.history = al.history;
    return res;
}

}  // namespace drouter
