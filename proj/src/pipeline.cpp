#include "drouter/pipeline.hpp"

#include <fstream>

#include "drouter/error.hpp"

namespace drouter {

PreparedData prepare_training_data(const CohortTable& cohort, const RunConfig& cfg) {
    if (cohort.experts != cfg.arch.experts)
        throw ConfigError("cohort has " + std::to_string(cohort.experts) + " experts, architecture expects " +
                          std::to_string(cfg.arch.experts));
    PreparedData d;
    const CohortTable raw_train = cohort.subset(Split::train), raw_val = cohort.subset(Split::val);
    if (raw_train.rows.empty()) throw DataError("cohort has no training rows");
    if (raw_val.rows.empty()) throw DataError("cohort has no validation rows");
    d.train = standardize_features(raw_train, std::nullopt, &d.stats);
    d.val = standardize_features(raw_val, d.stats);
    const auto ga = assign_groups(raw_train, cfg.prior.n_clusters);
    d.groups = ga.model;
    d.train_groups = ga.group;
    d.val_groups = apply_group_model(d.groups, raw_val).group;
    d.prior = build_prior_tree(raw_train, ga, cfg.cost, cfg.prior);
    return d;
}

OrderedJson to_json(const Checkpoint& c) {
    OrderedJson j;
    j["format"] = "drouter.checkpoint";
    j["version"] = kCheckpointVersion;
    j["config"] = OrderedJson::parse(to_json(c.config).dump());
    j["architecture"] = {{"experts", c.params.arch().experts},
                         {"branch", c.params.arch().branch},
                         {"fuse", c.params.arch().fuse},
                         {"trunk", c.params.arch().trunk}};
    OrderedJson blocks = OrderedJson::array();
    for (std::size_t b = 0; b < kBlockCount; ++b) {
        blocks.push_back({{"name", block_name(static_cast<Block>(b))},
                          {"offset", c.params.layout().offset[b]},
                          {"length", c.params.layout().length[b]}});
    }
    j["layout"] = blocks;
    j["params"] = std::vector<double>(c.params.values().begin(), c.params.values().end());
    j["feature_stats"] = {{"mean", c.stats.mean}, {"stddev", c.stats.stddev}};
    j["optimizer"] = {{"step", c.opt.step}, {"m", c.opt.m}, {"v", c.opt.v}};
    OrderedJson hist = OrderedJson::array();
    for (const auto& r : c.al.history)
        hist.push_back({{"epoch", r.epoch}, {"d_bar", r.d_bar}, {"violation", r.violation}, {"lambda", r.lambda}});
    j["al"] = {{"lambda", c.al.lambda}, {"history", hist}};
    j["training"] = {{"seed", c.config.seed},
                     {"best_epoch", c.best_epoch},
                     {"epochs_run", c.epochs_run},
                     {"stopped_early", c.stopped_early}};
    return j;
}

Checkpoint checkpoint_from_json(const Json& j) {
    try {
        if (j.at("format") != "drouter.checkpoint") throw ConfigError("not a router checkpoint");
        if (j.at("version").get<int>() != kCheckpointVersion)
            throw ConfigError("unsupported checkpoint version " + j.at("version").dump());
        Checkpoint c;
        c.config = run_config_from_json(j.at("config"));
        Architecture a;
        const auto& aj = j.at("architecture");
        a.experts = aj.at("experts").get<std::size_t>();
        a.branch = aj.at("branch").get<std::size_t>();
        a.fuse = aj.at("fuse").get<std::size_t>();
        a.trunk = aj.at("trunk").get<std::size_t>();
        c.params = RouterParams(a);
        const auto values = j.at("params").get<std::vector<double>>();
        if (values.size() != c.params.size()) throw ConfigError("checkpoint parameter count does not match layout");
        std::copy(values.begin(), values.end(), c.params.values().begin());
        c.stats.mean = j.at("feature_stats").at("mean").get<RouterInputs>();
        c.stats.stddev = j.at("feature_stats").at("stddev").get<RouterInputs>();
        c.opt.step = j.at("optimizer").at("step").get<std::uint64_t>();
        c.opt.m = j.at("optimizer").at("m").get<std::vector<double>>();
        c.opt.v = j.at("optimizer").at("v").get<std::vector<double>>();
        c.al.lambda = j.at("al").at("lambda").get<double>();
        for (const auto& r : j.at("al").at("history")) {
            c.al.history.push_back({r.at("epoch").get<int>(), r.at("d_bar").get<double>(),
                                    r.at("violation").get<double>(), r.at("lambda").get<double>()});
        }
        c.best_epoch = j.at("training").at("best_epoch").get<int>();
        c.epochs_run = j.at("training").at("epochs_run").get<int>();
        c.stopped_early = j.at("training").at("stopped_early").get<bool>();
        if (!c.params.all_finite()) throw NumericalError("checkpoint contains non-finite parameters");
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed checkpoint: ") + e.what());
    }
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint " + path);
    out << to_json(c).dump(1) << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint " + path);
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

TrainRun run_training(const CohortTable& cohort, const RunConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    const auto data = prepare_training_data(cohort, cfg);
    TrainingInputs in;
    in.train = &data.train;
    in.val = &data.val;
    in.train_groups = data.train_groups;
    in.val_groups = data.val_groups;
    in.prior = &data.prior;
    TrainOptions opt;
    opt.arch = cfg.arch;
    opt.temps = cfg.temps;
    opt.optimizer = cfg.optimizer;
    opt.training = cfg.training;
    opt.objective.cost = cfg.cost;
    opt.objective.rank = cfg.rank;
    opt.seed = cfg.seed;

    TrainRun run;
    run.result = train_router(in, opt, on_epoch);
    auto& c = run.checkpoint;
    c.config = cfg;
    c.params = run.result.params;
    c.stats = data.stats;
    c.stats.warnings.clear();
    c.opt = run.result.opt;
    c.al = run.result.al;
    c.best_epoch = run.result.best_epoch;
    c.epochs_run = run.result.epochs_run;
    c.stopped_early = run.result.stopped_early;
    return run;
}

std::vector<RoutedOutcome> route_rows(const RouterParams& params, const PolicyTemperatures& temps,
                                      std::span<const DecisionState* const> rows, Execution exec) {
    std::vector<RoutedOutcome> out(rows.size());
    for_each_index(rows.size(), exec, [&](std::size_t i) {
        out[i] = make_outcome(*rows[i], forward_mode(params, *rows[i], temps).policy);
    });
    return out;
}

MetricsReport run_evaluation(const Checkpoint& ckpt, const CohortTable& cohort, const std::string& split,
                             const RunConfig& cfg) {
    if (cohort.experts != ckpt.params.arch().experts)
        throw ConfigError("cohort has " + std::to_string(cohort.experts) + " experts, checkpoint expects " +
                          std::to_string(ckpt.params.arch().experts));
    if (split != "train" && split != "val" && split != "test") throw ConfigError("unknown split '" + split + "'");
    const Split s = parse_split(split);
    const CohortTable raw = cohort.subset(s);
    if (raw.rows.empty()) throw DataError("split '" + split + "' is empty");
    const CohortTable std_rows = standardize_features(raw, ckpt.stats);
    std::vector<const DecisionState*> rows;
    for (const auto& r : std_rows.rows) rows.push_back(&r);

    const auto kappa = cfg.cost.tier_costs(cohort.experts);
    MetricsReport rep;
    rep.split = split;
    rep.experts = cohort.experts;
    const auto routed = route_rows(ckpt.params, ckpt.config.temps, rows, cfg.training.exec);
    rep.methods.push_back(method_report("router", routed, cfg.cost, kappa, cohort.experts));
    const auto ai = ai_only_outcomes(rows);
    rep.methods.push_back(method_report("ai_only", ai, cfg.cost, kappa, cohort.experts));
    const double rate = rep.methods[0].blocks[0].deferral.defer_hard;
    const auto rnd = random_defer_outcomes(rows, rate, cfg.eval.reference_seed);
    rep.methods.push_back(method_report("random_defer", rnd, cfg.cost, kappa, cohort.experts));
    if (cfg.eval.risk_bins != 5) {
        for (auto& m : rep.methods) {
            const auto& outs = m.method == "router" ? routed : (m.method == "ai_only" ? ai : rnd);
            m.risk = {risk_stratified_costs(outs, RiskAxis::structural, cfg.cost, cfg.eval.risk_bins),
                      risk_stratified_costs(outs, RiskAxis::reliability, cfg.cost, cfg.eval.risk_bins)};
        }
    }
    return rep;
}

std::vector<SweepPoint> run_sweep(const CohortTable& cohort, const RunConfig& cfg, const EpochCallback& on_epoch) {
    const auto& targets = cfg.sweep.targets;
    std::vector<SweepPoint> points(targets.size());
    const Execution outer = cfg.sweep.parallel ? Execution::parallel : Execution::serial;
    for_each_index(targets.size(), outer, [&](std::size_t t) {
        RunConfig rc = cfg;
        rc.cost.rho_def = targets[t];
        rc.seed = cfg.sweep.fresh_seed ? cfg.seed + t : cfg.seed;
        if (outer == Execution::parallel) rc.training.exec = Execution::serial;
        const auto run = run_training(cohort, rc, outer == Execution::serial ? on_epoch : EpochCallback{});
        auto& p = points[t];
        p.target = targets[t];
        p.seed = rc.seed;
        p.best_epoch = run.checkpoint.best_epoch;
        p.report = run_evaluation(run.checkpoint, cohort, cfg.eval.split, rc);
        const auto& b = p.report.methods[0].blocks[0];
        p.defer_soft = b.deferral.defer_soft;
        p.defer_hard = b.deferral.defer_hard;
        p.gap_soft = p.defer_soft - p.target;
        p.gap_hard = p.defer_hard - p.target;
        p.total_cost = b.costs.total;
    });
    return points;
}

}  // namespace drouter
