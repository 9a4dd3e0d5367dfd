// Command-line front end: simulate, train, evaluate, sweep, print-config.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include "drouter/error.hpp"
#include "drouter/generator.hpp"
#include "drouter/pipeline.hpp"

namespace fs = std::filesystem;
using namespace drouter;

namespace {

// Line-delimited JSON event log, to a file or stderr.
class Log {
public:
    explicit Log(const std::string& path) {
        if (!path.empty()) {
            file_ = std::make_unique<std::ofstream>(path);
            if (!*file_) throw DataError("cannot open log " + path);
        }
    }
    void emit(OrderedJson j) {
        std::ostream& out = file_ ? *file_ : std::cerr;
        out << j.dump() << '\n';
        out.flush();
    }

private:
    std::unique_ptr<std::ofstream> file_;
};

OrderedJson breakdown_json(const ObjectiveBreakdown& b) {
    return {{"routing", b.routing}, {"gsdp", b.gsdp},   {"rank", b.rank},
            {"al", b.al},           {"d_bar", b.d_bar}, {"total", b.total},
            {"clamped_priors", b.clamped_priors}};
}

EpochCallback epoch_logger(Log& log, const std::string& tag = {}) {
    return [&log, tag](const EpochRecord& r) {
        OrderedJson j{{"event", "epoch"}};
        if (!tag.empty()) j["run"] = tag;
        j["epoch"] = r.epoch;
        j["train"] = breakdown_json(r.train);
        j["val"] = breakdown_json(r.val);
        j["val_score"] = r.val_score;
        j["lambda"] = r.lambda;
        j["best"] = r.best;
        log.emit(std::move(j));
    };
}

Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

RunConfig resolve_run_config(const std::string& path, const std::vector<std::string>& sets) {
    Json j = path.empty() ? to_json(RunConfig{}) : read_json_file(path);
    for (const auto& s : sets) apply_override(j, s);
    RunConfig cfg = run_config_from_json(j);
    cfg.validate();
    set_threads(cfg.threads);
    return cfg;
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) throw DataError("cannot write " + p.string());
    out << text;
}

void write_report(const fs::path& dir, const MetricsReport& rep) {
    write_text(dir / "metrics.json", to_json(rep).dump(1) + "\n");
    write_text(dir / "metrics.csv", metrics_csv(rep));
    write_text(dir / "risk.csv", risk_csv(rep));
}

std::string fmt(double x) { return format_double(x); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mask-aware learning-to-defer router"};
    app.require_subcommand(1);

    std::string config_path, spec_path, out_path, manifest_path, embeddings_path, checkpoint_path, cohort_path,
        split, report_dir, kind = "run";
    std::vector<std::string> sets;
    std::vector<double> targets;
    std::uint64_t seed = 0;

    auto* sim = app.add_subcommand("simulate", "Generate a synthetic cohort CSV and manifest");
    sim->add_option("--spec", spec_path, "Generation spec (JSON); defaults when omitted")->check(CLI::ExistingFile);
    sim->add_option("--out", out_path, "Cohort CSV path")->required();
    auto* seed_opt = sim->add_option("--seed", seed, "Overrides the spec seed");
    sim->add_option("--manifest", manifest_path, "Manifest path (default: <out>.manifest.json)");
    sim->add_option("--embeddings", embeddings_path, "Optional embedding sidecar CSV");
    sim->add_option("--set", sets, "Override spec key, e.g. experts=8");

    auto* train = app.add_subcommand("train", "Train a router and write a checkpoint");
    train->add_option("--config", config_path, "Run config (JSON)")->check(CLI::ExistingFile);
    train->add_option("--set", sets, "Override config key, e.g. training.max_epochs=40");

    auto* eval = app.add_subcommand("evaluate", "Evaluate a checkpoint against reference policies");
    eval->add_option("--config", config_path, "Run config (JSON); defaults to the checkpoint's")
        ->check(CLI::ExistingFile);
    eval->add_option("--checkpoint", checkpoint_path, "Checkpoint path (default: paths.checkpoint)");
    eval->add_option("--cohort", cohort_path, "Cohort CSV (default: paths.cohort)");
    eval->add_option("--split", split, "train, val or test (default: eval.split)");
    eval->add_option("--out", report_dir, "Report directory (default: paths.report_dir)");
    eval->add_option("--set", sets, "Override config key");

    auto* sweep = app.add_subcommand("sweep", "Train one router per deferral target");
    sweep->add_option("--config", config_path, "Run config (JSON)")->check(CLI::ExistingFile);
    sweep->add_option("--targets", targets, "Deferral targets (default: sweep.targets)")->delimiter(',');
    sweep->add_option("--out", report_dir, "Report directory (default: paths.report_dir)");
    sweep->add_option("--set", sets, "Override config key");

    auto* print = app.add_subcommand("print-config", "Print a fully populated default config");
    print->add_option("--kind", kind, "run or generation")->check(CLI::IsMember({"run", "generation"}));
    print->add_option("--config", config_path, "Resolve this config instead of the defaults")
        ->check(CLI::ExistingFile);
    print->add_option("--set", sets, "Override config key");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // usage errors share the config-error code
    }

    try {
        if (*print) {
            if (kind == "generation") {
                Json j = config_path.empty() ? to_json(GenerationConfig::defaults()) : read_json_file(config_path);
                for (const auto& s : sets) apply_override(j, s);
                std::cout << to_json(generation_config_from_json(j)).dump(2) << '\n';
            } else {
                std::cout << to_json(resolve_run_config(config_path, sets)).dump(2) << '\n';
            }
            return 0;
        }

        if (*sim) {
            Json j = spec_path.empty() ? to_json(GenerationConfig::defaults()) : read_json_file(spec_path);
            for (const auto& s : sets) apply_override(j, s);
            GenerationConfig gc = generation_config_from_json(j);
            if (*seed_opt) gc.seed = seed;
            gc.validate();
            Log log("");
            const auto res = generate_cohort(gc);
            write_cohort_csv(out_path, res.table);
            const auto manifest = generation_manifest(gc, res);
            write_text(manifest_path.empty() ? out_path + ".manifest.json" : manifest_path, manifest.dump(1) + "\n");
            if (!embeddings_path.empty()) write_embeddings_csv(embeddings_path, res);
            for (const auto& w : res.warnings) log.emit({{"event", "warning"}, {"message", w}});
            log.emit({{"event", "simulated"},
                      {"out", out_path},
                      {"rows", res.table.rows.size()},
                      {"config_hash", manifest["config_hash"]}});
            return 0;
        }

        const RunConfig cfg = resolve_run_config(config_path, sets);
        Log log(cfg.paths.log);

        if (*train) {
            const CohortTable cohort = read_cohort_csv(cfg.paths.cohort);
            log.emit({{"event", "train_start"}, {"cohort", cfg.paths.cohort}, {"rows", cohort.rows.size()},
                      {"seed", cfg.seed}, {"threads", max_threads()}});
            const auto run = run_training(cohort, cfg, epoch_logger(log));
            save_checkpoint(cfg.paths.checkpoint, run.checkpoint);
            log.emit({{"event", "train_done"},
                      {"checkpoint", cfg.paths.checkpoint},
                      {"best_epoch", run.checkpoint.best_epoch},
                      {"epochs_run", run.checkpoint.epochs_run},
                      {"stopped_early", run.checkpoint.stopped_early},
                      {"lambda", run.checkpoint.al.lambda}});
            return 0;
        }

        if (*eval) {
            const Checkpoint ckpt = load_checkpoint(checkpoint_path.empty() ? cfg.paths.checkpoint : checkpoint_path);
            RunConfig ec = config_path.empty() && sets.empty() ? ckpt.config : cfg;
            const CohortTable cohort = read_cohort_csv(cohort_path.empty() ? ec.paths.cohort : cohort_path);
            const std::string sp = split.empty() ? ec.eval.split : split;
            const auto rep = run_evaluation(ckpt, cohort, sp, ec);
            const fs::path dir = report_dir.empty() ? ec.paths.report_dir : report_dir;
            write_report(dir, rep);
            OrderedJson summary{{"event", "evaluated"}, {"split", sp}, {"report_dir", dir.string()}};
            for (const auto& m : rep.methods)
                summary[m.method] = {{"total_cost", m.blocks[0].costs.total},
                                     {"clinical_cost", m.blocks[0].costs.clinical},
                                     {"defer_hard", m.blocks[0].deferral.defer_hard}};
            log.emit(std::move(summary));
            return 0;
        }

        if (*sweep) {
            RunConfig sc = cfg;
            if (!targets.empty()) sc.sweep.targets = targets;
            sc.validate();
            const CohortTable cohort = read_cohort_csv(sc.paths.cohort);
            const auto points = run_sweep(cohort, sc, epoch_logger(log, "sweep"));
            const fs::path dir = report_dir.empty() ? sc.paths.report_dir : report_dir;
            std::string gaps = "target,seed,defer_soft,defer_hard,gap_soft,gap_hard,total_cost,best_epoch\n";
            OrderedJson summary = OrderedJson::array();
            for (const auto& p : points) {
                write_report(dir / ("target_" + fmt(p.target)), p.report);
                gaps += fmt(p.target) + "," + std::to_string(p.seed) + "," + fmt(p.defer_soft) + "," +
                        fmt(p.defer_hard) + "," + fmt(p.gap_soft) + "," + fmt(p.gap_hard) + "," + fmt(p.total_cost) +
                        "," + std::to_string(p.best_epoch) + "\n";
                summary.push_back({{"target", p.target}, {"defer_soft", p.defer_soft}, {"defer_hard", p.defer_hard},
                                   {"gap_soft", p.gap_soft}, {"gap_hard", p.gap_hard}});
            }
            write_text(dir / "gaps.csv", gaps);
            log.emit({{"event", "sweep_done"}, {"report_dir", dir.string()}, {"points", summary}});
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::data);
    }
    return 0;
}
