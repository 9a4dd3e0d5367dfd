#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "drouter/error.hpp"
#include "drouter/generator.hpp"
#include "drouter/pipeline.hpp"

using namespace drouter;
using doctest::Approx;

namespace {

const CohortTable& small_cohort() {
    static const CohortTable t = [] {
        auto g = GenerationConfig::defaults();
        for (auto& c : g.cohorts) c.train /= 4, c.val /= 4, c.test /= 4;
        return generate_cohort(g).table;
    }();
    return t;
}

const CohortTable& default_cohort() {
    static const CohortTable t = generate_cohort(GenerationConfig::defaults()).table;
    return t;
}

RunConfig quick_config(int epochs = 12) {
    RunConfig cfg;
    cfg.training.max_epochs = epochs;
    cfg.training.warmup = 2;
    return cfg;
}

bool same_values(const RouterParams& a, const RouterParams& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t k = 0; k < a.size(); ++k)
        if (std::memcmp(&a.values()[k], &b.values()[k], sizeof(double)) != 0) return false;
    return true;
}

}  // namespace

TEST_CASE("run config: defaults, strictness and overrides") {
    const RunConfig def;
    const auto j = to_json(def);
    CHECK(to_json(run_config_from_json(j)).dump() == j.dump());
    CHECK(to_json(load_run_config(DROUTER_SOURCE_DIR "/configs/run.default.json")).dump() == j.dump());

    auto bad = j;
    bad["costs"]["c_typo"] = 1.0;
    CHECK_THROWS_AS(run_config_from_json(bad), ConfigError);

    auto o = j;
    apply_override(o, "al.rho_def=0.3");
    apply_override(o, "paths.report_dir=out/run");
    apply_override(o, "sweep.targets=[0.1,0.2]");
    const auto c = run_config_from_json(o);
    CHECK(c.cost.rho_def == 0.3);
    CHECK(c.paths.report_dir == "out/run");
    CHECK(c.sweep.targets == std::vector<double>{0.1, 0.2});

    auto u = j;
    apply_override(u, "training.nonexistent=3");
    CHECK_THROWS_AS(run_config_from_json(u), ConfigError);
    CHECK_THROWS_AS(apply_override(u, "no_equals_sign"), ConfigError);
    auto inv = j;
    apply_override(inv, "costs.c_fn=1.0");
    CHECK_THROWS_AS(run_config_from_json(inv), ConfigError);
    auto neg = j;
    apply_override(neg, "al.rho_def=1.5");
    CHECK_THROWS_AS(run_config_from_json(neg), ConfigError);
}

TEST_CASE("shipped configs load") {
    for (const char* name : {"run.default.json", "run.sweep.json", "run.no_regularizers.json"}) {
        INFO(name);
        CHECK_NOTHROW(load_run_config(std::string(DROUTER_SOURCE_DIR "/configs/") + name));
    }
    for (const char* name :
         {"generation.default.json", "generation.dominant_expert.json", "generation.complementary.json"}) {
        INFO(name);
        std::ifstream in(std::string(DROUTER_SOURCE_DIR "/configs/") + name);
        REQUIRE(in);
        const auto cfg = generation_config_from_json(Json::parse(in));
        CHECK_NOTHROW(cfg.validate());
    }
}

TEST_CASE("manifest counts for the published split sizes") {
    auto g = GenerationConfig::defaults();
    const std::size_t sizes[3][3] = {{400, 400, 400}, {686, 323, 336}, {325, 162, 163}};
    for (int c = 0; c < 3; ++c) {
        g.cohorts[c].train = sizes[c][0];
        g.cohorts[c].val = sizes[c][1];
        g.cohorts[c].test = sizes[c][2];
    }
    const auto res = generate_cohort(g);
    const auto m = generation_manifest(g, res);
    CHECK(m["splits"]["train"] == 1411);
    CHECK(m["splits"]["val"] == 885);
    CHECK(m["splits"]["test"] == 899);
    CHECK(m["cohorts"]["chaksu"]["test"] == 336);
    CHECK(m["experts"] == 12);
}

TEST_CASE("prepared data uses train statistics and train-only priors") {
    const auto& cohort = small_cohort();
    const auto cfg = quick_config();
    const auto d = prepare_training_data(cohort, cfg);
    CHECK(d.train.standardized);
    CHECK(d.val.standardized);
    CHECK(d.train.rows.size() == cohort.split_rows(Split::train).size());
    CHECK(d.train_groups.size() == d.train.rows.size());
    CHECK(d.val_groups.size() == d.val.rows.size());
    // Standardized train inputs have zero mean per column.
    const std::size_t width = d.train.rows.front().inputs.size();
    for (std::size_t k = 0; k < width; ++k) {
        double s = 0.0;
        for (const auto& r : d.train.rows) s += r.inputs[k];
        CHECK(std::abs(s / static_cast<double>(d.train.rows.size())) < 1e-9);
    }
    auto wrong = cfg;
    wrong.arch.experts = 5;
    CHECK_THROWS_AS(prepare_training_data(cohort, wrong), ConfigError);
}

TEST_CASE("checkpoint round trip") {
    const auto run = run_training(small_cohort(), quick_config(4));
    const auto j = to_json(run.checkpoint);
    const auto back = checkpoint_from_json(Json::parse(j.dump()));
    CHECK(same_values(back.params, run.checkpoint.params));
    CHECK(to_json(back).dump() == j.dump());
    CHECK(back.best_epoch == run.checkpoint.best_epoch);
    CHECK(back.opt.step == run.checkpoint.opt.step);

    const auto path = (std::filesystem::temp_directory_path() / "drouter_ckpt_test.json").string();
    save_checkpoint(path, run.checkpoint);
    CHECK(to_json(load_checkpoint(path)).dump() == j.dump());
    std::filesystem::remove(path);

    auto bad = Json::parse(j.dump());
    bad["version"] = kCheckpointVersion + 1;
    CHECK_THROWS_AS(checkpoint_from_json(bad), ConfigError);
    bad = Json::parse(j.dump());
    bad["params"].erase(bad["params"].begin());
    CHECK_THROWS(checkpoint_from_json(bad));
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.json"), DataError);
}

TEST_CASE("controller off: the trace is the bare routing loss") {
    auto cfg = quick_config(6);
    cfg.cost.al_enabled = false;
    cfg.cost.w_gsdp = cfg.cost.w_rank = 0.0;
    cfg.training.patience = 100;
    const auto run = run_training(small_cohort(), cfg);
    REQUIRE(run.result.history.size() == 6);
    for (const auto& e : run.result.history) {
        CHECK(e.lambda == 0.0);
        CHECK(e.train.total == Approx(e.train.routing).epsilon(1e-14));
        CHECK(e.val.total == Approx(e.val.routing).epsilon(1e-14));
    }
}

TEST_CASE("serial and parallel training are bit-identical") {
    auto cfg = quick_config(5);
    cfg.training.exec = Execution::serial;
    const auto a = run_training(small_cohort(), cfg);
    cfg.training.exec = Execution::parallel;
    const auto b = run_training(small_cohort(), cfg);
    CHECK(same_values(a.checkpoint.params, b.checkpoint.params));
    auto ja = to_json(a.checkpoint), jb = to_json(b.checkpoint);
    ja.erase("config");  // differs only in the execution flag
    jb.erase("config");
    CHECK(ja.dump() == jb.dump());
}

TEST_CASE("zero deferral checkpoint reproduces the AI-only reference") {
    auto run = run_training(small_cohort(), quick_config(3));
    auto& p = run.checkpoint.params;
    for (auto& w : p.block(Block::defer_w)) w = 0.0;
    for (auto& b : p.block(Block::defer_b)) b = -1e4;
    const auto rep = run_evaluation(run.checkpoint, small_cohort(), "test", run.checkpoint.config);
    REQUIRE(rep.methods.size() == 3);
    const auto j = to_json(rep);
    auto router = j["methods"][0], ai = j["methods"][1];
    CHECK(router["method"] == "router");
    CHECK(ai["method"] == "ai_only");
    router.erase("method");
    ai.erase("method");
    // The clamped deferral logit leaves d at about 1e-13; hard routing is exact.
    for (auto* m : {&router, &ai}) {
        for (auto& b : (*m)["blocks"]) {
            auto& d = b["deferral"];
            CHECK(d["defer_soft"].get<double>() < 1e-12);
            for (const auto& x : d["soft_load"]) CHECK(x.get<double>() < 1e-12);
            d.erase("defer_soft");
            d.erase("soft_load");
        }
    }
    CHECK(router.dump() == ai.dump());
}

TEST_CASE("evaluation reports are feasible and decompose") {
    const auto run = run_training(small_cohort(), quick_config(8));
    const auto rep = run_evaluation(run.checkpoint, small_cohort(), "test", run.checkpoint.config);
    for (const auto& m : rep.methods) {
        for (const auto& b : m.blocks) {
            const auto& d = b.decomposition;
            CHECK(d.n == b.n);
            CHECK(static_cast<double>(d.n) * d.acc ==
                  Approx(static_cast<double>(d.n_ai) * d.acc_ai + static_cast<double>(d.n_routed) * d.acc_routed));
            CHECK(b.costs.total == b.costs.clinical + b.costs.expert);
        }
    }
    // Random defer runs at the router's hard deferral rate.
    CHECK(rep.methods[2].method == "random_defer");
    auto cohort = small_cohort();
    CHECK_THROWS_AS(run_evaluation(run.checkpoint, cohort, "bogus", run.checkpoint.config), ConfigError);
    cohort.experts = 7;
    CHECK_THROWS(run_evaluation(run.checkpoint, cohort, "test", run.checkpoint.config));
}

TEST_CASE("a zero budget forces deferral toward zero") {
    RunConfig cfg;
    cfg.cost.rho_def = 0.0;
    cfg.cost.mu = 100.0;
    cfg.cost.eta_lambda = 1.0;
    cfg.training.max_epochs = 60;
    const auto run = run_training(default_cohort(), cfg);
    REQUIRE_FALSE(run.result.history.empty());
    const auto& last = run.result.history.back();
    CHECK(last.train.d_bar < 0.05);
    CHECK(run.result.history[static_cast<std::size_t>(run.result.best_epoch)].val.d_bar < 0.05);
    const auto rep = run_evaluation(run.checkpoint, default_cohort(), "test", cfg);
    CHECK(rep.methods[0].blocks[0].deferral.defer_soft < 0.05);
}
