// Wall-clock comparison of the OpenMP kernels against their serial runs,
// with a bitwise check that both paths produce the same result.
//
//   bench_kernels [repeats]

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "drouter/generator.hpp"
#include "drouter/pipeline.hpp"
#include "drouter/trainer.hpp"

using namespace drouter;

namespace {

template <class F>
double best_of(int repeats, F&& f) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void report(const char* name, double serial, double parallel, bool identical) {
    std::printf("%-22s serial %9.3f ms  parallel %9.3f ms  speedup %5.2fx  %s\n", name, 1e3 * serial, 1e3 * parallel,
                serial / parallel, identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
    const int repeats = argc > 1 ? std::max(1, std::atoi(argv[1])) : 5;
    std::printf("OpenMP threads: %d, repeats: %d\n", omp_get_max_threads(), repeats);
    int mismatches = 0;

    // Cohort generation.
    const auto gen_cfg = GenerationConfig::defaults();
    std::string csv_s, csv_p;
    const double gs = best_of(repeats, [&] {
        std::ostringstream o;
        write_cohort_csv(o, generate_cohort(gen_cfg, Execution::serial).table);
        csv_s = o.str();
    });
    const double gp = best_of(repeats, [&] {
        std::ostringstream o;
        write_cohort_csv(o, generate_cohort(gen_cfg, Execution::parallel).table);
        csv_p = o.str();
    });
    report("generate_cohort", gs, gp, csv_s == csv_p);
    mismatches += csv_s != csv_p;

    const auto cohort = generate_cohort(gen_cfg).table;
    const RunConfig cfg;
    const auto data = prepare_training_data(cohort, cfg);
    const auto params = RouterParams::initialize(cfg.arch, 1);
    std::vector<BatchItem> batch;
    for (std::size_t i = 0; i < data.train.rows.size(); ++i)
        batch.push_back({&data.train.rows[i], i, data.train_groups[i]});
    ObjectiveContext ctx;
    ctx.cost = cfg.cost;
    ctx.rank = cfg.rank;
    ctx.prior = &data.prior;
    const ALState al;

    // Full-split gradient.
    BatchGradient bs, bp;
    const double ts = best_of(repeats, [&] {
        bs = batch_gradient(params, batch, ctx, al, cfg.temps, 7, 0, Execution::serial);
    });
    const double tp = best_of(repeats, [&] {
        bp = batch_gradient(params, batch, ctx, al, cfg.temps, 7, 0, Execution::parallel);
    });
    report("batch_gradient", ts, tp, same_bits(bs.grad, bp.grad));
    mismatches += !same_bits(bs.grad, bp.grad);

    // Deterministic-gate routing of the validation split.
    std::vector<const DecisionState*> rows;
    for (const auto& r : data.val.rows) rows.push_back(&r);
    std::vector<RoutedOutcome> rs, rp;
    const double us = best_of(repeats, [&] { rs = route_rows(params, cfg.temps, rows, Execution::serial); });
    const double up = best_of(repeats, [&] { rp = route_rows(params, cfg.temps, rows, Execution::parallel); });
    bool same = rs.size() == rp.size();
    for (std::size_t i = 0; same && i < rs.size(); ++i)
        same = rs[i].action == rp[i].action && same_bits(rs[i].action_probs, rp[i].action_probs);
    report("route_rows", us, up, same);
    mismatches += !same;

    // Short training run.
    auto tcfg = cfg;
    tcfg.training.max_epochs = 5;
    TrainRun a, b;
    const double rs_t = best_of(1, [&] {
        tcfg.training.exec = Execution::serial;
        a = run_training(cohort, tcfg);
    });
    const double rp_t = best_of(1, [&] {
        tcfg.training.exec = Execution::parallel;
        b = run_training(cohort, tcfg);
    });
    const std::vector<double> pa(a.checkpoint.params.values().begin(), a.checkpoint.params.values().end());
    const std::vector<double> pb(b.checkpoint.params.values().begin(), b.checkpoint.params.values().end());
    report("run_training (5 ep)", rs_t, rp_t, same_bits(pa, pb));
    mismatches += !same_bits(pa, pb);
    return mismatches;
}
