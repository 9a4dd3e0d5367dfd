#include "drouter/run_config.hpp"

#include <fstream>
#include <sstream>

#include "drouter/error.hpp"

namespace drouter {

void RunConfig::validate() const {
    cost.validate();
    if (!(temps.tau_g > 0.0 && temps.tau_a > 0.0)) throw ConfigError("policy temperatures must be positive");
    if (!(rank.varrho > 0.0 && rank.varrho < 1.0)) throw ConfigError("rank.varrho must lie in (0,1)");
    if (!(rank.margin >= 0.0)) throw ConfigError("rank.margin must be >= 0");
    if (arch.experts == 0 || arch.branch == 0 || arch.fuse == 0 || arch.trunk == 0)
        throw ConfigError("architecture sizes must be positive");
    if (!(optimizer.lr >= 0.0 && optimizer.weight_decay >= 0.0 && optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 &&
          optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0 && optimizer.eps > 0.0))
        throw ConfigError("invalid optimizer settings");
    if (training.batch_size == 0 || training.max_epochs < 1 || training.warmup < 0 || training.patience < 1)
        throw ConfigError("invalid training schedule");
    if (!(training.violation_weight >= 0.0)) throw ConfigError("training.violation_weight must be >= 0");
    if (prior.n_clusters == 0) throw ConfigError("prior.n_clusters must be positive");
    parse_split(eval.split);
    if (eval.risk_bins == 0) throw ConfigError("eval.risk_bins must be positive");
    for (double t : sweep.targets) {
        if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("sweep targets must lie in [0,1]");
    }
}

Json to_json(const RunConfig& c) {
    Json j;
    j["paths"] = {{"cohort", c.paths.cohort},
                  {"checkpoint", c.paths.checkpoint},
                  {"report_dir", c.paths.report_dir},
                  {"log", c.paths.log}};
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["costs"] = {{"c_fn", c.cost.c_fn},
                  {"c_fp", c.cost.c_fp},
                  {"c_fn_prior", c.cost.c_fn_prior},
                  {"c_fp_prior", c.cost.c_fp_prior},
                  {"kappa", c.cost.kappa},
                  {"gamma_tier", c.cost.gamma_tier},
                  {"w_gsdp", c.cost.w_gsdp},
                  {"w_rank", c.cost.w_rank}};
    j["al"] = {{"enabled", c.cost.al_enabled},
               {"rho_def", c.cost.rho_def},
               {"mu", c.cost.mu},
               {"eta_lambda", c.cost.eta_lambda}};
    j["prior"] = {{"n_fam0", c.prior.n_fam0},
                  {"n_grp0", c.prior.n_grp0},
                  {"rho_glob", c.prior.rho_glob},
                  {"u_glob", c.prior.u_glob},
                  {"u_fam", c.prior.u_fam},
                  {"u_grp", c.prior.u_grp},
                  {"tau_bad", c.prior.tau_bad},
                  {"capacity", c.prior.capacity},
                  {"n_min_global", c.prior.n_min_global},
                  {"n_min_family", c.prior.n_min_family},
                  {"n_min_group", c.prior.n_min_group},
                  {"n_clusters", c.prior.n_clusters}};
    j["rank"] = {{"varrho", c.rank.varrho}, {"margin", c.rank.margin}};
    j["policy"] = {{"tau_g", c.temps.tau_g}, {"tau_a", c.temps.tau_a}};
    j["architecture"] = {
        {"experts", c.arch.experts}, {"branch", c.arch.branch}, {"fuse", c.arch.fuse}, {"trunk", c.arch.trunk}};
    j["optimizer"] = {{"lr", c.optimizer.lr},
                      {"weight_decay", c.optimizer.weight_decay},
                      {"beta1", c.optimizer.beta1},
                      {"beta2", c.optimizer.beta2},
                      {"eps", c.optimizer.eps}};
    j["training"] = {{"batch_size", c.training.batch_size},
                     {"max_epochs", c.training.max_epochs},
                     {"warmup", c.training.warmup},
                     {"patience", c.training.patience},
                     {"violation_weight", c.training.violation_weight},
                     {"parallel", c.training.exec == Execution::parallel}};
    j["eval"] = {{"split", c.eval.split}, {"risk_bins", c.eval.risk_bins}, {"reference_seed", c.eval.reference_seed}};
    j["sweep"] = {{"targets", c.sweep.targets}, {"fresh_seed", c.sweep.fresh_seed}, {"parallel", c.sweep.parallel}};
    return j;
}

RunConfig run_config_from_json(const Json& j) {
    RunConfig c;
    const std::string w = "config";
    reject_unknown_keys(j,
                        {"paths", "seed", "threads", "costs", "al", "prior", "rank", "policy", "architecture",
                         "optimizer", "training", "eval", "sweep"},
                        w);
    read_key(j, "seed", c.seed, w);
    read_key(j, "threads", c.threads, w);
    auto section = [&](const char* name, std::initializer_list<std::string_view> keys) -> const Json* {
        const auto it = j.find(name);
        if (it == j.end()) return nullptr;
        reject_unknown_keys(*it, keys, w + "." + name);
        return &*it;
    };
    if (const Json* s = section("paths", {"cohort", "checkpoint", "report_dir", "log"})) {
        read_key(*s, "cohort", c.paths.cohort, "paths");
        read_key(*s, "checkpoint", c.paths.checkpoint, "paths");
        read_key(*s, "report_dir", c.paths.report_dir, "paths");
        read_key(*s, "log", c.paths.log, "paths");
    }
    if (const Json* s = section("costs", {"c_fn", "c_fp", "c_fn_prior", "c_fp_prior", "kappa", "gamma_tier", "w_gsdp",
                                          "w_rank"})) {
        read_key(*s, "c_fn", c.cost.c_fn, "costs");
        read_key(*s, "c_fp", c.cost.c_fp, "costs");
        read_key(*s, "c_fn_prior", c.cost.c_fn_prior, "costs");
        read_key(*s, "c_fp_prior", c.cost.c_fp_prior, "costs");
        read_key(*s, "kappa", c.cost.kappa, "costs");
        read_key(*s, "gamma_tier", c.cost.gamma_tier, "costs");
        read_key(*s, "w_gsdp", c.cost.w_gsdp, "costs");
        read_key(*s, "w_rank", c.cost.w_rank, "costs");
    }
    if (const Json* s = section("al", {"enabled", "rho_def", "mu", "eta_lambda"})) {
        read_key(*s, "enabled", c.cost.al_enabled, "al");
        read_key(*s, "rho_def", c.cost.rho_def, "al");
        read_key(*s, "mu", c.cost.mu, "al");
        read_key(*s, "eta_lambda", c.cost.eta_lambda, "al");
    }
    if (const Json* s = section("prior", {"n_fam0", "n_grp0", "rho_glob", "u_glob", "u_fam", "u_grp", "tau_bad",
                                          "capacity", "n_min_global", "n_min_family", "n_min_group", "n_clusters"})) {
        read_key(*s, "n_fam0", c.prior.n_fam0, "prior");
        read_key(*s, "n_grp0", c.prior.n_grp0, "prior");
        read_key(*s, "rho_glob", c.prior.rho_glob, "prior");
        read_key(*s, "u_glob", c.prior.u_glob, "prior");
        read_key(*s, "u_fam", c.prior.u_fam, "prior");
        read_key(*s, "u_grp", c.prior.u_grp, "prior");
        read_key(*s, "tau_bad", c.prior.tau_bad, "prior");
        read_key(*s, "capacity", c.prior.capacity, "prior");
        read_key(*s, "n_min_global", c.prior.n_min_global, "prior");
        read_key(*s, "n_min_family", c.prior.n_min_family, "prior");
        read_key(*s, "n_min_group", c.prior.n_min_group, "prior");
        read_key(*s, "n_clusters", c.prior.n_clusters, "prior");
    }
    if (const Json* s = section("rank", {"varrho", "margin"})) {
        read_key(*s, "varrho", c.rank.varrho, "rank");
        read_key(*s, "margin", c.rank.margin, "rank");
    }
    if (const Json* s = section("policy", {"tau_g", "tau_a"})) {
        read_key(*s, "tau_g", c.temps.tau_g, "policy");
        read_key(*s, "tau_a", c.temps.tau_a, "policy");
    }
    if (const Json* s = section("architecture", {"experts", "branch", "fuse", "trunk"})) {
        read_key(*s, "experts", c.arch.experts, "architecture");
        read_key(*s, "branch", c.arch.branch, "architecture");
        read_key(*s, "fuse", c.arch.fuse, "architecture");
        read_key(*s, "trunk", c.arch.trunk, "architecture");
    }
    if (const Json* s = section("optimizer", {"lr", "weight_decay", "beta1", "beta2", "eps"})) {
        read_key(*s, "lr", c.optimizer.lr, "optimizer");
        read_key(*s, "weight_decay", c.optimizer.weight_decay, "optimizer");
        read_key(*s, "beta1", c.optimizer.beta1, "optimizer");
        read_key(*s, "beta2", c.optimizer.beta2, "optimizer");
        read_key(*s, "eps", c.optimizer.eps, "optimizer");
    }
    if (const Json* s = section("training", {"batch_size", "max_epochs", "warmup", "patience", "violation_weight",
                                             "parallel"})) {
        read_key(*s, "batch_size", c.training.batch_size, "training");
        read_key(*s, "max_epochs", c.training.max_epochs, "training");
        read_key(*s, "warmup", c.training.warmup, "training");
        read_key(*s, "patience", c.training.patience, "training");
        read_key(*s, "violation_weight", c.training.violation_weight, "training");
        bool par = c.training.exec == Execution::parallel;
        read_key(*s, "parallel", par, "training");
        c.training.exec = par ? Execution::parallel : Execution::serial;
    }
    if (const Json* s = section("eval", {"split", "risk_bins", "reference_seed"})) {
        read_key(*s, "split", c.eval.split, "eval");
        read_key(*s, "risk_bins", c.eval.risk_bins, "eval");
        read_key(*s, "reference_seed", c.eval.reference_seed, "eval");
    }
    if (const Json* s = section("sweep", {"targets", "fresh_seed", "parallel"})) {
        read_key(*s, "targets", c.sweep.targets, "sweep");
        read_key(*s, "fresh_seed", c.sweep.fresh_seed, "sweep");
        read_key(*s, "parallel", c.sweep.parallel, "sweep");
    }
    try {
        c.validate();
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return run_config_from_json(j);
}

void apply_override(Json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
    const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    Json value;
    try {
        value = Json::parse(text);
    } catch (const nlohmann::json::parse_error&) {
        value = text;
    }
    Json* node = &j;
    std::stringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t k = 0; k + 1 < parts.size(); ++k) {
        if (!node->is_object()) throw ConfigError("override path crosses a non-object: " + path);
        node = &(*node)[parts[k]];
    }
    (*node)[parts.back()] = value;
}

}  // namespace drouter
