#include "drouter/generator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "drouter/error.hpp"
#include "drouter/policy.hpp"

namespace drouter {

GenerationConfig GenerationConfig::defaults() {
    GenerationConfig c;
    // Baseline operating points spread over Se 0.46-0.95, Sp 0.70-0.99.
    const double se[12] = {0.62, 0.71, 0.80, 0.88, 0.93, 0.46, 0.58, 0.67, 0.75, 0.83, 0.90, 0.95};
    const double sp[12] = {0.95, 0.90, 0.86, 0.80, 0.74, 0.99, 0.97, 0.93, 0.89, 0.84, 0.78, 0.70};
    for (int j = 0; j < 12; ++j) c.expert_profiles.push_back({se[j], sp[j], 1.0, 1.0, -1.0});

    SubCohortSpec refuge;
    refuge.name = "refuge";
    refuge.train = 250, refuge.val = 250, refuge.test = 250;
    refuge.prevalence = 0.10;
    refuge.panel = {5, 6, 7, 8, 9, 10, 11};
    refuge.availability = 0.85;
    refuge.ood_level = 0.0;
    refuge.ai = {25.0, 0.64, 0.0, 0.3, 1.0};

    SubCohortSpec chaksu;
    chaksu.name = "chaksu";
    chaksu.train = 430, chaksu.val = 200, chaksu.test = 210;
    chaksu.prevalence = 0.18;
    chaksu.panel = {0, 1, 2, 3, 4};
    chaksu.availability = 0.9;
    chaksu.ood_level = 1.5;
    chaksu.ai = {10.0, 0.64, 0.8, 1.0, 2.0};

    SubCohortSpec origa;
    origa.name = "origa";
    origa.train = 205, origa.val = 100, origa.test = 105;
    origa.prevalence = 0.25;
    origa.retrieval = true;
    origa.availability = 0.6;
    origa.ood_level = 2.5;
    origa.ai = {6.0, 0.64, 2.2, 1.5, 2.0};

    c.cohorts = {refuge, chaksu, origa};
    return c;
}

void GenerationConfig::validate() const {
    if (experts == 0) throw ConfigError("generation: experts must be positive");
    if (expert_profiles.size() != experts) throw ConfigError("generation: one expert profile per expert required");
    for (const auto& e : expert_profiles) {
        if (!(e.se > 0.0 && e.se < 1.0 && e.sp > 0.0 && e.sp < 1.0)) throw ConfigError("generation: Se/Sp must lie in (0,1)");
        if (!(e.alpha >= 0.0 && e.gamma >= 0.0)) throw ConfigError("generation: modulation gains must be >= 0");
        if (e.fixed_phi >= 0.0 && !(e.fixed_phi > 0.0 && e.fixed_phi < 1.0))
            throw ConfigError("generation: fixed_phi must lie in (0,1)");
    }
    if (mask_regime != "dataset" && mask_regime != "uniform")
        throw ConfigError("generation: mask_regime must be 'dataset' or 'uniform'");
    if (!(uniform_availability >= 0.0 && uniform_availability <= 1.0))
        throw ConfigError("generation: uniform_availability must lie in [0,1]");
    if (!(quality_contamination >= 0.0 && quality_contamination <= 1.0 && quality_base_max > 0.0 &&
          quality_base_max < 1.0))
        throw ConfigError("generation: invalid quality-risk mixture");
    if (retrieval_k == 0 || embedding_dim == 0) throw ConfigError("generation: retrieval_k and embedding_dim must be positive");
    if (cohorts.empty()) throw ConfigError("generation: at least one sub-cohort required");
    if (!(globals.kappa_diff > 0.0 && globals.b >= 0.0 && globals.d >= 0.0))
        throw ConfigError("generation: kappa_diff must be > 0 and b, d >= 0");
    bool any_annotated = false;
    for (const auto& c : cohorts) {
        if (c.name.empty()) throw ConfigError("generation: sub-cohort name required");
        if (c.size() == 0) throw ConfigError("generation: sub-cohort '" + c.name + "' has no rows");
        if (!(c.prevalence > 0.0 && c.prevalence < 1.0))
            throw ConfigError("generation: prevalence of '" + c.name + "' must lie in (0,1)");
        if (!(c.availability >= 0.0 && c.availability <= 1.0))
            throw ConfigError("generation: availability of '" + c.name + "' must lie in [0,1]");
        if (!(c.ai.scale >= 0.0 && c.ai.noise >= 0.0 && c.ai.quality_gain >= 0.0))
            throw ConfigError("generation: AI model of '" + c.name + "' needs scale, noise, quality_gain >= 0");
        for (auto j : c.panel) {
            if (j >= experts) throw ConfigError("generation: panel of '" + c.name + "' names an unknown expert");
        }
        if (!c.retrieval) {
            if (c.panel.empty() && mask_regime == "dataset")
                throw ConfigError("generation: annotated sub-cohort '" + c.name + "' needs a panel");
            if (c.train == 0 || c.val == 0) throw ConfigError("generation: annotated sub-cohort '" + c.name +
                                                              "' needs train and val rows for fitting");
            any_annotated = true;
        }
    }
    if (!any_annotated) throw ConfigError("generation: at least one annotated sub-cohort required");
}

Json to_json(const GenerationConfig& c) {
    Json j;
    j["experts"] = c.experts;
    j["seed"] = c.seed;
    j["globals"] = {{"kappa_diff", c.globals.kappa_diff}, {"rho_ref", c.globals.rho_ref}, {"b", c.globals.b},
                    {"d", c.globals.d}, {"k_min", c.globals.k_min}};
    j["mask_regime"] = c.mask_regime;
    j["uniform_availability"] = c.uniform_availability;
    j["quality_contamination"] = c.quality_contamination;
    j["quality_base_max"] = c.quality_base_max;
    j["retrieval_k"] = c.retrieval_k;
    j["embedding_dim"] = c.embedding_dim;
    j["embedding_noise"] = c.embedding_noise;
    j["expert_profiles"] = Json::array();
    for (const auto& e : c.expert_profiles)
        j["expert_profiles"].push_back(
            {{"se", e.se}, {"sp", e.sp}, {"alpha", e.alpha}, {"gamma", e.gamma}, {"fixed_phi", e.fixed_phi}});
    j["cohorts"] = Json::array();
    for (const auto& s : c.cohorts) {
        j["cohorts"].push_back({{"name", s.name},
                                {"train", s.train},
                                {"val", s.val},
                                {"test", s.test},
                                {"prevalence", s.prevalence},
                                {"panel", s.panel},
                                {"retrieval", s.retrieval},
                                {"availability", s.availability},
                                {"ood_level", s.ood_level},
                                {"ai",
                                 {{"scale", s.ai.scale},
                                  {"threshold", s.ai.threshold},
                                  {"shift", s.ai.shift},
                                  {"noise", s.ai.noise},
                                  {"quality_gain", s.ai.quality_gain}}}});
    }
    const auto& a = c.anatomy;
    j["anatomy"] = {{"disc_log_mean", a.disc_log_mean},   {"disc_log_sd", a.disc_log_sd},
                    {"aspect_mean", a.aspect_mean},       {"aspect_sd", a.aspect_sd},
                    {"cup_min", a.cup_min},               {"cup_span", a.cup_span},
                    {"cup_beta_neg_a", a.cup_beta_neg_a}, {"cup_beta_neg_b", a.cup_beta_neg_b},
                    {"cup_beta_pos_a", a.cup_beta_pos_a}, {"cup_beta_pos_b", a.cup_beta_pos_b},
                    {"annotator_jitter", a.annotator_jitter}, {"center_jitter", a.center_jitter}};
    return j;
}

GenerationConfig generation_config_from_json(const Json& j) {
    const std::string w = "generation";
    reject_unknown_keys(j,
                        {"experts", "seed", "globals", "mask_regime", "uniform_availability", "quality_contamination",
                         "quality_base_max", "retrieval_k", "embedding_dim", "embedding_noise", "expert_profiles",
                         "cohorts", "anatomy"},
                        w);
    GenerationConfig c = GenerationConfig::defaults();
    read_key(j, "experts", c.experts, w);
    read_key(j, "seed", c.seed, w);
    if (j.contains("globals")) {
        const auto& g = j["globals"];
        reject_unknown_keys(g, {"kappa_diff", "rho_ref", "b", "d", "k_min"}, w + ".globals");
        read_key(g, "kappa_diff", c.globals.kappa_diff, w);
        read_key(g, "rho_ref", c.globals.rho_ref, w);
        read_key(g, "b", c.globals.b, w);
        read_key(g, "d", c.globals.d, w);
        read_key(g, "k_min", c.globals.k_min, w);
    }
    read_key(j, "mask_regime", c.mask_regime, w);
    read_key(j, "uniform_availability", c.uniform_availability, w);
    read_key(j, "quality_contamination", c.quality_contamination, w);
    read_key(j, "quality_base_max", c.quality_base_max, w);
    read_key(j, "retrieval_k", c.retrieval_k, w);
    read_key(j, "embedding_dim", c.embedding_dim, w);
    read_key(j, "embedding_noise", c.embedding_noise, w);
    if (j.contains("expert_profiles")) {
        if (!j["expert_profiles"].is_array()) throw ConfigError(w + ".expert_profiles: expected an array");
        c.expert_profiles.clear();
        for (const auto& e : j["expert_profiles"]) {
            reject_unknown_keys(e, {"se", "sp", "alpha", "gamma", "fixed_phi"}, w + ".expert_profiles[]");
            ExpertSpec s;
            read_key(e, "se", s.se, w);
            read_key(e, "sp", s.sp, w);
            read_key(e, "alpha", s.alpha, w);
            read_key(e, "gamma", s.gamma, w);
            read_key(e, "fixed_phi", s.fixed_phi, w);
            c.expert_profiles.push_back(s);
        }
    }
    if (j.contains("cohorts")) {
        if (!j["cohorts"].is_array()) throw ConfigError(w + ".cohorts: expected an array");
        c.cohorts.clear();
        for (const auto& e : j["cohorts"]) {
            const std::string ww = w + ".cohorts[]";
            reject_unknown_keys(e,
                                {"name", "train", "val", "test", "prevalence", "panel", "retrieval", "availability",
                                 "ood_level", "ai"},
                                ww);
            SubCohortSpec s;
            read_key(e, "name", s.name, ww);
            read_key(e, "train", s.train, ww);
            read_key(e, "val", s.val, ww);
            read_key(e, "test", s.test, ww);
            read_key(e, "prevalence", s.prevalence, ww);
            read_key(e, "panel", s.panel, ww);
            read_key(e, "retrieval", s.retrieval, ww);
            read_key(e, "availability", s.availability, ww);
            read_key(e, "ood_level", s.ood_level, ww);
            if (e.contains("ai")) {
                const auto& a = e["ai"];
                reject_unknown_keys(a, {"scale", "threshold", "shift", "noise", "quality_gain"}, ww + ".ai");
                read_key(a, "scale", s.ai.scale, ww);
                read_key(a, "threshold", s.ai.threshold, ww);
                read_key(a, "shift", s.ai.shift, ww);
                read_key(a, "noise", s.ai.noise, ww);
                read_key(a, "quality_gain", s.ai.quality_gain, ww);
            }
            c.cohorts.push_back(s);
        }
    }
    if (j.contains("anatomy")) {
        const auto& a = j["anatomy"];
        const std::string ww = w + ".anatomy";
        reject_unknown_keys(a,
                            {"disc_log_mean", "disc_log_sd", "aspect_mean", "aspect_sd", "cup_min", "cup_span",
                             "cup_beta_neg_a", "cup_beta_neg_b", "cup_beta_pos_a", "cup_beta_pos_b",
                             "annotator_jitter", "center_jitter"},
                            ww);
        auto& t = c.anatomy;
        read_key(a, "disc_log_mean", t.disc_log_mean, ww);
        read_key(a, "disc_log_sd", t.disc_log_sd, ww);
        read_key(a, "aspect_mean", t.aspect_mean, ww);
        read_key(a, "aspect_sd", t.aspect_sd, ww);
        read_key(a, "cup_min", t.cup_min, ww);
        read_key(a, "cup_span", t.cup_span, ww);
        read_key(a, "cup_beta_neg_a", t.cup_beta_neg_a, ww);
        read_key(a, "cup_beta_neg_b", t.cup_beta_neg_b, ww);
        read_key(a, "cup_beta_pos_a", t.cup_beta_pos_a, ww);
        read_key(a, "cup_beta_pos_b", t.cup_beta_pos_b, ww);
        read_key(a, "annotator_jitter", t.annotator_jitter, ww);
        read_key(a, "center_jitter", t.center_jitter, ww);
    }
    c.validate();
    return c;
}

namespace {

// Everything drawn for one case before any fitting.
struct CaseDraw {
    int y = 0;
    Split split = Split::train;
    std::vector<EvidenceFeatures> phi;  // per annotator
    double vcdr_med = 0.0, acdr_med = 0.0;
    double p_ai = 0.5, logit_ai = 0.0;
    double quality = 0.0, vim = 0.0;
    EmbeddingPair embedding;
};

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double beta_draw(double a, double b, CounterRng& rng) {
    std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
    const double x = ga(rng), y = gb(rng);
    return x / (x + y);
}

std::vector<std::size_t> effective_panel(const GenerationConfig& cfg, const SubCohortSpec& c) {
    if (cfg.mask_regime == "uniform") {
        std::vector<std::size_t> all(cfg.experts);
        std::iota(all.begin(), all.end(), std::size_t{0});
        return all;
    }
    return c.panel;
}

// Fixed random projection of the latent morphology for embedding family f.
std::vector<std::vector<double>> projection(const GenerationConfig& cfg, std::uint64_t family, std::size_t latent) {
    CounterRng rng(cfg.seed, StreamDomain::embeddings, family, 0xFFFF);
    std::normal_distribution<double> n01;
    std::vector<std::vector<double>> P(cfg.embedding_dim, std::vector<double>(latent));
    for (auto& row : P) {
        for (auto& v : row) v = n01(rng);
    }
    return P;
}

CaseDraw draw_case(const GenerationConfig& cfg, const SubCohortSpec& c, std::size_t cohort_idx, std::size_t row,
                   Split split, const std::array<std::vector<std::vector<double>>, 2>& proj) {
    CounterRng rng(cfg.seed, StreamDomain::cohort_case, cohort_idx, row);
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> u01;
    const auto& A = cfg.anatomy;
    CaseDraw d;
    d.split = split;
    d.y = u01(rng) < c.prevalence ? 1 : 0;

    Ellipse disc;
    disc.w = std::exp(A.disc_log_mean + A.disc_log_sd * n01(rng));
    disc.h = disc.w * std::exp(A.aspect_mean + A.aspect_sd * n01(rng));
    disc.theta = -0.3 + 0.6 * u01(rng);
    const double s = A.cup_min + A.cup_span * (d.y ? beta_draw(A.cup_beta_pos_a, A.cup_beta_pos_b, rng)
                                                   : beta_draw(A.cup_beta_neg_a, A.cup_beta_neg_b, rng));
    const double dec_true = std::abs(A.center_jitter * n01(rng));

    std::vector<double> vc, ac, dc;
    d.phi.resize(cfg.experts);
    for (std::size_t j = 0; j < cfg.experts; ++j) {
        EllipseAnnotation ann;
        ann.disc = disc;
        ann.disc.w *= std::exp(0.5 * A.annotator_jitter * n01(rng));
        ann.disc.h *= std::exp(0.5 * A.annotator_jitter * n01(rng));
        const double sj = s * std::exp(A.annotator_jitter * n01(rng));
        ann.cup.w = sj * ann.disc.w * std::exp(0.03 * n01(rng));
        ann.cup.h = sj * ann.disc.h;
        ann.cup.theta = ann.disc.theta + 0.1 * n01(rng);
        const double vd = vertical_diameter(ann.disc);
        ann.cup.cx = (dec_true + A.center_jitter * 0.3 * n01(rng)) * vd;
        ann.cup.cy = A.center_jitter * 0.3 * n01(rng) * vd;
        const auto bm = structural_biomarkers(ann);
        d.phi[j] = evidence_features(bm);
    }
    std::vector<std::size_t> med_from = effective_panel(cfg, c);
    if (med_from.empty()) {
        med_from.resize(cfg.experts);
        std::iota(med_from.begin(), med_from.end(), std::size_t{0});
    }
    for (auto j : med_from) {
        vc.push_back(d.phi[j][1]);
        ac.push_back(d.phi[j][2]);
        dc.push_back(d.phi[j][4]);
    }
    d.vcdr_med = median(vc);
    d.acdr_med = median(ac);
    const double dec_med = median(dc);

    d.quality = u01(rng) < cfg.quality_contamination
                    ? cfg.quality_base_max + (1.0 - cfg.quality_base_max) * u01(rng)
                    : cfg.quality_base_max * u01(rng);
    d.vim = c.ood_level + n01(rng);
    const double sd = c.ai.noise + c.ai.quality_gain * d.quality;
    d.logit_ai = std::clamp(c.ai.scale * (d.vcdr_med - c.ai.threshold) + c.ai.shift + sd * n01(rng), -30.0, 30.0);
    d.p_ai = sigmoid(d.logit_ai);

    const std::array<double, 4> latent = {(d.vcdr_med - 0.5) / 0.15, (d.acdr_med - 0.3) / 0.15,
                                          (std::log(disc.w) - A.disc_log_mean) / std::max(A.disc_log_sd, 1e-6),
                                          dec_med / std::max(A.center_jitter, 1e-6)};
    for (std::size_t f = 0; f < 2; ++f) {
        std::vector<double> e(cfg.embedding_dim);
        for (std::size_t k = 0; k < cfg.embedding_dim; ++k) {
            double v = 0.0;
            for (std::size_t l = 0; l < latent.size(); ++l) v += proj[f][k][l] * latent[l];
            e[k] = v + cfg.embedding_noise * std::sqrt(static_cast<double>(latent.size())) * n01(rng);
        }
        l2_normalize(e);
        (f == 0 ? d.embedding.first : d.embedding.second) = std::move(e);
    }
    return d;
}

}  // namespace

GenerationResult generate_cohort(const GenerationConfig& cfg, Execution exec) {
    cfg.validate();
    const std::size_t M = cfg.experts, C = cfg.cohorts.size();
    GenerationResult res;

    // Split labels per sub-cohort: fixed counts, shuffled positions.
    std::vector<std::vector<Split>> splits(C);
    for (std::size_t c = 0; c < C; ++c) {
        const auto& s = cfg.cohorts[c];
        auto& v = splits[c];
        v.insert(v.end(), s.train, Split::train);
        v.insert(v.end(), s.val, Split::val);
        v.insert(v.end(), s.test, Split::test);
        CounterRng rng(cfg.seed, StreamDomain::cohort_split, c);
        std::shuffle(v.begin(), v.end(), rng);
    }
    const std::array<std::vector<std::vector<double>>, 2> proj = {projection(cfg, 0, 4), projection(cfg, 1, 4)};

    std::vector<std::vector<CaseDraw>> draws(C);
    for (std::size_t c = 0; c < C; ++c) {
        draws[c].resize(cfg.cohorts[c].size());
        for_each_index(draws[c].size(), exec, [&](std::size_t i) {
            draws[c][i] = draw_case(cfg, cfg.cohorts[c], c, i, splits[c][i], proj);
        });
    }

    // Sequential fitting on annotated sub-cohorts: evidence model on train,
    // temperature on val, Youden threshold on train.
    res.experts.resize(M);
    std::vector<ExpertProfile> profiles(M);
    for (std::size_t j = 0; j < M; ++j) {
        const auto& e = cfg.expert_profiles[j];
        profiles[j].se = e.se;
        profiles[j].sp = e.sp;
        profiles[j].alpha = e.alpha;
        profiles[j].gamma = e.gamma;
        std::vector<EvidenceFeatures> phi_tr, phi_va;
        std::vector<int> y_tr, y_va;
        for (std::size_t c = 0; c < C; ++c) {
            const auto& s = cfg.cohorts[c];
            const auto panel = effective_panel(cfg, s);
            if (s.retrieval || std::find(panel.begin(), panel.end(), j) == panel.end()) continue;
            for (const auto& d : draws[c]) {
                if (d.split == Split::train) {
                    phi_tr.push_back(d.phi[j]);
                    y_tr.push_back(d.y);
                } else if (d.split == Split::val) {
                    phi_va.push_back(d.phi[j]);
                    y_va.push_back(d.y);
                }
            }
        }
        if (phi_tr.empty() || phi_va.empty()) continue;
        auto& cal = res.experts[j];
        cal.fit = fit_evidence_model(phi_tr, y_tr);
        std::vector<double> scores;
        for (const auto& p : phi_va) {
            double s = 0.0;
            for (std::size_t k = 0; k < 5; ++k) s += cal.fit.w[k] * p[k];
            scores.push_back(s);
        }
        cal.temperature = calibrate_temperature(scores, y_va);
        cal.fitted = true;
        profiles[j].w = cal.fit.w;
        profiles[j].T = cal.temperature.T;
        for (const auto& w : cal.fit.warnings) res.warnings.push_back("expert_" + std::to_string(j + 1) + ": " + w);
        for (const auto& w : cal.temperature.warnings)
            res.warnings.push_back("expert_" + std::to_string(j + 1) + ": " + w);
    }
    {
        std::vector<double> v;
        std::vector<int> y;
        for (std::size_t c = 0; c < C; ++c) {
            if (cfg.cohorts[c].retrieval) continue;
            for (const auto& d : draws[c]) {
                if (d.split != Split::train) continue;
                v.push_back(d.vcdr_med);
                y.push_back(d.y);
            }
        }
        res.youden = youden_threshold(v, y);
    }
    CohortGlobals globals = cfg.globals;
    globals.tau_youden = res.youden.tau;

    // Expert labels for annotated sub-cohorts, then availability masking.
    std::vector<std::vector<std::vector<std::int8_t>>> labels(C);
    auto apply_availability = [&](const SubCohortSpec& s, std::vector<std::int8_t>& lab, CounterRng& rng) {
        std::uniform_real_distribution<double> u01;
        for (std::size_t j = 0; j < M; ++j) {
            const double rate = cfg.mask_regime == "uniform" ? cfg.uniform_availability : s.availability;
            if (!(u01(rng) < rate)) lab[j] = kLabelMissing;
        }
    };
    for (std::size_t c = 0; c < C; ++c) {
        const auto& s = cfg.cohorts[c];
        labels[c].assign(draws[c].size(), std::vector<std::int8_t>(M, kLabelMissing));
        if (s.retrieval) continue;
        const auto panel = effective_panel(cfg, s);
        const std::size_t J = panel.size();
        const std::size_t k_min =
            globals.k_min < 0 ? (J + 2) / 3 : std::min<std::size_t>(static_cast<std::size_t>(globals.k_min), J);
        for_each_index(draws[c].size(), exec, [&](std::size_t i) {
            const auto& d = draws[c][i];
            CounterRng rng(cfg.seed, StreamDomain::expert_labels, c, i);
            std::vector<double> phi(J);
            for (std::size_t t = 0; t < J; ++t) {
                const std::size_t j = panel[t];
                const auto& e = cfg.expert_profiles[j];
                if (e.fixed_phi > 0.0) {
                    phi[t] = e.fixed_phi;
                    continue;
                }
                double sc = 0.0;
                for (std::size_t k = 0; k < 5; ++k) sc += profiles[j].w[k] * d.phi[j][k];
                const double p_cal = sigmoid(sc / profiles[j].T);
                const auto op = operating_points(d.vcdr_med, p_cal, profiles[j], globals.tau_youden, globals);
                phi[t] = std::clamp(d.y ? op.se : op.sp, 1e-9, 1.0 - 1e-9);
            }
            const auto correct = conditional_correctness_sampler(phi, k_min, rng);
            const auto yhat = instantiate_expert_labels(d.y, correct);
            auto& lab = labels[c][i];
            for (std::size_t t = 0; t < J; ++t) lab[panel[t]] = yhat[t];
            apply_availability(s, lab, rng);
        });
    }

    // Retrieval cohorts: label-matched pool of annotated training rows.
    std::vector<RetrievalPoolRow> pool;
    for (std::size_t c = 0; c < C; ++c) {
        if (cfg.cohorts[c].retrieval) continue;
        for (std::size_t i = 0; i < draws[c].size(); ++i) {
            if (draws[c][i].split != Split::train) continue;
            pool.push_back({&draws[c][i].embedding, &labels[c][i], draws[c][i].y});
        }
    }
    for (std::size_t c = 0; c < C; ++c) {
        const auto& s = cfg.cohorts[c];
        if (!s.retrieval) continue;
        std::vector<std::vector<std::string>> warn(draws[c].size());
        for_each_index(draws[c].size(), exec, [&](std::size_t i) {
            const auto& d = draws[c][i];
            auto r = retrieve_pseudo_labels(d.embedding, pool, d.y, cfg.retrieval_k, M);
            CounterRng rng(cfg.seed, StreamDomain::expert_labels, c, i);
            labels[c][i] = std::move(r.labels);
            apply_availability(s, labels[c][i], rng);
            warn[i] = std::move(r.warnings);
        });
        for (auto& w : warn) {
            if (!w.empty()) {
                res.warnings.push_back(s.name + ": " + w.front());
                break;
            }
        }
    }

    auto& table = res.table;
    table.experts = M;
    table.globals = globals;
    for (std::size_t c = 0; c < C; ++c) {
        const auto& s = cfg.cohorts[c];
        const int width = static_cast<int>(std::to_string(draws[c].size()).size());
        for (std::size_t i = 0; i < draws[c].size(); ++i) {
            const auto& d = draws[c][i];
            DecisionState st;
            std::string num = std::to_string(i);
            st.id = s.name + "_" + std::string(static_cast<std::size_t>(width) - num.size(), '0') + num;
            st.cohort = s.name;
            st.split = d.split;
            st.label = d.y;
            st.logit_0 = -0.5 * d.logit_ai;
            st.logit_1 = 0.5 * d.logit_ai;
            st.prob_1 = d.p_ai;
            st.vim_risk_z = d.vim;
            st.quality_risk = d.quality;
            st.uncertainty = 1.0 - std::max(d.p_ai, 1.0 - d.p_ai);
            st.vcdr = d.vcdr_med;
            st.acdr = d.acdr_med;
            st.expert_labels = labels[c][i];
            st.sync_mask_from_labels();
            st.sync_inputs_from_raw();
            validate_state(st);
            res.embeddings.emplace(st.id, d.embedding);
            table.rows.push_back(std::move(st));
        }
    }
    return res;
}

OrderedJson generation_manifest(const GenerationConfig& cfg, const GenerationResult& res) {
    OrderedJson m;
    const std::string canon = to_json(cfg).dump();
    m["config_hash"] = hex64(fnv1a64(canon));
    m["seed"] = cfg.seed;
    m["experts"] = cfg.experts;
    m["rows"] = res.table.rows.size();
    std::map<std::string, std::map<std::string, std::size_t>> counts;
    std::map<std::string, std::size_t> split_total;
    for (const auto& r : res.table.rows) {
        ++counts[r.cohort][to_string(r.split)];
        ++split_total[to_string(r.split)];
    }
    OrderedJson s;
    for (const char* k : {"train", "val", "test"}) s[k] = split_total[k];
    m["splits"] = s;
    OrderedJson per;
    for (const auto& sc : cfg.cohorts) {
        OrderedJson e;
        for (const char* k : {"train", "val", "test"}) e[k] = counts[sc.name][k];
        per[sc.name] = e;
    }
    m["cohorts"] = per;
    m["youden_tau"] = res.youden.tau;
    OrderedJson ex = OrderedJson::array();
    for (std::size_t j = 0; j < res.experts.size(); ++j) {
        const auto& e = res.experts[j];
        if (!e.fitted) {
            ex.push_back({{"expert", j + 1}, {"fitted", false}});
            continue;
        }
        ex.push_back({{"expert", j + 1},
                      {"fitted", true},
                      {"w", e.fit.w},
                      {"ridge", e.fit.ridge},
                      {"temperature", e.temperature.T}});
    }
    m["evidence_models"] = ex;
    m["warnings"] = res.warnings;
    return m;
}

void write_embeddings_csv(const std::string& path, const GenerationResult& res) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    std::size_t dim = 0;
    if (!res.embeddings.empty()) dim = res.embeddings.begin()->second.first.size();
    out << "id";
    for (std::size_t k = 0; k < dim; ++k) out << ",a_" << k;
    for (std::size_t k = 0; k < dim; ++k) out << ",b_" << k;
    out << '\n';
    for (const auto& row : res.table.rows) {
        const auto& e = res.embeddings.at(row.id);
        out << row.id;
        for (double v : e.first) out << ',' << format_double(v);
        for (double v : e.second) out << ',' << format_double(v);
        out << '\n';
    }
}

}  // namespace drouter
