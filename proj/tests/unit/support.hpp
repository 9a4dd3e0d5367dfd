#pragma once

// Shared fixtures for the unit suites: random decision states and small
// brute-force helpers used as independent oracles.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "drouter/cohort_table.hpp"

namespace testkit {

using drouter::DecisionState;

inline DecisionState make_state(std::mt19937_64& gen, std::size_t experts, double availability = 0.6) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    DecisionState s;
    s.id = "case_" + std::to_string(gen() % 100000);
    s.cohort = "synthetic";
    s.label = u(gen) < 0.3 ? 1 : 0;
    const double z = 3.0 * n(gen);
    s.logit_0 = -0.5 * z;
    s.logit_1 = 0.5 * z;
    s.prob_1 = 1.0 / (1.0 + std::exp(-z));
    s.uncertainty = 1.0 - std::max(s.prob_1, 1.0 - s.prob_1);
    s.vim_risk_z = n(gen);
    s.quality_risk = u(gen);
    s.vcdr = 0.2 + 0.7 * u(gen);
    s.acdr = s.vcdr * s.vcdr * (0.8 + 0.4 * u(gen));
    s.expert_labels.assign(experts, drouter::kLabelMissing);
    for (std::size_t j = 0; j < experts; ++j) {
        if (u(gen) < availability) s.expert_labels[j] = static_cast<std::int8_t>(u(gen) < 0.8 ? s.label : 1 - s.label);
    }
    s.sync_mask_from_labels();
    s.sync_inputs_from_raw();
    return s;
}

inline std::vector<double> random_simplex(std::mt19937_64& gen, std::size_t n) {
    std::exponential_distribution<double> e(1.0);
    std::vector<double> v(n);
    double z = 0.0;
    for (auto& x : v) z += (x = e(gen));
    for (auto& x : v) x /= z;
    return v;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace testkit
