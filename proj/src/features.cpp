#include "drouter/features.hpp"

#include <cmath>

#include "drouter/error.hpp"

namespace drouter {

const char* router_input_name(std::size_t column) {
    static const char* names[kRouterInputCount] = {"logit_0",     "logit_1", "vim_risk_z", "quality_risk",
                                                   "uncertainty", "vCDR",    "aCDR"};
    return column < kRouterInputCount ? names[column] : "?";
}

FeatureStats fit_feature_stats(const CohortTable& train) {
    if (train.rows.empty()) throw DataError("cannot fit feature statistics on an empty split");
    FeatureStats st;
    const double n = static_cast<double>(train.rows.size());
    for (std::size_t c = 0; c < kRouterInputCount; ++c) {
        double mean = 0.0;
        for (const auto& r : train.rows) {
            DecisionState raw = r;
            raw.sync_inputs_from_raw();
            mean += raw.inputs[c];
        }
        mean /= n;
        double var = 0.0;
        for (const auto& r : train.rows) {
            DecisionState raw = r;
            raw.sync_inputs_from_raw();
            var += (raw.inputs[c] - mean) * (raw.inputs[c] - mean);
        }
        double sd = std::sqrt(var / n);
        if (sd < kFeatureStdFloor) {
            st.warnings.push_back(std::string("feature ") + router_input_name(c) +
                                  " has (near) zero variance; std floored");
            sd = kFeatureStdFloor;
        }
        st.mean[c] = mean;
        st.stddev[c] = sd;
    }
    return st;
}

void apply_feature_stats(DecisionState& state, const FeatureStats& stats) {
    state.sync_inputs_from_raw();
    for (std::size_t c = 0; c < kRouterInputCount; ++c) {
        state.inputs[c] = (state.inputs[c] - stats.mean[c]) / stats.stddev[c];
    }
}

CohortTable standardize_features(const CohortTable& cohort, const std::optional<FeatureStats>& stats,
                                 FeatureStats* fitted) {
    const FeatureStats st = stats ? *stats : fit_feature_stats(cohort);
    if (fitted) *fitted = st;
    CohortTable out = cohort;
    for (auto& r : out.rows) apply_feature_stats(r, st);
    out.standardized = true;
    return out;
}

}  // namespace drouter
