#pragma once

#include <optional>
#include <string>
#include <vector>

#include "drouter/cohort_table.hpp"

namespace drouter {

inline constexpr double kFeatureStdFloor = 1e-6;

/// Per-column mean and population standard deviation of the router inputs,
/// estimated once on the training split and then frozen.
struct FeatureStats {
    RouterInputs mean{};
    RouterInputs stddev{};
    std::vector<std::string> warnings;
};

FeatureStats fit_feature_stats(const CohortTable& train);

/// Returns a copy of `cohort` with z-scored router inputs. With no stats the
/// statistics are fitted on `cohort` itself (fit mode; training split only)
/// and written to `fitted`.
CohortTable standardize_features(const CohortTable& cohort, const std::optional<FeatureStats>& stats,
                                 FeatureStats* fitted = nullptr);

void apply_feature_stats(DecisionState& state, const FeatureStats& stats);

const char* router_input_name(std::size_t column);

}  // namespace drouter
