#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "drouter/policy.hpp"

namespace drouter {

enum class Split { train, val, test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

inline constexpr std::int8_t kLabelMissing = -1;

/// Router input columns, in the order they are stored in DecisionState::inputs.
enum RouterInput : std::size_t {
    in_logit_0 = 0,
    in_logit_1,
    in_vim_risk_z,
    in_quality_risk,
    in_uncertainty,
    in_vcdr,
    in_acdr,
    kRouterInputCount,
};

using RouterInputs = std::array<double, kRouterInputCount>;

/// One decision-time case: frozen-AI outputs, risk signals, structure,
/// ground truth and the partially observed expert panel.
struct DecisionState {
    std::string id;
    std::string cohort;
    Split split = Split::train;
    int label = 0;
    double logit_0 = 0.0;
    double logit_1 = 0.0;
    double prob_1 = 0.5;
    double vim_risk_z = 0.0;
    double quality_risk = 0.0;
    double uncertainty = 0.5;
    double vcdr = 0.0;
    double acdr = 0.0;
    std::vector<std::int8_t> expert_labels;  // 0, 1 or kLabelMissing
    ExpertMask mask;                         // bit j set iff expert_labels[j] observed
    /// Router-facing copy of the continuous columns; z-scored after
    /// standardize_features, raw otherwise.
    RouterInputs inputs{};

    std::size_t experts() const noexcept { return expert_labels.size(); }
    void sync_mask_from_labels();
    void sync_inputs_from_raw();
};

/// Checks the per-row invariants (probabilities, uncertainty, mask/NA pattern).
/// Throws DataError describing the first violation.
void validate_state(const DecisionState& s);

/// Parameters of the label generator carried alongside generated cohorts.
struct CohortGlobals {
    double kappa_diff = 5.0;
    double tau_youden = 0.0;
    double rho_ref = 0.5;
    double b = 0.5;
    double d = 0.5;
    int k_min = -1;  // -1: ceil(J / 3)
};

struct CohortTable {
    std::size_t experts = 0;
    std::vector<DecisionState> rows;
    CohortGlobals globals;
    bool standardized = false;

    std::vector<const DecisionState*> split_rows(Split s) const;
    CohortTable subset(Split s) const;
};

/// CSV with header: id,cohort,y,logit_0,logit_1,prob_1,vim_risk_z,quality_risk,
/// uncertainty,vCDR,aCDR,expert_1..expert_M,split. Expert cells are 0, 1 or NA.
void write_cohort_csv(std::ostream& out, const CohortTable& cohort);
void write_cohort_csv(const std::string& path, const CohortTable& cohort);
CohortTable read_cohort_csv(std::istream& in);
CohortTable read_cohort_csv(const std::string& path);

/// Shortest text that parses back to the identical double.
std::string format_double(double x);

}  // namespace drouter
