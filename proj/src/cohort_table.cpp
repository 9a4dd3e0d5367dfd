#include "drouter/cohort_table.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "drouter/error.hpp"

namespace drouter {

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw DataError("unknown split '" + s + "'");
}

void DecisionState::sync_mask_from_labels() {
    std::vector<std::uint8_t> bits(expert_labels.size());
    for (std::size_t j = 0; j < bits.size(); ++j) bits[j] = expert_labels[j] == kLabelMissing ? 0 : 1;
    mask = ExpertMask(std::move(bits));
}

void DecisionState::sync_inputs_from_raw() {
    inputs[in_logit_0] = logit_0;
    inputs[in_logit_1] = logit_1;
    inputs[in_vim_risk_z] = vim_risk_z;
    inputs[in_quality_risk] = quality_risk;
    inputs[in_uncertainty] = uncertainty;
    inputs[in_vcdr] = vcdr;
    inputs[in_acdr] = acdr;
}

void validate_state(const DecisionState& s) {
    auto fail = [&](const std::string& what) { throw DataError("row '" + s.id + "': " + what); };
    if (s.label != 0 && s.label != 1) fail("label must be 0 or 1");
    if (!(s.prob_1 >= 0.0 && s.prob_1 <= 1.0)) fail("prob_1 outside [0,1]");
    const double softmax1 = 1.0 / (1.0 + std::exp(s.logit_0 - s.logit_1));
    if (std::abs(softmax1 - s.prob_1) > 1e-6) fail("prob_1 disagrees with softmax(logits)");
    const double u = 1.0 - std::max(s.prob_1, 1.0 - s.prob_1);
    if (std::abs(u - s.uncertainty) > 1e-6) fail("uncertainty disagrees with 1 - max class probability");
    if (!(s.quality_risk >= 0.0 && s.quality_risk <= 1.0)) fail("quality_risk outside [0,1]");
    if (!(s.vcdr >= 0.0 && s.vcdr <= 1.5) || !(s.acdr >= 0.0 && s.acdr <= 1.5)) fail("cup-to-disc ratio outside [0,1.5]");
    if (!std::isfinite(s.vim_risk_z)) fail("non-finite vim_risk_z");
    if (s.mask.size() != s.expert_labels.size()) fail("mask length differs from expert label count");
    for (std::size_t j = 0; j < s.expert_labels.size(); ++j) {
        const auto l = s.expert_labels[j];
        if (l != 0 && l != 1 && l != kLabelMissing) fail("expert label must be 0, 1 or NA");
        if (s.mask.feasible(j) != (l != kLabelMissing)) fail("mask inconsistent with NA pattern");
    }
}

std::vector<const DecisionState*> CohortTable::split_rows(Split s) const {
    std::vector<const DecisionState*> out;
    for (const auto& r : rows) {
        if (r.split == s) out.push_back(&r);
    }
    return out;
}

CohortTable CohortTable::subset(Split s) const {
    CohortTable t;
    t.experts = experts;
    t.globals = globals;
    t.standardized = standardized;
    for (const auto& r : rows) {
        if (r.split == s) t.rows.push_back(r);
    }
    return t;
}

std::string format_double(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

namespace {

const char* kFixedColumns[] = {"id", "cohort", "y", "logit_0", "logit_1", "prob_1",
                               "vim_risk_z", "quality_risk", "uncertainty", "vCDR", "aCDR"};
constexpr std::size_t kFixedCount = sizeof(kFixedColumns) / sizeof(kFixedColumns[0]);

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s, const std::string& column, std::size_t line) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw DataError("line " + std::to_string(line) + ": cannot parse '" + s + "' in column " + column);
    }
    return v;
}

}  // namespace

void write_cohort_csv(std::ostream& out, const CohortTable& cohort) {
    for (std::size_t c = 0; c < kFixedCount; ++c) out << (c ? "," : "") << kFixedColumns[c];
    for (std::size_t j = 0; j < cohort.experts; ++j) out << ",expert_" << (j + 1);
    out << ",split\n";
    for (const auto& r : cohort.rows) {
        out << r.id << ',' << r.cohort << ',' << r.label << ',' << format_double(r.logit_0) << ','
            << format_double(r.logit_1) << ',' << format_double(r.prob_1) << ',' << format_double(r.vim_risk_z)
            << ',' << format_double(r.quality_risk) << ',' << format_double(r.uncertainty) << ','
            << format_double(r.vcdr) << ',' << format_double(r.acdr);
        for (auto l : r.expert_labels) {
            out << ',';
            if (l == kLabelMissing) out << "NA";
            else out << static_cast<int>(l);
        }
        out << ',' << to_string(r.split) << '\n';
    }
}

void write_cohort_csv(const std::string& path, const CohortTable& cohort) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    write_cohort_csv(out, cohort);
    if (!out) throw DataError("failed writing '" + path + "'");
}

CohortTable read_cohort_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("cohort CSV is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line);
    if (header.size() < kFixedCount + 1) throw DataError("cohort CSV header is too short");
    for (std::size_t c = 0; c < kFixedCount; ++c) {
        if (header[c] != kFixedColumns[c]) {
            throw DataError("cohort CSV column " + std::to_string(c + 1) + " must be '" + kFixedColumns[c] +
                            "', found '" + header[c] + "'");
        }
    }
    if (header.back() != "split") throw DataError("cohort CSV must end with a 'split' column");
    const std::size_t experts = header.size() - kFixedCount - 1;
    for (std::size_t j = 0; j < experts; ++j) {
        if (header[kFixedCount + j] != "expert_" + std::to_string(j + 1)) {
            throw DataError("expected column expert_" + std::to_string(j + 1));
        }
    }
    CohortTable t;
    t.experts = experts;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                            " cells, found " + std::to_string(cells.size()));
        }
        DecisionState s;
        s.id = cells[0];
        s.cohort = cells[1];
        const double y = parse_double(cells[2], "y", line_no);
        if (y != 0.0 && y != 1.0) throw DataError("line " + std::to_string(line_no) + ": y must be 0 or 1");
        s.label = static_cast<int>(y);
        s.logit_0 = parse_double(cells[3], "logit_0", line_no);
        s.logit_1 = parse_double(cells[4], "logit_1", line_no);
        s.prob_1 = parse_double(cells[5], "prob_1", line_no);
        s.vim_risk_z = parse_double(cells[6], "vim_risk_z", line_no);
        s.quality_risk = parse_double(cells[7], "quality_risk", line_no);
        s.uncertainty = parse_double(cells[8], "uncertainty", line_no);
        s.vcdr = parse_double(cells[9], "vCDR", line_no);
        s.acdr = parse_double(cells[10], "aCDR", line_no);
        s.expert_labels.resize(experts);
        for (std::size_t j = 0; j < experts; ++j) {
            const auto& c = cells[kFixedCount + j];
            if (c == "NA" || c.empty()) s.expert_labels[j] = kLabelMissing;
            else if (c == "0") s.expert_labels[j] = 0;
            else if (c == "1") s.expert_labels[j] = 1;
            else throw DataError("line " + std::to_string(line_no) + ": expert cell must be 0, 1 or NA");
        }
        s.split = parse_split(cells.back());
        s.sync_mask_from_labels();
        s.sync_inputs_from_raw();
        validate_state(s);
        t.rows.push_back(std::move(s));
    }
    return t;
}

CohortTable read_cohort_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open cohort CSV '" + path + "'");
    return read_cohort_csv(in);
}

}  // namespace drouter
