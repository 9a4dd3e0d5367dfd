#include "drouter/cohort_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "drouter/error.hpp"
#include "drouter/policy.hpp"

namespace drouter {

double vertical_diameter(const Ellipse& e) {
    const double a = e.w / 2.0, b = e.h / 2.0;
    const double s = std::sin(e.theta), c = std::cos(e.theta);
    return 2.0 * std::sqrt(a * a * s * s + b * b * c * c);
}

Biomarkers structural_biomarkers(const EllipseAnnotation& ann) {
    const auto& D = ann.disc;
    const auto& C = ann.cup;
    if (!(D.w > 0.0 && D.h > 0.0 && C.w > 0.0 && C.h > 0.0)) throw DataError("ellipse axes must be positive");
    Biomarkers b;
    b.vd_disc = vertical_diameter(D);
    if (!(b.vd_disc > 0.0)) throw DataError("optic-disc vertical diameter is zero");
    b.vcdr = vertical_diameter(C) / b.vd_disc;
    b.acdr = (C.w * C.h) / (D.w * D.h);
    b.dec = std::hypot(C.cx - D.cx, C.cy - D.cy) / b.vd_disc;
    return b;
}

EvidenceFeatures evidence_features(const Biomarkers& b) {
    return {1.0, b.vcdr, b.acdr, std::log(b.vd_disc), b.dec};
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

namespace {

using Mat5 = std::array<std::array<double, 5>, 5>;

// Cholesky solve of H x = g; nullopt when H is not numerically positive definite.
std::optional<EvidenceFeatures> cholesky_solve(const Mat5& H, const EvidenceFeatures& g, Mat5* inverse = nullptr) {
    Mat5 L{};
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = H[i][j];
            for (std::size_t k = 0; k < j; ++k) s -= L[i][k] * L[j][k];
            if (i == j) {
                if (!(s > 1e-300)) return std::nullopt;
                L[i][i] = std::sqrt(s);
            } else {
                L[i][j] = s / L[j][j];
            }
        }
    }
    auto solve = [&](EvidenceFeatures b) {
        for (std::size_t i = 0; i < 5; ++i) {
            for (std::size_t k = 0; k < i; ++k) b[i] -= L[i][k] * b[k];
            b[i] /= L[i][i];
        }
        for (std::size_t i = 5; i-- > 0;) {
            for (std::size_t k = i + 1; k < 5; ++k) b[i] -= L[k][i] * b[k];
            b[i] /= L[i][i];
        }
        return b;
    };
    if (inverse) {
        for (std::size_t c = 0; c < 5; ++c) {
            EvidenceFeatures e{};
            e[c] = 1.0;
            const auto col = solve(e);
            for (std::size_t r = 0; r < 5; ++r) (*inverse)[r][c] = col[r];
        }
    }
    return solve(g);
}

// Log-loss softplus terms, stable for large |s|.
double log1pexp(double s) { return s > 0.0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s)); }

double penalized_nll(std::span<const EvidenceFeatures> phi, std::span<const int> y, const EvidenceFeatures& w,
                     double ridge) {
    double nll = 0.0;
    for (std::size_t i = 0; i < phi.size(); ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < 5; ++k) s += w[k] * phi[i][k];
        nll += log1pexp(s) - y[i] * s;
    }
    for (std::size_t k = 1; k < 5; ++k) nll += 0.5 * ridge * w[k] * w[k];
    return nll;
}

struct NewtonOutcome {
    EvidenceFeatures w{};
    Mat5 hessian{};
    int iterations = 0;
    bool converged = false;
    bool singular = false;
};

NewtonOutcome newton_logistic(std::span<const EvidenceFeatures> phi, std::span<const int> y, double ridge) {
    NewtonOutcome out;
    auto& w = out.w;
    double obj = penalized_nll(phi, y, w, ridge);
    for (int it = 0; it < 100; ++it) {
        EvidenceFeatures g{};
        Mat5 H{};
        for (std::size_t i = 0; i < phi.size(); ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < 5; ++k) s += w[k] * phi[i][k];
            const double p = sigmoid(s), v = p * (1.0 - p);
            for (std::size_t a = 0; a < 5; ++a) {
                g[a] += (p - y[i]) * phi[i][a];
                for (std::size_t b = 0; b <= a; ++b) H[a][b] += v * phi[i][a] * phi[i][b];
            }
        }
        for (std::size_t a = 0; a < 5; ++a) {
            for (std::size_t b = 0; b < a; ++b) H[b][a] = H[a][b];
        }
        for (std::size_t k = 1; k < 5; ++k) {
            g[k] += ridge * w[k];
            H[k][k] += ridge;
        }
        out.hessian = H;
        double gmax = 0.0;
        for (double v : g) gmax = std::max(gmax, std::abs(v));
        if (gmax < 1e-8) {
            out.converged = true;
            break;
        }
        const auto step = cholesky_solve(H, g);
        if (!step) {
            out.singular = true;
            break;
        }
        // Changes below the rounding of a sum over all rows count as ties.
        const double slack = 1e-13 * (1.0 + std::abs(obj));
        double t = 1.0;
        EvidenceFeatures trial{};
        double trial_obj = obj;
        for (int halving = 0; halving < 40; ++halving, t *= 0.5) {
            for (std::size_t k = 0; k < 5; ++k) trial[k] = w[k] - t * (*step)[k];
            trial_obj = penalized_nll(phi, y, trial, ridge);
            if (trial_obj <= obj + slack) break;
        }
        ++out.iterations;
        if (!(trial_obj <= obj + slack)) break;  // no descent possible at machine precision
        w = trial;
        obj = trial_obj;
    }
    return out;
}

bool separated(std::span<const EvidenceFeatures> phi, std::span<const int> y, const EvidenceFeatures& w) {
    for (std::size_t i = 0; i < phi.size(); ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < 5; ++k) s += w[k] * phi[i][k];
        if ((2 * y[i] - 1) * s <= 0.0) return false;
    }
    return true;
}

}  // namespace

EvidenceFit fit_evidence_model(std::span<const EvidenceFeatures> phi, std::span<const int> y) {
    if (phi.size() != y.size()) throw ContractError("evidence fit: feature/label count mismatch");
    std::size_t pos = 0;
    for (int v : y) pos += v == 1 ? 1 : 0;
    if (pos == 0 || pos == y.size()) throw DataError("evidence fit needs both classes");

    EvidenceFit fit;
    auto run = newton_logistic(phi, y, 0.0);
    double wmax = 0.0;
    for (double v : run.w) wmax = std::max(wmax, std::abs(v));
    if (run.singular || !run.converged || wmax > 1e4 || separated(phi, y, run.w)) {
        fit.ridge = true;
        fit.warnings.push_back("evidence model: separation detected, refitting with L2 strength 1e-4");
        run = newton_logistic(phi, y, kEvidenceRidge);
    }
    fit.w = run.w;
    fit.iterations = run.iterations;
    fit.converged = run.converged;
    Mat5 inv{};
    if (cholesky_solve(run.hessian, EvidenceFeatures{}, &inv)) {
        for (std::size_t k = 0; k < 5; ++k) fit.std_error[k] = std::sqrt(std::max(inv[k][k], 0.0));
    }
    return fit;
}

TemperatureFit calibrate_temperature(std::span<const double> scores, std::span<const int> y) {
    if (scores.size() != y.size() || scores.empty()) throw ContractError("temperature calibration needs scores");
    auto nll = [&](double log_t) {
        const double inv_t = std::exp(-log_t);
        double v = 0.0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const double s = scores[i] * inv_t;
            v += log1pexp(s) - y[i] * s;
        }
        return v;
    };
    constexpr double lo0 = -2.5, hi0 = 2.5, tol = 1e-5;
    const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = lo0, hi = hi0;
    double x1 = hi - invphi * (hi - lo), x2 = lo + invphi * (hi - lo);
    double f1 = nll(x1), f2 = nll(x2);
    while (hi - lo > tol) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - invphi * (hi - lo);
            f1 = nll(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + invphi * (hi - lo);
            f2 = nll(x2);
        }
    }
    const double best = 0.5 * (lo + hi);
    TemperatureFit fit;
    fit.T = std::exp(best);
    fit.at_boundary = best - lo0 < 10.0 * tol || hi0 - best < 10.0 * tol;
    std::size_t pos = 0;
    for (int v : y) pos += v == 1 ? 1 : 0;
    if (pos == 0 || pos == y.size()) fit.warnings.push_back("temperature calibration: single-class split");
    if (fit.at_boundary) fit.warnings.push_back("temperature calibration: optimum pinned to the search boundary");
    return fit;
}

YoudenResult youden_threshold(std::span<const double> vcdr, std::span<const int> y) {
    if (vcdr.size() != y.size()) throw ContractError("youden: value/label count mismatch");
    std::size_t P = 0;
    for (int v : y) P += v == 1 ? 1 : 0;
    const std::size_t N = y.size() - P;
    if (P == 0 || N == 0) throw DataError("Youden threshold needs both classes");

    std::vector<std::size_t> idx(vcdr.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return vcdr[a] < vcdr[b]; });
    // Sweep thresholds upwards: everything at or below the cut is called negative.
    YoudenResult best{vcdr[idx.front()], -INFINITY};
    std::size_t tn = 0, fn = 0;
    for (std::size_t k = 0; k + 1 < idx.size(); ++k) {
        (y[idx[k]] == 1 ? fn : tn) += 1;
        const double v = vcdr[idx[k]], next = vcdr[idx[k + 1]];
        if (next == v) continue;
        const double se = static_cast<double>(P - fn) / static_cast<double>(P);
        const double sp = static_cast<double>(tn) / static_cast<double>(N);
        const double j = se + sp - 1.0;
        if (j > best.index) best = {0.5 * (v + next), j};
    }
    if (best.index == -INFINITY) best.index = 0.0;  // a single unique value
    return best;
}

OperatingPoint operating_points(double vcdr_med, double p_cal, const ExpertProfile& pr, double tau,
                                const CohortGlobals& g) {
    OperatingPoint op;
    op.beta = std::exp(-g.kappa_diff * std::abs(vcdr_med - tau));
    op.se = sigmoid(logit(pr.se) + pr.alpha * (p_cal - g.rho_ref) - g.b * op.beta);
    op.sp = sigmoid(logit(pr.sp) - pr.gamma * (p_cal - g.rho_ref) - g.d * op.beta);
    return op;
}

std::vector<std::vector<double>> poisson_binomial_suffix(std::span<const double> phi) {
    const std::size_t J = phi.size();
    std::vector<std::vector<double>> q(J + 1, std::vector<double>(J + 1, 0.0));
    q[J][0] = 1.0;
    for (std::size_t j = J; j-- > 0;) {
        for (std::size_t s = 0; s <= J - j; ++s) {
            q[j][s] = (1.0 - phi[j]) * q[j + 1][s] + (s > 0 ? phi[j] * q[j + 1][s - 1] : 0.0);
        }
    }
    return q;
}

std::vector<double> poisson_binomial_pmf(std::span<const double> phi) { return poisson_binomial_suffix(phi)[0]; }

std::vector<std::uint8_t> conditional_correctness_sampler(std::span<const double> phi, std::size_t k_min,
                                                          CounterRng& rng) {
    const std::size_t J = phi.size();
    for (double p : phi) {
        if (!(p > 0.0 && p < 1.0)) throw ContractError("success probabilities must lie in (0,1)");
    }
    if (k_min > J) throw InfeasibleConstraintError("k_min exceeds the panel size");
    const auto q = poisson_binomial_suffix(phi);
    double Z = 0.0;
    for (std::size_t k = k_min; k <= J; ++k) Z += q[0][k];
    if (!(Z >= 1e-300)) throw InfeasibleConstraintError("P(K >= k_min) is numerically zero");

    // K by inverse CDF over {k_min..J}; the last feasible k absorbs rounding.
    const double u = rng.uniform_open() * Z;
    std::size_t K = J;
    double acc = 0.0;
    for (std::size_t k = k_min; k <= J; ++k) {
        acc += q[0][k];
        if (u < acc && q[0][k] > 0.0) {
            K = k;
            break;
        }
    }
    while (q[0][K] == 0.0 && K > k_min) --K;

    std::vector<std::uint8_t> c(J, 0);
    std::size_t r = K;
    for (std::size_t j = 0; j < J; ++j) {
        if (r == 0) break;
        const double p1 = phi[j] * q[j + 1][r - 1] / q[j][r];
        if (rng.uniform_open() < p1) {
            c[j] = 1;
            --r;
        }
    }
    return c;
}

std::vector<std::int8_t> instantiate_expert_labels(int y, std::span<const std::uint8_t> correct) {
    if (y != 0 && y != 1) throw ContractError("labels must be 0 or 1");
    std::vector<std::int8_t> out(correct.size());
    for (std::size_t j = 0; j < correct.size(); ++j) out[j] = static_cast<std::int8_t>(correct[j] ? y : 1 - y);
    return out;
}

void l2_normalize(std::vector<double>& v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n > 0.0) {
        for (auto& x : v) x /= n;
    }
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw DataError("embedding dimensions differ");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    const double d = std::sqrt(na * nb);
    return d > 0.0 ? dot / d : 0.0;
}

void min_max(std::vector<double>& s) {
    if (s.empty()) return;
    const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
    const double a = *lo, range = *hi - *lo;
    for (auto& v : s) v = range > 0.0 ? (v - a) / range : 1.0;
}

}  // namespace

RetrievalResult retrieve_pseudo_labels(const EmbeddingPair& query, std::span<const RetrievalPoolRow> pool, int y_query,
                                       std::size_t k, std::size_t experts) {
    RetrievalResult out;
    std::vector<std::size_t> cand;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool[i].label == y_query) cand.push_back(i);
    }
    if (cand.size() < k) {
        out.warnings.push_back("retrieval pool has " + std::to_string(cand.size()) + " label-matched rows, fewer than k=" +
                               std::to_string(k));
        k = cand.size();
    }
    std::vector<double> s1(cand.size()), s2(cand.size());
    for (std::size_t c = 0; c < cand.size(); ++c) {
        s1[c] = cosine(query.first, pool[cand[c]].embedding->first);
        s2[c] = cosine(query.second, pool[cand[c]].embedding->second);
    }
    min_max(s1);
    min_max(s2);
    std::vector<double> fused(cand.size());
    for (std::size_t c = 0; c < cand.size(); ++c) fused[c] = 0.5 * (s1[c] + s2[c]);
    std::vector<std::size_t> order(cand.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fused[a] > fused[b]; });

    out.labels.assign(experts, kLabelMissing);
    for (std::size_t t = 0; t < k; ++t) {
        const std::size_t row = cand[order[t]];
        out.neighbors.push_back(row);
        out.fused.push_back(fused[order[t]]);
        const auto& lab = *pool[row].expert_labels;
        for (std::size_t j = 0; j < experts && j < lab.size(); ++j) {
            if (out.labels[j] == kLabelMissing && lab[j] != kLabelMissing) out.labels[j] = lab[j];
        }
    }
    return out;
}

}  // namespace drouter
