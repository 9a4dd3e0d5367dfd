#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace drouter {

struct AdamWConfig {
    double lr = 3e-3;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment buffers and step count for decoupled-weight-decay Adam.
struct AdamWState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;
};

/// One AdamW update in place: p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
void adamw_step(const AdamWConfig& cfg, AdamWState& state, std::span<double> params, std::span<const double> grad);

}  // namespace drouter
