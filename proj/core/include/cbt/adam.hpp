#pragma once

#include <cstdint>

#include "cbt/parameters.hpp"

namespace cbt {

struct AdamConfig {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    bool operator==(const AdamConfig&) const = default;
};

/// Adam moment accumulators. Single-writer; shapes mirror the parameters.
struct AdamState {
    AdamConfig cfg;
    ParameterVector m;
    ParameterVector v;
    std::int64_t step_count = 0;

    static AdamState init(const AdamConfig& cfg, const ParameterVector& params);
};

/// One Adam update with bias correction, in place. Increments step_count.
void adam_step(AdamState& state, ParameterVector& params, const ParameterVector& grads);

}  // namespace cbt
