#pragma once

#include <cstdint>
#include <vector>

#include "cbt/augment.hpp"
#include "cbt/model.hpp"
#include "cbt/tape.hpp"
#include "cbt/tensor.hpp"

namespace cbt {

/// Batch cross-correlation C between two embedding sets. Entries lie in
/// [-1, 1] up to standardization epsilon effects.
struct CrossCorrelation {
    Tensor matrix;  // [D.D]
    int batch_size = 0;
};

struct BtLossConfig {
    double mu = 0.005;   // off-diagonal weight
    double eps = 1e-5;   // standardization epsilon

    void validate() const;
    bool operator==(const BtLossConfig&) const = default;
};

struct BtTerms {
    double total = 0.0;
    double invariance = 0.0;
    double redundancy = 0.0;  // unweighted off-diagonal sum; total = invariance + mu * redundancy
};

/// C = (1/B) standardize_cols(Z_A)^T standardize_cols(Z_B). Requires B >= 2.
CrossCorrelation cross_correlation(const Tensor& z_a, const Tensor& z_b, double eps);
Var cross_correlation_graph(GradTape& t, Var z_a, Var z_b, double eps);

/// Invariance term sum_i (1 - C_ii)^2 plus mu times the off-diagonal square
/// sum. Zero exactly when C is the identity.
BtTerms bt_loss(const CrossCorrelation& c, const BtLossConfig& cfg);

struct BtLossNode {
    Var total;
    Var invariance;
    Var redundancy;
    Var correlation;  // [D.D]
};
BtLossNode bt_loss_graph(GradTape& t, Var correlation, const BtLossConfig& cfg);

/// Full twin objective on one raw batch: augment X into two views, embed
/// both, correlate, reduce. Pure function of (params, X, aug cfg, draw_index,
/// sample ids).
BtLossNode bt_loss_on_batch_graph(GradTape& t, const BoundParams& p, const EncoderConfig& model_cfg,
                                  const Tensor& X, const AugmentConfig& aug_cfg,
                                  const BtLossConfig& bt_cfg, std::uint64_t draw_index,
                                  const std::vector<std::uint64_t>& sample_ids);

BtTerms bt_loss_on_batch(const ParameterVector& params, const EncoderConfig& model_cfg,
                         const Tensor& X, const AugmentConfig& aug_cfg, const BtLossConfig& bt_cfg,
                         std::uint64_t draw_index, const std::vector<std::uint64_t>& sample_ids);
BtTerms bt_loss_on_batch(const ParameterVector& params, const EncoderConfig& model_cfg,
                         const Tensor& X, const AugmentConfig& aug_cfg, const BtLossConfig& bt_cfg,
                         std::uint64_t draw_index);

}  // namespace cbt
