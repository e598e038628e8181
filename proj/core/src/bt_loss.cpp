#include "cbt/bt_loss.hpp"

#include <numeric>

#include "cbt/error.hpp"
#include "cbt/numerics.hpp"

namespace cbt {

void BtLossConfig::validate() const {
    if (!(mu > 0.0)) throw ConfigError("twin loss: mu must be positive");
    if (!(eps > 0.0)) throw ConfigError("twin loss: eps must be positive");
}

namespace {

void check_embedding_pair(const Tensor& z_a, const Tensor& z_b) {
    if (z_a.rank() != 2 || z_b.rank() != 2) {
        throw ConfigError("cross_correlation: embeddings must be [B.D]");
    }
    if (!z_a.same_shape(z_b)) {
        throw ConfigError("cross_correlation: shape mismatch " + shape_to_string(z_a.shape()) +
                          " vs " + shape_to_string(z_b.shape()));
    }
    if (z_a.dim(0) < 2) throw ConfigError("cross_correlation: batch size must be >= 2");
}

Tensor identity_matrix(int d) {
    Tensor m({d, d});
    for (int i = 0; i < d; ++i) m.at(i, i) = 1.0;
    return m;
}

}  // namespace

Var cross_correlation_graph(GradTape& t, Var z_a, Var z_b, double eps) {
    check_embedding_pair(t.value(z_a), t.value(z_b));
    const int B = t.value(z_a).dim(0);
    Var sa = t.standardize_columns(z_a, eps);
    Var sb = t.standardize_columns(z_b, eps);
    return t.scale(t.matmul(t.transpose(sa), sb), 1.0 / B);
}

CrossCorrelation cross_correlation(const Tensor& z_a, const Tensor& z_b, double eps) {
    GradTape t;
    Var c = cross_correlation_graph(t, t.constant(z_a), t.constant(z_b), eps);
    return CrossCorrelation{t.value(c), z_a.dim(0)};
}

BtLossNode bt_loss_graph(GradTape& t, Var correlation, const BtLossConfig& cfg) {
    cfg.validate();
    const Tensor& c = t.value(correlation);
    if (c.rank() != 2 || c.dim(0) != c.dim(1)) {
        throw ConfigError("twin loss: correlation must be square, got " + shape_to_string(c.shape()));
    }
    const int d = c.dim(0);
    Var eye = t.constant(identity_matrix(d));
    Var off_mask = t.constant([&] {
        Tensor m = Tensor::full({d, d}, 1.0);
        for (int i = 0; i < d; ++i) m.at(i, i) = 0.0;
        return m;
    }());

    BtLossNode node;
    node.correlation = correlation;
    node.invariance = t.sum_all(t.square(t.mul(eye, t.sub(eye, correlation))));
    node.redundancy = t.sum_all(t.square(t.mul(off_mask, correlation)));
    node.total = t.add(node.invariance, t.scale(node.redundancy, cfg.mu));
    return node;
}

BtTerms bt_loss(const CrossCorrelation& c, const BtLossConfig& cfg) {
    GradTape t;
    BtLossNode node = bt_loss_graph(t, t.constant(c.matrix), cfg);
    return BtTerms{t.scalar(node.total), t.scalar(node.invariance), t.scalar(node.redundancy)};
}

BtLossNode bt_loss_on_batch_graph(GradTape& t, const BoundParams& p, const EncoderConfig& model_cfg,
                                  const Tensor& X, const AugmentConfig& aug_cfg,
                                  const BtLossConfig& bt_cfg, std::uint64_t draw_index,
                                  const std::vector<std::uint64_t>& sample_ids) {
    ViewPair views = make_view_pair(X, aug_cfg, draw_index, sample_ids);
    Var z_a = embed_graph(t, p, model_cfg, t.constant(views.view_a));
    Var z_b = embed_graph(t, p, model_cfg, t.constant(views.view_b));
    Var c = cross_correlation_graph(t, z_a, z_b, bt_cfg.eps);
    return bt_loss_graph(t, c, bt_cfg);
}

BtTerms bt_loss_on_batch(const ParameterVector& params, const EncoderConfig& model_cfg,
                         const Tensor& X, const AugmentConfig& aug_cfg, const BtLossConfig& bt_cfg,
                         std::uint64_t draw_index, const std::vector<std::uint64_t>& sample_ids) {
    GradTape t;
    BoundParams p = BoundParams::bind(t, params);
    BtLossNode node = bt_loss_on_batch_graph(t, p, model_cfg, X, aug_cfg, bt_cfg, draw_index, sample_ids);
    return BtTerms{t.scalar(node.total), t.scalar(node.invariance), t.scalar(node.redundancy)};
}

BtTerms bt_loss_on_batch(const ParameterVector& params, const EncoderConfig& model_cfg,
                         const Tensor& X, const AugmentConfig& aug_cfg, const BtLossConfig& bt_cfg,
                         std::uint64_t draw_index) {
    std::vector<std::uint64_t> ids(static_cast<std::size_t>(X.dim(0)));
    std::iota(ids.begin(), ids.end(), 0);
    return bt_loss_on_batch(params, model_cfg, X, aug_cfg, bt_cfg, draw_index, ids);
}

}  // namespace cbt
