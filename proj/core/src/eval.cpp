#include "cbt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "cbt/augment.hpp"
#include "cbt/error.hpp"
#include "cbt/rng.hpp"

namespace cbt {

namespace {

constexpr std::uint64_t kHeadSalt = 0x68656164;  // "head"
constexpr double kJaccardSmoothing = 1.0;

void check_mask_pair(const LabelMask& pred, const LabelMask& truth) {
    if (pred.height != truth.height || pred.width != truth.width) {
        throw DataError("confusion: mask sizes differ, " + std::to_string(pred.height) + "x" +
                        std::to_string(pred.width) + " vs " + std::to_string(truth.height) + "x" +
                        std::to_string(truth.width));
    }
}

Tensor as_batch_of_one(const Tensor& image) {
    if (image.rank() != 3) {
        throw DataError("expected a [C.H.W] image, got " + shape_to_string(image.shape()));
    }
    Tensor out({1, image.dim(0), image.dim(1), image.dim(2)});
    std::memcpy(out.data(), image.data(), static_cast<std::size_t>(image.size()) * sizeof(double));
    return out;
}

Tensor stack_tiles(const std::vector<LabeledTile>& tiles, const std::vector<int>& indices) {
    const Tensor& first = tiles[static_cast<std::size_t>(indices.front())].image;
    Tensor out({static_cast<int>(indices.size()), first.dim(0), first.dim(1), first.dim(2)});
    double* dst = out.data();
    for (int idx : indices) {
        const Tensor& img = tiles[static_cast<std::size_t>(idx)].image;
        if (!img.same_shape(first)) {
            throw DataError("probe: training tiles have mixed shapes");
        }
        std::memcpy(dst, img.data(), static_cast<std::size_t>(img.size()) * sizeof(double));
        dst += img.size();
    }
    return out;
}

// Concatenates per-tile [R.F] row blocks into one [sum R.F] tensor.
Tensor concat_rows(const std::vector<Tensor>& blocks, const std::vector<int>& indices) {
    const int cols = blocks[static_cast<std::size_t>(indices.front())].dim(1);
    int rows = 0;
    for (int idx : indices) rows += blocks[static_cast<std::size_t>(idx)].dim(0);
    Tensor out({rows, cols});
    double* dst = out.data();
    for (int idx : indices) {
        const Tensor& b = blocks[static_cast<std::size_t>(idx)];
        std::memcpy(dst, b.data(), static_cast<std::size_t>(b.size()) * sizeof(double));
        dst += b.size();
    }
    return out;
}

LabelMask argmax_rows_to_mask(const Tensor& probs, int row_offset, int height, int width) {
    LabelMask mask;
    mask.height = height;
    mask.width = width;
    mask.ids.resize(static_cast<std::size_t>(height) * width);
    const int k = probs.dim(1);
    for (int p = 0; p < height * width; ++p) {
        int best = 0;
        double best_v = probs.at(row_offset + p, 0);
        for (int c = 1; c < k; ++c) {
            const double v = probs.at(row_offset + p, c);
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        mask.ids[static_cast<std::size_t>(p)] = best;
    }
    return mask;
}

Tensor tile_feature_rows(const ParameterVector& enc, const EncoderConfig& cfg,
                         const Tensor& image) {
    GradTape t;
    BoundParams p = BoundParams::bind(t, enc);
    Var feats = spatial_features_graph(t, p, cfg, t.constant(as_batch_of_one(image)));
    return t.value(t.nchw_to_rows(feats));
}

}  // namespace

void accumulate_confusion(std::vector<std::int64_t>& confusion, const LabelMask& pred,
                          const LabelMask& truth, int num_classes) {
    if (num_classes < 1) throw ConfigError("confusion: num_classes must be positive");
    check_mask_pair(pred, truth);
    if (confusion.size() != static_cast<std::size_t>(num_classes) * num_classes) {
        throw DataError("confusion: accumulator has the wrong size");
    }
    for (std::size_t i = 0; i < pred.ids.size(); ++i) {
        const int p = pred.ids[i], tr = truth.ids[i];
        if (p < 0 || p >= num_classes || tr < 0 || tr >= num_classes) {
            throw DataError("confusion: class id out of range [0, " +
                            std::to_string(num_classes) + ")");
        }
        ++confusion[static_cast<std::size_t>(tr) * num_classes + p];
    }
}

std::vector<std::int64_t> confusion_matrix(const LabelMask& pred, const LabelMask& truth,
                                           int num_classes) {
    std::vector<std::int64_t> confusion(static_cast<std::size_t>(num_classes) * num_classes, 0);
    accumulate_confusion(confusion, pred, truth, num_classes);
    return confusion;
}

SegMetrics metrics_from_confusion(const std::vector<std::int64_t>& confusion, int num_classes) {
    if (num_classes < 1) throw ConfigError("metrics: num_classes must be positive");
    if (confusion.size() != static_cast<std::size_t>(num_classes) * num_classes) {
        throw DataError("metrics: confusion matrix size does not match num_classes");
    }
    SegMetrics out;
    out.num_classes = num_classes;
    out.confusion = confusion;
    out.per_class_iou.assign(static_cast<std::size_t>(num_classes), -1.0);

    std::int64_t total = 0, diag = 0;
    for (int k = 0; k < num_classes; ++k) {
        diag += confusion[static_cast<std::size_t>(k) * num_classes + k];
    }
    for (std::int64_t v : confusion) {
        if (v < 0) throw DataError("metrics: negative confusion count");
        total += v;
    }
    if (total == 0) throw DataError("metrics: empty confusion matrix");
    out.oa = static_cast<double>(diag) / static_cast<double>(total);

    double iou_sum = 0.0, f1_sum = 0.0;
    int present = 0;
    for (int k = 0; k < num_classes; ++k) {
        std::int64_t tp = confusion[static_cast<std::size_t>(k) * num_classes + k];
        std::int64_t row = 0, col = 0;
        for (int j = 0; j < num_classes; ++j) {
            row += confusion[static_cast<std::size_t>(k) * num_classes + j];
            col += confusion[static_cast<std::size_t>(j) * num_classes + k];
        }
        if (row + col == 0) continue;  // absent on both sides, stays -1
        const std::int64_t fp = col - tp, fn = row - tp;
        const double iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
        const double f1 = static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
        out.per_class_iou[static_cast<std::size_t>(k)] = iou;
        iou_sum += iou;
        f1_sum += f1;
        ++present;
    }
    out.miou = iou_sum / present;
    out.f1 = f1_sum / present;
    return out;
}

SegMetrics compute_metrics(const LabelMask& pred, const LabelMask& truth, int num_classes) {
    return metrics_from_confusion(confusion_matrix(pred, truth, num_classes), num_classes);
}

Tensor one_hot_rows(const std::vector<LabelMask>& masks, int num_classes) {
    if (num_classes < 1) throw ConfigError("one_hot_rows: num_classes must be positive");
    std::int64_t rows = 0;
    for (const LabelMask& m : masks) rows += m.size();
    Tensor out({static_cast<int>(rows), num_classes});
    std::int64_t r = 0;
    for (const LabelMask& m : masks) {
        for (std::int32_t id : m.ids) {
            if (id < 0 || id >= num_classes) {
                throw DataError("one_hot_rows: class id " + std::to_string(id) +
                                " out of range [0, " + std::to_string(num_classes) + ")");
            }
            out.at(static_cast<int>(r), static_cast<int>(id)) = 1.0;
            ++r;
        }
    }
    return out;
}

Var jaccard_loss_graph(GradTape& t, Var prob_rows, const Tensor& one_hot) {
    const Tensor& probs = t.value(prob_rows);
    if (probs.rank() != 2 || !probs.same_shape(one_hot)) {
        throw DataError("jaccard: probability rows " + shape_to_string(probs.shape()) +
                        " do not match labels " + shape_to_string(one_hot.shape()));
    }
    Tensor label_sums({one_hot.dim(1)});
    for (int r = 0; r < one_hot.dim(0); ++r) {
        for (int k = 0; k < one_hot.dim(1); ++k) label_sums[k] += one_hot.at(r, k);
    }
    Var y = t.constant(one_hot);
    Var inter = t.column_sum(t.mul(prob_rows, y));
    Var psum = t.column_sum(prob_rows);
    Var uni = t.sub(t.add(psum, t.constant(std::move(label_sums))), inter);
    Var ratio = t.div(t.offset(inter, kJaccardSmoothing), t.offset(uni, kJaccardSmoothing));
    return t.offset(t.scale(t.mean_all(ratio), -1.0), 1.0);
}

double jaccard_loss(const Tensor& probs, const std::vector<LabelMask>& masks) {
    if (probs.rank() != 4) {
        throw DataError("jaccard: expected [B.K.H.W] probabilities, got " +
                        shape_to_string(probs.shape()));
    }
    if (static_cast<std::size_t>(probs.dim(0)) != masks.size()) {
        throw DataError("jaccard: batch size " + std::to_string(probs.dim(0)) + " but " +
                        std::to_string(masks.size()) + " masks");
    }
    for (const LabelMask& m : masks) {
        if (m.height != probs.dim(2) || m.width != probs.dim(3)) {
            throw DataError("jaccard: mask size does not match probability maps");
        }
    }
    GradTape t;
    Var rows = t.nchw_to_rows(t.constant(probs));
    return t.scalar(jaccard_loss_graph(t, rows, one_hot_rows(masks, probs.dim(1))));
}

SegHead init_seg_head(int feature_dim, int hidden, int num_classes, std::uint64_t seed) {
    if (feature_dim < 1 || hidden < 1 || num_classes < 2) {
        throw ConfigError("seg head: needs feature_dim >= 1, hidden >= 1, num_classes >= 2");
    }
    SegHead head;
    head.feature_dim = feature_dim;
    head.hidden = hidden;
    head.num_classes = num_classes;
    auto add_layer = [&](int i, int in, int out) {
        Tensor w({in, out});
        Rng rng(Rng::key({seed, kHeadSalt, static_cast<std::uint64_t>(i)}));
        const double s = 1.0 / std::sqrt(static_cast<double>(in));
        for (std::int64_t k = 0; k < w.size(); ++k) w[k] = s * rng.normal();
        head.params.add("head." + std::to_string(i) + ".weight", std::move(w));
        head.params.add("head." + std::to_string(i) + ".bias", Tensor({out}));
    };
    add_layer(0, feature_dim, hidden);
    add_layer(1, hidden, num_classes);
    return head;
}

Var seg_head_probs_graph(GradTape& t, const BoundParams& p, const SegHead& head,
                         Var feature_rows) {
    const Tensor& rows = t.value(feature_rows);
    if (rows.rank() != 2 || rows.dim(1) != head.feature_dim) {
        throw DataError("seg head: feature rows " + shape_to_string(rows.shape()) +
                        " do not match feature_dim " + std::to_string(head.feature_dim));
    }
    Var h = t.relu(t.add_row(t.matmul(feature_rows, p["head.0.weight"]), p["head.0.bias"]));
    Var logits = t.add_row(t.matmul(h, p["head.1.weight"]), p["head.1.bias"]);
    return t.rows_softmax(logits);
}

std::vector<LabelMask> predict_masks(const ParameterVector& encoder_params,
                                     const EncoderConfig& enc_cfg, const SegHead& head,
                                     const Tensor& images) {
    enc_cfg.validate();
    if (images.rank() != 4) {
        throw DataError("predict: expected a [B.C.H.W] batch, got " +
                        shape_to_string(images.shape()));
    }
    GradTape t;
    BoundParams enc = BoundParams::bind(t, encoder_params);
    Var feats = spatial_features_graph(t, enc, enc_cfg, t.constant(images));
    Var rows = t.nchw_to_rows(feats);
    BoundParams hp = BoundParams::bind(t, head.params);
    const Tensor& probs = t.value(seg_head_probs_graph(t, hp, head, rows));

    const int b = images.dim(0), height = images.dim(2), width = images.dim(3);
    std::vector<LabelMask> out;
    out.reserve(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
        out.push_back(argmax_rows_to_mask(probs, i * height * width, height, width));
    }
    return out;
}

std::string to_string(ProbeMode m) { return m == ProbeMode::frozen ? "frozen" : "finetune"; }

ProbeMode probe_mode_from_string(const std::string& s) {
    if (s == "frozen") return ProbeMode::frozen;
    if (s == "finetune") return ProbeMode::finetune;
    throw ConfigError("unknown probe mode '" + s + "', expected frozen or finetune");
}

void ProbeConfig::validate() const {
    if (head_hidden < 1) throw ConfigError("probe: head_hidden must be at least 1");
    if (epochs < 1) throw ConfigError("probe: epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("probe: batch_size must be at least 1");
    if (!(adam.lr > 0.0)) throw ConfigError("probe: learning rate must be positive");
}

ProbeResult train_probe(const ParameterVector& encoder_params, const EncoderConfig& enc_cfg,
                        const TaskDataset& data, double fraction, ProbeMode mode,
                        const ProbeConfig& cfg) {
    cfg.validate();
    enc_cfg.validate();
    if (!encoder_params.same_layout(init_params(enc_cfg))) {
        throw ConfigError("probe: encoder parameters do not match the encoder config");
    }
    TaskDataset view = label_fraction_view(data, fraction, cfg.seed);
    const int m = static_cast<int>(view.train.size());
    const int bs = std::min(cfg.batch_size, m);

    ProbeResult result;
    result.head = init_seg_head(enc_cfg.trunk_out_dim(), cfg.head_hidden, data.num_classes,
                                cfg.seed);
    result.encoder_params = encoder_params;

    std::vector<Tensor> one_hots;
    one_hots.reserve(view.train.size());
    for (const LabeledTile& tile : view.train) {
        one_hots.push_back(one_hot_rows({tile.mask}, data.num_classes));
    }

    if (mode == ProbeMode::frozen) {
        std::vector<Tensor> feat_rows;
        feat_rows.reserve(view.train.size());
        for (const LabeledTile& tile : view.train) {
            feat_rows.push_back(tile_feature_rows(encoder_params, enc_cfg, tile.image));
        }
        AdamState adam = AdamState::init(cfg.adam, result.head.params);
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            double loss_sum = 0.0;
            int batches = 0;
            for (const std::vector<int>& batch : epoch_batches(m, bs, cfg.seed, 0, epoch)) {
                Tensor rows = concat_rows(feat_rows, batch);
                Tensor labels = concat_rows(one_hots, batch);
                auto fn = [&](GradTape& t, const BoundParams& hp) {
                    Var probs = seg_head_probs_graph(t, hp, result.head, t.constant(rows));
                    return jaccard_loss_graph(t, probs, labels);
                };
                auto [loss, grads] = value_and_grad(fn, result.head.params);
                adam_step(adam, result.head.params, grads);
                loss_sum += loss;
                ++batches;
            }
            result.epoch_losses.push_back(loss_sum / batches);
        }
    } else {
        ParameterVector joint;
        for (int i = 0; i < encoder_params.entry_count(); ++i) {
            joint.add(encoder_params.entry(i).name, encoder_params.entry(i).tensor);
        }
        for (int i = 0; i < result.head.params.entry_count(); ++i) {
            joint.add(result.head.params.entry(i).name, result.head.params.entry(i).tensor);
        }
        AdamState adam = AdamState::init(cfg.adam, joint);
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            double loss_sum = 0.0;
            int batches = 0;
            for (const std::vector<int>& batch : epoch_batches(m, bs, cfg.seed, 0, epoch)) {
                Tensor images = stack_tiles(view.train, batch);
                Tensor labels = concat_rows(one_hots, batch);
                auto fn = [&](GradTape& t, const BoundParams& p) {
                    Var feats = spatial_features_graph(t, p, enc_cfg, t.constant(images));
                    Var probs = seg_head_probs_graph(t, p, result.head, t.nchw_to_rows(feats));
                    return jaccard_loss_graph(t, probs, labels);
                };
                auto [loss, grads] = value_and_grad(fn, joint);
                adam_step(adam, joint, grads);
                loss_sum += loss;
                ++batches;
            }
            result.epoch_losses.push_back(loss_sum / batches);
        }
        for (int i = 0; i < joint.entry_count(); ++i) {
            const ParamEntry& e = joint.entry(i);
            if (result.encoder_params.has(e.name)) {
                result.encoder_params.tensor(result.encoder_params.index_of(e.name)) = e.tensor;
            } else {
                result.head.params.tensor(result.head.params.index_of(e.name)) = e.tensor;
            }
        }
    }

    std::vector<std::int64_t> confusion(
        static_cast<std::size_t>(data.num_classes) * data.num_classes, 0);
    data.test.evaluate([&](const Tensor& image, const LabelMask& mask) {
        std::vector<LabelMask> pred = predict_masks(result.encoder_params, enc_cfg, result.head,
                                                    as_batch_of_one(image));
        accumulate_confusion(confusion, pred.front(), mask, data.num_classes);
    });
    result.test = metrics_from_confusion(confusion, data.num_classes);
    return result;
}

ForgettingReport forgetting_report(const std::vector<std::vector<double>>& scores) {
    const std::size_t k = scores.size();
    ForgettingReport report;
    if (k == 0) return report;
    for (std::size_t step = 0; step < k; ++step) {
        if (scores[step].size() < step + 1) {
            throw DataError("forgetting: step " + std::to_string(step) + " is missing scores (" +
                            std::to_string(scores[step].size()) + " of " +
                            std::to_string(step + 1) + ")");
        }
    }
    for (std::size_t task = 0; task < k; ++task) {
        const double own = scores[task][task];
        const double fin = scores[k - 1][task];
        report.at_own_end.push_back(own);
        report.at_final.push_back(fin);
        report.forgetting.push_back(own - fin);
    }
    return report;
}

}  // namespace cbt
