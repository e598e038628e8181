#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cbt/adam.hpp"
#include "cbt/model.hpp"
#include "cbt/parameters.hpp"
#include "cbt/tape.hpp"
#include "cbt/taskgen.hpp"
#include "cbt/tensor.hpp"

namespace cbt {

/// Row-major K*K counts; rows index ground truth, columns index prediction.
std::vector<std::int64_t> confusion_matrix(const LabelMask& pred, const LabelMask& truth,
                                           int num_classes);
void accumulate_confusion(std::vector<std::int64_t>& confusion, const LabelMask& pred,
                          const LabelMask& truth, int num_classes);

/// Segmentation scores derived from one confusion matrix. A class that
/// appears in neither truth nor prediction carries per_class_iou == -1 and
/// is excluded from the miou and f1 means; a class present on either side
/// always contributes (as 0 when the intersection is empty).
struct SegMetrics {
    double oa = 0.0;
    double miou = 0.0;
    double f1 = 0.0;
    std::vector<double> per_class_iou;
    std::vector<std::int64_t> confusion;
    int num_classes = 0;
};

SegMetrics metrics_from_confusion(const std::vector<std::int64_t>& confusion, int num_classes);
SegMetrics compute_metrics(const LabelMask& pred, const LabelMask& truth, int num_classes);

/// One-hot label rows aligned with nchw_to_rows pixel order: row
/// (b*H + y)*W + x, one column per class.
Tensor one_hot_rows(const std::vector<LabelMask>& masks, int num_classes);

/// Soft Jaccard loss, 1 - mean_k (inter_k + 1) / (union_k + 1), pooled over
/// every pixel in the batch and averaged over all classes. The +1 smoothing
/// keeps empty classes defined and pins the value inside [0, 1); exact
/// one-hot agreement gives exactly 0.
Var jaccard_loss_graph(GradTape& t, Var prob_rows, const Tensor& one_hot);
double jaccard_loss(const Tensor& probs, const std::vector<LabelMask>& masks);

/// Per-pixel two-layer classifier head read out over trunk features.
struct SegHead {
    int feature_dim = 0;
    int hidden = 0;
    int num_classes = kNumClasses;
    ParameterVector params;

    bool operator==(const SegHead&) const = default;
};

SegHead init_seg_head(int feature_dim, int hidden, int num_classes, std::uint64_t seed);

/// Class probabilities per pixel row: relu hidden layer, then row softmax.
Var seg_head_probs_graph(GradTape& t, const BoundParams& p, const SegHead& head, Var feature_rows);

/// Argmax class per pixel (ties resolve to the lowest class id).
std::vector<LabelMask> predict_masks(const ParameterVector& encoder_params,
                                     const EncoderConfig& enc_cfg, const SegHead& head,
                                     const Tensor& images);

enum class ProbeMode { frozen, finetune };
std::string to_string(ProbeMode m);
ProbeMode probe_mode_from_string(const std::string& s);

struct ProbeConfig {
    int head_hidden = 16;
    int epochs = 12;
    int batch_size = 8;
    AdamConfig adam;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const ProbeConfig&) const = default;
};

struct ProbeResult {
    SegHead head;
    ParameterVector encoder_params;
    SegMetrics test;
    std::vector<double> epoch_losses;
};

/// Trains a segmentation head on a label fraction of the train split and
/// scores it on the test split. frozen keeps the encoder fixed (features are
/// computed once); finetune updates the trunk jointly with the head. The
/// label subset, head init, and batch order all derive from cfg.seed, so a
/// fixed seed compares encoders on identical probe conditions and nests
/// smaller fractions inside larger ones.
ProbeResult train_probe(const ParameterVector& encoder_params, const EncoderConfig& enc_cfg,
                        const TaskDataset& data, double fraction, ProbeMode mode,
                        const ProbeConfig& cfg);

/// Forgetting per task from a per-step score history. scores[k][j] is task
/// j's score measured after finishing training step k, so rows need entries
/// for every j <= k. forgetting[j] = scores[j][j] - scores.back()[j]:
/// positive means task j degraded after its own training ended, and the
/// final task is 0 by construction.
struct ForgettingReport {
    std::vector<double> at_own_end;
    std::vector<double> at_final;
    std::vector<double> forgetting;
};

ForgettingReport forgetting_report(const std::vector<std::vector<double>>& scores);

}  // namespace cbt
