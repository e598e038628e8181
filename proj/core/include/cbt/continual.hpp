#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cbt/adam.hpp"
#include "cbt/augment.hpp"
#include "cbt/bt_loss.hpp"
#include "cbt/model.hpp"
#include "cbt/parameters.hpp"
#include "cbt/tape.hpp"

namespace cbt {

/// Per-parameter importance: mean squared twin-loss gradient over the
/// batches of one task, evaluated at that task's final weights.
struct FisherDiag {
    ParameterVector values;
    std::string source_task;
    int num_batches = 0;

    bool operator==(const FisherDiag&) const = default;
};

/// The anchor replaced after every task: end-of-task weights plus their
/// Fisher diagonal. Exactly one snapshot is active at a time.
struct TaskSnapshot {
    ParameterVector theta_star;
    FisherDiag fisher;
    std::string task_name;

    bool operator==(const TaskSnapshot&) const = default;
};

// Shipped anchor strengths; the weaker one is the default.
inline constexpr double kLambdaStrong = 0.1;
inline constexpr double kLambdaWeak = 0.01;

struct CbtConfig {
    double lambda = kLambdaWeak;
    BtLossConfig bt;
    int epochs = 5;
    int batch_size = 4;
    AdamConfig adam;
    std::uint64_t seed = 0;     // keys the per-epoch shuffles

    void validate() const;
    bool operator==(const CbtConfig&) const = default;
};

struct EpochStats {
    double mean_total = 0.0;
    double mean_bt = 0.0;
    double mean_invariance = 0.0;
    double mean_redundancy = 0.0;
    double mean_penalty = 0.0;
};

struct TrainLog {
    std::string task_name;
    std::vector<EpochStats> epochs;
    int batches_per_epoch = 0;
    int batch_size = 0;
    std::int64_t processed_sample_count = 0;
    double wall_seconds = 0.0;
};

/// Coordinates of the dedicated Fisher pass. The partition matches a
/// training epoch keyed by (shuffle_seed, task_index, epoch_slot); the slot
/// is one past the last training epoch so its draws collide with nothing.
struct FisherPass {
    int batch_size = 4;
    std::uint64_t shuffle_seed = 0;
    std::uint64_t task_index = 0;
    int epoch_slot = 0;
};

/// Mean elementwise-squared gradient over a fixed list of batch losses.
FisherDiag fisher_from_losses(const std::vector<ScalarLossFn>& batch_losses,
                              const ParameterVector& params, const std::string& task_name);

/// F_i = (1/B_T) sum over batches of (d bt_loss / d theta_i)^2, with the
/// dedicated deterministic augmentation substream.
FisherDiag fisher_diagonal(const ParameterVector& params, const EncoderConfig& model_cfg,
                           const SampleSet& data, const AugmentConfig& aug_cfg,
                           const BtLossConfig& bt_cfg, const FisherPass& pass,
                           const std::string& task_name);

/// sum_i (lambda/2) F_i (theta_i - theta*_i)^2. Gradient is
/// lambda * F ⊙ (theta - theta*).
double ewc_penalty(const ParameterVector& params, const TaskSnapshot& snapshot, double lambda);
Var ewc_penalty_graph(GradTape& t, const BoundParams& p, const TaskSnapshot& snapshot, double lambda);

struct CbtLossNode {
    Var total;
    Var bt_total;
    Var invariance;
    Var redundancy;
    Var penalty;  // invalid when no snapshot is active
};

struct CbtDecomposition {
    double total = 0.0;
    double bt_total = 0.0;
    double invariance = 0.0;
    double redundancy = 0.0;
    double penalty = 0.0;
};

/// Twin loss plus the anchor penalty. Without a snapshot the result is the
/// twin loss node itself, bit for bit.
CbtLossNode cbt_loss_graph(GradTape& t, const BoundParams& p, const EncoderConfig& model_cfg,
                           const Tensor& X, const AugmentConfig& aug_cfg, const CbtConfig& cfg,
                           const TaskSnapshot* snapshot, std::uint64_t draw_index,
                           const std::vector<std::uint64_t>& sample_ids);

CbtDecomposition cbt_loss(const ParameterVector& params, const EncoderConfig& model_cfg,
                          const Tensor& X, const AugmentConfig& aug_cfg, const CbtConfig& cfg,
                          const TaskSnapshot* snapshot, std::uint64_t draw_index,
                          const std::vector<std::uint64_t>& sample_ids);

/// Resume/observation points for the task training loop.
struct TrainHooks {
    int start_epoch = 0;
    const AdamState* resume_adam = nullptr;
    std::function<void(int epoch, const ParameterVector&, const AdamState&, const TrainLog&)>
        after_epoch;
};

std::pair<ParameterVector, TrainLog> train_task(const ParameterVector& start_params,
                                                const EncoderConfig& model_cfg, const SampleSet& data,
                                                const AugmentConfig& aug_cfg, const CbtConfig& cfg,
                                                const TaskSnapshot* snapshot, std::uint64_t task_index,
                                                const std::string& task_name,
                                                const TrainHooks& hooks = {});

/// Fisher at the end-of-task weights over this task's data. The returned
/// snapshot replaces any previous one; nothing is accumulated.
TaskSnapshot advance_snapshot(const ParameterVector& end_params, const EncoderConfig& model_cfg,
                              const SampleSet& data, const AugmentConfig& aug_cfg,
                              const CbtConfig& cfg, std::uint64_t task_index,
                              const std::string& task_name);

struct ContinualTask {
    std::string name;
    SampleSet data;
};

struct ContinualResult {
    ParameterVector params;
    std::vector<TrainLog> logs;
    std::optional<TaskSnapshot> snapshot;  // from the last completed task
};

using TaskCallback =
    std::function<void(int task_index, const ParameterVector&, const TaskSnapshot&, const TrainLog&)>;

/// Sequential protocol: task k trains from task k-1's weights with the
/// k-1 snapshot active, then the snapshot is replaced. Task k touches only
/// task k's data.
ContinualResult run_continual(const std::vector<ContinualTask>& tasks, const EncoderConfig& model_cfg,
                              const AugmentConfig& aug_cfg, const CbtConfig& cfg,
                              const TaskCallback& after_task = {});

using JointCallback = std::function<void(int step_index, const ParameterVector&, const TrainLog&)>;

/// Compute-cost comparator: step k retrains from a fresh init on the union
/// of tasks 0..k with the plain twin loss.
ContinualResult run_joint_baseline(const std::vector<ContinualTask>& tasks,
                                   const EncoderConfig& model_cfg, const AugmentConfig& aug_cfg,
                                   const CbtConfig& cfg, const JointCallback& after_step = {});

// Snapshot persistence in the container format: theta entries under their
// parameter names, Fisher entries under name + ".fisher".
void save_snapshot(const TaskSnapshot& s, const std::string& path);
TaskSnapshot load_snapshot(const std::string& path);

}  // namespace cbt
