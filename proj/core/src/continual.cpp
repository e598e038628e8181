#include "cbt/continual.hpp"

#include <chrono>

#include "cbt/checkpoint.hpp"
#include "cbt/error.hpp"

namespace cbt {

void CbtConfig::validate() const {
    if (lambda < 0.0) throw ConfigError("continual: lambda must be >= 0");
    bt.validate();
    if (epochs < 1) throw ConfigError("continual: epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("continual: batch size must be >= 2");
    if (adam.lr <= 0.0) throw ConfigError("continual: adam lr must be positive");
}

FisherDiag fisher_from_losses(const std::vector<ScalarLossFn>& batch_losses,
                              const ParameterVector& params, const std::string& task_name) {
    if (batch_losses.empty()) throw DataError("fisher: no batches");
    FisherDiag f;
    f.values = params.zeros_like();
    f.source_task = task_name;
    f.num_batches = static_cast<int>(batch_losses.size());
    for (const ScalarLossFn& fn : batch_losses) {
        const ParameterVector grad = value_and_grad(fn, params).second;
        for (std::int64_t i = 0; i < grad.total_len(); ++i) {
            const double g = grad.flat_get(i);
            f.values.flat_set(i, f.values.flat_get(i) + g * g);
        }
    }
    const double inv = 1.0 / f.num_batches;
    for (std::int64_t i = 0; i < f.values.total_len(); ++i) {
        f.values.flat_set(i, f.values.flat_get(i) * inv);
    }
    f.values.check_finite("fisher diagonal");
    return f;
}

FisherDiag fisher_diagonal(const ParameterVector& params, const EncoderConfig& model_cfg,
                           const SampleSet& data, const AugmentConfig& aug_cfg,
                           const BtLossConfig& bt_cfg, const FisherPass& pass,
                           const std::string& task_name) {
    if (data.size() == 0) throw DataError("fisher: empty dataset");
    const auto batches = epoch_batches(static_cast<int>(data.size()), pass.batch_size,
                                       pass.shuffle_seed, pass.task_index, pass.epoch_slot);
    if (batches.empty()) {
        throw DataError("fisher: dataset smaller than one batch of " + std::to_string(pass.batch_size));
    }
    std::vector<ScalarLossFn> losses;
    losses.reserve(batches.size());
    for (std::size_t b = 0; b < batches.size(); ++b) {
        Tensor X = stack_images(data, batches[b]);
        std::vector<std::uint64_t> ids;
        ids.reserve(batches[b].size());
        for (int idx : batches[b]) ids.push_back(data.ids[static_cast<std::size_t>(idx)]);
        const std::uint64_t draw =
            compose_draw_index(pass.task_index, pass.epoch_slot, static_cast<int>(b));
        losses.push_back([X = std::move(X), ids = std::move(ids), &model_cfg, &aug_cfg, &bt_cfg,
                          draw](GradTape& t, const BoundParams& p) {
            return bt_loss_on_batch_graph(t, p, model_cfg, X, aug_cfg, bt_cfg, draw, ids).total;
        });
    }
    return fisher_from_losses(losses, params, task_name);
}

Var ewc_penalty_graph(GradTape& t, const BoundParams& p, const TaskSnapshot& snapshot, double lambda) {
    if (lambda < 0.0) throw ConfigError("ewc penalty: lambda must be >= 0");
    snapshot.theta_star.check_same_layout(snapshot.fisher.values, "snapshot fisher");
    Var acc{};
    for (int e = 0; e < snapshot.theta_star.entry_count(); ++e) {
        const ParamEntry& entry = snapshot.theta_star.entry(e);
        Var displaced = t.sub(p[entry.name], t.constant(entry.tensor));
        Var weighted = t.mul(t.constant(snapshot.fisher.values.tensor(e)), t.square(displaced));
        Var s = t.sum_all(weighted);
        acc = acc.valid() ? t.add(acc, s) : s;
    }
    return t.scale(acc, lambda / 2.0);
}

double ewc_penalty(const ParameterVector& params, const TaskSnapshot& snapshot, double lambda) {
    params.check_same_layout(snapshot.theta_star, "ewc penalty");
    GradTape t;
    BoundParams p = BoundParams::bind(t, params);
    return t.scalar(ewc_penalty_graph(t, p, snapshot, lambda));
}

CbtLossNode cbt_loss_graph(GradTape& t, const BoundParams& p, const EncoderConfig& model_cfg,
                           const Tensor& X, const AugmentConfig& aug_cfg, const CbtConfig& cfg,
                           const TaskSnapshot* snapshot, std::uint64_t draw_index,
                           const std::vector<std::uint64_t>& sample_ids) {
    BtLossNode bt = bt_loss_on_batch_graph(t, p, model_cfg, X, aug_cfg, cfg.bt, draw_index, sample_ids);
    CbtLossNode node;
    node.bt_total = bt.total;
    node.invariance = bt.invariance;
    node.redundancy = bt.redundancy;
    if (snapshot == nullptr) {
        node.total = bt.total;
        node.penalty = Var{};
    } else {
        node.penalty = ewc_penalty_graph(t, p, *snapshot, cfg.lambda);
        node.total = t.add(bt.total, node.penalty);
    }
    return node;
}

CbtDecomposition cbt_loss(const ParameterVector& params, const EncoderConfig& model_cfg,
                          const Tensor& X, const AugmentConfig& aug_cfg, const CbtConfig& cfg,
                          const TaskSnapshot* snapshot, std::uint64_t draw_index,
                          const std::vector<std::uint64_t>& sample_ids) {
    GradTape t;
    BoundParams p = BoundParams::bind(t, params);
    CbtLossNode node = cbt_loss_graph(t, p, model_cfg, X, aug_cfg, cfg, snapshot, draw_index, sample_ids);
    CbtDecomposition d;
    d.total = t.scalar(node.total);
    d.bt_total = t.scalar(node.bt_total);
    d.invariance = t.scalar(node.invariance);
    d.redundancy = t.scalar(node.redundancy);
    d.penalty = node.penalty.valid() ? t.scalar(node.penalty) : 0.0;
    return d;
}

std::pair<ParameterVector, TrainLog> train_task(const ParameterVector& start_params,
                                                const EncoderConfig& model_cfg, const SampleSet& data,
                                                const AugmentConfig& aug_cfg, const CbtConfig& cfg,
                                                const TaskSnapshot* snapshot, std::uint64_t task_index,
                                                const std::string& task_name,
                                                const TrainHooks& hooks) {
    cfg.validate();
    model_cfg.validate();
    aug_cfg.validate();
    if (data.size() == 0) throw DataError("train_task: empty dataset for " + task_name);
    if (snapshot) start_params.check_same_layout(snapshot->theta_star, "train_task snapshot");
    if (hooks.start_epoch < 0 || hooks.start_epoch > cfg.epochs) {
        throw ConfigError("train_task: start epoch out of range");
    }

    const auto t0 = std::chrono::steady_clock::now();
    ParameterVector params = start_params;
    AdamState adam = hooks.resume_adam ? *hooks.resume_adam : AdamState::init(cfg.adam, params);
    params.check_same_layout(adam.m, "train_task optimizer state");

    TrainLog log;
    log.task_name = task_name;
    log.batch_size = cfg.batch_size;

    for (int epoch = hooks.start_epoch; epoch < cfg.epochs; ++epoch) {
        const auto batches = epoch_batches(static_cast<int>(data.size()), cfg.batch_size, cfg.seed,
                                           task_index, epoch);
        if (batches.empty()) {
            throw DataError("train_task: dataset smaller than one batch of " +
                            std::to_string(cfg.batch_size));
        }
        log.batches_per_epoch = static_cast<int>(batches.size());
        EpochStats stats;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const Tensor X = stack_images(data, batches[b]);
            std::vector<std::uint64_t> ids;
            ids.reserve(batches[b].size());
            for (int idx : batches[b]) ids.push_back(data.ids[static_cast<std::size_t>(idx)]);
            const std::uint64_t draw = compose_draw_index(task_index, epoch, static_cast<int>(b));
            try {
                GradTape t;
                BoundParams p = BoundParams::bind(t, params);
                CbtLossNode node =
                    cbt_loss_graph(t, p, model_cfg, X, aug_cfg, cfg, snapshot, draw, ids);
                std::vector<Tensor> grads = t.gradients(node.total, p.vars());
                ParameterVector grad_vec = params.zeros_like();
                for (int e = 0; e < grad_vec.entry_count(); ++e) {
                    grad_vec.tensor(e) = std::move(grads[static_cast<std::size_t>(e)]);
                }
                adam_step(adam, params, grad_vec);

                stats.mean_total += t.scalar(node.total);
                stats.mean_bt += t.scalar(node.bt_total);
                stats.mean_invariance += t.scalar(node.invariance);
                stats.mean_redundancy += t.scalar(node.redundancy);
                stats.mean_penalty += node.penalty.valid() ? t.scalar(node.penalty) : 0.0;
            } catch (const NumericError& e) {
                throw NumericError("task " + task_name + " epoch " + std::to_string(epoch) +
                                   " batch " + std::to_string(b) + ": " + e.what());
            }
        }
        const double inv = 1.0 / static_cast<double>(batches.size());
        stats.mean_total *= inv;
        stats.mean_bt *= inv;
        stats.mean_invariance *= inv;
        stats.mean_redundancy *= inv;
        stats.mean_penalty *= inv;
        log.epochs.push_back(stats);
        log.processed_sample_count +=
            static_cast<std::int64_t>(batches.size()) * cfg.batch_size;
        if (hooks.after_epoch) hooks.after_epoch(epoch, params, adam, log);
    }

    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(params), std::move(log)};
}

TaskSnapshot advance_snapshot(const ParameterVector& end_params, const EncoderConfig& model_cfg,
                              const SampleSet& data, const AugmentConfig& aug_cfg,
                              const CbtConfig& cfg, std::uint64_t task_index,
                              const std::string& task_name) {
    FisherPass pass;
    pass.batch_size = cfg.batch_size;
    pass.shuffle_seed = cfg.seed;
    pass.task_index = task_index;
    pass.epoch_slot = cfg.epochs;  // one past the last training epoch
    TaskSnapshot snap;
    snap.theta_star = end_params;
    snap.fisher = fisher_diagonal(end_params, model_cfg, data, aug_cfg, cfg.bt, pass, task_name);
    snap.task_name = task_name;
    return snap;
}

ContinualResult run_continual(const std::vector<ContinualTask>& tasks, const EncoderConfig& model_cfg,
                              const AugmentConfig& aug_cfg, const CbtConfig& cfg,
                              const TaskCallback& after_task) {
    if (tasks.empty()) throw ConfigError("run_continual: need at least one task");
    ContinualResult result;
    result.params = init_params(model_cfg);
    for (std::size_t k = 0; k < tasks.size(); ++k) {
        const TaskSnapshot* snapshot = result.snapshot ? &*result.snapshot : nullptr;
        auto [params, log] = train_task(result.params, model_cfg, tasks[k].data, aug_cfg, cfg,
                                        snapshot, k, tasks[k].name);
        result.params = std::move(params);
        result.logs.push_back(std::move(log));
        result.snapshot = advance_snapshot(result.params, model_cfg, tasks[k].data, aug_cfg, cfg, k,
                                           tasks[k].name);
        if (after_task) {
            after_task(static_cast<int>(k), result.params, *result.snapshot, result.logs.back());
        }
    }
    return result;
}

ContinualResult run_joint_baseline(const std::vector<ContinualTask>& tasks,
                                   const EncoderConfig& model_cfg, const AugmentConfig& aug_cfg,
                                   const CbtConfig& cfg, const JointCallback& after_step) {
    if (tasks.empty()) throw ConfigError("joint baseline: need at least one task");
    ContinualResult result;
    SampleSet pool;
    for (std::size_t k = 0; k < tasks.size(); ++k) {
        for (std::size_t i = 0; i < tasks[k].data.size(); ++i) {
            pool.images.push_back(tasks[k].data.images[i]);
            pool.ids.push_back(tasks[k].data.ids[i]);
        }
        auto [params, log] = train_task(init_params(model_cfg), model_cfg, pool, aug_cfg, cfg,
                                        nullptr, k, "joint_through_" + tasks[k].name);
        result.params = std::move(params);
        result.logs.push_back(std::move(log));
        if (after_step) after_step(static_cast<int>(k), result.params, result.logs.back());
    }
    return result;
}

void save_snapshot(const TaskSnapshot& s, const std::string& path) {
    s.theta_star.check_same_layout(s.fisher.values, "save_snapshot");
    Container c;
    for (int i = 0; i < s.theta_star.entry_count(); ++i) {
        c.add_tensor(s.theta_star.entry(i).name, s.theta_star.tensor(i));
        c.add_tensor(s.theta_star.entry(i).name + ".fisher", s.fisher.values.tensor(i));
    }
    c.provenance = {s.task_name};
    c.set_config("snapshot.task", s.task_name);
    c.set_config("snapshot.fisher_source", s.fisher.source_task);
    c.set_config("snapshot.fisher_batches", std::to_string(s.fisher.num_batches));
    write_container(c, path);
}

TaskSnapshot load_snapshot(const std::string& path) {
    const Container c = read_container(path);
    TaskSnapshot s;
    s.task_name = c.config_value("snapshot.task");
    s.fisher.source_task = c.config_value("snapshot.fisher_source");
    try {
        s.fisher.num_batches = std::stoi(c.config_value("snapshot.fisher_batches"));
    } catch (const std::exception&) {
        throw DataError(path + ": bad snapshot.fisher_batches value");
    }
    for (const ContainerEntry& e : c.entries) {
        if (e.name.size() > 7 && e.name.ends_with(".fisher")) continue;
        s.theta_star.add(e.name, c.tensor(e.name));
        s.fisher.values.add(e.name, c.tensor(e.name + ".fisher"));
    }
    if (s.theta_star.entry_count() == 0) throw DataError(path + ": snapshot has no parameters");
    for (std::int64_t i = 0; i < s.fisher.values.total_len(); ++i) {
        if (s.fisher.values.flat_get(i) < 0.0) {
            throw DataError(path + ": snapshot fisher has a negative entry");
        }
    }
    return s;
}

}  // namespace cbt
