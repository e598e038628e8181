#include "cbt/run.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <utility>

#include "cbt/checkpoint.hpp"
#include "cbt/config.hpp"
#include "cbt/continual.hpp"
#include "cbt/csv.hpp"
#include "cbt/error.hpp"
#include "cbt/eval.hpp"
#include "cbt/hash.hpp"
#include "cbt/manifest.hpp"
#include "cbt/taskgen.hpp"

namespace cbt {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot read " + p.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + p.string());
    out << text;
    out.flush();
    if (!out) throw DataError("failed writing " + p.string());
}

/// Single writer per run directory; the lock file disappears when the
/// command finishes, even on error.
class RunLock {
public:
    explicit RunLock(const fs::path& dir) : path_(dir / "run.lock") {
        const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0) {
            throw DataError("run directory " + dir.string() +
                            " is locked (run.lock exists); remove the file if no other command "
                            "is running");
        }
        const std::string pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
        ::close(fd);
    }
    ~RunLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    fs::path path_;
};

struct RunDir {
    fs::path root;
    RunConfig cfg;
    RunManifest manifest;

    fs::path full(const std::string& rel) const { return root / rel; }
    bool has(const std::string& rel) const { return fs::exists(full(rel)); }
    void record(const std::string& rel) { record_file(manifest, root.string(), rel); }
    void save() const { save_manifest(manifest, (root / "manifest.txt").string()); }
    int task_count() const { return static_cast<int>(cfg.task_order.size()); }
};

RunDir open_run_dir(const CliOptions& opt) {
    if (opt.workdir.empty()) throw ConfigError("workdir must not be empty");
    RunDir rd;
    rd.root = opt.workdir;
    rd.cfg = opt.config_path.empty() ? default_run_config() : load_run_config(opt.config_path);
    rd.cfg.validate();
    fs::create_directories(rd.root);
    return rd;
}

// Echoes the resolved config before anything else runs and refuses to mix
// two configs in one directory. Call with the lock held.
void prepare(RunDir& rd) {
    fs::create_directories(rd.root / "data");
    fs::create_directories(rd.root / "checkpoints");
    fs::create_directories(rd.root / "metrics");
    const std::string echo = serialize_run_config(rd.cfg);
    const fs::path cfg_path = rd.root / "config.txt";
    if (fs::exists(cfg_path)) {
        if (read_file(cfg_path) != echo) {
            throw ConfigError("run directory " + rd.root.string() +
                              " was created with a different config; use a fresh directory");
        }
    } else {
        write_file(cfg_path, echo);
    }
    const fs::path man_path = rd.root / "manifest.txt";
    if (fs::exists(man_path)) {
        rd.manifest = load_manifest(man_path.string());
    } else {
        rd.manifest.config_sha256 = sha256_hex(echo);
        rd.record("config.txt");
        rd.save();
    }
}

fs::path dataset_dir(const RunDir& rd, const DomainSpec& spec) {
    return rd.root / "data" / dataset_dirname(spec);
}

TaskDataset load_dataset(const RunDir& rd, const DomainSpec& spec) {
    return load_task_dataset(dataset_dir(rd, spec).string());
}

// 1-based step k trains task_order[k-1]; step 1 is the pretrain step.
std::string step_name(const RunDir& rd, int k) {
    return k == 1 ? std::string("pretrain") : "after_" + rd.cfg.task_order[static_cast<std::size_t>(k - 1)];
}

std::string step_checkpoint_rel(const RunDir& rd, int k) {
    return "checkpoints/" + step_name(rd, k) + ".cbt";
}

std::string step_snapshot_rel(int k) {
    return "checkpoints/snapshot_" + std::to_string(k) + ".cbt";
}

std::string step_resume_rel(const RunDir& rd, int k) {
    return "checkpoints/" + step_name(rd, k) + ".resume.cbt";
}

/// Longest trained prefix of the task order, judged by checkpoint files.
int trained_prefix(const RunDir& rd) {
    for (int k = rd.task_count(); k >= 1; --k) {
        if (rd.has(step_checkpoint_rel(rd, k))) return k;
    }
    return 0;
}

std::vector<std::string> task_prefix(const RunDir& rd, int k) {
    return {rd.cfg.task_order.begin(), rd.cfg.task_order.begin() + k};
}

// ---------- per-epoch resume state ----------

struct ResumeState {
    ParameterVector params;
    AdamState adam;
    int epochs_done = 0;
    std::vector<EpochStats> stats;
    std::int64_t samples_done = 0;
};

void save_resume(const fs::path& path, const EncoderConfig& enc, const std::string& task,
                 const ResumeState& st) {
    Container c;
    for (int i = 0; i < st.params.entry_count(); ++i) {
        c.add_tensor(st.params.entry(i).name, st.params.entry(i).tensor);
    }
    for (int i = 0; i < st.adam.m.entry_count(); ++i) {
        c.add_tensor("adam.m." + st.adam.m.entry(i).name, st.adam.m.entry(i).tensor);
        c.add_tensor("adam.v." + st.adam.v.entry(i).name, st.adam.v.entry(i).tensor);
    }
    Tensor stats({static_cast<int>(st.stats.size()), 5});
    for (std::size_t e = 0; e < st.stats.size(); ++e) {
        const int r = static_cast<int>(e);
        stats.at(r, 0) = st.stats[e].mean_total;
        stats.at(r, 1) = st.stats[e].mean_bt;
        stats.at(r, 2) = st.stats[e].mean_invariance;
        stats.at(r, 3) = st.stats[e].mean_redundancy;
        stats.at(r, 4) = st.stats[e].mean_penalty;
    }
    c.add_tensor("resume.epoch_stats", stats);
    encoder_config_to_entries(enc, c);
    c.set_config("resume.task", task);
    c.set_config("resume.epochs_done", std::to_string(st.epochs_done));
    c.set_config("resume.adam_steps", std::to_string(st.adam.step_count));
    c.set_config("resume.samples", std::to_string(st.samples_done));

    const fs::path tmp = path.string() + ".tmp";
    write_container(c, tmp.string());
    fs::rename(tmp, path);
}

ResumeState load_resume(const fs::path& path, const EncoderConfig& enc, const AdamConfig& adam_cfg,
                        const std::string& expected_task) {
    const Container c = read_container(path.string());
    if (encoder_config_from_entries(c) != enc) {
        throw ConfigError("resume state " + path.string() + " was written for a different encoder");
    }
    if (c.config_value("resume.task") != expected_task) {
        throw DataError("resume state " + path.string() + " belongs to task '" +
                        c.config_value("resume.task") + "', expected '" + expected_task + "'");
    }
    ResumeState st;
    ParameterVector layout = init_params(enc);
    st.params = layout.zeros_like();
    st.adam.cfg = adam_cfg;
    st.adam.m = layout.zeros_like();
    st.adam.v = layout.zeros_like();
    for (int i = 0; i < layout.entry_count(); ++i) {
        const std::string& name = layout.entry(i).name;
        Tensor t = c.tensor(name);
        if (!t.same_shape(layout.entry(i).tensor)) {
            throw DataError("resume state " + path.string() + ": bad shape for " + name);
        }
        st.params.tensor(i) = std::move(t);
        st.adam.m.tensor(i) = c.tensor("adam.m." + name);
        st.adam.v.tensor(i) = c.tensor("adam.v." + name);
    }
    st.adam.step_count = parse_int(c.config_value("resume.adam_steps"));
    st.epochs_done = static_cast<int>(parse_int(c.config_value("resume.epochs_done")));
    st.samples_done = parse_int(c.config_value("resume.samples"));
    const Tensor stats = c.tensor("resume.epoch_stats");
    if (stats.rank() != 2 || stats.dim(1) != 5 || stats.dim(0) != st.epochs_done) {
        throw DataError("resume state " + path.string() + ": bad epoch stats block");
    }
    for (int e = 0; e < stats.dim(0); ++e) {
        st.stats.push_back({stats.at(e, 0), stats.at(e, 1), stats.at(e, 2), stats.at(e, 3),
                            stats.at(e, 4)});
    }
    return st;
}

std::string train_csv(const std::string& task, const std::vector<EpochStats>& stats) {
    std::string text = csv_row({"task", "epoch", "mean_total", "mean_bt", "mean_invariance",
                                "mean_redundancy", "mean_penalty"});
    for (std::size_t e = 0; e < stats.size(); ++e) {
        text += csv_row({task, std::to_string(e), format_double(stats[e].mean_total),
                         format_double(stats[e].mean_bt), format_double(stats[e].mean_invariance),
                         format_double(stats[e].mean_redundancy),
                         format_double(stats[e].mean_penalty)});
    }
    return text;
}

struct Paused {
    int epochs_done;
};

/// Shared body of pretrain and continue: trains step k with per-epoch
/// resume state, then writes checkpoint, anchor snapshot, and the training
/// CSV, and accounts samples in the manifest.
void run_training_step(RunDir& rd, int k, const TaskSnapshot* snapshot, const CliOptions& opt,
                       std::ostream& out) {
    const std::string task = rd.cfg.task_order[static_cast<std::size_t>(k - 1)];
    const auto specs = resolve_domains(rd.cfg);
    const TaskDataset data = load_dataset(rd, specs[static_cast<std::size_t>(k - 1)]);
    const CbtConfig& train = rd.cfg.train;

    const fs::path resume_path = rd.full(step_resume_rel(rd, k));
    ParameterVector start;
    TrainHooks hooks;
    AdamState resumed_adam;
    std::vector<EpochStats> prior_stats;
    std::int64_t prior_samples = 0;
    if (fs::exists(resume_path)) {
        ResumeState st = load_resume(resume_path, rd.cfg.model, train.adam, task);
        start = std::move(st.params);
        resumed_adam = std::move(st.adam);
        hooks.start_epoch = st.epochs_done;
        hooks.resume_adam = &resumed_adam;
        prior_stats = std::move(st.stats);
        prior_samples = st.samples_done;
        out << "resuming " << task << " at epoch " << st.epochs_done << "\n";
    } else if (k == 1) {
        start = init_params(rd.cfg.model);
    } else {
        const Checkpoint prev = load_checkpoint(rd.full(step_checkpoint_rel(rd, k - 1)).string());
        if (prev.encoder_config != rd.cfg.model) {
            throw ConfigError("checkpoint " + step_checkpoint_rel(rd, k - 1) +
                              " does not match the configured encoder");
        }
        if (prev.provenance != task_prefix(rd, k - 1)) {
            throw DataError("checkpoint " + step_checkpoint_rel(rd, k - 1) +
                            " was trained on a different task sequence");
        }
        start = prev.params;
    }

    const int pause_after =
        opt.max_epochs > 0 ? hooks.start_epoch + opt.max_epochs : train.epochs;
    hooks.after_epoch = [&](int epoch, const ParameterVector& p, const AdamState& a,
                            const TrainLog& partial) {
        ResumeState st;
        st.params = p;
        st.adam = a;
        st.epochs_done = epoch + 1;
        st.stats = prior_stats;
        st.stats.insert(st.stats.end(), partial.epochs.begin(), partial.epochs.end());
        st.samples_done = prior_samples + partial.processed_sample_count;
        save_resume(resume_path, rd.cfg.model, task, st);
        if (epoch + 1 >= pause_after && epoch + 1 < train.epochs) throw Paused{epoch + 1};
    };

    std::pair<ParameterVector, TrainLog> trained;
    try {
        trained = train_task(start, rd.cfg.model, data.unlabeled, rd.cfg.augment, train, snapshot,
                             static_cast<std::uint64_t>(k - 1), task, hooks);
    } catch (const Paused& p) {
        out << "paused " << task << " after epoch " << p.epochs_done << " of " << train.epochs
            << "; rerun to resume\n";
        return;
    }

    std::vector<EpochStats> all_stats = prior_stats;
    all_stats.insert(all_stats.end(), trained.second.epochs.begin(), trained.second.epochs.end());
    const std::int64_t samples_total = prior_samples + trained.second.processed_sample_count;

    const TaskSnapshot next = advance_snapshot(trained.first, rd.cfg.model, data.unlabeled,
                                               rd.cfg.augment, train,
                                               static_cast<std::uint64_t>(k - 1), task);
    Checkpoint ck;
    ck.params = trained.first;
    ck.encoder_config = rd.cfg.model;
    ck.provenance = task_prefix(rd, k);
    const std::string ck_rel = step_checkpoint_rel(rd, k);
    const std::string snap_rel = step_snapshot_rel(k);
    const std::string csv_rel = "metrics/train_" + step_name(rd, k) + ".csv";
    save_checkpoint(ck, rd.full(ck_rel).string());
    save_snapshot(next, rd.full(snap_rel).string());
    write_file(rd.full(csv_rel), train_csv(task, all_stats));
    rd.record(ck_rel);
    rd.record(snap_rel);
    rd.record(csv_rel);
    rd.manifest.record_samples("cbt_step_" + std::to_string(k), samples_total);
    rd.manifest.record_wall("cbt_step_" + std::to_string(k), trained.second.wall_seconds);
    rd.save();
    std::error_code ec;
    fs::remove(resume_path, ec);
    out << "trained " << task << ": " << all_stats.size() << " epochs, " << samples_total
        << " samples -> " << ck_rel << "\n";
}

std::string checkpoint_stem(const fs::path& p) {
    std::string stem = p.filename().string();
    const std::string ext = ".cbt";
    if (stem.size() > ext.size() && stem.compare(stem.size() - ext.size(), ext.size(), ext) == 0) {
        stem.resize(stem.size() - ext.size());
    }
    return stem;
}

/// Re-running a command whose output exists must not rewrite it; verify the
/// recorded checksum instead so tampering still surfaces.
bool verify_existing(RunDir& rd, const std::string& rel, std::ostream& out) {
    if (!rd.has(rel)) return false;
    const RunManifest::Artifact* a = rd.manifest.find_artifact(rel);
    if (!a) {
        throw DataError(rel + " exists but is not in the run manifest; use a fresh directory");
    }
    const std::string got = sha256_hex_of_file(rd.full(rel).string());
    if (got != a->sha256) {
        throw ChecksumError(rel + ": checksum mismatch (manifest " + a->sha256 + ", file " + got +
                            ")");
    }
    out << "verified existing " << rel << "\n";
    return true;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void cmd_gen_tasks(const CliOptions& opt, std::ostream& out) {
    RunDir rd = open_run_dir(opt);
    RunLock lock(rd.root);
    if (opt.seed) rd.cfg.data_seed = *opt.seed;
    prepare(rd);
    for (const DomainSpec& spec : resolve_domains(rd.cfg)) {
        const fs::path dir = dataset_dir(rd, spec);
        const std::string rel = "data/" + dataset_dirname(spec) + "/manifest.txt";
        if (fs::exists(dir / "manifest.txt")) {
            const TaskDataset ds = load_task_dataset(dir.string());
            if (!(ds.domain == spec) || ds.counts != rd.cfg.counts ||
                ds.tile_size != rd.cfg.tile_size) {
                throw ConfigError("dataset " + dir.string() +
                                  " was generated with different settings");
            }
            out << "verified " << spec.name << ", no regeneration\n";
        } else {
            const TaskDataset ds = generate_task(spec, rd.cfg.counts, rd.cfg.tile_size);
            save_task_dataset(ds, dir.string());
            out << "generated " << spec.name << " -> " << dir.string() << "\n";
        }
        rd.record(rel);
    }
    rd.save();
}

void cmd_pretrain(const CliOptions& opt, std::ostream& out) {
    RunDir rd = open_run_dir(opt);
    RunLock lock(rd.root);
    if (opt.seed) rd.cfg.train.seed = *opt.seed;
    prepare(rd);
    const std::string ck_rel = step_checkpoint_rel(rd, 1);
    if (rd.has(ck_rel)) {
        load_checkpoint(rd.full(ck_rel).string());
        out << "pretrain already complete: " << ck_rel << "\n";
        return;
    }
    run_training_step(rd, 1, nullptr, opt, out);
}

void cmd_continue(const CliOptions& opt, std::ostream& out) {
    RunDir rd = open_run_dir(opt);
    RunLock lock(rd.root);
    if (opt.seed) rd.cfg.train.seed = *opt.seed;
    prepare(rd);
    const int done = trained_prefix(rd);
    if (done == 0) {
        throw DataError("nothing trained in " + rd.root.string() + "; run pretrain first");
    }
    if (done == rd.task_count()) {
        out << "all " << done << " tasks trained; nothing to continue\n";
        return;
    }
    const std::string snap_path = opt.snapshot_path.empty()
                                      ? rd.full(step_snapshot_rel(done)).string()
                                      : opt.snapshot_path;
    const TaskSnapshot snapshot = load_snapshot(snap_path);
    if (!snapshot.theta_star.same_layout(init_params(rd.cfg.model))) {
        throw ConfigError("snapshot " + snap_path + " does not match the configured encoder");
    }
    run_training_step(rd, done + 1, &snapshot, opt, out);
}

void cmd_joint_baseline(const CliOptions& opt, std::ostream& out) {
    RunDir rd = open_run_dir(opt);
    RunLock lock(rd.root);
    if (opt.seed) rd.cfg.train.seed = *opt.seed;
    prepare(rd);
    const int k = rd.cfg.joint_steps == 0 ? rd.task_count() : rd.cfg.joint_steps;
    const std::string ck_rel = "checkpoints/joint_" + std::to_string(k) + ".cbt";
    if (rd.has(ck_rel)) {
        load_checkpoint(rd.full(ck_rel).string());
        out << "joint baseline already complete: " << ck_rel << "\n";
        return;
    }
    const CbtConfig& train = rd.cfg.train;
    const auto specs = resolve_domains(rd.cfg);
    std::vector<ContinualTask> tasks;
    for (int i = 0; i < k; ++i) {
        tasks.push_back({rd.cfg.task_order[static_cast<std::size_t>(i)],
                         load_dataset(rd, specs[static_cast<std::size_t>(i)]).unlabeled});
    }
    // Fresh-init comparator: takes no checkpoint inputs by construction.
    const ContinualResult result = run_joint_baseline(
        tasks, rd.cfg.model, rd.cfg.augment, train,
        [&](int step, const ParameterVector&, const TrainLog& log) {
            const std::string name = "joint_step_" + std::to_string(step + 1);
            const std::string csv_rel = "metrics/train_" + name + ".csv";
            write_file(rd.full(csv_rel), train_csv(log.task_name, log.epochs));
            rd.record(csv_rel);
            rd.manifest.record_samples(name, log.processed_sample_count);
            rd.manifest.record_wall(name, log.wall_seconds);
            out << name << ": " << log.processed_sample_count << " samples\n";
        });

    Checkpoint ck;
    ck.params = result.params;
    ck.encoder_config = rd.cfg.model;
    ck.provenance = task_prefix(rd, k);
    save_checkpoint(ck, rd.full(ck_rel).string());
    rd.record(ck_rel);
    rd.save();
    out << "joint baseline over " << k << " tasks -> " << ck_rel << "\n";
}

void cmd_probe(const CliOptions& opt, std::ostream& out) {
    RunDir rd = open_run_dir(opt);
    RunLock lock(rd.root);
    if (opt.seed) rd.cfg.seeds = {*opt.seed};
    prepare(rd);

    fs::path ck_path;
    if (!opt.snapshot_path.empty()) {
        ck_path = opt.snapshot_path;
    } else {
        const int done = trained_prefix(rd);
        if (done == 0) {
            throw DataError("no checkpoint in " + rd.root.string() +
                            "; run pretrain or pass --snapshot");
        }
        ck_path = rd.full(step_checkpoint_rel(rd, done));
    }
    const std::string stem = checkpoint_stem(ck_path);
    const std::string csv_rel = "metrics/probe_" + stem + ".csv";
    if (verify_existing(rd, csv_rel, out)) return;

    const Checkpoint ck = load_checkpoint(ck_path.string());
    if (ck.encoder_config.input_shape !=
        std::array<int, 3>{3, rd.cfg.tile_size, rd.cfg.tile_size}) {
        throw ConfigError("checkpoint " + ck_path.string() +
                          " expects a different tile size than this config");
    }
    const std::vector<std::uint64_t>& seeds = rd.cfg.seeds;

    std::vector<std::string> header{"encoder", "task", "fraction", "seed", "oa", "miou", "f1"};
    for (int c = 0; c < kNumClasses; ++c) header.push_back("iou_" + std::to_string(c));
    std::string text = csv_row(header);
    int rows = 0;
    const auto specs = resolve_domains(rd.cfg);
    for (std::size_t t = 0; t < specs.size(); ++t) {
        const TaskDataset data = load_dataset(rd, specs[t]);
        for (double fraction : rd.cfg.probe_fractions) {
            for (std::uint64_t seed : seeds) {
                ProbeConfig pc = rd.cfg.probe;
                pc.seed = seed;
                const ProbeResult r = train_probe(ck.params, ck.encoder_config, data, fraction,
                                                  rd.cfg.probe_mode, pc);
                std::vector<std::string> row{stem,
                                             rd.cfg.task_order[t],
                                             format_double(fraction),
                                             std::to_string(seed),
                                             format_double(r.test.oa),
                                             format_double(r.test.miou),
                                             format_double(r.test.f1)};
                for (double iou : r.test.per_class_iou) row.push_back(format_double(iou));
                text += csv_row(row);
                ++rows;
            }
        }
    }
    write_file(rd.full(csv_rel), text);
    rd.record(csv_rel);
    rd.save();
    out << "probed " << stem << ": " << rows << " rows -> " << csv_rel << "\n";
}

void cmd_report(const CliOptions& opt, std::ostream& out) {
    RunDir rd = open_run_dir(opt);
    RunLock lock(rd.root);
    prepare(rd);
    if (verify_existing(rd, "report.txt", out)) return;

    const int k = rd.task_count();
    const int epochs = rd.cfg.train.epochs;
    const int bs = rd.cfg.train.batch_size;
    const int per_task = rd.cfg.counts.unlabeled;

    std::string text = "run report: " + rd.root.string() + "\n";
    text += "tasks: ";
    for (int i = 0; i < k; ++i) text += (i ? "," : "") + rd.cfg.task_order[static_cast<std::size_t>(i)];
    text += "\nlambda: " + format_double(rd.cfg.train.lambda) + "\n";

    // Exact sample counts; recorded values must agree with the closed form.
    std::int64_t cbt_total = 0, joint_total = 0;
    for (int step = 1; step <= k; ++step) {
        const std::int64_t cbt_step =
            static_cast<std::int64_t>(epochs) * bs * (per_task / bs);
        const std::int64_t joint_step =
            static_cast<std::int64_t>(epochs) * bs * ((static_cast<std::int64_t>(step) * per_task) / bs);
        cbt_total += cbt_step;
        joint_total += joint_step;
        const std::pair<std::string, std::int64_t> checks[] = {
            {"cbt_step_" + std::to_string(step), cbt_step},
            {"joint_step_" + std::to_string(step), joint_step}};
        for (const auto& [name, expect] : checks) {
            if (const auto* rec = rd.manifest.find_samples(name)) {
                if (rec->count != expect) {
                    throw DataError("recorded sample count for " + name + " is " +
                                    std::to_string(rec->count) + ", closed form gives " +
                                    std::to_string(expect));
                }
                text += "samples " + name + " = " + std::to_string(rec->count) + " (recorded)\n";
            } else {
                text += "samples " + name + " = " + std::to_string(expect) + " (closed form)\n";
            }
        }
    }
    text += "compute ratio: " + std::to_string(cbt_total) + " / " + std::to_string(joint_total) +
            " = " + format_double(static_cast<double>(cbt_total) / static_cast<double>(joint_total)) +
            "\n";

    // Forgetting needs a probe CSV per training step.
    const double target_fraction =
        *std::max_element(rd.cfg.probe_fractions.begin(), rd.cfg.probe_fractions.end());
    std::vector<std::vector<double>> scores;
    std::string missing;
    for (int step = 1; step <= k && missing.empty(); ++step) {
        const std::string rel = "metrics/probe_" + step_name(rd, step) + ".csv";
        if (!rd.has(rel)) {
            missing = rel;
            break;
        }
        const auto rows = parse_csv(read_file(rd.full(rel)));
        std::vector<double> row_scores;
        for (int task = 0; task < k; ++task) {
            std::vector<double> seeds_miou;
            for (std::size_t r = 1; r < rows.size(); ++r) {
                if (rows[r].size() < 7) throw DataError(rel + ": malformed row");
                if (rows[r][1] == rd.cfg.task_order[static_cast<std::size_t>(task)] &&
                    parse_double(rows[r][2]) == target_fraction) {
                    seeds_miou.push_back(parse_double(rows[r][5]));
                }
            }
            if (seeds_miou.empty()) throw DataError(rel + ": no rows for task " +
                                                    rd.cfg.task_order[static_cast<std::size_t>(task)]);
            row_scores.push_back(median(std::move(seeds_miou)));
        }
        scores.push_back(std::move(row_scores));
    }
    if (missing.empty()) {
        const ForgettingReport fr = forgetting_report(scores);
        for (int task = 0; task < k; ++task) {
            text += "forgetting lambda " + format_double(rd.cfg.train.lambda) + " task " +
                    rd.cfg.task_order[static_cast<std::size_t>(task)] + ": own " +
                    format_double(fr.at_own_end[static_cast<std::size_t>(task)]) + " final " +
                    format_double(fr.at_final[static_cast<std::size_t>(task)]) + " drop " +
                    format_double(fr.forgetting[static_cast<std::size_t>(task)]) + "\n";
        }
    } else {
        text += "forgetting: probe data incomplete (missing " + missing + ")\n";
    }

    // Embedding export for external projection tools.
    const int done = trained_prefix(rd);
    if (done > 0) {
        const std::string emb_rel = "metrics/embeddings.csv";
        if (!verify_existing(rd, emb_rel, out)) {
            const Checkpoint ck = load_checkpoint(rd.full(step_checkpoint_rel(rd, done)).string());
            std::vector<std::string> header{"domain", "tile"};
            for (int d = 0; d < ck.encoder_config.embed_dim; ++d) {
                header.push_back("e" + std::to_string(d));
            }
            std::string emb = csv_row(header);
            const auto specs = resolve_domains(rd.cfg);
            for (std::size_t t = 0; t < specs.size(); ++t) {
                const TaskDataset data = load_dataset(rd, specs[t]);
                for (std::size_t i = 0; i < data.unlabeled.size(); ++i) {
                    const Tensor& img = data.unlabeled.images[i];
                    Tensor batch({1, img.dim(0), img.dim(1), img.dim(2)});
                    std::copy(img.data(), img.data() + img.size(), batch.data());
                    const Tensor z = embed(ck.params, ck.encoder_config, batch);
                    std::vector<std::string> row{specs[t].name, std::to_string(i)};
                    for (int d = 0; d < z.dim(1); ++d) row.push_back(format_double(z.at(0, d)));
                    emb += csv_row(row);
                }
            }
            write_file(rd.full(emb_rel), emb);
            rd.record(emb_rel);
            text += "embeddings: " + emb_rel + "\n";
        }
    } else {
        text += "embeddings: skipped (no checkpoint)\n";
    }

    const std::string report_rel = "report.txt";
    write_file(rd.full(report_rel), text);
    rd.record(report_rel);
    rd.save();
    out << text;
}

int run_command(const std::string& command, const CliOptions& opt, std::ostream& out,
                std::ostream& err) {
    try {
        if (command == "gen-tasks") cmd_gen_tasks(opt, out);
        else if (command == "pretrain") cmd_pretrain(opt, out);
        else if (command == "continue") cmd_continue(opt, out);
        else if (command == "joint-baseline") cmd_joint_baseline(opt, out);
        else if (command == "probe") cmd_probe(opt, out);
        else if (command == "report") cmd_report(opt, out);
        else throw ConfigError("unknown command '" + command + "'");
        return exit_code::ok;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return exit_code::config;
    } catch (const ChecksumError& e) {
        err << "checksum error: " << e.what() << "\n";
        return exit_code::checksum;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return exit_code::numeric;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return exit_code::data;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::failure;
    }
}

}  // namespace cbt
