#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cbt/augment.hpp"
#include "cbt/continual.hpp"
#include "cbt/eval.hpp"
#include "cbt/model.hpp"
#include "cbt/taskgen.hpp"

namespace cbt {

/// Everything a run reads, resolved from a flat key=value file. Every key
/// has a default, unknown or repeated keys are rejected, and the resolved
/// document is echoed into the run directory before any command executes.
struct RunConfig {
    std::vector<std::string> task_order{"satelloid", "droneoid", "aerialoid"};
    std::string baseline = "cbt";                     // cbt | bt_joint | none_pretrain
    std::vector<std::uint64_t> seeds{1, 2, 3};        // probe repetitions

    int tile_size = 32;
    TaskCounts counts;
    std::uint64_t data_seed = 0;                      // offsets every domain seed

    EncoderConfig model;
    AugmentConfig augment;
    CbtConfig train;

    std::vector<double> probe_fractions{0.1, 0.5, 1.0};
    ProbeConfig probe;
    ProbeMode probe_mode = ProbeMode::frozen;
    int joint_steps = 0;                              // 0 means one step per task

    void validate() const;
    bool operator==(const RunConfig&) const = default;
};

/// Defaults sized for the three-domain synthetic suite.
RunConfig default_run_config();

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
/// Canonical echo form: fixed key order, shortest round-trip numbers.
/// parse(serialize(c)) == c.
std::string serialize_run_config(const RunConfig& c);

/// Domain specs in task order, preset seeds shifted by data_seed.
std::vector<DomainSpec> resolve_domains(const RunConfig& c);
/// Dataset directory name, distinct per domain seed.
std::string dataset_dirname(const DomainSpec& spec);

}  // namespace cbt
