#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>

namespace cbt {

/// Inputs shared by every subcommand. --seed narrows to the knob the
/// command actually draws from: gen-tasks shifts the domain seed, training
/// commands replace the shuffle seed, probe replaces the seed sweep.
struct CliOptions {
    std::string config_path;             // empty uses the documented defaults
    std::string workdir = "run";
    std::optional<std::uint64_t> seed;
    std::string snapshot_path;           // continue: anchor file; probe: encoder file
    int max_epochs = 0;                  // pretrain/continue: pause after this many (0 = all)
};

// Each command throws on failure; run_command maps the error hierarchy to
// the exit_code constants and prints the message to err.
void cmd_gen_tasks(const CliOptions& opt, std::ostream& out);
void cmd_pretrain(const CliOptions& opt, std::ostream& out);
void cmd_continue(const CliOptions& opt, std::ostream& out);
void cmd_joint_baseline(const CliOptions& opt, std::ostream& out);
void cmd_probe(const CliOptions& opt, std::ostream& out);
void cmd_report(const CliOptions& opt, std::ostream& out);

int run_command(const std::string& command, const CliOptions& opt, std::ostream& out,
                std::ostream& err);

}  // namespace cbt
