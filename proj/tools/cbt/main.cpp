#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cbt/error.hpp"
#include "cbt/run.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Continual twin-loss pretraining over synthetic remote-sensing tasks"};
    app.require_subcommand(1);

    cbt::CliOptions opt;
    std::string command;
    std::uint64_t seed_value = 0;
    std::vector<CLI::Option*> seed_opts;

    auto add_common = [&](CLI::App* sub, bool with_snapshot, bool with_max_epochs) {
        sub->add_option("--config", opt.config_path, "Run config file (defaults when omitted)");
        sub->add_option("--workdir", opt.workdir, "Run directory")->capture_default_str();
        seed_opts.push_back(
            sub->add_option("--seed", seed_value,
                            "Seed override: domain seed for gen-tasks, shuffle seed for "
                            "training, the probe seed sweep for probe"));
        if (with_snapshot) {
            sub->add_option("--snapshot", opt.snapshot_path,
                            "Artifact path: anchor snapshot for continue, encoder checkpoint "
                            "for probe");
        }
        if (with_max_epochs) {
            sub->add_option("--max-epochs", opt.max_epochs,
                            "Pause after this many epochs this invocation; rerun to resume");
        }
        sub->callback([&, sub] { command = sub->get_name(); });
    };

    add_common(app.add_subcommand("gen-tasks", "Generate or verify the task datasets"), false,
               false);
    add_common(app.add_subcommand("pretrain", "Train the first task from scratch"), false, true);
    add_common(app.add_subcommand("continue", "Train the next task with the anchor penalty"), true,
               true);
    add_common(app.add_subcommand("joint-baseline",
                                  "Retrain from scratch on unions of tasks for comparison"),
               false, false);
    add_common(app.add_subcommand("probe", "Score an encoder with segmentation probes"), true,
               false);
    add_common(app.add_subcommand("report", "Summarize a finished run directory"), false, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : cbt::exit_code::config;
    }
    for (const CLI::Option* o : seed_opts) {
        if (o->count() > 0) opt.seed = seed_value;
    }
    return cbt::run_command(command, opt, std::cout, std::cerr);
}
