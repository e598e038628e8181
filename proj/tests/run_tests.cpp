#include "doctest.h"

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cbt/config.hpp"
#include "cbt/csv.hpp"
#include "cbt/error.hpp"
#include "cbt/run.hpp"

namespace fs = std::filesystem;
using namespace cbt;

namespace {

// Per-case scratch tree under the system temp dir, removed on scope exit.
struct Scratch {
    fs::path root;

    Scratch() {
        static int counter = 0;
        root = fs::temp_directory_path() /
               ("cbt_run_tests_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(root);
    }
    ~Scratch() {
        std::error_code ec;
        fs::remove_all(root, ec);
    }

    std::string path(const std::string& rel) const { return (root / rel).string(); }
};

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
    REQUIRE(out.good());
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void append_byte(const fs::path& p) {
    std::ofstream out(p, std::ios::binary | std::ios::app);
    out << 'x';
    REQUIRE(out.good());
}

std::string tiny_config_text() {
    return "task_order = satelloid,droneoid\n"
           "data.tile_size = 16\n"
           "data.unlabeled = 8\n"
           "data.train = 8\n"
           "data.val = 2\n"
           "data.test = 4\n"
           "train.epochs = 2\n"
           "train.batch_size = 4\n"
           "model.hidden = 4,6\n"
           "model.embed_dim = 6\n"
           "model.projector = 8\n"
           "probe.epochs = 2\n"
           "probe.batch_size = 4\n"
           "probe.head_hidden = 4\n"
           "seeds = 1\n"
           "probe.fractions = 0.5,1\n";
}

struct Invocation {
    int rc;
    std::string out;
    std::string err;
};

Invocation run(const std::string& command, const CliOptions& opt) {
    std::ostringstream out, err;
    const int rc = run_command(command, opt, out, err);
    return {rc, out.str(), err.str()};
}

CliOptions opts(const Scratch& s, const std::string& cfg_rel, const std::string& workdir_rel) {
    CliOptions o;
    o.config_path = s.path(cfg_rel);
    o.workdir = s.path(workdir_rel);
    return o;
}

}  // namespace

TEST_CASE("run_command maps the error hierarchy to exit codes") {
    Scratch s;
    write_text(s.root / "good.cfg", tiny_config_text());
    write_text(s.root / "bad.cfg", "task_orderr = satelloid\n");

    auto bad = run("gen-tasks", opts(s, "bad.cfg", "w"));
    CHECK(bad.rc == exit_code::config);
    CHECK(bad.err.find("config error") != std::string::npos);

    // training before gen-tasks: the dataset manifest is missing
    auto nodata = run("pretrain", opts(s, "good.cfg", "w2"));
    CHECK(nodata.rc == exit_code::data);
    CHECK(nodata.err.find("data error") != std::string::npos);

    auto unknown = run("frobnicate", opts(s, "good.cfg", "w3"));
    CHECK(unknown.rc == exit_code::config);
    CHECK(unknown.err.find("unknown command") != std::string::npos);

    // a held lock refuses entry instead of racing the other process
    fs::create_directories(s.root / "w4");
    write_text(s.root / "w4" / "run.lock", "12345\n");
    auto locked = run("gen-tasks", opts(s, "good.cfg", "w4"));
    CHECK(locked.rc == exit_code::data);
    CHECK(locked.err.find("locked") != std::string::npos);
}

TEST_CASE("gen-tasks writes once, verifies on rerun, flags tampering") {
    Scratch s;
    write_text(s.root / "tiny.cfg", tiny_config_text());
    const CliOptions o = opts(s, "tiny.cfg", "run");

    auto first = run("gen-tasks", o);
    REQUIRE(first.rc == exit_code::ok);
    CHECK(first.out.find("generated satelloid") != std::string::npos);
    const fs::path train = s.root / "run" / "data" / "satelloid-9001" / "train.cbt";
    REQUIRE(fs::exists(train));
    const std::string bytes = read_bytes(train);

    auto again = run("gen-tasks", o);
    CHECK(again.rc == exit_code::ok);
    CHECK(again.out.find("verified") != std::string::npos);
    CHECK(again.out.find("generated") == std::string::npos);
    CHECK(read_bytes(train) == bytes);

    append_byte(train);
    auto tampered = run("gen-tasks", o);
    CHECK(tampered.rc == exit_code::checksum);
    CHECK(tampered.err.find("train.cbt") != std::string::npos);
}

TEST_CASE("a run directory rejects a different config") {
    Scratch s;
    write_text(s.root / "a.cfg", tiny_config_text());
    write_text(s.root / "b.cfg", tiny_config_text() + "train.lr = 0.002\n");
    write_text(s.root / "dup.cfg", tiny_config_text() + "train.epochs = 3\n");

    REQUIRE(run("gen-tasks", opts(s, "a.cfg", "run")).rc == exit_code::ok);
    auto clash = run("pretrain", opts(s, "b.cfg", "run"));
    CHECK(clash.rc == exit_code::config);
    CHECK(clash.err.find("different config") != std::string::npos);

    // a key set twice is rejected while parsing, before any file IO
    auto dup = run("pretrain", opts(s, "dup.cfg", "run2"));
    CHECK(dup.rc == exit_code::config);
    CHECK(dup.err.find("repeats") != std::string::npos);
}

TEST_CASE("--seed becomes part of the recorded config") {
    Scratch s;
    write_text(s.root / "tiny.cfg", tiny_config_text());
    CliOptions with_seed = opts(s, "tiny.cfg", "run");
    with_seed.seed = 123;
    REQUIRE(run("gen-tasks", with_seed).rc == exit_code::ok);

    const std::string echo = read_bytes(s.root / "run" / "config.txt");
    CHECK(echo.find("data.seed = 123") != std::string::npos);

    // the same workdir without the override is now a different config
    auto plain = run("gen-tasks", opts(s, "tiny.cfg", "run"));
    CHECK(plain.rc == exit_code::config);
    CHECK(plain.err.find("different config") != std::string::npos);
}

TEST_CASE("paused training resumes onto the straight-run trajectory") {
    Scratch s;
    write_text(s.root / "tiny.cfg", tiny_config_text());
    const CliOptions straight = opts(s, "tiny.cfg", "straight");
    CliOptions paused = opts(s, "tiny.cfg", "paused");

    REQUIRE(run("gen-tasks", straight).rc == exit_code::ok);
    REQUIRE(run("pretrain", straight).rc == exit_code::ok);

    REQUIRE(run("gen-tasks", paused).rc == exit_code::ok);
    paused.max_epochs = 1;
    auto pause = run("pretrain", paused);
    REQUIRE(pause.rc == exit_code::ok);
    CHECK(pause.out.find("paused") != std::string::npos);
    CHECK(fs::exists(s.root / "paused" / "checkpoints" / "pretrain.resume.cbt"));
    CHECK_FALSE(fs::exists(s.root / "paused" / "checkpoints" / "pretrain.cbt"));

    paused.max_epochs = 0;
    auto resumed = run("pretrain", paused);
    REQUIRE(resumed.rc == exit_code::ok);
    CHECK(resumed.out.find("resuming") != std::string::npos);
    CHECK_FALSE(fs::exists(s.root / "paused" / "checkpoints" / "pretrain.resume.cbt"));

    for (const std::string rel : {"checkpoints/pretrain.cbt", "checkpoints/snapshot_1.cbt",
                                  "metrics/train_pretrain.csv"}) {
        CAPTURE(rel);
        CHECK(read_bytes(s.root / "paused" / rel) == read_bytes(s.root / "straight" / rel));
    }

    // completed steps are not retrained
    auto done = run("pretrain", paused);
    CHECK(done.rc == exit_code::ok);
    CHECK(done.out.find("already complete") != std::string::npos);
}

TEST_CASE("probe output is byte-reproducible across run directories and parses back") {
    Scratch s;
    write_text(s.root / "tiny.cfg", tiny_config_text());
    const CliOptions a = opts(s, "tiny.cfg", "a");
    const CliOptions b = opts(s, "tiny.cfg", "b");

    for (const CliOptions* o : {&a, &b}) {
        REQUIRE(run("gen-tasks", *o).rc == exit_code::ok);
        REQUIRE(run("pretrain", *o).rc == exit_code::ok);
        REQUIRE(run("probe", *o).rc == exit_code::ok);
    }
    const std::string csv = read_bytes(s.root / "a" / "metrics" / "probe_pretrain.csv");
    CHECK(csv == read_bytes(s.root / "b" / "metrics" / "probe_pretrain.csv"));

    const RunConfig cfg = parse_run_config(tiny_config_text());
    const auto rows = parse_csv(csv);
    // header + tasks x fractions x seeds
    const std::size_t want =
        1 + cfg.task_order.size() * cfg.probe_fractions.size() * cfg.seeds.size();
    REQUIRE(rows.size() == want);
    REQUIRE(rows[0].size() == 7 + 4);
    CHECK(rows[0][0] == "encoder");
    CHECK(rows[0][4] == "oa");
    for (std::size_t r = 1; r < rows.size(); ++r) {
        CAPTURE(r);
        CHECK(rows[r][0] == "pretrain");
        const double oa = parse_double(rows[r][4]);
        const double miou = parse_double(rows[r][5]);
        const double f1 = parse_double(rows[r][6]);
        CHECK(oa >= 0.0);
        CHECK(oa <= 1.0);
        CHECK(miou >= 0.0);
        CHECK(miou <= 1.0);
        CHECK(f1 >= 0.0);
        CHECK(f1 <= 1.0);
        // format_double output round-trips through the parser unchanged
        CHECK(format_double(oa) == rows[r][4]);
    }

    // tampering with a recorded metrics file is refused on the next probe
    append_byte(s.root / "a" / "metrics" / "probe_pretrain.csv");
    auto tampered = run("probe", a);
    CHECK(tampered.rc == exit_code::checksum);
}
