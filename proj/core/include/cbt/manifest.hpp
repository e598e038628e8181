#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cbt {

/// Ledger of what a run produced: the config hash, every artifact with its
/// sha-256 and write time, and the processed-sample count of every training
/// step. Recording the same path or step again replaces the old line.
struct RunManifest {
    struct Artifact {
        std::string path;        // relative to the run directory
        std::string sha256;
        std::int64_t timestamp = 0;

        bool operator==(const Artifact&) const = default;
    };
    struct StepSamples {
        std::string step;
        std::int64_t count = 0;

        bool operator==(const StepSamples&) const = default;
    };
    struct StepWall {
        std::string step;
        double seconds = 0.0;

        bool operator==(const StepWall&) const = default;
    };

    std::string config_sha256;
    std::vector<Artifact> artifacts;
    std::vector<StepSamples> samples;
    std::vector<StepWall> walls;

    void record_artifact(const std::string& path, const std::string& sha256,
                         std::int64_t timestamp);
    void record_samples(const std::string& step, std::int64_t count);
    void record_wall(const std::string& step, double seconds);
    const Artifact* find_artifact(const std::string& path) const;
    const StepSamples* find_samples(const std::string& step) const;

    bool operator==(const RunManifest&) const = default;
};

std::string manifest_to_text(const RunManifest& m);
RunManifest manifest_from_text(const std::string& text);

void save_manifest(const RunManifest& m, const std::string& path);
RunManifest load_manifest(const std::string& path);

/// Hashes the artifact file under workdir and records it.
void record_file(RunManifest& m, const std::string& workdir, const std::string& rel_path);

/// Recomputes every artifact checksum. A missing file throws DataError, a
/// mismatch throws ChecksumError; both name the file.
void verify_manifest(const RunManifest& m, const std::string& workdir);

}  // namespace cbt
