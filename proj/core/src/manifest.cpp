#include "cbt/manifest.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cbt/csv.hpp"
#include "cbt/error.hpp"
#include "cbt/hash.hpp"

namespace cbt {

namespace {

constexpr const char* kFormat = "cbt-run-manifest-1";

bool plain_token(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') return false;
    }
    return true;
}

void check_token(const std::string& s, const char* what) {
    if (!plain_token(s)) throw DataError(std::string("manifest: ") + what + " '" + s +
                                         "' must be a non-empty token without whitespace");
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

}  // namespace

void RunManifest::record_artifact(const std::string& path, const std::string& sha256,
                                  std::int64_t timestamp) {
    check_token(path, "artifact path");
    check_token(sha256, "checksum");
    for (Artifact& a : artifacts) {
        if (a.path == path) {
            a.sha256 = sha256;
            a.timestamp = timestamp;
            return;
        }
    }
    artifacts.push_back({path, sha256, timestamp});
}

void RunManifest::record_samples(const std::string& step, std::int64_t count) {
    check_token(step, "step name");
    for (StepSamples& s : samples) {
        if (s.step == step) {
            s.count = count;
            return;
        }
    }
    samples.push_back({step, count});
}

void RunManifest::record_wall(const std::string& step, double seconds) {
    check_token(step, "step name");
    for (StepWall& w : walls) {
        if (w.step == step) {
            w.seconds = seconds;
            return;
        }
    }
    walls.push_back({step, seconds});
}

const RunManifest::Artifact* RunManifest::find_artifact(const std::string& path) const {
    for (const Artifact& a : artifacts) {
        if (a.path == path) return &a;
    }
    return nullptr;
}

const RunManifest::StepSamples* RunManifest::find_samples(const std::string& step) const {
    for (const StepSamples& s : samples) {
        if (s.step == step) return &s;
    }
    return nullptr;
}

std::string manifest_to_text(const RunManifest& m) {
    std::string out;
    out += std::string("format = ") + kFormat + "\n";
    out += "config = " + (m.config_sha256.empty() ? std::string("-") : m.config_sha256) + "\n";
    for (const RunManifest::Artifact& a : m.artifacts) {
        out += "artifact = " + a.path + " sha256 " + a.sha256 + " at " +
               std::to_string(a.timestamp) + "\n";
    }
    for (const RunManifest::StepSamples& s : m.samples) {
        out += "samples = " + s.step + " " + std::to_string(s.count) + "\n";
    }
    for (const RunManifest::StepWall& w : m.walls) {
        out += "wall = " + w.step + " " + format_double(w.seconds) + "\n";
    }
    return out;
}

RunManifest manifest_from_text(const std::string& text) {
    RunManifest m;
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    bool saw_format = false, saw_config = false;
    while (std::getline(ss, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::size_t eq = line.find(" = ");
        if (eq == std::string::npos) {
            throw DataError("manifest line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 3);
        if (key == "format") {
            if (value != kFormat) {
                throw DataError("manifest: unsupported format '" + value + "'");
            }
            saw_format = true;
        } else if (key == "config") {
            m.config_sha256 = value == "-" ? "" : value;
            saw_config = true;
        } else if (key == "artifact") {
            const auto tok = split_ws(value);
            if (tok.size() != 5 || tok[1] != "sha256" || tok[3] != "at") {
                throw DataError("manifest line " + std::to_string(line_no) +
                                ": expected '<path> sha256 <hex> at <time>'");
            }
            m.artifacts.push_back({tok[0], tok[2], parse_int(tok[4])});
        } else if (key == "samples") {
            const auto tok = split_ws(value);
            if (tok.size() != 2) {
                throw DataError("manifest line " + std::to_string(line_no) +
                                ": expected '<step> <count>'");
            }
            m.samples.push_back({tok[0], parse_int(tok[1])});
        } else if (key == "wall") {
            const auto tok = split_ws(value);
            if (tok.size() != 2) {
                throw DataError("manifest line " + std::to_string(line_no) +
                                ": expected '<step> <seconds>'");
            }
            m.walls.push_back({tok[0], parse_double(tok[1])});
        } else {
            throw DataError("manifest line " + std::to_string(line_no) + ": unknown key '" + key +
                            "'");
        }
    }
    if (!saw_format) throw DataError("manifest: missing format line");
    if (!saw_config) throw DataError("manifest: missing config line");
    return m;
}

void save_manifest(const RunManifest& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write manifest " + path);
    out << manifest_to_text(m);
    if (!out) throw DataError("failed writing manifest " + path);
}

RunManifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read manifest " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return manifest_from_text(buf.str());
}

void record_file(RunManifest& m, const std::string& workdir, const std::string& rel_path) {
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(now).count();
    m.record_artifact(rel_path, sha256_hex_of_file((std::filesystem::path(workdir) / rel_path).string()),
                      static_cast<std::int64_t>(secs));
}

void verify_manifest(const RunManifest& m, const std::string& workdir) {
    for (const RunManifest::Artifact& a : m.artifacts) {
        const std::string full = (std::filesystem::path(workdir) / a.path).string();
        if (!std::filesystem::exists(full)) {
            throw DataError("manifest: missing artifact " + a.path);
        }
        const std::string got = sha256_hex_of_file(full);
        if (got != a.sha256) {
            throw ChecksumError(a.path + ": checksum mismatch (manifest " + a.sha256 + ", file " +
                                got + ")");
        }
    }
}

}  // namespace cbt
