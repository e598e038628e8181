#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cbt/model.hpp"
#include "cbt/parameters.hpp"
#include "cbt/tensor.hpp"

namespace cbt {

enum class EntryType : std::uint8_t { f32 = 0, f64 = 1, i32 = 2 };

/// One named array in a container file.
struct ContainerEntry {
    std::string name;
    EntryType type = EntryType::f64;
    Shape dims;
    std::vector<double> floats;       // payload for f32/f64
    std::vector<std::int32_t> ints;   // payload for i32

    bool operator==(const ContainerEntry&) const = default;
};

/// In-memory form of the "CBT1" binary container: a named tensor table,
/// ordered provenance strings, and an ordered key=value block.
///
/// On-disk layout, all integers little-endian:
///   magic "CBT1"; u32 version; u32 entry count;
///   per entry: u32 name length, name bytes, u8 dtype (0=f32, 1=f64, 2=i32),
///              u8 rank, u32 dims..., raw payload;
///   u32 provenance count; per string: u32 length, bytes;
///   u32 config count; per pair: u32 key length, key, u32 value length, value.
struct Container {
    std::uint32_t version = 1;
    std::vector<ContainerEntry> entries;
    std::vector<std::string> provenance;
    std::vector<std::pair<std::string, std::string>> config;

    void add_tensor(const std::string& name, const Tensor& t);
    void add_mask(const std::string& name, const LabelMask& m);
    void set_config(const std::string& key, const std::string& value);

    bool has(const std::string& name) const;
    const ContainerEntry& find(const std::string& name) const;  // DataError if absent
    Tensor tensor(const std::string& name) const;
    LabelMask mask(const std::string& name) const;
    /// DataError if the key is absent.
    const std::string& config_value(const std::string& key) const;

    bool operator==(const Container&) const = default;
};

/// Serialize to bytes / parse from bytes. Parsing throws DataError naming
/// the entry being read when the buffer is malformed or truncated.
std::string container_to_bytes(const Container& c);
Container container_from_bytes(const std::string& bytes, const std::string& origin);

void write_container(const Container& c, const std::string& path);
Container read_container(const std::string& path);

/// Trained model state: parameters plus the config needed to rebuild the
/// graph, plus the ordered names of tasks trained so far.
struct Checkpoint {
    int format_version = 1;
    ParameterVector params;
    EncoderConfig encoder_config;
    std::vector<std::string> provenance;

    bool operator==(const Checkpoint&) const = default;
};

void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// EncoderConfig <-> config block entries under the "encoder." prefix.
void encoder_config_to_entries(const EncoderConfig& cfg, Container& c);
EncoderConfig encoder_config_from_entries(const Container& c);

std::string join_ints(const std::vector<int>& v);
std::vector<int> split_ints(const std::string& s);

}  // namespace cbt
