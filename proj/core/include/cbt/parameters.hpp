#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cbt/tensor.hpp"

namespace cbt {

struct ParamEntry {
    std::string name;
    Tensor tensor;

    bool operator==(const ParamEntry&) const = default;
};

/// Ordered, named collection of trainable tensors with flat-index addressing.
///
/// Entry order is part of the contract: it is stable across save/load and
/// defines the flat coordinate layout used by the finite-difference oracle.
class ParameterVector {
public:
    ParameterVector() = default;

    /// Appends an entry; names must be unique.
    void add(std::string name, Tensor tensor);

    int entry_count() const { return static_cast<int>(entries_.size()); }
    const ParamEntry& entry(int i) const { return entries_[static_cast<std::size_t>(i)]; }
    Tensor& tensor(int i) { return entries_[static_cast<std::size_t>(i)].tensor; }
    const Tensor& tensor(int i) const { return entries_[static_cast<std::size_t>(i)].tensor; }

    bool has(std::string_view name) const { return index_of(name) >= 0; }
    /// Index of a named entry, -1 if absent.
    int index_of(std::string_view name) const;
    const Tensor& named(std::string_view name) const;

    std::int64_t total_len() const { return total_len_; }
    double flat_get(std::int64_t i) const;
    void flat_set(std::int64_t i, double v);

    /// Same names and shapes, all-zero values.
    ParameterVector zeros_like() const;
    bool same_layout(const ParameterVector& o) const;
    void check_same_layout(const ParameterVector& o, const char* what) const;
    void check_finite(const char* what) const;

    bool operator==(const ParameterVector& o) const = default;

private:
    // Locates the entry containing flat index i.
    int entry_for_flat(std::int64_t i, std::int64_t* offset_in_entry) const;

    std::vector<ParamEntry> entries_;
    std::vector<std::int64_t> offsets_;  // start offset per entry
    std::int64_t total_len_ = 0;
};

}  // namespace cbt
