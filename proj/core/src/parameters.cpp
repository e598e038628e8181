#include "cbt/parameters.hpp"

#include "cbt/error.hpp"

namespace cbt {

void ParameterVector::add(std::string name, Tensor tensor) {
    if (name.empty()) throw ConfigError("parameter name must not be empty");
    if (has(name)) throw ConfigError("duplicate parameter name: " + name);
    offsets_.push_back(total_len_);
    total_len_ += tensor.size();
    entries_.push_back({std::move(name), std::move(tensor)});
}

int ParameterVector::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name == name) return static_cast<int>(i);
    }
    return -1;
}

const Tensor& ParameterVector::named(std::string_view name) const {
    const int i = index_of(name);
    if (i < 0) throw ConfigError("no parameter named " + std::string(name));
    return entries_[static_cast<std::size_t>(i)].tensor;
}

int ParameterVector::entry_for_flat(std::int64_t i, std::int64_t* offset_in_entry) const {
    if (i < 0 || i >= total_len_) {
        throw ConfigError("flat index " + std::to_string(i) + " out of range [0, " +
                          std::to_string(total_len_) + ")");
    }
    // Entries are few; linear scan from the back is fine.
    for (int e = static_cast<int>(entries_.size()) - 1; e >= 0; --e) {
        if (i >= offsets_[static_cast<std::size_t>(e)]) {
            *offset_in_entry = i - offsets_[static_cast<std::size_t>(e)];
            return e;
        }
    }
    throw ConfigError("unreachable: empty parameter vector");
}

double ParameterVector::flat_get(std::int64_t i) const {
    std::int64_t off = 0;
    const int e = entry_for_flat(i, &off);
    return entries_[static_cast<std::size_t>(e)].tensor[off];
}

void ParameterVector::flat_set(std::int64_t i, double v) {
    std::int64_t off = 0;
    const int e = entry_for_flat(i, &off);
    entries_[static_cast<std::size_t>(e)].tensor[off] = v;
}

ParameterVector ParameterVector::zeros_like() const {
    ParameterVector out;
    for (const auto& e : entries_) {
        out.add(e.name, Tensor::zeros(e.tensor.shape()));
    }
    return out;
}

bool ParameterVector::same_layout(const ParameterVector& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name != o.entries_[i].name) return false;
        if (entries_[i].tensor.shape() != o.entries_[i].tensor.shape()) return false;
    }
    return true;
}

void ParameterVector::check_same_layout(const ParameterVector& o, const char* what) const {
    if (!same_layout(o)) {
        throw ConfigError(std::string("parameter layout mismatch in ") + what);
    }
}

void ParameterVector::check_finite(const char* what) const {
    for (const auto& e : entries_) e.tensor.check_finite(what);
}

}  // namespace cbt
