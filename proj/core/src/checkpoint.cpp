#include "cbt/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <fstream>
#include <sstream>

#include "cbt/error.hpp"

namespace cbt {

namespace {

constexpr char kMagic[4] = {'C', 'B', 'T', '1'};
constexpr std::uint32_t kMaxEntries = 1u << 20;
constexpr std::uint32_t kMaxNameLen = 4096;
constexpr std::uint8_t kMaxRank = 8;

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        buf_.append(s);
    }
    std::string take() { return std::move(buf_); }

private:
    std::string buf_;
};

class ByteReader {
public:
    ByteReader(const std::string& buf, std::string origin) : buf_(buf), origin_(std::move(origin)) {}

    void context(std::string ctx) { ctx_ = std::move(ctx); }

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf_[pos_++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf_[pos_++])) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    std::string str(std::uint32_t len) {
        need(len);
        std::string s = buf_.substr(pos_, len);
        pos_ += len;
        return s;
    }
    bool at_end() const { return pos_ == buf_.size(); }
    [[noreturn]] void fail(const std::string& what) const { throw DataError(origin_ + ": " + what); }

private:
    void need(std::size_t n) {
        if (pos_ + n > buf_.size()) fail("truncated while reading " + ctx_);
    }

    const std::string& buf_;
    std::string origin_;
    std::string ctx_ = "header";
    std::size_t pos_ = 0;
};

std::int64_t dims_product(const Shape& dims) { return shape_product(dims); }

}  // namespace

void Container::add_tensor(const std::string& name, const Tensor& t) {
    if (has(name)) throw ConfigError("container already has an entry named " + name);
    ContainerEntry e;
    e.name = name;
    e.type = EntryType::f64;
    e.dims = t.shape();
    e.floats.assign(t.data(), t.data() + t.size());
    entries.push_back(std::move(e));
}

void Container::add_mask(const std::string& name, const LabelMask& m) {
    if (has(name)) throw ConfigError("container already has an entry named " + name);
    ContainerEntry e;
    e.name = name;
    e.type = EntryType::i32;
    e.dims = {m.height, m.width};
    e.ints = m.ids;
    entries.push_back(std::move(e));
}

void Container::set_config(const std::string& key, const std::string& value) {
    for (auto& [k, v] : config) {
        if (k == key) {
            v = value;
            return;
        }
    }
    config.emplace_back(key, value);
}

bool Container::has(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return true;
    return false;
}

const ContainerEntry& Container::find(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return e;
    throw DataError("container has no entry named " + name);
}

Tensor Container::tensor(const std::string& name) const {
    const ContainerEntry& e = find(name);
    if (e.type == EntryType::i32) throw DataError("container entry " + name + " is not a float tensor");
    return Tensor(e.dims, e.floats);
}

LabelMask Container::mask(const std::string& name) const {
    const ContainerEntry& e = find(name);
    if (e.type != EntryType::i32 || e.dims.size() != 2) {
        throw DataError("container entry " + name + " is not a rank-2 integer mask");
    }
    LabelMask m(e.dims[0], e.dims[1]);
    m.ids = e.ints;
    return m;
}

const std::string& Container::config_value(const std::string& key) const {
    for (const auto& [k, v] : config)
        if (k == key) return v;
    throw DataError("container config has no key " + key);
}

std::string container_to_bytes(const Container& c) {
    ByteWriter w;
    for (char ch : kMagic) w.u8(static_cast<std::uint8_t>(ch));
    w.u32(c.version);
    w.u32(static_cast<std::uint32_t>(c.entries.size()));
    for (const ContainerEntry& e : c.entries) {
        if (e.name.empty() || e.name.size() > kMaxNameLen) {
            throw ConfigError("container entry name length out of range");
        }
        if (e.dims.size() > kMaxRank) throw ConfigError("container entry rank too large");
        w.str(e.name);
        w.u8(static_cast<std::uint8_t>(e.type));
        w.u8(static_cast<std::uint8_t>(e.dims.size()));
        for (int d : e.dims) w.u32(static_cast<std::uint32_t>(d));
        const std::int64_t n = dims_product(e.dims);
        switch (e.type) {
            case EntryType::f32:
                if (static_cast<std::int64_t>(e.floats.size()) != n) {
                    throw ConfigError("payload size mismatch in entry " + e.name);
                }
                for (double v : e.floats) w.f32(static_cast<float>(v));
                break;
            case EntryType::f64:
                if (static_cast<std::int64_t>(e.floats.size()) != n) {
                    throw ConfigError("payload size mismatch in entry " + e.name);
                }
                for (double v : e.floats) w.f64(v);
                break;
            case EntryType::i32:
                if (static_cast<std::int64_t>(e.ints.size()) != n) {
                    throw ConfigError("payload size mismatch in entry " + e.name);
                }
                for (std::int32_t v : e.ints) w.i32(v);
                break;
        }
    }
    w.u32(static_cast<std::uint32_t>(c.provenance.size()));
    for (const std::string& s : c.provenance) w.str(s);
    w.u32(static_cast<std::uint32_t>(c.config.size()));
    for (const auto& [k, v] : c.config) {
        w.str(k);
        w.str(v);
    }
    return w.take();
}

Container container_from_bytes(const std::string& bytes, const std::string& origin) {
    ByteReader r(bytes, origin);
    r.context("magic");
    for (char expect : kMagic) {
        if (r.u8() != static_cast<std::uint8_t>(expect)) r.fail("bad container magic");
    }
    Container c;
    r.context("header");
    c.version = r.u32();
    if (c.version != 1) r.fail("unsupported container version " + std::to_string(c.version));
    const std::uint32_t count = r.u32();
    if (count > kMaxEntries) r.fail("implausible entry count " + std::to_string(count));

    for (std::uint32_t i = 0; i < count; ++i) {
        r.context("entry " + std::to_string(i) + " name");
        const std::uint32_t name_len = r.u32();
        if (name_len == 0 || name_len > kMaxNameLen) r.fail("entry name length out of range");
        ContainerEntry e;
        e.name = r.str(name_len);
        if (c.has(e.name)) r.fail("duplicate entry name " + e.name);

        r.context("tensor " + e.name);
        const std::uint8_t dtype = r.u8();
        if (dtype > 2) r.fail("unknown dtype code " + std::to_string(dtype) + " in tensor " + e.name);
        e.type = static_cast<EntryType>(dtype);
        const std::uint8_t rank = r.u8();
        if (rank > kMaxRank) r.fail("rank " + std::to_string(rank) + " too large in tensor " + e.name);
        for (int d = 0; d < rank; ++d) {
            const std::uint32_t dim = r.u32();
            if (dim == 0 || dim > (1u << 28)) r.fail("bad dimension in tensor " + e.name);
            e.dims.push_back(static_cast<int>(dim));
        }
        const std::int64_t n = dims_product(e.dims);
        switch (e.type) {
            case EntryType::f32:
                e.floats.reserve(static_cast<std::size_t>(n));
                for (std::int64_t k = 0; k < n; ++k) e.floats.push_back(static_cast<double>(r.f32()));
                break;
            case EntryType::f64:
                e.floats.reserve(static_cast<std::size_t>(n));
                for (std::int64_t k = 0; k < n; ++k) e.floats.push_back(r.f64());
                break;
            case EntryType::i32:
                e.ints.reserve(static_cast<std::size_t>(n));
                for (std::int64_t k = 0; k < n; ++k) e.ints.push_back(r.i32());
                break;
        }
        c.entries.push_back(std::move(e));
    }

    r.context("provenance");
    const std::uint32_t prov_count = r.u32();
    if (prov_count > kMaxEntries) r.fail("implausible provenance count");
    for (std::uint32_t i = 0; i < prov_count; ++i) {
        const std::uint32_t len = r.u32();
        if (len > kMaxNameLen) r.fail("provenance string too long");
        c.provenance.push_back(r.str(len));
    }

    r.context("config block");
    const std::uint32_t cfg_count = r.u32();
    if (cfg_count > kMaxEntries) r.fail("implausible config count");
    for (std::uint32_t i = 0; i < cfg_count; ++i) {
        const std::uint32_t klen = r.u32();
        if (klen == 0 || klen > kMaxNameLen) r.fail("config key length out of range");
        std::string key = r.str(klen);
        r.context("config value for " + key);
        const std::uint32_t vlen = r.u32();
        if (vlen > kMaxNameLen) r.fail("config value too long");
        c.config.emplace_back(std::move(key), r.str(vlen));
        r.context("config block");
    }

    if (!r.at_end()) r.fail("trailing bytes after container payload");
    return c;
}

void write_container(const Container& c, const std::string& path) {
    const std::string bytes = container_to_bytes(c);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw DataError("failed writing " + path);
}

Container read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw DataError("failed reading " + path);
    return container_from_bytes(buf.str(), path);
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    if (s.empty()) return out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = s.find(',', start);
        const std::string piece = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        int value = 0;
        const auto [ptr, ec] = std::from_chars(piece.data(), piece.data() + piece.size(), value);
        if (ec != std::errc{} || ptr != piece.data() + piece.size()) {
            throw DataError("invalid integer list element '" + piece + "'");
        }
        out.push_back(value);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

void encoder_config_to_entries(const EncoderConfig& cfg, Container& c) {
    c.set_config("encoder.input", join_ints({cfg.input_shape[0], cfg.input_shape[1], cfg.input_shape[2]}));
    c.set_config("encoder.kind", to_string(cfg.kind));
    c.set_config("encoder.hidden", join_ints(cfg.hidden_widths));
    c.set_config("encoder.embed_dim", std::to_string(cfg.embed_dim));
    c.set_config("encoder.projector", join_ints(cfg.projector_widths));
    c.set_config("encoder.activation", to_string(cfg.activation));
    c.set_config("encoder.init_seed", std::to_string(cfg.init_seed));
}

EncoderConfig encoder_config_from_entries(const Container& c) {
    try {
        EncoderConfig cfg;
        const std::vector<int> input = split_ints(c.config_value("encoder.input"));
        if (input.size() != 3) throw DataError("encoder.input must have three dims");
        cfg.input_shape = {input[0], input[1], input[2]};
        cfg.kind = encoder_kind_from_string(c.config_value("encoder.kind"));
        cfg.hidden_widths = split_ints(c.config_value("encoder.hidden"));
        cfg.embed_dim = static_cast<int>(std::stol(c.config_value("encoder.embed_dim")));
        cfg.projector_widths = split_ints(c.config_value("encoder.projector"));
        cfg.activation = activation_from_string(c.config_value("encoder.activation"));
        cfg.init_seed = std::stoull(c.config_value("encoder.init_seed"));
        cfg.validate();
        return cfg;
    } catch (const DataError&) {
        throw;
    } catch (const std::exception& e) {
        throw DataError(std::string("invalid encoder config in container: ") + e.what());
    }
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    Container c;
    c.version = static_cast<std::uint32_t>(ckpt.format_version);
    for (int i = 0; i < ckpt.params.entry_count(); ++i) {
        c.add_tensor(ckpt.params.entry(i).name, ckpt.params.tensor(i));
    }
    c.provenance = ckpt.provenance;
    encoder_config_to_entries(ckpt.encoder_config, c);
    write_container(c, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    const Container c = read_container(path);
    Checkpoint ckpt;
    ckpt.format_version = static_cast<int>(c.version);
    ckpt.encoder_config = encoder_config_from_entries(c);
    for (const ContainerEntry& e : c.entries) {
        if (e.type != EntryType::f64) {
            throw DataError(path + ": checkpoint entry " + e.name + " is not an f64 tensor");
        }
        ckpt.params.add(e.name, Tensor(e.dims, e.floats));
    }
    ckpt.provenance = c.provenance;

    const ParameterVector expect = init_params(ckpt.encoder_config);
    if (!ckpt.params.same_layout(expect)) {
        throw DataError(path + ": parameter table does not match the stored encoder config");
    }
    return ckpt;
}

}  // namespace cbt
