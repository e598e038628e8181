#include "cbt/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "cbt/csv.hpp"
#include "cbt/error.hpp"

namespace cbt {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::stringstream ss(s);
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw DataError("empty list element in '" + s + "'");
        out.push_back(item);
    }
    if (out.empty()) throw DataError("empty list");
    return out;
}

int to_int(const std::string& s) {
    const std::int64_t v = parse_int(s);
    if (v < -(1LL << 31) || v >= (1LL << 31)) throw DataError("integer out of range '" + s + "'");
    return static_cast<int>(v);
}

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += ',';
        out += parts[i];
    }
    return out;
}

template <class T, class F>
std::string join_mapped(const std::vector<T>& v, F f) {
    std::vector<std::string> parts;
    parts.reserve(v.size());
    for (const T& x : v) parts.push_back(f(x));
    return join(parts);
}

using Setter = std::function<void(RunConfig&, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct KeySpec {
    const char* key;
    Setter set;
    Getter get;
};

const std::vector<KeySpec>& key_table() {
    static const std::vector<KeySpec> table = {
        {"task_order",
         [](RunConfig& c, const std::string& v) { c.task_order = split_list(v); },
         [](const RunConfig& c) { return join(c.task_order); }},
        {"baseline",
         [](RunConfig& c, const std::string& v) { c.baseline = v; },
         [](const RunConfig& c) { return c.baseline; }},
        {"seeds",
         [](RunConfig& c, const std::string& v) {
             c.seeds.clear();
             for (const auto& s : split_list(v)) c.seeds.push_back(parse_uint(s));
         },
         [](const RunConfig& c) {
             return join_mapped(c.seeds, [](std::uint64_t s) { return std::to_string(s); });
         }},
        {"data.tile_size",
         [](RunConfig& c, const std::string& v) { c.tile_size = to_int(v); },
         [](const RunConfig& c) { return std::to_string(c.tile_size); }},
        {"data.unlabeled",
         [](RunConfig& c, const std::string& v) { c.counts.unlabeled = to_int(v); },
         [](const RunConfig& c) { return std::to_string(c.counts.unlabeled); }},
        {"data.train",
         [](RunConfig& c, const std::string& v) { c.counts.train = to_int(v); },
         [](const RunConfig& c) { return std::to_string(c.counts.train); }},
        {"data.val",
         [](RunConfig& c, const std::string& v) { c.counts.val = to_int(v); },
         [](const RunConfig& c) { return std::to_string(c.counts.val); }},
        {"data.test",
         [](RunConfig& c, const std::string& v) { c.counts.test = to_int(v); },
         [](const RunConfig& c) { return std::to_string(c.counts.test); }},
        {"data.seed",
         [](RunConfig& c, const std::string& v) { c.data_seed = parse_uint(v); },
         [](const RunConfig& c) { return std::to_string(c.data_seed); }},
        {"model.kind",
         [](RunConfig& c, const std::string& v) { c.model.kind = encoder_kind_from_string(v); },
         [](const RunConfig& c) { return to_string(c.model.kind); }},
        {"model.hidden",
         [](RunConfig& c, const std::string& v) {
             c.model.hidden_widths.clear();
             for (const auto& s : split_list(v)) c.model.hidden_widths.push_back(to_int(s));
         },
         [](const RunConfig& c) {
             return join_mapped(c.model.hidden_widths, [](int w) { return std::to_string(w); });
         }},
        {"model.embed_dim",
         [](RunConfig& c, const std::string& v) { c.model.embed_dim = to_int(v); },
         [](const RunConfig& c) { return std::to_string(c.model.embed_dim); }},
        {"model.projector",
         [](RunConfig& c, const std::string& v) {
             c.model.projector_widths.clear();
             for (const auto& s : split_list(v)) c.model.projector_widths.push_back(to_int(s));
         },
         [](const RunConfig& c) {
             return join_mapped(c.model.projector_widths, [](int w) { return std::to_string(w); });
         }},
        {"model.activation",
         [](RunConfig& c, const std::string& v) { c.model.activation = activation_from_string(v); },
         [](const RunConfig& c) { return to_string(c.model.activation); }},
        {"model.init_seed",
         [](RunConfig& c, const std::string& v) { c.model.init_seed = parse_uint(v); },
         [](const RunConfig& c) { return std::to_string(c.model.init_seed); }},
        {"augment.flip_prob",
         [](RunConfig& c, const std::string& v) { c.augment.flip_prob = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.augment.flip_prob); }},
        {"augment.noise_sigma",
         [](RunConfig& c, const std::string& v) { c.augment.noise_sigma = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.augment.noise_sigma); }},
        {"augment.brightness_delta",
         [](RunConfig& c, const std::string& v) { c.augment.brightness_delta = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.augment.brightness_delta); }},
        {"augment.contrast_lo",
         [](RunConfig& c, const std::string& v) { c.augment.contrast_lo = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.augment.contrast_lo); }},
        {"augment.contrast_hi",
         [](RunConfig& c, const std::string& v) { c.augment.contrast_hi = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.augment.contrast_hi); }},
        {"augment.crop_lo",
         [](RunConfig& c, const std::string& v) { c.augment.crop_lo = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.augment.crop_lo); }},
        {"augment.crop_hi",
         [](RunConfig& c, const std::string& v) { c.augment.crop_hi = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.augment.crop_hi); }},
        {"augment.seed",
         [](RunConfig& c, const std::string& v) { c.augment.seed = parse_uint(v); },
         [](const RunConfig& c) { return std::to_string(c.augment.seed); }},
        {"train.lambda",
         [](RunConfig& c, const std::string& v) { c.train.lambda = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.train.lambda); }},
        {"train.mu",
         [](RunConfig& c, const std::string& v) { c.train.bt.mu = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.train.bt.mu); }},
        {"train.eps",
         [](RunConfig& c, const std::string& v) { c.train.bt.eps = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.train.bt.eps); }},
        {"train.epochs",
         [](RunConfig& c, const std::string& v) { c.train.epochs = to_int(v); },
         [](const RunConfig& c) { return std::to_string(c.train.epochs); }},
        {"train.batch_size",
         [](RunConfig& c, const std::string& v) { c.train.batch_size = to_int(v); },
         [](const RunConfig& c) { return std::to_string(c.train.batch_size); }},
        {"train.lr",
         [](RunConfig& c, const std::string& v) { c.train.adam.lr = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.train.adam.lr); }},
        {"train.beta1",
         [](RunConfig& c, const std::string& v) { c.train.adam.beta1 = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.train.adam.beta1); }},
        {"train.beta2",
         [](RunConfig& c, const std::string& v) { c.train.adam.beta2 = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.train.adam.beta2); }},
        {"train.adam_eps",
         [](RunConfig& c, const std::string& v) { c.train.adam.eps = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.train.adam.eps); }},
        {"train.seed",
         [](RunConfig& c, const std::string& v) { c.train.seed = parse_uint(v); },
         [](const RunConfig& c) { return std::to_string(c.train.seed); }},
        {"probe.fractions",
         [](RunConfig& c, const std::string& v) {
             c.probe_fractions.clear();
             for (const auto& s : split_list(v)) c.probe_fractions.push_back(parse_double(s));
         },
         [](const RunConfig& c) {
             return join_mapped(c.probe_fractions, [](double f) { return format_double(f); });
         }},
        {"probe.head_hidden",
         [](RunConfig& c, const std::string& v) { c.probe.head_hidden = to_int(v); },
         [](const RunConfig& c) { return std::to_string(c.probe.head_hidden); }},
        {"probe.epochs",
         [](RunConfig& c, const std::string& v) { c.probe.epochs = to_int(v); },
         [](const RunConfig& c) { return std::to_string(c.probe.epochs); }},
        {"probe.batch_size",
         [](RunConfig& c, const std::string& v) { c.probe.batch_size = to_int(v); },
         [](const RunConfig& c) { return std::to_string(c.probe.batch_size); }},
        {"probe.lr",
         [](RunConfig& c, const std::string& v) { c.probe.adam.lr = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.probe.adam.lr); }},
        {"probe.mode",
         [](RunConfig& c, const std::string& v) { c.probe_mode = probe_mode_from_string(v); },
         [](const RunConfig& c) { return to_string(c.probe_mode); }},
        {"joint.steps",
         [](RunConfig& c, const std::string& v) { c.joint_steps = to_int(v); },
         [](const RunConfig& c) { return std::to_string(c.joint_steps); }},
    };
    return table;
}

}  // namespace

RunConfig default_run_config() {
    RunConfig c;
    c.model.input_shape = {3, 32, 32};
    c.model.kind = EncoderKind::tinyconv;
    c.model.hidden_widths = {8, 12};
    c.model.embed_dim = 16;
    c.model.projector_widths = {32, 32};
    c.model.activation = Activation::tanh;
    c.model.init_seed = 1;
    c.augment.seed = 11;
    c.train.seed = 7;
    return c;
}

void RunConfig::validate() const {
    if (baseline != "cbt" && baseline != "bt_joint" && baseline != "none_pretrain") {
        throw ConfigError("config: baseline must be cbt, bt_joint, or none_pretrain, got '" +
                          baseline + "'");
    }
    if (task_order.empty()) throw ConfigError("config: task_order is empty");
    std::set<std::string> seen_tasks;
    for (const std::string& name : task_order) {
        if (name != "satelloid" && name != "droneoid" && name != "aerialoid") {
            throw ConfigError("config: unknown task '" + name + "'");
        }
        if (!seen_tasks.insert(name).second) {
            throw ConfigError("config: task '" + name + "' repeats in task_order");
        }
    }
    if (seeds.empty()) throw ConfigError("config: seeds is empty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
        throw ConfigError("config: seeds repeat");
    }
    if (tile_size < 16 || tile_size % 4 != 0) {
        throw ConfigError("config: data.tile_size must be at least 16 and divisible by 4");
    }
    counts.validate();
    if (model.input_shape != std::array<int, 3>{3, tile_size, tile_size}) {
        throw ConfigError("config: model input shape must follow data.tile_size");
    }
    model.validate();
    augment.validate();
    train.validate();
    if (probe_fractions.empty()) throw ConfigError("config: probe.fractions is empty");
    for (double f : probe_fractions) {
        if (!(f > 0.0) || f > 1.0) {
            throw ConfigError("config: probe fraction " + format_double(f) +
                              " outside (0, 1]");
        }
    }
    probe.validate();
    if (joint_steps < 0 || joint_steps > static_cast<int>(task_order.size())) {
        throw ConfigError("config: joint.steps must be in [0, number of tasks]");
    }
}

RunConfig parse_run_config(const std::string& text) {
    RunConfig c = default_run_config();
    std::set<std::string> seen;
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        const auto& table = key_table();
        auto it = std::find_if(table.begin(), table.end(),
                               [&](const KeySpec& k) { return key == k.key; });
        if (it == table.end()) {
            throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key +
                              "'");
        }
        if (!seen.insert(key).second) {
            throw ConfigError("config line " + std::to_string(line_no) + ": key '" + key +
                              "' repeats");
        }
        try {
            it->set(c, value);
        } catch (const Error& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ", key '" + key +
                              "': " + e.what());
        }
    }
    c.model.input_shape = {3, c.tile_size, c.tile_size};
    c.validate();
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

std::string serialize_run_config(const RunConfig& c) {
    std::string out;
    for (const KeySpec& k : key_table()) {
        out += k.key;
        out += " = ";
        out += k.get(c);
        out += '\n';
    }
    return out;
}

std::vector<DomainSpec> resolve_domains(const RunConfig& c) {
    std::vector<DomainSpec> out;
    for (const std::string& name : c.task_order) {
        DomainSpec spec;
        if (name == "satelloid") spec = satelloid_domain();
        else if (name == "droneoid") spec = droneoid_domain();
        else if (name == "aerialoid") spec = aerialoid_domain();
        else throw ConfigError("config: unknown task '" + name + "'");
        spec.seed += c.data_seed;
        out.push_back(std::move(spec));
    }
    return out;
}

std::string dataset_dirname(const DomainSpec& spec) {
    return spec.name + "-" + std::to_string(spec.seed);
}

}  // namespace cbt
