#include "cbt/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "cbt/checkpoint.hpp"
#include "cbt/error.hpp"
#include "cbt/hash.hpp"
#include "cbt/rng.hpp"

namespace cbt {

namespace {

constexpr std::uint64_t kGeomSalt = 0x67656f6dull;      // "geom"
constexpr std::uint64_t kTexSalt = 0x74657874ull;       // "text"
constexpr std::uint64_t kIdSalt = 0x74696c65ull;        // "tile"
constexpr std::uint64_t kFractionSalt = 0x66726163ull;  // "frac"

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

void paint_objects(LabelMask& mask, const DomainSpec& spec, int S, Rng& g) {
    const int n_obj = static_cast<int>(std::lround(spec.object_density));
    for (int o = 0; o < n_obj; ++o) {
        const int cls = 1 + o % (kNumClasses - 1);
        const double u_shape = g.uniform01();
        const int cy = static_cast<int>(g.below(static_cast<std::uint64_t>(S)));
        const int cx = static_cast<int>(g.below(static_cast<std::uint64_t>(S)));
        if (u_shape < 0.5) {
            const int hh = 2 + static_cast<int>(g.below(4));
            const int hw = 2 + static_cast<int>(g.below(4));
            for (int y = std::max(0, cy - hh); y <= std::min(S - 1, cy + hh); ++y) {
                for (int x = std::max(0, cx - hw); x <= std::min(S - 1, cx + hw); ++x) {
                    mask.at(y, x) = cls;
                }
            }
        } else {
            const int r = 2 + static_cast<int>(g.below(4));
            for (int y = std::max(0, cy - r); y <= std::min(S - 1, cy + r); ++y) {
                for (int x = std::max(0, cx - r); x <= std::min(S - 1, cx + r); ++x) {
                    const int dy = y - cy, dx = x - cx;
                    if (dy * dy + dx * dx <= r * r) mask.at(y, x) = cls;
                }
            }
        }
    }
}

LabelMask shear_mask(const LabelMask& m, int S) {
    LabelMask out(S, S);
    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) out.at(y, x) = m.at(y, (x + y) % S);
    }
    return out;
}

Tensor shear_image(const Tensor& img, int S) {
    Tensor out({3, S, S});
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < S; ++y) {
            for (int x = 0; x < S; ++x) {
                out.at(c, y, x) = img.at(c, y, (x + y) % S);
            }
        }
    }
    return out;
}

void degrade_resolution(Tensor& img, int S, double scale) {
    const int L = std::max(1, static_cast<int>(std::lround(S * scale)));
    if (L >= S) return;
    std::vector<int> edge(static_cast<std::size_t>(L) + 1);
    for (int i = 0; i <= L; ++i) {
        edge[static_cast<std::size_t>(i)] = static_cast<int>((static_cast<std::int64_t>(i) * S) / L);
    }
    for (int c = 0; c < 3; ++c) {
        for (int bi = 0; bi < L; ++bi) {
            for (int bj = 0; bj < L; ++bj) {
                double acc = 0.0;
                int n = 0;
                for (int y = edge[bi]; y < edge[bi + 1]; ++y) {
                    for (int x = edge[bj]; x < edge[bj + 1]; ++x) {
                        acc += img.at(c, y, x);
                        ++n;
                    }
                }
                const double avg = acc / n;
                for (int y = edge[bi]; y < edge[bi + 1]; ++y) {
                    for (int x = edge[bj]; x < edge[bj + 1]; ++x) {
                        img.at(c, y, x) = avg;
                    }
                }
            }
        }
    }
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(const std::string& s, const std::string& key) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || s.empty()) {
        throw DataError("manifest: bad number for " + key + ": '" + s + "'");
    }
    return v;
}

std::int64_t parse_int(const std::string& s, const std::string& key) {
    try {
        std::size_t pos = 0;
        const std::int64_t v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("manifest: bad integer for " + key + ": '" + s + "'");
    }
}

std::string fmt_rgb(const Rgb& c) {
    return fmt_double(c[0]) + "," + fmt_double(c[1]) + "," + fmt_double(c[2]);
}

Rgb parse_rgb(const std::string& s, const std::string& key) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = s.find(',', start);
        parts.push_back(s.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (parts.size() != 3) throw DataError("manifest: " + key + " needs three components");
    return {parse_double(parts[0], key), parse_double(parts[1], key), parse_double(parts[2], key)};
}

const char* kSplitNames[4] = {"unlabeled", "train", "val", "test"};

}  // namespace

std::string to_string(Viewpoint v) { return v == Viewpoint::nadir ? "nadir" : "oblique"; }

Viewpoint viewpoint_from_string(const std::string& s) {
    if (s == "nadir") return Viewpoint::nadir;
    if (s == "oblique") return Viewpoint::oblique;
    throw ConfigError("unknown viewpoint '" + s + "' (expected nadir or oblique)");
}

void DomainSpec::validate() const {
    if (name.empty()) throw ConfigError("domain: name must not be empty");
    if (!(texture_freq > 0.0) || !std::isfinite(texture_freq)) {
        throw ConfigError("domain " + name + ": texture_freq must be positive");
    }
    if (!(resolution_scale > 0.0) || resolution_scale > 1.0) {
        throw ConfigError("domain " + name + ": resolution_scale must be in (0, 1]");
    }
    if (object_density < 0.0 || !std::isfinite(object_density)) {
        throw ConfigError("domain " + name + ": object_density must be >= 0");
    }
    for (const Rgb& c : palette) {
        for (double ch : c) {
            if (ch < 0.0 || ch > 1.0) {
                throw ConfigError("domain " + name + ": palette channels must be in [0, 1]");
            }
        }
    }
}

void TaskCounts::validate() const {
    if (unlabeled < 1 || train < 1 || val < 1 || test < 1) {
        throw ConfigError("task counts must all be positive");
    }
}

const Tensor& EvalOnlySplit::image(std::size_t i) const {
    if (i >= tiles_.size()) throw DataError("test split: tile index out of range");
    return tiles_[i].image;
}

void EvalOnlySplit::evaluate(
    const std::function<void(const Tensor& image, const LabelMask& mask)>& visit) const {
    for (const LabeledTile& t : tiles_) visit(t.image, t.mask);
}

std::uint64_t tile_id(const DomainSpec& spec, int index) {
    return Rng::key({spec.seed, fnv1a(spec.name), kIdSalt, static_cast<std::uint64_t>(index)});
}

LabeledTile render_tile(const DomainSpec& spec, int tile_size, int tile_index) {
    const int S = tile_size;
    Rng geom(Rng::key({spec.seed, kGeomSalt, static_cast<std::uint64_t>(tile_index)}));
    Rng tex(Rng::key({spec.seed, kTexSalt, static_cast<std::uint64_t>(tile_index)}));

    LabelMask mask(S, S);
    paint_objects(mask, spec, S, geom);

    const double two_pi = 2.0 * std::numbers::pi;
    const double angle = tex.uniform(0.0, two_pi);
    const double ph1 = tex.uniform(0.0, two_pi);
    const double ph2 = tex.uniform(0.0, two_pi);
    const double ca = std::cos(angle), sa = std::sin(angle);

    Rgb bg;
    for (int c = 0; c < 3; ++c) {
        const double mean = (spec.palette[0][c] + spec.palette[1][c] + spec.palette[2][c]) / 3.0;
        bg[c] = 0.25 + 0.5 * mean;
    }

    Tensor img({3, S, S});
    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
            const double u = static_cast<double>(x) / S;
            const double v = static_cast<double>(y) / S;
            const double wave = std::sin(two_pi * spec.texture_freq * (ca * u + sa * v) + ph1) *
                                std::cos(two_pi * spec.texture_freq * (ca * v - sa * u) + ph2);
            const int cls = mask.at(y, x);
            for (int c = 0; c < 3; ++c) {
                const double base = cls == 0
                                        ? bg[c] * (0.75 + 0.25 * wave)
                                        : spec.palette[static_cast<std::size_t>(cls - 1)][c] *
                                              (0.8 + 0.2 * wave);
                img.at(c, y, x) = base;
            }
        }
    }

    if (spec.viewpoint == Viewpoint::oblique) {
        mask = shear_mask(mask, S);
        img = shear_image(img, S);
    }

    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
            const double n = tex.normal() * 0.02;
            for (int c = 0; c < 3; ++c) img.at(c, y, x) += n;
        }
    }

    degrade_resolution(img, S, spec.resolution_scale);

    for (std::int64_t i = 0; i < img.size(); ++i) img[i] = clamp01(img[i]);

    LabeledTile tile;
    tile.image = std::move(img);
    tile.mask = std::move(mask);
    return tile;
}

TaskDataset generate_task(const DomainSpec& spec, const TaskCounts& counts, int tile_size) {
    spec.validate();
    counts.validate();
    if (tile_size < 16) throw ConfigError("generate_task: tile_size must be at least 16");
    if (tile_size % 4 != 0) throw ConfigError("generate_task: tile_size must be divisible by 4");

    TaskDataset d;
    d.domain = spec;
    d.tile_size = tile_size;
    d.counts = counts;

    int index = 0;
    for (int i = 0; i < counts.unlabeled; ++i, ++index) {
        LabeledTile t = render_tile(spec, tile_size, index);
        d.unlabeled.images.push_back(std::move(t.image));
        d.unlabeled.ids.push_back(tile_id(spec, index));
    }
    std::vector<LabeledTile> test_tiles;
    for (int i = 0; i < counts.train; ++i, ++index) d.train.push_back(render_tile(spec, tile_size, index));
    for (int i = 0; i < counts.val; ++i, ++index) d.val.push_back(render_tile(spec, tile_size, index));
    for (int i = 0; i < counts.test; ++i, ++index) test_tiles.push_back(render_tile(spec, tile_size, index));
    d.test = EvalOnlySplit(std::move(test_tiles));
    return d;
}

std::array<double, 6> tile_features(const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ConfigError("tile_features: expected a [3.H.W] image");
    }
    const int H = image.dim(1), W = image.dim(2);
    std::array<double, 6> f{};
    for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) acc += image.at(c, y, x);
        f[static_cast<std::size_t>(c)] = acc / (static_cast<double>(H) * W);
    }
    double gx = 0.0, gy = 0.0;
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < H; ++y)
            for (int x = 0; x + 1 < W; ++x)
                gx += std::abs(image.at(c, y, x + 1) - image.at(c, y, x));
        for (int y = 0; y + 1 < H; ++y)
            for (int x = 0; x < W; ++x)
                gy += std::abs(image.at(c, y + 1, x) - image.at(c, y, x));
    }
    f[3] = gx / (3.0 * H * std::max(1, W - 1));
    f[4] = gy / (3.0 * std::max(1, H - 1) * W);

    double mean = 0.0, sq = 0.0;
    const double n = static_cast<double>(H) * W;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double luma =
                (image.at(0, y, x) + image.at(1, y, x) + image.at(2, y, x)) / 3.0;
            mean += luma;
            sq += luma * luma;
        }
    }
    mean /= n;
    f[5] = std::sqrt(std::max(0.0, sq / n - mean * mean));
    return f;
}

namespace {

double feature_distance(const std::array<double, 6>& a, const std::array<double, 6>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

std::vector<std::array<double, 6>> task_features(const TaskDataset& t) {
    std::vector<std::array<double, 6>> out;
    out.reserve(t.unlabeled.size());
    for (const Tensor& img : t.unlabeled.images) out.push_back(tile_features(img));
    return out;
}

double within_mean(const std::vector<std::array<double, 6>>& f) {
    const std::size_t n = f.size();
    if (n < 2) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) acc += feature_distance(f[i], f[j]);
    return acc / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

}  // namespace

double domain_divergence(const TaskDataset& a, const TaskDataset& b) {
    if (a.unlabeled.size() == 0 || b.unlabeled.size() == 0) {
        throw DataError("domain_divergence: both tasks need unlabeled tiles");
    }
    // Canonical argument order gives bitwise symmetry.
    const TaskDataset* first = &a;
    const TaskDataset* second = &b;
    if (second->domain.name < first->domain.name) std::swap(first, second);

    const auto fa = task_features(*first);
    const auto fb = task_features(*second);
    double cross = 0.0;
    for (const auto& fi : fa)
        for (const auto& fj : fb) cross += feature_distance(fi, fj);
    cross /= static_cast<double>(fa.size()) * static_cast<double>(fb.size());

    const double score = cross - 0.5 * (within_mean(fa) + within_mean(fb));
    return std::max(0.0, score);
}

TaskDataset label_fraction_view(const TaskDataset& d, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0) {
        throw ConfigError("label_fraction_view: fraction must be in (0, 1]");
    }
    const int n = static_cast<int>(d.train.size());
    const int m = static_cast<int>(std::floor(fraction * n));
    if (m < 1) {
        throw DataError("label_fraction_view: fraction " + fmt_double(fraction) +
                        " keeps no tiles out of " + std::to_string(n));
    }
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(Rng::key({seed, kFractionSalt}));
    rng.shuffle(order);
    order.resize(static_cast<std::size_t>(m));
    std::sort(order.begin(), order.end());

    TaskDataset out = d;
    out.train.clear();
    out.train.reserve(order.size());
    for (int idx : order) out.train.push_back(d.train[static_cast<std::size_t>(idx)]);
    return out;
}

DomainSpec satelloid_domain() {
    DomainSpec s;
    s.name = "satelloid";
    s.texture_freq = 2.0;
    s.viewpoint = Viewpoint::nadir;
    s.resolution_scale = 0.55;
    s.palette = {{{0.45, 0.5, 0.2}, {0.5, 0.35, 0.2}, {0.15, 0.4, 0.2}}};
    s.object_density = 3.0;
    s.seed = 9001;
    return s;
}

DomainSpec droneoid_domain() {
    DomainSpec s;
    s.name = "droneoid";
    s.texture_freq = 6.0;
    s.viewpoint = Viewpoint::oblique;
    s.resolution_scale = 1.0;
    s.palette = {{{0.6, 0.6, 0.65}, {0.7, 0.25, 0.2}, {0.3, 0.3, 0.35}}};
    s.object_density = 4.0;
    s.seed = 9002;
    return s;
}

DomainSpec aerialoid_domain() {
    DomainSpec s;
    s.name = "aerialoid";
    s.texture_freq = 12.0;
    s.viewpoint = Viewpoint::nadir;
    s.resolution_scale = 0.8;
    s.palette = {{{0.85, 0.75, 0.5}, {0.2, 0.6, 0.6}, {0.9, 0.9, 0.9}}};
    s.object_density = 5.0;
    s.seed = 9003;
    return s;
}

std::vector<DomainSpec> default_suite() {
    return {satelloid_domain(), droneoid_domain(), aerialoid_domain()};
}

namespace {

Container split_container(const std::string& split, const std::vector<LabeledTile>& tiles) {
    Container c;
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        c.add_tensor("tile." + std::to_string(i), tiles[i].image);
        c.add_mask("tile." + std::to_string(i) + ".mask", tiles[i].mask);
    }
    c.set_config("split", split);
    c.set_config("count", std::to_string(tiles.size()));
    return c;
}

std::vector<LabeledTile> tiles_from_container(const Container& c, const std::string& split,
                                              int expect_count, int tile_size, int num_classes,
                                              const std::string& origin) {
    if (c.config_value("split") != split) {
        throw DataError(origin + ": expected split " + split + ", found " + c.config_value("split"));
    }
    const std::int64_t count = parse_int(c.config_value("count"), "count");
    if (count != expect_count) {
        throw DataError(origin + ": manifest expects " + std::to_string(expect_count) +
                        " tiles, container holds " + std::to_string(count));
    }
    std::vector<LabeledTile> tiles;
    tiles.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        LabeledTile t;
        t.image = c.tensor("tile." + std::to_string(i));
        if (t.image.rank() != 3 || t.image.dim(0) != 3 || t.image.dim(1) != tile_size ||
            t.image.dim(2) != tile_size) {
            throw DataError(origin + ": tile " + std::to_string(i) + " has shape " +
                            shape_to_string(t.image.shape()));
        }
        t.mask = c.mask("tile." + std::to_string(i) + ".mask");
        if (t.mask.height != tile_size || t.mask.width != tile_size) {
            throw DataError(origin + ": mask " + std::to_string(i) + " shape mismatch");
        }
        for (std::int32_t id : t.mask.ids) {
            if (id < 0 || id >= num_classes) {
                throw DataError(origin + ": mask " + std::to_string(i) + " holds class id " +
                                std::to_string(id));
            }
        }
        tiles.push_back(std::move(t));
    }
    return tiles;
}

}  // namespace

void save_task_dataset(const TaskDataset& d, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());

    Container unl_c;
    for (std::size_t i = 0; i < d.unlabeled.images.size(); ++i) {
        unl_c.add_tensor("tile." + std::to_string(i), d.unlabeled.images[i]);
    }
    unl_c.set_config("split", "unlabeled");
    unl_c.set_config("count", std::to_string(d.unlabeled.size()));

    std::vector<LabeledTile> test_tiles;
    d.test.evaluate([&](const Tensor& img, const LabelMask& m) {
        LabeledTile t;
        t.image = img;
        t.mask = m;
        test_tiles.push_back(std::move(t));
    });

    const Container containers[4] = {std::move(unl_c), split_container("train", d.train),
                                     split_container("val", d.val),
                                     split_container("test", test_tiles)};
    std::string hashes[4];
    for (int i = 0; i < 4; ++i) {
        const std::string bytes = container_to_bytes(containers[i]);
        hashes[i] = sha256_hex(bytes);
        const std::string path = dir + "/" + kSplitNames[i] + ".cbt";
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open " + path + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw DataError("failed writing " + path);
    }

    std::ostringstream m;
    m << "format = cbt-dataset-1\n";
    m << "name = " << d.domain.name << "\n";
    m << "texture_freq = " << fmt_double(d.domain.texture_freq) << "\n";
    m << "viewpoint = " << to_string(d.domain.viewpoint) << "\n";
    m << "resolution_scale = " << fmt_double(d.domain.resolution_scale) << "\n";
    for (int i = 0; i < 3; ++i) {
        m << "palette." << i << " = " << fmt_rgb(d.domain.palette[static_cast<std::size_t>(i)])
          << "\n";
    }
    m << "object_density = " << fmt_double(d.domain.object_density) << "\n";
    m << "seed = " << d.domain.seed << "\n";
    m << "tile_size = " << d.tile_size << "\n";
    m << "num_classes = " << d.num_classes << "\n";
    m << "count.unlabeled = " << d.unlabeled.size() << "\n";
    m << "count.train = " << d.train.size() << "\n";
    m << "count.val = " << d.val.size() << "\n";
    m << "count.test = " << test_tiles.size() << "\n";
    for (int i = 0; i < 4; ++i) {
        m << "file." << kSplitNames[i] << " = " << kSplitNames[i] << ".cbt\n";
        m << "sha256." << kSplitNames[i] << " = " << hashes[i] << "\n";
    }
    const std::string manifest_path = dir + "/manifest.txt";
    std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + manifest_path + " for writing");
    out << m.str();
    out.flush();
    if (!out) throw DataError("failed writing " + manifest_path);
}

namespace {

std::map<std::string, std::string> parse_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::size_t eq = line.find(" = ");
        if (eq == std::string::npos) {
            throw DataError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 3);
        if (kv.count(key)) throw DataError(path + ": duplicate key " + key);
        kv[key] = value;
    }
    return kv;
}

const std::string& manifest_get(const std::map<std::string, std::string>& kv,
                                const std::string& key, const std::string& path) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw DataError(path + ": missing key " + key);
    return it->second;
}

}  // namespace

TaskDataset load_task_dataset(const std::string& dir) {
    const std::string manifest_path = dir + "/manifest.txt";
    const auto kv = parse_manifest(manifest_path);

    if (manifest_get(kv, "format", manifest_path) != "cbt-dataset-1") {
        throw DataError(manifest_path + ": unsupported format " + kv.at("format"));
    }

    static const char* known[] = {
        "format",     "name",           "texture_freq",   "viewpoint",   "resolution_scale",
        "palette.0",  "palette.1",      "palette.2",      "object_density", "seed",
        "tile_size",  "num_classes",    "count.unlabeled", "count.train", "count.val",
        "count.test", "file.unlabeled", "file.train",     "file.val",    "file.test",
        "sha256.unlabeled", "sha256.train", "sha256.val", "sha256.test"};
    for (const auto& [key, value] : kv) {
        (void)value;
        bool ok = false;
        for (const char* k : known) {
            if (key == k) ok = true;
        }
        if (!ok) throw DataError(manifest_path + ": unknown key " + key);
    }

    TaskDataset d;
    d.domain.name = manifest_get(kv, "name", manifest_path);
    d.domain.texture_freq = parse_double(manifest_get(kv, "texture_freq", manifest_path), "texture_freq");
    d.domain.viewpoint = viewpoint_from_string(manifest_get(kv, "viewpoint", manifest_path));
    d.domain.resolution_scale =
        parse_double(manifest_get(kv, "resolution_scale", manifest_path), "resolution_scale");
    for (int i = 0; i < 3; ++i) {
        const std::string key = "palette." + std::to_string(i);
        d.domain.palette[static_cast<std::size_t>(i)] = parse_rgb(manifest_get(kv, key, manifest_path), key);
    }
    d.domain.object_density =
        parse_double(manifest_get(kv, "object_density", manifest_path), "object_density");
    d.domain.seed = static_cast<std::uint64_t>(parse_int(manifest_get(kv, "seed", manifest_path), "seed"));
    d.tile_size = static_cast<int>(parse_int(manifest_get(kv, "tile_size", manifest_path), "tile_size"));
    d.num_classes = static_cast<int>(parse_int(manifest_get(kv, "num_classes", manifest_path), "num_classes"));
    if (d.num_classes != kNumClasses) {
        throw DataError(manifest_path + ": unsupported num_classes " + std::to_string(d.num_classes));
    }
    d.domain.validate();
    d.counts.unlabeled = static_cast<int>(parse_int(manifest_get(kv, "count.unlabeled", manifest_path), "count.unlabeled"));
    d.counts.train = static_cast<int>(parse_int(manifest_get(kv, "count.train", manifest_path), "count.train"));
    d.counts.val = static_cast<int>(parse_int(manifest_get(kv, "count.val", manifest_path), "count.val"));
    d.counts.test = static_cast<int>(parse_int(manifest_get(kv, "count.test", manifest_path), "count.test"));
    d.counts.validate();

    Container containers[4];
    for (int i = 0; i < 4; ++i) {
        const std::string split = kSplitNames[i];
        const std::string file = manifest_get(kv, "file." + split, manifest_path);
        const std::string want = manifest_get(kv, "sha256." + split, manifest_path);
        const std::string path = dir + "/" + file;
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open " + path);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (in.bad()) throw DataError("failed reading " + path);
        const std::string got = sha256_hex(bytes);
        if (got != want) {
            throw ChecksumError(path + ": checksum mismatch (manifest " + want + ", file " + got + ")");
        }
        containers[i] = container_from_bytes(bytes, path);
    }

    const std::string unl_path = dir + "/" + manifest_get(kv, "file.unlabeled", manifest_path);
    if (containers[0].config_value("split") != "unlabeled") {
        throw DataError(unl_path + ": expected split unlabeled");
    }
    const std::int64_t unl_count = parse_int(containers[0].config_value("count"), "count");
    if (unl_count != d.counts.unlabeled) {
        throw DataError(unl_path + ": tile count mismatch with manifest");
    }
    for (int i = 0; i < unl_count; ++i) {
        Tensor img = containers[0].tensor("tile." + std::to_string(i));
        if (img.rank() != 3 || img.dim(0) != 3 || img.dim(1) != d.tile_size || img.dim(2) != d.tile_size) {
            throw DataError(unl_path + ": tile " + std::to_string(i) + " has shape " +
                            shape_to_string(img.shape()));
        }
        d.unlabeled.images.push_back(std::move(img));
        d.unlabeled.ids.push_back(tile_id(d.domain, i));
    }

    d.train = tiles_from_container(containers[1], "train", d.counts.train, d.tile_size, d.num_classes,
                                   dir + "/train.cbt");
    d.val = tiles_from_container(containers[2], "val", d.counts.val, d.tile_size, d.num_classes,
                                 dir + "/val.cbt");
    d.test = EvalOnlySplit(tiles_from_container(containers[3], "test", d.counts.test, d.tile_size,
                                                d.num_classes, dir + "/test.cbt"));
    return d;
}

}  // namespace cbt
