#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cbt/augment.hpp"
#include "cbt/tensor.hpp"

namespace cbt {

enum class Viewpoint { nadir, oblique };
std::string to_string(Viewpoint v);
Viewpoint viewpoint_from_string(const std::string& s);

using Rgb = std::array<double, 3>;

/// A synthetic imaging domain. Tiles are procedural background texture at
/// texture_freq with palette-colored rectangles and blobs painted on top.
///
/// Per tile, two independent substreams are consumed:
///   geometry: key (seed, geometry salt, tile index), draws per object
///             [shape u01, center y, center x, extents], classes cycling
///             1,2,3 in paint order (later objects occlude earlier);
///   texture:  key (seed, texture salt, tile index), draws wave angle and
///             two phases, then one normal per pixel in row-major order.
/// Masks depend only on the geometry stream, so label rasterization is
/// replayable without touching the image path.
struct DomainSpec {
    std::string name;
    double texture_freq = 4.0;        // cycles per tile, > 0
    Viewpoint viewpoint = Viewpoint::nadir;
    double resolution_scale = 1.0;    // in (0, 1]; < 1 degrades the image only
    std::array<Rgb, 3> palette{{{0.8, 0.2, 0.2}, {0.2, 0.8, 0.2}, {0.2, 0.2, 0.8}}};
    double object_density = 3.0;      // objects per tile, rounded to nearest
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const DomainSpec&) const = default;
};

struct TaskCounts {
    int unlabeled = 96;
    int train = 64;
    int val = 16;
    int test = 32;

    void validate() const;
    int total() const { return unlabeled + train + val + test; }
    bool operator==(const TaskCounts&) const = default;
};

inline constexpr int kNumClasses = 4;  // background plus three object classes

struct LabeledTile {
    Tensor image;    // [3.H.W], values in [0, 1]
    LabelMask mask;  // class ids in [0, kNumClasses)

    bool operator==(const LabeledTile&) const = default;
};

/// Test tiles whose labels are only reachable through the evaluation
/// visitor, so training code cannot read them by accident.
class EvalOnlySplit {
public:
    EvalOnlySplit() = default;
    explicit EvalOnlySplit(std::vector<LabeledTile> tiles) : tiles_(std::move(tiles)) {}

    std::size_t size() const { return tiles_.size(); }
    const Tensor& image(std::size_t i) const;
    void evaluate(const std::function<void(const Tensor& image, const LabelMask& mask)>& visit) const;

    bool operator==(const EvalOnlySplit&) const = default;

private:
    std::vector<LabeledTile> tiles_;
};

struct TaskDataset {
    DomainSpec domain;
    int tile_size = 32;
    int num_classes = kNumClasses;
    TaskCounts counts;
    SampleSet unlabeled;
    std::vector<LabeledTile> train;
    std::vector<LabeledTile> val;
    EvalOnlySplit test;

    bool operator==(const TaskDataset&) const = default;
};

/// Stable identifier of tile `index` in the population of `spec`; keys the
/// augmentation substream of that tile and survives task unions.
std::uint64_t tile_id(const DomainSpec& spec, int index);

/// Renders one labeled tile. Tile indices go [0, counts.total()):
/// unlabeled first, then train, val, test.
LabeledTile render_tile(const DomainSpec& spec, int tile_size, int tile_index);

/// Deterministic dataset: same spec and counts give bitwise-identical
/// output. tile_size must be at least 16 and divisible by 4.
TaskDataset generate_task(const DomainSpec& spec, const TaskCounts& counts, int tile_size = 32);

/// Mean per-tile feature vector used by the divergence score:
/// channel means, horizontal and vertical gradient energy, luma spread.
std::array<double, 6> tile_features(const Tensor& image);

/// Distribution-shift score over unlabeled tiles: mean cross-task pairwise
/// feature distance minus the mean within-task distance, clamped at zero.
/// Symmetric exactly (the pair is ordered by domain name before summing).
double domain_divergence(const TaskDataset& a, const TaskDataset& b);

/// Keeps floor(fraction * train size) training tiles, chosen as a prefix of
/// one seeded shuffle, so smaller fractions nest inside larger ones.
/// Validation, test, and unlabeled data pass through untouched.
TaskDataset label_fraction_view(const TaskDataset& d, double fraction, std::uint64_t seed);

DomainSpec satelloid_domain();
DomainSpec droneoid_domain();
DomainSpec aerialoid_domain();
std::vector<DomainSpec> default_suite();

/// Directory layout: manifest.txt (key=value spec, counts, per-file
/// sha-256) plus one container per split. load verifies every checksum and
/// throws ChecksumError on mismatch.
void save_task_dataset(const TaskDataset& d, const std::string& dir);
TaskDataset load_task_dataset(const std::string& dir);

}  // namespace cbt
