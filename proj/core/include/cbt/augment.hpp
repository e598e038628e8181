#pragma once

#include <cstdint>
#include <vector>

#include "cbt/tensor.hpp"

namespace cbt {

/// Stochastic view pipeline settings. Identity ranges (flip 0, noise 0,
/// brightness 0, contrast (1,1), crop (1,1)) make the pipeline the exact
/// identity map.
struct AugmentConfig {
    double flip_prob = 0.5;
    double noise_sigma = 0.05;
    double brightness_delta = 0.1;
    double contrast_lo = 0.9;
    double contrast_hi = 1.1;
    double crop_lo = 0.6;
    double crop_hi = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
    static AugmentConfig identity(std::uint64_t seed);
    bool operator==(const AugmentConfig&) const = default;
};

/// Two augmented views of one image batch.
struct ViewPair {
    Tensor view_a;  // [B.C.H.W]
    Tensor view_b;
    std::vector<std::uint64_t> source_ids;
};

/// Images with stable per-sample identifiers; the identifiers key the
/// augmentation substreams, so they must survive shuffling and task unions.
struct SampleSet {
    std::vector<Tensor> images;  // each [C.H.W]
    std::vector<std::uint64_t> ids;

    std::size_t size() const { return images.size(); }
    bool operator==(const SampleSet&) const = default;
};

/// Packs draw coordinates into the single counter that, together with the
/// seed, fully determines every augmentation draw.
std::uint64_t compose_draw_index(std::uint64_t task_index, int epoch, int batch);

/// One augmented view of a batch. Each sample consumes its own substream
/// keyed by (seed, draw_index, view_id, sample_id); view_id selects the A/B
/// stream. Exposed separately so tests can confirm the streams are disjoint.
Tensor augment_single_view(const Tensor& batch, const AugmentConfig& cfg, std::uint64_t draw_index,
                           int view_id, const std::vector<std::uint64_t>& sample_ids);

/// Two independently augmented views of X. Pure function of
/// (X, cfg, draw_index, sample_ids).
ViewPair make_view_pair(const Tensor& batch, const AugmentConfig& cfg, std::uint64_t draw_index,
                        const std::vector<std::uint64_t>& sample_ids);
ViewPair make_view_pair(const Tensor& batch, const AugmentConfig& cfg, std::uint64_t draw_index);

/// Deterministic epoch plan: shuffle keyed by (seed, task_index, epoch),
/// then split into batches of exactly batch_size. A trailing partial batch
/// is dropped, which keeps processed-sample counts at
/// batch_size * floor(n / batch_size) per epoch.
std::vector<std::vector<int>> epoch_batches(int num_samples, int batch_size, std::uint64_t seed,
                                            std::uint64_t task_index, int epoch);

/// Stacks selected [C.H.W] tiles into one [B.C.H.W] batch.
Tensor stack_images(const SampleSet& set, const std::vector<int>& indices);

/// Per-epoch batch sequence with augmentation: shuffled, fixed order,
/// replayable from (shuffle_seed, task_index, epoch) for the partition and
/// (cfg.seed, draw_index, sample ids) for the pixel draws.
class AugmentationStream {
public:
    AugmentationStream(const SampleSet& set, const AugmentConfig& cfg, int batch_size,
                       std::uint64_t shuffle_seed, std::uint64_t task_index, int epoch);

    struct Batch {
        Tensor images;
        ViewPair views;
        std::uint64_t draw_index = 0;
        std::vector<int> sample_indices;
    };

    int batch_count() const { return static_cast<int>(plan_.size()); }
    Batch batch(int b) const;

private:
    const SampleSet* set_;
    AugmentConfig cfg_;
    std::uint64_t task_index_;
    int epoch_;
    std::vector<std::vector<int>> plan_;
};

}  // namespace cbt
