#include "cbt/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cbt/error.hpp"
#include "cbt/rng.hpp"

namespace cbt {

namespace {

constexpr std::uint64_t kShuffleSalt = 0x5348464cull;  // "SHFL"

struct CropWindow {
    int y0, x0, ch, cw;
    bool is_identity(int h, int w) const { return y0 == 0 && x0 == 0 && ch == h && cw == w; }
};

}  // namespace

void AugmentConfig::validate() const {
    if (flip_prob < 0.0 || flip_prob > 1.0) throw ConfigError("augment: flip_prob must lie in [0,1]");
    if (noise_sigma < 0.0) throw ConfigError("augment: noise_sigma must be >= 0");
    if (brightness_delta < 0.0) throw ConfigError("augment: brightness_delta must be >= 0");
    if (!(contrast_lo > 0.0 && contrast_lo <= 1.0 && contrast_hi >= 1.0)) {
        throw ConfigError("augment: contrast range must satisfy 0 < lo <= 1 <= hi");
    }
    if (!(crop_lo > 0.0 && crop_lo <= crop_hi && crop_hi <= 1.0)) {
        throw ConfigError("augment: crop scale range must be an ordered subset of (0,1]");
    }
}

AugmentConfig AugmentConfig::identity(std::uint64_t seed) {
    AugmentConfig cfg;
    cfg.flip_prob = 0.0;
    cfg.noise_sigma = 0.0;
    cfg.brightness_delta = 0.0;
    cfg.contrast_lo = cfg.contrast_hi = 1.0;
    cfg.crop_lo = cfg.crop_hi = 1.0;
    cfg.seed = seed;
    return cfg;
}

std::uint64_t compose_draw_index(std::uint64_t task_index, int epoch, int batch) {
    return (task_index << 40) | (static_cast<std::uint64_t>(epoch) << 20) |
           static_cast<std::uint64_t>(batch);
}

Tensor augment_single_view(const Tensor& batch, const AugmentConfig& cfg, std::uint64_t draw_index,
                           int view_id, const std::vector<std::uint64_t>& sample_ids) {
    cfg.validate();
    if (batch.rank() != 4) throw ConfigError("augment: expected [B.C.H.W] batch, got " + shape_to_string(batch.shape()));
    const int B = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
    if (cfg.crop_lo < 1.0 && (H < 8 || W < 8)) {
        throw DataError("augment: cropping needs at least 8x8 images, got " + shape_to_string(batch.shape()));
    }
    if (static_cast<int>(sample_ids.size()) != B) throw ConfigError("augment: sample_ids size mismatch");
    batch.check_finite("augment input");

    Tensor out(batch.shape());
    for (int s = 0; s < B; ++s) {
        Rng rng(Rng::key({cfg.seed, draw_index, static_cast<std::uint64_t>(view_id), sample_ids[static_cast<std::size_t>(s)]}));
        // Fixed draw order per sample; the stream never leaks across samples
        // or views, so per-sample work is replayable in isolation.
        const double u_flip = rng.uniform01();
        const double crop_scale = rng.uniform(cfg.crop_lo, cfg.crop_hi);
        const double u_y = rng.uniform01();
        const double u_x = rng.uniform01();
        const double brightness = rng.uniform(-cfg.brightness_delta, cfg.brightness_delta);
        const double contrast = rng.uniform(cfg.contrast_lo, cfg.contrast_hi);
        const bool flip = u_flip < cfg.flip_prob;

        CropWindow win;
        win.ch = std::clamp(static_cast<int>(std::lround(H * crop_scale)), 1, H);
        win.cw = std::clamp(static_cast<int>(std::lround(W * crop_scale)), 1, W);
        win.y0 = std::min(static_cast<int>(u_y * (H - win.ch + 1)), H - win.ch);
        win.x0 = std::min(static_cast<int>(u_x * (W - win.cw + 1)), W - win.cw);

        for (int c = 0; c < C; ++c) {
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    int sx = x;
                    if (flip) sx = W - 1 - x;
                    double v;
                    if (win.is_identity(H, W)) {
                        v = batch.at(s, c, y, sx);
                    } else {
                        // Nearest-neighbor resample of the crop window back
                        // to full size; exact when the window is the image.
                        const int cy = win.y0 + std::min(win.ch - 1, y * win.ch / H);
                        const int cx = win.x0 + std::min(win.cw - 1, sx * win.cw / W);
                        v = batch.at(s, c, cy, cx);
                    }
                    if (contrast != 1.0) v = (v - 0.5) * contrast + 0.5;
                    if (brightness != 0.0) v += brightness;
                    out.at(s, c, y, x) = v;
                }
            }
        }
        if (cfg.noise_sigma > 0.0) {
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) out.at(s, c, y, x) += cfg.noise_sigma * rng.normal();
        }
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) out.at(s, c, y, x) = std::clamp(out.at(s, c, y, x), 0.0, 1.0);
    }
    return out;
}

ViewPair make_view_pair(const Tensor& batch, const AugmentConfig& cfg, std::uint64_t draw_index,
                        const std::vector<std::uint64_t>& sample_ids) {
    ViewPair pair;
    pair.view_a = augment_single_view(batch, cfg, draw_index, 0, sample_ids);
    pair.view_b = augment_single_view(batch, cfg, draw_index, 1, sample_ids);
    pair.source_ids = sample_ids;
    return pair;
}

ViewPair make_view_pair(const Tensor& batch, const AugmentConfig& cfg, std::uint64_t draw_index) {
    std::vector<std::uint64_t> ids(static_cast<std::size_t>(batch.dim(0)));
    std::iota(ids.begin(), ids.end(), 0);
    return make_view_pair(batch, cfg, draw_index, ids);
}

std::vector<std::vector<int>> epoch_batches(int num_samples, int batch_size, std::uint64_t seed,
                                            std::uint64_t task_index, int epoch) {
    if (batch_size < 2) throw ConfigError("epoch_batches: batch size must be >= 2 for cross-correlation");
    if (num_samples <= 0) throw DataError("epoch_batches: empty dataset");
    std::vector<int> order(static_cast<std::size_t>(num_samples));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(Rng::key({seed, task_index, static_cast<std::uint64_t>(epoch), kShuffleSalt}));
    rng.shuffle(order);

    std::vector<std::vector<int>> batches;
    const int full = num_samples / batch_size;
    batches.reserve(static_cast<std::size_t>(full));
    for (int b = 0; b < full; ++b) {
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b) * batch_size,
                             order.begin() + static_cast<std::ptrdiff_t>(b + 1) * batch_size);
    }
    return batches;
}

Tensor stack_images(const SampleSet& set, const std::vector<int>& indices) {
    if (indices.empty()) throw DataError("stack_images: empty batch");
    const Tensor& first = set.images[static_cast<std::size_t>(indices[0])];
    if (first.rank() != 3) throw ConfigError("stack_images: tiles must be [C.H.W]");
    const int C = first.dim(0), H = first.dim(1), W = first.dim(2);
    Tensor out({static_cast<int>(indices.size()), C, H, W});
    for (std::size_t s = 0; s < indices.size(); ++s) {
        const Tensor& img = set.images[static_cast<std::size_t>(indices[s])];
        if (!img.same_shape(first)) throw DataError("stack_images: inconsistent tile shapes");
        std::copy(img.data(), img.data() + img.size(),
                  out.data() + static_cast<std::int64_t>(s) * img.size());
    }
    return out;
}

AugmentationStream::AugmentationStream(const SampleSet& set, const AugmentConfig& cfg, int batch_size,
                                       std::uint64_t shuffle_seed, std::uint64_t task_index, int epoch)
    : set_(&set), cfg_(cfg), task_index_(task_index), epoch_(epoch) {
    if (set.images.size() != set.ids.size()) throw ConfigError("augmentation stream: ids/images size mismatch");
    plan_ = epoch_batches(static_cast<int>(set.size()), batch_size, shuffle_seed, task_index, epoch);
}

AugmentationStream::Batch AugmentationStream::batch(int b) const {
    const auto& indices = plan_[static_cast<std::size_t>(b)];
    Batch out;
    out.sample_indices = indices;
    out.draw_index = compose_draw_index(task_index_, epoch_, b);
    out.images = stack_images(*set_, indices);
    std::vector<std::uint64_t> ids;
    ids.reserve(indices.size());
    for (int i : indices) ids.push_back(set_->ids[static_cast<std::size_t>(i)]);
    out.views = make_view_pair(out.images, cfg_, out.draw_index, ids);
    return out;
}

}  // namespace cbt
