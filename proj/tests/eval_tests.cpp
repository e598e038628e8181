#include "cbt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "cbt/error.hpp"
#include "cbt/rng.hpp"
#include "doctest.h"

using namespace cbt;

namespace {

LabelMask make_mask(int h, int w, std::vector<std::int32_t> ids) {
    LabelMask m;
    m.height = h;
    m.width = w;
    m.ids = std::move(ids);
    return m;
}

LabelMask random_mask(int h, int w, int num_classes, Rng& rng) {
    LabelMask m;
    m.height = h;
    m.width = w;
    m.ids.resize(static_cast<std::size_t>(h) * w);
    for (auto& id : m.ids) id = static_cast<std::int32_t>(rng.below(num_classes));
    return m;
}

// Recomputes every score by direct per-pixel scans, never touching the
// confusion matrix. Accumulation order over classes matches metrics_from_
// confusion, so agreement is exact, not approximate.
SegMetrics counted_metrics(const LabelMask& pred, const LabelMask& truth, int k) {
    SegMetrics out;
    out.num_classes = k;
    std::int64_t agree = 0;
    for (std::size_t i = 0; i < pred.ids.size(); ++i) agree += pred.ids[i] == truth.ids[i];
    out.oa = static_cast<double>(agree) / static_cast<double>(pred.ids.size());
    double iou_sum = 0.0, f1_sum = 0.0;
    int present = 0;
    out.per_class_iou.assign(static_cast<std::size_t>(k), -1.0);
    for (int c = 0; c < k; ++c) {
        std::int64_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < pred.ids.size(); ++i) {
            const bool in_pred = pred.ids[i] == c, in_truth = truth.ids[i] == c;
            tp += in_pred && in_truth;
            fp += in_pred && !in_truth;
            fn += !in_pred && in_truth;
        }
        if (tp + fp + fn == 0) continue;
        const double iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
        out.per_class_iou[static_cast<std::size_t>(c)] = iou;
        iou_sum += iou;
        f1_sum += static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
        ++present;
    }
    out.miou = iou_sum / present;
    out.f1 = f1_sum / present;
    return out;
}

Tensor random_prob_rows(int n, int k, Rng& rng) {
    Tensor logits({n, k});
    for (std::int64_t i = 0; i < logits.size(); ++i) logits[i] = rng.normal();
    GradTape t;
    return t.value(t.rows_softmax(t.constant(logits)));
}

TaskDataset probe_dataset() {
    DomainSpec spec = droneoid_domain();
    spec.seed = 515;
    TaskCounts counts;
    counts.unlabeled = 4;
    counts.train = 12;
    counts.val = 2;
    counts.test = 6;
    return generate_task(spec, counts, 16);
}

EncoderConfig probe_encoder() {
    EncoderConfig cfg;
    cfg.input_shape = {3, 16, 16};
    cfg.kind = EncoderKind::tinyconv;
    cfg.hidden_widths = {4, 6};
    cfg.embed_dim = 5;
    cfg.projector_widths = {8};
    cfg.init_seed = 77;
    return cfg;
}

}  // namespace

TEST_CASE("confusion matrix counts truth rows against prediction columns") {
    LabelMask truth = make_mask(2, 2, {0, 0, 1, 1});
    LabelMask pred = make_mask(2, 2, {0, 1, 1, 1});
    auto conf = confusion_matrix(pred, truth, 2);
    CHECK(conf == std::vector<std::int64_t>{1, 1, 0, 2});

    SegMetrics m = metrics_from_confusion(conf, 2);
    CHECK(m.oa == 0.75);
    CHECK(m.miou == doctest::Approx(7.0 / 12.0).epsilon(1e-12));
    CHECK(m.f1 == doctest::Approx(11.0 / 15.0).epsilon(1e-12));
    CHECK(m.per_class_iou[0] == 0.5);
    CHECK(m.per_class_iou[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("metrics agree exactly with a per-pixel counting oracle") {
    Rng rng(Rng::key({0xc0117, 1}));
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(4));
        const int h = 3 + static_cast<int>(rng.below(6));
        const int w = 3 + static_cast<int>(rng.below(6));
        LabelMask truth = random_mask(h, w, k, rng);
        LabelMask pred = random_mask(h, w, k, rng);
        SegMetrics got = compute_metrics(pred, truth, k);
        SegMetrics want = counted_metrics(pred, truth, k);
        CHECK(got.oa == want.oa);
        CHECK(got.miou == want.miou);
        CHECK(got.f1 == want.f1);
        CHECK(got.per_class_iou == want.per_class_iou);
    }
}

TEST_CASE("class absent from both sides is excluded, unpredicted class counts as zero") {
    // Class 2 never occurs; class 1 is in the truth but never predicted.
    LabelMask truth = make_mask(1, 4, {0, 0, 1, 1});
    LabelMask pred = make_mask(1, 4, {0, 0, 0, 0});
    SegMetrics m = compute_metrics(pred, truth, 3);
    CHECK(m.per_class_iou[0] == 0.5);
    CHECK(m.per_class_iou[1] == 0.0);
    CHECK(m.per_class_iou[2] == -1.0);
    CHECK(m.miou == 0.25);
    CHECK(m.oa == 0.5);
}

TEST_CASE("perfect prediction scores ones across the board") {
    Rng rng(Rng::key({0xc0117, 2}));
    LabelMask truth = random_mask(5, 7, 4, rng);
    SegMetrics m = compute_metrics(truth, truth, 4);
    CHECK(m.oa == 1.0);
    CHECK(m.miou == 1.0);
    CHECK(m.f1 == 1.0);
}

TEST_CASE("metric input validation") {
    LabelMask a = make_mask(2, 2, {0, 0, 1, 1});
    LabelMask b = make_mask(2, 3, {0, 0, 1, 1, 0, 0});
    CHECK_THROWS_AS(confusion_matrix(a, b, 2), DataError);
    LabelMask big = make_mask(2, 2, {0, 0, 5, 1});
    CHECK_THROWS_AS(confusion_matrix(big, a, 2), DataError);
    CHECK_THROWS_AS(confusion_matrix(a, big, 2), DataError);
    CHECK_THROWS_AS(metrics_from_confusion({1, 2, 3}, 2), DataError);
    CHECK_THROWS_AS(metrics_from_confusion({0, 0, 0, 0}, 2), DataError);
}

TEST_CASE("one-hot rows follow nchw_to_rows pixel order") {
    LabelMask m0 = make_mask(2, 2, {0, 1, 2, 0});
    LabelMask m1 = make_mask(2, 2, {2, 2, 1, 1});
    Tensor oh = one_hot_rows({m0, m1}, 3);
    REQUIRE(oh.shape() == Shape{8, 3});
    // Row (b*H + y)*W + x mirrors the flattening nchw_to_rows applies.
    const std::vector<int> expect{0, 1, 2, 0, 2, 2, 1, 1};
    for (int r = 0; r < 8; ++r) {
        for (int k = 0; k < 3; ++k) CHECK(oh.at(r, k) == (k == expect[static_cast<std::size_t>(r)] ? 1.0 : 0.0));
    }
    CHECK_THROWS_AS(one_hot_rows({make_mask(1, 1, {3})}, 3), DataError);
    CHECK_THROWS_AS(one_hot_rows({make_mask(1, 1, {-1})}, 3), DataError);
}

TEST_CASE("jaccard loss worked value for uniform probabilities") {
    // Two classes, four pixels all class 0, probabilities 1/2 everywhere:
    // class 0 scores (2+1)/(2+4-2+1) = 3/5, class 1 scores (0+1)/(2+0-0+1)
    // = 1/3, so the loss is 1 - (3/5 + 1/3)/2 = 8/15.
    Tensor probs = Tensor::full({1, 2, 2, 2}, 0.5);
    LabelMask mask = make_mask(2, 2, {0, 0, 0, 0});
    CHECK(jaccard_loss(probs, {mask}) == doctest::Approx(8.0 / 15.0).epsilon(1e-12));
}

TEST_CASE("jaccard loss is exactly zero on one-hot agreement") {
    Rng rng(Rng::key({0xc0117, 3}));
    for (int trial = 0; trial < 5; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(3));
        LabelMask mask = random_mask(4, 4, k, rng);
        Tensor probs({2, k, 4, 4});
        std::vector<LabelMask> masks{mask, mask};
        for (int b = 0; b < 2; ++b) {
            for (int y = 0; y < 4; ++y) {
                for (int x = 0; x < 4; ++x) {
                    probs.at(b, static_cast<int>(mask.at(y, x)), y, x) = 1.0;
                }
            }
        }
        CHECK(jaccard_loss(probs, masks) == 0.0);
    }
}

TEST_CASE("jaccard loss stays inside [0, 1) for random simplex inputs") {
    Rng rng(Rng::key({0xc0117, 4}));
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(4));
        const int h = 2 + static_cast<int>(rng.below(4));
        const int w = 2 + static_cast<int>(rng.below(4));
        Tensor rows = random_prob_rows(h * w, k, rng);
        Tensor probs({1, k, h, w});
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                for (int c = 0; c < k; ++c) probs.at(0, c, y, x) = rows.at(y * w + x, c);
            }
        }
        const double loss = jaccard_loss(probs, {random_mask(h, w, k, rng)});
        CHECK(loss >= 0.0);
        CHECK(loss < 1.0);
    }
}

TEST_CASE("jaccard loss is invariant to a shared pixel permutation") {
    Rng rng(Rng::key({0xc0117, 5}));
    const int n = 24, k = 3;
    Tensor rows = random_prob_rows(n, k, rng);
    LabelMask mask = random_mask(4, 6, k, rng);
    Tensor oh = one_hot_rows({mask}, k);

    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    rng.shuffle(perm);
    Tensor rows_p({n, k}), oh_p({n, k});
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < k; ++c) {
            rows_p.at(r, c) = rows.at(perm[static_cast<std::size_t>(r)], c);
            oh_p.at(r, c) = oh.at(perm[static_cast<std::size_t>(r)], c);
        }
    }
    GradTape t;
    const double base = t.scalar(jaccard_loss_graph(t, t.constant(rows), oh));
    GradTape t2;
    const double permuted = t2.scalar(jaccard_loss_graph(t2, t2.constant(rows_p), oh_p));
    CHECK(base == doctest::Approx(permuted).epsilon(1e-12));
}

TEST_CASE("jaccard gradient matches central finite differences") {
    Rng rng(Rng::key({0xc0117, 6}));
    for (int trial = 0; trial < 3; ++trial) {
        const int n = 6 + 4 * trial, k = 2 + trial;
        Tensor probs = random_prob_rows(n, k, rng);
        LabelMask mask = random_mask(1, n, k, rng);
        Tensor oh = one_hot_rows({mask}, k);
        ParameterVector params;
        params.add("probs", probs);
        auto fn = [&](GradTape& t, const BoundParams& p) {
            return jaccard_loss_graph(t, p["probs"], oh);
        };
        auto [loss, grads] = value_and_grad(fn, params);
        CHECK(loss > 0.0);
        const double h = 1e-4;
        double err_sum = 0.0, ref_sum = 0.0;
        for (std::int64_t i = 0; i < params.total_len(); ++i) {
            const double orig = params.flat_get(i);
            params.flat_set(i, orig + h);
            const double up = eval_loss(fn, params);
            params.flat_set(i, orig - h);
            const double dn = eval_loss(fn, params);
            params.flat_set(i, orig);
            const double fd = (up - dn) / (2.0 * h);
            err_sum += std::abs(fd - grads.flat_get(i));
            ref_sum += std::abs(fd);
        }
        CHECK(err_sum / std::max(ref_sum, 1e-12) < 1e-4);
    }
}

TEST_CASE("seg head init is deterministic with zero biases") {
    SegHead a = init_seg_head(6, 5, 4, 99);
    SegHead b = init_seg_head(6, 5, 4, 99);
    CHECK(a == b);
    CHECK(a.params.named("head.0.weight").shape() == Shape{6, 5});
    CHECK(a.params.named("head.1.weight").shape() == Shape{5, 4});
    for (std::int64_t i = 0; i < a.params.named("head.0.bias").size(); ++i) {
        CHECK(a.params.named("head.0.bias")[i] == 0.0);
    }
    SegHead c = init_seg_head(6, 5, 4, 100);
    CHECK(c.params.named("head.0.weight")[0] != a.params.named("head.0.weight")[0]);
    CHECK_THROWS_AS(init_seg_head(0, 5, 4, 0), ConfigError);
    CHECK_THROWS_AS(init_seg_head(6, 5, 1, 0), ConfigError);
}

TEST_CASE("seg head emits simplex rows") {
    Rng rng(Rng::key({0xc0117, 7}));
    SegHead head = init_seg_head(6, 5, 4, 3);
    Tensor rows({10, 6});
    for (std::int64_t i = 0; i < rows.size(); ++i) rows[i] = rng.normal();
    GradTape t;
    BoundParams p = BoundParams::bind(t, head.params);
    const Tensor& probs = t.value(seg_head_probs_graph(t, p, head, t.constant(rows)));
    REQUIRE(probs.shape() == Shape{10, 4});
    for (int r = 0; r < 10; ++r) {
        double sum = 0.0;
        for (int c = 0; c < 4; ++c) {
            CHECK(probs.at(r, c) > 0.0);
            sum += probs.at(r, c);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("predict_masks breaks ties toward the lowest class id") {
    // Zero head weights give uniform probabilities on every pixel.
    EncoderConfig cfg = probe_encoder();
    ParameterVector enc = init_params(cfg);
    SegHead head = init_seg_head(cfg.trunk_out_dim(), 4, 3, 5);
    for (int i = 0; i < head.params.entry_count(); ++i) {
        Tensor& w = head.params.tensor(i);
        for (std::int64_t j = 0; j < w.size(); ++j) w[j] = 0.0;
    }
    Tensor images({2, 3, 16, 16});
    std::vector<LabelMask> masks = predict_masks(enc, cfg, head, images);
    REQUIRE(masks.size() == 2);
    for (const LabelMask& m : masks) {
        CHECK(m.height == 16);
        CHECK(m.width == 16);
        for (auto id : m.ids) CHECK(id == 0);
    }
}

TEST_CASE("frozen probe is deterministic and leaves the encoder untouched") {
    TaskDataset data = probe_dataset();
    EncoderConfig cfg = probe_encoder();
    ParameterVector enc = init_params(cfg);
    ProbeConfig pc;
    pc.head_hidden = 8;
    pc.epochs = 3;
    pc.batch_size = 4;
    pc.seed = 21;

    ProbeResult a = train_probe(enc, cfg, data, 1.0, ProbeMode::frozen, pc);
    ProbeResult b = train_probe(enc, cfg, data, 1.0, ProbeMode::frozen, pc);
    CHECK(a.head == b.head);
    CHECK(a.test.oa == b.test.oa);
    CHECK(a.test.miou == b.test.miou);
    CHECK(a.epoch_losses == b.epoch_losses);
    CHECK(a.encoder_params == enc);
    REQUIRE(a.epoch_losses.size() == 3);
    CHECK(static_cast<int>(a.test.confusion.size()) == data.num_classes * data.num_classes);
}

TEST_CASE("probe training reduces the jaccard loss") {
    TaskDataset data = probe_dataset();
    EncoderConfig cfg = probe_encoder();
    ParameterVector enc = init_params(cfg);
    ProbeConfig pc;
    pc.head_hidden = 8;
    pc.epochs = 8;
    pc.batch_size = 4;
    pc.seed = 22;
    ProbeResult r = train_probe(enc, cfg, data, 1.0, ProbeMode::frozen, pc);
    CHECK(r.epoch_losses.back() < r.epoch_losses.front());
}

TEST_CASE("finetune updates the trunk but never the projector") {
    TaskDataset data = probe_dataset();
    EncoderConfig cfg = probe_encoder();
    ParameterVector enc = init_params(cfg);
    ProbeConfig pc;
    pc.head_hidden = 8;
    pc.epochs = 2;
    pc.batch_size = 4;
    pc.seed = 23;
    ProbeResult r = train_probe(enc, cfg, data, 1.0, ProbeMode::finetune, pc);

    bool trunk_changed = false;
    for (int i = 0; i < enc.entry_count(); ++i) {
        const ParamEntry& before = enc.entry(i);
        const Tensor& after = r.encoder_params.named(before.name);
        if (before.name.rfind("projector.", 0) == 0) {
            CHECK(after == before.tensor);
        } else if (!(after == before.tensor)) {
            trunk_changed = true;
        }
    }
    CHECK(trunk_changed);
}

TEST_CASE("label fraction shrinks the probe training set deterministically") {
    TaskDataset data = probe_dataset();
    EncoderConfig cfg = probe_encoder();
    ParameterVector enc = init_params(cfg);
    ProbeConfig pc;
    pc.head_hidden = 8;
    pc.epochs = 2;
    pc.batch_size = 4;
    pc.seed = 24;
    ProbeResult half = train_probe(enc, cfg, data, 0.5, ProbeMode::frozen, pc);
    ProbeResult half2 = train_probe(enc, cfg, data, 0.5, ProbeMode::frozen, pc);
    CHECK(half.head == half2.head);
    CHECK_THROWS_AS(train_probe(enc, cfg, data, 0.01, ProbeMode::frozen, pc), DataError);
}

TEST_CASE("probe rejects mismatched encoders and bad configs") {
    TaskDataset data = probe_dataset();
    EncoderConfig cfg = probe_encoder();
    ParameterVector enc = init_params(cfg);
    ProbeConfig pc;

    EncoderConfig other = cfg;
    other.hidden_widths = {4, 8};
    CHECK_THROWS_AS(train_probe(init_params(other), cfg, data, 1.0, ProbeMode::frozen, pc),
                    ConfigError);
    ProbeConfig bad = pc;
    bad.epochs = 0;
    CHECK_THROWS_AS(train_probe(enc, cfg, data, 1.0, ProbeMode::frozen, bad), ConfigError);
    CHECK_THROWS_AS(probe_mode_from_string("linear"), ConfigError);
    CHECK(probe_mode_from_string("frozen") == ProbeMode::frozen);
    CHECK(to_string(ProbeMode::finetune) == "finetune");
}

TEST_CASE("forgetting report compares own-end scores against final scores") {
    std::vector<std::vector<double>> scores{
        {0.8},
        {0.6, 0.9},
        {0.5, 0.7, 0.85},
    };
    ForgettingReport r = forgetting_report(scores);
    REQUIRE(r.forgetting.size() == 3);
    CHECK(r.at_own_end == std::vector<double>{0.8, 0.9, 0.85});
    CHECK(r.at_final == std::vector<double>{0.5, 0.7, 0.85});
    CHECK(r.forgetting[0] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(r.forgetting[1] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(r.forgetting[2] == 0.0);

    CHECK(forgetting_report({}).forgetting.empty());
    CHECK_THROWS_AS(forgetting_report({{0.8}, {0.6}}), DataError);
}
