#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

#include "cbt/checkpoint.hpp"
#include "cbt/error.hpp"
#include "cbt/model.hpp"
#include "doctest.h"

using namespace cbt;

namespace {

std::string thrown_message(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "<no exception>";
}

Container sample_container() {
    Container c;
    c.add_tensor("alpha", Tensor({2, 3}, {1.0, -2.5, 3.25, 0.0, 1e300, -0.0}));
    c.add_tensor("beta", Tensor({4}, {0.1, 0.2, 0.3, 0.4}));
    LabelMask m(2, 2);
    m.at(0, 0) = 3;
    m.at(1, 1) = -7;
    c.add_mask("mask", m);
    c.provenance = {"task_a", "task_b"};
    c.set_config("run.seed", "17");
    c.set_config("note", "hello world");
    return c;
}

std::string tmp_path(const char* stem) { return std::string("/tmp/cbt_test_") + stem; }

}  // namespace

TEST_CASE("container byte round trip is exact") {
    const Container c = sample_container();
    const std::string bytes = container_to_bytes(c);
    const Container back = container_from_bytes(bytes, "mem");
    CHECK(back == c);
    // Payload doubles survive bit for bit, including the sign of zero.
    CHECK(std::signbit(back.tensor("alpha").data()[5]));
    CHECK(back.tensor("alpha").data()[4] == 1e300);
}

TEST_CASE("container f32 entries round trip when values are representable") {
    Container c;
    ContainerEntry e;
    e.name = "half";
    e.type = EntryType::f32;
    e.dims = {3};
    e.floats = {0.5, -1.25, 4096.0};
    c.entries.push_back(e);
    const Container back = container_from_bytes(container_to_bytes(c), "mem");
    CHECK(back == c);
}

TEST_CASE("container file round trip") {
    const Container c = sample_container();
    const std::string path = tmp_path("container.cbt");
    write_container(c, path);
    CHECK(read_container(path) == c);
    std::remove(path.c_str());
}

TEST_CASE("container scalar and empty sections") {
    Container c;
    c.add_tensor("s", Tensor({}, {42.0}));  // rank-0 scalar
    const Container back = container_from_bytes(container_to_bytes(c), "mem");
    CHECK(back == c);
    CHECK(back.tensor("s").size() == 1);
    CHECK(back.provenance.empty());
    CHECK(back.config.empty());
}

TEST_CASE("container accessors reject missing names and wrong kinds") {
    const Container c = sample_container();
    CHECK(c.has("alpha"));
    CHECK_FALSE(c.has("gamma"));
    CHECK_THROWS_AS((void)c.find("gamma"), DataError);
    CHECK_THROWS_AS((void)c.tensor("mask"), DataError);
    CHECK_THROWS_AS((void)c.mask("alpha"), DataError);
    CHECK_THROWS_AS((void)c.config_value("absent"), DataError);
    CHECK(c.config_value("run.seed") == "17");

    Container dup = c;
    CHECK_THROWS_AS(dup.add_tensor("alpha", Tensor({1}, {0.0})), ConfigError);
}

TEST_CASE("set_config overwrites in place") {
    Container c;
    c.set_config("k", "1");
    c.set_config("k", "2");
    REQUIRE(c.config.size() == 1);
    CHECK(c.config_value("k") == "2");
}

TEST_CASE("every truncation of a container fails cleanly") {
    const std::string bytes = container_to_bytes(sample_container());
    for (std::size_t len = 0; len < bytes.size(); ++len) {
        CHECK_THROWS_AS((void)container_from_bytes(bytes.substr(0, len), "t"), DataError);
    }
}

TEST_CASE("truncation inside a tensor payload names the tensor") {
    Container c;
    c.add_tensor("theta", Tensor({4}, {1.0, 2.0, 3.0, 4.0}));
    const std::string bytes = container_to_bytes(c);
    // Last 8 bytes are the provenance and config counts; one more byte back
    // lands inside theta's payload.
    const std::string cut = bytes.substr(0, bytes.size() - 9);
    const std::string msg =
        thrown_message([&] { (void)container_from_bytes(cut, "ckpt.cbt"); });
    CHECK(msg.find("truncated") != std::string::npos);
    CHECK(msg.find("tensor theta") != std::string::npos);
    CHECK(msg.find("ckpt.cbt") != std::string::npos);
}

TEST_CASE("corrupt container headers are rejected with specific errors") {
    Container c;
    c.add_tensor("w", Tensor({2}, {1.0, 2.0}));
    const std::string bytes = container_to_bytes(c);

    SUBCASE("bad magic") {
        std::string bad = bytes;
        bad[0] = 'X';
        const std::string msg = thrown_message([&] { (void)container_from_bytes(bad, "f"); });
        CHECK(msg.find("bad container magic") != std::string::npos);
    }
    SUBCASE("unsupported version") {
        std::string bad = bytes;
        bad[4] = 2;
        const std::string msg = thrown_message([&] { (void)container_from_bytes(bad, "f"); });
        CHECK(msg.find("unsupported container version 2") != std::string::npos);
    }
    SUBCASE("implausible entry count") {
        std::string bad = bytes;
        for (int i = 8; i < 12; ++i) bad[i] = static_cast<char>(0xff);
        const std::string msg = thrown_message([&] { (void)container_from_bytes(bad, "f"); });
        CHECK(msg.find("implausible entry count") != std::string::npos);
    }
    SUBCASE("zero-length entry name") {
        std::string bad = bytes;
        for (int i = 12; i < 16; ++i) bad[i] = 0;
        const std::string msg = thrown_message([&] { (void)container_from_bytes(bad, "f"); });
        CHECK(msg.find("name length out of range") != std::string::npos);
    }
    SUBCASE("unknown dtype code") {
        std::string bad = bytes;
        bad[17] = 7;  // magic 4 + version 4 + count 4 + name_len 4 + name 1
        const std::string msg = thrown_message([&] { (void)container_from_bytes(bad, "f"); });
        CHECK(msg.find("unknown dtype code 7") != std::string::npos);
        CHECK(msg.find("tensor w") != std::string::npos);
    }
    SUBCASE("zero dimension") {
        std::string bad = bytes;
        for (int i = 19; i < 23; ++i) bad[i] = 0;  // dims follow dtype and rank
        const std::string msg = thrown_message([&] { (void)container_from_bytes(bad, "f"); });
        CHECK(msg.find("bad dimension in tensor w") != std::string::npos);
    }
    SUBCASE("trailing bytes") {
        const std::string msg =
            thrown_message([&] { (void)container_from_bytes(bytes + "x", "f"); });
        CHECK(msg.find("trailing bytes") != std::string::npos);
    }
}

TEST_CASE("duplicate entry names are rejected on parse") {
    Container c;
    ContainerEntry e;
    e.name = "twin";
    e.type = EntryType::f64;
    e.dims = {1};
    e.floats = {1.0};
    c.entries.push_back(e);
    c.entries.push_back(e);
    const std::string msg =
        thrown_message([&] { (void)container_from_bytes(container_to_bytes(c), "f"); });
    CHECK(msg.find("duplicate entry name twin") != std::string::npos);
}

TEST_CASE("read_container reports unreadable paths") {
    CHECK_THROWS_AS((void)read_container("/tmp/cbt_test_does_not_exist.cbt"), DataError);
}

TEST_CASE("int list codec") {
    CHECK(join_ints({}) == "");
    CHECK(join_ints({3}) == "3");
    CHECK(join_ints({1, -2, 30}) == "1,-2,30");
    CHECK(split_ints("") == std::vector<int>{});
    CHECK(split_ints("3") == std::vector<int>{3});
    CHECK(split_ints("1,-2,30") == std::vector<int>({1, -2, 30}));
    CHECK_THROWS_AS((void)split_ints("1,,2"), DataError);
    CHECK_THROWS_AS((void)split_ints("a"), DataError);
    CHECK_THROWS_AS((void)split_ints("1,2x"), DataError);
}

TEST_CASE("checkpoint round trip restores params, config, and provenance") {
    EncoderConfig cfg;
    cfg.input_shape = {1, 4, 4};
    cfg.kind = EncoderKind::mlp;
    cfg.hidden_widths = {6};
    cfg.embed_dim = 3;
    cfg.projector_widths = {5};
    cfg.init_seed = 9;

    Checkpoint ckpt;
    ckpt.params = init_params(cfg);
    ckpt.encoder_config = cfg;
    ckpt.provenance = {"init", "task_one"};

    const std::string path = tmp_path("ckpt.cbt");
    save_checkpoint(ckpt, path);
    const Checkpoint back = load_checkpoint(path);
    CHECK(back == ckpt);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint round trip covers the conv encoder") {
    EncoderConfig cfg;
    cfg.input_shape = {2, 8, 8};
    cfg.kind = EncoderKind::tinyconv;
    cfg.hidden_widths = {4, 6};
    cfg.embed_dim = 4;
    cfg.projector_widths = {8};
    cfg.activation = Activation::relu;
    cfg.init_seed = 3;

    Checkpoint ckpt;
    ckpt.params = init_params(cfg);
    ckpt.encoder_config = cfg;

    const std::string path = tmp_path("ckpt_conv.cbt");
    save_checkpoint(ckpt, path);
    CHECK(load_checkpoint(path) == ckpt);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint load rejects a parameter table that mismatches its config") {
    EncoderConfig cfg;
    cfg.input_shape = {1, 4, 4};
    cfg.hidden_widths = {6};
    cfg.embed_dim = 3;
    cfg.projector_widths = {5};
    const ParameterVector params = init_params(cfg);

    const std::string path = tmp_path("ckpt_bad.cbt");

    SUBCASE("missing entry") {
        Container c;
        for (int i = 0; i + 1 < params.entry_count(); ++i) {
            c.add_tensor(params.entry(i).name, params.tensor(i));
        }
        encoder_config_to_entries(cfg, c);
        write_container(c, path);
        const std::string msg = thrown_message([&] { (void)load_checkpoint(path); });
        CHECK(msg.find("does not match") != std::string::npos);
    }
    SUBCASE("wrong shape") {
        Container c;
        for (int i = 0; i < params.entry_count(); ++i) {
            if (i == 0) {
                c.add_tensor(params.entry(i).name, Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
            } else {
                c.add_tensor(params.entry(i).name, params.tensor(i));
            }
        }
        encoder_config_to_entries(cfg, c);
        write_container(c, path);
        const std::string msg = thrown_message([&] { (void)load_checkpoint(path); });
        CHECK(msg.find("does not match") != std::string::npos);
    }
    SUBCASE("non-f64 entry") {
        Container c;
        for (int i = 0; i < params.entry_count(); ++i) {
            c.add_tensor(params.entry(i).name, params.tensor(i));
        }
        LabelMask m(1, 1);
        c.add_mask("stray", m);
        encoder_config_to_entries(cfg, c);
        write_container(c, path);
        const std::string msg = thrown_message([&] { (void)load_checkpoint(path); });
        CHECK(msg.find("not an f64 tensor") != std::string::npos);
    }
    SUBCASE("garbage encoder kind") {
        Container c;
        for (int i = 0; i < params.entry_count(); ++i) {
            c.add_tensor(params.entry(i).name, params.tensor(i));
        }
        encoder_config_to_entries(cfg, c);
        c.set_config("encoder.kind", "resnet50");
        write_container(c, path);
        CHECK_THROWS_AS((void)load_checkpoint(path), DataError);
    }
    std::remove(path.c_str());
}

TEST_CASE("encoder config entries survive the container config block") {
    EncoderConfig cfg;
    cfg.input_shape = {3, 8, 8};
    cfg.kind = EncoderKind::tinyconv;
    cfg.hidden_widths = {5, 7};
    cfg.embed_dim = 6;
    cfg.projector_widths = {9, 4};
    cfg.activation = Activation::tanh;
    cfg.init_seed = 1234567;

    Container c;
    encoder_config_to_entries(cfg, c);
    CHECK(encoder_config_from_entries(c) == cfg);
}
