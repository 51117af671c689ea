#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "uhdformer/checkpoint.hpp"
#include "uhdformer/errors.hpp"
#include "uhdformer/fs.hpp"
#include "uhdformer/model.hpp"
#include "uhdformer/rng.hpp"
#include "uhdformer/train.hpp"

using namespace uhd;

namespace {

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a.at(i) != b.at(i)) return false;
    return true;
}

UHDformerConfig small_cfg(DType dt = DType::F32) {
    UHDformerConfig cfg;
    cfg.channels = 4;
    cfg.blocks = 3;
    cfg.heads = 2;
    cfg.squeeze = 2;
    cfg.shuffle = 2;
    cfg.group = 3;
    cfg.dtype = dt;
    return cfg;
}

UHDformer small_model(uint64_t seed, DType dt = DType::F32) {
    Rng rng(seed);
    return build_model(small_cfg(dt), rng);
}

struct TmpDir {
    std::filesystem::path p;
    explicit TmpDir(const char* name) : p(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(p);
        std::filesystem::create_directories(p);
    }
    ~TmpDir() {
        std::error_code ec;
        std::filesystem::remove_all(p, ec);
    }
    std::string file(const char* base) const { return (p / base).string(); }
};

std::vector<Tensor> snapshot(const UHDformer& m) {
    std::vector<Tensor> out;
    for (const auto& [name, t] : m.registry.entries()) out.push_back(t.clone());
    return out;
}

bool matches_snapshot(const UHDformer& m, const std::vector<Tensor>& snap) {
    if (snap.size() != m.registry.size()) return false;
    for (size_t i = 0; i < snap.size(); ++i)
        if (!bit_equal(m.registry.entries()[i].second, snap[i])) return false;
    return true;
}

std::string thrown_message(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("save load round trip is bit exact") {
    TmpDir dir("uhd_ckpt_rt");
    const std::string path = dir.file("m.ckpt");
    UHDformer m1 = small_model(1);
    save_checkpoint(m1, path);

    UHDformer m2 = small_model(2);
    CHECK(!bit_equal(m1.registry.entries()[0].second, m2.registry.entries()[0].second));
    load_checkpoint(m2, path);
    for (size_t i = 0; i < m1.registry.size(); ++i) {
        CHECK(m1.registry.entries()[i].first == m2.registry.entries()[i].first);
        CHECK(bit_equal(m1.registry.entries()[i].second, m2.registry.entries()[i].second));
    }

    Rng rng(9);
    Tensor x = Tensor::uniform(Shape(1, 3, 8, 8), rng, 0.0, 1.0, DType::F32);
    CHECK(bit_equal(model_forward(m1, x), model_forward(m2, x)));
    CHECK(!std::filesystem::exists(path + ".tmp"));
}

TEST_CASE("config echo round trip") {
    UHDformerConfig cfg = small_cfg(DType::F64);
    cfg.dualcmt_in_ffn = false;
    cfg.mean_branch = false;
    UHDformerConfig back = config_from_text(config_to_text(cfg));
    CHECK(back.channels == cfg.channels);
    CHECK(back.blocks == cfg.blocks);
    CHECK(back.heads == cfg.heads);
    CHECK(back.squeeze == cfg.squeeze);
    CHECK(back.shuffle == cfg.shuffle);
    CHECK(back.group == cfg.group);
    CHECK(back.dualcmt_in_attn == cfg.dualcmt_in_attn);
    CHECK(back.dualcmt_in_ffn == cfg.dualcmt_in_ffn);
    CHECK(back.max_branch == cfg.max_branch);
    CHECK(back.mean_branch == cfg.mean_branch);
    CHECK(back.dtype == cfg.dtype);

    CHECK_THROWS_AS(config_from_text("chanels=4\n"), FormatError);
    CHECK_THROWS_AS(config_from_text("channels=four\n"), FormatError);
    CHECK_THROWS_AS(config_from_text("dtype=f16\n"), FormatError);
    CHECK_THROWS_AS(config_from_text("no equals sign"), FormatError);
}

TEST_CASE("checkpoint_config reads the header only") {
    TmpDir dir("uhd_ckpt_cfg");
    const std::string path = dir.file("m.ckpt");
    UHDformer m = small_model(3);
    save_checkpoint(m, path);
    UHDformerConfig cfg = checkpoint_config(path);
    CHECK(cfg.channels == 4);
    CHECK(cfg.blocks == 3);
    CHECK(cfg.heads == 2);
    CHECK(cfg.shuffle == 2);
    CHECK(cfg.dtype == DType::F32);
}

TEST_CASE("channel mismatch names the first offending parameter") {
    TmpDir dir("uhd_ckpt_mismatch");
    const std::string path = dir.file("c4.ckpt");
    UHDformer m4 = small_model(4);
    save_checkpoint(m4, path);

    UHDformerConfig wide = small_cfg();
    wide.channels = 8;
    Rng rng(5);
    UHDformer m8 = build_model(wide, rng);
    const auto snap = snapshot(m8);
    const std::string msg = thrown_message([&] { load_checkpoint(m8, path); });
    CHECK(msg.find("head_conv.weight") != std::string::npos);
    CHECK(matches_snapshot(m8, snap));
}

TEST_CASE("dtype mismatch is a compatibility error") {
    TmpDir dir("uhd_ckpt_dtype");
    const std::string path = dir.file("f64.ckpt");
    UHDformer m64 = small_model(6, DType::F64);
    save_checkpoint(m64, path);
    UHDformer m32 = small_model(6);
    CHECK_THROWS_AS(load_checkpoint(m32, path), ConfigError);
}

TEST_CASE("corrupt files leave the model untouched") {
    TmpDir dir("uhd_ckpt_corrupt");
    const std::string path = dir.file("m.ckpt");
    UHDformer src = small_model(7);
    save_checkpoint(src, path);
    const auto bytes = read_file_bytes(path);

    UHDformer m = small_model(8);
    const auto snap = snapshot(m);

    std::vector<uint8_t> cut(bytes.begin(), bytes.begin() + int64_t(bytes.size()) * 2 / 3);
    atomic_write_bytes(dir.file("cut.ckpt"), cut);
    CHECK_THROWS_AS(load_checkpoint(m, dir.file("cut.ckpt")), FormatError);
    CHECK(matches_snapshot(m, snap));

    auto trailing = bytes;
    trailing.push_back(0);
    atomic_write_bytes(dir.file("trail.ckpt"), trailing);
    CHECK_THROWS_AS(load_checkpoint(m, dir.file("trail.ckpt")), FormatError);
    CHECK(matches_snapshot(m, snap));

    auto magic = bytes;
    magic[0] ^= 0xff;
    atomic_write_bytes(dir.file("magic.ckpt"), magic);
    CHECK_THROWS_AS(load_checkpoint(m, dir.file("magic.ckpt")), FormatError);
    CHECK_THROWS_AS(checkpoint_config(dir.file("magic.ckpt")), FormatError);

    atomic_write_bytes(dir.file("tiny.ckpt"), std::vector<uint8_t>{'U', 'H'});
    CHECK_THROWS_AS(load_checkpoint(m, dir.file("tiny.ckpt")), FormatError);

    CHECK_THROWS_AS(load_checkpoint(m, dir.file("absent.ckpt")), IoError);
    CHECK(matches_snapshot(m, snap));
}

TEST_CASE("renamed entry reported as missing parameter") {
    TmpDir dir("uhd_ckpt_rename");
    const std::string path = dir.file("m.ckpt");
    UHDformer src = small_model(10);
    save_checkpoint(src, path);
    auto bytes = read_file_bytes(path);

    const std::string needle = "tail_conv.bias";
    auto it = std::search(bytes.begin(), bytes.end(), needle.begin(), needle.end());
    REQUIRE(it != bytes.end());
    *(it + int64_t(needle.size()) - 1) = 'z';  // -> "tail_conv.biaz"
    atomic_write_bytes(dir.file("renamed.ckpt"), bytes);

    UHDformer m = small_model(11);
    const auto snap = snapshot(m);
    const std::string msg = thrown_message([&] { load_checkpoint(m, dir.file("renamed.ckpt")); });
    CHECK(msg.find("tail_conv.bias") != std::string::npos);
    CHECK(matches_snapshot(m, snap));
}

TEST_CASE("optimizer state rides along") {
    TmpDir dir("uhd_ckpt_opt");
    const std::string path = dir.file("opt.ckpt");
    UHDformer m = small_model(12);

    std::unordered_map<std::string, Tensor> grads;
    uint64_t seed = 100;
    for (const auto& [name, t] : m.registry.entries()) {
        Rng rng(seed++);
        grads.emplace(name, Tensor::uniform(t.shape(), rng, -1.0, 1.0, t.dtype()));
    }
    AdamWState st;
    adamw_step(m.registry, grads, st, 1e-3);
    adamw_step(m.registry, grads, st, 1e-3);
    CHECK(st.step == 2);
    save_checkpoint(m, path, &st);

    UHDformer m2 = small_model(13);
    AdamWState st2;
    st2.step = 99;  // must be overwritten
    load_checkpoint(m2, path, &st2);
    CHECK(st2.step == 2);
    CHECK(st2.m.size() == st.m.size());
    CHECK(st2.v.size() == st.v.size());
    for (const auto& [name, t] : st.m) CHECK(bit_equal(st2.m.at(name), t));
    for (const auto& [name, t] : st.v) CHECK(bit_equal(st2.v.at(name), t));

    // a plain checkpoint resets the optimizer
    const std::string plain = dir.file("plain.ckpt");
    save_checkpoint(m, plain);
    load_checkpoint(m2, plain, &st2);
    CHECK(st2.step == 0);
    CHECK(st2.m.empty());
    CHECK(st2.v.empty());

    // and optimizer entries are ignored when no state is requested
    UHDformer m3 = small_model(14);
    load_checkpoint(m3, path);
    CHECK(bit_equal(m3.registry.entries()[0].second, m.registry.entries()[0].second));
}

TEST_CASE("f64 weights round trip through the f32 payload") {
    TmpDir dir("uhd_ckpt_f64");
    const std::string path = dir.file("f64.ckpt");
    UHDformer m1 = small_model(15, DType::F64);
    save_checkpoint(m1, path);
    CHECK(checkpoint_config(path).dtype == DType::F64);

    UHDformer m2 = small_model(16, DType::F64);
    load_checkpoint(m2, path);
    for (size_t i = 0; i < m1.registry.size(); ++i) {
        const Tensor& a = m1.registry.entries()[i].second;
        const Tensor& b = m2.registry.entries()[i].second;
        for (int64_t j = 0; j < a.numel(); ++j) CHECK(b.at(j) == double(float(a.at(j))));
    }
}

}  // TEST_SUITE
