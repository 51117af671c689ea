#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "uhdformer/checkpoint.hpp"
#include "uhdformer/errors.hpp"
#include "uhdformer/grad_check.hpp"
#include "uhdformer/metrics.hpp"
#include "uhdformer/ops.hpp"
#include "uhdformer/rng.hpp"
#include "uhdformer/train.hpp"

using namespace uhd;

namespace {

Tensor rand_t(const Shape& s, uint64_t seed, DType dt = DType::F64, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    return Tensor::uniform(s, rng, lo, hi, dt);
}

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

DegradationSpec fixed_haze(double t, double air) {
    DegradationSpec spec;
    spec.kind = DegradationKind::Haze;
    spec.t_lo = spec.t_hi = t;
    spec.air_lo = spec.air_hi = air;
    return spec;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("restoration loss closed forms") {
    Tensor t = rand_t(Shape(1, 2, 4, 4), 1, DType::F64, 0.0, 1.0);
    CHECK(restoration_loss(t, t, 0.1).item() == 0.0);

    // constant offset c: spatial term c; the frequency term sees a single DC
    // coefficient of c*h*w among h*w entries, so it also averages to c
    Tensor off = add(t, Tensor::full(t.shape(), 0.2, DType::F64));
    CHECK(restoration_loss(off, t, 0.0).item() == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(restoration_loss(off, t, 0.1).item() == doctest::Approx(0.2 + 0.1 * 0.2).epsilon(1e-10));
    CHECK(restoration_loss(off, t, 0.5).item() == doctest::Approx(0.2 + 0.5 * 0.2).epsilon(1e-10));

    CHECK_THROWS_AS(restoration_loss(t, rand_t(Shape(1, 2, 4, 5), 2), 0.1), ShapeError);
}

TEST_CASE("restoration loss gradient") {
    // The |.| terms are kinked at zero, so the check needs every argument
    // away from it. A varying positive offset handles the spatial term and
    // gives generic frequency bins; bins that are structurally ~0 for real
    // input (DC imaginary part, Nyquist rows) also have ~0 sensitivity, so
    // they cannot straddle under the finite-difference step.
    Tensor target = rand_t(Shape(1, 1, 4, 4), 3, DType::F64, 0.0, 0.2);
    Tensor base = add(target, rand_t(Shape(1, 1, 4, 4), 4, DType::F64, 0.4, 1.4));
    auto res = grad_check([&](const Tensor& p) { return restoration_loss(p, target, 0.1); }, base);
    CHECK(res.max_rel_err < 1e-6);

    // spatial term alone, same guard
    auto res0 = grad_check([&](const Tensor& p) { return restoration_loss(p, target, 0.0); }, base);
    CHECK(res0.max_rel_err < 1e-7);
}

TEST_CASE("adamw first steps match hand arithmetic") {
    ParamRegistry reg;
    reg.add("w", Tensor::zeros(Shape(1, 1, 1, 2), DType::F64));
    std::unordered_map<std::string, Tensor> grads;
    grads.emplace("w", Tensor::full(Shape(1, 1, 1, 2), 1.0, DType::F64));

    AdamWState st;
    st.weight_decay = 0.0;
    const double lr = 1e-3;
    adamw_step(reg, grads, st, lr);
    CHECK(st.step == 1);
    // Frozen via tools/gen_reference_values.py: the bias-corrected first step
    // is -lr/(1+eps) for a unit gradient.
    CHECK(reg.find("w")->at(0) == doctest::Approx(-0.0009999999900000003).epsilon(1e-12));

    // a constant gradient keeps moving by ~ -lr per step
    adamw_step(reg, grads, st, lr);
    CHECK(st.step == 2);
    CHECK(reg.find("w")->at(0) == doctest::Approx(-2e-3).epsilon(1e-6));
    CHECK(reg.find("w")->at(1) == reg.find("w")->at(0));
}

TEST_CASE("adamw weight decay is decoupled") {
    ParamRegistry reg;
    reg.add("w", Tensor::full(Shape(1, 1, 1, 1), 2.0, DType::F64));
    std::unordered_map<std::string, Tensor> grads;
    grads.emplace("w", Tensor::zeros(Shape(1, 1, 1, 1), DType::F64));

    AdamWState st;  // weight_decay 1e-4
    const double lr = 0.5;
    adamw_step(reg, grads, st, lr);
    // zero gradient: moments stay zero, so only the decay moves the weight
    CHECK(reg.find("w")->at(0) == 2.0 * (1.0 - lr * st.weight_decay));
}

TEST_CASE("adamw contract violations") {
    ParamRegistry reg;
    reg.add("w", Tensor::zeros(Shape(1, 1, 1, 2), DType::F64));
    AdamWState st;
    std::unordered_map<std::string, Tensor> grads;
    CHECK_THROWS_AS(adamw_step(reg, grads, st, 1e-3), ContractError);
    grads.emplace("w", Tensor::zeros(Shape(1, 1, 2, 1), DType::F64));
    CHECK_THROWS_AS(adamw_step(reg, grads, st, 1e-3), ShapeError);
}

TEST_CASE("cosine schedule endpoints and shape") {
    const double lr0 = 5e-4, lrm = 1e-7;
    CHECK(cosine_lr(0, 499, lr0, lrm) == doctest::Approx(lr0).epsilon(1e-14));
    CHECK(cosine_lr(499, 499, lr0, lrm) == doctest::Approx(lrm).epsilon(1e-14));
    // Frozen via tools/gen_reference_values.py.
    CHECK(cosine_lr(100, 499, lr0, lrm) == doctest::Approx(0.0004520786462568597).epsilon(1e-12));
    CHECK(cosine_lr(250, 499, lr0, lrm) == doctest::Approx(0.00024926318658625925).epsilon(1e-12));
    CHECK(cosine_lr(5, 9, lr0, lrm) == doctest::Approx(0.0002066466379921508).epsilon(1e-12));

    double prev = lr0 + 1.0;
    for (int64_t s = 0; s <= 40; ++s) {
        const double lr = cosine_lr(s, 40, lr0, lrm);
        CHECK(lr < prev);
        CHECK(lr >= lrm);
        prev = lr;
    }
    // degenerate single-step schedule starts at lr0
    CHECK(cosine_lr(0, 0, lr0, lrm) == lr0);
}

TEST_CASE("degradation names") {
    for (auto k : {DegradationKind::Lowlight, DegradationKind::Haze, DegradationKind::Blur})
        CHECK(degradation_from_name(degradation_name(k)) == k);
    CHECK_THROWS_AS(degradation_from_name("rain"), ConfigError);

    DegradationDraw d;
    d.kind = DegradationKind::Haze;
    d.p1 = 0.5;
    d.p2 = 0.75;
    CHECK(d.str() == "haze(t=0.5,airlight=0.75)");
}

TEST_CASE("haze closed forms") {
    Tensor clean = rand_t(Shape(1, 3, 6, 6), 21, DType::F64, 0.0, 1.0);

    Rng r1(5);
    DegradationDraw draw;
    Tensor same = synth_degrade(clean, fixed_haze(1.0, 0.9), r1, &draw);
    CHECK(bit_equal(same, clean));  // full transmission changes nothing
    CHECK(draw.kind == DegradationKind::Haze);
    CHECK(draw.p1 == 1.0);
    CHECK(draw.p2 == 0.9);

    Rng r2(5);
    Tensor hazy = synth_degrade(clean, fixed_haze(0.5, 1.0), r2);
    for (int64_t i = 0; i < clean.numel(); ++i)
        CHECK(hazy.at(i) == doctest::Approx(clean.at(i) * 0.5 + 0.5).epsilon(1e-14));
}

TEST_CASE("lowlight closed forms and ranges") {
    Tensor clean = rand_t(Shape(1, 3, 5, 5), 22, DType::F64, 0.0, 1.0);

    DegradationSpec spec;
    spec.gamma_lo = spec.gamma_hi = 1.0;
    spec.gain_lo = spec.gain_hi = 0.5;
    spec.noise_hi = 0.0;
    Rng r1(6);
    Tensor dark = synth_degrade(clean, spec, r1);
    for (int64_t i = 0; i < clean.numel(); ++i)
        CHECK(dark.at(i) == doctest::Approx(clean.at(i) * 0.5).epsilon(1e-14));

    DegradationSpec dflt;  // default lowlight ranges
    Rng r2(7);
    DegradationDraw draw;
    Tensor out = synth_degrade(clean, dflt, r2, &draw);
    CHECK(draw.p1 >= 2.0);
    CHECK(draw.p1 < 4.0);
    CHECK(draw.p2 >= 0.1);
    CHECK(draw.p2 < 0.4);
    CHECK(draw.p3 >= 0.0);
    CHECK(draw.p3 < 0.02);
    for (int64_t i = 0; i < out.numel(); ++i) {
        CHECK(out.at(i) >= 0.0);
        CHECK(out.at(i) <= 1.0);
    }

    // same seed, same bytes
    Rng r3(7);
    CHECK(bit_equal(synth_degrade(clean, dflt, r3), out));
}

TEST_CASE("blur preserves constants and smooths") {
    DegradationSpec spec;
    spec.kind = DegradationKind::Blur;

    Tensor flat = Tensor::full(Shape(1, 3, 8, 8), 0.4, DType::F64);
    Rng r1(8);
    Tensor bflat = synth_degrade(flat, spec, r1);
    for (int64_t i = 0; i < flat.numel(); ++i)
        CHECK(bflat.at(i) == doctest::Approx(0.4).epsilon(1e-12));

    Tensor noisy = rand_t(Shape(1, 3, 12, 12), 23, DType::F64, 0.0, 1.0);
    Rng r2(9);
    DegradationDraw draw;
    Tensor soft = synth_degrade(noisy, spec, r2, &draw);
    CHECK(draw.p1 >= 1.0);
    CHECK(draw.p1 < 3.0);
    auto variance = [](const Tensor& t) {
        double mu = 0.0;
        for (int64_t i = 0; i < t.numel(); ++i) mu += t.at(i);
        mu /= double(t.numel());
        double var = 0.0;
        for (int64_t i = 0; i < t.numel(); ++i) var += (t.at(i) - mu) * (t.at(i) - mu);
        return var / double(t.numel());
    };
    CHECK(variance(soft) < variance(noisy));

    DegradationSpec even = spec;
    even.blur_size = 8;
    Rng r3(10);
    CHECK_THROWS_AS(synth_degrade(noisy, even, r3), ConfigError);
}

TEST_CASE("sample_patch crops then degrades") {
    Tensor img = rand_t(Shape(1, 3, 16, 12), 24, DType::F64, 0.0, 1.0);
    DegradationSpec spec = fixed_haze(0.5, 1.0);

    Rng r1(11);
    SamplePair sp = sample_patch(img, spec, 8, r1);
    CHECK(sp.clean.shape() == Shape(1, 3, 8, 8));
    CHECK(sp.degraded.shape() == Shape(1, 3, 8, 8));
    CHECK(sp.off_h >= 0);
    CHECK(sp.off_h <= 8);
    CHECK(sp.off_w >= 0);
    CHECK(sp.off_w <= 4);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < 8; ++y)
            for (int64_t x = 0; x < 8; ++x)
                CHECK(sp.clean.at(0, c, y, x) == img.at(0, c, sp.off_h + y, sp.off_w + x));
    CHECK(sp.draw.p1 == 0.5);

    // replaying the stream reproduces offsets and degradation
    Rng r2(11);
    SamplePair sp2 = sample_patch(img, spec, 8, r2);
    CHECK(sp2.off_h == sp.off_h);
    CHECK(sp2.off_w == sp.off_w);
    CHECK(bit_equal(sp2.degraded, sp.degraded));

    // full-extent patch pins the offsets to zero
    Rng r3(12);
    SamplePair whole = sample_patch(img, spec, 12, r3);
    CHECK(whole.off_w == 0);

    Rng r4(13);
    CHECK_THROWS_AS(sample_patch(img, spec, 17, r4), SizeError);
    CHECK_THROWS_AS(sample_patch(img, spec, 0, r4), ConfigError);
    CHECK_THROWS_AS(sample_patch(rand_t(Shape(2, 3, 16, 16), 25), spec, 8, r4), ShapeError);
}

TEST_CASE("train config validation") {
    const UHDformerConfig mcfg = small_cfg();
    TrainConfig good;
    good.patch = 8;
    good.total_steps = 1;
    CHECK_NOTHROW(good.validate(mcfg));

    auto reject = [&](auto mutate) {
        TrainConfig bad = good;
        mutate(bad);
        CHECK_THROWS_AS(bad.validate(mcfg), ConfigError);
    };
    reject([](TrainConfig& c) { c.lr_min = 0.0; });
    reject([](TrainConfig& c) { c.lr0 = 1e-8; });  // below lr_min
    reject([](TrainConfig& c) { c.total_steps = -1; });
    reject([](TrainConfig& c) { c.batch = 0; });
    reject([](TrainConfig& c) { c.patch = 0; });
    reject([](TrainConfig& c) { c.patch = 9; });  // not a multiple of shuffle=2
    reject([](TrainConfig& c) { c.freq_loss_weight = -0.1; });
    reject([](TrainConfig& c) { c.checkpoint_every = -2; });
}

TEST_CASE("short training run is deterministic and logged") {
    auto make_pairs = [] {
        std::vector<ImagePair> pairs;
        for (uint64_t i = 0; i < 2; ++i) {
            ImagePair pr;
            pr.clean = rand_t(Shape(1, 3, 8, 8), 30 + i, DType::F32, 0.0, 1.0);
            Rng r(40 + i);
            pr.degraded = synth_degrade(pr.clean, fixed_haze(0.6, 1.0), r);
            pairs.push_back(pr);
        }
        return pairs;
    };
    TrainConfig tcfg;
    tcfg.total_steps = 3;
    tcfg.batch = 2;
    tcfg.patch = 4;
    tcfg.seed = 5;

    UHDformer m1 = small_model(50);
    TrainReport rep1 = train_on_pairs(m1, make_pairs(), tcfg);
    CHECK(rep1.losses.size() == 3);
    CHECK(rep1.lrs.size() == 3);
    CHECK(rep1.log_lines.size() == 3);
    CHECK(rep1.lrs[0] == doctest::Approx(tcfg.lr0).epsilon(1e-14));
    CHECK(rep1.log_lines[0].rfind("0\t", 0) == 0);
    CHECK(std::count(rep1.log_lines[1].begin(), rep1.log_lines[1].end(), '\t') == 2);
    CHECK(rep1.baseline_psnr > 0.0);
    CHECK(std::isfinite(rep1.final_psnr));
    CHECK(rep1.wall_seconds >= 0.0);
    for (double l : rep1.losses) CHECK(std::isfinite(l));

    UHDformer m2 = small_model(50);
    TrainReport rep2 = train_on_pairs(m2, make_pairs(), tcfg);
    CHECK(rep2.losses == rep1.losses);
    for (size_t i = 0; i < m1.registry.size(); ++i)
        CHECK(bit_equal(m1.registry.entries()[i].second, m2.registry.entries()[i].second));
}

TEST_CASE("zero steps leave the weights alone") {
    UHDformer m = small_model(51);
    std::vector<Tensor> before;
    for (const auto& [name, t] : m.registry.entries()) before.push_back(t.clone());

    std::vector<ImagePair> pairs(1);
    pairs[0].clean = rand_t(Shape(1, 3, 8, 8), 31, DType::F32, 0.0, 1.0);
    pairs[0].degraded = pairs[0].clean;
    TrainConfig tcfg;
    tcfg.total_steps = 0;
    tcfg.patch = 8;
    TrainReport rep = train_on_pairs(m, pairs, tcfg);
    CHECK(rep.losses.empty());
    CHECK(rep.log_lines.empty());
    for (size_t i = 0; i < before.size(); ++i)
        CHECK(bit_equal(m.registry.entries()[i].second, before[i]));
}

TEST_CASE("training writes checkpoints on the configured cadence") {
    TmpDir dir("uhd_train_ckpt");
    UHDformer m = small_model(52);
    std::vector<ImagePair> pairs(1);
    pairs[0].clean = rand_t(Shape(1, 3, 8, 8), 32, DType::F32, 0.0, 1.0);
    Rng r(60);
    pairs[0].degraded = synth_degrade(pairs[0].clean, fixed_haze(0.5, 0.9), r);

    TrainConfig tcfg;
    tcfg.total_steps = 3;
    tcfg.batch = 1;
    tcfg.patch = 4;
    tcfg.checkpoint_every = 2;
    tcfg.checkpoint_path = dir.file("run.ckpt");
    train_on_pairs(m, pairs, tcfg);

    UHDformer loaded = small_model(53);
    AdamWState st;
    load_checkpoint(loaded, tcfg.checkpoint_path, &st);
    CHECK(st.step == 3);  // final save reflects the last optimizer step
    for (size_t i = 0; i < m.registry.size(); ++i)
        CHECK(bit_equal(loaded.registry.entries()[i].second, m.registry.entries()[i].second));
}

TEST_CASE("non-finite loss aborts with a numeric error") {
    UHDformer m = small_model(54);
    m.registry.find("tail_conv.bias")->set(0, std::numeric_limits<double>::infinity());
    std::vector<ImagePair> pairs(1);
    pairs[0].clean = rand_t(Shape(1, 3, 8, 8), 33, DType::F32, 0.0, 1.0);
    pairs[0].degraded = pairs[0].clean;
    TrainConfig tcfg;
    tcfg.total_steps = 1;
    tcfg.batch = 1;
    tcfg.patch = 4;
    CHECK_THROWS_AS(train_on_pairs(m, pairs, tcfg), NumericError);
}

TEST_CASE("train degrades each image once then fits the fixed pairs") {
    std::vector<Tensor> cleans;
    for (uint64_t i = 0; i < 2; ++i) cleans.push_back(rand_t(Shape(1, 3, 8, 8), 34 + i, DType::F32, 0.0, 1.0));
    TrainConfig tcfg;
    tcfg.total_steps = 2;
    tcfg.batch = 1;
    tcfg.patch = 4;
    tcfg.degradation = fixed_haze(0.5, 1.0);

    UHDformer m1 = small_model(55);
    TrainReport rep1 = train(m1, cleans, tcfg);
    UHDformer m2 = small_model(55);
    TrainReport rep2 = train(m2, cleans, tcfg);
    CHECK(rep1.losses == rep2.losses);
    CHECK(rep1.baseline_psnr == rep2.baseline_psnr);

    CHECK_THROWS_AS(train(m1, {}, tcfg), ContractError);
}

TEST_CASE("loss goes down on a single repeated patch") {
    UHDformer m = small_model(56);
    std::vector<ImagePair> pairs(1);
    pairs[0].clean = rand_t(Shape(1, 3, 8, 8), 36, DType::F32, 0.25, 0.75);
    Rng r(70);
    pairs[0].degraded = synth_degrade(pairs[0].clean, fixed_haze(0.5, 1.0), r);

    TrainConfig tcfg;
    tcfg.total_steps = 40;
    tcfg.batch = 1;
    tcfg.patch = 8;
    tcfg.seed = 3;
    TrainReport rep = train_on_pairs(m, pairs, tcfg);
    auto mean5 = [&](size_t from) {
        double s = 0.0;
        for (size_t i = from; i < from + 5; ++i) s += rep.losses[i];
        return s / 5.0;
    };
    CHECK(mean5(35) < mean5(0));
    CHECK(rep.final_psnr > rep.baseline_psnr);
}

TEST_CASE("evaluate scores restored images") {
    UHDformer m = small_model(57);
    // zero the residual tail: restoration becomes the identity
    for (const auto& [name, t] : m.registry.entries())
        if (name.rfind("tail_conv.", 0) == 0) {
            Tensor z = t;
            for (int64_t i = 0; i < z.numel(); ++i) z.set(i, 0.0);
        }

    std::vector<ImagePair> pairs(2);
    pairs[0].clean = rand_t(Shape(1, 3, 16, 16), 37, DType::F32, 0.0, 1.0);
    pairs[0].degraded = pairs[0].clean;
    pairs[1].clean = rand_t(Shape(1, 3, 13, 16), 38, DType::F32, 0.0, 1.0);  // exercises padding
    pairs[1].degraded = pairs[1].clean;

    EvalResult res = evaluate(m, pairs);
    CHECK(res.psnrs.size() == 2);
    CHECK(res.ssims.size() == 2);
    CHECK(res.mean_psnr == 100.0);
    CHECK(res.mean_ssim == doctest::Approx(1.0).epsilon(1e-9));

    CHECK_THROWS_AS(evaluate(m, {}), ContractError);
}

}  // TEST_SUITE
