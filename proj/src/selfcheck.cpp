#include "uhdformer/selfcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "uhdformer/blocks.hpp"
#include "uhdformer/checkpoint.hpp"
#include "uhdformer/errors.hpp"
#include "uhdformer/grad_check.hpp"
#include "uhdformer/metrics.hpp"
#include "uhdformer/model.hpp"
#include "uhdformer/ops.hpp"
#include "uhdformer/train.hpp"

namespace uhd {
namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string strf(const char* fmt, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, fmt);
    vsnprintf(buf, sizeof(buf), fmt, ap);
    va_end(ap);
    return buf;
}

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

void fill_val(Tensor& t, double v) {
    for (int64_t i = 0; i < t.numel(); ++i) t.set(i, v);
}

void zero_conv(Conv2dParams& p) {
    fill_val(p.w, 0.0);
    if (p.b.defined()) fill_val(p.b, 0.0);
}

// Exhaustive reimplementation of the channel-matching rank: cosine of every
// channel pair via scalar reads, Top-1 per row, stable (score desc, index
// asc) order, keep the first C/r. Kept deliberately independent of the
// library code path so the two can disagree.
std::vector<std::vector<int64_t>> select_oracle(const Tensor& r1, const Tensor& r2, int64_t r) {
    const auto& s = r1.shape();
    std::vector<std::vector<int64_t>> out;
    for (int64_t n = 0; n < s.n(); ++n) {
        std::vector<std::pair<double, int64_t>> ranked;
        for (int64_t i = 0; i < s.c(); ++i) {
            double best = -2.0;
            for (int64_t j = 0; j < s.c(); ++j) {
                double dot = 0.0, na = 0.0, nb = 0.0;
                for (int64_t h = 0; h < s.h(); ++h)
                    for (int64_t w = 0; w < s.w(); ++w) {
                        const double a = r1.at(n, i, h, w), b = r2.at(n, j, h, w);
                        dot += a * b;
                        na += a * a;
                        nb += b * b;
                    }
                const double sim = (na == 0.0 || nb == 0.0)
                                       ? 0.0
                                       : dot / std::max(std::sqrt(na) * std::sqrt(nb), 1e-12);
                best = std::max(best, sim);
            }
            ranked.emplace_back(best, i);
        }
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        std::vector<int64_t> idx;
        for (int64_t k = 0; k < s.c() / r; ++k) idx.push_back(ranked[static_cast<size_t>(k)].second);
        out.push_back(std::move(idx));
    }
    return out;
}

GradCheckResult frozen_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                             GradCheckOpts opts = {}) {
    SelectionFreeze freeze([&] { (void)f(); });
    return grad_check_params(f, params, opts);
}

CheckResult check_selection_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(1001);
    const int64_t cs[] = {4, 8};
    const int64_t rs[] = {1, 2, 4};
    int total = 0, matched = 0;
    while (total < 200) {
        for (int64_t c : cs) {
            for (int64_t r : rs) {
                if (total == 200) break;
                const int64_t n = 1 + static_cast<int64_t>(rng.next_below(2));
                const int64_t h = 1 + static_cast<int64_t>(rng.next_below(4));
                const int64_t w = 1 + static_cast<int64_t>(rng.next_below(4));
                Tensor r1 = Tensor::uniform(Shape(n, c, h, w), rng, -1.0, 1.0, DType::F64);
                Tensor r2 = Tensor::uniform(Shape(n, c, h, w), rng, -1.0, 1.0, DType::F64);
                // Every few cases, blank channels so the zero-norm rule and
                // its tie ordering are exercised too.
                if (total % 5 == 0) {
                    const int64_t kill = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(c)));
                    for (int64_t hh = 0; hh < h; ++hh)
                        for (int64_t ww = 0; ww < w; ++ww) r1.set(0, kill, hh, ww, 0.0);
                }
                if (total % 7 == 0) {
                    const int64_t kill = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(c)));
                    for (int64_t hh = 0; hh < h; ++hh)
                        for (int64_t ww = 0; ww < w; ++ww) r2.set(n - 1, kill, hh, ww, 0.0);
                }
                if (cmt_select(r1, r2, r).indices == select_oracle(r1, r2, r)) ++matched;
                ++total;
            }
        }
    }
    const double secs = seconds_since(t0);
    CheckResult res;
    res.pass = matched == total && secs < 5.0;
    res.detail = strf("%d/%d index matches in %.2f s (limit 5 s)", matched, total, secs);
    return res;
}

CheckResult check_gradient_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::string> parts;
    bool all_ok = true;
    auto record = [&](const char* name, const GradCheckResult& r, double tol) {
        if (!r.ok(tol)) all_ok = false;
        parts.push_back(strf("%s %.1e%s", name, r.max_rel_err, r.ok(tol) ? "" : " EXCEEDS"));
    };

    {
        Rng rng(2101);
        auto blk = convnext_init(4, rng, DType::F64);
        Tensor x = rand_t(Shape(1, 4, 6, 6), 6001);
        Tensor probe = rand_t(Shape(1, 4, 6, 6), 6002);
        std::vector<Tensor> params;
        convnext_visit(blk, "b", [&](const std::string&, Tensor& t) { params.push_back(t); });
        record("convnext", frozen_check([&] { return mean(mul(convnext_forward(blk, x), probe)); }, params),
               1e-5);
    }
    {
        Rng rng(2102);
        auto blk = acm_init(4, rng, DType::F64);
        Tensor x1 = rand_t(Shape(1, 4, 4, 4), 6011);
        Tensor x2 = rand_t(Shape(1, 4, 4, 4), 6012);
        Tensor x3 = rand_t(Shape(1, 4, 4, 4), 6013);
        Tensor probe = rand_t(Shape(1, 12, 4, 4), 6014);
        std::vector<Tensor> params;
        acm_visit(blk, "a", [&](const std::string&, Tensor& t) { params.push_back(t); });
        record("acm", frozen_check([&] { return mean(mul(acm_forward(blk, x1, x2, x3), probe)); }, params),
               1e-5);
    }
    {
        Rng rng(2103);
        auto g = gfr_init(4, 8, rng, DType::F64);
        Tensor y = rand_t(Shape(2, 4, 4, 4), 6021);
        Tensor probe = rand_t(Shape(2, 8, 4, 4), 6022);
        std::vector<Tensor> params;
        gfr_visit(g, "g", [&](const std::string&, Tensor& t) { params.push_back(t); });
        record("gfr", frozen_check([&] { return mean(mul(gfr_forward(g, y), probe)); }, params), 1e-5);
    }
    {
        Rng rng(2104);
        auto d = dualcmt_init(4, 2, 2, true, true, rng, DType::F64);
        Tensor x_acm = rand_t(Shape(1, 12, 8, 8), 6031);
        Tensor y = rand_t(Shape(1, 4, 4, 4), 6032);
        Tensor probe = rand_t(Shape(1, 4, 4, 4), 6033);
        std::vector<Tensor> params;
        dualcmt_visit(d, "d", [&](const std::string&, Tensor& t) { params.push_back(t); });
        record("dualcmt", frozen_check([&] { return mean(mul(dualcmt_forward(d, x_acm, y), probe)); }, params),
               1e-5);
    }
    {
        Rng rng(2105);
        auto a = cmta_init(4, 2, 2, 2, true, true, true, rng, DType::F64);
        Tensor x_low = rand_t(Shape(1, 4, 4, 4), 6041);
        Tensor x_acm = rand_t(Shape(1, 12, 8, 8), 6042);
        Tensor probe = rand_t(Shape(1, 4, 4, 4), 6043);
        std::vector<Tensor> params;
        cmta_visit(a, "a", [&](const std::string&, Tensor& t) { params.push_back(t); });
        record("cmta", frozen_check([&] { return mean(mul(cmta_forward(a, x_low, x_acm), probe)); }, params),
               1e-5);
    }
    {
        Rng rng(2106);
        auto nblk = cmtn_init(4, 2, 2, true, true, true, rng, DType::F64);
        Tensor x = rand_t(Shape(1, 4, 4, 4), 6051);
        Tensor x_acm = rand_t(Shape(1, 12, 8, 8), 6052);
        Tensor probe = rand_t(Shape(1, 4, 4, 4), 6053);
        std::vector<Tensor> params;
        cmtn_visit(nblk, "n", [&](const std::string&, Tensor& t) { params.push_back(t); });
        record("cmtn", frozen_check([&] { return mean(mul(cmtn_forward(nblk, x, x_acm), probe)); }, params),
               1e-5);
    }
    {
        Rng rng(2107);
        CMTTBOptions opt;
        opt.heads = 2;
        opt.r = 2;
        opt.s = 2;
        auto blk = cmttb_init(4, opt, rng, DType::F64);
        Tensor x_low = rand_t(Shape(1, 4, 4, 4), 6061);
        Tensor x_acm = rand_t(Shape(1, 12, 8, 8), 6062);
        Tensor probe = rand_t(Shape(1, 4, 4, 4), 6063);
        std::vector<Tensor> params;
        cmttb_visit(blk, "b", [&](const std::string&, Tensor& t) { params.push_back(t); });
        // Deep composition: widen the step so central-difference roundoff
        // stays below the tolerance.
        GradCheckOpts opts;
        opts.eps = 1e-4;
        record("cmttb",
               frozen_check([&] { return mean(mul(cmttb_forward(blk, x_low, x_acm), probe)); }, params, opts),
               1e-5);
    }
    {
        // Whole network at reduced width/depth, a sampled subset of every
        // parameter. The tolerance is looser: the low-res pooling contains
        // hard max picks whose argmax can flip under perturbation.
        UHDformerConfig cfg;
        cfg.channels = 4;
        cfg.blocks = 3;
        cfg.heads = 2;
        cfg.squeeze = 2;
        cfg.shuffle = 2;
        cfg.dtype = DType::F64;
        Rng mr(2120);
        auto m = build_model(cfg, mr);
        Tensor img = rand_t(Shape(1, 3, 16, 16), 6071, DType::F64, 0.0, 1.0);
        Tensor probe = rand_t(Shape(1, 3, 16, 16), 6072);
        std::vector<Tensor> params;
        for (const auto& [name, t] : m.registry.entries()) params.push_back(t);
        GradCheckOpts opts;
        // Step chosen at the measured error floor: wider and the eps^2
        // truncation term on high-curvature params (the bridge bias) breaks
        // 1e-4; narrower and roundoff on near-zero gradients does.
        opts.eps = 5e-5;
        opts.max_elems_per_param = 4;
        auto r = frozen_check([&] { return mean(mul(model_forward(m, img), probe)); }, params, opts);
        if (!r.ok(1e-4)) all_ok = false;
        parts.push_back(strf("model-slice %.1e over %lld elems%s", r.max_rel_err,
                             static_cast<long long>(r.checked), r.ok(1e-4) ? "" : " EXCEEDS"));
    }

    const double secs = seconds_since(t0);
    CheckResult res;
    res.pass = all_ok && secs < 180.0;
    std::string joined;
    for (size_t i = 0; i < parts.size(); ++i) joined += (i ? ", " : "") + parts[i];
    res.detail = strf("max rel err: %s; %.1f s (limit 180 s)", joined.c_str(), secs);
    return res;
}

CheckResult check_residual_identities() {
    int model_ok = 0, block_ok = 0;
    const int kCases = 50;
    {
        UHDformerConfig cfg;
        cfg.channels = 4;
        cfg.blocks = 3;
        cfg.heads = 2;
        cfg.squeeze = 2;
        cfg.shuffle = 2;
        Rng mr(2130);
        auto m = build_model(cfg, mr);
        zero_conv(m.tail_conv);
        for (int i = 0; i < kCases; ++i) {
            Tensor x = rand_t(Shape(1, 3, 8, 8), 7000 + static_cast<uint64_t>(i), DType::F32, 0.0, 1.0);
            if (bit_equal(model_forward(m, x), x)) ++model_ok;
        }
    }
    {
        Rng rng(2131);
        CMTTBOptions opt;
        opt.heads = 4;
        opt.r = 2;
        opt.s = 2;
        auto blk = cmttb_init(8, opt, rng, DType::F32);
        zero_conv(blk.attn.out_pw);
        zero_conv(blk.ffn.dualcmt->gfr.out_pw);
        for (int i = 0; i < kCases; ++i) {
            Tensor x_low = rand_t(Shape(2, 8, 4, 4), 7100 + static_cast<uint64_t>(i), DType::F32);
            Tensor x_acm = rand_t(Shape(2, 24, 8, 8), 7200 + static_cast<uint64_t>(i), DType::F32);
            if (bit_equal(cmttb_forward(blk, x_low, x_acm), x_low)) ++block_ok;
        }
    }
    CheckResult res;
    res.pass = model_ok == kCases && block_ok == kCases;
    res.detail = strf("zero-tail model identity %d/%d, zero-projection block identity %d/%d (bit-exact)",
                      model_ok, kCases, block_ok, kCases);
    return res;
}

CheckResult check_structural_invariants() {
    bool shuffle_ok = true;
    for (int64_t s : {2, 4, 8}) {
        Tensor x = rand_t(Shape(2, 3, 16, 16), 8000 + static_cast<uint64_t>(s), DType::F32);
        if (!bit_equal(pixel_shuffle(pixel_unshuffle(x, s), s), x)) shuffle_ok = false;
        Tensor y = rand_t(Shape(2, 3 * s * s, 4, 4), 8010 + static_cast<uint64_t>(s), DType::F32);
        if (!bit_equal(pixel_unshuffle(pixel_shuffle(y, s), s), y)) shuffle_ok = false;
    }

    double softmax_worst = 0.0;
    {
        Tensor x = rand_t(Shape(2, 5, 3, 4), 8021, DType::F64, -4.0, 4.0);
        Tensor sm = softmax(x, SoftmaxAxis::Channel);
        for (int64_t n = 0; n < 2; ++n)
            for (int64_t h = 0; h < 3; ++h)
                for (int64_t w = 0; w < 4; ++w) {
                    double sum = 0.0;
                    for (int64_t c = 0; c < 5; ++c) sum += sm.at(n, c, h, w);
                    softmax_worst = std::max(softmax_worst, std::fabs(sum - 1.0));
                }
        Tensor sl = softmax(x, SoftmaxAxis::Last);
        for (int64_t n = 0; n < 2; ++n)
            for (int64_t c = 0; c < 5; ++c)
                for (int64_t h = 0; h < 3; ++h) {
                    double sum = 0.0;
                    for (int64_t w = 0; w < 4; ++w) sum += sl.at(n, c, h, w);
                    softmax_worst = std::max(softmax_worst, std::fabs(sum - 1.0));
                }
    }

    // Energy is preserved between the image and its unnormalized transform:
    // sum x^2 == sum (re^2+im^2) / (h*w).
    double parseval_worst = 0.0;
    for (uint64_t seed : {8031ull, 8032ull}) {
        Tensor x = seed == 8031ull ? rand_t(Shape(1, 2, 8, 8), seed) : rand_t(Shape(1, 1, 4, 8), seed);
        auto f = dft2(x);
        double sig = 0.0, freq = 0.0;
        for (int64_t i = 0; i < x.numel(); ++i) sig += x.at(i) * x.at(i);
        for (int64_t i = 0; i < x.numel(); ++i) freq += f.re.at(i) * f.re.at(i) + f.im.at(i) * f.im.at(i);
        freq /= static_cast<double>(x.shape().h() * x.shape().w());
        parseval_worst = std::max(parseval_worst, std::fabs(sig - freq) / std::max(sig, 1e-12));
    }

    bool ckpt_ok = true;
    {
        UHDformerConfig cfg;
        cfg.channels = 4;
        cfg.blocks = 3;
        cfg.heads = 2;
        cfg.squeeze = 2;
        cfg.shuffle = 2;
        Rng r1(8101), r2(8202);
        auto m1 = build_model(cfg, r1);
        auto m2 = build_model(cfg, r2);
        namespace fs = std::filesystem;
        const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        const fs::path path = fs::temp_directory_path() / strf("uhdformer-selfcheck-%lld.ckpt",
                                                               static_cast<long long>(stamp));
        save_checkpoint(m1, path.string());
        load_checkpoint(m2, path.string());
        std::error_code ec;
        fs::remove(path, ec);
        for (size_t i = 0; i < m1.registry.entries().size(); ++i)
            if (!bit_equal(m1.registry.entries()[i].second, m2.registry.entries()[i].second)) ckpt_ok = false;
        Tensor x = rand_t(Shape(1, 3, 8, 8), 8110, DType::F32, 0.0, 1.0);
        if (!bit_equal(model_forward(m1, x), model_forward(m2, x))) ckpt_ok = false;
    }

    CheckResult res;
    res.pass = shuffle_ok && softmax_worst <= 1e-6 && parseval_worst <= 1e-5 && ckpt_ok;
    res.detail = strf("shuffle round-trips %s (s=2,4,8), softmax |sum-1| max %.1e, "
                      "energy-preservation rel err %.1e, checkpoint round-trip %s",
                      shuffle_ok ? "bit-exact" : "BROKEN", softmax_worst, parseval_worst,
                      ckpt_ok ? "bit-exact" : "BROKEN");
    return res;
}

CheckResult check_parameter_budget() {
    UHDformerConfig cfg;  // stock configuration
    Rng rng(9001);
    auto m = build_model(cfg, rng);
    auto pb = param_count(m);
    int64_t section_sum = 0;
    for (const auto& [name, cnt] : pb.sections) section_sum += cnt;
    int64_t registry_sum = 0;
    for (const auto& [name, t] : m.registry.entries()) registry_sum += t.numel();

    CheckResult res;
    res.pass = pb.total <= 500000 && section_sum == pb.total && registry_sum == pb.total;
    res.detail = strf("total %lld <= 500000, sections sum %s, registry sum %s",
                      static_cast<long long>(pb.total), section_sum == pb.total ? "matches" : "DIFFERS",
                      registry_sum == pb.total ? "matches" : "DIFFERS");
    return res;
}

UHDformerConfig overfit_config() {
    UHDformerConfig cfg;
    cfg.channels = 8;
    cfg.blocks = 6;
    return cfg;
}

std::vector<Tensor> overfit_cleans() {
    std::vector<Tensor> cleans;
    for (uint64_t i = 0; i < 4; ++i) cleans.push_back(make_clean_image(3000 + i, 64, 64));
    return cleans;
}

TrainConfig overfit_train_config(int64_t steps) {
    TrainConfig t;
    t.total_steps = steps;
    t.batch = 2;
    t.patch = 64;
    t.seed = 77;
    return t;
}

CheckResult check_overfit_training() {
    const auto cfg = overfit_config();
    const auto cleans = overfit_cleans();
    const auto tcfg = overfit_train_config(500);

    auto run = [&](TrainReport& rep, std::vector<Tensor>& snap) {
        Rng mr(2024);
        auto m = build_model(cfg, mr);
        rep = train(m, cleans, tcfg);
        for (const auto& [name, t] : m.registry.entries()) snap.push_back(t.clone());
    };
    TrainReport rep1, rep2;
    std::vector<Tensor> snap1, snap2;
    run(rep1, snap1);
    run(rep2, snap2);

    bool identical = rep1.losses == rep2.losses && snap1.size() == snap2.size();
    if (identical)
        for (size_t i = 0; i < snap1.size(); ++i)
            if (!bit_equal(snap1[i], snap2[i])) identical = false;

    const double gain = rep1.final_psnr - rep1.baseline_psnr;
    CheckResult res;
    res.pass = gain >= 6.0 && rep1.wall_seconds < 900.0 && rep2.wall_seconds < 900.0 && identical;
    res.detail = strf("gain %.2f dB (%.2f -> %.2f, need >= 6), %.0f s/run (limit 900), reruns %s", gain,
                      rep1.baseline_psnr, rep1.final_psnr, std::max(rep1.wall_seconds, rep2.wall_seconds),
                      identical ? "bit-identical" : "DIVERGED");
    return res;
}

CheckResult check_ablation_direction() {
    const auto cleans = overfit_cleans();
    const auto tcfg = overfit_train_config(2000);

    // A single held-out pair cannot order the variants reliably: the
    // pair-to-pair PSNR spread (several dB) is larger than the effect being
    // measured. Average over a fixed held-out set instead.
    std::vector<ImagePair> held;
    for (uint64_t hs = 3100; hs < 3108; ++hs) {
        Tensor clean = make_clean_image(hs, 64, 64);
        Rng hr = (hs == 3100) ? Rng::substream(4242, "holdout")
                              : Rng::substream(4242, {Rng::hash_label("holdout"), hs});
        DegradationSpec spec;
        held.push_back({clean, synth_degrade(clean, spec, hr)});
    }

    auto run_variant = [&](bool with_dualcmt) {
        auto cfg = overfit_config();
        cfg.dualcmt_in_attn = with_dualcmt;
        cfg.dualcmt_in_ffn = with_dualcmt;
        Rng mr(2024);
        auto m = build_model(cfg, mr);
        train(m, cleans, tcfg);
        return evaluate(m, held).mean_psnr;
    };
    const double full_psnr = run_variant(true);
    const double ablated_psnr = run_variant(false);

    CheckResult res;
    res.pass = full_psnr >= ablated_psnr;
    res.detail = strf("held-out mean PSNR (%zu pairs): full model %.2f dB vs matching-off %.2f dB (%+.2f)",
                      held.size(), full_psnr, ablated_psnr, full_psnr - ablated_psnr);
    return res;
}

CheckResult check_metric_closed_forms() {
    Tensor zero = Tensor::zeros(Shape(1, 3, 8, 8));
    Tensor step = Tensor::full(Shape(1, 3, 8, 8), 1.0 / 255.0);
    const double p = psnr(zero, step);
    const bool psnr_ok = std::fabs(p - 48.1308) <= 1e-3;

    Tensor img = rand_t(Shape(1, 3, 16, 16), 9501, DType::F32, 0.0, 1.0);
    const double s = ssim(img, img);
    const bool ssim_ok = std::fabs(s - 1.0) <= 1e-6;

    // Squared-error ladder: doubling the uniform error must strictly lower
    // the score every rung.
    bool ladder_ok = true;
    double prev = psnr(zero, Tensor::full(Shape(1, 3, 8, 8), 1e-3));
    for (int k = 1; k < 8; ++k) {
        const double cur = psnr(zero, Tensor::full(Shape(1, 3, 8, 8), 1e-3 * std::pow(2.0, k)));
        if (!(cur < prev)) ladder_ok = false;
        prev = cur;
    }

    CheckResult res;
    res.pass = psnr_ok && ssim_ok && ladder_ok;
    res.detail = strf("uniform-error psnr %.5f dB (target 48.1308 +/- 1e-3), ssim(a,a) %.9f, "
                      "error ladder %s (8 rungs)",
                      p, s, ladder_ok ? "strictly decreasing" : "NOT MONOTONIC");
    return res;
}

}  // namespace

bool SelfTestReport::all_pass() const {
    for (const auto& c : checks)
        if (!c.pass) return false;
    return !checks.empty();
}

Tensor make_clean_image(uint64_t seed, int64_t h, int64_t w, DType dt) {
    if (h < 1 || w < 1) throw ConfigError("make_clean_image: extents must be positive");
    Rng rng = Rng::substream(seed, "clean-image");
    constexpr int kWaves = 4, kBlobs = 3;
    double fy[kWaves], fx[kWaves], ph[kWaves], am[kWaves];
    for (int k = 0; k < kWaves; ++k) {
        fy[k] = rng.uniform(0.5, 3.0);
        fx[k] = rng.uniform(0.5, 3.0);
        ph[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        am[k] = rng.uniform(0.04, 0.14);
    }
    double by[kBlobs], bx[kBlobs], br[kBlobs], bs[kBlobs];
    for (int k = 0; k < kBlobs; ++k) {
        by[k] = rng.uniform(0.0, 1.0);
        bx[k] = rng.uniform(0.0, 1.0);
        br[k] = rng.uniform(0.12, 0.35);
        bs[k] = rng.uniform(-0.22, 0.28);
    }
    double tint[3], ramp[3];
    for (int c = 0; c < 3; ++c) {
        tint[c] = rng.uniform(-0.06, 0.06);
        ramp[c] = rng.uniform(-0.08, 0.08);
    }
    Tensor img(Shape(1, 3, h, w), dt);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
            const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
            double base = 0.5;
            for (int k = 0; k < kWaves; ++k)
                base += am[k] * std::sin(2.0 * std::numbers::pi * (fy[k] * v + fx[k] * u) + ph[k]);
            for (int k = 0; k < kBlobs; ++k) {
                const double du = u - bx[k], dv = v - by[k];
                base += bs[k] * std::exp(-(du * du + dv * dv) / (2.0 * br[k] * br[k]));
            }
            for (int c = 0; c < 3; ++c) {
                const double val = base + tint[c] + ramp[c] * (u + v - 1.0);
                img.set(0, c, y, x, std::clamp(val, 0.02, 0.98));
            }
        }
    return img;
}

SelfTestReport run_selftest(const SelfTestOptions& opts) {
    struct Item {
        const char* name;
        CheckResult (*fn)();
        bool heavy;  // multi-minute training runs, skipped at the quick level
    };
    const Item items[] = {
        {"selection-oracle", check_selection_oracle, false},
        {"gradient-suite", check_gradient_suite, false},
        {"residual-identities", check_residual_identities, false},
        {"structural-invariants", check_structural_invariants, false},
        {"parameter-budget", check_parameter_budget, false},
        {"overfit-training", check_overfit_training, true},
        {"ablation-direction", check_ablation_direction, true},
        {"metric-closed-forms", check_metric_closed_forms, false},
    };

    SelfTestReport rep;
    for (const auto& it : items) {
        if (!opts.only.empty()) {
            if (std::string_view(it.name).find(opts.only) == std::string_view::npos) continue;
        } else if (it.heavy && !opts.full) {
            continue;
        }
        if (opts.log) *opts.log << "[ RUN  ] " << it.name << std::endl;
        CheckResult r;
        try {
            r = it.fn();
        } catch (const std::exception& e) {
            r.pass = false;
            r.detail = std::string("exception: ") + e.what();
        }
        r.name = it.name;
        if (opts.log)
            *opts.log << "[ " << (r.pass ? " OK " : "FAIL") << " ] " << r.name << ": " << r.detail
                      << std::endl;
        rep.checks.push_back(std::move(r));
    }
    return rep;
}

}  // namespace uhd
