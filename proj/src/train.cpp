#include "uhdformer/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "uhdformer/checkpoint.hpp"
#include "uhdformer/metrics.hpp"
#include "uhdformer/ops.hpp"
#include "uhdformer/rng.hpp"
#include "uhdformer/tape.hpp"

namespace uhd {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

double clamp01d(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// Separable gaussian blur with clamped-edge sampling, in doubles.
Tensor gaussian_blur(const Tensor& x, double sigma, int64_t ksize) {
    if (ksize < 1 || ksize % 2 == 0)
        throw ConfigError("gaussian_blur: kernel size must be odd and positive, got " + std::to_string(ksize));
    const int64_t r = ksize / 2;
    std::vector<double> k(static_cast<size_t>(ksize));
    double ksum = 0.0;
    for (int64_t j = 0; j < ksize; ++j) {
        k[size_t(j)] = std::exp(-double((j - r) * (j - r)) / (2.0 * sigma * sigma));
        ksum += k[size_t(j)];
    }
    for (auto& v : k) v /= ksum;

    const auto& sh = x.shape();
    const int64_t planes = sh[0] * sh[1], h = sh[2], w = sh[3];
    std::vector<double> a(size_t(x.numel())), b(size_t(x.numel()));
    for (int64_t i = 0; i < x.numel(); ++i) a[size_t(i)] = x.at(i);

    auto clampi = [](int64_t i, int64_t n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); };
    for (int64_t p = 0; p < planes; ++p) {
        const int64_t base = p * h * w;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t xx = 0; xx < w; ++xx) {
                double acc = 0.0;
                for (int64_t j = -r; j <= r; ++j)
                    acc += k[size_t(j + r)] * a[size_t(base + y * w + clampi(xx + j, w))];
                b[size_t(base + y * w + xx)] = acc;
            }
        for (int64_t y = 0; y < h; ++y)
            for (int64_t xx = 0; xx < w; ++xx) {
                double acc = 0.0;
                for (int64_t j = -r; j <= r; ++j)
                    acc += k[size_t(j + r)] * b[size_t(base + clampi(y + j, h) * w + xx)];
                a[size_t(base + y * w + xx)] = acc;
            }
    }
    Tensor out = Tensor::zeros(sh, x.dtype());
    for (int64_t i = 0; i < out.numel(); ++i) out.set(i, clamp01d(a[size_t(i)]));
    return out;
}

void check_image_shape(const Tensor& t, const char* what) {
    if (t.shape()[0] != 1 || t.shape()[1] != 3)
        throw ShapeError(std::string(what) + " must be (1,3,h,w), got " + t.shape().str());
}

}  // namespace

const char* degradation_name(DegradationKind k) {
    switch (k) {
        case DegradationKind::Lowlight: return "lowlight";
        case DegradationKind::Haze: return "haze";
        case DegradationKind::Blur: return "blur";
    }
    return "?";
}

DegradationKind degradation_from_name(const std::string& name) {
    if (name == "lowlight") return DegradationKind::Lowlight;
    if (name == "haze") return DegradationKind::Haze;
    if (name == "blur") return DegradationKind::Blur;
    throw ConfigError("unknown degradation \"" + name + "\" (expected lowlight, haze or blur)");
}

std::string DegradationDraw::str() const {
    char buf[120];
    switch (kind) {
        case DegradationKind::Lowlight:
            std::snprintf(buf, sizeof buf, "lowlight(gamma=%.6g,gain=%.6g,sigma=%.6g)", p1, p2, p3);
            break;
        case DegradationKind::Haze:
            std::snprintf(buf, sizeof buf, "haze(t=%.6g,airlight=%.6g)", p1, p2);
            break;
        case DegradationKind::Blur:
            std::snprintf(buf, sizeof buf, "blur(sigma=%.6g)", p1);
            break;
    }
    return buf;
}

Tensor synth_degrade(const Tensor& clean, const DegradationSpec& spec, Rng& rng, DegradationDraw* draw) {
    DegradationDraw d;
    d.kind = spec.kind;
    Tensor out;
    switch (spec.kind) {
        case DegradationKind::Lowlight: {
            d.p1 = rng.uniform(spec.gamma_lo, spec.gamma_hi);
            d.p2 = rng.uniform(spec.gain_lo, spec.gain_hi);
            d.p3 = rng.uniform(0.0, spec.noise_hi);
            out = Tensor::zeros(clean.shape(), clean.dtype());
            for (int64_t i = 0; i < clean.numel(); ++i) {
                const double v = d.p2 * std::pow(clean.at(i), d.p1) + rng.normal() * d.p3;
                out.set(i, clamp01d(v));
            }
            break;
        }
        case DegradationKind::Haze: {
            d.p1 = rng.uniform(spec.t_lo, spec.t_hi);
            d.p2 = rng.uniform(spec.air_lo, spec.air_hi);
            out = Tensor::zeros(clean.shape(), clean.dtype());
            for (int64_t i = 0; i < clean.numel(); ++i)
                out.set(i, clamp01d(clean.at(i) * d.p1 + d.p2 * (1.0 - d.p1)));
            break;
        }
        case DegradationKind::Blur: {
            d.p1 = rng.uniform(spec.blur_lo, spec.blur_hi);
            out = gaussian_blur(clean, d.p1, spec.blur_size);
            break;
        }
    }
    if (draw) *draw = d;
    return out;
}

SamplePair sample_patch(const Tensor& clean_image, const DegradationSpec& spec, int64_t p, Rng& rng) {
    check_image_shape(clean_image, "sample_patch: image");
    const int64_t h = clean_image.shape()[2], w = clean_image.shape()[3];
    if (p < 1) throw ConfigError("sample_patch: patch size must be positive");
    if (h < p || w < p)
        throw SizeError("sample_patch: image " + clean_image.shape().str() + " smaller than patch " +
                        std::to_string(p));
    SamplePair sp;
    sp.off_h = int64_t(rng.next_below(uint64_t(h - p + 1)));
    sp.off_w = int64_t(rng.next_below(uint64_t(w - p + 1)));
    Tensor crop = Tensor::zeros(Shape(1, 3, p, p), clean_image.dtype());
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < p; ++y)
            for (int64_t x = 0; x < p; ++x)
                crop.set(0, c, y, x, clean_image.at(0, c, sp.off_h + y, sp.off_w + x));
    sp.clean = crop;
    sp.degraded = synth_degrade(crop, spec, rng, &sp.draw);
    return sp;
}

void TrainConfig::validate(const UHDformerConfig& mcfg) const {
    if (!(lr_min > 0.0) || !(lr0 >= lr_min))
        throw ConfigError("train config: need lr0 >= lr_min > 0, got lr0=" + fmt(lr0) + " lr_min=" + fmt(lr_min));
    if (total_steps < 0) throw ConfigError("train config: total_steps must be >= 0");
    if (batch < 1) throw ConfigError("train config: batch must be >= 1");
    if (patch < 1 || patch % mcfg.shuffle != 0)
        throw ConfigError("train config: patch " + std::to_string(patch) + " must be a positive multiple of shuffle " +
                          std::to_string(mcfg.shuffle));
    if (freq_loss_weight < 0.0) throw ConfigError("train config: freq_loss_weight must be >= 0");
    if (checkpoint_every < 0) throw ConfigError("train config: checkpoint_every must be >= 0");
}

Tensor restoration_loss(const Tensor& pred, const Tensor& target, double lambda) {
    Tensor diff = sub(pred, target);
    Tensor spatial = mean(abs_val(diff));
    if (lambda == 0.0) return spatial;
    ComplexPair d = dft2(diff);
    Tensor freq = add(mean(abs_val(d.re)), mean(abs_val(d.im)));
    return add(spatial, cmul(freq, lambda));
}

void adamw_step(ParamRegistry& registry, const std::unordered_map<std::string, Tensor>& grads,
                AdamWState& st, double lr) {
    st.step += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, double(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, double(st.step));
    for (const auto& [name, pref] : registry.entries()) {
        auto git = grads.find(name);
        if (git == grads.end()) throw ContractError("adamw_step: missing gradient for " + name);
        const Tensor& g = git->second;
        Tensor p = pref;  // handle copy; writes land in the shared parameter storage
        if (!(g.shape() == p.shape()))
            throw ShapeError("adamw_step: gradient shape " + g.shape().str() + " for " + name +
                             " does not match parameter " + p.shape().str());
        Tensor& mb = st.m.try_emplace(name, Tensor::zeros(p.shape(), p.dtype())).first->second;
        Tensor& vb = st.v.try_emplace(name, Tensor::zeros(p.shape(), p.dtype())).first->second;
        for (int64_t i = 0; i < p.numel(); ++i) {
            double pv = p.at(i);
            const double gv = g.at(i);
            pv -= lr * st.weight_decay * pv;
            const double mv = st.beta1 * mb.at(i) + (1.0 - st.beta1) * gv;
            const double vv = st.beta2 * vb.at(i) + (1.0 - st.beta2) * gv * gv;
            mb.set(i, mv);
            vb.set(i, vv);
            pv -= lr * (mv / bc1) / (std::sqrt(vv / bc2) + st.eps);
            p.set(i, pv);
        }
    }
}

double cosine_lr(int64_t step, int64_t total, double lr0, double lr_min) {
    if (total < 1) return lr0;
    const double t = double(step) / double(total);
    return lr_min + (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

TrainReport train_on_pairs(UHDformer& m, const std::vector<ImagePair>& pairs, const TrainConfig& tcfg) {
    tcfg.validate(m.cfg);
    if (pairs.empty()) throw ContractError("train_on_pairs: no training pairs");
    const int64_t p = tcfg.patch;
    for (size_t i = 0; i < pairs.size(); ++i) {
        check_image_shape(pairs[i].clean, "train pair clean");
        check_image_shape(pairs[i].degraded, "train pair degraded");
        if (!(pairs[i].clean.shape() == pairs[i].degraded.shape()))
            throw ShapeError("train pair " + std::to_string(i) + ": clean " + pairs[i].clean.shape().str() +
                             " vs degraded " + pairs[i].degraded.shape().str());
        if (pairs[i].clean.shape()[2] < p || pairs[i].clean.shape()[3] < p)
            throw SizeError("train pair " + std::to_string(i) + ": image " + pairs[i].clean.shape().str() +
                            " smaller than patch " + std::to_string(p));
    }

    const auto t0 = std::chrono::steady_clock::now();
    TrainReport rep;
    double base = 0.0;
    for (const auto& pr : pairs) base += psnr(pr.degraded, pr.clean);
    rep.baseline_psnr = base / double(pairs.size());

    AdamWState st;
    const int64_t denom = tcfg.total_steps - 1;
    for (int64_t step = 0; step < tcfg.total_steps; ++step) {
        Rng r = Rng::substream(tcfg.seed, {Rng::hash_label("step"), uint64_t(step)});
        Tensor bd = Tensor::zeros(Shape(tcfg.batch, 3, p, p), m.cfg.dtype);
        Tensor bc = Tensor::zeros(Shape(tcfg.batch, 3, p, p), m.cfg.dtype);
        for (int64_t b = 0; b < tcfg.batch; ++b) {
            const auto& pr = pairs[r.next_below(pairs.size())];
            const int64_t h = pr.clean.shape()[2], w = pr.clean.shape()[3];
            const int64_t oh = int64_t(r.next_below(uint64_t(h - p + 1)));
            const int64_t ow = int64_t(r.next_below(uint64_t(w - p + 1)));
            for (int64_t c = 0; c < 3; ++c)
                for (int64_t y = 0; y < p; ++y)
                    for (int64_t x = 0; x < p; ++x) {
                        bd.set(b, c, y, x, pr.degraded.at(0, c, oh + y, ow + x));
                        bc.set(b, c, y, x, pr.clean.at(0, c, oh + y, ow + x));
                    }
        }

        const double lr = cosine_lr(step, denom, tcfg.lr0, tcfg.lr_min);
        double loss_val = 0.0;
        std::unordered_map<std::string, Tensor> grads;
        {
            Tape tape;
            for (const auto& [name, t] : m.registry.entries()) tape.watch(t);
            Tensor pred = model_forward(m, bd);
            Tensor loss = restoration_loss(pred, bc, tcfg.freq_loss_weight);
            loss_val = loss.item();
            if (!std::isfinite(loss_val))
                throw NumericError("train: non-finite loss at step " + std::to_string(step) + " (lr=" + fmt(lr) +
                                   ", loss=" + fmt(loss_val) + ")");
            tape.backward(loss);
            for (const auto& [name, t] : m.registry.entries()) grads.emplace(name, tape.grad(t));
        }
        adamw_step(m.registry, grads, st, lr);

        rep.losses.push_back(loss_val);
        rep.lrs.push_back(lr);
        rep.log_lines.push_back(std::to_string(step) + "\t" + fmt(lr) + "\t" + fmt(loss_val));
        if (!tcfg.checkpoint_path.empty() && tcfg.checkpoint_every > 0 && (step + 1) % tcfg.checkpoint_every == 0)
            save_checkpoint(m, tcfg.checkpoint_path, &st);
    }
    if (!tcfg.checkpoint_path.empty()) save_checkpoint(m, tcfg.checkpoint_path, &st);

    double fin = 0.0;
    for (const auto& pr : pairs) fin += psnr(clamp01(model_forward_padded(m, pr.degraded)), pr.clean);
    rep.final_psnr = fin / double(pairs.size());
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

TrainReport train(UHDformer& m, const std::vector<Tensor>& clean_images, const TrainConfig& tcfg) {
    tcfg.validate(m.cfg);
    if (clean_images.empty()) throw ContractError("train: no clean images");
    std::vector<ImagePair> pairs;
    pairs.reserve(clean_images.size());
    for (size_t i = 0; i < clean_images.size(); ++i) {
        Rng r = Rng::substream(tcfg.seed, {Rng::hash_label("degrade"), uint64_t(i)});
        ImagePair pr;
        pr.clean = clean_images[i];
        pr.degraded = synth_degrade(clean_images[i], tcfg.degradation, r);
        pairs.push_back(std::move(pr));
    }
    return train_on_pairs(m, pairs, tcfg);
}

EvalResult evaluate(const UHDformer& m, const std::vector<ImagePair>& pairs) {
    if (pairs.empty()) throw ContractError("evaluate: no pairs");
    EvalResult res;
    for (const auto& pr : pairs) {
        Tensor restored = clamp01(model_forward_padded(m, pr.degraded));
        res.psnrs.push_back(psnr(restored, pr.clean));
        res.ssims.push_back(ssim(restored, pr.clean));
    }
    for (double v : res.psnrs) res.mean_psnr += v;
    for (double v : res.ssims) res.mean_ssim += v;
    res.mean_psnr /= double(res.psnrs.size());
    res.mean_ssim /= double(res.ssims.size());
    return res;
}

}  // namespace uhd
