#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "uhdformer/model.hpp"

namespace uhd {

enum class DegradationKind { Lowlight, Haze, Blur };

const char* degradation_name(DegradationKind k);
DegradationKind degradation_from_name(const std::string& name);  // ConfigError on unknown

// Parameter ranges for the synthetic degradations; each call draws concrete
// values from its rng. All degradations map [0,1] images into [0,1].
struct DegradationSpec {
    DegradationKind kind = DegradationKind::Lowlight;
    double gamma_lo = 2.0, gamma_hi = 4.0;  // lowlight response exponent
    double gain_lo = 0.1, gain_hi = 0.4;    // lowlight brightness scale
    double noise_hi = 0.02;                 // lowlight noise sigma upper bound
    double t_lo = 0.3, t_hi = 0.8;          // haze transmission
    double air_lo = 0.7, air_hi = 1.0;      // haze airlight
    double blur_lo = 1.0, blur_hi = 3.0;    // blur kernel sigma
    int64_t blur_size = 9;
};

// The concrete values drawn for one degradation: lowlight (gamma, gain,
// sigma); haze (t, A); blur (sigma).
struct DegradationDraw {
    DegradationKind kind = DegradationKind::Lowlight;
    double p1 = 0.0, p2 = 0.0, p3 = 0.0;
    std::string str() const;
};

// Draw order per image: the kind-specific scalars in the order above, then
// (lowlight only) one normal deviate per element in flat index order.
Tensor synth_degrade(const Tensor& clean, const DegradationSpec& spec, Rng& rng,
                     DegradationDraw* draw = nullptr);

struct SamplePair {
    Tensor clean, degraded;  // (1,3,p,p), both in [0,1]
    int64_t image_id = 0;
    int64_t off_h = 0, off_w = 0;
    DegradationDraw draw;
};

// Uniform crop offsets (drawn as off_h then off_w), then the degradation
// applied to the crop.
SamplePair sample_patch(const Tensor& clean_image, const DegradationSpec& spec, int64_t p, Rng& rng);

struct TrainConfig {
    double lr0 = 5e-4;
    double lr_min = 1e-7;
    int64_t total_steps = 500;
    int64_t batch = 2;
    int64_t patch = 64;
    double freq_loss_weight = 0.1;
    uint64_t seed = 0;
    int64_t checkpoint_every = 0;  // steps between checkpoint writes; 0 = final only
    std::string checkpoint_path;   // empty = never write to disk
    DegradationSpec degradation;

    void validate(const UHDformerConfig& mcfg) const;  // throws ConfigError
};

struct AdamWState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 1e-4;
    int64_t step = 0;
    std::unordered_map<std::string, Tensor> m, v;  // moments keyed by parameter name
};

// Spatial L1 plus weighted frequency-domain L1 of the difference image.
Tensor restoration_loss(const Tensor& pred, const Tensor& target, double lambda);

// Decoupled weight decay (p -= lr*wd*p) followed by the bias-corrected Adam
// update. Moment buffers are created on first use.
void adamw_step(ParamRegistry& registry, const std::unordered_map<std::string, Tensor>& grads,
                AdamWState& st, double lr);

// lr_min + (lr0-lr_min)*(1+cos(pi*step/total))/2 for 0 <= step <= total.
double cosine_lr(int64_t step, int64_t total, double lr0, double lr_min);

// An aligned clean/degraded image pair at full extent.
struct ImagePair {
    Tensor clean, degraded;
};

struct TrainReport {
    std::vector<double> losses, lrs;          // one entry per step
    std::vector<std::string> log_lines;       // "step\tlr\tloss"
    double baseline_psnr = 0.0;               // degraded vs clean before training
    double final_psnr = 0.0;                  // restored vs clean after training
    double wall_seconds = 0.0;
};

// Per step: substream (seed, "step", index) draws, for each batch slot, a
// pair index then aligned crop offsets; forward, loss, backward, optimizer
// step under the cosine schedule. Deterministic for a fixed seed.
TrainReport train_on_pairs(UHDformer& m, const std::vector<ImagePair>& pairs, const TrainConfig& tcfg);

// Degrades each clean image once (substream (seed, "degrade", index)) into a
// fixed training pair, then runs train_on_pairs.
TrainReport train(UHDformer& m, const std::vector<Tensor>& clean_images, const TrainConfig& tcfg);

struct EvalResult {
    double mean_psnr = 0.0, mean_ssim = 0.0;
    std::vector<double> psnrs, ssims;  // per pair
};

// Restores each degraded image (reflect-padded as needed), clamps to [0,1],
// and scores against the clean reference.
EvalResult evaluate(const UHDformer& m, const std::vector<ImagePair>& pairs);

}  // namespace uhd
