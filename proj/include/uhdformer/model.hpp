#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "uhdformer/blocks.hpp"

namespace uhd {

// Restoration model: a high-resolution conv path and a low-resolution
// transformer path, fused and applied as a global residual on the input.

struct UHDformerConfig {
    int64_t channels = 16;  // width of both paths
    int64_t blocks = 15;    // transformer depth
    int64_t heads = 8;
    int64_t squeeze = 4;    // channel-selection keep ratio r (keeps C/r)
    int64_t shuffle = 8;    // space-to-depth factor between the two paths
    int64_t group = 3;      // residual skip around every `group` blocks
    bool dualcmt_in_attn = true;
    bool dualcmt_in_ffn = true;
    bool max_branch = true;
    bool mean_branch = true;
    DType dtype = DType::F32;

    void validate() const;  // throws ConfigError on any violated constraint
};

// Ordered name->tensor table over every trainable parameter. Entries alias
// the block fields (shared storage), so watching or mutating through the
// registry acts on the model.
class ParamRegistry {
public:
    void add(const std::string& name, Tensor t);
    Tensor* find(const std::string& name);
    const Tensor* find(const std::string& name) const;
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    size_t size() const { return entries_.size(); }

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, size_t> index_;
};

struct UHDformer {
    UHDformerConfig cfg;
    Conv2dParams head_conv;               // 3x3, 3 -> C
    std::vector<ConvNeXtBlock> enc;       // three stages at full resolution
    ACMBlock acm;
    Conv2dParams down_proj;               // 1x1, C*s^2 -> C after unshuffle
    std::vector<CMTTBBlock> body;         // L transformer blocks
    Conv2dParams up_proj;                 // 1x1, C -> C*s^2 before shuffle
    Conv2dParams fuse_conv;               // 1x1, 2C -> C on [enc3, upsampled]
    std::vector<ConvNeXtBlock> fuse_blocks;  // two refinement stages
    Conv2dParams tail_conv;               // 3x3, C -> 3 residual output
    ParamRegistry registry;
};

UHDformer build_model(const UHDformerConfig& cfg, Rng& rng);

// The transformer body with its groupwise residual skips. y and the output
// share shape (n, C, H/s, W/s); x_acm is the modulated full-res stack.
Tensor model_body(const UHDformer& m, const Tensor& y, const Tensor& x_acm);

// img: (n, 3, h, w) with h, w divisible by cfg.shuffle. Returns the restored
// image at the same shape (input plus predicted residual, unclamped).
Tensor model_forward(const UHDformer& m, const Tensor& img);

// Inference wrapper for arbitrary extents: reflect-pads bottom/right to the
// next multiple of cfg.shuffle, runs the model, and crops back. Not
// differentiable; rejects tracked inputs.
Tensor model_forward_padded(const UHDformer& m, const Tensor& img);

struct ParamBreakdown {
    int64_t total = 0;
    // Section subtotals in network order: head, enc, acm, bridge, body,
    // fusion, tail.
    std::vector<std::pair<std::string, int64_t>> sections;
    std::string str() const;
};

ParamBreakdown param_count(const UHDformer& m);

}  // namespace uhd
