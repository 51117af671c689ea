#pragma once

#include "uhdformer/tensor.hpp"

namespace uhd {

// Peak signal-to-noise ratio in dB over all elements: 10*log10(peak^2/MSE),
// capped at 100 dB (returned exactly for identical inputs).
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

// Mean structural similarity with an 11x11 gaussian window (sigma 1.5),
// K1=0.01, K2=0.03, dynamic range 1.0. Only fully-covered window positions
// count; channels are scored independently and averaged.
double ssim(const Tensor& a, const Tensor& b);

}  // namespace uhd
