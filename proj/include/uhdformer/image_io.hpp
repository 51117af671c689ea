#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uhdformer/tensor.hpp"

namespace uhd {

struct ImageBuffer {
    int64_t width = 0, height = 0;
    std::vector<uint8_t> pixels;  // interleaved RGB, row-major
};

// Reads an 8-bit RGB image, auto-detected by magic bytes: PNG (color type 2,
// all five scanline filters) or binary PPM (P6, maxval 255). Corrupt input
// raises FormatError with the offending byte offset; unreadable files IoError.
ImageBuffer read_image(const std::string& path);

// Writes atomically; the extension picks the format (.png or .ppm).
void write_image(const std::string& path, const ImageBuffer& buf);

// Conversions: value = byte/255; byte = round(clamp(value, 0, 1) * 255).
Tensor image_to_tensor(const ImageBuffer& buf, DType dt = DType::F32);  // (1,3,h,w)
ImageBuffer tensor_to_image(const Tensor& t);                           // expects (1,3,h,w)

}  // namespace uhd
