#pragma once

#include <string>

#include "uhdformer/model.hpp"
#include "uhdformer/train.hpp"

namespace uhd {

// Binary checkpoint: 8-byte magic "UHDFKPT1", a config echo, then one entry
// per parameter (name, dtype code, four extents, little-endian f32 payload).
// Optimizer state rides along under "opt." names when provided. Payloads are
// always f32; f64 models down-convert on save.
void save_checkpoint(const UHDformer& m, const std::string& path, const AdamWState* opt = nullptr);

// Validates the whole file against the model's registry before touching any
// parameter: on error (magic/format -> FormatError, name/shape/config
// mismatch -> ConfigError naming the first offender) the model is unchanged.
// When opt is non-null it is replaced by the stored state, or reset if the
// checkpoint carries none.
void load_checkpoint(UHDformer& m, const std::string& path, AdamWState* opt = nullptr);

// Reads only the config echo, e.g. to rebuild a matching model before loading.
UHDformerConfig checkpoint_config(const std::string& path);

// The config echo format: one "key=value" line per field.
std::string config_to_text(const UHDformerConfig& cfg);
UHDformerConfig config_from_text(const std::string& text);

}  // namespace uhd
