#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "uhdformer/tensor.hpp"

namespace uhd {

// One acceptance check: a stable name, a verdict, and a one-line summary of
// the measured numbers (counts, worst errors, dB gains, wall time).
struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct SelfTestReport {
    std::vector<CheckResult> checks;
    bool all_pass() const;
};

struct SelfTestOptions {
    bool full = true;          // quick mode trims runtime to well under a minute
    std::string only;          // when set, run only checks whose name contains it
    std::ostream* log = nullptr;  // progress lines while running
};

// Runs the invariant suite: selection oracle, gradient checks, residual
// identities, structural invariants, parameter budget, overfit training run,
// ablation direction, and metric closed forms. The expensive training
// criteria only run at the full level.
SelfTestReport run_selftest(const SelfTestOptions& opts);

// Procedural stand-in for a clean photograph: smooth low-frequency shading,
// a few soft blobs and a slight per-channel tint, all values inside (0,1).
// Deterministic per (seed, extent).
Tensor make_clean_image(uint64_t seed, int64_t h, int64_t w, DType dt = DType::F32);

}  // namespace uhd
