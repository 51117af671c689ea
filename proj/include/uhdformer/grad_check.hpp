#pragma once

#include <functional>
#include <span>
#include <string>

#include "uhdformer/tape.hpp"
#include "uhdformer/tensor.hpp"

namespace uhd {

// Comparison of tape gradients against central differences. Relative error
// uses max(|analytic|, |numeric|, 1e-8) as denominator, so tiny gradients
// degrade gracefully to an absolute comparison.
struct GradCheckResult {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    int64_t worst_param = -1;  // index into the checked parameter list
    int64_t worst_elem = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    int64_t checked = 0;

    bool ok(double tol) const { return max_rel_err <= tol; }
    std::string str() const;
};

struct GradCheckOpts {
    double eps = 1e-5;
    // Cap on elements checked per parameter; negative means all. Sampling
    // uses sample_seed, so subsets are reproducible.
    int64_t max_elems_per_param = -1;
    uint64_t sample_seed = 0x5eed;
};

// Checks d f(x) / dx for a scalar-valued f. f must be a pure function of the
// values in x; it is called repeatedly with perturbed copies.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           const GradCheckOpts& opts = {});

// Checks the gradient of f() with respect to a set of leaf parameters that f
// reads through shared storage. Parameters are perturbed in place and
// restored.
GradCheckResult grad_check_params(const std::function<Tensor()>& f, std::span<const Tensor> params,
                                  const GradCheckOpts& opts = {});

}  // namespace uhd
