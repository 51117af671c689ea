#include "uhdformer/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "uhdformer/rng.hpp"

namespace uhd {

namespace {

void observe(GradCheckResult& r, int64_t param, int64_t elem, double analytic, double numeric) {
    const double abs_err = std::abs(analytic - numeric);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double rel = abs_err / denom;
    ++r.checked;
    r.max_abs_err = std::max(r.max_abs_err, abs_err);
    if (rel > r.max_rel_err) {
        r.max_rel_err = rel;
        r.worst_param = param;
        r.worst_elem = elem;
        r.worst_analytic = analytic;
        r.worst_numeric = numeric;
    }
}

std::vector<int64_t> pick_elems(int64_t numel, const GradCheckOpts& opts, uint64_t salt) {
    std::vector<int64_t> idx(static_cast<size_t>(numel));
    std::iota(idx.begin(), idx.end(), 0);
    if (opts.max_elems_per_param < 0 || numel <= opts.max_elems_per_param) return idx;
    Rng rng = Rng::substream(opts.sample_seed, salt);
    // partial Fisher-Yates: the first max_elems entries become the sample
    for (int64_t i = 0; i < opts.max_elems_per_param; ++i) {
        const int64_t j = i + static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(numel - i)));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    idx.resize(static_cast<size_t>(opts.max_elems_per_param));
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace

std::string GradCheckResult::str() const {
    return "max_rel_err=" + std::to_string(max_rel_err) + " max_abs_err=" + std::to_string(max_abs_err) +
           " at param " + std::to_string(worst_param) + " elem " + std::to_string(worst_elem) +
           " (analytic " + std::to_string(worst_analytic) + ", numeric " + std::to_string(worst_numeric) +
           ", checked " + std::to_string(checked) + ")";
}

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           const GradCheckOpts& opts) {
    Tensor xw = x.clone();
    Tensor analytic;
    {
        Tape tape;
        tape.watch(xw);
        Tensor y = f(xw);
        if (y.numel() != 1) throw ContractError("grad_check: f must return a scalar");
        tape.backward(y);
        analytic = tape.grad(xw);
    }
    GradCheckResult r;
    for (int64_t i : pick_elems(xw.numel(), opts, 0)) {
        const double orig = xw.at(i);
        xw.set(i, orig + opts.eps);
        const double fp = f(xw).item();
        xw.set(i, orig - opts.eps);
        const double fm = f(xw).item();
        xw.set(i, orig);
        observe(r, 0, i, analytic.at(i), (fp - fm) / (2.0 * opts.eps));
    }
    return r;
}

GradCheckResult grad_check_params(const std::function<Tensor()>& f, std::span<const Tensor> params,
                                  const GradCheckOpts& opts) {
    std::vector<Tensor> grads;
    {
        Tape tape;
        for (const Tensor& p : params) tape.watch(p);
        Tensor y = f();
        if (y.numel() != 1) throw ContractError("grad_check_params: f must return a scalar");
        tape.backward(y);
        grads.reserve(params.size());
        for (const Tensor& p : params) grads.push_back(tape.grad(p));
    }
    GradCheckResult r;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];  // alias; in-place set() is visible to f
        for (int64_t i : pick_elems(p.numel(), opts, static_cast<uint64_t>(pi) + 1)) {
            const double orig = p.at(i);
            p.set(i, orig + opts.eps);
            const double fp = f().item();
            p.set(i, orig - opts.eps);
            const double fm = f().item();
            p.set(i, orig);
            observe(r, static_cast<int64_t>(pi), i, grads[pi].at(i), (fp - fm) / (2.0 * opts.eps));
        }
    }
    return r;
}

}  // namespace uhd
