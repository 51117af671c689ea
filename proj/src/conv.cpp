#include <cmath>
#include <string>

#include "grad_accum.hpp"
#include "uhdformer/ops.hpp"
#include "uhdformer/parallel.hpp"

namespace uhd {

namespace {

using detail::accum;
using detail::recording_tape;

struct ConvDims {
    int64_t n, in_c, h, w;
    int64_t out_c, icg, kh, kw;  // icg = in channels per group
    int64_t stride, pad, groups, ocg;
    int64_t oh, ow;
    bool pointwise;  // 1x1 / stride 1 / pad 0 / groups 1 fast path
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b, int64_t stride,
                   int64_t pad, int64_t groups) {
    if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
    if (pad < 0) throw ContractError("conv2d: pad must be >= 0");
    if (groups < 1) throw ContractError("conv2d: groups must be >= 1");
    const auto& sx = x.shape();
    const auto& sw = w.shape();
    ConvDims d{};
    d.n = sx.n();
    d.in_c = sx.c();
    d.h = sx.h();
    d.w = sx.w();
    d.out_c = sw.n();
    d.icg = sw.c();
    d.kh = sw.h();
    d.kw = sw.w();
    d.stride = stride;
    d.pad = pad;
    d.groups = groups;
    if (d.in_c % groups != 0 || d.out_c % groups != 0)
        throw ShapeError("conv2d: channels " + std::to_string(d.in_c) + "->" + std::to_string(d.out_c) +
                         " not divisible by " + std::to_string(groups) + " groups");
    if (d.icg != d.in_c / groups)
        throw ShapeError("conv2d: weight " + sw.str() + " does not match input " + sx.str() + " with " +
                         std::to_string(groups) + " groups");
    d.ocg = d.out_c / groups;
    if (w.dtype() != x.dtype()) throw ShapeError("conv2d: weight dtype differs from input");
    if (b) {
        if (b->shape() != Shape(1, d.out_c, 1, 1))
            throw ShapeError("conv2d: bias must be " + Shape(1, d.out_c, 1, 1).str() + ", got " + b->shape().str());
        if (b->dtype() != x.dtype()) throw ShapeError("conv2d: bias dtype differs from input");
    }
    d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
    d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
    if (d.h + 2 * pad < d.kh || d.w + 2 * pad < d.kw || d.oh < 1 || d.ow < 1)
        throw ShapeError("conv2d: kernel " + sw.str() + " does not fit input " + sx.str() + " with pad " +
                         std::to_string(pad));
    d.pointwise = d.kh == 1 && d.kw == 1 && stride == 1 && pad == 0 && groups == 1;
    return d;
}

template <typename T>
void forward_pointwise(const ConvDims& d, std::span<const T> px, std::span<const T> pw,
                       const T* pb, std::span<T> po) {
    const int64_t plane = d.h * d.w;
    parallel_for(d.n * d.out_c, [&](int64_t lo, int64_t hi) {
        for (int64_t t = lo; t < hi; ++t) {
            const int64_t n = t / d.out_c, oc = t % d.out_c;
            T* dst = po.data() + t * plane;
            const T bias = pb ? pb[oc] : T(0);
            for (int64_t i = 0; i < plane; ++i) dst[i] = bias;
            for (int64_t ic = 0; ic < d.in_c; ++ic) {
                const T wv = pw[oc * d.in_c + ic];
                const T* src = px.data() + (n * d.in_c + ic) * plane;
                for (int64_t i = 0; i < plane; ++i) dst[i] += wv * src[i];
            }
        }
    });
}

template <typename T>
void forward_general(const ConvDims& d, std::span<const T> px, std::span<const T> pw,
                     const T* pb, std::span<T> po) {
    parallel_for(d.n * d.out_c, [&](int64_t lo, int64_t hi) {
        for (int64_t t = lo; t < hi; ++t) {
            const int64_t n = t / d.out_c, oc = t % d.out_c;
            const int64_t ic0 = (oc / d.ocg) * d.icg;
            T* dst = po.data() + t * d.oh * d.ow;
            const T* wbase = pw.data() + oc * d.icg * d.kh * d.kw;
            for (int64_t r = 0; r < d.oh; ++r)
                for (int64_t q = 0; q < d.ow; ++q) {
                    double acc = pb ? static_cast<double>(pb[oc]) : 0.0;
                    for (int64_t ic = 0; ic < d.icg; ++ic) {
                        const T* src = px.data() + (n * d.in_c + ic0 + ic) * d.h * d.w;
                        const T* wk = wbase + ic * d.kh * d.kw;
                        for (int64_t ki = 0; ki < d.kh; ++ki) {
                            const int64_t ih = r * d.stride - d.pad + ki;
                            if (ih < 0 || ih >= d.h) continue;
                            for (int64_t kj = 0; kj < d.kw; ++kj) {
                                const int64_t iw = q * d.stride - d.pad + kj;
                                if (iw < 0 || iw >= d.w) continue;
                                acc += static_cast<double>(src[ih * d.w + iw]) *
                                       static_cast<double>(wk[ki * d.kw + kj]);
                            }
                        }
                    }
                    dst[r * d.ow + q] = static_cast<T>(acc);
                }
        }
    });
}

// dx via gather: each input position sums the output taps that read it.
template <typename T>
void backward_input(const ConvDims& d, std::span<const T> pg, std::span<const T> pw, std::span<T> pdx) {
    if (d.pointwise) {
        const int64_t plane = d.h * d.w;
        parallel_for(d.n * d.in_c, [&](int64_t lo, int64_t hi) {
            for (int64_t t = lo; t < hi; ++t) {
                const int64_t n = t / d.in_c, ic = t % d.in_c;
                T* dst = pdx.data() + t * plane;
                for (int64_t oc = 0; oc < d.out_c; ++oc) {
                    const T wv = pw[oc * d.in_c + ic];
                    const T* src = pg.data() + (n * d.out_c + oc) * plane;
                    for (int64_t i = 0; i < plane; ++i) dst[i] += wv * src[i];
                }
            }
        });
        return;
    }
    parallel_for(d.n * d.in_c, [&](int64_t lo, int64_t hi) {
        for (int64_t t = lo; t < hi; ++t) {
            const int64_t n = t / d.in_c, ic = t % d.in_c;
            const int64_t g = ic / d.icg;
            const int64_t icw = ic % d.icg;  // position inside the group slice of w
            T* dst = pdx.data() + t * d.h * d.w;
            for (int64_t ih = 0; ih < d.h; ++ih)
                for (int64_t iw = 0; iw < d.w; ++iw) {
                    double acc = 0.0;
                    for (int64_t ki = 0; ki < d.kh; ++ki) {
                        const int64_t num_r = ih + d.pad - ki;
                        if (num_r < 0 || num_r % d.stride != 0) continue;
                        const int64_t r = num_r / d.stride;
                        if (r >= d.oh) continue;
                        for (int64_t kj = 0; kj < d.kw; ++kj) {
                            const int64_t num_q = iw + d.pad - kj;
                            if (num_q < 0 || num_q % d.stride != 0) continue;
                            const int64_t q = num_q / d.stride;
                            if (q >= d.ow) continue;
                            for (int64_t oc = g * d.ocg; oc < (g + 1) * d.ocg; ++oc)
                                acc += static_cast<double>(pg[((n * d.out_c + oc) * d.oh + r) * d.ow + q]) *
                                       static_cast<double>(
                                           pw[((oc * d.icg + icw) * d.kh + ki) * d.kw + kj]);
                        }
                    }
                    dst[ih * d.w + iw] += static_cast<T>(acc);
                }
        }
    });
}

template <typename T>
void backward_weight(const ConvDims& d, std::span<const T> pg, std::span<const T> px, std::span<T> pdw) {
    if (d.pointwise) {
        const int64_t plane = d.h * d.w;
        parallel_for(d.out_c, [&](int64_t lo, int64_t hi) {
            for (int64_t oc = lo; oc < hi; ++oc)
                for (int64_t ic = 0; ic < d.in_c; ++ic) {
                    double acc = 0.0;
                    for (int64_t n = 0; n < d.n; ++n) {
                        const T* g = pg.data() + (n * d.out_c + oc) * plane;
                        const T* x = px.data() + (n * d.in_c + ic) * plane;
                        for (int64_t i = 0; i < plane; ++i)
                            acc += static_cast<double>(g[i]) * static_cast<double>(x[i]);
                    }
                    pdw[oc * d.in_c + ic] += static_cast<T>(acc);
                }
        });
        return;
    }
    parallel_for(d.out_c, [&](int64_t lo, int64_t hi) {
        for (int64_t oc = lo; oc < hi; ++oc) {
            const int64_t ic0 = (oc / d.ocg) * d.icg;
            T* wslice = pdw.data() + oc * d.icg * d.kh * d.kw;
            for (int64_t ic = 0; ic < d.icg; ++ic)
                for (int64_t ki = 0; ki < d.kh; ++ki)
                    for (int64_t kj = 0; kj < d.kw; ++kj) {
                        double acc = 0.0;
                        for (int64_t n = 0; n < d.n; ++n) {
                            const T* g = pg.data() + (n * d.out_c + oc) * d.oh * d.ow;
                            const T* x = px.data() + (n * d.in_c + ic0 + ic) * d.h * d.w;
                            for (int64_t r = 0; r < d.oh; ++r) {
                                const int64_t ih = r * d.stride - d.pad + ki;
                                if (ih < 0 || ih >= d.h) continue;
                                for (int64_t q = 0; q < d.ow; ++q) {
                                    const int64_t iw = q * d.stride - d.pad + kj;
                                    if (iw < 0 || iw >= d.w) continue;
                                    acc += static_cast<double>(g[r * d.ow + q]) *
                                           static_cast<double>(x[ih * d.w + iw]);
                                }
                            }
                        }
                        wslice[(ic * d.kh + ki) * d.kw + kj] += static_cast<T>(acc);
                    }
        }
    });
}

template <typename T>
void backward_bias(const ConvDims& d, std::span<const T> pg, std::span<T> pdb) {
    parallel_for(d.out_c, [&](int64_t lo, int64_t hi) {
        for (int64_t oc = lo; oc < hi; ++oc) {
            double acc = 0.0;
            for (int64_t n = 0; n < d.n; ++n) {
                const T* g = pg.data() + (n * d.out_c + oc) * d.oh * d.ow;
                for (int64_t i = 0; i < d.oh * d.ow; ++i) acc += static_cast<double>(g[i]);
            }
            pdb[oc] += static_cast<T>(acc);
        }
    });
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b, int64_t stride,
              int64_t pad, int64_t groups) {
    const ConvDims d = conv_dims(x, w, b, stride, pad, groups);
    Tensor out(Shape(d.n, d.out_c, d.oh, d.ow), x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        const T* pb = b ? b->data<T>().data() : nullptr;
        if (d.pointwise)
            forward_pointwise<T>(d, x.data<T>(), w.data<T>(), pb, out.data<T>());
        else
            forward_general<T>(d, x.data<T>(), w.data<T>(), pb, out.data<T>());
    });

    Tape* tp = b ? recording_tape({&x, &w, &*b}) : recording_tape({&x, &w});
    if (tp) {
        Tensor cx = x, cw = w;
        std::optional<Tensor> cb = b;
        tp->record(out, [cx, cw, cb, d](Tape& t, int32_t self) {
            const Tensor& go = t.grad_buf(self);
            dispatch(cx.dtype(), [&]<typename T>() {
                auto pg = go.data<T>();
                if (t.node_of(cx) >= 0) {
                    Tensor dx = Tensor::zeros(cx.shape(), cx.dtype());
                    backward_input<T>(d, pg, cw.data<T>(), dx.data<T>());
                    accum(t, cx, dx);
                }
                if (t.node_of(cw) >= 0) {
                    Tensor dw = Tensor::zeros(cw.shape(), cw.dtype());
                    backward_weight<T>(d, pg, cx.data<T>(), dw.data<T>());
                    if (hooks::corrupt_conv_weight_grad) {
                        auto p = dw.data<T>();
                        for (auto& v : p) v = -v;
                    }
                    accum(t, cw, dw);
                }
                if (cb && t.node_of(*cb) >= 0) {
                    Tensor db = Tensor::zeros(cb->shape(), cb->dtype());
                    backward_bias<T>(d, pg, db.data<T>());
                    accum(t, *cb, db);
                }
            });
        });
    }
    return out;
}

}  // namespace uhd
