#include "uhdformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "grad_accum.hpp"
#include "uhdformer/parallel.hpp"

namespace uhd {

namespace hooks {
bool corrupt_conv_weight_grad = false;
}

namespace {

using detail::accum;
using detail::accum_fill;
using detail::accum_mul;
using detail::accum_scaled;
using detail::dot_all;
using detail::recording_tape;

// Lines along the reduction axis for softmax / layer_norm: `lines` many runs
// of `extent` elements spaced by `step`.
struct LineSpec {
    int64_t lines;
    int64_t step;
    int64_t extent;
};

LineSpec line_spec(const Shape& s, SoftmaxAxis axis) {
    if (axis == SoftmaxAxis::Channel) return {s.n() * s.h() * s.w(), s.h() * s.w(), s.c()};
    return {s.n() * s.c() * s.h(), 1, s.w()};
}

int64_t line_base(const Shape& s, SoftmaxAxis axis, int64_t l) {
    if (axis == SoftmaxAxis::Channel) {
        const int64_t hw = s.h() * s.w();
        return (l / hw) * (s.c() * hw) + (l % hw);
    }
    return l * s.w();
}

void require_scalar(const Tensor& s, const char* op) {
    if (!s.defined() || s.numel() != 1)
        throw ContractError(std::string(op) + ": expected a single-element tensor");
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    check_same(a, b, "add");
    Tensor out(a.shape(), a.dtype());
    dispatch(a.dtype(), [&]<typename T>() {
        auto pa = a.data<T>();
        auto pb = b.data<T>();
        auto po = out.data<T>();
        for (size_t i = 0; i < po.size(); ++i) po[i] = pa[i] + pb[i];
    });
    if (Tape* tp = recording_tape({&a, &b})) {
        Tensor ca = a, cb = b;
        tp->record(out, [ca, cb](Tape& t, int32_t self) {
            const Tensor& go = t.grad_buf(self);
            accum(t, ca, go);
            accum(t, cb, go);
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same(a, b, "sub");
    Tensor out(a.shape(), a.dtype());
    dispatch(a.dtype(), [&]<typename T>() {
        auto pa = a.data<T>();
        auto pb = b.data<T>();
        auto po = out.data<T>();
        for (size_t i = 0; i < po.size(); ++i) po[i] = pa[i] - pb[i];
    });
    if (Tape* tp = recording_tape({&a, &b})) {
        Tensor ca = a, cb = b;
        tp->record(out, [ca, cb](Tape& t, int32_t self) {
            const Tensor& go = t.grad_buf(self);
            accum(t, ca, go);
            accum_scaled(t, cb, go, -1.0);
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same(a, b, "mul");
    Tensor out(a.shape(), a.dtype());
    dispatch(a.dtype(), [&]<typename T>() {
        auto pa = a.data<T>();
        auto pb = b.data<T>();
        auto po = out.data<T>();
        for (size_t i = 0; i < po.size(); ++i) po[i] = pa[i] * pb[i];
    });
    if (Tape* tp = recording_tape({&a, &b})) {
        Tensor ca = a, cb = b;
        tp->record(out, [ca, cb](Tape& t, int32_t self) {
            const Tensor& go = t.grad_buf(self);
            accum_mul(t, ca, go, cb);
            accum_mul(t, cb, go, ca);
        });
    }
    return out;
}

Tensor cmul(const Tensor& x, double c) {
    Tensor out(x.shape(), x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        auto px = x.data<T>();
        auto po = out.data<T>();
        const T cv = static_cast<T>(c);
        for (size_t i = 0; i < po.size(); ++i) po[i] = cv * px[i];
    });
    if (Tape* tp = recording_tape({&x})) {
        Tensor cx = x;
        tp->record(out, [cx, c](Tape& t, int32_t self) { accum_scaled(t, cx, t.grad_buf(self), c); });
    }
    return out;
}

Tensor scale(const Tensor& x, const Tensor& s) {
    require_scalar(s, "scale");
    if (s.dtype() != x.dtype())
        throw ShapeError(std::string("scale: dtypes ") + dtype_name(x.dtype()) + " and " + dtype_name(s.dtype()) + " differ");
    const double sv = s.at(0);
    Tensor out(x.shape(), x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        auto px = x.data<T>();
        auto po = out.data<T>();
        const T vv = static_cast<T>(sv);
        for (size_t i = 0; i < po.size(); ++i) po[i] = vv * px[i];
    });
    if (Tape* tp = recording_tape({&x, &s})) {
        Tensor cx = x, cs = s;
        tp->record(out, [cx, cs, sv](Tape& t, int32_t self) {
            const Tensor& go = t.grad_buf(self);
            accum_scaled(t, cx, go, sv);
            if (const int32_t id = t.node_of(cs); id >= 0) {
                Tensor& buf = t.grad_buf(id);
                buf.set(0, buf.at(0) + dot_all(go, cx));
            }
        });
    }
    return out;
}

Tensor recip(const Tensor& s, double floor) {
    require_scalar(s, "recip");
    if (floor <= 0.0) throw ContractError("recip: floor must be positive");
    const double v = s.at(0);
    const bool floored = std::abs(v) < floor;
    const double denom = floored ? (v < 0.0 ? -floor : floor) : v;
    Tensor out = Tensor::full(s.shape(), 1.0 / denom, s.dtype());
    if (Tape* tp = recording_tape({&s})) {
        Tensor cs = s;
        tp->record(out, [cs, v, floored](Tape& t, int32_t self) {
            if (floored) return;  // derivative pinned to 0 inside the floor
            if (const int32_t id = t.node_of(cs); id >= 0) {
                Tensor& buf = t.grad_buf(id);
                buf.set(0, buf.at(0) - t.grad_buf(self).at(0) / (v * v));
            }
        });
    }
    return out;
}

namespace {

constexpr double kGeluRoot = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;

}  // namespace

Tensor gelu(const Tensor& x) {
    Tensor out(x.shape(), x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        auto px = x.data<T>();
        auto po = out.data<T>();
        for (size_t i = 0; i < po.size(); ++i) {
            const double v = static_cast<double>(px[i]);
            const double u = kGeluRoot * (v + kGeluCubic * v * v * v);
            po[i] = static_cast<T>(0.5 * v * (1.0 + std::tanh(u)));
        }
    });
    if (Tape* tp = recording_tape({&x})) {
        Tensor cx = x;
        tp->record(out, [cx](Tape& t, int32_t self) {
            const int32_t id = t.node_of(cx);
            if (id < 0) return;
            const Tensor& go = t.grad_buf(self);
            Tensor& buf = t.grad_buf(id);
            dispatch(buf.dtype(), [&]<typename T>() {
                auto px = cx.data<T>();
                auto pg = go.data<T>();
                auto pb = buf.data<T>();
                for (size_t i = 0; i < pb.size(); ++i) {
                    const double v = static_cast<double>(px[i]);
                    const double u = kGeluRoot * (v + kGeluCubic * v * v * v);
                    const double th = std::tanh(u);
                    const double du = kGeluRoot * (1.0 + 3.0 * kGeluCubic * v * v);
                    const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
                    pb[i] += pg[i] * static_cast<T>(d);
                }
            });
        });
    }
    return out;
}

Tensor abs_val(const Tensor& x) {
    Tensor out(x.shape(), x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        auto px = x.data<T>();
        auto po = out.data<T>();
        for (size_t i = 0; i < po.size(); ++i) po[i] = px[i] < T(0) ? -px[i] : px[i];
    });
    if (Tape* tp = recording_tape({&x})) {
        Tensor cx = x;
        tp->record(out, [cx](Tape& t, int32_t self) {
            const int32_t id = t.node_of(cx);
            if (id < 0) return;
            const Tensor& go = t.grad_buf(self);
            Tensor& buf = t.grad_buf(id);
            dispatch(buf.dtype(), [&]<typename T>() {
                auto px = cx.data<T>();
                auto pg = go.data<T>();
                auto pb = buf.data<T>();
                for (size_t i = 0; i < pb.size(); ++i) {
                    if (px[i] > T(0))
                        pb[i] += pg[i];
                    else if (px[i] < T(0))
                        pb[i] -= pg[i];
                }
            });
        });
    }
    return out;
}

// ----------------------------------------------------------------- reductions

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    dispatch(x.dtype(), [&]<typename T>() {
        for (auto v : x.data<T>()) acc += static_cast<double>(v);
    });
    Tensor out = Tensor::full(Shape(1, 1, 1, 1), acc, x.dtype());
    if (Tape* tp = recording_tape({&x})) {
        Tensor cx = x;
        tp->record(out, [cx](Tape& t, int32_t self) { accum_fill(t, cx, t.grad_buf(self).at(0)); });
    }
    return out;
}

Tensor mean(const Tensor& x) {
    const int64_t n = x.numel();
    if (n == 0) throw ShapeError("mean: empty tensor");
    double acc = 0.0;
    dispatch(x.dtype(), [&]<typename T>() {
        for (auto v : x.data<T>()) acc += static_cast<double>(v);
    });
    Tensor out = Tensor::full(Shape(1, 1, 1, 1), acc / static_cast<double>(n), x.dtype());
    if (Tape* tp = recording_tape({&x})) {
        Tensor cx = x;
        const double inv = 1.0 / static_cast<double>(n);
        tp->record(out, [cx, inv](Tape& t, int32_t self) { accum_fill(t, cx, t.grad_buf(self).at(0) * inv); });
    }
    return out;
}

// ------------------------------------------------------------- normalization

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int64_t c = x.shape().c();
    const Shape want(1, c, 1, 1);
    if (gamma.shape() != want || beta.shape() != want)
        throw ShapeError("layer_norm: gamma/beta must be " + want.str() + ", got " + gamma.shape().str() + " and " +
                         beta.shape().str());
    if (gamma.dtype() != x.dtype() || beta.dtype() != x.dtype())
        throw ShapeError("layer_norm: parameter dtype differs from input");
    if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
    if (c < 1) throw ShapeError("layer_norm: no channels");

    const auto spec = line_spec(x.shape(), SoftmaxAxis::Channel);
    Tensor out(x.shape(), x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        auto px = x.data<T>();
        auto pgm = gamma.data<T>();
        auto pbt = beta.data<T>();
        auto po = out.data<T>();
        for (int64_t l = 0; l < spec.lines; ++l) {
            const int64_t base = line_base(x.shape(), SoftmaxAxis::Channel, l);
            double mu = 0.0;
            for (int64_t k = 0; k < spec.extent; ++k) mu += static_cast<double>(px[base + k * spec.step]);
            mu /= static_cast<double>(spec.extent);
            double var = 0.0;
            for (int64_t k = 0; k < spec.extent; ++k) {
                const double d = static_cast<double>(px[base + k * spec.step]) - mu;
                var += d * d;
            }
            var /= static_cast<double>(spec.extent);
            const double inv = 1.0 / std::sqrt(var + eps);
            for (int64_t k = 0; k < spec.extent; ++k) {
                const double xh = (static_cast<double>(px[base + k * spec.step]) - mu) * inv;
                po[base + k * spec.step] =
                    static_cast<T>(static_cast<double>(pgm[k]) * xh + static_cast<double>(pbt[k]));
            }
        }
    });

    if (Tape* tp = recording_tape({&x, &gamma, &beta})) {
        Tensor cx = x, cg = gamma, cb = beta;
        tp->record(out, [cx, cg, cb, eps, spec](Tape& t, int32_t self) {
            const Tensor& go = t.grad_buf(self);
            const int64_t c = cx.shape().c();
            Tensor dx = Tensor::zeros(cx.shape(), cx.dtype());
            Tensor dgm = Tensor::zeros(cg.shape(), cg.dtype());
            Tensor dbt = Tensor::zeros(cb.shape(), cb.dtype());
            dispatch(cx.dtype(), [&]<typename T>() {
                auto px = cx.data<T>();
                auto pgm = cg.data<T>();
                auto pg = go.data<T>();
                auto pdx = dx.data<T>();
                auto pdg = dgm.data<T>();
                auto pdb = dbt.data<T>();
                std::vector<double> xh(static_cast<size_t>(c));
                for (int64_t l = 0; l < spec.lines; ++l) {
                    const int64_t base = line_base(cx.shape(), SoftmaxAxis::Channel, l);
                    double mu = 0.0;
                    for (int64_t k = 0; k < c; ++k) mu += static_cast<double>(px[base + k * spec.step]);
                    mu /= static_cast<double>(c);
                    double var = 0.0;
                    for (int64_t k = 0; k < c; ++k) {
                        const double d = static_cast<double>(px[base + k * spec.step]) - mu;
                        var += d * d;
                    }
                    var /= static_cast<double>(c);
                    const double inv = 1.0 / std::sqrt(var + eps);
                    double m1 = 0.0, m2 = 0.0;
                    for (int64_t k = 0; k < c; ++k) {
                        xh[static_cast<size_t>(k)] = (static_cast<double>(px[base + k * spec.step]) - mu) * inv;
                        const double g = static_cast<double>(pg[base + k * spec.step]) * static_cast<double>(pgm[k]);
                        m1 += g;
                        m2 += g * xh[static_cast<size_t>(k)];
                    }
                    m1 /= static_cast<double>(c);
                    m2 /= static_cast<double>(c);
                    for (int64_t k = 0; k < c; ++k) {
                        const double g = static_cast<double>(pg[base + k * spec.step]) * static_cast<double>(pgm[k]);
                        pdx[base + k * spec.step] += static_cast<T>((g - m1 - xh[static_cast<size_t>(k)] * m2) * inv);
                        pdg[k] += static_cast<T>(static_cast<double>(pg[base + k * spec.step]) * xh[static_cast<size_t>(k)]);
                        pdb[k] += pg[base + k * spec.step];
                    }
                }
            });
            accum(t, cx, dx);
            accum(t, cg, dgm);
            accum(t, cb, dbt);
        });
    }
    return out;
}

Tensor softmax(const Tensor& x, SoftmaxAxis axis) {
    const auto spec = line_spec(x.shape(), axis);
    if (spec.extent < 1) throw ShapeError("softmax: empty axis in shape " + x.shape().str());
    Tensor out(x.shape(), x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        auto px = x.data<T>();
        auto po = out.data<T>();
        std::vector<double> e(static_cast<size_t>(spec.extent));
        for (int64_t l = 0; l < spec.lines; ++l) {
            const int64_t base = line_base(x.shape(), axis, l);
            double m = static_cast<double>(px[base]);
            for (int64_t k = 1; k < spec.extent; ++k)
                m = std::max(m, static_cast<double>(px[base + k * spec.step]));
            double s = 0.0;
            for (int64_t k = 0; k < spec.extent; ++k) {
                e[static_cast<size_t>(k)] = std::exp(static_cast<double>(px[base + k * spec.step]) - m);
                s += e[static_cast<size_t>(k)];
            }
            for (int64_t k = 0; k < spec.extent; ++k)
                po[base + k * spec.step] = static_cast<T>(e[static_cast<size_t>(k)] / s);
        }
    });
    if (Tape* tp = recording_tape({&x})) {
        Tensor cx = x, cy = out;
        tp->record(out, [cx, cy, axis, spec](Tape& t, int32_t self) {
            const int32_t id = t.node_of(cx);
            if (id < 0) return;
            const Tensor& go = t.grad_buf(self);
            Tensor& buf = t.grad_buf(id);
            dispatch(buf.dtype(), [&]<typename T>() {
                auto py = cy.data<T>();
                auto pg = go.data<T>();
                auto pb = buf.data<T>();
                for (int64_t l = 0; l < spec.lines; ++l) {
                    const int64_t base = line_base(cy.shape(), axis, l);
                    double dot = 0.0;
                    for (int64_t k = 0; k < spec.extent; ++k)
                        dot += static_cast<double>(pg[base + k * spec.step]) *
                               static_cast<double>(py[base + k * spec.step]);
                    for (int64_t k = 0; k < spec.extent; ++k) {
                        const int64_t i = base + k * spec.step;
                        pb[i] += static_cast<T>(static_cast<double>(py[i]) *
                                                (static_cast<double>(pg[i]) - dot));
                    }
                }
            });
        });
    }
    return out;
}

// -------------------------------------------------------------- rearrangement

namespace {

// out(n, c*s*s, h/s, w/s) <- in(n, c, h, w)
void unshuffle_kernel(const Tensor& in, Tensor& out, int64_t s) {
    const auto& sh = in.shape();
    const int64_t c = sh.c(), h = sh.h(), w = sh.w();
    const int64_t oh = h / s, ow = w / s;
    dispatch(in.dtype(), [&]<typename T>() {
        auto pi = in.data<T>();
        auto po = out.data<T>();
        for (int64_t n = 0; n < sh.n(); ++n)
            for (int64_t ci = 0; ci < c; ++ci)
                for (int64_t ih = 0; ih < h; ++ih) {
                    const int64_t r = ih / s, si = ih % s;
                    const int64_t in_row = ((n * c + ci) * h + ih) * w;
                    for (int64_t iw = 0; iw < w; ++iw) {
                        const int64_t q = iw / s, sj = iw % s;
                        const int64_t oc = ci * s * s + si * s + sj;
                        po[((n * c * s * s + oc) * oh + r) * ow + q] = pi[in_row + iw];
                    }
                }
    });
}

// out(n, c/(s*s), h*s, w*s) <- in(n, c, h, w)
void shuffle_kernel(const Tensor& in, Tensor& out, int64_t s) {
    const auto& sh = in.shape();
    const int64_t c = sh.c(), h = sh.h(), w = sh.w();
    const int64_t oc = c / (s * s), ohh = h * s, oww = w * s;
    dispatch(in.dtype(), [&]<typename T>() {
        auto pi = in.data<T>();
        auto po = out.data<T>();
        for (int64_t n = 0; n < sh.n(); ++n)
            for (int64_t ci = 0; ci < c; ++ci) {
                const int64_t base = ci / (s * s);
                const int64_t si = (ci / s) % s, sj = ci % s;
                for (int64_t ih = 0; ih < h; ++ih) {
                    const int64_t in_row = ((n * c + ci) * h + ih) * w;
                    const int64_t orow = ih * s + si;
                    for (int64_t iw = 0; iw < w; ++iw)
                        po[((n * oc + base) * ohh + orow) * oww + iw * s + sj] = pi[in_row + iw];
                }
            }
    });
}

}  // namespace

Tensor pixel_unshuffle(const Tensor& x, int64_t s) {
    if (s < 1) throw ContractError("pixel_unshuffle: factor must be >= 1");
    const auto& sh = x.shape();
    if (sh.h() % s != 0 || sh.w() % s != 0)
        throw ShapeError("pixel_unshuffle: spatial extents of " + sh.str() + " not divisible by " +
                         std::to_string(s));
    Tensor out(Shape(sh.n(), sh.c() * s * s, sh.h() / s, sh.w() / s), x.dtype());
    unshuffle_kernel(x, out, s);
    if (Tape* tp = recording_tape({&x})) {
        Tensor cx = x;
        tp->record(out, [cx, s](Tape& t, int32_t self) {
            const Tensor& go = t.grad_buf(self);
            Tensor dx(cx.shape(), cx.dtype());
            shuffle_kernel(go, dx, s);
            accum(t, cx, dx);
        });
    }
    return out;
}

Tensor pixel_shuffle(const Tensor& x, int64_t s) {
    if (s < 1) throw ContractError("pixel_shuffle: factor must be >= 1");
    const auto& sh = x.shape();
    if (sh.c() % (s * s) != 0)
        throw ShapeError("pixel_shuffle: channels of " + sh.str() + " not divisible by " + std::to_string(s * s));
    Tensor out(Shape(sh.n(), sh.c() / (s * s), sh.h() * s, sh.w() * s), x.dtype());
    shuffle_kernel(x, out, s);
    if (Tape* tp = recording_tape({&x})) {
        Tensor cx = x;
        tp->record(out, [cx, s](Tape& t, int32_t self) {
            const Tensor& go = t.grad_buf(self);
            Tensor dx(cx.shape(), cx.dtype());
            unshuffle_kernel(go, dx, s);
            accum(t, cx, dx);
        });
    }
    return out;
}

// -------------------------------------------------------------------- pooling

Tensor pool2d(const Tensor& x, PoolKind kind, int64_t k) {
    if (k < 1) throw ContractError("pool2d: kernel must be >= 1");
    const auto& sh = x.shape();
    if (sh.h() % k != 0 || sh.w() % k != 0)
        throw ShapeError("pool2d: spatial extents of " + sh.str() + " not divisible by " + std::to_string(k));
    const int64_t oh = sh.h() / k, ow = sh.w() / k;
    Tensor out(Shape(sh.n(), sh.c(), oh, ow), x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        auto px = x.data<T>();
        auto po = out.data<T>();
        const int64_t planes = sh.n() * sh.c();
        for (int64_t p = 0; p < planes; ++p) {
            const int64_t ib = p * sh.h() * sh.w();
            const int64_t ob = p * oh * ow;
            for (int64_t r = 0; r < oh; ++r)
                for (int64_t q = 0; q < ow; ++q) {
                    if (kind == PoolKind::Max) {
                        T best = px[ib + (r * k) * sh.w() + q * k];
                        for (int64_t di = 0; di < k; ++di)
                            for (int64_t dj = 0; dj < k; ++dj) {
                                const T v = px[ib + (r * k + di) * sh.w() + q * k + dj];
                                if (v > best) best = v;
                            }
                        po[ob + r * ow + q] = best;
                    } else {
                        double acc = 0.0;
                        for (int64_t di = 0; di < k; ++di)
                            for (int64_t dj = 0; dj < k; ++dj)
                                acc += static_cast<double>(px[ib + (r * k + di) * sh.w() + q * k + dj]);
                        po[ob + r * ow + q] = static_cast<T>(acc / static_cast<double>(k * k));
                    }
                }
        }
    });
    if (Tape* tp = recording_tape({&x})) {
        Tensor cx = x;
        tp->record(out, [cx, kind, k, oh, ow](Tape& t, int32_t self) {
            const int32_t id = t.node_of(cx);
            if (id < 0) return;
            const Tensor& go = t.grad_buf(self);
            Tensor& buf = t.grad_buf(id);
            const auto& sh = cx.shape();
            dispatch(buf.dtype(), [&]<typename T>() {
                auto px = cx.data<T>();
                auto pg = go.data<T>();
                auto pb = buf.data<T>();
                const int64_t planes = sh.n() * sh.c();
                for (int64_t p = 0; p < planes; ++p) {
                    const int64_t ib = p * sh.h() * sh.w();
                    const int64_t ob = p * oh * ow;
                    for (int64_t r = 0; r < oh; ++r)
                        for (int64_t q = 0; q < ow; ++q) {
                            const T g = pg[ob + r * ow + q];
                            if (kind == PoolKind::Mean) {
                                const T share = static_cast<T>(static_cast<double>(g) / static_cast<double>(k * k));
                                for (int64_t di = 0; di < k; ++di)
                                    for (int64_t dj = 0; dj < k; ++dj)
                                        pb[ib + (r * k + di) * sh.w() + q * k + dj] += share;
                            } else {
                                // route to the first (row-major) max position
                                int64_t bi = 0, bj = 0;
                                T best = px[ib + (r * k) * sh.w() + q * k];
                                for (int64_t di = 0; di < k; ++di)
                                    for (int64_t dj = 0; dj < k; ++dj) {
                                        const T v = px[ib + (r * k + di) * sh.w() + q * k + dj];
                                        if (v > best) {
                                            best = v;
                                            bi = di;
                                            bj = dj;
                                        }
                                    }
                                pb[ib + (r * k + bi) * sh.w() + q * k + bj] += g;
                            }
                        }
                }
            });
        });
    }
    return out;
}

// --------------------------------------------------------------------- matmul

namespace {

// Untaped batched GEMM with optional transposes on the trailing dims.
Tensor gemm_batched(const Tensor& a, const Tensor& b, bool ta, bool tb) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    const int64_t M = ta ? sa.w() : sa.h();
    const int64_t K = ta ? sa.h() : sa.w();
    const int64_t Kb = tb ? sb.w() : sb.h();
    const int64_t N = tb ? sb.h() : sb.w();
    if (sa.n() != sb.n() || sa.c() != sb.c())
        throw ShapeError("matmul: batch dims of " + sa.str() + " and " + sb.str() + " differ");
    if (K != Kb)
        throw ShapeError("matmul: inner extents of " + sa.str() + " and " + sb.str() + " do not compose");
    if (a.dtype() != b.dtype()) throw ShapeError("matmul: dtypes differ");

    Tensor out(Shape(sa.n(), sa.c(), M, N), a.dtype());
    const int64_t batches = sa.n() * sa.c();
    dispatch(a.dtype(), [&]<typename T>() {
        auto pa = a.data<T>();
        auto pb = b.data<T>();
        auto po = out.data<T>();
        const int64_t as = sa.h() * sa.w(), bs = sb.h() * sb.w(), os = M * N;
        const int64_t ald = sa.w(), bld = sb.w();
        parallel_for(batches, [&](int64_t lo, int64_t hi) {
            for (int64_t g = lo; g < hi; ++g) {
                const T* A = pa.data() + g * as;
                const T* B = pb.data() + g * bs;
                T* O = po.data() + g * os;
                for (int64_t i = 0; i < M; ++i)
                    for (int64_t j = 0; j < N; ++j) {
                        double acc = 0.0;
                        for (int64_t k = 0; k < K; ++k) {
                            const T av = ta ? A[k * ald + i] : A[i * ald + k];
                            const T bv = tb ? B[j * bld + k] : B[k * bld + j];
                            acc += static_cast<double>(av) * static_cast<double>(bv);
                        }
                        O[i * N + j] = static_cast<T>(acc);
                    }
            }
        });
    });
    return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    Tensor out = gemm_batched(a, b, trans_a, trans_b);
    if (Tape* tp = recording_tape({&a, &b})) {
        Tensor ca = a, cb = b;
        tp->record(out, [ca, cb, trans_a, trans_b](Tape& t, int32_t self) {
            const Tensor& go = t.grad_buf(self);
            if (t.node_of(ca) >= 0) {
                Tensor da = !trans_a ? (!trans_b ? gemm_batched(go, cb, false, true)   // dC·B^T
                                                : gemm_batched(go, cb, false, false))  // dC·B
                            : (!trans_b ? gemm_batched(cb, go, false, true)            // B·dC^T
                                        : gemm_batched(cb, go, true, true));           // B^T·dC^T
                accum(t, ca, da);
            }
            if (t.node_of(cb) >= 0) {
                Tensor db = !trans_b ? (!trans_a ? gemm_batched(ca, go, true, false)  // A^T·dC
                                                 : gemm_batched(ca, go, false, false))  // A·dC
                            : (!trans_a ? gemm_batched(go, ca, true, false)             // dC^T·A
                                        : gemm_batched(go, ca, true, true));            // dC^T·A^T
                accum(t, cb, db);
            }
        });
    }
    return out;
}

// ------------------------------------------------------------- channel moves

namespace {

// buf channels [off, off+gc) += g, per sample.
void add_into_channel_slice(Tensor& buf, const Tensor& g, int64_t off) {
    const auto& sb = buf.shape();
    const auto& sg = g.shape();
    const int64_t plane = sb.h() * sb.w();
    dispatch(buf.dtype(), [&]<typename T>() {
        auto pb = buf.data<T>();
        auto pg = g.data<T>();
        for (int64_t n = 0; n < sb.n(); ++n) {
            T* dst = pb.data() + (n * sb.c() + off) * plane;
            const T* src = pg.data() + n * sg.c() * plane;
            for (int64_t i = 0; i < sg.c() * plane; ++i) dst[i] += src[i];
        }
    });
}

}  // namespace

Tensor concat_channels(std::span<const Tensor> xs) {
    if (xs.empty()) throw ContractError("concat_channels: no inputs");
    const auto& s0 = xs[0].shape();
    int64_t ctot = 0;
    for (const Tensor& x : xs) {
        const auto& s = x.shape();
        if (s.n() != s0.n() || s.h() != s0.h() || s.w() != s0.w())
            throw ShapeError("concat_channels: shapes " + s0.str() + " and " + s.str() + " disagree");
        if (x.dtype() != xs[0].dtype()) throw ShapeError("concat_channels: dtypes differ");
        ctot += s.c();
    }
    Tensor out(Shape(s0.n(), ctot, s0.h(), s0.w()), xs[0].dtype());
    const int64_t plane = s0.h() * s0.w();
    dispatch(out.dtype(), [&]<typename T>() {
        auto po = out.data<T>();
        for (int64_t n = 0; n < s0.n(); ++n) {
            int64_t off = 0;
            for (const Tensor& x : xs) {
                auto px = x.data<T>();
                const int64_t cnt = x.shape().c() * plane;
                std::copy_n(px.data() + n * cnt, cnt, po.data() + (n * ctot + off) * plane);
                off += x.shape().c();
            }
        }
    });

    Tape* tp = Tape::active();
    bool tracked = false;
    if (tp)
        for (const Tensor& x : xs)
            if (tp->node_of(x) >= 0) tracked = true;
    if (tp && tracked) {
        std::vector<Tensor> cap(xs.begin(), xs.end());
        tp->record(out, [cap, plane, ctot](Tape& t, int32_t self) {
            const Tensor& go = t.grad_buf(self);
            int64_t off = 0;
            for (const Tensor& x : cap) {
                const int64_t xc = x.shape().c();
                if (const int32_t id = t.node_of(x); id >= 0) {
                    Tensor& buf = t.grad_buf(id);
                    dispatch(buf.dtype(), [&]<typename T>() {
                        auto pb = buf.data<T>();
                        auto pg = go.data<T>();
                        for (int64_t n = 0; n < x.shape().n(); ++n) {
                            const T* src = pg.data() + (n * ctot + off) * plane;
                            T* dst = pb.data() + n * xc * plane;
                            for (int64_t i = 0; i < xc * plane; ++i) dst[i] += src[i];
                        }
                    });
                }
                off += xc;
            }
        });
    }
    return out;
}

std::vector<Tensor> split_channels(const Tensor& x, std::span<const int64_t> sizes) {
    const auto& sh = x.shape();
    int64_t total = 0;
    for (int64_t s : sizes) {
        if (s < 1) throw ContractError("split_channels: part sizes must be positive");
        total += s;
    }
    if (total != sh.c())
        throw ShapeError("split_channels: sizes sum to " + std::to_string(total) + " but input has " +
                         std::to_string(sh.c()) + " channels");

    std::vector<Tensor> parts;
    parts.reserve(sizes.size());
    const int64_t plane = sh.h() * sh.w();
    Tape* tp = recording_tape({&x});
    Tensor cx = x;
    int64_t off = 0;
    for (int64_t cs : sizes) {
        Tensor part(Shape(sh.n(), cs, sh.h(), sh.w()), x.dtype());
        dispatch(x.dtype(), [&]<typename T>() {
            auto px = x.data<T>();
            auto pp = part.data<T>();
            for (int64_t n = 0; n < sh.n(); ++n)
                std::copy_n(px.data() + (n * sh.c() + off) * plane, cs * plane, pp.data() + n * cs * plane);
        });
        if (tp) {
            const int64_t part_off = off;
            tp->record(part, [cx, part_off](Tape& t, int32_t self) {
                if (const int32_t id = t.node_of(cx); id >= 0)
                    add_into_channel_slice(t.grad_buf(id), t.grad_buf(self), part_off);
            });
        }
        parts.push_back(std::move(part));
        off += cs;
    }
    return parts;
}

namespace {

Tensor select_channels_impl(const Tensor& x, const std::vector<std::vector<int64_t>>& idx, const char* op) {
    const auto& sh = x.shape();
    if (static_cast<int64_t>(idx.size()) != sh.n())
        throw ShapeError(std::string(op) + ": need one index list per sample");
    const int64_t k = idx.empty() ? 0 : static_cast<int64_t>(idx[0].size());
    if (k < 1) throw ContractError(std::string(op) + ": empty selection");
    for (const auto& row : idx) {
        if (static_cast<int64_t>(row.size()) != k)
            throw ShapeError(std::string(op) + ": ragged index lists");
        for (int64_t j : row)
            if (j < 0 || j >= sh.c())
                throw IndexError(std::string(op) + ": channel " + std::to_string(j) + " out of range [0," +
                                 std::to_string(sh.c()) + ")");
    }

    Tensor out(Shape(sh.n(), k, sh.h(), sh.w()), x.dtype());
    const int64_t plane = sh.h() * sh.w();
    dispatch(x.dtype(), [&]<typename T>() {
        auto px = x.data<T>();
        auto po = out.data<T>();
        for (int64_t n = 0; n < sh.n(); ++n)
            for (int64_t j = 0; j < k; ++j)
                std::copy_n(px.data() + (n * sh.c() + idx[static_cast<size_t>(n)][static_cast<size_t>(j)]) * plane,
                            plane, po.data() + (n * k + j) * plane);
    });

    if (Tape* tp = recording_tape({&x})) {
        Tensor cx = x;
        tp->record(out, [cx, idx, k, plane](Tape& t, int32_t self) {
            const int32_t id = t.node_of(cx);
            if (id < 0) return;
            const Tensor& go = t.grad_buf(self);
            Tensor& buf = t.grad_buf(id);
            const int64_t cin = cx.shape().c();
            dispatch(buf.dtype(), [&]<typename T>() {
                auto pg = go.data<T>();
                auto pb = buf.data<T>();
                for (int64_t n = 0; n < cx.shape().n(); ++n)
                    for (int64_t j = 0; j < k; ++j) {
                        const T* src = pg.data() + (n * k + j) * plane;
                        T* dst = pb.data() +
                                 (n * cin + idx[static_cast<size_t>(n)][static_cast<size_t>(j)]) * plane;
                        for (int64_t i = 0; i < plane; ++i) dst[i] += src[i];
                    }
            });
        });
    }
    return out;
}

}  // namespace

Tensor index_select_channels(const Tensor& x, std::span<const int64_t> idx) {
    std::vector<std::vector<int64_t>> rows(static_cast<size_t>(x.shape().n()),
                                           std::vector<int64_t>(idx.begin(), idx.end()));
    return select_channels_impl(x, rows, "index_select_channels");
}

Tensor gather_channels(const Tensor& x, const std::vector<std::vector<int64_t>>& idx) {
    return select_channels_impl(x, idx, "gather_channels");
}

Tensor reshape(const Tensor& x, const Shape& shape) {
    if (shape.numel() != x.numel())
        throw ShapeError("reshape: cannot view " + x.shape().str() + " as " + shape.str());
    Tensor out(shape, x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        auto px = x.data<T>();
        auto po = out.data<T>();
        std::copy(px.begin(), px.end(), po.begin());
    });
    if (Tape* tp = recording_tape({&x})) {
        Tensor cx = x;
        tp->record(out, [cx](Tape& t, int32_t self) {
            const int32_t id = t.node_of(cx);
            if (id < 0) return;
            const Tensor& go = t.grad_buf(self);
            Tensor& buf = t.grad_buf(id);
            dispatch(buf.dtype(), [&]<typename T>() {
                auto pg = go.data<T>();
                auto pb = buf.data<T>();
                for (size_t i = 0; i < pb.size(); ++i) pb[i] += pg[i];
            });
        });
    }
    return out;
}

Tensor clamp01(const Tensor& x) {
    if (recording_tape({&x}))
        throw ContractError("clamp01: not differentiable, do not use on tracked tensors");
    Tensor out(x.shape(), x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        auto px = x.data<T>();
        auto po = out.data<T>();
        for (size_t i = 0; i < po.size(); ++i) po[i] = std::clamp(px[i], T(0), T(1));
    });
    return out;
}

}  // namespace uhd
