#include <cmath>
#include <numbers>
#include <vector>

#include "grad_accum.hpp"
#include "uhdformer/ops.hpp"
#include "uhdformer/parallel.hpp"

namespace uhd {

namespace {

using detail::accum;
using detail::recording_tape;

// Twiddle tables for one axis: c[k*n+j] = cos(2*pi*k*j/n), s likewise.
struct Twiddle {
    std::vector<double> c, s;
    explicit Twiddle(int64_t n) : c(static_cast<size_t>(n * n)), s(static_cast<size_t>(n * n)) {
        for (int64_t k = 0; k < n; ++k)
            for (int64_t j = 0; j < n; ++j) {
                const double th = 2.0 * std::numbers::pi * static_cast<double>(k * j % n) / static_cast<double>(n);
                c[static_cast<size_t>(k * n + j)] = std::cos(th);
                s[static_cast<size_t>(k * n + j)] = std::sin(th);
            }
    }
};

// Full 2-D DFT of one plane with the e^{-i theta} kernel, row pass then
// column pass. in/out buffers are h*w doubles.
void dft_plane(const double* in, double* out_re, double* out_im, int64_t h, int64_t w,
               const Twiddle& th, const Twiddle& tw) {
    std::vector<double> tr(static_cast<size_t>(h * w)), ti(static_cast<size_t>(h * w));
    for (int64_t i = 0; i < h; ++i)
        for (int64_t v = 0; v < w; ++v) {
            double re = 0.0, im = 0.0;
            for (int64_t j = 0; j < w; ++j) {
                const double x = in[i * w + j];
                re += x * tw.c[static_cast<size_t>(v * w + j)];
                im -= x * tw.s[static_cast<size_t>(v * w + j)];
            }
            tr[static_cast<size_t>(i * w + v)] = re;
            ti[static_cast<size_t>(i * w + v)] = im;
        }
    for (int64_t u = 0; u < h; ++u)
        for (int64_t v = 0; v < w; ++v) {
            double re = 0.0, im = 0.0;
            for (int64_t i = 0; i < h; ++i) {
                const double a = tr[static_cast<size_t>(i * w + v)];
                const double b = ti[static_cast<size_t>(i * w + v)];
                const double cc = th.c[static_cast<size_t>(u * h + i)];
                const double ss = th.s[static_cast<size_t>(u * h + i)];
                re += a * cc + b * ss;
                im += b * cc - a * ss;
            }
            out_re[u * w + v] = re;
            out_im[u * w + v] = im;
        }
}

// Transforms every (n,c) plane of t; writes double planes via sink(plane, re, im).
template <typename T>
void dft_all_planes(const Tensor& t, const std::function<void(int64_t, const std::vector<double>&,
                                                              const std::vector<double>&)>& sink) {
    const auto& sh = t.shape();
    const int64_t h = sh.h(), w = sh.w(), planes = sh.n() * sh.c();
    const Twiddle th(h), tw(w);
    auto src = t.data<T>();
    std::vector<double> in(static_cast<size_t>(h * w)), re(in.size()), im(in.size());
    for (int64_t p = 0; p < planes; ++p) {
        for (int64_t i = 0; i < h * w; ++i) in[static_cast<size_t>(i)] = static_cast<double>(src[p * h * w + i]);
        dft_plane(in.data(), re.data(), im.data(), h, w, th, tw);
        sink(p, re, im);
    }
}

}  // namespace

ComplexPair dft2(const Tensor& x) {
    const auto& sh = x.shape();
    if (sh.h() < 1 || sh.w() < 1) throw ShapeError("dft2: empty plane in shape " + sh.str());
    Tensor re(sh, x.dtype());
    Tensor im(sh, x.dtype());
    const int64_t h = sh.h(), w = sh.w(), planes = sh.n() * sh.c();
    const Twiddle th(h), tw(w);
    dispatch(x.dtype(), [&]<typename T>() {
        auto px = x.data<T>();
        auto pre = re.data<T>();
        auto pim = im.data<T>();
        parallel_for(planes, [&](int64_t lo, int64_t hi) {
            std::vector<double> in(static_cast<size_t>(h * w)), ore(in.size()), oim(in.size());
            for (int64_t p = lo; p < hi; ++p) {
                for (int64_t i = 0; i < h * w; ++i)
                    in[static_cast<size_t>(i)] = static_cast<double>(px[p * h * w + i]);
                dft_plane(in.data(), ore.data(), oim.data(), h, w, th, tw);
                for (int64_t i = 0; i < h * w; ++i) {
                    pre[p * h * w + i] = static_cast<T>(ore[static_cast<size_t>(i)]);
                    pim[p * h * w + i] = static_cast<T>(oim[static_cast<size_t>(i)]);
                }
            }
        });
    });

    if (Tape* tp = recording_tape({&x})) {
        Tensor cx = x;
        // The adjoint of both outputs is one more forward transform of the
        // cotangent: d(re) flows back through its real part, d(im) through
        // its imaginary part.
        tp->record(re, [cx](Tape& t, int32_t self) {
            const int32_t id = t.node_of(cx);
            if (id < 0) return;
            Tensor& buf = t.grad_buf(id);
            const Tensor& go = t.grad_buf(self);
            dispatch(buf.dtype(), [&]<typename T>() {
                auto pb = buf.data<T>();
                const int64_t hw = cx.shape().h() * cx.shape().w();
                dft_all_planes<T>(go, [&](int64_t p, const std::vector<double>& r, const std::vector<double>&) {
                    for (int64_t i = 0; i < hw; ++i) pb[p * hw + i] += static_cast<T>(r[static_cast<size_t>(i)]);
                });
            });
        });
        tp->record(im, [cx](Tape& t, int32_t self) {
            const int32_t id = t.node_of(cx);
            if (id < 0) return;
            Tensor& buf = t.grad_buf(id);
            const Tensor& go = t.grad_buf(self);
            dispatch(buf.dtype(), [&]<typename T>() {
                auto pb = buf.data<T>();
                const int64_t hw = cx.shape().h() * cx.shape().w();
                dft_all_planes<T>(go, [&](int64_t p, const std::vector<double>&, const std::vector<double>& i2) {
                    for (int64_t i = 0; i < hw; ++i) pb[p * hw + i] += static_cast<T>(i2[static_cast<size_t>(i)]);
                });
            });
        });
    }
    return {re, im};
}

}  // namespace uhd
