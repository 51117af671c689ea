#include "uhdformer/metrics.hpp"

#include <cmath>
#include <vector>

#include "uhdformer/parallel.hpp"

namespace uhd {

double psnr(const Tensor& a, const Tensor& b, double peak) {
    check_same(a, b, "psnr");
    double se = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = a.at(i) - b.at(i);
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.numel());
    if (mse == 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(peak * peak / mse));
}

namespace {

constexpr int64_t kWin = 11;
constexpr double kC1 = 0.01 * 0.01;  // (K1*L)^2 with L = 1
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> ssim_window() {
    std::vector<double> w(static_cast<size_t>(kWin * kWin));
    const double sigma = 1.5;
    double sum = 0.0;
    for (int64_t i = 0; i < kWin; ++i)
        for (int64_t j = 0; j < kWin; ++j) {
            const double di = static_cast<double>(i - kWin / 2);
            const double dj = static_cast<double>(j - kWin / 2);
            const double v = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
            w[static_cast<size_t>(i * kWin + j)] = v;
            sum += v;
        }
    for (double& v : w) v /= sum;
    return w;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
    check_same(a, b, "ssim");
    const auto& sh = a.shape();
    if (sh.h() < kWin || sh.w() < kWin)
        throw SizeError("ssim: spatial extents of " + sh.str() + " are below the 11x11 window");

    static const std::vector<double> win = ssim_window();
    const int64_t planes = sh.n() * sh.c();
    const int64_t oh = sh.h() - kWin + 1, ow = sh.w() - kWin + 1;
    std::vector<double> plane_mean(static_cast<size_t>(planes), 0.0);

    dispatch(a.dtype(), [&]<typename T>() {
        auto pa = a.data<T>();
        auto pb = b.data<T>();
        parallel_for(planes, [&](int64_t p0, int64_t p1) {
            for (int64_t p = p0; p < p1; ++p) {
                const T* xa = pa.data() + p * sh.h() * sh.w();
                const T* xb = pb.data() + p * sh.h() * sh.w();
                double acc = 0.0;
                for (int64_t i = 0; i < oh; ++i)
                    for (int64_t j = 0; j < ow; ++j) {
                        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
                        for (int64_t wi = 0; wi < kWin; ++wi)
                            for (int64_t wj = 0; wj < kWin; ++wj) {
                                const double wgt = win[static_cast<size_t>(wi * kWin + wj)];
                                const double va = static_cast<double>(xa[(i + wi) * sh.w() + j + wj]);
                                const double vb = static_cast<double>(xb[(i + wi) * sh.w() + j + wj]);
                                mx += wgt * va;
                                my += wgt * vb;
                                xx += wgt * va * va;
                                yy += wgt * vb * vb;
                                xy += wgt * (va * vb);  // grouped so ssim(a,b) == ssim(b,a) exactly
                            }
                        const double sx = xx - mx * mx;
                        const double sy = yy - my * my;
                        const double sxy = xy - mx * my;
                        acc += ((2.0 * (mx * my) + kC1) * (2.0 * sxy + kC2)) /
                               ((mx * mx + my * my + kC1) * (sx + sy + kC2));
                    }
                plane_mean[static_cast<size_t>(p)] = acc / static_cast<double>(oh * ow);
            }
        });
    });

    double total = 0.0;
    for (double v : plane_mean) total += v;
    return total / static_cast<double>(planes);
}

}  // namespace uhd
