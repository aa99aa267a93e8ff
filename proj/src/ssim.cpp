#include "occsplat/ssim.hpp"

#include "occsplat/errors.hpp"

#include <cmath>
#include <vector>

namespace occsplat {

namespace {

// Single-channel H×W plane.
using Plane = std::vector<double>;

std::vector<double> gaussian_kernel(const SsimParams& p) {
    std::vector<double> k(static_cast<std::size_t>(p.window));
    const int half = p.window / 2;
    for (int i = 0; i < p.window; ++i) {
        const double d = i - half;
        k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * p.sigma * p.sigma));
    }
    return k;
}

class Blur {
public:
    Blur(int h, int w, const SsimParams& p) : h_(h), w_(w), k_(gaussian_kernel(p)), half_(p.window / 2) {
        zx_ = norms(w_);
        zy_ = norms(h_);
    }

    // Normalized separable filter.
    Plane apply(const Plane& x) const { return pass_y(pass_x(x, zx_, false), zy_, false); }

    // Adjoint of apply.
    Plane adjoint(const Plane& g) const { return pass_x(pass_y(g, zy_, true), zx_, true); }

private:
    std::vector<double> norms(int n) const {
        std::vector<double> z(static_cast<std::size_t>(n), 0.0);
        for (int i = 0; i < n; ++i) {
            for (int o = -half_; o <= half_; ++o) {
                if (i + o >= 0 && i + o < n) {
                    z[static_cast<std::size_t>(i)] += k_[static_cast<std::size_t>(o + half_)];
                }
            }
        }
        return z;
    }

    // Forward: out[i] = Σ_o k[o] x[i+o] / z[i]. Adjoint: out[j] = Σ_o k[o] g[j−o] / z[j−o].
    // The kernel is symmetric, so both are a convolution; the adjoint divides before summing.
    Plane pass_x(const Plane& x, const std::vector<double>& z, bool adjoint) const {
        Plane out(x.size(), 0.0);
        for (int y = 0; y < h_; ++y) {
            const double* row = x.data() + static_cast<std::size_t>(y) * w_;
            double* dst = out.data() + static_cast<std::size_t>(y) * w_;
            for (int i = 0; i < w_; ++i) {
                double acc = 0.0;
                for (int o = -half_; o <= half_; ++o) {
                    const int j = i + o;
                    if (j < 0 || j >= w_) {
                        continue;
                    }
                    const double kv = k_[static_cast<std::size_t>(o + half_)];
                    acc += adjoint ? kv * row[j] / z[static_cast<std::size_t>(j)] : kv * row[j];
                }
                dst[i] = adjoint ? acc : acc / z[static_cast<std::size_t>(i)];
            }
        }
        return out;
    }

    Plane pass_y(const Plane& x, const std::vector<double>& z, bool adjoint) const {
        Plane out(x.size(), 0.0);
        for (int y = 0; y < h_; ++y) {
            for (int i = 0; i < w_; ++i) {
                double acc = 0.0;
                for (int o = -half_; o <= half_; ++o) {
                    const int j = y + o;
                    if (j < 0 || j >= h_) {
                        continue;
                    }
                    const double kv = k_[static_cast<std::size_t>(o + half_)];
                    const double v = x[static_cast<std::size_t>(j) * w_ + i];
                    acc += adjoint ? kv * v / z[static_cast<std::size_t>(j)] : kv * v;
                }
                out[static_cast<std::size_t>(y) * w_ + i] = adjoint ? acc : acc / z[static_cast<std::size_t>(y)];
            }
        }
        return out;
    }

    int h_, w_;
    std::vector<double> k_;
    int half_;
    std::vector<double> zx_, zy_;
};

Plane channel(const Image& img, int c) {
    Plane p(img.pixels());
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = img.data[i * static_cast<std::size_t>(img.channels) + static_cast<std::size_t>(c)];
    }
    return p;
}

SsimResult run(const Image& a, const Image& b, const SsimParams& p, bool want_grad) {
    if (!a.same_shape(b)) {
        throw InvalidInput("SSIM inputs differ in shape");
    }
    if (p.window < 1 || p.window % 2 == 0 || !(p.sigma > 0.0)) {
        throw InvalidInput("SSIM window must be odd and positive with positive std");
    }
    SsimResult res;
    if (want_grad) {
        res.d_a = Image(a.height, a.width, a.channels);
    }
    const Blur blur(a.height, a.width, p);
    const std::size_t npix = a.pixels();
    const double norm = 1.0 / static_cast<double>(npix * static_cast<std::size_t>(a.channels));
    double total = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        const Plane x = channel(a, c);
        const Plane y = channel(b, c);
        Plane xx(npix), yy(npix), xy(npix);
        for (std::size_t i = 0; i < npix; ++i) {
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const Plane mx = blur.apply(x), my = blur.apply(y);
        const Plane exx = blur.apply(xx), eyy = blur.apply(yy), exy = blur.apply(xy);
        Plane g_mu(npix), g_xx(npix), g_xy(npix);
        for (std::size_t i = 0; i < npix; ++i) {
            const double a1 = 2.0 * mx[i] * my[i] + p.c1;
            const double a2 = 2.0 * (exy[i] - mx[i] * my[i]) + p.c2;
            const double b1 = mx[i] * mx[i] + my[i] * my[i] + p.c1;
            const double b2 = (exx[i] - mx[i] * mx[i]) + (eyy[i] - my[i] * my[i]) + p.c2;
            const double d = b1 * b2;
            const double s = a1 * a2 / d;
            total += s;
            if (want_grad) {
                g_mu[i] = norm * (2.0 * my[i] * (a2 - a1) - s * 2.0 * mx[i] * (b2 - b1)) / d;
                g_xx[i] = norm * (-s / b2);
                g_xy[i] = norm * (2.0 * a1 / d);
            }
        }
        if (want_grad) {
            const Plane t_mu = blur.adjoint(g_mu), t_xx = blur.adjoint(g_xx), t_xy = blur.adjoint(g_xy);
            for (std::size_t i = 0; i < npix; ++i) {
                res.d_a.data[i * static_cast<std::size_t>(a.channels) + static_cast<std::size_t>(c)] =
                    t_mu[i] + 2.0 * x[i] * t_xx[i] + y[i] * t_xy[i];
            }
        }
    }
    res.ssim = total * norm;
    return res;
}

} // namespace

double ssim(const Image& a, const Image& b, const SsimParams& p) { return run(a, b, p, false).ssim; }

SsimResult ssim_with_grad(const Image& a, const Image& b, const SsimParams& p) { return run(a, b, p, true); }

} // namespace occsplat
