#pragma once

#include "occsplat/image.hpp"

namespace occsplat {

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double c1 = 0.01 * 0.01;
    double c2 = 0.03 * 0.03;
};

/// Mean SSIM over pixels and channels. Windows that overhang the border are
/// truncated and renormalized.
double ssim(const Image& a, const Image& b, const SsimParams& p = {});

struct SsimResult {
    double ssim = 1.0;
    /// d(mean SSIM)/d(a), same shape as a.
    Image d_a;
};

/// Mean SSIM with its gradient w.r.t. the first argument.
SsimResult ssim_with_grad(const Image& a, const Image& b, const SsimParams& p = {});

} // namespace occsplat
