#pragma once

#include "occsplat/geometry.hpp"
#include "occsplat/image.hpp"

#include <vector>

namespace occsplat {

struct RasterConfig {
    int tile_size = 16;
    /// Contributions with α·G below this are skipped.
    double alpha_min = 1.0 / 255.0;
    /// Blending stops once transmittance falls below this floor.
    double t_min = 1e-4;
    double alpha_max = 0.99;
    Vec3 background = Vec3::Zero();
    /// false renders every pixel against the full sorted list (reference path).
    bool tiled = true;

    void validate() const;
};

/// A projected Gaussian together with the attributes the blend needs.
struct Splat {
    Vec2 mean = Vec2::Zero();
    Mat2 cov = Mat2::Identity();
    double depth = 1.0;
    double opacity = 0.5;
    Vec3 color = Vec3::Zero();
    double sigma = 0.0;
    /// Index of the originating 3D Gaussian, carried through for reporting.
    int source = -1;
};

struct Contribution {
    int splat = 0;
    double transmittance = 1.0;
    double alpha = 0.0;
    bool clamped = false;
};

struct RenderOutput {
    Image color;
    Image uncertainty;
    Image opacity;
    Vec3 background = Vec3::Zero();
    int tile_size = 16;
    /// Splat indices in blend order (ascending depth, ties by index).
    std::vector<int> order;
    /// Front-to-back contributors of every pixel, row-major.
    std::vector<std::vector<Contribution>> contributors;
    std::vector<double> final_transmittance;

    bool has_cache() const { return contributors.size() == color.pixels() && color.pixels() > 0; }
};

RenderOutput rasterize(const std::vector<Splat>& splats, int height, int width, const RasterConfig& cfg);

struct SplatGrad {
    Vec2 mean = Vec2::Zero();
    /// Full-matrix gradient on Σ′ (symmetric).
    Mat2 cov = Mat2::Zero();
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
    double sigma = 0.0;
};

/// Adjoint of rasterize. Any of the upstream images may be null (treated as
/// zero). Per-splat sums are reduced tile by tile in a fixed order, so the
/// result does not depend on the worker count.
std::vector<SplatGrad> rasterize_backward(const std::vector<Splat>& splats, const RenderOutput& out,
                                          const Image* dL_dcolor, const Image* dL_duncertainty,
                                          const Image* dL_dopacity);

} // namespace occsplat
