#include "occsplat/render.hpp"

#include "occsplat/errors.hpp"
#include "occsplat/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace occsplat {

void RasterConfig::validate() const {
    if (tile_size < 1) {
        throw InvalidInput("tile size must be at least 1");
    }
    if (!(t_min > 0.0 && t_min < 1.0)) {
        throw InvalidInput("transmittance floor must lie in (0, 1)");
    }
    if (!(alpha_min > 0.0 && alpha_min < 1.0) || !(alpha_max > 0.0 && alpha_max < 1.0)) {
        throw InvalidInput("alpha thresholds must lie in (0, 1)");
    }
}

namespace {

struct Prepared {
    Mat2 conic;
    // Half-width of the box outside which α·G < alpha_min.
    double radius = -1.0;
};

Prepared prepare(const Splat& s, double alpha_min) {
    Prepared p;
    p.conic = s.cov.inverse();
    if (s.opacity < alpha_min) {
        return p;
    }
    const double mid = 0.5 * (s.cov(0, 0) + s.cov(1, 1));
    const double det = s.cov.determinant();
    const double lmax = mid + std::sqrt(std::max(0.0, mid * mid - det));
    p.radius = std::sqrt(2.0 * std::log(s.opacity / alpha_min) * lmax) + 1.0;
    return p;
}

struct Tile {
    int x0, y0, x1, y1;
};

std::vector<Tile> make_tiles(int height, int width, int size) {
    std::vector<Tile> tiles;
    for (int y = 0; y < height; y += size) {
        for (int x = 0; x < width; x += size) {
            tiles.push_back({x, y, std::min(x + size, width), std::min(y + size, height)});
        }
    }
    return tiles;
}

void check_splat(const Splat& s, int i) {
    const bool finite = s.mean.allFinite() && s.cov.allFinite() && std::isfinite(s.depth) &&
                        std::isfinite(s.opacity) && s.color.allFinite() && std::isfinite(s.sigma);
    if (!finite) {
        throw Fault("splat " + std::to_string(i) + " (Gaussian " + std::to_string(s.source) +
                    ") has a non-finite attribute");
    }
    if (s.sigma < 0.0) {
        throw Fault("splat " + std::to_string(i) + " has negative uncertainty");
    }
    if (!(s.cov.determinant() > 0.0)) {
        throw Fault("splat " + std::to_string(i) + " has a singular screen covariance");
    }
}

} // namespace

RenderOutput rasterize(const std::vector<Splat>& splats, int height, int width, const RasterConfig& cfg) {
    cfg.validate();
    if (height <= 0 || width <= 0) {
        throw InvalidInput("render target must have positive size");
    }
    const int n = static_cast<int>(splats.size());
    std::vector<Prepared> prep(splats.size());
    for (int i = 0; i < n; ++i) {
        check_splat(splats[static_cast<std::size_t>(i)], i);
        prep[static_cast<std::size_t>(i)] = prepare(splats[static_cast<std::size_t>(i)], cfg.alpha_min);
    }

    RenderOutput out;
    out.color = Image(height, width, 3);
    out.uncertainty = Image(height, width, 1);
    out.opacity = Image(height, width, 1);
    out.background = cfg.background;
    out.tile_size = cfg.tile_size;
    out.contributors.assign(out.color.pixels(), {});
    out.final_transmittance.assign(out.color.pixels(), 1.0);
    out.order.resize(splats.size());
    std::iota(out.order.begin(), out.order.end(), 0);
    std::stable_sort(out.order.begin(), out.order.end(), [&](int a, int b) {
        return splats[static_cast<std::size_t>(a)].depth < splats[static_cast<std::size_t>(b)].depth;
    });

    auto shade = [&](int y, int x, const std::vector<int>& list) {
        double t = 1.0;
        Vec3 c = Vec3::Zero();
        double u = 0.0, o = 0.0;
        auto& contrib = out.contributors[static_cast<std::size_t>(y) * width + x];
        for (int idx : list) {
            const Splat& s = splats[static_cast<std::size_t>(idx)];
            const Vec2 d(x - s.mean.x(), y - s.mean.y());
            const double power = -0.5 * d.dot(prep[static_cast<std::size_t>(idx)].conic * d);
            const double raw = s.opacity * std::exp(power);
            if (raw < cfg.alpha_min) {
                continue;
            }
            const bool clamped = raw > cfg.alpha_max;
            const double a = clamped ? cfg.alpha_max : raw;
            contrib.push_back({idx, t, a, clamped});
            const double w = t * a;
            c += w * s.color;
            u += w * s.sigma;
            o += w;
            t *= 1.0 - a;
            if (t < cfg.t_min) {
                break;
            }
        }
        c += t * cfg.background;
        for (int ch = 0; ch < 3; ++ch) {
            out.color.at(y, x, ch) = c[ch];
        }
        out.uncertainty.at(y, x) = u;
        out.opacity.at(y, x) = o;
        out.final_transmittance[static_cast<std::size_t>(y) * width + x] = t;
    };

    if (!cfg.tiled) {
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                shade(y, x, out.order);
            }
        }
        return out;
    }

    const auto tiles = make_tiles(height, width, cfg.tile_size);
    parallel_for(static_cast<int>(tiles.size()), [&](int ti) {
        const Tile& tile = tiles[static_cast<std::size_t>(ti)];
        std::vector<int> list;
        for (int idx : out.order) {
            const auto& s = splats[static_cast<std::size_t>(idx)];
            const double r = prep[static_cast<std::size_t>(idx)].radius;
            if (r < 0.0 || s.mean.x() + r < tile.x0 || s.mean.x() - r > tile.x1 - 1 || s.mean.y() + r < tile.y0 ||
                s.mean.y() - r > tile.y1 - 1) {
                continue;
            }
            list.push_back(idx);
        }
        for (int y = tile.y0; y < tile.y1; ++y) {
            for (int x = tile.x0; x < tile.x1; ++x) {
                shade(y, x, list);
            }
        }
    });
    return out;
}

std::vector<SplatGrad> rasterize_backward(const std::vector<Splat>& splats, const RenderOutput& out,
                                          const Image* dL_dcolor, const Image* dL_duncertainty,
                                          const Image* dL_dopacity) {
    if (!out.has_cache()) {
        throw Fault("rasterize_backward called without a forward contributor cache");
    }
    const int height = out.color.height;
    const int width = out.color.width;
    auto check = [&](const Image* img, int channels, const char* name) {
        if (img != nullptr && (img->height != height || img->width != width || img->channels != channels)) {
            throw Fault(std::string("upstream gradient image '") + name + "' has the wrong shape");
        }
    };
    check(dL_dcolor, 3, "color");
    check(dL_duncertainty, 1, "uncertainty");
    check(dL_dopacity, 1, "opacity");
    for (const auto& pc : out.contributors) {
        for (const auto& c : pc) {
            if (c.splat < 0 || c.splat >= static_cast<int>(splats.size())) {
                throw Fault("contributor cache does not match the splat list");
            }
        }
    }

    const std::size_t n = splats.size();
    std::vector<Mat2> conic(n);
    for (std::size_t i = 0; i < n; ++i) {
        conic[i] = splats[i].cov.inverse();
    }

    struct Partial {
        std::vector<SplatGrad> g;
        std::vector<Mat2> d_conic;
    };
    const auto tiles = make_tiles(height, width, out.tile_size);
    std::vector<Partial> parts(tiles.size());

    parallel_for(static_cast<int>(tiles.size()), [&](int ti) {
        const Tile& tile = tiles[static_cast<std::size_t>(ti)];
        Partial& part = parts[static_cast<std::size_t>(ti)];
        part.g.assign(n, SplatGrad{});
        part.d_conic.assign(n, Mat2::Zero());
        for (int y = tile.y0; y < tile.y1; ++y) {
            for (int x = tile.x0; x < tile.x1; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * width + x;
                const auto& list = out.contributors[p];
                if (list.empty()) {
                    continue;
                }
                const Vec3 dc = dL_dcolor ? Vec3(dL_dcolor->at(y, x, 0), dL_dcolor->at(y, x, 1),
                                                 dL_dcolor->at(y, x, 2))
                                          : Vec3::Zero();
                const double du = dL_duncertainty ? dL_duncertainty->at(y, x) : 0.0;
                const double dop = dL_dopacity ? dL_dopacity->at(y, x) : 0.0;
                if (dc.isZero(0.0) && du == 0.0 && dop == 0.0) {
                    continue;
                }
                // Sums over contributors behind the current one (plus background for color).
                double behind_c = dc.dot(out.final_transmittance[p] * out.background);
                double behind_u = 0.0;
                double behind_o = 0.0;
                for (auto it = list.rbegin(); it != list.rend(); ++it) {
                    const Splat& s = splats[static_cast<std::size_t>(it->splat)];
                    SplatGrad& g = part.g[static_cast<std::size_t>(it->splat)];
                    const double t = it->transmittance;
                    const double a = it->alpha;
                    const double w = t * a;
                    g.color += w * dc;
                    g.sigma += w * du;
                    const double own = dc.dot(s.color) * t + du * s.sigma * t + dop * t;
                    const double da = own - (behind_c + du * behind_u + dop * behind_o) / (1.0 - a);
                    behind_c += w * dc.dot(s.color);
                    behind_u += w * s.sigma;
                    behind_o += w;
                    if (it->clamped) {
                        continue;
                    }
                    const double gval = a / s.opacity;
                    g.opacity += da * gval;
                    const double dpower = da * a;
                    const Vec2 d(x - s.mean.x(), y - s.mean.y());
                    const Vec2 qd = conic[static_cast<std::size_t>(it->splat)] * d;
                    g.mean += dpower * qd;
                    part.d_conic[static_cast<std::size_t>(it->splat)] += -0.5 * dpower * d * d.transpose();
                }
            }
        }
    });

    std::vector<SplatGrad> grads(n);
    std::vector<Mat2> d_conic(n, Mat2::Zero());
    for (const auto& part : parts) {
        for (std::size_t i = 0; i < n; ++i) {
            grads[i].mean += part.g[i].mean;
            grads[i].opacity += part.g[i].opacity;
            grads[i].color += part.g[i].color;
            grads[i].sigma += part.g[i].sigma;
            d_conic[i] += part.d_conic[i];
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        grads[i].cov = -conic[i] * d_conic[i] * conic[i];
    }
    return grads;
}

} // namespace occsplat
