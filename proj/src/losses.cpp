#include "occsplat/losses.hpp"

#include "occsplat/errors.hpp"
#include "occsplat/ssim.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

namespace occsplat {

void LossWeights::validate() const {
    for (double v : {lambda_reg, lambda_rot, lambda_scl, lambda_spa, lambda_temp, lambda_mask, lambda_ssim,
                     lambda_lpips}) {
        if (!(v >= 0.0)) {
            throw InvalidInput("loss weights must be non-negative");
        }
    }
    if (!(eps > 0.0) || knn < 1 || frame_interval < 1) {
        throw InvalidInput("loss settings need eps > 0, K >= 1 and k >= 1");
    }
}

namespace {

void require_same(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b)) {
        throw InvalidInput(std::string(what) + ": image shapes differ");
    }
}

double sign(double v) { return (v > 0.0) - (v < 0.0); }

} // namespace

ImageLoss l1_loss(const Image& gt, const Image& pred) {
    require_same(gt, pred, "l1_loss");
    ImageLoss out;
    out.grad = Image(pred.height, pred.width, pred.channels);
    const double inv = 1.0 / static_cast<double>(pred.pixels());
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double r = gt.data[i] - pred.data[i];
        out.value += std::abs(r);
        out.grad.data[i] = -sign(r) * inv;
    }
    out.value *= inv;
    return out;
}

double nll_pixel(double r, double u, double lambda_reg, double eps) { return r / (u + eps) + lambda_reg * std::log(u + eps); }

double nll_pixel_du(double r, double u, double lambda_reg, double eps) {
    const double ue = u + eps;
    return -r / (ue * ue) + lambda_reg / ue;
}

NllResult nll_loss(const Image& gt, const Image& pred, const Image& uncertainty, const LossWeights& w) {
    require_same(gt, pred, "nll_loss");
    if (uncertainty.height != pred.height || uncertainty.width != pred.width || uncertainty.channels != 1) {
        throw InvalidInput("nll_loss: uncertainty map does not match the image");
    }
    NllResult out;
    out.d_color = Image(pred.height, pred.width, pred.channels);
    out.d_uncertainty = Image(pred.height, pred.width, 1);
    const double inv = 1.0 / static_cast<double>(pred.pixels());
    const int ch = pred.channels;
    for (std::size_t p = 0; p < pred.pixels(); ++p) {
        const double u = uncertainty.data[p];
        if (!(u >= 0.0)) {
            throw Fault("negative or non-finite uncertainty at pixel " + std::to_string(p));
        }
        const double ue = u + w.eps;
        double r = 0.0;
        for (int c = 0; c < ch; ++c) {
            const std::size_t i = p * static_cast<std::size_t>(ch) + static_cast<std::size_t>(c);
            const double d = gt.data[i] - pred.data[i];
            r += std::abs(d);
            out.d_color.data[i] = -sign(d) / ue * inv;
        }
        out.value += nll_pixel(r, u, w.lambda_reg, w.eps);
        out.d_uncertainty.data[p] = nll_pixel_du(r, u, w.lambda_reg, w.eps) * inv;
    }
    out.value *= inv;
    return out;
}

ImageLoss mask_loss(const Image& opacity, const Image& mask) {
    require_same(opacity, mask, "mask_loss");
    ImageLoss out;
    out.grad = Image(opacity.height, opacity.width, opacity.channels);
    const double inv = 1.0 / static_cast<double>(opacity.data.size());
    for (std::size_t i = 0; i < opacity.data.size(); ++i) {
        const double d = opacity.data[i] - mask.data[i];
        out.value += d * d;
        out.grad.data[i] = 2.0 * d * inv;
    }
    out.value *= inv;
    return out;
}

ImageLoss ssim_loss(const Image& pred, const Image& gt) {
    auto s = ssim_with_grad(pred, gt);
    ImageLoss out;
    out.value = 1.0 - s.ssim;
    out.grad = std::move(s.d_a);
    for (double& v : out.grad.data) {
        v = -v;
    }
    return out;
}

KnnGraph build_knn_graph(const std::vector<Vec3>& points, int k) {
    if (k < 1) {
        throw InvalidInput("KNN graph needs K >= 1");
    }
    const int n = static_cast<int>(points.size());
    KnnGraph g;
    g.k = std::min(k, std::max(n - 1, 0));
    g.neighbors.resize(points.size());
    g.weights.resize(points.size());
    std::vector<std::pair<double, int>> dist;
    for (int i = 0; i < n; ++i) {
        dist.clear();
        for (int j = 0; j < n; ++j) {
            if (j != i) {
                dist.emplace_back((points[static_cast<std::size_t>(i)] - points[static_cast<std::size_t>(j)]).norm(), j);
            }
        }
        std::partial_sort(dist.begin(), dist.begin() + g.k, dist.end());
        double total = 0.0;
        for (int m = 0; m < g.k; ++m) {
            const double wgt = 1.0 / std::max(dist[static_cast<std::size_t>(m)].first, 1e-12);
            g.neighbors[static_cast<std::size_t>(i)].push_back(dist[static_cast<std::size_t>(m)].second);
            g.weights[static_cast<std::size_t>(i)].push_back(wgt);
            total += wgt;
        }
        for (double& wgt : g.weights[static_cast<std::size_t>(i)]) {
            wgt /= total;
        }
    }
    return g;
}

namespace {

// ‖a − b‖ over a head segment; accumulates ±coef·(a−b)/‖a−b‖ into the gradients.
template <int Len>
double segment_distance(const RowMatrix& h, int i, int j, int offset, double coef, RowMatrix& grad) {
    const auto diff = (h.row(i).segment<Len>(offset) - h.row(j).segment<Len>(offset)).eval();
    const double n = diff.norm();
    if (n > 0.0) {
        grad.row(i).segment<Len>(offset) += coef * diff / n;
        grad.row(j).segment<Len>(offset) -= coef * diff / n;
    }
    return n;
}

} // namespace

HeadLoss spatial_loss(const RowMatrix& head, const std::vector<double>& sigma, const KnnGraph& graph,
                      const LossWeights& w) {
    const auto n = static_cast<std::size_t>(head.rows());
    if (head.cols() != HeadLayout::kSize || sigma.size() != n || graph.neighbors.size() != n) {
        throw InvalidInput("spatial_loss: head, sigma and graph sizes disagree");
    }
    HeadLoss out;
    out.d_head = RowMatrix::Zero(head.rows(), head.cols());
    if (n == 0) {
        return out;
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t m = 0; m < graph.neighbors[i].size(); ++m) {
            const int j = graph.neighbors[i][m];
            const double c = sigma[i] * graph.weights[i][m] * inv;
            const int ii = static_cast<int>(i);
            double term = segment_distance<3>(head, ii, j, HeadLayout::kMean, c, out.d_head);
            term += w.lambda_rot * segment_distance<4>(head, ii, j, HeadLayout::kRot, c * w.lambda_rot, out.d_head);
            term += w.lambda_scl * segment_distance<3>(head, ii, j, HeadLayout::kScale, c * w.lambda_scl, out.d_head);
            out.value += c * term;
        }
    }
    return out;
}

TemporalLoss temporal_loss(const std::vector<TemporalSample>& samples, const LossWeights& w) {
    (void)w;
    TemporalLoss out;
    if (samples.empty()) {
        spdlog::warn("temporal loss has no valid timestamps; contributing 0");
        return out;
    }
    constexpr int kLen = HeadLayout::kSigma; // Δμ, Δr_raw, Δs are the first ten outputs
    const double inv_t = 1.0 / static_cast<double>(samples.size());
    for (const auto& s : samples) {
        const auto n = s.cur.rows();
        if (s.prev.rows() != n || s.next.rows() != n || s.cur.cols() != HeadLayout::kSize ||
            s.prev.cols() != HeadLayout::kSize || s.next.cols() != HeadLayout::kSize ||
            static_cast<Eigen::Index>(s.sigma.size()) != n) {
            throw InvalidInput("temporal_loss: sample shapes disagree");
        }
        RowMatrix dp = RowMatrix::Zero(n, HeadLayout::kSize);
        RowMatrix dc = RowMatrix::Zero(n, HeadLayout::kSize);
        RowMatrix dn = RowMatrix::Zero(n, HeadLayout::kSize);
        const double inv = n > 0 ? inv_t / static_cast<double>(n) : 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::Matrix<double, 1, kLen> diff =
                s.prev.row(i).head<kLen>() - 2.0 * s.cur.row(i).head<kLen>() + s.next.row(i).head<kLen>();
            const double norm = diff.norm();
            const double c = s.sigma[static_cast<std::size_t>(i)] * inv;
            out.value += c * norm;
            if (norm > 0.0) {
                const auto g = (c * diff / norm).eval();
                dp.row(i).head<kLen>() += g;
                dc.row(i).head<kLen>() -= 2.0 * g;
                dn.row(i).head<kLen>() += g;
            }
        }
        out.d_prev.push_back(std::move(dp));
        out.d_cur.push_back(std::move(dc));
        out.d_next.push_back(std::move(dn));
    }
    return out;
}

double total_loss(const LossTerms& t, Mode mode, const LossWeights& w) {
    auto val = [](double v) { return std::isnan(v) ? 0.0 : v; };
    double total = w.lambda_mask * val(t.mask) + w.lambda_ssim * val(t.ssim);
    total += mode == Mode::A ? val(t.l1) : val(t.nll);
    if (mode == Mode::C || mode == Mode::D) {
        total += w.lambda_spa * val(t.spa);
    }
    if (mode == Mode::D) {
        total += w.lambda_temp * val(t.temp);
    }
    return total;
}

ImageObjective image_objective(const RenderOutput& render, const Image& gt, const Image& skel_mask, Mode mode,
                               const LossWeights& w) {
    ImageObjective obj;
    const Image& pred = render.color;
    obj.d_color = Image(pred.height, pred.width, 3);
    obj.d_uncertainty = Image(pred.height, pred.width, 1);

    const auto l1 = l1_loss(gt, pred);
    obj.terms.l1 = l1.value;
    if (mode == Mode::A) {
        obj.d_color = l1.grad;
    } else {
        auto nll = nll_loss(gt, pred, render.uncertainty, w);
        obj.terms.nll = nll.value;
        obj.d_color = std::move(nll.d_color);
        obj.d_uncertainty = std::move(nll.d_uncertainty);
    }

    auto mask = mask_loss(render.opacity, skel_mask);
    obj.terms.mask = mask.value;
    obj.d_opacity = std::move(mask.grad);
    for (double& v : obj.d_opacity.data) {
        v *= w.lambda_mask;
    }

    const auto ss = ssim_loss(pred, gt);
    obj.terms.ssim = ss.value;
    for (std::size_t i = 0; i < obj.d_color.data.size(); ++i) {
        obj.d_color.data[i] += w.lambda_ssim * ss.grad.data[i];
    }
    obj.value = total_loss(obj.terms, mode, w);
    return obj;
}

} // namespace occsplat
