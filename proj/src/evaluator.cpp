#include "occsplat/evaluator.hpp"

#include "occsplat/errors.hpp"
#include "occsplat/parallel.hpp"
#include "occsplat/pipeline.hpp"
#include "occsplat/ssim.hpp"
#include "occsplat/trainer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace occsplat {

namespace {

void require_same(const Image& a, const Image& b) {
    if (!a.same_shape(b)) {
        throw InvalidInput("images differ in shape");
    }
}

Vec3 bilinear(const Image& img, const Vec2& p) {
    const double x = std::clamp(p.x(), 0.0, img.width - 1.0);
    const double y = std::clamp(p.y(), 0.0, img.height - 1.0);
    const int x0 = std::min(static_cast<int>(x), img.width - 2 < 0 ? 0 : img.width - 2);
    const int y0 = std::min(static_cast<int>(y), img.height - 2 < 0 ? 0 : img.height - 2);
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    Vec3 out;
    for (int c = 0; c < 3; ++c) {
        out[c] = (1 - fy) * ((1 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c)) +
                 fy * ((1 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c));
    }
    return out;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

} // namespace

double mse(const Image& a, const Image& b) {
    require_same(a, b);
    if (a.data.empty()) {
        throw InvalidInput("mse of empty images");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s / static_cast<double>(a.data.size());
}

double psnr(const Image& a, const Image& b) {
    const double m = mse(a, b);
    return m == 0.0 ? kPsnrIdentical : 10.0 * std::log10(1.0 / m);
}

double masked_psnr(const std::vector<Image>& a, const std::vector<Image>& b, const std::vector<Image>& masks) {
    if (a.size() != b.size() || a.size() != masks.size()) {
        throw InvalidInput("masked_psnr needs matching frame lists");
    }
    double s = 0.0;
    long count = 0;
    for (std::size_t f = 0; f < a.size(); ++f) {
        require_same(a[f], b[f]);
        const Image& m = masks[f];
        if (m.height != a[f].height || m.width != a[f].width) {
            throw InvalidInput("mask does not match image size");
        }
        for (int y = 0; y < m.height; ++y) {
            for (int x = 0; x < m.width; ++x) {
                if (m.at(y, x) <= 0.5) {
                    continue;
                }
                for (int c = 0; c < a[f].channels; ++c) {
                    const double d = a[f].at(y, x, c) - b[f].at(y, x, c);
                    s += d * d;
                    ++count;
                }
            }
        }
    }
    if (count == 0) {
        return std::nan("");
    }
    return s == 0.0 ? kPsnrIdentical : 10.0 * std::log10(count / s);
}

Image subject_mask(const Image& opacity) {
    Image m(opacity.height, opacity.width, 1, 0.0);
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        m.data[i] = opacity.data[i] > 0.5 ? 1.0 : 0.0;
    }
    return m;
}

double uncertainty_localization(const std::vector<Image>& uncertainty, const std::vector<Image>& occ_masks,
                                const std::vector<Image>& subject_masks) {
    if (uncertainty.size() != occ_masks.size() || uncertainty.size() != subject_masks.size()) {
        throw InvalidInput("uncertainty_localization needs matching frame lists");
    }
    std::vector<double> ratios;
    for (std::size_t f = 0; f < uncertainty.size(); ++f) {
        const Image& u = uncertainty[f];
        if (!u.same_shape(occ_masks[f]) || !u.same_shape(subject_masks[f])) {
            throw InvalidInput("masks are not aligned with the uncertainty map");
        }
        double occ_sum = 0.0, vis_sum = 0.0;
        long occ_n = 0, vis_n = 0;
        for (std::size_t i = 0; i < u.data.size(); ++i) {
            if (subject_masks[f].data[i] <= 0.5) {
                continue;
            }
            if (occ_masks[f].data[i] > 0.5) {
                occ_sum += u.data[i];
                ++occ_n;
            } else {
                vis_sum += u.data[i];
                ++vis_n;
            }
        }
        if (occ_n == 0 || vis_n == 0) {
            continue;
        }
        const double num = occ_sum / occ_n;
        const double den = vis_sum / vis_n;
        if (den > 0.0) {
            ratios.push_back(std::min(kRhoCap, num / den));
        } else {
            ratios.push_back(num > 0.0 ? kRhoCap : 1.0);
        }
    }
    return ratios.empty() ? kRhoUndefined : mean_of(ratios);
}

std::vector<int> choose_probes(const Dataset& ds, int count) {
    const int n = static_cast<int>(ds.gt_cloud.size());
    std::vector<int> out;
    count = std::min(count, n);
    for (int i = 0; i < count; ++i) {
        out.push_back(static_cast<int>((static_cast<long>(i) * n) / count));
    }
    return out;
}

StabilityReport temporal_color_stability(const Dataset& ds, const std::vector<Image>& model_frames,
                                         const std::vector<int>& probes) {
    if (static_cast<int>(model_frames.size()) != ds.frames()) {
        throw InvalidInput("need one model frame per dataset frame");
    }
    const int T = ds.frames();
    // diffs[p][t]: model − GT color at the probe's pixel, empty when hidden.
    std::vector<std::vector<std::optional<Vec3>>> diffs(probes.size(), std::vector<std::optional<Vec3>>(T));
    parallel_for(T, [&](int t) {
        RasterConfig raster;
        raster.background = ds.spec.background;
        const auto fwd = full_forward(ds.gt_cloud, nullptr, ds.skeleton, ds.poses[static_cast<std::size_t>(t)],
                                      ds.t_norm(t), ds.cameras[0], options_for_mode(Mode::A, raster));
        const Image& gt = ds.clean[static_cast<std::size_t>(t)];
        require_same(gt, model_frames[static_cast<std::size_t>(t)]);
        for (std::size_t p = 0; p < probes.size(); ++p) {
            const int si = fwd.splat_of.at(static_cast<std::size_t>(probes[p]));
            if (si < 0) {
                continue;
            }
            const Vec2 m = fwd.splats[static_cast<std::size_t>(si)].mean;
            const int px = static_cast<int>(std::lround(m.x()));
            const int py = static_cast<int>(std::lround(m.y()));
            if (px < 0 || py < 0 || px >= gt.width || py >= gt.height) {
                continue;
            }
            double weight = 0.0;
            for (const auto& c : fwd.render.contributors[static_cast<std::size_t>(py) * gt.width + px]) {
                if (c.splat == si) {
                    weight = c.transmittance * c.alpha;
                }
            }
            if (weight < 0.1) {
                continue;
            }
            diffs[p][t] = bilinear(model_frames[static_cast<std::size_t>(t)], m) - bilinear(gt, m);
        }
    });

    StabilityReport rep;
    std::vector<double> vars;
    for (std::size_t p = 0; p < probes.size(); ++p) {
        ProbeStability ps;
        ps.gaussian = probes[p];
        Vec3 sum = Vec3::Zero();
        for (const auto& d : diffs[p]) {
            if (d) {
                sum += *d;
                ++ps.visible_frames;
            }
        }
        if (ps.visible_frames >= 2) {
            const Vec3 mean = sum / ps.visible_frames;
            double v = 0.0;
            for (const auto& d : diffs[p]) {
                if (d) {
                    v += (*d - mean).squaredNorm();
                }
            }
            ps.variance = v / ps.visible_frames;
            vars.push_back(ps.variance);
        } else {
            ++rep.skipped;
        }
        rep.probes.push_back(ps);
    }
    rep.mean_variance = mean_of(vars);
    return rep;
}

MetricsReport evaluate_state(const TrainState& state, const Dataset& ds, const TrainConfig& cfg,
                             const std::string& label, int probes) {
    MetricsReport r;
    r.label = label;
    const int T = ds.frames();
    const int views = static_cast<int>(ds.holdout.size());

    std::vector<Image> train_color(T), train_u(T), train_subject(T);
    std::vector<double> train_psnr(T), train_ssim(T);
    std::vector<double> hold_psnr(static_cast<std::size_t>(views) * T), hold_ssim(hold_psnr.size());
    parallel_for(T * (views + 1), [&](int job) {
        const int v = job / T;
        const int t = job % T;
        const auto fwd = render_state(state, ds, cfg, t, ds.cameras[static_cast<std::size_t>(v)]);
        if (v == 0) {
            train_color[t] = fwd.render.color;
            train_u[t] = fwd.render.uncertainty;
            // Subject pixels come from the ground truth so a model cannot leave
            // the occluded region out of the statistic by not covering it.
            train_subject[t] = subject_mask(render_ground_truth(ds, t, ds.cameras[0]).opacity);
            train_psnr[t] = psnr(fwd.render.color, ds.clean[t]);
            train_ssim[t] = ssim(fwd.render.color, ds.clean[t]);
        } else {
            const auto& gt = ds.holdout[static_cast<std::size_t>(v - 1)][static_cast<std::size_t>(t)];
            hold_psnr[static_cast<std::size_t>((v - 1) * T + t)] = psnr(fwd.render.color, gt);
            hold_ssim[static_cast<std::size_t>((v - 1) * T + t)] = ssim(fwd.render.color, gt);
        }
    });
    r.train_psnr = mean_of(train_psnr);
    r.train_ssim = mean_of(train_ssim);
    r.holdout_psnr_frames = hold_psnr;
    r.holdout_psnr = mean_of(hold_psnr);
    r.holdout_ssim = mean_of(hold_ssim);

    r.occluded_psnr = masked_psnr(train_color, ds.clean, ds.occ_mask);
    r.rho = uncertainty_localization(train_u, ds.occ_mask, train_subject);
    r.temporal_variance = temporal_color_stability(ds, train_color, choose_probes(ds, probes)).mean_variance;
    return r;
}

std::string format_metric(double v) {
    if (std::isnan(v)) {
        return "";
    }
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    return fmt::format("{:.9g}", v);
}

std::string report_csv_header() {
    return "run,holdout_psnr,holdout_ssim,train_psnr,train_ssim,occluded_psnr,rho,temporal_variance\n";
}

std::string report_csv_row(const MetricsReport& r) {
    std::string s = r.label;
    for (double v : {r.holdout_psnr, r.holdout_ssim, r.train_psnr, r.train_ssim, r.occluded_psnr, r.rho,
                     r.temporal_variance}) {
        s += "," + format_metric(v);
    }
    return s + "\n";
}

std::string ablation_table(const std::vector<MetricsReport>& runs) {
    std::string out = report_csv_header();
    for (const auto& r : runs) {
        out += report_csv_row(r);
    }
    if (runs.empty()) {
        return out;
    }
    const MetricsReport& base = runs.front();
    for (std::size_t i = 1; i < runs.size(); ++i) {
        MetricsReport d;
        const MetricsReport& r = runs[i];
        d.label = "delta(" + r.label + "-" + base.label + ")";
        d.holdout_psnr = r.holdout_psnr - base.holdout_psnr;
        d.holdout_ssim = r.holdout_ssim - base.holdout_ssim;
        d.train_psnr = r.train_psnr - base.train_psnr;
        d.train_ssim = r.train_ssim - base.train_ssim;
        d.occluded_psnr = r.occluded_psnr - base.occluded_psnr;
        d.rho = r.rho - base.rho;
        d.temporal_variance = r.temporal_variance - base.temporal_variance;
        out += report_csv_row(d);
    }
    return out;
}

} // namespace occsplat
