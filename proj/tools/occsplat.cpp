#include "occsplat/config.hpp"
#include "occsplat/dataset_io.hpp"
#include "occsplat/errors.hpp"
#include "occsplat/evaluator.hpp"
#include "occsplat/gradcheck.hpp"
#include "occsplat/io.hpp"
#include "occsplat/trainer.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <regex>

namespace fs = std::filesystem;
using namespace occsplat;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitFault = 2;
constexpr int kExitGradcheck = 3;

struct CommonArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
    std::optional<std::uint64_t> seed;
    bool deterministic = false;
};

void add_common(CLI::App* app, CommonArgs& a, bool out_required) {
    app->add_option("--config", a.config, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--set", a.overrides, "dotted.key=value override (repeatable)");
    auto* o = app->add_option("--out", a.out, "output directory");
    if (out_required) {
        o->required();
    }
    app->add_option("--seed", a.seed, "overrides the top-level seed");
    app->add_flag("--deterministic", a.deterministic, "force the determinism flag on");
}

Json resolve(const CommonArgs& a, const Json* base = nullptr) {
    Json user = Json::object();
    if (base != nullptr) {
        user = *base;
    }
    if (!a.config.empty()) {
        Json file;
        try {
            file = Json::parse(read_text(a.config));
        } catch (const Json::exception& e) {
            throw InvalidInput("cannot parse config " + a.config + ": " + e.what());
        }
        if (base != nullptr) {
            merge_strict(user, file);
        } else {
            user = file;
        }
    }
    std::vector<std::string> ov = a.overrides;
    if (a.seed) {
        ov.push_back("seed=" + std::to_string(*a.seed));
    }
    if (a.deterministic) {
        ov.push_back("deterministic=true");
    }
    return resolve_config(user, ov);
}

/// Exclusive run-directory lock, released on destruction.
class DirLock {
public:
    explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
        fs::create_directories(dir);
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0) {
            throw InvalidInput("directory " + dir.string() + " is locked by another run (remove " + path_.string() +
                               " if stale)");
        }
        const std::string pid = std::to_string(::getpid()) + "\n";
        if (::write(fd_, pid.data(), pid.size()) < 0) {
            spdlog::warn("could not write pid into {}", path_.string());
        }
    }
    ~DirLock() {
        ::close(fd_);
        std::error_code ec;
        fs::remove(path_, ec);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

void echo_config(const fs::path& dir, const Json& doc) {
    write_text_atomic(dir / "config.json", doc.dump(2) + "\n");
}

int cmd_gen_data(const CommonArgs& a) {
    const Json doc = resolve(a);
    const RunConfig cfg = config_from_json(doc);
    const fs::path out = a.out;
    DirLock lock(out);
    spdlog::info("generating {} frames at {}x{} (seed {})", cfg.scene.frames, cfg.scene.width, cfg.scene.height,
                 cfg.seed);
    const Dataset ds = generate_sequence(cfg.scene, cfg.seed);
    save_dataset(ds, out);
    echo_config(out, doc);
    spdlog::info("dataset written to {}", out.string());
    return kExitOk;
}

fs::path latest_checkpoint(const fs::path& run) {
    if (fs::exists(run / "checkpoint.ckpt")) {
        return run / "checkpoint.ckpt";
    }
    fs::path best;
    int best_it = -1;
    const std::regex pat(R"(checkpoint_(\d+)\.ckpt)");
    if (fs::exists(run)) {
        for (const auto& e : fs::directory_iterator(run)) {
            std::smatch m;
            const std::string name = e.path().filename().string();
            if (std::regex_match(name, m, pat) && std::stoi(m[1]) > best_it) {
                best_it = std::stoi(m[1]);
                best = e.path();
            }
        }
    }
    return best;
}

/// Keeps the header and rows with iteration < `upto`.
std::string truncate_metrics(const fs::path& path, int upto) {
    std::string kept = metrics_header();
    if (!fs::exists(path)) {
        return kept;
    }
    std::istringstream in(read_text(path));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (!line.empty() && std::stoi(line.substr(0, line.find(','))) < upto) {
            kept += line + "\n";
        }
    }
    return kept;
}

int cmd_train(const CommonArgs& a, const std::string& data_dir, bool resume) {
    const fs::path run = a.out;
    std::optional<Json> echoed;
    if (resume && fs::exists(run / "config.json")) {
        echoed = Json::parse(read_text(run / "config.json"));
    }
    const Json doc = echoed ? resolve(a, &*echoed) : resolve(a);
    const RunConfig cfg = config_from_json(doc);
    const std::string hash = config_hash(doc);
    DirLock lock(run);
    const Dataset ds = load_dataset(data_dir);

    TrainState st;
    if (resume) {
        const fs::path ck = latest_checkpoint(run);
        if (ck.empty()) {
            throw InvalidInput("nothing to resume in " + run.string());
        }
        const TensorFile f = TensorFile::load(ck);
        if (f.config_hash != hash) {
            spdlog::warn("resolved config differs from the one stored in {}", ck.string());
        }
        st = state_from_file(f, cfg.train);
        spdlog::info("resuming from {} at iteration {}", ck.string(), st.iteration);
    } else {
        st = init_state(cfg.train, ds);
    }
    echo_config(run, doc);
    write_text_atomic(run / "dataset.txt", fs::absolute(data_dir).string() + "\n");

    std::string metrics = truncate_metrics(run / "metrics.csv", st.iteration);
    std::ofstream log(run / "metrics.csv", std::ios::trunc);
    log << metrics;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        train(st, ds, cfg.train, [&](const StepReport& r, const TrainState& s) {
            const bool last = s.iteration == cfg.train.iterations;
            if (r.iteration % cfg.log_interval == 0 || last) {
                log << metrics_row(r);
                log.flush();
                const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                spdlog::info("it {:>6} mode {} total {:.5g} psnr {:.2f} ({:.1f}s)", r.iteration, mode_letter(r.mode),
                             r.total, r.psnr_train, secs);
            }
            if (cfg.checkpoint_interval > 0 && s.iteration % cfg.checkpoint_interval == 0 && !last) {
                state_to_file(s, hash).save(run / fmt::format("checkpoint_{:06d}.ckpt", s.iteration));
            }
        });
    } catch (const Fault& e) {
        state_to_file(st, hash).save(run / "abort.ckpt");
        write_text_atomic(run / "abort.txt", fmt::format("iteration {}\n{}\n", st.iteration, e.what()));
        spdlog::error("training aborted at iteration {}: {} (state dumped to {})", st.iteration, e.what(),
                      (run / "abort.ckpt").string());
        return kExitFault;
    }
    state_to_file(st, hash).save(run / "checkpoint.ckpt");
    spdlog::info("final checkpoint {}", (run / "checkpoint.ckpt").string());
    return kExitOk;
}

struct LoadedRun {
    RunConfig cfg;
    TrainState state;
    Dataset ds;
};

LoadedRun load_run(const fs::path& run, const std::string& data_override, const std::string& checkpoint) {
    if (!fs::exists(run / "config.json")) {
        throw InvalidInput("no config.json in run directory " + run.string());
    }
    LoadedRun r;
    r.cfg = config_from_json(resolve_config(Json::parse(read_text(run / "config.json")), {}));
    fs::path data = data_override;
    if (data.empty()) {
        std::string txt = read_text(run / "dataset.txt");
        txt.erase(std::remove(txt.begin(), txt.end(), '\n'), txt.end());
        data = txt;
    }
    r.ds = load_dataset(data);
    const fs::path ck = checkpoint.empty() ? latest_checkpoint(run) : fs::path(checkpoint);
    if (ck.empty()) {
        throw InvalidInput("no checkpoint in run directory " + run.string());
    }
    r.state = state_from_file(TensorFile::load(ck), r.cfg.train);
    return r;
}

void write_render(const fs::path& out, const std::string& stem, const RenderOutput& ro) {
    fs::create_directories(out);
    write_image(out / (stem + "_color.ppm"), quantize(ro.color));
    write_image(out / (stem + "_opacity.pgm"), ro.opacity);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (double v : ro.uncertainty.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    // Fixed zero floor so uncovered pixels always read as the bottom stop.
    write_image(out / (stem + "_uncertainty.ppm"), heatmap(ro.uncertainty, 0.0, hi));
    write_text_atomic(out / (stem + "_uncertainty.txt"),
                      fmt::format("min {:.17g}\nmax {:.17g}\nscale 0 {:.17g}\ncolormap navy,blue,cyan,yellow,red\n",
                                  lo, hi, hi));
}

int cmd_render(const std::string& run, const std::string& data, const std::string& checkpoint, const std::string& out,
               int frame, int view, bool gt) {
    if (gt) {
        const Dataset ds = load_dataset(data.empty() ? run : data);
        if (view < 0 || view >= static_cast<int>(ds.cameras.size())) {
            throw InvalidInput(fmt::format("camera index {} out of range [0, {})", view, ds.cameras.size()));
        }
        const RenderOutput ro = render_ground_truth(ds, frame, ds.cameras[static_cast<std::size_t>(view)]);
        write_render(out, fmt::format("gt_f{:04d}_v{}", frame, view), ro);
        return kExitOk;
    }
    const LoadedRun r = load_run(run, data, checkpoint);
    if (frame < 0 || frame >= r.ds.frames()) {
        throw InvalidInput(fmt::format("frame {} out of range [0, {})", frame, r.ds.frames()));
    }
    if (view < 0 || view >= static_cast<int>(r.ds.cameras.size())) {
        throw InvalidInput(fmt::format("camera index {} out of range [0, {})", view, r.ds.cameras.size()));
    }
    const ForwardState fs_ = render_state(r.state, r.ds, r.cfg.train, frame, r.ds.cameras[static_cast<std::size_t>(view)]);
    write_render(out, fmt::format("f{:04d}_v{}", frame, view), fs_.render);
    return kExitOk;
}

void print_report(const MetricsReport& m) {
    fmt::print("{}: holdout PSNR {} dB, SSIM {}; train PSNR {} dB; occluded-region PSNR {} dB; rho {}; "
               "temporal variance {}\n",
               m.label, format_metric(m.holdout_psnr), format_metric(m.holdout_ssim), format_metric(m.train_psnr),
               format_metric(m.occluded_psnr), format_metric(m.rho), format_metric(m.temporal_variance));
}

int cmd_eval(const std::string& run, const std::string& data, const std::string& checkpoint, const std::string& out) {
    const LoadedRun r = load_run(run, data, checkpoint);
    const MetricsReport m = evaluate_state(r.state, r.ds, r.cfg.train, fs::path(run).filename().string());
    const fs::path dest = out.empty() ? fs::path(run) / "report.csv" : fs::path(out);
    write_text_atomic(dest, report_csv_header() + report_csv_row(m));
    print_report(m);
    return kExitOk;
}

double median(std::vector<double> v) {
    std::erase_if(v, [](double x) { return std::isnan(x); });
    if (v.empty()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_ablate(const CommonArgs& a) {
    const Json doc = resolve(a);
    const RunConfig cfg = config_from_json(doc);
    const fs::path out = a.out;
    DirLock lock(out);
    echo_config(out, doc);
    std::vector<MetricsReport> rows;
    std::map<char, std::vector<MetricsReport>> by_mode;
    for (std::uint64_t seed : cfg.ablate_seeds) {
        const Dataset ds = generate_sequence(cfg.scene, seed);
        for (char m : cfg.ablate_modes) {
            TrainConfig tc = cfg.train;
            tc.mode = parse_mode(std::string(1, m));
            tc.seed = seed;
            const std::string label = fmt::format("{}_s{}", m, seed);
            spdlog::info("ablation run {}", label);
            TrainState st = init_state(tc, ds);
            const fs::path rdir = out / "runs" / label;
            fs::create_directories(rdir);
            std::ofstream log(rdir / "metrics.csv", std::ios::trunc);
            log << metrics_header();
            train(st, ds, tc, [&](const StepReport& r, const TrainState& s) {
                if (r.iteration % cfg.log_interval == 0 || s.iteration == tc.iterations) {
                    log << metrics_row(r);
                }
            });
            state_to_file(st, config_hash(doc)).save(rdir / "checkpoint.ckpt");
            MetricsReport rep = evaluate_state(st, ds, tc, label);
            print_report(rep);
            rows.push_back(rep);
            by_mode[m].push_back(rep);
            std::string csv = report_csv_header();
            for (const auto& x : rows) {
                csv += report_csv_row(x);
            }
            write_text_atomic(out / "runs.csv", csv);
        }
    }
    std::vector<MetricsReport> medians;
    for (char m : cfg.ablate_modes) {
        const auto& v = by_mode[m];
        auto pick = [&](double MetricsReport::*f) {
            std::vector<double> xs;
            for (const auto& x : v) {
                xs.push_back(x.*f);
            }
            return median(xs);
        };
        MetricsReport med;
        med.label = std::string(1, m);
        med.holdout_psnr = pick(&MetricsReport::holdout_psnr);
        med.holdout_ssim = pick(&MetricsReport::holdout_ssim);
        med.train_psnr = pick(&MetricsReport::train_psnr);
        med.train_ssim = pick(&MetricsReport::train_ssim);
        med.occluded_psnr = pick(&MetricsReport::occluded_psnr);
        med.rho = pick(&MetricsReport::rho);
        med.temporal_variance = pick(&MetricsReport::temporal_variance);
        medians.push_back(med);
    }
    const std::string table = ablation_table(medians);
    write_text_atomic(out / "ablation.csv", table);
    fmt::print("median over {} seed(s):\n{}", cfg.ablate_seeds.size(), table);
    return kExitOk;
}

int cmd_gradcheck(const std::vector<std::string>& ops_in, int instances, std::uint64_t seed,
                  const std::string& corrupt) {
    const std::vector<std::string> ops = ops_in.empty() ? gradcheck_ops() : ops_in;
    GradcheckOptions opt;
    opt.instances = instances;
    opt.seed = seed;
    opt.corrupt = corrupt;
    bool ok = true;
    for (const auto& op : ops) {
        const GradcheckResult r = run_gradcheck(op, opt);
        fmt::print("{:<22} {} max_rel_err {:.3e} instances {} discarded {} ({:.2f}s)\n", r.op,
                   r.passed ? "PASS" : "FAIL", r.max_rel_error, r.instances, r.discarded, r.seconds);
        ok = ok && r.passed;
    }
    return ok ? kExitOk : kExitGradcheck;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"occsplat: uncertainty-aware 4D Gaussian splatting on synthetic occluded sequences"};
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error");

    CommonArgs gen_args;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_common(gen, gen_args, true);

    CommonArgs train_args;
    std::string train_data;
    bool resume = false;
    auto* tr = app.add_subcommand("train", "train a model on a dataset");
    add_common(tr, train_args, true);
    tr->add_option("--data", train_data, "dataset directory")->required();
    tr->add_flag("--resume", resume, "continue from the latest checkpoint in --out");

    std::string r_run, r_data, r_ckpt, r_out;
    int r_frame = 0, r_view = 0;
    bool r_gt = false;
    auto* rd = app.add_subcommand("render", "render color, uncertainty heatmap and opacity");
    rd->add_option("--run", r_run, "run directory (or dataset directory with --gt)");
    rd->add_option("--data", r_data, "dataset directory (defaults to the one the run used)");
    rd->add_option("--checkpoint", r_ckpt, "checkpoint file (defaults to the run's latest)");
    rd->add_option("--out", r_out, "output directory")->required();
    rd->add_option("--frame", r_frame, "frame index");
    rd->add_option("--view", r_view, "camera index: 0 training, 1.. hold-out");
    rd->add_flag("--gt", r_gt, "render the ground-truth cloud instead of a trained model");

    std::string e_run, e_data, e_ckpt, e_out;
    auto* ev = app.add_subcommand("eval", "score a trained run against clean ground truth");
    ev->add_option("--run", e_run, "run directory")->required();
    ev->add_option("--data", e_data, "dataset directory (defaults to the one the run used)");
    ev->add_option("--checkpoint", e_ckpt, "checkpoint file");
    ev->add_option("--out", e_out, "report path (default <run>/report.csv)");

    CommonArgs ab_args;
    auto* ab = app.add_subcommand("ablate", "train and evaluate every mode over several seeds");
    add_common(ab, ab_args, true);

    std::vector<std::string> g_ops;
    int g_instances = 20;
    std::uint64_t g_seed = 1;
    std::string g_corrupt;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");
    gc->add_option("--op", g_ops, "restrict to these operations (repeatable)");
    gc->add_option("--instances", g_instances, "random instances per operation");
    gc->add_option("--seed", g_seed, "RNG seed");
    gc->add_option("--corrupt", g_corrupt, "perturb this op's analytic gradient (harness self-test)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }
    spdlog::set_level(spdlog::level::from_str(log_level));

    try {
        if (gen->parsed()) {
            return cmd_gen_data(gen_args);
        }
        if (tr->parsed()) {
            return cmd_train(train_args, train_data, resume);
        }
        if (rd->parsed()) {
            if (r_run.empty() && !(r_gt && !r_data.empty())) {
                throw InvalidInput("render needs --run (or --gt with --data)");
            }
            return cmd_render(r_run, r_data, r_ckpt, r_out, r_frame, r_view, r_gt);
        }
        if (ev->parsed()) {
            return cmd_eval(e_run, e_data, e_ckpt, e_out);
        }
        if (ab->parsed()) {
            return cmd_ablate(ab_args);
        }
        if (gc->parsed()) {
            return cmd_gradcheck(g_ops, g_instances, g_seed, g_corrupt);
        }
    } catch (const InvalidInput& e) {
        spdlog::error("{}", e.what());
        return kExitUsage;
    } catch (const Json::exception& e) {
        spdlog::error("config error: {}", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kExitFault;
    }
    return kExitUsage;
}
