#include "occsplat/config.hpp"

#include "occsplat/errors.hpp"
#include "occsplat/io.hpp"

#include <algorithm>

namespace occsplat {

namespace {

Json vec3_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from(const Json& j, const char* what) {
    if (!j.is_array() || j.size() != 3) {
        throw InvalidInput(std::string(what) + " must be a 3-element array");
    }
    return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

const char* type_label(const Json& j) {
    if (j.is_number()) {
        return "number";
    }
    return j.type_name();
}

bool same_kind(const Json& a, const Json& b) {
    if (a.is_number() && b.is_number()) {
        // Integer slots reject fractional values; float slots take either.
        if (a.is_number_integer() && b.is_number_float()) {
            return b.get<double>() == static_cast<double>(static_cast<long long>(b.get<double>()));
        }
        return true;
    }
    return a.type() == b.type();
}

// Occlusion presets that seed the occlusion block before user values apply.
void apply_preset(Json& doc, const std::string& name) {
    auto& occ = doc["scene"]["occlusion"];
    if (name == "none") {
        return;
    }
    if (name == "benchmark") {
        occ["coverage"] = 0.5;
        occ["affected_fraction"] = 0.8;
        occ["pattern"] = "center-rectangle";
        return;
    }
    if (name == "clean") {
        occ["coverage"] = 0.0;
        occ["affected_fraction"] = 0.0;
        return;
    }
    throw InvalidInput("unknown occlusion preset '" + name + "' (expected none, benchmark or clean)");
}

} // namespace

void RunConfig::validate() const {
    scene.validate();
    train.validate();
    if (log_interval < 1 || checkpoint_interval < 0) {
        throw InvalidInput("log_interval must be ≥ 1 and checkpoint_interval ≥ 0");
    }
    if (ablate_modes.empty() || ablate_seeds.empty()) {
        throw InvalidInput("ablation needs at least one mode and one seed");
    }
    for (char c : ablate_modes) {
        parse_mode(std::string(1, c));
    }
}

Json scene_spec_to_json(const SceneSpec& s) {
    Json occ;
    occ["preset"] = "none";
    occ["pattern"] = pattern_name(s.occlusion.pattern);
    occ["coverage"] = s.occlusion.coverage;
    occ["affected_fraction"] = s.occlusion.affected_fraction;
    occ["color"] = vec3_json(s.occlusion.color);
    occ["fill"] = fill_name(s.occlusion.fill);
    occ["noise_amplitude"] = s.occlusion.noise_amplitude;
    Json j;
    j["height"] = s.height;
    j["width"] = s.width;
    j["frames"] = s.frames;
    j["frame_interval"] = s.frame_interval;
    j["focal"] = s.focal;
    j["camera_distance"] = s.camera_distance;
    j["holdout_views"] = s.holdout_views;
    j["gt_gaussians"] = s.gt_gaussians;
    j["bind_rings"] = s.bind_rings;
    j["bind_per_ring"] = s.bind_per_ring;
    j["motion_amplitude"] = s.motion_amplitude;
    j["background"] = vec3_json(s.background);
    j["occlusion"] = occ;
    return j;
}

SceneSpec scene_spec_from_json(const Json& j) {
    SceneSpec s;
    s.height = j.at("height").get<int>();
    s.width = j.at("width").get<int>();
    s.frames = j.at("frames").get<int>();
    s.frame_interval = j.at("frame_interval").get<int>();
    s.focal = j.at("focal").get<double>();
    s.camera_distance = j.at("camera_distance").get<double>();
    s.holdout_views = j.at("holdout_views").get<int>();
    s.gt_gaussians = j.at("gt_gaussians").get<int>();
    s.bind_rings = j.at("bind_rings").get<int>();
    s.bind_per_ring = j.at("bind_per_ring").get<int>();
    s.motion_amplitude = j.at("motion_amplitude").get<double>();
    s.background = vec3_from(j.at("background"), "scene.background");
    const Json& o = j.at("occlusion");
    s.occlusion.pattern = parse_pattern(o.at("pattern").get<std::string>());
    s.occlusion.coverage = o.at("coverage").get<double>();
    s.occlusion.affected_fraction = o.at("affected_fraction").get<double>();
    s.occlusion.color = vec3_from(o.at("color"), "scene.occlusion.color");
    s.occlusion.fill = parse_fill(o.at("fill").get<std::string>());
    s.occlusion.noise_amplitude = o.at("noise_amplitude").get<double>();
    return s;
}

Json config_to_json(const RunConfig& c) {
    const TrainConfig& t = c.train;
    Json lr;
    lr["means_init"] = t.lr.means_init;
    lr["means_final"] = t.lr.means_final;
    lr["rotation"] = t.lr.rotation;
    lr["log_scale"] = t.lr.log_scale;
    lr["opacity"] = t.lr.opacity;
    lr["color"] = t.lr.color;
    lr["net"] = t.lr.net;
    Json adam;
    adam["beta1"] = t.adam.beta1;
    adam["beta2"] = t.adam.beta2;
    adam["eps_gaussian"] = t.adam.eps_gaussian;
    adam["eps_net"] = t.adam.eps_net;
    Json train;
    train["mode"] = std::string(1, mode_letter(t.mode));
    train["iterations"] = t.iterations;
    train["warmup"] = t.warmup;
    train["init_per_bone"] = t.init_per_bone;
    train["init_opacity"] = t.init_opacity;
    train["temporal_samples"] = t.temporal_samples;
    train["baseline_uses_net"] = t.baseline_uses_net;
    train["prune_opacity"] = t.prune_opacity;
    train["prune_interval"] = t.prune_interval;
    train["log_interval"] = c.log_interval;
    train["checkpoint_interval"] = c.checkpoint_interval;
    train["lr"] = lr;
    train["adam"] = adam;

    Json net;
    net["depth"] = t.net.depth;
    net["width"] = t.net.width;
    net["skip_layer"] = t.net.skip_layer;
    net["xyz_bands"] = t.net.xyz.bands;
    net["time_bands"] = t.net.time.bands;
    net["include_input"] = t.net.xyz.include_input;

    const LossWeights& w = t.loss;
    Json loss;
    loss["lambda_reg"] = w.lambda_reg;
    loss["lambda_rot"] = w.lambda_rot;
    loss["lambda_scl"] = w.lambda_scl;
    loss["lambda_spa"] = w.lambda_spa;
    loss["lambda_temp"] = w.lambda_temp;
    loss["lambda_mask"] = w.lambda_mask;
    loss["lambda_ssim"] = w.lambda_ssim;
    loss["lambda_lpips"] = w.lambda_lpips;
    loss["eps"] = w.eps;
    loss["frame_interval"] = w.frame_interval;
    loss["knn"] = w.knn;

    Json ablate;
    ablate["modes"] = c.ablate_modes;
    ablate["seeds"] = c.ablate_seeds;

    Json doc;
    doc["seed"] = c.seed;
    doc["deterministic"] = c.deterministic;
    doc["scene"] = scene_spec_to_json(c.scene);
    doc["train"] = train;
    doc["net"] = net;
    doc["loss"] = loss;
    doc["ablate"] = ablate;
    return doc;
}

Json default_config_json() { return config_to_json(RunConfig{}); }

void merge_strict(Json& base, const Json& user, const std::string& path) {
    if (!user.is_object()) {
        throw InvalidInput("config " + (path.empty() ? std::string("document") : "'" + path + "'") +
                           " must be an object");
    }
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) {
            throw InvalidInput("unknown config key '" + key + "'");
        }
        Json& slot = base[it.key()];
        if (slot.is_object()) {
            merge_strict(slot, it.value(), key);
            continue;
        }
        if (!same_kind(slot, it.value())) {
            throw InvalidInput("config key '" + key + "' expects a " + type_label(slot) + ", got " +
                               type_label(it.value()));
        }
        slot = it.value();
    }
}

void apply_override(Json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw InvalidInput("override '" + assignment + "' is not of the form key=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    Json value = Json::parse(text, nullptr, false);
    if (value.is_discarded()) {
        value = text;
    }
    Json patch = value;
    std::string rest = key;
    std::vector<std::string> parts;
    for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
        parts.push_back(rest.substr(0, pos));
    }
    parts.push_back(rest);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
        if (it->empty()) {
            throw InvalidInput("override key '" + key + "' has an empty component");
        }
        Json wrap;
        wrap[*it] = patch;
        patch = wrap;
    }
    merge_strict(doc, patch);
}

Json resolve_config(const Json& user, const std::vector<std::string>& overrides) {
    Json doc = default_config_json();
    Json probe = doc;
    merge_strict(probe, user);
    for (const auto& o : overrides) {
        apply_override(probe, o);
    }
    // The preset is applied to the defaults, then user values win over it.
    const std::string preset = probe["scene"]["occlusion"]["preset"].get<std::string>();
    apply_preset(doc, preset);
    merge_strict(doc, user);
    for (const auto& o : overrides) {
        apply_override(doc, o);
    }
    config_from_json(doc).validate();
    return doc;
}

RunConfig config_from_json(const Json& d) {
    RunConfig c;
    try {
        c.seed = d.at("seed").get<std::uint64_t>();
        c.deterministic = d.at("deterministic").get<bool>();
        c.scene = scene_spec_from_json(d.at("scene"));
        const Json& t = d.at("train");
        TrainConfig& tc = c.train;
        tc.seed = c.seed;
        tc.deterministic = c.deterministic;
        tc.mode = parse_mode(t.at("mode").get<std::string>());
        tc.iterations = t.at("iterations").get<int>();
        tc.warmup = t.at("warmup").get<int>();
        tc.init_per_bone = t.at("init_per_bone").get<int>();
        tc.init_opacity = t.at("init_opacity").get<double>();
        tc.temporal_samples = t.at("temporal_samples").get<int>();
        tc.baseline_uses_net = t.at("baseline_uses_net").get<bool>();
        tc.prune_opacity = t.at("prune_opacity").get<double>();
        tc.prune_interval = t.at("prune_interval").get<int>();
        c.log_interval = t.at("log_interval").get<int>();
        c.checkpoint_interval = t.at("checkpoint_interval").get<int>();
        const Json& lr = t.at("lr");
        tc.lr.means_init = lr.at("means_init").get<double>();
        tc.lr.means_final = lr.at("means_final").get<double>();
        tc.lr.rotation = lr.at("rotation").get<double>();
        tc.lr.log_scale = lr.at("log_scale").get<double>();
        tc.lr.opacity = lr.at("opacity").get<double>();
        tc.lr.color = lr.at("color").get<double>();
        tc.lr.net = lr.at("net").get<double>();
        const Json& adam = t.at("adam");
        tc.adam.beta1 = adam.at("beta1").get<double>();
        tc.adam.beta2 = adam.at("beta2").get<double>();
        tc.adam.eps_gaussian = adam.at("eps_gaussian").get<double>();
        tc.adam.eps_net = adam.at("eps_net").get<double>();

        const Json& n = d.at("net");
        tc.net.depth = n.at("depth").get<int>();
        tc.net.width = n.at("width").get<int>();
        tc.net.skip_layer = n.at("skip_layer").get<int>();
        tc.net.xyz.bands = n.at("xyz_bands").get<int>();
        tc.net.time.bands = n.at("time_bands").get<int>();
        tc.net.xyz.include_input = n.at("include_input").get<bool>();
        tc.net.time.include_input = tc.net.xyz.include_input;

        const Json& l = d.at("loss");
        LossWeights& w = tc.loss;
        w.lambda_reg = l.at("lambda_reg").get<double>();
        w.lambda_rot = l.at("lambda_rot").get<double>();
        w.lambda_scl = l.at("lambda_scl").get<double>();
        w.lambda_spa = l.at("lambda_spa").get<double>();
        w.lambda_temp = l.at("lambda_temp").get<double>();
        w.lambda_mask = l.at("lambda_mask").get<double>();
        w.lambda_ssim = l.at("lambda_ssim").get<double>();
        w.lambda_lpips = l.at("lambda_lpips").get<double>();
        w.eps = l.at("eps").get<double>();
        w.frame_interval = l.at("frame_interval").get<int>();
        w.knn = l.at("knn").get<int>();

        c.ablate_modes = d.at("ablate").at("modes").get<std::string>();
        c.ablate_seeds = d.at("ablate").at("seeds").get<std::vector<std::uint64_t>>();
    } catch (const Json::exception& e) {
        throw InvalidInput(std::string("malformed config: ") + e.what());
    }
    return c;
}

std::string config_hash(const Json& doc) { return sha256_hex(doc.dump()); }

} // namespace occsplat
