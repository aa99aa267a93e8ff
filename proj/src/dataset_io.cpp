#include "occsplat/dataset_io.hpp"

#include "occsplat/errors.hpp"

#include <fmt/format.h>

#include <algorithm>

namespace fs = std::filesystem;

namespace occsplat {

namespace {

Json vec_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        a.push_back(v[i]);
    }
    return a;
}

template <int N>
Eigen::Matrix<double, N, 1> vec_from(const Json& j) {
    if (!j.is_array() || j.size() != N) {
        throw InvalidInput("scene file: expected an array of " + std::to_string(N) + " numbers");
    }
    Eigen::Matrix<double, N, 1> v;
    for (int i = 0; i < N; ++i) {
        v[i] = j[static_cast<std::size_t>(i)].get<double>();
    }
    return v;
}

std::string frame_name(int t, const char* ext) { return fmt::format("frame_{:04d}.{}", t, ext); }

void ensure_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) {
        throw std::runtime_error("cannot create directory " + p.string() + ": " + ec.message());
    }
}

} // namespace

Json skeleton_to_json(const Skeleton& s) {
    Json joints = Json::array();
    for (const auto& j : s.joints) {
        joints.push_back({{"name", j.name},
                          {"parent", j.parent},
                          {"offset", vec_json(j.local_translation)},
                          {"tail", vec_json(j.tail)},
                          {"radius", j.radius}});
    }
    Json verts = Json::array();
    for (const auto& v : s.bind_vertices) {
        verts.push_back(vec_json(v));
    }
    Json weights = Json::array();
    for (Eigen::Index r = 0; r < s.blend_weights.rows(); ++r) {
        weights.push_back(vec_json(s.blend_weights.row(r).transpose()));
    }
    return {{"joints", joints}, {"bind_vertices", verts}, {"blend_weights", weights}};
}

Skeleton skeleton_from_json(const Json& j) {
    Skeleton s;
    for (const auto& jj : j.at("joints")) {
        s.joints.push_back(Joint{jj.at("name").get<std::string>(), jj.at("parent").get<int>(),
                                 vec_from<3>(jj.at("offset")), vec_from<3>(jj.at("tail")),
                                 jj.at("radius").get<double>()});
    }
    for (const auto& v : j.at("bind_vertices")) {
        s.bind_vertices.push_back(vec_from<3>(v));
    }
    const auto& w = j.at("blend_weights");
    s.blend_weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(w.size()), s.num_joints());
    for (std::size_t r = 0; r < w.size(); ++r) {
        if (w[r].size() != s.joints.size()) {
            throw InvalidInput("scene file: blend weight row has the wrong length");
        }
        for (std::size_t c = 0; c < w[r].size(); ++c) {
            s.blend_weights(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = w[r][c].get<double>();
        }
    }
    s.validate();
    return s;
}

Json camera_to_json(const Camera& c) {
    Json rot = Json::array();
    for (int r = 0; r < 3; ++r) {
        rot.push_back(vec_json(c.rotation.row(r).transpose()));
    }
    return {{"rotation", rot},
            {"translation", vec_json(c.translation)},
            {"fx", c.intrinsics.fx},
            {"fy", c.intrinsics.fy},
            {"cx", c.intrinsics.cx},
            {"cy", c.intrinsics.cy},
            {"height", c.height},
            {"width", c.width}};
}

Camera camera_from_json(const Json& j) {
    Camera c;
    const auto& rot = j.at("rotation");
    if (!rot.is_array() || rot.size() != 3) {
        throw InvalidInput("scene file: camera rotation must have 3 rows");
    }
    for (int r = 0; r < 3; ++r) {
        c.rotation.row(r) = vec_from<3>(rot[static_cast<std::size_t>(r)]).transpose();
    }
    c.translation = vec_from<3>(j.at("translation"));
    c.intrinsics = Pinhole{j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                           j.at("cy").get<double>()};
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    c.validate();
    return c;
}

TensorFile cloud_to_file(const GaussianCloud& cloud) {
    TensorFile f;
    const auto n = static_cast<std::int64_t>(cloud.size());
    for (CloudGroup g : kCloudGroups) {
        const Eigen::VectorXd v = pack_group(cloud, g);
        f.tensors[std::string("cloud.") + group_name(g)] =
            Tensor::f64(std::vector<double>(v.data(), v.data() + v.size()), {n, group_width(g)});
    }
    std::vector<std::int64_t> bind;
    for (const auto& g : cloud.gaussians) {
        bind.push_back(g.bind_vertex);
    }
    f.tensors["cloud.bind_vertex"] = Tensor::i64(bind);
    return f;
}

GaussianCloud cloud_from_file(const TensorFile& f) {
    GaussianCloud cloud;
    const auto bind = f.at("cloud.bind_vertex").as_i64();
    cloud.gaussians.resize(bind.size());
    for (std::size_t i = 0; i < bind.size(); ++i) {
        cloud.gaussians[i].bind_vertex = static_cast<int>(bind[i]);
    }
    for (CloudGroup g : kCloudGroups) {
        const auto v = f.at(std::string("cloud.") + group_name(g)).as_f64();
        if (v.size() != bind.size() * static_cast<std::size_t>(group_width(g))) {
            throw InvalidInput(std::string("cloud tensor ") + group_name(g) + " has the wrong size");
        }
        unpack_group(cloud, g, Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    cloud.check_finite();
    return cloud;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
    const int T = ds.frames();
    std::vector<std::string> files;
    auto put_image = [&](const std::string& rel, const Image& img) {
        write_image(dir / rel, img);
        files.push_back(rel);
    };
    for (const char* sub : {"clean", "occluded", "occ_mask", "skel_mask"}) {
        ensure_dir(dir / sub);
    }
    for (std::size_t v = 0; v < ds.holdout.size(); ++v) {
        ensure_dir(dir / "holdout" / fmt::format("view_{}", v + 1));
    }
    for (int t = 0; t < T; ++t) {
        put_image("clean/" + frame_name(t, "ppm"), ds.clean[t]);
        put_image("occluded/" + frame_name(t, "ppm"), ds.occluded[t]);
        put_image("occ_mask/" + frame_name(t, "pgm"), ds.occ_mask[t]);
        put_image("skel_mask/" + frame_name(t, "pgm"), ds.skel_mask[t]);
        for (std::size_t v = 0; v < ds.holdout.size(); ++v) {
            put_image(fmt::format("holdout/view_{}/", v + 1) + frame_name(t, "ppm"), ds.holdout[v][t]);
        }
    }
    cloud_to_file(ds.gt_cloud).save(dir / "gt_cloud.ckpt");
    files.push_back("gt_cloud.ckpt");

    Json poses = Json::array();
    for (const auto& p : ds.poses) {
        Json rots = Json::array();
        for (const auto& q : p.joint_rotations) {
            rots.push_back(vec_json(q));
        }
        poses.push_back({{"t", p.t}, {"joint_rotations", rots}, {"root_translation", vec_json(p.root_translation)}});
    }
    Json cams = Json::array();
    for (const auto& c : ds.cameras) {
        cams.push_back(camera_to_json(c));
    }
    Json scene;
    scene["seed"] = ds.seed;
    scene["spec"] = scene_spec_to_json(ds.spec);
    scene["skeleton"] = skeleton_to_json(ds.skeleton);
    scene["poses"] = poses;
    scene["cameras"] = cams;
    write_text_atomic(dir / "scene.json", scene.dump(2) + "\n");
    files.push_back("scene.json");

    Json manifest;
    manifest["seed"] = ds.seed;
    Json hashes = Json::object();
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        hashes[f] = sha256_file(dir / f);
    }
    manifest["files"] = hashes;
    write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
    if (!fs::exists(dir / "manifest.json")) {
        throw InvalidInput("no manifest.json in dataset directory " + dir.string());
    }
    Json manifest;
    Json scene;
    try {
        manifest = Json::parse(read_text(dir / "manifest.json"));
        for (const auto& [rel, hash] : manifest.at("files").items()) {
            if (!fs::exists(dir / rel)) {
                throw InvalidInput("dataset file missing: " + (dir / rel).string());
            }
            if (sha256_file(dir / rel) != hash.get<std::string>()) {
                throw InvalidInput("dataset file does not match its manifest hash: " + (dir / rel).string());
            }
        }
        scene = Json::parse(read_text(dir / "scene.json"));
    } catch (const Json::exception& e) {
        throw InvalidInput("malformed dataset metadata in " + dir.string() + ": " + e.what());
    }

    Dataset ds;
    try {
        ds.seed = scene.at("seed").get<std::uint64_t>();
        ds.spec = scene_spec_from_json(scene.at("spec"));
        ds.skeleton = skeleton_from_json(scene.at("skeleton"));
        for (const auto& p : scene.at("poses")) {
            PoseFrame f;
            f.t = p.at("t").get<int>();
            for (const auto& q : p.at("joint_rotations")) {
                f.joint_rotations.push_back(vec_from<4>(q));
            }
            f.root_translation = vec_from<3>(p.at("root_translation"));
            ds.poses.push_back(f);
        }
        for (const auto& c : scene.at("cameras")) {
            ds.cameras.push_back(camera_from_json(c));
        }
    } catch (const Json::exception& e) {
        throw InvalidInput("malformed scene.json in " + dir.string() + ": " + e.what());
    }
    if (ds.cameras.empty() || static_cast<int>(ds.cameras.size()) != ds.spec.holdout_views + 1) {
        throw InvalidInput("scene.json camera count does not match its hold-out view count");
    }
    ds.gt_cloud = cloud_from_file(TensorFile::load(dir / "gt_cloud.ckpt"));
    const int T = ds.frames();
    ds.holdout.assign(static_cast<std::size_t>(ds.spec.holdout_views), {});
    for (int t = 0; t < T; ++t) {
        ds.clean.push_back(read_image(dir / "clean" / frame_name(t, "ppm")));
        ds.occluded.push_back(read_image(dir / "occluded" / frame_name(t, "ppm")));
        ds.occ_mask.push_back(read_image(dir / "occ_mask" / frame_name(t, "pgm")));
        ds.skel_mask.push_back(read_image(dir / "skel_mask" / frame_name(t, "pgm")));
        for (std::size_t v = 0; v < ds.holdout.size(); ++v) {
            ds.holdout[v].push_back(read_image(dir / "holdout" / fmt::format("view_{}", v + 1) / frame_name(t, "ppm")));
        }
    }
    return ds;
}

} // namespace occsplat
