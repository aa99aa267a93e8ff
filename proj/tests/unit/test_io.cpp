#include "occsplat/dataset_io.hpp"
#include "occsplat/errors.hpp"
#include "occsplat/io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

namespace fs = std::filesystem;
using namespace occsplat;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("occsplat_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

} // namespace

TEST(ImageIo, QuantizedRoundTripIsLossless) {
    const fs::path dir = scratch("img");
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> q(0, 255);
    Image rgb(5, 7, 3), gray(4, 3, 1);
    for (double& v : rgb.data) {
        v = q(rng) / 255.0;
    }
    for (double& v : gray.data) {
        v = q(rng) / 255.0;
    }
    write_image(dir / "a.ppm", rgb);
    write_image(dir / "b.pgm", gray);
    EXPECT_EQ(read_image(dir / "a.ppm").data, rgb.data);
    EXPECT_EQ(read_image(dir / "b.pgm").data, gray.data);
    EXPECT_THROW(read_image(dir / "missing.ppm"), std::runtime_error);
    fs::remove_all(dir);
}

TEST(Sha256, KnownVector) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(TensorFile, RoundTripAndCorruption) {
    TensorFile f;
    f.config_hash = "deadbeef";
    f.tensors["a"] = Tensor::f64({1.5, -2.0, 1e-300}, {3});
    f.tensors["b"] = Tensor::i64({7, -9});
    f.tensors["c"] = Tensor::u8("hello");
    const std::string bytes = f.serialize();
    const TensorFile g = TensorFile::deserialize(bytes);
    EXPECT_EQ(g.config_hash, "deadbeef");
    EXPECT_EQ(g.at("a").as_f64(), (std::vector<double>{1.5, -2.0, 1e-300}));
    EXPECT_EQ(g.at("b").as_i64(), (std::vector<std::int64_t>{7, -9}));
    EXPECT_EQ(g.at("c").as_u8(), "hello");
    EXPECT_EQ(g.serialize(), bytes);
    EXPECT_THROW(TensorFile::deserialize(bytes + "x"), InvalidInput);
    EXPECT_THROW(TensorFile::deserialize(bytes.substr(0, bytes.size() - 3)), InvalidInput);
    EXPECT_THROW(TensorFile::deserialize("NOTACKPT"), InvalidInput);
    EXPECT_THROW(g.at("zzz"), InvalidInput);
}

TEST(Heatmap, EndpointsAndDegenerateScale) {
    Image u(1, 3, 1);
    u.data = {0.0, 0.5, 1.0};
    const Image h = heatmap(u, 0.0, 1.0);
    EXPECT_EQ(h.at(0, 0, 2), 0.5);
    EXPECT_EQ(h.at(0, 2, 0), 1.0);
    EXPECT_EQ(h.at(0, 2, 1), 0.0);
    EXPECT_EQ(h.at(0, 1, 1), 1.0);
    const Image flat = heatmap(u, 0.0, 0.0);
    EXPECT_EQ(flat.at(0, 2, 2), 0.5);
}

TEST(DatasetIo, RoundTripAndTamperDetection) {
    const fs::path dir = scratch("ds");
    SceneSpec s;
    s.frames = 4;
    s.holdout_views = 1;
    s.occlusion.coverage = 0.5;
    s.occlusion.affected_fraction = 0.5;
    const Dataset ds = generate_sequence(s, 5);
    save_dataset(ds, dir);
    const Dataset back = load_dataset(dir);
    EXPECT_EQ(back.seed, 5U);
    EXPECT_EQ(back.frames(), 4);
    for (int t = 0; t < 4; ++t) {
        EXPECT_EQ(back.clean[t].data, ds.clean[t].data);
        EXPECT_EQ(back.occluded[t].data, ds.occluded[t].data);
        EXPECT_EQ(back.holdout[0][t].data, ds.holdout[0][t].data);
        EXPECT_EQ(back.poses[t].flatten(), ds.poses[t].flatten());
        // The reloaded scene still renders its own clean frames exactly.
        EXPECT_EQ(quantize(render_ground_truth(back, t, back.cameras[0]).color).data, ds.clean[t].data);
    }
    EXPECT_EQ(back.cameras[1].rotation, ds.cameras[1].rotation);
    EXPECT_EQ(back.skeleton.blend_weights, ds.skeleton.blend_weights);

    // Same seed, same manifest.
    const fs::path dir2 = scratch("ds2");
    save_dataset(generate_sequence(s, 5), dir2);
    EXPECT_EQ(read_text(dir / "manifest.json"), read_text(dir2 / "manifest.json"));

    std::ofstream(dir / "clean" / "frame_0001.ppm", std::ios::app) << "x";
    EXPECT_THROW(load_dataset(dir), InvalidInput);
    fs::remove_all(dir);
    fs::remove_all(dir2);
}
