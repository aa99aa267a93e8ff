#pragma once

#include "occsplat/config.hpp"
#include "occsplat/io.hpp"
#include "occsplat/synth.hpp"

#include <filesystem>

namespace occsplat {

/// Writes clean/, occluded/, occ_mask/, skel_mask/, holdout/view_<v>/,
/// gt_cloud.ckpt, scene.json and finally manifest.json (seed plus SHA-256 of
/// every other file).
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

/// Verifies manifest hashes, then rebuilds the dataset. Throws InvalidInput
/// naming the offending file on mismatch.
Dataset load_dataset(const std::filesystem::path& dir);

Json skeleton_to_json(const Skeleton& s);
Skeleton skeleton_from_json(const Json& j);
Json camera_to_json(const Camera& c);
Camera camera_from_json(const Json& j);

TensorFile cloud_to_file(const GaussianCloud& cloud);
GaussianCloud cloud_from_file(const TensorFile& f);

} // namespace occsplat
