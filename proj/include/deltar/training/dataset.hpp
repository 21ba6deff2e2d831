#pragma once

#include <filesystem>
#include <vector>

#include "deltar/training/scene.hpp"

namespace deltar::training {

/// One scene read back from disk, everything the trainer needs per sample.
struct LoadedScene {
  int width = 0, height = 0;
  std::vector<float> rgb;  // interleaved, [0,1]
  DepthMap depth_rgb;
  ZoneGrid zones;
  CameraIntrinsics k_rgb;
  CameraIntrinsics k_tof;
  Extrinsics rgb_to_tof;
};

/// Writes rgb.ppm, depth_rgb.dmap, zones.json and meta.json into `dir`
/// (created if missing). meta.json carries the camera pair and extrinsics.
void write_scene(const std::filesystem::path& dir, const Scene& scene, const SceneSpec& spec);

/// Reads a directory written by write_scene. Throws DataError (with the
/// offending path in the message) when a file is missing or malformed.
LoadedScene load_scene(const std::filesystem::path& dir);

/// Renders `count` scenes from consecutive seeds (base.seed + i) into
/// root/scene_00000 ... and returns the directories in index order.
std::vector<std::filesystem::path> generate_dataset(const std::filesystem::path& root,
                                                    const SceneSpec& base, int count);

/// scene_* subdirectories of root, sorted by name. Throws DataError when
/// root does not exist or holds none.
std::vector<std::filesystem::path> list_scene_dirs(const std::filesystem::path& root);

/// Loads every directory in order.
std::vector<LoadedScene> load_scenes(const std::vector<std::filesystem::path>& dirs);

}  // namespace deltar::training
