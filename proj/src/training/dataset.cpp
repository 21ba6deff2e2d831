#include "deltar/training/dataset.hpp"

#include <algorithm>
#include <cstdio>

#include "deltar/io.hpp"

namespace deltar::training {

namespace fs = std::filesystem;

void write_scene(const fs::path& dir, const Scene& scene, const SceneSpec& spec) {
  fs::create_directories(dir);
  write_ppm(dir / "rgb.ppm", spec.width, spec.height, scene.rgb);
  write_dmap(dir / "depth_rgb.dmap", scene.depth_rgb);
  save_json_file(dir / "zones.json", to_json(scene.zones));

  json meta;
  meta["schema"] = 1;
  meta["k_rgb"] = to_json(spec.k_rgb);
  meta["k_tof"] = to_json(spec.k_tof);
  meta["rgb_to_tof"] = to_json(spec.rgb_to_tof);
  save_json_file(dir / "meta.json", meta);
}

LoadedScene load_scene(const fs::path& dir) {
  LoadedScene s;
  s.rgb = read_ppm(dir / "rgb.ppm", s.width, s.height);
  s.depth_rgb = read_dmap(dir / "depth_rgb.dmap");
  if (s.depth_rgb.width != s.width || s.depth_rgb.height != s.height)
    throw DataError("load_scene: rgb and depth sizes disagree in " + dir.string());
  s.zones = zone_grid_from_json(load_json_file(dir / "zones.json"));

  const json meta = load_json_file(dir / "meta.json");
  try {
    if (meta.at("schema").get<int>() != 1)
      throw DataError("load_scene: unsupported meta schema in " + (dir / "meta.json").string());
    s.k_rgb = intrinsics_from_json(meta.at("k_rgb"));
    s.k_tof = intrinsics_from_json(meta.at("k_tof"));
    s.rgb_to_tof = extrinsics_from_json(meta.at("rgb_to_tof"));
  } catch (const json::exception& e) {
    throw DataError("load_scene: " + (dir / "meta.json").string() + ": " + e.what());
  }
  return s;
}

std::vector<fs::path> generate_dataset(const fs::path& root, const SceneSpec& base, int count) {
  if (count < 1) throw InvalidArgument("generate_dataset: count must be positive");
  fs::create_directories(root);
  std::vector<fs::path> dirs;
  dirs.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    SceneSpec spec = base;
    spec.seed = base.seed + static_cast<std::uint32_t>(i);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%05d", i);
    const fs::path dir = root / name;
    write_scene(dir, generate_scene(spec), spec);
    dirs.push_back(dir);
  }
  return dirs;
}

std::vector<fs::path> list_scene_dirs(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("list_scene_dirs: no such directory: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && e.path().filename().string().rfind("scene_", 0) == 0)
      dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw DataError("list_scene_dirs: no scene_* directories under " + root.string());
  return dirs;
}

std::vector<LoadedScene> load_scenes(const std::vector<fs::path>& dirs) {
  std::vector<LoadedScene> out;
  out.reserve(dirs.size());
  for (const auto& d : dirs) out.push_back(load_scene(d));
  return out;
}

}  // namespace deltar::training
