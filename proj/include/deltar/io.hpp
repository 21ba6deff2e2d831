#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "deltar/geometry.hpp"
#include "deltar/sensor_sim.hpp"

namespace deltar {

using nlohmann::json;

// "DMAP" raster: magic, u32 LE width, u32 LE height, width*height float32 LE
// depths row-major; NaN encodes invalid.
void write_dmap(const std::filesystem::path& path, const DepthMap& map);
DepthMap read_dmap(const std::filesystem::path& path);

// Binary P6, maxval 255. Pixels are interleaved RGB rows, values in [0, 1].
void write_ppm(const std::filesystem::path& path, int width, int height,
               const std::vector<float>& rgb);
std::vector<float> read_ppm(const std::filesystem::path& path, int& width, int& height);

json to_json(const CameraIntrinsics& k);
json to_json(const Extrinsics& e);
json to_json(const Plane& p);
json to_json(const ZoneGrid& g);
json to_json(const SensorConfig& c);

CameraIntrinsics intrinsics_from_json(const json& j);
Extrinsics extrinsics_from_json(const json& j);
Plane plane_from_json(const json& j);
ZoneGrid zone_grid_from_json(const json& j);
SensorConfig sensor_config_from_json(const json& j);

json load_json_file(const std::filesystem::path& path);
void save_json_file(const std::filesystem::path& path, const json& j);

}  // namespace deltar
