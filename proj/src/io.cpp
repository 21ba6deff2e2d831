#include "deltar/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace deltar {

namespace {

void write_u32le(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void write_dmap(const std::filesystem::path& path, const DepthMap& map) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os.write("DMAP", 4);
  write_u32le(os, static_cast<uint32_t>(map.width));
  write_u32le(os, static_cast<uint32_t>(map.height));
  std::vector<float> buf(map.values);
  for (std::size_t i = 0; i < buf.size(); ++i)
    if (!map.valid[i]) buf[i] = std::numeric_limits<float>::quiet_NaN();
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!os) throw DataError("short write: " + path.string());
}

DepthMap read_dmap(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "DMAP", 4) != 0)
    throw DataError("not a DMAP file: " + path.string());
  const uint32_t w = read_u32le(is);
  const uint32_t h = read_u32le(is);
  if (!is || w == 0 || h == 0 || w > (1u << 20) || h > (1u << 20))
    throw DataError("bad DMAP header: " + path.string());
  DepthMap map(static_cast<int>(w), static_cast<int>(h));
  is.read(reinterpret_cast<char*>(map.values.data()),
          static_cast<std::streamsize>(map.values.size() * sizeof(float)));
  if (!is) throw DataError("truncated DMAP payload: " + path.string());
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    if (std::isnan(map.values[i]) || map.values[i] <= 0.0f) {
      map.values[i] = std::numeric_limits<float>::quiet_NaN();
      map.valid[i] = 0;
    } else {
      map.valid[i] = 1;
    }
  }
  return map;
}

void write_ppm(const std::filesystem::path& path, int width, int height,
               const std::vector<float>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3)
    throw InvalidArgument("write_ppm: buffer size mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os << "P6\n" << width << " " << height << "\n255\n";
  std::vector<unsigned char> bytes(rgb.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    const float v = std::clamp(rgb[i], 0.0f, 1.0f);
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("short write: " + path.string());
}

std::vector<float> read_ppm(const std::filesystem::path& path, int& width, int& height) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path.string());
  std::string magic;
  int maxval = 0;
  is >> magic >> width >> height >> maxval;
  if (!is || magic != "P6" || maxval != 255 || width <= 0 || height <= 0)
    throw DataError("not a P6 ppm: " + path.string());
  is.get();  // single whitespace after header
  std::vector<unsigned char> bytes(static_cast<std::size_t>(width) * height * 3);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!is) throw DataError("truncated ppm payload: " + path.string());
  std::vector<float> rgb(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) rgb[i] = bytes[i] / 255.0f;
  return rgb;
}

json to_json(const CameraIntrinsics& k) {
  return json{{"fx", k.fx},         {"fy", k.fy},           {"cx", k.cx},
              {"cy", k.cy},         {"width", k.width},     {"height", k.height}};
}

CameraIntrinsics intrinsics_from_json(const json& j) {
  try {
    return CameraIntrinsics(j.at("fx").get<double>(), j.at("fy").get<double>(),
                            j.at("cx").get<double>(), j.at("cy").get<double>(),
                            j.at("width").get<int>(), j.at("height").get<int>());
  } catch (const json::exception& e) {
    throw DataError(std::string("bad intrinsics json: ") + e.what());
  }
}

json to_json(const Extrinsics& e) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r) rot.push_back({e.rotation(r, 0), e.rotation(r, 1), e.rotation(r, 2)});
  return json{{"rotation", rot},
              {"translation", {e.translation.x(), e.translation.y(), e.translation.z()}}};
}

Extrinsics extrinsics_from_json(const json& j) {
  try {
    Matrix3d rot;
    const auto& r = j.at("rotation");
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 3; ++c) rot(i, c) = r.at(i).at(c).get<double>();
    const auto& t = j.at("translation");
    return Extrinsics(rot, Vector3d(t.at(0).get<double>(), t.at(1).get<double>(),
                                    t.at(2).get<double>()));
  } catch (const json::exception& e) {
    throw DataError(std::string("bad extrinsics json: ") + e.what());
  }
}

json to_json(const Plane& p) {
  return json{{"normal", {p.normal.x(), p.normal.y(), p.normal.z()}}, {"offset", p.offset}};
}

Plane plane_from_json(const json& j) {
  try {
    const auto& n = j.at("normal");
    return Plane(Vector3d(n.at(0).get<double>(), n.at(1).get<double>(), n.at(2).get<double>()),
                 j.at("offset").get<double>());
  } catch (const json::exception& e) {
    throw DataError(std::string("bad plane json: ") + e.what());
  }
}

json to_json(const ZoneGrid& g) {
  json zones = json::array();
  for (const auto& r : g.readings) {
    // mean/var are unread for invalid zones; serialize zeros.
    zones.push_back({{"mean", r.valid ? r.mean : 0.0},
                     {"var", r.valid ? r.variance : 0.0},
                     {"valid", r.valid}});
  }
  return json{{"rows", g.rows},
              {"cols", g.cols},
              {"fov_h_deg", g.fov_h * 180.0 / M_PI},
              {"fov_v_deg", g.fov_v * 180.0 / M_PI},
              {"zones", zones}};
}

ZoneGrid zone_grid_from_json(const json& j) {
  try {
    ZoneGrid g(j.at("rows").get<int>(), j.at("cols").get<int>());
    g.fov_h = j.at("fov_h_deg").get<double>() * M_PI / 180.0;
    g.fov_v = j.at("fov_v_deg").get<double>() * M_PI / 180.0;
    const auto& zones = j.at("zones");
    if (zones.size() != g.readings.size())
      throw DataError("zone grid json: zone count mismatch");
    for (std::size_t i = 0; i < g.readings.size(); ++i) {
      g.readings[i].mean = zones.at(i).at("mean").get<double>();
      g.readings[i].variance = zones.at(i).at("var").get<double>();
      g.readings[i].valid = zones.at(i).at("valid").get<bool>();
    }
    return g;
  } catch (const json::exception& e) {
    throw DataError(std::string("bad zone grid json: ") + e.what());
  }
}

json to_json(const SensorConfig& c) {
  return json{{"min_range", c.min_range},
              {"max_range", c.max_range},
              {"min_samples_per_zone", c.min_samples_per_zone},
              {"rows", c.rows},
              {"cols", c.cols},
              {"virtual_resolution", c.virtual_resolution}};
}

SensorConfig sensor_config_from_json(const json& j) {
  try {
    SensorConfig c;
    c.min_range = j.value("min_range", c.min_range);
    c.max_range = j.value("max_range", c.max_range);
    c.min_samples_per_zone = j.value("min_samples_per_zone", c.min_samples_per_zone);
    c.rows = j.value("rows", c.rows);
    c.cols = j.value("cols", c.cols);
    c.virtual_resolution = j.value("virtual_resolution", c.virtual_resolution);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("bad sensor config json: ") + e.what());
  }
}

json load_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open: " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw DataError("bad json in " + path.string() + ": " + e.what());
  }
}

void save_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os << j.dump(2) << "\n";
  if (!os) throw DataError("short write: " + path.string());
}

}  // namespace deltar
