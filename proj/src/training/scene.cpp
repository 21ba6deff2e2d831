#include "deltar/training/scene.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace deltar::training {

namespace {

constexpr double kRayEps = 1e-9;

struct Hit {
  double t = -1.0;  // ray parameter; equals z-depth in the casting camera's frame
  Vector3d normal = Vector3d::Zero();
  Vector3d position = Vector3d::Zero();
  Vector3d color = Vector3d::Zero();
  double phase = 0.0;
  bool ok() const { return t > kRayEps; }
};

struct Wall {
  Plane plane;
  Vector3d color;
  double phase;
};

struct Box {
  Vector3d center;
  Vector3d half;
  double yaw;  // about the camera y axis
  Vector3d color;
  double phase;
};

struct Sphere {
  Vector3d center;
  double radius;
  Vector3d color;
  double phase;
};

Eigen::Matrix3d yaw_rotation(double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  Eigen::Matrix3d r;
  r << c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c;
  return r;
}

void consider(Hit& best, const Hit& h) {
  if (h.ok() && (!best.ok() || h.t < best.t)) best = h;
}

Hit hit_wall(const Vector3d& o, const Vector3d& d, const Wall& w) {
  Hit h;
  const double denom = w.plane.normal.dot(d);
  if (std::abs(denom) < 1e-12) return h;
  const double t = -(w.plane.offset + w.plane.normal.dot(o)) / denom;
  if (t <= kRayEps) return h;
  h.t = t;
  h.position = o + t * d;
  h.normal = denom > 0.0 ? Vector3d(-w.plane.normal) : w.plane.normal;
  h.color = w.color;
  h.phase = w.phase;
  return h;
}

Hit hit_sphere(const Vector3d& o, const Vector3d& d, const Sphere& s) {
  Hit h;
  const Vector3d oc = o - s.center;
  const double a = d.dot(d);
  const double b = 2.0 * d.dot(oc);
  const double c = oc.dot(oc) - s.radius * s.radius;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return h;
  const double root = std::sqrt(disc);
  double t = (-b - root) / (2.0 * a);
  if (t <= kRayEps) t = (-b + root) / (2.0 * a);
  if (t <= kRayEps) return h;
  h.t = t;
  h.position = o + t * d;
  h.normal = (h.position - s.center) / s.radius;
  h.color = s.color;
  h.phase = s.phase;
  return h;
}

Hit hit_box(const Vector3d& o, const Vector3d& d, const Box& box) {
  Hit h;
  const Eigen::Matrix3d r = yaw_rotation(box.yaw);
  const Vector3d ob = r.transpose() * (o - box.center);
  const Vector3d db = r.transpose() * d;

  double t_in = -std::numeric_limits<double>::infinity();
  double t_out = std::numeric_limits<double>::infinity();
  int in_axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(db[a]) < 1e-12) {
      if (std::abs(ob[a]) > box.half[a]) return h;
      continue;
    }
    double t0 = (-box.half[a] - ob[a]) / db[a];
    double t1 = (box.half[a] - ob[a]) / db[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_in) {
      t_in = t0;
      in_axis = a;
    }
    t_out = std::min(t_out, t1);
  }
  if (in_axis < 0 || t_in > t_out || t_in <= kRayEps) return h;
  h.t = t_in;
  h.position = o + t_in * d;
  Vector3d n = Vector3d::Zero();
  n[in_axis] = db[in_axis] > 0.0 ? -1.0 : 1.0;
  h.normal = r * n;
  h.color = box.color;
  h.phase = box.phase;
  return h;
}

struct Geometry {
  Wall wall;
  std::vector<Box> boxes;
  std::vector<Sphere> spheres;

  Hit cast(const Vector3d& o, const Vector3d& d) const {
    Hit best = hit_wall(o, d, wall);
    for (const auto& b : boxes) consider(best, hit_box(o, d, b));
    for (const auto& s : spheres) consider(best, hit_sphere(o, d, s));
    return best;
  }
};

double uniform(std::mt19937& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

Vector3d random_color(std::mt19937& rng) {
  return {uniform(rng, 0.25, 0.95), uniform(rng, 0.25, 0.95), uniform(rng, 0.25, 0.95)};
}

Geometry build_geometry(const SceneSpec& spec, std::mt19937& rng) {
  Geometry g;

  const double wall_d = uniform(rng, spec.wall_distance_min, spec.wall_distance_max);
  const double tilt = uniform(rng, 0.0, spec.wall_tilt_max);
  const double azim = uniform(rng, 0.0, 2.0 * M_PI);
  // Tilt the fronto-parallel normal by `tilt` toward a random image direction.
  Vector3d n(std::sin(tilt) * std::cos(azim), std::sin(tilt) * std::sin(azim), -std::cos(tilt));
  g.wall.plane = Plane(n, -n.dot(Vector3d(0.0, 0.0, wall_d)));
  g.wall.color = random_color(rng);
  g.wall.phase = uniform(rng, 0.0, 2.0 * M_PI);

  auto place = [&](double size_lo, double size_hi) {
    const double u = uniform(rng, 0.15, 0.85) * spec.k_rgb.width;
    const double v = uniform(rng, 0.15, 0.85) * spec.k_rgb.height;
    const double depth = uniform(rng, spec.object_distance_min, spec.object_distance_max);
    const Vector3d dir((u - spec.k_rgb.cx) / spec.k_rgb.fx, (v - spec.k_rgb.cy) / spec.k_rgb.fy,
                       1.0);
    const double size = uniform(rng, size_lo, size_hi);
    return std::make_pair(Vector3d(dir * depth), size);
  };

  const int n_boxes = uniform_int(rng, spec.min_boxes, spec.max_boxes);
  for (int i = 0; i < n_boxes; ++i) {
    Box b;
    auto [center, size] = place(spec.object_size_min, spec.object_size_max);
    b.center = center;
    b.half = 0.5 * Vector3d(size, uniform(rng, spec.object_size_min, spec.object_size_max),
                            uniform(rng, spec.object_size_min, spec.object_size_max));
    b.yaw = uniform(rng, 0.0, 2.0 * M_PI);
    b.color = random_color(rng);
    b.phase = uniform(rng, 0.0, 2.0 * M_PI);
    g.boxes.push_back(b);
  }
  const int n_spheres = uniform_int(rng, spec.min_spheres, spec.max_spheres);
  for (int i = 0; i < n_spheres; ++i) {
    Sphere s;
    auto [center, size] = place(spec.object_size_min, spec.object_size_max);
    s.center = center;
    s.radius = 0.5 * size;
    s.color = random_color(rng);
    s.phase = uniform(rng, 0.0, 2.0 * M_PI);
    g.spheres.push_back(s);
  }
  return g;
}

float shade_channel(const Hit& h, bool textured, int channel) {
  static const Vector3d light = Vector3d(-0.3, -0.5, -0.8).normalized();
  const double lambert = std::max(0.0, h.normal.normalized().dot(light));
  double tex = 1.0;
  if (textured) {
    const Vector3d& p = h.position;
    tex = 0.55 + 0.45 * std::sin(18.0 * p.x() + h.phase) * std::sin(16.0 * p.y() + h.phase) *
                     std::cos(14.0 * p.z() + 0.5 * h.phase);
  }
  const double v = h.color[channel] * (0.25 + 0.65 * lambert) * tex;
  return static_cast<float>(std::clamp(v, 0.0, 1.0));
}

}  // namespace

SceneSpec SceneSpec::standard(std::uint32_t seed) {
  SceneSpec s;
  s.seed = seed;
  s.k_rgb = CameraIntrinsics::from_fov(62.0 * M_PI / 180.0, 48.0 * M_PI / 180.0, s.width,
                                       s.height);
  s.sensor = SensorConfig{};
  const int tof_px_w = s.sensor.cols * s.sensor.virtual_resolution;
  const int tof_px_h = s.sensor.rows * s.sensor.virtual_resolution;
  s.k_tof = CameraIntrinsics::from_fov(ZoneGrid::kDefaultFov, ZoneGrid::kDefaultFov, tof_px_w,
                                       tof_px_h);
  s.rgb_to_tof = Extrinsics(Matrix3d::Identity(), Vector3d(0.025, -0.004, 0.0));
  return s;
}

void SceneSpec::validate() const {
  if (width < 1 || height < 1) throw InvalidArgument("SceneSpec: empty RGB raster");
  if (k_rgb.width != width || k_rgb.height != height)
    throw InvalidArgument("SceneSpec: RGB intrinsics size disagrees with the raster");
  sensor.validate();
  if (k_tof.width != sensor.cols * sensor.virtual_resolution ||
      k_tof.height != sensor.rows * sensor.virtual_resolution)
    throw InvalidArgument("SceneSpec: ToF intrinsics size disagrees with the sensor raster");
  if (min_boxes < 0 || max_boxes < min_boxes || min_spheres < 0 || max_spheres < min_spheres)
    throw InvalidArgument("SceneSpec: bad primitive count range");
  if (!(wall_distance_min > 0.0) || wall_distance_max < wall_distance_min ||
      wall_distance_max > sensor.max_range)
    throw InvalidArgument("SceneSpec: wall distance range outside the sensor range");
  if (!(wall_tilt_max >= 0.0 && wall_tilt_max < 0.7))
    throw InvalidArgument("SceneSpec: wall tilt must lie in [0, 0.7) rad");
  if (!(object_distance_min > 0.0) || object_distance_max < object_distance_min)
    throw InvalidArgument("SceneSpec: bad object distance range");
  if (!(object_size_min > 0.0) || object_size_max < object_size_min)
    throw InvalidArgument("SceneSpec: bad object size range");
}

Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937 rng(spec.seed);
  const Geometry geo = build_geometry(spec, rng);

  Scene out;
  out.rgb.assign(static_cast<std::size_t>(spec.width) * spec.height * 3, 0.05f);
  out.depth_rgb = DepthMap(spec.width, spec.height);

  std::size_t in_range = 0;
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const Vector3d dir((x + 0.5 - spec.k_rgb.cx) / spec.k_rgb.fx,
                         (y + 0.5 - spec.k_rgb.cy) / spec.k_rgb.fy, 1.0);
      const Hit h = geo.cast(Vector3d::Zero(), dir);
      if (!h.ok()) {
        out.depth_rgb.set_invalid(x, y);
        continue;
      }
      const std::size_t px = (static_cast<std::size_t>(y) * spec.width + x) * 3;
      for (int c = 0; c < 3; ++c) out.rgb[px + c] = shade_channel(h, spec.textured, c);
      if (h.t >= spec.sensor.min_range && h.t <= spec.sensor.max_range) {
        out.depth_rgb.set(x, y, static_cast<float>(h.t));
        ++in_range;
      } else {
        out.depth_rgb.set_invalid(x, y);
      }
    }
  }
  if (2 * in_range < static_cast<std::size_t>(spec.width) * spec.height)
    throw Error("generate_scene: fewer than half of the pixels see geometry in range");

  // Zone-sensor pass: rays from the second viewpoint, cast in RGB-frame
  // coordinates. With the direction's z fixed to 1 in the sensor frame, the
  // ray parameter of a hit is exactly the sensor-frame z-depth.
  const Matrix3d& r = spec.rgb_to_tof.rotation;
  const Vector3d tof_origin = -(r.transpose() * spec.rgb_to_tof.translation);
  out.depth_tof = DepthMap(spec.k_tof.width, spec.k_tof.height);
  for (int y = 0; y < spec.k_tof.height; ++y) {
    for (int x = 0; x < spec.k_tof.width; ++x) {
      const Vector3d dir_tof((x + 0.5 - spec.k_tof.cx) / spec.k_tof.fx,
                             (y + 0.5 - spec.k_tof.cy) / spec.k_tof.fy, 1.0);
      const Hit h = geo.cast(tof_origin, r.transpose() * dir_tof);
      if (h.ok() && h.t >= spec.sensor.min_range && h.t <= spec.sensor.max_range)
        out.depth_tof.set(x, y, static_cast<float>(h.t));
      else
        out.depth_tof.set_invalid(x, y);
    }
  }

  out.zones = simulate_zone_grid(out.depth_tof, spec.k_tof, spec.sensor);
  return out;
}

}  // namespace deltar::training
