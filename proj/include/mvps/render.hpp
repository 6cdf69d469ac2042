#pragma once

#include <algorithm>
#include <vector>

#include "mvps/camera.hpp"
#include "mvps/image.hpp"
#include "mvps/shapes.hpp"

namespace mvps::scene {

// Infinitely distant light: unit direction from the surface toward the
// source, positive intensity. Directions are expressed in the camera frame
// of the view they illuminate (turntable rig: same set for every view).
struct DirectionalLight {
  Vec3 dir{0, 0, -1};
  double intensity = 1.0;
};

// Radiance of one surface sample under one light:
//   e * (albedo/pi + ks * max(n.h, 0)^a) * max(n.l, 0) + N(0, sigma^2)
// clamped to be non-negative. All vectors must be unit length and expressed
// in one common frame.
inline double shade_pixel(const Vec3& n, const DirectionalLight& light, const Material& mat,
                          const Vec3& view_dir, double sigma_img, Rng& rng) {
  if (std::fabs(norm(n) - 1.0) > 1e-6)
    throw ContractError("shade_pixel: normal must be unit length");
  if (sigma_img < 0) throw ContractError("shade_pixel: sigma_img must be >= 0");
  double cos_shadow = std::fmax(dot(n, light.dir), 0.0);
  double brdf = mat.albedo / kPi;
  if (mat.specular_strength > 0) {
    Vec3 h = normalized(light.dir + view_dir);
    double nh = std::fmax(dot(n, h), 0.0);
    brdf += mat.specular_strength * std::pow(nh, mat.specular_exponent);
  }
  double value = light.intensity * brdf * cos_shadow;
  if (sigma_img > 0) value += sigma_img * rng.gaussian();
  return std::fmax(value, 0.0);
}

struct ViewRender {
  std::vector<Image> light_images;  // one grayscale image per light
  Image depth;                      // camera-frame z; 0 where masked out
  Image normal;                     // world-frame unit normals, 3 channels
  Image mask;                       // 1 inside the object silhouette
  int nonconverged = 0;             // rays masked out after the step limit
};

namespace detail {

inline bool ray_box(const Vec3& o, const Vec3& d, const Vec3& lo, const Vec3& hi, double& t0,
                    double& t1) {
  t0 = 0;
  t1 = 1e30;
  for (int a = 0; a < 3; ++a) {
    double inv = 1.0 / d[a];
    double ta = (lo[a] - o[a]) * inv;
    double tb = (hi[a] - o[a]) * inv;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::fmax(t0, ta);
    t1 = std::fmin(t1, tb);
    if (t0 > t1) return false;
  }
  return true;
}

struct TraceHit {
  bool hit = false;
  bool gave_up = false;
  double t = 0;
};

// Sphere tracing with a bisection polish; smooth CSG combinations are only
// approximate distance bounds, so a sign change is bracketed and refined.
inline TraceHit sphere_trace(const AnalyticShape& shape, const Vec3& o, const Vec3& dir,
                             int max_steps, double eps_hit) {
  Vec3 lo = shape.bound_lo(), hi = shape.bound_hi();
  Vec3 margin = (hi - lo) * 0.02;
  double t0, t1;
  if (!ray_box(o, dir, lo - margin, hi + margin, t0, t1)) return {};
  double t = t0;
  double prev_t = t0;
  for (int i = 0; i < max_steps; ++i) {
    double d = shape.distance(o + dir * t);
    if (d < eps_hit) {
      if (d >= -eps_hit) return {true, false, t};
      // Overshot: bisect between the last outside point and here.
      double a = prev_t, b = t;
      for (int j = 0; j < 80; ++j) {
        double m = 0.5 * (a + b);
        double dm = shape.distance(o + dir * m);
        if (std::fabs(dm) <= eps_hit) return {true, false, m};
        (dm > 0 ? a : b) = m;
      }
      return {true, false, 0.5 * (a + b)};
    }
    prev_t = t;
    t += d;
    if (t > t1 + 0.1) return {};
  }
  return {false, true, 0};
}

}  // namespace detail

struct RenderOptions {
  int max_steps = 256;
  double hit_eps_scale = 1e-5;  // of the bounding-box diagonal
};

// Renders one turntable view: per-pixel sphere tracing for depth, analytic
// SDF gradient for the ground-truth normal, then one shaded image per light.
// Light directions come in the camera frame; re-rendering with the same seed
// is bit-identical.
inline ViewRender render_view(const AnalyticShape& shape, const Camera& camera,
                              const std::vector<DirectionalLight>& lights, double sigma_img,
                              uint64_t seed, const RenderOptions& opt = {}) {
  camera.validate();
  int w = camera.width, h = camera.height;
  ViewRender out;
  out.depth = Image(w, h, 1);
  out.normal = Image(w, h, 3);
  out.mask = Image(w, h, 1);
  out.light_images.assign(lights.size(), Image(w, h, 1));
  double eps_hit = opt.hit_eps_scale * shape.bound_diagonal();

  std::vector<Vec3> world_dirs(lights.size());
  for (size_t k = 0; k < lights.size(); ++k) {
    if (std::fabs(norm(lights[k].dir) - 1.0) > 1e-6)
      throw ContractError("render_view: light direction must be unit length");
    if (lights[k].intensity <= 0)
      throw ContractError("render_view: light intensity must be positive");
    world_dirs[k] = camera.R.transposed() * lights[k].dir;
  }

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      Vec3 origin, dir;
      camera.pixel_ray(double(x), double(y), origin, dir);
      detail::TraceHit hit = detail::sphere_trace(shape, origin, dir, opt.max_steps, eps_hit);
      if (hit.gave_up) ++out.nonconverged;
      if (!hit.hit) continue;
      Vec3 point = origin + dir * hit.t;
      AnalyticShape::Sample s = shape.sample(point);
      Vec3 n = normalized(s.grad);
      out.mask.at(x, y) = 1.0;
      out.depth.at(x, y) = hit.t * camera.ray_depth_scale(dir);
      out.normal.at(x, y, 0) = n.x;
      out.normal.at(x, y, 1) = n.y;
      out.normal.at(x, y, 2) = n.z;
      const Material& mat = shape.material(s.material);
      Vec3 view_dir = -dir;
      Rng rng = Rng::derive(seed, uint64_t(y) * uint64_t(w) + uint64_t(x));
      for (size_t k = 0; k < lights.size(); ++k) {
        DirectionalLight wl{world_dirs[k], lights[k].intensity};
        out.light_images[k].at(x, y) = shade_pixel(n, wl, mat, view_dir, sigma_img, rng);
      }
    }
  }
  return out;
}

// Per-pixel median over the light axis; an even count takes the mean of the
// two central order statistics.
inline Image median_image(const std::vector<Image>& images) {
  if (images.empty()) throw ContractError("median_image: need at least one image");
  int w = images[0].width, h = images[0].height;
  for (const Image& im : images)
    if (im.width != w || im.height != h || im.channels != 1)
      throw StructuralError("median_image: images must share one grayscale geometry");
  Image out(w, h, 1);
  std::vector<double> vals(images.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      for (size_t k = 0; k < images.size(); ++k) vals[k] = images[k].at(x, y);
      std::sort(vals.begin(), vals.end());
      size_t n = vals.size();
      out.at(x, y) = n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Standard rigs for synthetic captures.
// ---------------------------------------------------------------------------

// Cameras on a ring of the given radius looking at the origin; elevations
// (degrees above the xy-plane) cycle through `elevations_deg`.
inline std::vector<Camera> make_ring_cameras(int n_views, double radius,
                                             const std::vector<double>& elevations_deg,
                                             double focal, int width, int height) {
  if (n_views < 1) throw ContractError("make_ring_cameras: need at least one view");
  std::vector<Camera> cams;
  for (int i = 0; i < n_views; ++i) {
    double az = 2.0 * kPi * double(i) / double(n_views);
    double el = elevations_deg[size_t(i) % elevations_deg.size()] * kPi / 180.0;
    Vec3 eye{radius * std::cos(el) * std::cos(az), radius * std::cos(el) * std::sin(az),
             radius * std::sin(el)};
    cams.push_back(Camera::look_at(eye, {0, 0, 0}, {0, 0, 1}, focal, width, height));
  }
  return cams;
}

// Camera-frame light set on the hemisphere facing the camera (l.z < 0),
// distributed along a golden-angle spiral with mildly varying intensities so
// normalization paths are exercised.
inline std::vector<DirectionalLight> make_light_spiral(int n_lights, double min_polar_deg = 8,
                                                       double max_polar_deg = 55) {
  if (n_lights < 1) throw ContractError("make_light_spiral: need at least one light");
  std::vector<DirectionalLight> lights;
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  for (int k = 0; k < n_lights; ++k) {
    double f = n_lights == 1 ? 0.0 : double(k) / double(n_lights - 1);
    double polar = (min_polar_deg + (max_polar_deg - min_polar_deg) * f) * kPi / 180.0;
    double az = golden * double(k);
    Vec3 dir{std::sin(polar) * std::cos(az), std::sin(polar) * std::sin(az), -std::cos(polar)};
    lights.push_back({normalized(dir), 1.0 + 0.25 * double(k % 5) / 4.0});
  }
  return lights;
}

}  // namespace mvps::scene
