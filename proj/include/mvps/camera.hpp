#pragma once

#include "mvps/common.hpp"

namespace mvps {

// Pinhole camera. World-to-camera: x_cam = R x_world + t; pixel (u,v) images
// the continuous point (u,v) exactly (no half-pixel offset anywhere).
// Camera frame: x right, y down, z forward; depth is camera-frame z.
struct Camera {
  Mat3 K;
  Mat3 R;
  Vec3 t;
  int width = 0, height = 0;

  void validate() const {
    if (K(1, 0) != 0 || K(2, 0) != 0 || K(2, 1) != 0 || K(0, 0) <= 0 || K(1, 1) <= 0 ||
        K(2, 2) != 1)
      throw StructuralError("Camera: K must be upper triangular with positive focal lengths");
    Mat3 should_be_identity = R * R.transposed();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double want = i == j ? 1.0 : 0.0;
        if (std::fabs(should_be_identity(i, j) - want) > 1e-9)
          throw StructuralError("Camera: R is not orthonormal");
      }
    if (std::fabs(R.det() - 1.0) > 1e-9) throw StructuralError("Camera: det(R) must be +1");
  }

  Vec3 center() const { return R.transposed() * (-t); }

  Vec3 world_to_cam(const Vec3& x) const { return R * x + t; }
  Vec3 cam_to_world(const Vec3& x) const { return R.transposed() * (x - t); }

  // Returns (u, v, depth); depth <= 0 means behind the camera.
  Vec3 project(const Vec3& world) const {
    Vec3 c = world_to_cam(world);
    if (c.z == 0) return {0, 0, 0};
    Vec3 p = K * c;
    return {p.x / p.z, p.y / p.z, c.z};
  }

  // Inverse of project for a valid depth d > 0.
  Vec3 unproject(double u, double v, double d) const {
    Vec3 dir = K.inverse() * Vec3{u, v, 1.0};
    return cam_to_world(dir * d);
  }

  // World-space unit ray through pixel (u, v).
  void pixel_ray(double u, double v, Vec3& origin, Vec3& dir) const {
    origin = center();
    Vec3 dcam = K.inverse() * Vec3{u, v, 1.0};
    dir = normalized(R.transposed() * dcam);
  }

  // z-depth along the ray direction: world point = origin + s*dir has
  // depth s * ray_depth_scale(dir).
  double ray_depth_scale(const Vec3& world_dir) const {
    return R(2, 0) * world_dir.x + R(2, 1) * world_dir.y + R(2, 2) * world_dir.z;
  }

  // Camera looking at `target` from `eye`, with `up` fixing the roll.
  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                        int width, int height) {
    Vec3 fwd = normalized(target - eye);
    Vec3 right = normalized(cross(fwd, up));
    Vec3 down = cross(fwd, right);
    Camera cam;
    cam.R(0, 0) = right.x; cam.R(0, 1) = right.y; cam.R(0, 2) = right.z;
    cam.R(1, 0) = down.x;  cam.R(1, 1) = down.y;  cam.R(1, 2) = down.z;
    cam.R(2, 0) = fwd.x;   cam.R(2, 1) = fwd.y;   cam.R(2, 2) = fwd.z;
    cam.t = cam.R * (-eye);
    cam.K = Mat3::identity();
    cam.K(0, 0) = focal;
    cam.K(1, 1) = focal;
    cam.K(0, 2) = (width - 1) * 0.5;
    cam.K(1, 2) = (height - 1) * 0.5;
    cam.width = width;
    cam.height = height;
    return cam;
  }
};

// Relative motion taking camera-r coordinates to camera-s coordinates.
struct RelativePose {
  Mat3 R;
  Vec3 t;
};

inline RelativePose relative_pose(const Camera& ref, const Camera& src) {
  Mat3 r = src.R * ref.R.transposed();
  return {r, src.t - r * ref.t};
}

struct WarpResult {
  double u = 0, v = 0;
  double depth = 0;      // z in the source camera
  bool in_front = false; // depth > 0
};

// Projects the point at depth d under pixel y=(u,v) of the reference camera
// into the source camera: y_s = K_s (R_rs (d K_r^-1 y) + t_rs), perspective
// divided. in_front is false when the transformed point has z <= 0.
inline WarpResult warp_pixel(double u, double v, double d, const Mat3& k_ref,
                             const Mat3& k_src, const RelativePose& rel) {
  if (d <= 0) throw ContractError("warp_pixel: depth must be positive");
  Vec3 x_ref = k_ref.inverse() * Vec3{u, v, 1.0};
  Vec3 x_src = rel.R * (x_ref * d) + rel.t;
  WarpResult w;
  w.depth = x_src.z;
  w.in_front = x_src.z > 0;
  if (w.in_front) {
    Vec3 p = k_src * x_src;
    w.u = p.x / p.z;
    w.v = p.y / p.z;
  }
  return w;
}

}  // namespace mvps
