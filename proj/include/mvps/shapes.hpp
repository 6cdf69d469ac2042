#pragma once

#include <string>
#include <vector>

#include "mvps/common.hpp"

namespace mvps::scene {

// Lambertian lobe plus an optional Blinn-Phong specular lobe.
struct Material {
  double albedo = 0.8;
  double specular_strength = 0.0;
  double specular_exponent = 32.0;
};

// CSG tree over signed-distance primitives with analytic gradients.
// The field is (approximately) 1-Lipschitz inside the declared bounding box,
// which sphere tracing relies on; tests verify this on sampled pairs.
class AnalyticShape {
 public:
  enum class PrimKind { kSphere, kTorus, kBox };
  enum class OpKind { kUnion, kSmoothUnion, kSmoothDifference };

  struct Sample {
    double d = 0;
    Vec3 grad{0, 0, 0};
    int material = 0;
  };

  int add_sphere(const Vec3& center, double radius, const Material& m) {
    prims_.push_back({PrimKind::kSphere, center, {radius, 0, 0}, int(materials_.size())});
    materials_.push_back(m);
    return leaf(int(prims_.size()) - 1);
  }
  // Torus around the z axis through `center`: ring radius rr, tube radius tr.
  int add_torus(const Vec3& center, double ring_radius, double tube_radius, const Material& m) {
    prims_.push_back(
        {PrimKind::kTorus, center, {ring_radius, tube_radius, 0}, int(materials_.size())});
    materials_.push_back(m);
    return leaf(int(prims_.size()) - 1);
  }
  int add_box(const Vec3& center, const Vec3& half_extent, const Material& m) {
    prims_.push_back({PrimKind::kBox, center, half_extent, int(materials_.size())});
    materials_.push_back(m);
    return leaf(int(prims_.size()) - 1);
  }

  int combine(OpKind op, int left, int right, double smoothing = 0.0) {
    nodes_.push_back({op, left, right, -1, smoothing});
    root_ = int(nodes_.size()) - 1;
    return root_;
  }
  void set_root(int node) { root_ = node; }
  void set_bounds(const Vec3& lo, const Vec3& hi) {
    bound_lo_ = lo;
    bound_hi_ = hi;
  }
  Vec3 bound_lo() const { return bound_lo_; }
  Vec3 bound_hi() const { return bound_hi_; }
  double bound_diagonal() const { return norm(bound_hi_ - bound_lo_); }
  const Material& material(int id) const { return materials_[size_t(id)]; }

  double distance(const Vec3& p) const { return sample(root_, p).d; }
  Sample sample(const Vec3& p) const { return sample(root_, p); }

 private:
  struct Prim {
    PrimKind kind;
    Vec3 center;
    Vec3 params;
    int material;
  };
  struct CsgNode {
    OpKind op = OpKind::kUnion;
    int left = -1, right = -1;
    int prim = -1;  // >= 0 marks a leaf
    double k = 0;
  };

  int leaf(int prim) {
    nodes_.push_back({OpKind::kUnion, -1, -1, prim, 0});
    root_ = int(nodes_.size()) - 1;
    return root_;
  }

  Sample sample_prim(const Prim& prim, const Vec3& p) const {
    Sample s;
    s.material = prim.material;
    Vec3 q = p - prim.center;
    switch (prim.kind) {
      case PrimKind::kSphere: {
        double n = norm(q);
        s.d = n - prim.params.x;
        s.grad = n > 1e-12 ? q / n : Vec3{1, 0, 0};
        break;
      }
      case PrimKind::kTorus: {
        double rho = std::sqrt(q.x * q.x + q.y * q.y);
        double a = rho - prim.params.x;
        double m = std::sqrt(a * a + q.z * q.z);
        s.d = m - prim.params.y;
        if (m > 1e-12) {
          double gr = a / m;
          double scale = rho > 1e-12 ? gr / rho : 0.0;
          s.grad = {q.x * scale, q.y * scale, q.z / m};
        } else {
          s.grad = {0, 0, 1};
        }
        break;
      }
      case PrimKind::kBox: {
        Vec3 aq{std::fabs(q.x) - prim.params.x, std::fabs(q.y) - prim.params.y,
                std::fabs(q.z) - prim.params.z};
        Vec3 outside{std::fmax(aq.x, 0.0), std::fmax(aq.y, 0.0), std::fmax(aq.z, 0.0)};
        double out_len = norm(outside);
        double inside = std::fmin(std::fmax(aq.x, std::fmax(aq.y, aq.z)), 0.0);
        s.d = out_len + inside;
        Vec3 sign{q.x >= 0 ? 1.0 : -1.0, q.y >= 0 ? 1.0 : -1.0, q.z >= 0 ? 1.0 : -1.0};
        if (out_len > 1e-12) {
          s.grad = {sign.x * outside.x / out_len, sign.y * outside.y / out_len,
                    sign.z * outside.z / out_len};
        } else {
          // Interior: gradient points along the least-deep axis.
          if (aq.x >= aq.y && aq.x >= aq.z)
            s.grad = {sign.x, 0, 0};
          else if (aq.y >= aq.z)
            s.grad = {0, sign.y, 0};
          else
            s.grad = {0, 0, sign.z};
        }
        break;
      }
    }
    return s;
  }

  // Polynomial smooth minimum: h = clamp(0.5 + 0.5*(b-a)/k, 0, 1),
  // smin = lerp(b, a, h) - k*h*(1-h). Gradient by the chain rule.
  static Sample smooth_min(const Sample& a, const Sample& b, double k) {
    if (k <= 0) return a.d <= b.d ? a : b;
    double h = 0.5 + 0.5 * (b.d - a.d) / k;
    h = std::min(std::max(h, 0.0), 1.0);
    Sample s;
    s.d = b.d * (1 - h) + a.d * h - k * h * (1 - h);
    bool interior = h > 0.0 && h < 1.0;
    // d(smin)/da and /db; dh/da = -0.5/k, dh/db = +0.5/k inside the clamp.
    double dd_dh = a.d - b.d - k * (1 - 2 * h);
    double da = h + (interior ? dd_dh * (-0.5 / k) : 0.0);
    double db = (1 - h) + (interior ? dd_dh * (0.5 / k) : 0.0);
    s.grad = a.grad * da + b.grad * db;
    s.material = h >= 0.5 ? a.material : b.material;
    return s;
  }

  static Sample negate(Sample s) {
    s.d = -s.d;
    s.grad = -s.grad;
    return s;
  }

  Sample sample(int node, const Vec3& p) const {
    const CsgNode& n = nodes_[size_t(node)];
    if (n.prim >= 0) return sample_prim(prims_[size_t(n.prim)], p);
    Sample a = sample(n.left, p);
    Sample b = sample(n.right, p);
    switch (n.op) {
      case OpKind::kUnion:
        return a.d <= b.d ? a : b;
      case OpKind::kSmoothUnion:
        return smooth_min(a, b, n.k);
      case OpKind::kSmoothDifference: {
        // a minus b: smax(a, -b) = -smin(-a, b)
        Sample s = negate(smooth_min(negate(a), b, n.k));
        s.material = a.material;
        return s;
      }
    }
    return a;
  }

  std::vector<Prim> prims_;
  std::vector<CsgNode> nodes_;
  std::vector<Material> materials_;
  int root_ = -1;
  Vec3 bound_lo_{-1, -1, -1}, bound_hi_{1, 1, 1};
};

// ---------------------------------------------------------------------------
// Bundled synthetic scenes.
// ---------------------------------------------------------------------------

inline AnalyticShape make_sphere_scene(double radius = 0.5, Material m = {0.9, 0.0, 32.0}) {
  AnalyticShape s;
  s.add_sphere({0, 0, 0}, radius, m);
  s.set_bounds({-radius * 1.3, -radius * 1.3, -radius * 1.3},
               {radius * 1.3, radius * 1.3, radius * 1.3});
  return s;
}

// Torus with three dents pressed into the tube and a bump welded on: enough
// concavity and geometric texture to exercise multi-view matching.
inline AnalyticShape make_torus_dents_scene() {
  AnalyticShape s;
  Material body{0.85, 0.15, 48.0};
  Material bump{0.6, 0.05, 16.0};
  int torus = s.add_torus({0, 0, 0}, 0.35, 0.16, body);
  int acc = torus;
  const Vec3 dents[3] = {{0.35, 0, 0.13}, {-0.21, 0.30, -0.12}, {-0.10, -0.34, 0.14}};
  for (const Vec3& c : dents) {
    int d = s.add_sphere(c, 0.09, body);
    acc = s.combine(AnalyticShape::OpKind::kSmoothDifference, acc, d, 0.03);
  }
  int b = s.add_sphere({0.02, 0.51, 0.0}, 0.10, bump);
  acc = s.combine(AnalyticShape::OpKind::kSmoothUnion, acc, b, 0.04);
  s.set_root(acc);
  s.set_bounds({-0.65, -0.65, -0.30}, {0.65, 0.65, 0.30});
  return s;
}

inline AnalyticShape make_scene_by_name(const std::string& name) {
  if (name == "sphere") return make_sphere_scene();
  if (name == "torus_dents") return make_torus_dents_scene();
  throw ContractError("unknown synthetic scene '" + name + "' (want sphere|torus_dents)");
}

}  // namespace mvps::scene
