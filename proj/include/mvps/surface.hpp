#pragma once

#include <array>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <unordered_map>

#include "mvps/metrics.hpp"

namespace mvps::surface {

// Scalar field sampled at the vertices of a res^3 cell grid ((res+1)^3
// values, x fastest).
struct ScalarGrid {
  int res = 0;
  Vec3 lo, hi;
  std::vector<double> values;

  int verts_per_axis() const { return res + 1; }
  size_t vertex_index(int i, int j, int k) const {
    int n = verts_per_axis();
    return (size_t(k) * n + size_t(j)) * n + size_t(i);
  }
  double value(int i, int j, int k) const { return values[vertex_index(i, j, k)]; }
  Vec3 vertex_pos(int i, int j, int k) const {
    Vec3 cell = (hi - lo) / double(res);
    return {lo.x + cell.x * i, lo.y + cell.y * j, lo.z + cell.z * k};
  }
  double cell_diagonal() const { return norm((hi - lo) / double(res)); }

  bool has_crossing() const {
    bool any_neg = false, any_pos = false;
    for (double v : values) (v < 0 ? any_neg : any_pos) = true;
    return any_neg && any_pos;
  }
};

// Evaluates f over all grid vertices. The evaluator receives a batch of
// points and fills one value per point (batching keeps MLP fields cheap).
// Exact zeros are nudged by +1e-10 to keep every cell configuration
// unambiguous in sign.
using BatchField = std::function<void(const std::vector<Vec3>&, std::vector<double>&)>;

inline ScalarGrid sample_sdf_grid(const BatchField& field, int res, const Vec3& lo,
                                  const Vec3& hi, size_t batch = 1 << 15) {
  if (res < 8) throw ContractError("sample_sdf_grid: resolution must be at least 8");
  ScalarGrid grid;
  grid.res = res;
  grid.lo = lo;
  grid.hi = hi;
  int n = grid.verts_per_axis();
  grid.values.resize(size_t(n) * n * n);
  std::vector<Vec3> pts;
  std::vector<double> vals;
  size_t cursor = 0;
  auto flush = [&]() {
    if (pts.empty()) return;
    vals.assign(pts.size(), 0.0);
    field(pts, vals);
    for (size_t i = 0; i < vals.size(); ++i) {
      double v = vals[i];
      if (!std::isfinite(v))
        throw NumericError("sample_sdf_grid: non-finite field value at vertex " +
                           std::to_string(cursor + i));
      grid.values[cursor + i] = v == 0.0 ? 1e-10 : v;
    }
    cursor += pts.size();
    pts.clear();
  };
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        pts.push_back(grid.vertex_pos(i, j, k));
        if (pts.size() == batch) flush();
      }
  flush();
  return grid;
}

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;

  bool empty() const { return triangles.empty(); }

  // Edges referenced by exactly one triangle; zero for a watertight mesh.
  size_t boundary_edge_count() const {
    std::map<std::pair<int, int>, int> uses;
    for (const auto& t : triangles)
      for (int e = 0; e < 3; ++e) {
        int a = t[size_t(e)], b = t[size_t((e + 1) % 3)];
        ++uses[{std::min(a, b), std::max(a, b)}];
      }
    size_t n = 0;
    for (const auto& [k, v] : uses)
      if (v == 1) ++n;
    return n;
  }

  double area() const {
    double a = 0;
    for (const auto& t : triangles)
      a += 0.5 * norm(cross(vertices[size_t(t[1])] - vertices[size_t(t[0])],
                            vertices[size_t(t[2])] - vertices[size_t(t[0])]));
    return a;
  }
};

// ---------------------------------------------------------------------------
// Marching cubes. Cells are polygonized by tracing the oriented isocontour
// across the cell's faces: each face contributes segments from its
// marching-squares case, the ambiguous (alternating-sign) case is resolved
// with the bilinear asymptotic decider, and segments chain into closed
// polygons. Both cells adjacent to a face see the same 4 values and apply
// the same rule, so the surface is consistent across cells and watertight
// whenever it stays inside the grid. Triangles wind with outward normals
// (toward positive field).
// ---------------------------------------------------------------------------

namespace mc_detail {

// Corner i sits at offset (i&1, (i>>1)&1, (i>>2)&1).
// Edges indexed 0..11; each row is the corner pair it connects.
inline constexpr int kEdgeCorners[12][2] = {
    {0, 1}, {2, 3}, {4, 5}, {6, 7},   // x-aligned
    {0, 2}, {1, 3}, {4, 6}, {5, 7},   // y-aligned
    {0, 4}, {1, 5}, {2, 6}, {3, 7},   // z-aligned
};

// Faces as corner cycles, counter-clockwise when seen from outside the cell.
inline constexpr int kFaceCycles[6][4] = {
    {0, 4, 6, 2},  // x-
    {1, 3, 7, 5},  // x+
    {0, 1, 5, 4},  // y-
    {2, 6, 7, 3},  // y+
    {0, 2, 3, 1},  // z-
    {4, 5, 7, 6},  // z+
};

inline int edge_between(int a, int b) {
  for (int e = 0; e < 12; ++e) {
    const int* c = kEdgeCorners[e];
    if ((c[0] == a && c[1] == b) || (c[0] == b && c[1] == a)) return e;
  }
  return -1;
}

struct EdgeKey {
  int x, y, z, axis;
  bool operator==(const EdgeKey& o) const {
    return x == o.x && y == o.y && z == o.z && axis == o.axis;
  }
};
struct EdgeKeyHash {
  size_t operator()(const EdgeKey& k) const {
    uint64_t h = 1469598103934665603ULL;
    for (int v : {k.x, k.y, k.z, k.axis}) {
      h ^= uint64_t(uint32_t(v));
      h *= 1099511628211ULL;
    }
    return size_t(h);
  }
};

}  // namespace mc_detail

inline TriangleMesh marching_cubes(const ScalarGrid& grid) {
  using namespace mc_detail;
  TriangleMesh mesh;
  if (!grid.has_crossing()) return mesh;

  std::unordered_map<EdgeKey, int, EdgeKeyHash> edge_vertices;

  auto edge_vertex = [&](int ci, int cj, int ck, int edge) -> int {
    const int* corners = kEdgeCorners[edge];
    int a = corners[0], b = corners[1];
    int ai = ci + (a & 1), aj = cj + ((a >> 1) & 1), ak = ck + ((a >> 2) & 1);
    int bi = ci + (b & 1), bj = cj + ((b >> 1) & 1), bk = ck + ((b >> 2) & 1);
    int axis = edge < 4 ? 0 : (edge < 8 ? 1 : 2);
    EdgeKey key{ai, aj, ak, axis};
    auto it = edge_vertices.find(key);
    if (it != edge_vertices.end()) return it->second;
    double fa = grid.value(ai, aj, ak), fb = grid.value(bi, bj, bk);
    double t = fa / (fa - fb);
    Vec3 pa = grid.vertex_pos(ai, aj, ak), pb = grid.vertex_pos(bi, bj, bk);
    mesh.vertices.push_back(pa + (pb - pa) * t);
    int id = int(mesh.vertices.size()) - 1;
    edge_vertices.emplace(key, id);
    return id;
  };

  double corner_vals[8];
  for (int ck = 0; ck < grid.res; ++ck)
    for (int cj = 0; cj < grid.res; ++cj)
      for (int ci = 0; ci < grid.res; ++ci) {
        int sign_mask = 0;
        for (int c = 0; c < 8; ++c) {
          corner_vals[c] = grid.value(ci + (c & 1), cj + ((c >> 1) & 1), ck + ((c >> 2) & 1));
          if (corner_vals[c] < 0) sign_mask |= 1 << c;
        }
        if (sign_mask == 0 || sign_mask == 0xff) continue;

        // Directed segments across faces: seg_next[e] is the edge the
        // contour continues to after crossing edge e.
        int seg_next[12];
        for (int& s : seg_next) s = -1;
        for (int f = 0; f < 6; ++f) {
          const int* cyc = kFaceCycles[f];
          // Boundary transitions in cycle order.
          int starts[2], ends[2];
          int ns = 0, ne = 0;
          for (int s = 0; s < 4; ++s) {
            int a = cyc[s], b = cyc[(s + 1) % 4];
            bool na = corner_vals[a] < 0, nb = corner_vals[b] < 0;
            if (na && !nb) starts[ns++] = s;
            if (!na && nb) ends[ne++] = s;
          }
          if (ns == 0) continue;
          auto fe = [&](int s) { return edge_between(cyc[s], cyc[(s + 1) % 4]); };
          if (ns == 1) {
            seg_next[fe(starts[0])] = fe(ends[0]);
          } else {
            // Alternating signs: connect through the side the bilinear
            // saddle assigns. Negative saddle joins the negative corners,
            // so each contour arc hugs a positive corner (nearest end);
            // positive saddle swaps the pairing.
            double f00 = corner_vals[cyc[0]], f10 = corner_vals[cyc[1]];
            double f11 = corner_vals[cyc[2]], f01 = corner_vals[cyc[3]];
            double denom = f00 + f11 - f10 - f01;
            double saddle = denom != 0 ? (f00 * f11 - f10 * f01) / denom : 1.0;
            for (int s = 0; s < 2; ++s) {
              int pick = -1;
              int bestd = saddle < 0 ? 5 : -1;
              for (int e = 0; e < 2; ++e) {
                int d = (ends[e] - starts[s] + 4) % 4;
                bool better = saddle < 0 ? d < bestd : d > bestd;
                if (better) {
                  bestd = d;
                  pick = ends[e];
                }
              }
              seg_next[fe(starts[s])] = fe(pick);
            }
          }
        }

        // Chain segments into loops, emit a fan per loop. Loops are traced
        // with the inside on the left seen from outside the cell; reversing
        // them makes triangle normals point toward positive field.
        bool used[12] = {};
        for (int e0 = 0; e0 < 12; ++e0) {
          if (seg_next[e0] < 0 || used[e0]) continue;
          int loop[12];
          int len = 0;
          int e = e0;
          do {
            loop[len++] = e;
            used[e] = true;
            e = seg_next[e];
          } while (e != e0 && len < 12);
          if (len < 3) continue;
          std::reverse(loop, loop + len);
          int base = edge_vertex(ci, cj, ck, loop[0]);
          for (int i = 1; i + 1 < len; ++i) {
            int va = edge_vertex(ci, cj, ck, loop[i]);
            int vb = edge_vertex(ci, cj, ck, loop[i + 1]);
            if (base != va && va != vb && vb != base)
              mesh.triangles.push_back({base, va, vb});
          }
        }
      }
  return mesh;
}

// ---------------------------------------------------------------------------
// Surface sampling and mesh I/O.
// ---------------------------------------------------------------------------

// Area-weighted uniform samples over the mesh surface.
inline PointList sample_mesh_surface(const TriangleMesh& mesh, size_t n, uint64_t seed) {
  if (mesh.empty() || n < 1) throw ContractError("sample_mesh_surface: empty mesh or n < 1");
  std::vector<double> cumulative(mesh.triangles.size());
  double total = 0;
  for (size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto& t = mesh.triangles[i];
    total += 0.5 * norm(cross(mesh.vertices[size_t(t[1])] - mesh.vertices[size_t(t[0])],
                              mesh.vertices[size_t(t[2])] - mesh.vertices[size_t(t[0])]));
    cumulative[i] = total;
  }
  if (total <= 0) throw ContractError("sample_mesh_surface: degenerate surface area");
  Rng rng(seed);
  PointList out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    double u = rng.uniform() * total;
    size_t tri = size_t(std::lower_bound(cumulative.begin(), cumulative.end(), u) -
                        cumulative.begin());
    if (tri >= mesh.triangles.size()) tri = mesh.triangles.size() - 1;
    const auto& t = mesh.triangles[tri];
    double a = rng.uniform(), b = rng.uniform();
    if (a + b > 1) {
      a = 1 - a;
      b = 1 - b;
    }
    const Vec3& p0 = mesh.vertices[size_t(t[0])];
    const Vec3& p1 = mesh.vertices[size_t(t[1])];
    const Vec3& p2 = mesh.vertices[size_t(t[2])];
    out.push_back(p0 + (p1 - p0) * a + (p2 - p0) * b);
  }
  return out;
}

// PLY, ascii or binary little-endian. Coordinates are written as float64 so
// meshes survive the round trip exactly.
inline void write_ply(const std::string& path, const TriangleMesh& mesh, bool binary) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_ply: cannot open " + path);
  f << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
    << "element vertex " << mesh.vertices.size() << "\n"
    << "property double x\nproperty double y\nproperty double z\n"
    << "element face " << mesh.triangles.size() << "\n"
    << "property list uchar int vertex_indices\nend_header\n";
  if (binary) {
    for (const Vec3& v : mesh.vertices) {
      double xyz[3] = {v.x, v.y, v.z};
      f.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
    }
    for (const auto& t : mesh.triangles) {
      unsigned char c = 3;
      int idx[3] = {t[0], t[1], t[2]};
      f.write(reinterpret_cast<const char*>(&c), 1);
      f.write(reinterpret_cast<const char*>(idx), sizeof(idx));
    }
  } else {
    f << std::setprecision(17);
    for (const Vec3& v : mesh.vertices) f << v.x << " " << v.y << " " << v.z << "\n";
    for (const auto& t : mesh.triangles) f << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
  }
  if (!f) throw IoError("write_ply: short write to " + path);
}

inline TriangleMesh read_ply(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_ply: cannot open " + path);
  std::string line, format;
  size_t n_vert = 0, n_face = 0;
  std::vector<std::pair<std::string, std::string>> vert_props;  // (type, name)
  bool in_vertex_element = false;
  if (!std::getline(f, line) || line.substr(0, 3) != "ply")
    throw IoError("read_ply: not a PLY file: " + path);
  while (std::getline(f, line)) {
    std::istringstream is(line);
    std::string tok;
    is >> tok;
    if (tok == "format") {
      is >> format;
    } else if (tok == "element") {
      std::string what;
      size_t count;
      is >> what >> count;
      in_vertex_element = what == "vertex";
      if (what == "vertex") n_vert = count;
      if (what == "face") n_face = count;
    } else if (tok == "property" && in_vertex_element) {
      std::string type, name;
      is >> type >> name;
      vert_props.emplace_back(type, name);
    } else if (tok == "end_header") {
      break;
    }
  }
  if (format != "ascii" && format != "binary_little_endian")
    throw IoError("read_ply: unsupported format '" + format + "' in " + path);

  TriangleMesh mesh;
  mesh.vertices.resize(n_vert);
  auto prop_size = [](const std::string& t) -> size_t {
    if (t == "double" || t == "float64") return 8;
    if (t == "float" || t == "float32") return 4;
    if (t == "uchar" || t == "uint8" || t == "char" || t == "int8") return 1;
    if (t == "int" || t == "uint" || t == "int32" || t == "uint32") return 4;
    if (t == "short" || t == "ushort") return 2;
    throw IoError("read_ply: unsupported property type " + t);
  };
  if (format == "ascii") {
    for (size_t i = 0; i < n_vert; ++i) {
      std::getline(f, line);
      std::istringstream is(line);
      std::vector<double> vals;
      double v;
      while (is >> v) vals.push_back(v);
      for (size_t p = 0; p < vert_props.size() && p < vals.size(); ++p) {
        const std::string& name = vert_props[p].second;
        if (name == "x") mesh.vertices[i].x = vals[p];
        if (name == "y") mesh.vertices[i].y = vals[p];
        if (name == "z") mesh.vertices[i].z = vals[p];
      }
    }
    for (size_t i = 0; i < n_face; ++i) {
      std::getline(f, line);
      std::istringstream is(line);
      int cnt;
      is >> cnt;
      std::vector<int> idx(static_cast<size_t>(cnt));
      for (int& v : idx) is >> v;
      for (int k = 1; k + 1 < cnt; ++k)
        mesh.triangles.push_back({idx[0], idx[size_t(k)], idx[size_t(k) + 1]});
    }
  } else {
    for (size_t i = 0; i < n_vert; ++i) {
      for (const auto& [type, name] : vert_props) {
        size_t sz = prop_size(type);
        char buf[8];
        f.read(buf, std::streamsize(sz));
        double val = 0;
        if (sz == 8) {
          double d;
          std::memcpy(&d, buf, 8);
          val = d;
        } else if (sz == 4 && (type == "float" || type == "float32")) {
          float fv;
          std::memcpy(&fv, buf, 4);
          val = fv;
        }
        if (name == "x") mesh.vertices[i].x = val;
        if (name == "y") mesh.vertices[i].y = val;
        if (name == "z") mesh.vertices[i].z = val;
      }
    }
    for (size_t i = 0; i < n_face; ++i) {
      unsigned char cnt;
      f.read(reinterpret_cast<char*>(&cnt), 1);
      std::vector<int> idx(cnt);
      f.read(reinterpret_cast<char*>(idx.data()), std::streamsize(size_t(cnt) * 4));
      for (int k = 1; k + 1 < cnt; ++k)
        mesh.triangles.push_back({idx[0], idx[size_t(k)], idx[size_t(k) + 1]});
    }
  }
  if (!f) throw IoError("read_ply: truncated data in " + path);
  for (const auto& t : mesh.triangles)
    for (int v : t)
      if (v < 0 || size_t(v) >= mesh.vertices.size())
        throw StructuralError("read_ply: face index out of range in " + path);
  return mesh;
}

}  // namespace mvps::surface
