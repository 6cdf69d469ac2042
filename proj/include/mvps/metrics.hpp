#pragma once

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "mvps/common.hpp"

namespace mvps::surface {

using PointList = std::vector<Vec3>;

namespace detail {

inline double dist2(const Vec3& a, const Vec3& b) {
  double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace detail

// Exact nearest-neighbor search over a uniform grid. Query expands outward
// cell ring by cell ring and stops only once the scanned box provably
// contains the nearest point, so distances match an O(n) scan bit-exactly
// (per-pair arithmetic is identical to the brute-force path).
class ExactNeighborIndex {
 public:
  explicit ExactNeighborIndex(const PointList& points) : points_(points) {
    if (points.empty()) throw ContractError("ExactNeighborIndex: empty point set");
    lo_ = hi_ = points[0];
    for (const Vec3& p : points) {
      lo_ = min3(lo_, p);
      hi_ = max3(hi_, p);
    }
    double target_cells = std::cbrt(double(points.size()));
    Vec3 span = hi_ - lo_;
    double max_span = std::fmax(span.x, std::fmax(span.y, span.z));
    if (max_span <= 0) max_span = 1.0;
    cell_ = max_span / std::fmax(target_cells, 1.0);
    for (int a = 0; a < 3; ++a)
      res_[a] = std::max(1, int(std::floor(span[a] / cell_)) + 1);
    std::vector<int> counts(size_t(res_[0]) * res_[1] * res_[2] + 1, 0);
    std::vector<int> cells(points.size());
    for (size_t i = 0; i < points.size(); ++i) {
      cells[i] = cell_index(points[i]);
      ++counts[size_t(cells[i]) + 1];
    }
    for (size_t i = 1; i < counts.size(); ++i) counts[i] += counts[i - 1];
    starts_ = counts;
    order_.resize(points.size());
    std::vector<int> cursor(starts_.begin(), starts_.end() - 1);
    for (size_t i = 0; i < points.size(); ++i) order_[size_t(cursor[size_t(cells[i])]++)] = int(i);
  }

  // Euclidean distance from q to its nearest stored point.
  double nearest_distance(const Vec3& q) const {
    int cx = clampi(int(std::floor((q.x - lo_.x) / cell_)), res_[0]);
    int cy = clampi(int(std::floor((q.y - lo_.y) / cell_)), res_[1]);
    int cz = clampi(int(std::floor((q.z - lo_.z) / cell_)), res_[2]);
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0;; ++r) {
      scan_shell(q, cx, cy, cz, r, best);
      // Any point outside the scanned box [c-r, c+r] is at least `guard`
      // away; sides flush with the grid hold no further points.
      double guard = std::numeric_limits<double>::infinity();
      bool open = false;
      const int ctr[3] = {cx, cy, cz};
      const double qrel[3] = {q.x - lo_.x, q.y - lo_.y, q.z - lo_.z};
      for (int a = 0; a < 3; ++a) {
        if (ctr[a] - r > 0) {
          guard = std::fmin(guard, qrel[a] - double(ctr[a] - r) * cell_);
          open = true;
        }
        if (ctr[a] + r + 1 < res_[a]) {
          guard = std::fmin(guard, double(ctr[a] + r + 1) * cell_ - qrel[a]);
          open = true;
        }
      }
      if (!open) break;
      if (best <= guard * guard) break;
    }
    return std::sqrt(best);
  }

 private:
  static int clampi(int v, int res) { return std::min(std::max(v, 0), res - 1); }

  int cell_index(const Vec3& p) const {
    int cx = clampi(int(std::floor((p.x - lo_.x) / cell_)), res_[0]);
    int cy = clampi(int(std::floor((p.y - lo_.y) / cell_)), res_[1]);
    int cz = clampi(int(std::floor((p.z - lo_.z) / cell_)), res_[2]);
    return (cz * res_[1] + cy) * res_[0] + cx;
  }

  // Scans cells at Chebyshev distance exactly r from (cx,cy,cz).
  void scan_shell(const Vec3& q, int cx, int cy, int cz, int r, double& best) const {
    for (int z = std::max(cz - r, 0); z <= std::min(cz + r, res_[2] - 1); ++z)
      for (int y = std::max(cy - r, 0); y <= std::min(cy + r, res_[1] - 1); ++y) {
        bool zy_on_shell = std::abs(z - cz) == r || std::abs(y - cy) == r;
        for (int x = std::max(cx - r, 0); x <= std::min(cx + r, res_[0] - 1); ++x) {
          if (!zy_on_shell && std::abs(x - cx) != r) continue;
          int c = (z * res_[1] + y) * res_[0] + x;
          for (int i = starts_[size_t(c)]; i < starts_[size_t(c) + 1]; ++i)
            best = std::fmin(best, detail::dist2(points_[size_t(order_[size_t(i)])], q));
        }
      }
  }

  const PointList& points_;
  Vec3 lo_, hi_;
  double cell_ = 1;
  int res_[3] = {1, 1, 1};
  std::vector<int> starts_;
  std::vector<int> order_;
};

// O(n*m) reference used by the tests to audit the indexed path.
inline double brute_nearest_distance(const PointList& pts, const Vec3& q) {
  double best = std::numeric_limits<double>::infinity();
  for (const Vec3& p : pts) best = std::fmin(best, detail::dist2(p, q));
  return std::sqrt(best);
}

// Symmetric Chamfer-L1:
//   0.5 * (mean_a nn_dist(a, B) + mean_b nn_dist(b, A))
inline double chamfer_l1(const PointList& a, const PointList& b) {
  if (a.empty() || b.empty()) throw ContractError("chamfer_l1: point sets must be non-empty");
  ExactNeighborIndex ia(a), ib(b);
  double sum_ab = 0;
  for (const Vec3& p : a) sum_ab += ib.nearest_distance(p);
  double sum_ba = 0;
  for (const Vec3& p : b) sum_ba += ia.nearest_distance(p);
  return 0.5 * (sum_ab / double(a.size()) + sum_ba / double(b.size()));
}

struct MetricReport {
  double chamfer_l1 = 0;
  double precision = 0;
  double recall = 0;
  double f_score = 0;
  double tau = 0;  // scene units
  size_t pred_samples = 0;
  size_t gt_samples = 0;
  double runtime_sec = 0;
};

// Precision: fraction of predicted points within tau of ground truth;
// recall the converse; F = 2PR/(P+R) (0 when P+R = 0). "Within" is strict.
inline MetricReport f_score_at_tau(const PointList& pred, const PointList& gt, double tau) {
  if (pred.empty() || gt.empty())
    throw ContractError("f_score_at_tau: point sets must be non-empty");
  if (tau <= 0) throw ContractError("f_score_at_tau: tau must be positive");
  MetricReport r;
  r.tau = tau;
  r.pred_samples = pred.size();
  r.gt_samples = gt.size();
  ExactNeighborIndex ipred(pred), igt(gt);
  size_t ok = 0;
  for (const Vec3& p : pred) ok += igt.nearest_distance(p) < tau ? 1 : 0;
  r.precision = double(ok) / double(pred.size());
  ok = 0;
  for (const Vec3& p : gt) ok += ipred.nearest_distance(p) < tau ? 1 : 0;
  r.recall = double(ok) / double(gt.size());
  r.f_score = (r.precision + r.recall) > 0
                  ? 2 * r.precision * r.recall / (r.precision + r.recall)
                  : 0.0;
  return r;
}

inline void write_metric_csv(const std::string& path, const MetricReport& r,
                             const std::string& label) {
  bool fresh = !std::ifstream(path).good();
  std::ofstream f(path, std::ios::app);
  if (!f) throw IoError("write_metric_csv: cannot open " + path);
  if (fresh)
    f << "label,chamfer_l1,precision,recall,f_score,tau,pred_samples,gt_samples,runtime_sec\n";
  f << label << "," << std::setprecision(17) << r.chamfer_l1 << "," << r.precision << ","
    << r.recall << "," << r.f_score << "," << r.tau << "," << r.pred_samples << ","
    << r.gt_samples << "," << r.runtime_sec << "\n";
}

inline std::string metric_text(const MetricReport& r) {
  std::ostringstream os;
  os << std::setprecision(6) << "chamfer_l1 " << r.chamfer_l1 << " (scene units)\n"
     << "precision  " << r.precision << " @ tau " << r.tau << "\n"
     << "recall     " << r.recall << " @ tau " << r.tau << "\n"
     << "f_score    " << r.f_score << " @ tau " << r.tau << "\n";
  return os.str();
}

}  // namespace mvps::surface
