#pragma once

#include <functional>

#include "mvps/model_io.hpp"
#include "mvps/render.hpp"

namespace mvps::ps {

using scene::DirectionalLight;

// Per-pixel grid of normalized grayscale observations indexed by projected
// light direction. Values live in [0,1]; the brightest filled cell is
// exactly 1 whenever any measurement is positive.
struct ObservationMap {
  int omega = 0;
  std::vector<double> values;  // row-major [y][x]
  std::vector<uint8_t> filled;
  double eta = 0;     // max_k I_k / e_k
  bool valid = false; // false when every measurement is zero

  double at(int x, int y) const { return values[size_t(y) * omega + x]; }
};

// zeta: [-1,1]-scaled projected coordinate to a grid index, clamped into
// range at both ends.
inline int obs_cell(double coord_pm1, int omega) {
  int c = int(std::floor(double(omega) * (coord_pm1 + 1.0) / 2.0));
  return std::min(std::max(c, 0), omega - 1);
}

inline ObservationMap build_observation_map(const std::vector<double>& measurements,
                                            const std::vector<DirectionalLight>& lights,
                                            int omega) {
  if (measurements.size() != lights.size())
    throw StructuralError("build_observation_map: " + std::to_string(measurements.size()) +
                          " measurements for " + std::to_string(lights.size()) + " lights");
  if (omega < 2) throw ContractError("build_observation_map: omega must be at least 2");
  ObservationMap map;
  map.omega = omega;
  map.values.assign(size_t(omega) * omega, 0.0);
  map.filled.assign(size_t(omega) * omega, 0);
  for (const DirectionalLight& l : lights)
    if (l.intensity <= 0)
      throw ContractError("build_observation_map: light intensity must be positive");
  for (size_t k = 0; k < lights.size(); ++k)
    map.eta = std::fmax(map.eta, measurements[k] / lights[k].intensity);
  if (map.eta <= 0) return map;  // all-zero pixel: invalid map
  map.valid = true;
  for (size_t k = 0; k < lights.size(); ++k) {
    int cx = obs_cell(lights[k].dir.x, omega);
    int cy = obs_cell(lights[k].dir.y, omega);
    size_t idx = size_t(cy) * omega + cx;
    double v = measurements[k] / (map.eta * lights[k].intensity);
    // Colliding lights keep the brighter normalized value.
    if (!map.filled[idx] || v > map.values[idx]) map.values[idx] = v;
    map.filled[idx] = 1;
  }
  return map;
}

// ---------------------------------------------------------------------------
// Dropout regressor from flattened observation maps to view-frame normals.
// ---------------------------------------------------------------------------

inline ad::MlpSpec default_regressor_spec(int omega = 32, double dropout_q = 0.2) {
  ad::MlpSpec spec;
  spec.in_dim = omega * omega;
  spec.hidden = {256, 256};
  spec.out_dim = 3;
  spec.activation = ad::Activation::kTanh;
  spec.skip_at = -1;
  spec.dropout_q = dropout_q;
  spec.prefix = "ps.";
  return spec;
}

struct PsTrainingSample {
  ObservationMap map;
  Vec3 normal;  // unit, view frame (z toward the scene, so n.z < 0)
};

// Synthesizes labeled observation maps from the calibrated light set:
// random hemisphere normals shaded under random Lambertian + specular
// materials via the image-formation model of the renderer. Each sample uses
// a random subset of the lights (down to light_fraction_min) so sparsely
// observed pixels are represented and carry usable uncertainty.
inline std::vector<PsTrainingSample> make_ps_training_set(
    const std::vector<DirectionalLight>& lights, int count, int omega, double noise_sigma,
    uint64_t seed, double light_fraction_min = 0.3) {
  std::vector<PsTrainingSample> out;
  out.reserve(size_t(count));
  Vec3 view_dir{0, 0, -1};
  std::vector<size_t> order(lights.size());
  for (int i = 0; i < count; ++i) {
    Rng rng = Rng::derive(seed, uint64_t(i));
    Vec3 n = normalized({rng.gaussian(), rng.gaussian(), rng.gaussian()});
    n.z = -std::fabs(n.z);
    if (norm(n) == 0) n = {0, 0, -1};
    scene::Material mat;
    mat.albedo = rng.uniform(0.15, 1.0);
    if (rng.bernoulli(0.5)) {
      mat.specular_strength = rng.uniform(0.05, 0.5);
      mat.specular_exponent = std::pow(10.0, rng.uniform(0.8, 2.2));
    }
    for (size_t k = 0; k < order.size(); ++k) order[k] = k;
    for (size_t k = order.size(); k > 1; --k)
      std::swap(order[k - 1], order[rng.uniform_index(k)]);
    size_t m = size_t(std::ceil(rng.uniform(light_fraction_min, 1.0) * double(lights.size())));
    m = std::min(std::max<size_t>(m, 1), lights.size());
    std::vector<DirectionalLight> sub(m);
    std::vector<double> meas(m);
    for (size_t k = 0; k < m; ++k) {
      sub[k] = lights[order[k]];
      meas[k] = scene::shade_pixel(n, sub[k], mat, view_dir, noise_sigma, rng);
    }
    out.push_back({build_observation_map(meas, sub, omega), n});
  }
  return out;
}

inline ad::Tensor flatten_maps(const std::vector<const ObservationMap*>& maps) {
  if (maps.empty()) throw ContractError("flatten_maps: empty batch");
  int64_t dim = int64_t(maps[0]->values.size());
  ad::Tensor t({int64_t(maps.size()), dim});
  for (size_t i = 0; i < maps.size(); ++i)
    std::copy(maps[i]->values.begin(), maps[i]->values.end(), t.data.begin() + int64_t(i) * dim);
  return t;
}

struct PsTrainConfig {
  int n_mc = 10;          // stochastic forward passes per step
  double lambda_w = 1e-4; // weight decay on the weight matrices
  int epochs = 10;
  double lr = 1e-3;
  int batch = 128;
  uint64_t seed = 1;
};

struct PsTrainResult {
  ad::ParamVector params;
  std::vector<double> loss_curve;  // one entry per optimizer step
};

// Minimizes (1/N_mc) sum_j ||n_j - n_gt||^2 + lambda_w sum ||W||^2 with a
// fresh dropout mask per Monte Carlo replica. Deterministic for a fixed
// seed. Raw (unnormalized) outputs regress toward the unit target so the
// output scale stays commensurate with a unit normal.
inline PsTrainResult train_ps_regressor(const ad::MlpSpec& spec,
                                        const std::vector<PsTrainingSample>& train,
                                        const PsTrainConfig& cfg) {
  using namespace ad;
  if (train.empty()) throw ContractError("train_ps_regressor: empty training set");
  if (cfg.n_mc < 1) throw ContractError("train_ps_regressor: n_mc must be >= 1");
  int64_t b = std::min<int64_t>(cfg.batch, int64_t(train.size()));

  Graph g;
  std::vector<int> params = mlp_param_nodes(g, spec);
  int x = g.input(spec.prefix + "x", {b, spec.in_dim});
  int gt = g.input(spec.prefix + "gt", {b, 3});
  int data_term = -1;
  for (int j = 0; j < cfg.n_mc; ++j) {
    MlpGraph replica = mlp_forward(g, spec, x, params, true, std::to_string(j));
    int sq = g.sum_all(g.square(g.sub(replica.out, gt)));
    data_term = data_term < 0 ? sq : g.add(data_term, sq);
  }
  int loss = g.affine(data_term, 1.0 / (double(cfg.n_mc) * double(b)), 0.0);
  if (cfg.lambda_w > 0) {
    int reg = -1;
    for (int i = 0; i < spec.num_layers(); ++i) {
      int w = params[size_t(2 * i)];
      int sq = g.sum_all(g.square(w));
      reg = reg < 0 ? sq : g.add(reg, sq);
    }
    loss = g.add(loss, g.affine(reg, cfg.lambda_w, 0.0));
  }
  std::vector<int> grad_ids = grad_params(g, loss, params);
  std::vector<int> targets = grad_ids;
  targets.push_back(loss);

  PsTrainResult result;
  result.params = init_mlp_params(spec, cfg.seed);
  Adam opt(cfg.lr);
  Rng order_rng(cfg.seed ^ 0x5eedULL);
  Rng mask_rng(cfg.seed ^ 0xd06fULL);
  std::vector<size_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<int> hidden = spec.layer_out_dims();

  int64_t steps_per_epoch = int64_t(train.size()) / b;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[order_rng.uniform_index(i)]);
    for (int64_t s = 0; s < steps_per_epoch; ++s) {
      NamedTensors feeds;
      std::vector<const ObservationMap*> maps(static_cast<size_t>(b));
      Tensor gt_t({b, 3});
      for (int64_t r = 0; r < b; ++r) {
        const PsTrainingSample& sample = train[order[size_t(s * b + r)]];
        maps[size_t(r)] = &sample.map;
        gt_t.data[size_t(3 * r)] = sample.normal.x;
        gt_t.data[size_t(3 * r) + 1] = sample.normal.y;
        gt_t.data[size_t(3 * r) + 2] = sample.normal.z;
      }
      feeds[spec.prefix + "x"] = flatten_maps(maps);
      feeds[spec.prefix + "gt"] = std::move(gt_t);
      if (spec.dropout_q > 0)
        for (int j = 0; j < cfg.n_mc; ++j)
          for (size_t l = 0; l + 1 < size_t(spec.num_layers()); ++l)
            feeds[spec.mask_name(int(l), std::to_string(j))] =
                dropout_mask(b, hidden[l], spec.dropout_q, mask_rng);
      std::vector<Tensor> vals;
      try {
        vals = eval_graph(g, result.params, feeds, targets);
      } catch (const NumericError& e) {
        throw NumericError("train_ps_regressor: aborted at epoch " + std::to_string(epoch) +
                           " step " + std::to_string(s) + ": " + e.what());
      }
      result.loss_curve.push_back(vals.back().scalar_value());
      ParamVector grads;
      for (size_t p = 0; p < params.size(); ++p)
        grads.add(g.node(params[p]).name, std::move(vals[p]));
      opt.step(result.params, grads);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Monte Carlo inference and gating.
// ---------------------------------------------------------------------------

struct McPrediction {
  Vec3 mean_normal;  // renormalized mean of the raw outputs
  Vec3 variance;     // unbiased per-component variance of the raw outputs
  bool valid = false;
};

// Stochastic forward passes with dropout active. Pixel p derives its own
// mask stream from (seed, stream_base + p), so results are independent of
// batching. T = 1 defines zero variance.
inline std::vector<McPrediction> predict_normal_mc(const ad::MlpSpec& spec,
                                                   const ad::ParamVector& params,
                                                   const std::vector<ObservationMap>& maps,
                                                   int t_passes, uint64_t seed,
                                                   uint64_t stream_base = 0) {
  using namespace ad;
  if (t_passes < 1) throw ContractError("predict_normal_mc: T must be >= 1");
  std::vector<McPrediction> out(maps.size());
  std::vector<size_t> live;
  for (size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].omega * maps[i].omega != spec.in_dim)
      throw StructuralError("predict_normal_mc: map resolution disagrees with the model");
    if (maps[i].valid) live.push_back(i);
  }
  if (live.empty()) return out;

  const int64_t chunk = 512;
  Graph g;
  std::vector<int> param_nodes = mlp_param_nodes(g, spec);
  int x = g.input(spec.prefix + "x", {chunk, spec.in_dim});
  MlpGraph mg = mlp_forward(g, spec, x, param_nodes, true);
  std::vector<int> hidden = spec.layer_out_dims();

  std::vector<double> sum(live.size() * 3, 0.0), sumsq(live.size() * 3, 0.0);
  for (size_t c0 = 0; c0 < live.size(); c0 += size_t(chunk)) {
    size_t n = std::min(size_t(chunk), live.size() - c0);
    Tensor xin({chunk, spec.in_dim});
    for (size_t r = 0; r < n; ++r) {
      const ObservationMap& m = maps[live[c0 + r]];
      std::copy(m.values.begin(), m.values.end(),
                xin.data.begin() + int64_t(r) * spec.in_dim);
    }
    std::vector<Rng> pixel_rng;
    pixel_rng.reserve(n);
    for (size_t r = 0; r < n; ++r)
      pixel_rng.push_back(Rng::derive(seed, stream_base + live[c0 + r]));
    for (int t = 0; t < t_passes; ++t) {
      NamedTensors feeds;
      feeds[spec.prefix + "x"] = xin;
      for (size_t l = 0; l + 1 < size_t(spec.num_layers()); ++l) {
        Tensor mask({chunk, hidden[l]});
        double keep_scale = spec.dropout_q > 0 ? 1.0 / (1.0 - spec.dropout_q) : 1.0;
        for (size_t r = 0; r < size_t(chunk); ++r)
          for (int64_t cidx = 0; cidx < hidden[l]; ++cidx)
            mask.data[r * size_t(hidden[l]) + size_t(cidx)] =
                (r < n && spec.dropout_q > 0)
                    ? (pixel_rng[r].uniform() < spec.dropout_q ? 0.0 : keep_scale)
                    : 1.0;
        feeds[spec.mask_name(int(l))] = std::move(mask);
      }
      Tensor y = eval_graph(g, params, feeds, {mg.out})[0];
      for (size_t r = 0; r < n; ++r)
        for (int cmp = 0; cmp < 3; ++cmp) {
          double v = y.data[r * 3 + size_t(cmp)];
          sum[(c0 + r) * 3 + size_t(cmp)] += v;
          sumsq[(c0 + r) * 3 + size_t(cmp)] += v * v;
        }
    }
  }
  for (size_t i = 0; i < live.size(); ++i) {
    McPrediction& p = out[live[i]];
    p.valid = true;
    Vec3 mean{sum[i * 3] / t_passes, sum[i * 3 + 1] / t_passes, sum[i * 3 + 2] / t_passes};
    for (int cmp = 0; cmp < 3; ++cmp) {
      double var = 0;
      if (t_passes > 1) {
        var = (sumsq[i * 3 + size_t(cmp)] - double(t_passes) * mean[cmp] * mean[cmp]) /
              double(t_passes - 1);
        var = std::fmax(var, 0.0);
      }
      p.variance[cmp] = var;
    }
    p.mean_normal = normalized(mean);
  }
  return out;
}

// c = 1 iff |sigma^2|_1 < tau (strict).
inline bool gate_normal(const Vec3& variance, double tau_ps) {
  if (tau_ps <= 0) throw ContractError("gate_normal: tau_ps must be positive");
  double l1 = std::fabs(variance.x) + std::fabs(variance.y) + std::fabs(variance.z);
  return l1 < tau_ps;
}

// Per-view gated product of the regressor: view-frame normals, raw-output
// variances, the binary gate, and the valid-pixel mask.
struct GatedNormalMap {
  Image normal;    // 3 channels, view (camera) frame
  Image variance;  // 3 channels
  Image c_ps;      // 1 channel, 0/1
  Image valid;     // 1 channel, 0/1
};

inline GatedNormalMap gate_normal_map(const Image& normal, const Image& variance,
                                      const Image& valid, double tau_ps) {
  GatedNormalMap g;
  g.normal = normal;
  g.variance = variance;
  g.valid = valid;
  g.c_ps = Image(normal.width, normal.height, 1);
  for (int y = 0; y < normal.height; ++y)
    for (int x = 0; x < normal.width; ++x)
      if (valid.at(x, y) > 0.5) {
        Vec3 v{variance.at(x, y, 0), variance.at(x, y, 1), variance.at(x, y, 2)};
        g.c_ps.at(x, y) = gate_normal(v, tau_ps) ? 1.0 : 0.0;
      }
  return g;
}

// Runs observation-map construction + MC inference over every masked pixel
// of one view. Invalid (all-dark) pixels stay invalid in the result.
inline GatedNormalMap predict_view_normals(const ad::MlpSpec& spec,
                                           const ad::ParamVector& params,
                                           const std::vector<Image>& light_images,
                                           const Image& mask,
                                           const std::vector<DirectionalLight>& lights,
                                           int omega, int t_passes, double tau_ps,
                                           uint64_t seed, uint64_t view_index = 0) {
  int w = mask.width, h = mask.height;
  std::vector<ObservationMap> maps;
  std::vector<std::pair<int, int>> coords;
  std::vector<double> meas(lights.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (mask.at(x, y) < 0.5) continue;
      for (size_t k = 0; k < lights.size(); ++k) meas[k] = light_images[k].at(x, y);
      maps.push_back(build_observation_map(meas, lights, omega));
      coords.push_back({x, y});
    }
  uint64_t stream_base = view_index * uint64_t(w) * uint64_t(h);
  std::vector<McPrediction> preds =
      predict_normal_mc(spec, params, maps, t_passes, seed, stream_base);
  Image normal(w, h, 3), variance(w, h, 3), valid(w, h, 1);
  for (size_t i = 0; i < coords.size(); ++i) {
    if (!preds[i].valid) continue;
    auto [x, y] = coords[i];
    valid.at(x, y) = 1.0;
    for (int c = 0; c < 3; ++c) {
      normal.at(x, y, c) = preds[i].mean_normal[c];
      variance.at(x, y, c) = preds[i].variance[c];
    }
  }
  return gate_normal_map(normal, variance, valid, tau_ps);
}

}  // namespace mvps::ps
