#pragma once

#include <string>
#include <vector>

#include "mvps/autodiff.hpp"

namespace mvps::ad {

enum class Activation { kSoftplus, kTanh };

// Fully connected network description shared by the normal regressor and the
// distance-field MLP. Layer i maps widths[i] -> widths[i+1]; the last layer
// is linear. skip_at concatenates the raw input onto that hidden layer's
// input (-1 disables). dropout_q adds a mask input after each hidden
// activation; masks are fed externally as inputs named "<prefix>mask<i>".
struct MlpSpec {
  int in_dim = 3;
  std::vector<int> hidden;
  int out_dim = 1;
  Activation activation = Activation::kSoftplus;
  double softplus_beta = 100.0;
  int skip_at = -1;
  double dropout_q = 0.0;
  std::string prefix;

  std::vector<int> layer_in_dims() const {
    std::vector<int> dims;
    int cur = in_dim;
    for (size_t i = 0; i < hidden.size(); ++i) {
      int d = cur + (int(i) == skip_at ? in_dim : 0);
      dims.push_back(d);
      cur = hidden[i];
    }
    dims.push_back(cur + (int(hidden.size()) == skip_at ? in_dim : 0));
    return dims;
  }
  std::vector<int> layer_out_dims() const {
    std::vector<int> dims(hidden.begin(), hidden.end());
    dims.push_back(out_dim);
    return dims;
  }
  int num_layers() const { return int(hidden.size()) + 1; }
  std::string weight_name(int i) const { return prefix + "W" + std::to_string(i); }
  std::string bias_name(int i) const { return prefix + "b" + std::to_string(i); }
  std::string mask_name(int i, const std::string& suffix = "") const {
    return prefix + "mask" + suffix + "_" + std::to_string(i);
  }
};

struct MlpGraph {
  int x = -1;       // input node (batch, in_dim)
  int out = -1;     // output node (batch, out_dim)
  std::vector<int> param_nodes;
  std::vector<int> mask_nodes;  // one per hidden layer when dropout_q > 0
  std::vector<int> weight_nodes;  // weight matrices only (for weight decay)
};

// One param node per segment; replicas of the forward pass share these.
inline std::vector<int> mlp_param_nodes(Graph& g, const MlpSpec& spec) {
  std::vector<int> ids;
  std::vector<int> ins = spec.layer_in_dims();
  std::vector<int> outs = spec.layer_out_dims();
  for (int i = 0; i < spec.num_layers(); ++i) {
    ids.push_back(g.param(spec.weight_name(i), {ins[size_t(i)], outs[size_t(i)]}));
    ids.push_back(g.param(spec.bias_name(i), {1, outs[size_t(i)]}));
  }
  return ids;
}

// Forward pass over existing param nodes. mask_suffix names this replica's
// dropout mask inputs ("<prefix>mask<suffix>_<layer>"); empty string keeps
// the plain "<prefix>mask<layer>" names. Masks are created only when
// with_dropout_masks is set and spec.dropout_q > 0.
inline MlpGraph mlp_forward(Graph& g, const MlpSpec& spec, int x,
                            const std::vector<int>& param_nodes, bool with_dropout_masks,
                            const std::string& mask_suffix = "") {
  MlpGraph mg;
  mg.x = x;
  mg.param_nodes = param_nodes;
  int h = x;
  std::vector<int> outs = spec.layer_out_dims();
  int64_t batch = g.node(x).shape[0];
  for (int i = 0; i < spec.num_layers(); ++i) {
    if (i == spec.skip_at) h = g.concat_cols(h, x);
    int w = param_nodes[size_t(2 * i)];
    int b = param_nodes[size_t(2 * i) + 1];
    mg.weight_nodes.push_back(w);
    h = g.linear(h, w, b);
    if (i + 1 < spec.num_layers()) {
      h = spec.activation == Activation::kSoftplus ? g.softplus(h, spec.softplus_beta)
                                                   : g.tanh_(h);
      if (with_dropout_masks && spec.dropout_q > 0) {
        std::string name = spec.prefix + "mask" + mask_suffix + "_" + std::to_string(i);
        int m = g.input(name, {batch, outs[size_t(i)]});
        mg.mask_nodes.push_back(m);
        h = g.mul(h, m);
      }
    }
  }
  mg.out = h;
  return mg;
}

inline MlpGraph build_mlp(Graph& g, const MlpSpec& spec, int64_t batch,
                          bool with_dropout_masks) {
  int x = g.input(spec.prefix + "x", {batch, spec.in_dim});
  std::vector<int> params = mlp_param_nodes(g, spec);
  return mlp_forward(g, spec, x, params, with_dropout_masks);
}

// He-style initialization for the hidden stack, small uniform for the output.
inline ParamVector init_mlp_params(const MlpSpec& spec, uint64_t seed) {
  Rng rng(seed);
  ParamVector pv;
  std::vector<int> ins = spec.layer_in_dims();
  std::vector<int> outs = spec.layer_out_dims();
  for (int i = 0; i < spec.num_layers(); ++i) {
    int64_t in = ins[size_t(i)], out = outs[size_t(i)];
    Tensor w({in, out});
    double s = std::sqrt(2.0 / double(in));
    for (double& v : w.data) v = rng.gaussian() * s;
    pv.add(spec.weight_name(i), std::move(w));
    pv.add(spec.bias_name(i), Tensor::zeros({1, out}));
  }
  return pv;
}

// Inverted-dropout mask: entries are 0 with probability q, else 1/(1-q).
inline Tensor dropout_mask(int64_t rows, int64_t cols, double q, Rng& rng) {
  Tensor m({rows, cols});
  double keep_scale = 1.0 / (1.0 - q);
  for (double& v : m.data) v = rng.uniform() < q ? 0.0 : keep_scale;
  return m;
}

// Adam with bias correction. Deterministic; state follows parameter order.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamVector& params, const ParamVector& grads) {
    if (m_.items.empty()) {
      for (auto& [k, v] : params.items) {
        m_.add(k, Tensor::zeros(v.shape));
        v_.add(k, Tensor::zeros(v.shape));
      }
    }
    ++t_;
    double c1 = 1.0 - std::pow(beta1_, double(t_));
    double c2 = 1.0 - std::pow(beta2_, double(t_));
    for (auto& [k, p] : params.items) {
      const Tensor* gt = grads.find(k);
      if (!gt) throw StructuralError("Adam: missing gradient for segment '" + k + "'");
      Tensor& m = *m_.find(k);
      Tensor& v = *v_.find(k);
      for (size_t i = 0; i < p.data.size(); ++i) {
        double gi = gt->data[i];
        m.data[i] = beta1_ * m.data[i] + (1 - beta1_) * gi;
        v.data[i] = beta2_ * v.data[i] + (1 - beta2_) * gi * gi;
        double mh = m.data[i] / c1, vh = v.data[i] / c2;
        p.data[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
      }
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  int64_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  ParamVector m_, v_;
  int64_t t_ = 0;
};

}  // namespace mvps::ad
