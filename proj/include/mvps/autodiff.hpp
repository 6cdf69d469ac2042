#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mvps/tensor.hpp"

namespace mvps::ad {

// Node kinds of the computation graph. Gradient construction (derive below)
// emits ordinary nodes of these same kinds, so a gradient is itself a graph
// value and can be differentiated again.
enum class Op {
  kInput,     // named feed
  kParam,     // named trainable slot
  kConst,     // embedded tensor
  kAdd,       // elementwise, same shape
  kSub,
  kMul,
  kDiv,
  kAffine,    // a*x + b elementwise
  kMatmul,    // 2D, with transpose flags in i0/i1
  kAddRowvec, // (m,n) + (1,n)
  kSumAll,    // -> scalar
  kRowSum,    // (m,n) -> (m,1)
  kColSum,    // (m,n) -> (1,n)
  kTileCols,  // (m,1) -> (m,i0)
  kTileRows,  // (1,n) -> (i0,n)
  kFill,      // scalar -> sattr shape
  kSoftplus,  // sharpness a
  kSigmoid,
  kTanh,
  kSqrt,
  kAbs,
  kSign,
  kSoftmaxRows,
  kConcatCols,
  kSliceCols, // columns [i0, i0+i1)
  kPadCols,   // place (m,i1) into zero (m,i0) at column offset b (stored in i... see builder)
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kParam: return "param";
    case Op::kConst: return "const";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kAffine: return "affine";
    case Op::kMatmul: return "matmul";
    case Op::kAddRowvec: return "add_rowvec";
    case Op::kSumAll: return "sum_all";
    case Op::kRowSum: return "row_sum";
    case Op::kColSum: return "col_sum";
    case Op::kTileCols: return "tile_cols";
    case Op::kTileRows: return "tile_rows";
    case Op::kFill: return "fill";
    case Op::kSoftplus: return "softplus";
    case Op::kSigmoid: return "sigmoid";
    case Op::kTanh: return "tanh";
    case Op::kSqrt: return "sqrt";
    case Op::kAbs: return "abs";
    case Op::kSign: return "sign";
    case Op::kSoftmaxRows: return "softmax_rows";
    case Op::kConcatCols: return "concat_cols";
    case Op::kSliceCols: return "slice_cols";
    case Op::kPadCols: return "pad_cols";
  }
  return "?";
}

struct Node {
  Op op;
  std::vector<int> in;
  Shape shape;
  double a = 0, b = 0;     // affine coefficients / softplus sharpness
  int64_t i0 = 0, i1 = 0;  // op-specific integer attributes
  Shape sattr;             // fill target shape
  std::string name;        // input/param slot name
};

// Named parameter segments. Segment names are unique; order is the order of
// insertion and is preserved by optimizers and serialization.
struct ParamVector {
  std::vector<std::pair<std::string, Tensor>> items;

  void add(const std::string& name, Tensor t) {
    if (find(name)) throw StructuralError("ParamVector: duplicate segment '" + name + "'");
    items.emplace_back(name, std::move(t));
  }
  Tensor* find(const std::string& name) {
    for (auto& [k, v] : items)
      if (k == name) return &v;
    return nullptr;
  }
  const Tensor* find(const std::string& name) const {
    for (auto& [k, v] : items)
      if (k == name) return &v;
    return nullptr;
  }
  int64_t total_size() const {
    int64_t n = 0;
    for (auto& [k, v] : items) n += v.size();
    return n;
  }
  bool all_finite() const {
    for (auto& [k, v] : items)
      if (!v.all_finite()) return false;
    return true;
  }
};

using NamedTensors = std::unordered_map<std::string, Tensor>;

class Graph {
 public:
  const Node& node(int id) const { return nodes_.at(size_t(id)); }
  int size() const { return int(nodes_.size()); }
  const Tensor& const_value(int id) const { return consts_[size_t(node(id).i0)]; }

  std::string describe(int id) const {
    const Node& n = node(id);
    std::string s = "node #" + std::to_string(id) + " (" + op_name(n.op);
    if (!n.name.empty()) s += " '" + n.name + "'";
    return s + ")";
  }

  // --- leaves ---------------------------------------------------------------

  int input(const std::string& name, Shape s) {
    return push({Op::kInput, {}, std::move(s), 0, 0, 0, 0, {}, name});
  }
  int param(const std::string& name, Shape s) {
    return push({Op::kParam, {}, std::move(s), 0, 0, 0, 0, {}, name});
  }
  int constant(Tensor t) {
    Node n{Op::kConst, {}, t.shape, 0, 0, int64_t(consts_.size()), 0, {}, ""};
    consts_.push_back(std::move(t));
    return push(std::move(n));
  }
  int scalar_const(double v) { return constant(Tensor::scalar(v)); }

  // --- elementwise ----------------------------------------------------------

  int add(int x, int y) { return ew2(Op::kAdd, x, y); }
  int sub(int x, int y) { return ew2(Op::kSub, x, y); }
  int mul(int x, int y) { return ew2(Op::kMul, x, y); }
  int div(int x, int y) { return ew2(Op::kDiv, x, y); }
  int affine(int x, double a, double b) {
    return push({Op::kAffine, {x}, node(x).shape, a, b});
  }
  int softplus(int x, double beta) {
    if (beta <= 0) throw ContractError("softplus: sharpness must be positive");
    return push({Op::kSoftplus, {x}, node(x).shape, beta});
  }
  int sigmoid(int x) { return push({Op::kSigmoid, {x}, node(x).shape}); }
  int tanh_(int x) { return push({Op::kTanh, {x}, node(x).shape}); }
  int sqrt_(int x) { return push({Op::kSqrt, {x}, node(x).shape}); }
  int abs_(int x) { return push({Op::kAbs, {x}, node(x).shape}); }
  int sign_(int x) { return push({Op::kSign, {x}, node(x).shape}); }

  // --- linear algebra and structure ------------------------------------------

  int matmul(int x, int y, bool tx = false, bool ty = false) {
    const Shape& xs = node(x).shape;
    const Shape& ys = node(y).shape;
    if (xs.size() != 2 || ys.size() != 2)
      throw StructuralError("matmul: operands must be rank 2; got " + shape_str(xs) + " and " +
                            shape_str(ys) + " at " + describe_next());
    int64_t m = tx ? xs[1] : xs[0], k = tx ? xs[0] : xs[1];
    int64_t k2 = ty ? ys[1] : ys[0], n = ty ? ys[0] : ys[1];
    if (k != k2)
      throw StructuralError("matmul: inner dimensions disagree at " + describe_next() + ": " +
                            shape_str(xs) + (tx ? "^T" : "") + " x " + shape_str(ys) +
                            (ty ? "^T" : ""));
    return push({Op::kMatmul, {x, y}, {m, n}, 0, 0, tx ? 1 : 0, ty ? 1 : 0});
  }
  int add_rowvec(int x, int v) {
    const Shape& xs = node(x).shape;
    const Shape& vs = node(v).shape;
    if (xs.size() != 2 || vs.size() != 2 || vs[0] != 1 || vs[1] != xs[1])
      throw StructuralError("add_rowvec: want (m,n)+(1,n); got " + shape_str(xs) + " and " +
                            shape_str(vs) + " at " + describe_next());
    return push({Op::kAddRowvec, {x, v}, xs});
  }
  int sum_all(int x) { return push({Op::kSumAll, {x}, {}}); }
  int row_sum(int x) {
    require_rank2(x, "row_sum");
    return push({Op::kRowSum, {x}, {node(x).shape[0], 1}});
  }
  int col_sum(int x) {
    require_rank2(x, "col_sum");
    return push({Op::kColSum, {x}, {1, node(x).shape[1]}});
  }
  int tile_cols(int x, int64_t n) {
    require_rank2(x, "tile_cols");
    if (node(x).shape[1] != 1)
      throw StructuralError("tile_cols: want (m,1) input at " + describe_next());
    return push({Op::kTileCols, {x}, {node(x).shape[0], n}, 0, 0, n});
  }
  int tile_rows(int x, int64_t m) {
    require_rank2(x, "tile_rows");
    if (node(x).shape[0] != 1)
      throw StructuralError("tile_rows: want (1,n) input at " + describe_next());
    return push({Op::kTileRows, {x}, {m, node(x).shape[1]}, 0, 0, m});
  }
  int fill(int scalar, Shape s) {
    if (shape_size(node(scalar).shape) != 1)
      throw StructuralError("fill: source must be scalar at " + describe_next());
    Node n{Op::kFill, {scalar}, s};
    n.sattr = std::move(s);
    n.shape = n.sattr;
    return push(std::move(n));
  }
  int softmax_rows(int x) {
    require_rank2(x, "softmax_rows");
    return push({Op::kSoftmaxRows, {x}, node(x).shape});
  }
  int concat_cols(int x, int y) {
    require_rank2(x, "concat_cols");
    require_rank2(y, "concat_cols");
    const Shape& xs = node(x).shape;
    const Shape& ys = node(y).shape;
    if (xs[0] != ys[0])
      throw StructuralError("concat_cols: row counts disagree at " + describe_next());
    return push({Op::kConcatCols, {x, y}, {xs[0], xs[1] + ys[1]}});
  }
  int slice_cols(int x, int64_t start, int64_t len) {
    require_rank2(x, "slice_cols");
    const Shape& xs = node(x).shape;
    if (start < 0 || len < 0 || start + len > xs[1])
      throw StructuralError("slice_cols: range out of bounds at " + describe_next());
    return push({Op::kSliceCols, {x}, {xs[0], len}, 0, 0, start, len});
  }
  int pad_cols(int x, int64_t offset, int64_t total) {
    require_rank2(x, "pad_cols");
    const Shape& xs = node(x).shape;
    if (offset < 0 || offset + xs[1] > total)
      throw StructuralError("pad_cols: range out of bounds at " + describe_next());
    return push({Op::kPadCols, {x}, {xs[0], total}, 0, 0, total, offset});
  }

  // --- composite helpers ------------------------------------------------------

  int neg(int x) { return affine(x, -1, 0); }
  int square(int x) { return mul(x, x); }
  int mean_all(int x) {
    int64_t n = shape_size(node(x).shape);
    return affine(sum_all(x), 1.0 / double(n), 0);
  }
  // Rowwise Euclidean norm, (m,n) -> (m,1).
  int l2norm_rows(int x) { return sqrt_(row_sum(square(x))); }
  // Rowwise absolute sum, (m,n) -> (m,1).
  int l1norm_rows(int x) { return row_sum(abs_(x)); }
  // Fully connected layer x(m,in) * W(in,out) + b(1,out).
  int linear(int x, int w, int b) { return add_rowvec(matmul(x, w), b); }

 private:
  int push(Node n) {
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
  }
  int ew2(Op op, int x, int y) {
    if (node(x).shape != node(y).shape)
      throw StructuralError(std::string(op_name(op)) + ": shape mismatch at " + describe_next() +
                            ": " + shape_str(node(x).shape) + " vs " + shape_str(node(y).shape));
    return push({op, {x, y}, node(x).shape});
  }
  void require_rank2(int x, const char* what) const {
    if (node(x).shape.size() != 2)
      throw StructuralError(std::string(what) + ": operand must be rank 2, got " +
                            shape_str(node(x).shape));
  }
  std::string describe_next() const { return "node #" + std::to_string(nodes_.size()); }

  std::vector<Node> nodes_;
  std::vector<Tensor> consts_;
};

// ---------------------------------------------------------------------------
// Forward evaluation. Deterministic, no mutation of inputs; every intermediate
// is checked for finiteness and failures name the offending node.
// ---------------------------------------------------------------------------

namespace detail {

inline void eval_node(const Graph& g, int id, std::vector<Tensor>& vals,
                      const ParamVector& params, const NamedTensors& inputs) {
  const Node& n = g.node(id);
  Tensor& out = vals[size_t(id)];
  auto V = [&](int i) -> const Tensor& { return vals[size_t(i)]; };
  switch (n.op) {
    case Op::kInput: {
      auto it = inputs.find(n.name);
      if (it == inputs.end())
        throw StructuralError("eval: unbound input slot at " + g.describe(id));
      if (it->second.shape != n.shape)
        throw StructuralError("eval: input '" + n.name + "' has shape " +
                              shape_str(it->second.shape) + ", expected " + shape_str(n.shape));
      out = it->second;
      break;
    }
    case Op::kParam: {
      const Tensor* t = params.find(n.name);
      if (!t) throw StructuralError("eval: unbound parameter slot at " + g.describe(id));
      if (t->shape != n.shape)
        throw StructuralError("eval: parameter '" + n.name + "' has shape " +
                              shape_str(t->shape) + ", expected " + shape_str(n.shape));
      out = *t;
      break;
    }
    case Op::kConst: out = g.const_value(id); break;
    case Op::kAdd: case Op::kSub: case Op::kMul: case Op::kDiv: {
      const Tensor& x = V(n.in[0]);
      const Tensor& y = V(n.in[1]);
      out.shape = x.shape;
      out.data.resize(x.data.size());
      const double* a = x.data.data();
      const double* b = y.data.data();
      double* o = out.data.data();
      size_t m = x.data.size();
      switch (n.op) {
        case Op::kAdd: for (size_t i = 0; i < m; ++i) o[i] = a[i] + b[i]; break;
        case Op::kSub: for (size_t i = 0; i < m; ++i) o[i] = a[i] - b[i]; break;
        case Op::kMul: for (size_t i = 0; i < m; ++i) o[i] = a[i] * b[i]; break;
        default:       for (size_t i = 0; i < m; ++i) o[i] = a[i] / b[i]; break;
      }
      break;
    }
    case Op::kAffine: {
      const Tensor& x = V(n.in[0]);
      out.shape = x.shape;
      out.data.resize(x.data.size());
      for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = n.a * x.data[i] + n.b;
      break;
    }
    case Op::kMatmul:
      matmul_into(V(n.in[0]), n.i0 != 0, V(n.in[1]), n.i1 != 0, out);
      break;
    case Op::kAddRowvec: {
      const Tensor& x = V(n.in[0]);
      const Tensor& v = V(n.in[1]);
      out.shape = x.shape;
      out.data.resize(x.data.size());
      int64_t m = x.shape[0], c = x.shape[1];
      for (int64_t r = 0; r < m; ++r)
        for (int64_t j = 0; j < c; ++j)
          out.data[size_t(r * c + j)] = x.data[size_t(r * c + j)] + v.data[size_t(j)];
      break;
    }
    case Op::kSumAll: {
      const Tensor& x = V(n.in[0]);
      double s = 0;
      for (double v : x.data) s += v;
      out = Tensor::scalar(s);
      break;
    }
    case Op::kRowSum: {
      const Tensor& x = V(n.in[0]);
      int64_t m = x.shape[0], c = x.shape[1];
      out.shape = {m, 1};
      out.data.assign(size_t(m), 0.0);
      for (int64_t r = 0; r < m; ++r) {
        double s = 0;
        for (int64_t j = 0; j < c; ++j) s += x.data[size_t(r * c + j)];
        out.data[size_t(r)] = s;
      }
      break;
    }
    case Op::kColSum: {
      const Tensor& x = V(n.in[0]);
      int64_t m = x.shape[0], c = x.shape[1];
      out.shape = {1, c};
      out.data.assign(size_t(c), 0.0);
      for (int64_t r = 0; r < m; ++r)
        for (int64_t j = 0; j < c; ++j) out.data[size_t(j)] += x.data[size_t(r * c + j)];
      break;
    }
    case Op::kTileCols: {
      const Tensor& x = V(n.in[0]);
      int64_t m = x.shape[0], c = n.i0;
      out.shape = {m, c};
      out.data.resize(size_t(m * c));
      for (int64_t r = 0; r < m; ++r)
        for (int64_t j = 0; j < c; ++j) out.data[size_t(r * c + j)] = x.data[size_t(r)];
      break;
    }
    case Op::kTileRows: {
      const Tensor& x = V(n.in[0]);
      int64_t m = n.i0, c = x.shape[1];
      out.shape = {m, c};
      out.data.resize(size_t(m * c));
      for (int64_t r = 0; r < m; ++r)
        for (int64_t j = 0; j < c; ++j) out.data[size_t(r * c + j)] = x.data[size_t(j)];
      break;
    }
    case Op::kFill: {
      out = Tensor::full(n.sattr, V(n.in[0]).data[0]);
      break;
    }
    case Op::kSoftplus: {
      const Tensor& x = V(n.in[0]);
      out.shape = x.shape;
      out.data.resize(x.data.size());
      double beta = n.a;
      for (size_t i = 0; i < x.data.size(); ++i) {
        double t = beta * x.data[i];
        out.data[i] = (t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t))) / beta;
      }
      break;
    }
    case Op::kSigmoid: {
      const Tensor& x = V(n.in[0]);
      out.shape = x.shape;
      out.data.resize(x.data.size());
      for (size_t i = 0; i < x.data.size(); ++i) {
        double t = x.data[i];
        out.data[i] = t >= 0 ? 1.0 / (1.0 + std::exp(-t))
                             : std::exp(t) / (1.0 + std::exp(t));
      }
      break;
    }
    case Op::kTanh: {
      const Tensor& x = V(n.in[0]);
      out.shape = x.shape;
      out.data.resize(x.data.size());
      for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = std::tanh(x.data[i]);
      break;
    }
    case Op::kSqrt: {
      const Tensor& x = V(n.in[0]);
      out.shape = x.shape;
      out.data.resize(x.data.size());
      for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = std::sqrt(x.data[i]);
      break;
    }
    case Op::kAbs: {
      const Tensor& x = V(n.in[0]);
      out.shape = x.shape;
      out.data.resize(x.data.size());
      for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = std::fabs(x.data[i]);
      break;
    }
    case Op::kSign: {
      const Tensor& x = V(n.in[0]);
      out.shape = x.shape;
      out.data.resize(x.data.size());
      for (size_t i = 0; i < x.data.size(); ++i)
        out.data[i] = x.data[i] > 0 ? 1.0 : (x.data[i] < 0 ? -1.0 : 0.0);
      break;
    }
    case Op::kSoftmaxRows: {
      const Tensor& x = V(n.in[0]);
      int64_t m = x.shape[0], c = x.shape[1];
      out.shape = x.shape;
      out.data.resize(x.data.size());
      for (int64_t r = 0; r < m; ++r) {
        const double* row = x.data.data() + r * c;
        double* orow = out.data.data() + r * c;
        double mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double s = 0;
        for (int64_t j = 0; j < c; ++j) {
          orow[j] = std::exp(row[j] - mx);
          s += orow[j];
        }
        for (int64_t j = 0; j < c; ++j) orow[j] /= s;
      }
      break;
    }
    case Op::kConcatCols: {
      const Tensor& x = V(n.in[0]);
      const Tensor& y = V(n.in[1]);
      int64_t m = x.shape[0], cx = x.shape[1], cy = y.shape[1];
      out.shape = {m, cx + cy};
      out.data.resize(size_t(m * (cx + cy)));
      for (int64_t r = 0; r < m; ++r) {
        std::copy_n(x.data.data() + r * cx, cx, out.data.data() + r * (cx + cy));
        std::copy_n(y.data.data() + r * cy, cy, out.data.data() + r * (cx + cy) + cx);
      }
      break;
    }
    case Op::kSliceCols: {
      const Tensor& x = V(n.in[0]);
      int64_t m = x.shape[0], c = x.shape[1], start = n.i0, len = n.i1;
      out.shape = {m, len};
      out.data.resize(size_t(m * len));
      for (int64_t r = 0; r < m; ++r)
        std::copy_n(x.data.data() + r * c + start, len, out.data.data() + r * len);
      break;
    }
    case Op::kPadCols: {
      const Tensor& x = V(n.in[0]);
      int64_t m = x.shape[0], c = x.shape[1], total = n.i0, off = n.i1;
      out.shape = {m, total};
      out.data.assign(size_t(m * total), 0.0);
      for (int64_t r = 0; r < m; ++r)
        std::copy_n(x.data.data() + r * c, c, out.data.data() + r * total + off);
      break;
    }
  }
  if (!out.all_finite())
    throw NumericError("eval: non-finite value produced at " + g.describe(id));
}

}  // namespace detail

// Evaluates the requested nodes. Only ancestors of the targets are computed;
// intermediates are released as soon as their last consumer has run.
inline std::vector<Tensor> eval_graph(const Graph& g, const ParamVector& params,
                                      const NamedTensors& inputs,
                                      const std::vector<int>& targets) {
  int n = g.size();
  std::vector<char> needed(size_t(n), 0);
  std::vector<int> stack;
  for (int t : targets) {
    if (t < 0 || t >= n) throw ContractError("eval: target id out of range");
    if (!needed[size_t(t)]) {
      needed[size_t(t)] = 1;
      stack.push_back(t);
    }
  }
  while (!stack.empty()) {
    int id = stack.back();
    stack.pop_back();
    for (int in : g.node(id).in)
      if (!needed[size_t(in)]) {
        needed[size_t(in)] = 1;
        stack.push_back(in);
      }
  }
  // Last consumer among needed nodes, for eager release.
  std::vector<int> last_use(size_t(n), -1);
  for (int id = 0; id < n; ++id)
    if (needed[size_t(id)])
      for (int in : g.node(id).in) last_use[size_t(in)] = id;
  std::vector<char> keep(size_t(n), 0);
  for (int t : targets) keep[size_t(t)] = 1;

  std::vector<Tensor> vals(static_cast<size_t>(n));
  for (int id = 0; id < n; ++id) {
    if (!needed[size_t(id)]) continue;
    detail::eval_node(g, id, vals, params, inputs);
    for (int in : g.node(id).in)
      if (last_use[size_t(in)] == id && !keep[size_t(in)]) {
        vals[size_t(in)].data.clear();
        vals[size_t(in)].data.shrink_to_fit();
      }
  }
  std::vector<Tensor> out;
  out.reserve(targets.size());
  for (int t : targets) out.push_back(vals[size_t(t)]);
  return out;
}

// ---------------------------------------------------------------------------
// Reverse-mode differentiation by symbolic graph construction. The adjoint of
// every node is built out of ordinary ops appended to the same graph, so the
// result can be evaluated, reused downstream, or differentiated again.
// ---------------------------------------------------------------------------

inline std::vector<int> derive(Graph& g, int out, const std::vector<int>& wrt) {
  if (shape_size(g.node(out).shape) != 1)
    throw ContractError("derive: output must be scalar, got shape " +
                        shape_str(g.node(out).shape) + " at " + g.describe(out));
  int n_orig = g.size();

  // Nodes that the output depends on.
  std::vector<char> reach(size_t(n_orig), 0);
  reach[size_t(out)] = 1;
  for (int id = out; id >= 0; --id)
    if (reach[size_t(id)])
      for (int in : g.node(id).in) reach[size_t(in)] = 1;

  std::vector<int> adj(size_t(n_orig), -1);
  {
    Tensor one = Tensor::full(g.node(out).shape, 1.0);
    adj[size_t(out)] = g.constant(std::move(one));
  }

  auto accumulate = [&](int target, int contribution) {
    if (adj[size_t(target)] < 0)
      adj[size_t(target)] = contribution;
    else
      adj[size_t(target)] = g.add(adj[size_t(target)], contribution);
  };

  for (int id = out; id >= 0; --id) {
    if (!reach[size_t(id)] || adj[size_t(id)] < 0) continue;
    const Node n = g.node(id);  // copy: builder calls may reallocate
    int gid = adj[size_t(id)];
    switch (n.op) {
      case Op::kInput: case Op::kParam: case Op::kConst:
        break;
      case Op::kAdd:
        accumulate(n.in[0], gid);
        accumulate(n.in[1], gid);
        break;
      case Op::kSub:
        accumulate(n.in[0], gid);
        accumulate(n.in[1], g.neg(gid));
        break;
      case Op::kMul:
        accumulate(n.in[0], g.mul(gid, n.in[1]));
        accumulate(n.in[1], g.mul(gid, n.in[0]));
        break;
      case Op::kDiv:
        // y = a/b: da = g/b, db = -g*y/b
        accumulate(n.in[0], g.div(gid, n.in[1]));
        accumulate(n.in[1], g.neg(g.div(g.mul(gid, id), n.in[1])));
        break;
      case Op::kAffine:
        accumulate(n.in[0], g.affine(gid, n.a, 0));
        break;
      case Op::kMatmul: {
        bool tx = n.i0 != 0, ty = n.i1 != 0;
        int x = n.in[0], y = n.in[1];
        // C = op(X) op(Y); standard transpose bookkeeping per flag case.
        if (!tx && !ty) {
          accumulate(x, g.matmul(gid, y, false, true));
          accumulate(y, g.matmul(x, gid, true, false));
        } else if (tx && !ty) {
          accumulate(x, g.matmul(y, gid, false, true));
          accumulate(y, g.matmul(x, gid, false, false));
        } else if (!tx && ty) {
          accumulate(x, g.matmul(gid, y, false, false));
          accumulate(y, g.matmul(gid, x, true, false));
        } else {
          accumulate(x, g.matmul(y, gid, true, true));
          accumulate(y, g.matmul(gid, x, true, true));
        }
        break;
      }
      case Op::kAddRowvec:
        accumulate(n.in[0], gid);
        accumulate(n.in[1], g.col_sum(gid));
        break;
      case Op::kSumAll:
        accumulate(n.in[0], g.fill(gid, g.node(n.in[0]).shape));
        break;
      case Op::kRowSum:
        accumulate(n.in[0], g.tile_cols(gid, g.node(n.in[0]).shape[1]));
        break;
      case Op::kColSum:
        accumulate(n.in[0], g.tile_rows(gid, g.node(n.in[0]).shape[0]));
        break;
      case Op::kTileCols:
        accumulate(n.in[0], g.row_sum(gid));
        break;
      case Op::kTileRows:
        accumulate(n.in[0], g.col_sum(gid));
        break;
      case Op::kFill:
        accumulate(n.in[0], g.sum_all(gid));
        break;
      case Op::kSoftplus:
        accumulate(n.in[0], g.mul(gid, g.sigmoid(g.affine(n.in[0], n.a, 0))));
        break;
      case Op::kSigmoid:
        // dy/dx = y (1 - y)
        accumulate(n.in[0], g.mul(gid, g.mul(id, g.affine(id, -1, 1))));
        break;
      case Op::kTanh:
        accumulate(n.in[0], g.mul(gid, g.affine(g.square(id), -1, 1)));
        break;
      case Op::kSqrt:
        accumulate(n.in[0], g.div(gid, g.affine(id, 2, 0)));
        break;
      case Op::kAbs:
        accumulate(n.in[0], g.mul(gid, g.sign_(n.in[0])));
        break;
      case Op::kSign:
        break;  // piecewise constant
      case Op::kSoftmaxRows: {
        // dx = y * (g - rowsum(g*y))
        int t = g.mul(gid, id);
        int s = g.tile_cols(g.row_sum(t), n.shape[1]);
        accumulate(n.in[0], g.mul(id, g.sub(gid, s)));
        break;
      }
      case Op::kConcatCols: {
        int64_t cx = g.node(n.in[0]).shape[1];
        int64_t cy = g.node(n.in[1]).shape[1];
        accumulate(n.in[0], g.slice_cols(gid, 0, cx));
        accumulate(n.in[1], g.slice_cols(gid, cx, cy));
        break;
      }
      case Op::kSliceCols:
        accumulate(n.in[0], g.pad_cols(gid, n.i0, g.node(n.in[0]).shape[1]));
        break;
      case Op::kPadCols:
        accumulate(n.in[0], g.slice_cols(gid, n.i1, g.node(n.in[0]).shape[1]));
        break;
    }
  }

  std::vector<int> result;
  result.reserve(wrt.size());
  for (int w : wrt) {
    if (w < 0 || w >= n_orig) throw ContractError("derive: wrt id out of range");
    if (adj[size_t(w)] >= 0)
      result.push_back(adj[size_t(w)]);
    else
      result.push_back(g.constant(Tensor::zeros(g.node(w).shape)));
  }
  return result;
}

// Gradient of a scalar node with respect to one input/intermediate value.
// The returned id is an ordinary graph value and may be used downstream.
inline int grad_input(Graph& g, int out, int input_node) {
  return derive(g, out, {input_node})[0];
}

// Gradient node ids for each listed parameter node.
inline std::vector<int> grad_params(Graph& g, int out, const std::vector<int>& param_nodes) {
  return derive(g, out, param_nodes);
}

// Evaluates grad_params and packs the result as a ParamVector mirroring the
// segment names of `param_nodes`.
inline ParamVector eval_param_gradients(Graph& g, int out, const std::vector<int>& param_nodes,
                                        const ParamVector& params, const NamedTensors& inputs) {
  std::vector<int> gids = grad_params(g, out, param_nodes);
  std::vector<Tensor> vals = eval_graph(g, params, inputs, gids);
  ParamVector pv;
  for (size_t i = 0; i < param_nodes.size(); ++i)
    pv.add(g.node(param_nodes[i]).name, std::move(vals[i]));
  return pv;
}

// ---------------------------------------------------------------------------
// Finite-difference audit of the analytic gradients.
// ---------------------------------------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0;
  bool non_finite = false;
  int64_t coords_checked = 0;
};

// Compares analytic d(out)/d(coordinate) against central differences over a
// random sample of parameter and input coordinates.
// rel err := |analytic - fd| / max(1, |analytic|).
inline GradCheckReport check_gradients(const Graph& graph, int out, const ParamVector& params,
                                       const NamedTensors& inputs, double step, uint64_t seed,
                                       int64_t max_coords = 100) {
  if (step <= 0) throw ContractError("check_gradients: step must be positive");
  Graph g = graph;

  std::vector<int> param_ids, input_ids;
  for (int id = 0; id < g.size(); ++id) {
    if (g.node(id).op == Op::kParam && params.find(g.node(id).name)) param_ids.push_back(id);
    if (g.node(id).op == Op::kInput && inputs.count(g.node(id).name)) input_ids.push_back(id);
  }
  std::vector<int> all = param_ids;
  all.insert(all.end(), input_ids.begin(), input_ids.end());
  std::vector<int> gids = derive(g, out, all);
  std::vector<Tensor> analytic = eval_graph(g, params, inputs, gids);

  struct Coord {
    bool is_param;
    std::string name;
    int64_t index;
    double analytic;
  };
  std::vector<Coord> coords;
  for (size_t i = 0; i < all.size(); ++i) {
    const Node& n = g.node(all[i]);
    bool is_param = n.op == Op::kParam;
    for (int64_t j = 0; j < analytic[i].size(); ++j)
      coords.push_back({is_param, n.name, j, analytic[i].data[size_t(j)]});
  }
  Rng rng(seed);
  if (int64_t(coords.size()) > max_coords) {
    // Fisher-Yates prefix shuffle, keep the first max_coords entries.
    for (int64_t i = 0; i < max_coords; ++i) {
      int64_t j = i + int64_t(rng.uniform_index(uint64_t(coords.size() - size_t(i))));
      std::swap(coords[size_t(i)], coords[size_t(j)]);
    }
    coords.resize(size_t(max_coords));
  }

  GradCheckReport report;
  ParamVector p2 = params;
  NamedTensors in2 = inputs;
  for (const Coord& c : coords) {
    double* slot = c.is_param ? &p2.find(c.name)->data[size_t(c.index)]
                              : &in2.at(c.name).data[size_t(c.index)];
    double saved = *slot;
    *slot = saved + step;
    double fp = eval_graph(g, p2, in2, {out})[0].scalar_value();
    *slot = saved - step;
    double fm = eval_graph(g, p2, in2, {out})[0].scalar_value();
    *slot = saved;
    double fd = (fp - fm) / (2 * step);
    if (!std::isfinite(fd) || !std::isfinite(c.analytic)) {
      report.non_finite = true;
      continue;
    }
    double rel = std::fabs(c.analytic - fd) / std::max(1.0, std::fabs(c.analytic));
    report.max_rel_err = std::max(report.max_rel_err, rel);
  }
  report.coords_checked = int64_t(coords.size());
  return report;
}

}  // namespace mvps::ad
