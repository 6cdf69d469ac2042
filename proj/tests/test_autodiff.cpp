#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mvps/autodiff.hpp"
#include "mvps/nn.hpp"

using namespace mvps;
using namespace mvps::ad;

namespace {

// Test-side central-difference oracle. Intentionally independent of
// check_gradients: it only uses forward evaluation.
double fd_at(const Graph& g, int out, ParamVector params, NamedTensors inputs,
             bool is_param, const std::string& name, int64_t index, double step = 1e-5) {
  double* slot = is_param ? &params.find(name)->data[size_t(index)]
                          : &inputs.at(name).data[size_t(index)];
  double saved = *slot;
  *slot = saved + step;
  double fp = eval_graph(g, params, inputs, {out})[0].scalar_value();
  *slot = saved - step;
  double fm = eval_graph(g, params, inputs, {out})[0].scalar_value();
  return (fp - fm) / (2 * step);
}

// Max rel. error between analytic input-gradient and the oracle over all
// coordinates of the named slots.
double max_fd_error(Graph g, int out, const ParamVector& params, const NamedTensors& inputs) {
  std::vector<int> slots;
  for (int id = 0; id < g.size(); ++id) {
    Op op = g.node(id).op;
    if (op == Op::kParam || op == Op::kInput) slots.push_back(id);
  }
  std::vector<int> gids = derive(g, out, slots);
  std::vector<Tensor> analytic = eval_graph(g, params, inputs, gids);
  double worst = 0;
  for (size_t s = 0; s < slots.size(); ++s) {
    const Node& n = g.node(slots[s]);
    for (int64_t j = 0; j < analytic[s].size(); ++j) {
      double a = analytic[s].data[size_t(j)];
      double fd = fd_at(g, out, params, inputs, n.op == Op::kParam, n.name, j);
      worst = std::max(worst, std::fabs(a - fd) / std::max(1.0, std::fabs(a)));
    }
  }
  return worst;
}

Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("eval: elementwise affine") {
  Graph g;
  int x = g.input("x", {});
  int y = g.affine(x, 2, 1);
  NamedTensors in{{"x", Tensor::scalar(3)}};
  CHECK(eval_graph(g, {}, in, {y})[0].scalar_value() == 7.0);
}

TEST_CASE("eval: softplus at zero with sharpness 100") {
  Graph g;
  int x = g.input("x", {});
  int y = g.softplus(x, 100);
  NamedTensors in{{"x", Tensor::scalar(0)}};
  CHECK_THAT(eval_graph(g, {}, in, {y})[0].scalar_value(),
             Catch::Matchers::WithinAbs(std::log(2.0) / 100.0, 1e-15));
}

TEST_CASE("eval: softmax over equal logits") {
  Graph g;
  int x = g.input("x", {1, 4});
  int y = g.softmax_rows(x);
  NamedTensors in{{"x", Tensor::full({1, 4}, 0.37)}};
  Tensor out = eval_graph(g, {}, in, {y})[0];
  for (double v : out.data) CHECK_THAT(v, Catch::Matchers::WithinAbs(0.25, 1e-15));
}

TEST_CASE("eval: shape mismatch names the offending node") {
  Graph g;
  int x = g.input("x", {2, 3});
  int y = g.input("y", {3, 3});
  CHECK_THROWS_AS(g.add(x, y), StructuralError);
  CHECK_THROWS_WITH(g.matmul(x, x), Catch::Matchers::ContainsSubstring("node #"));
}

TEST_CASE("eval: non-finite intermediate raises a numeric error with node id") {
  Graph g;
  int x = g.input("x", {});
  int y = g.div(g.scalar_const(1.0), x);
  NamedTensors in{{"x", Tensor::scalar(0)}};
  CHECK_THROWS_AS(eval_graph(g, {}, in, {y}), NumericError);
}

TEST_CASE("eval: pure, bit-identical repeat evaluation") {
  Rng rng(7);
  Graph g;
  MlpSpec spec{4, {8, 8}, 2, Activation::kSoftplus, 100.0, -1, 0.2, "m."};
  MlpGraph mg = build_mlp(g, spec, 5, true);
  int loss = g.mean_all(g.square(mg.out));
  ParamVector params = init_mlp_params(spec, 3);
  NamedTensors in;
  in["m.x"] = random_tensor({5, 4}, rng);
  in["m.mask_0"] = dropout_mask(5, 8, 0.2, rng);
  in["m.mask_1"] = dropout_mask(5, 8, 0.2, rng);
  Tensor a = eval_graph(g, params, in, {loss})[0];
  Tensor b = eval_graph(g, params, in, {loss})[0];
  REQUIRE(a.data.size() == b.data.size());
  for (size_t i = 0; i < a.data.size(); ++i)
    CHECK(std::memcmp(&a.data[i], &b.data[i], sizeof(double)) == 0);
}

TEST_CASE("grad_params: quadratic") {
  Graph g;
  int theta = g.param("theta", {1, 2});
  int loss = g.sum_all(g.square(theta));
  ParamVector p;
  p.add("theta", Tensor({1, 2}, {1, 2}));
  ParamVector grads = eval_param_gradients(g, loss, {theta}, p, {});
  CHECK(grads.find("theta")->data[0] == 2.0);
  CHECK(grads.find("theta")->data[1] == 4.0);
}

TEST_CASE("grad_params: through a nested input-gradient node") {
  // out = || d/dx (theta . x) || = ||theta||; d out / d theta = theta/||theta||.
  Graph g;
  int theta = g.param("theta", {1, 3});
  int x = g.input("x", {1, 3});
  int f = g.sum_all(g.mul(theta, x));
  int grad_x = grad_input(g, f, x);
  int out = g.sum_all(g.l2norm_rows(grad_x));
  ParamVector p;
  p.add("theta", Tensor({1, 3}, {1, 2, 2}));
  NamedTensors in{{"x", Tensor({1, 3}, {0.3, -0.2, 0.9})}};
  ParamVector grads = eval_param_gradients(g, out, {theta}, p, in);
  const Tensor& gt = *grads.find("theta");
  CHECK_THAT(gt.data[0], Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
  CHECK_THAT(gt.data[1], Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
  CHECK_THAT(gt.data[2], Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
}

TEST_CASE("grad_params: constant output gives all-zero gradient") {
  Graph g;
  int theta = g.param("theta", {2, 2});
  int out = g.scalar_const(5.0);
  ParamVector p;
  p.add("theta", Tensor::full({2, 2}, 1.5));
  ParamVector grads = eval_param_gradients(g, out, {theta}, p, {});
  for (double v : grads.find("theta")->data) CHECK(v == 0.0);
}

TEST_CASE("grad_params: non-scalar output is a contract error") {
  Graph g;
  int theta = g.param("theta", {2, 2});
  CHECK_THROWS_AS(grad_params(g, theta, {theta}), ContractError);
}

TEST_CASE("grad_input: squared norm") {
  Graph g;
  int x = g.input("x", {1, 3});
  int f = g.sum_all(g.square(x));
  int gx = grad_input(g, f, x);
  NamedTensors in{{"x", Tensor({1, 3}, {1, 0, 2})}};
  Tensor out = eval_graph(g, {}, in, {gx})[0];
  CHECK(out.data == std::vector<double>{2, 0, 4});
}

TEST_CASE("grad_input: unit radial gradient of a sphere distance") {
  Graph g;
  int x = g.input("x", {1, 3});
  int f = g.sum_all(g.affine(g.l2norm_rows(x), 1, -2.0));
  int gx = grad_input(g, f, x);
  NamedTensors in{{"x", Tensor({1, 3}, {3, 4, 0})}};
  Tensor out = eval_graph(g, {}, in, {gx})[0];
  CHECK_THAT(out.data[0], Catch::Matchers::WithinAbs(0.6, 1e-12));
  CHECK_THAT(out.data[1], Catch::Matchers::WithinAbs(0.8, 1e-12));
  CHECK_THAT(out.data[2], Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("grad_input: random MLP matches finite differences") {
  Graph g;
  MlpSpec spec{3, {16, 16, 16}, 1, Activation::kSoftplus, 100.0, 1, 0.0, "f."};
  MlpGraph mg = build_mlp(g, spec, 4, false);
  int out = g.sum_all(mg.out);
  ParamVector params = init_mlp_params(spec, 11);
  Rng rng(5);
  NamedTensors in;
  in["f.x"] = random_tensor({4, 3}, rng);
  CHECK(max_fd_error(g, out, params, in) < 1e-4);
}

namespace {

// Wraps a (possibly non-scalar) node into a scalar objective with fixed
// random weights so every coordinate participates in the finite-difference
// probe.
int scalarize(Graph& g, int node, Rng& rng) {
  Tensor w = random_tensor(g.node(node).shape, rng, 0.25, 1.0);
  return g.sum_all(g.mul(node, g.constant(std::move(w))));
}

}  // namespace

TEST_CASE("gradients of every node kind match finite differences") {
  // 100 random probes spread over all op kinds; rel. tolerance 1e-4 at f64
  // with central differences of step 1e-5.
  Rng seed_rng(20240811);
  const int kRepeats = 5;
  double worst = 0;
  for (int rep = 0; rep < kRepeats; ++rep) {
    Rng rng(seed_rng.next_u64());
    auto check = [&](auto&& build, NamedTensors in, ParamVector p = {}) {
      Graph g;
      int node = build(g);
      int out = scalarize(g, node, rng);
      worst = std::max(worst, max_fd_error(g, out, p, in));
    };

    NamedTensors xy;
    xy["x"] = random_tensor({3, 4}, rng, 0.2, 1.5);
    xy["y"] = random_tensor({3, 4}, rng, 0.2, 1.5);
    check([](Graph& g) { return g.add(g.input("x", {3, 4}), g.input("y", {3, 4})); }, xy);
    check([](Graph& g) { return g.sub(g.input("x", {3, 4}), g.input("y", {3, 4})); }, xy);
    check([](Graph& g) { return g.mul(g.input("x", {3, 4}), g.input("y", {3, 4})); }, xy);
    check([](Graph& g) { return g.div(g.input("x", {3, 4}), g.input("y", {3, 4})); }, xy);
    check([](Graph& g) { return g.affine(g.input("x", {3, 4}), -1.7, 0.4); }, xy);
    check([](Graph& g) { return g.softplus(g.input("x", {3, 4}), 100.0); }, xy);
    check([](Graph& g) { return g.softplus(g.input("x", {3, 4}), 1.0); }, xy);
    check([](Graph& g) { return g.sigmoid(g.input("x", {3, 4})); }, xy);
    check([](Graph& g) { return g.tanh_(g.input("x", {3, 4})); }, xy);
    check([](Graph& g) { return g.sqrt_(g.input("x", {3, 4})); }, xy);
    check([](Graph& g) { return g.abs_(g.input("x", {3, 4})); }, xy);
    check([](Graph& g) { return g.softmax_rows(g.input("x", {3, 4})); }, xy);
    check([](Graph& g) { return g.sum_all(g.input("x", {3, 4})); }, xy);
    check([](Graph& g) { return g.row_sum(g.input("x", {3, 4})); }, xy);
    check([](Graph& g) { return g.col_sum(g.input("x", {3, 4})); }, xy);
    check([](Graph& g) { return g.concat_cols(g.input("x", {3, 4}), g.input("y", {3, 4})); }, xy);
    check([](Graph& g) { return g.slice_cols(g.input("x", {3, 4}), 1, 2); }, xy);
    check([](Graph& g) { return g.pad_cols(g.input("x", {3, 4}), 2, 9); }, xy);
    check([](Graph& g) { return g.l1norm_rows(g.input("x", {3, 4})); }, xy);
    check([](Graph& g) { return g.l2norm_rows(g.input("x", {3, 4})); }, xy);

    NamedTensors mm;
    mm["a"] = random_tensor({3, 5}, rng);
    mm["b"] = random_tensor({5, 2}, rng);
    check([](Graph& g) { return g.matmul(g.input("a", {3, 5}), g.input("b", {5, 2})); }, mm);
    NamedTensors mmt;
    mmt["a"] = random_tensor({5, 3}, rng);
    mmt["b"] = random_tensor({5, 2}, rng);
    check([](Graph& g) { return g.matmul(g.input("a", {5, 3}), g.input("b", {5, 2}), true); },
          mmt);
    NamedTensors mtt;
    mtt["a"] = random_tensor({3, 5}, rng);
    mtt["b"] = random_tensor({2, 5}, rng);
    check(
        [](Graph& g) {
          return g.matmul(g.input("a", {3, 5}), g.input("b", {2, 5}), false, true);
        },
        mtt);

    NamedTensors rv;
    rv["x"] = random_tensor({3, 4}, rng);
    rv["v"] = random_tensor({1, 4}, rng);
    check([](Graph& g) { return g.add_rowvec(g.input("x", {3, 4}), g.input("v", {1, 4})); }, rv);

    NamedTensors col;
    col["x"] = random_tensor({4, 1}, rng);
    check([](Graph& g) { return g.tile_cols(g.input("x", {4, 1}), 3); }, col);
    NamedTensors row;
    row["x"] = random_tensor({1, 4}, rng);
    check([](Graph& g) { return g.tile_rows(g.input("x", {1, 4}), 3); }, row);
    NamedTensors sc;
    sc["x"] = random_tensor({}, rng, 0.5, 1.5);
    check([](Graph& g) { return g.fill(g.input("x", {}), {2, 3}); }, sc);
  }
  INFO("worst rel. error " << worst);
  CHECK(worst <= 1e-4);
}

TEST_CASE("double backprop through an input-gradient subgraph matches finite differences") {
  // Composite of the kind the distance-field loss uses: the objective mixes
  // f, |f|, and two norms of grad_x f, then is differentiated by parameters.
  Graph g;
  MlpSpec spec{3, {12, 12}, 1, Activation::kSoftplus, 50.0, 1, 0.0, "s."};
  MlpGraph mg = build_mlp(g, spec, 6, false);
  int fsum = g.sum_all(mg.out);
  int grad_x = grad_input(g, fsum, mg.x);  // (6,3) rowwise gradients
  int eik = g.mean_all(g.square(g.affine(g.l2norm_rows(grad_x), 1, -1)));
  int normal_target = g.constant(Tensor::full({6, 3}, 0.4));
  int nrm = g.mean_all(g.l2norm_rows(g.sub(grad_x, normal_target)));
  int pos = g.mean_all(g.abs_(mg.out));
  int out = g.add(pos, g.add(g.affine(nrm, 10, 0), eik));

  ParamVector params = init_mlp_params(spec, 77);
  Rng rng(13);
  NamedTensors in;
  in["s.x"] = random_tensor({6, 3}, rng, -0.8, 0.8);
  CHECK(max_fd_error(g, out, params, in) < 1e-4);

  // And the library's own audit agrees.
  GradCheckReport rep = check_gradients(g, out, params, in, 1e-5, 99, 100);
  CHECK(rep.max_rel_err <= 1e-4);
  CHECK_FALSE(rep.non_finite);
}

TEST_CASE("check_gradients: exact quadratic is tight") {
  Graph g;
  int theta = g.param("theta", {1, 6});
  int out = g.sum_all(g.square(theta));
  ParamVector p;
  Rng rng(3);
  p.add("theta", random_tensor({1, 6}, rng));
  GradCheckReport rep = check_gradients(g, out, p, {}, 1e-5, 1);
  CHECK(rep.max_rel_err <= 1e-8);
  CHECK(rep.coords_checked == 6);
}

TEST_CASE("check_gradients: zero step is a contract error") {
  Graph g;
  int theta = g.param("theta", {1, 2});
  int out = g.sum_all(g.square(theta));
  ParamVector p;
  p.add("theta", Tensor({1, 2}, {1, 1}));
  CHECK_THROWS_AS(check_gradients(g, out, p, {}, 0.0, 1), ContractError);
}

TEST_CASE("gradient node is usable as an ordinary downstream value") {
  // grad of f(x)=||x||^2 is 2x; feeding it onward through another norm gives
  // 2||x||, and differentiating that again is well-defined.
  Graph g;
  int x = g.input("x", {1, 3});
  int f = g.sum_all(g.square(x));
  int gx = grad_input(g, f, x);
  int h = g.sum_all(g.l2norm_rows(gx));
  NamedTensors in{{"x", Tensor({1, 3}, {1, 2, 2})}};
  CHECK_THAT(eval_graph(g, {}, in, {h})[0].scalar_value(),
             Catch::Matchers::WithinAbs(6.0, 1e-12));
  int ggx = grad_input(g, h, x);
  Tensor second = eval_graph(g, {}, in, {ggx})[0];
  // d(2||x||)/dx = 2 x/||x||
  CHECK_THAT(second.data[0], Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
  CHECK_THAT(second.data[1], Catch::Matchers::WithinAbs(4.0 / 3.0, 1e-12));
  CHECK_THAT(second.data[2], Catch::Matchers::WithinAbs(4.0 / 3.0, 1e-12));
}

TEST_CASE("adam: converges on a convex bowl and is deterministic") {
  auto run = [] {
    Graph g;
    int theta = g.param("t", {1, 4});
    int target = g.constant(Tensor({1, 4}, {1, -2, 3, 0.5}));
    int loss = g.sum_all(g.square(g.sub(theta, target)));
    ParamVector p;
    p.add("t", Tensor::zeros({1, 4}));
    Adam opt(0.05);
    for (int i = 0; i < 400; ++i) {
      ParamVector grads = eval_param_gradients(g, loss, {theta}, p, {});
      opt.step(p, grads);
    }
    return p;
  };
  ParamVector a = run(), b = run();
  CHECK_THAT(a.find("t")->data[1], Catch::Matchers::WithinAbs(-2.0, 1e-3));
  CHECK(a.find("t")->data == b.find("t")->data);
}
