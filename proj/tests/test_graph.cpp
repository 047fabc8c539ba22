#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cometa/graph.hpp"
#include "support/finite_diff.hpp"

using cometa::Shape;
using cometa::Tensor;
namespace ad = cometa::ad;

TEST(GraphForward, SigmoidOfZero) {
  ad::Graph g;
  EXPECT_DOUBLE_EQ(ad::sigmoid(g.constant(Tensor::scalar(0.0))).value()[0], 0.5);
}

TEST(GraphForward, Relu) {
  ad::Graph g;
  EXPECT_EQ(ad::relu(g.constant(Tensor::row({-1.0, 2.0}))).value(), Tensor::row({0.0, 2.0}));
}

TEST(GraphForward, MatMulShape) {
  ad::Graph g;
  auto y = ad::matmul(g.constant(Tensor(2, 3, 1.0)), g.constant(Tensor(3, 1, 1.0)));
  EXPECT_EQ(y.shape(), (Shape{2, 1}));
  EXPECT_EQ(y.value(), Tensor(2, 1, 3.0));
}

TEST(GraphForward, ShapeMismatchNamesNode) {
  ad::Graph g;
  auto a = g.constant(Tensor(2, 3));
  auto b = g.constant(Tensor(2, 3));
  try {
    ad::matmul(a, b);
    FAIL() << "expected a shape error";
  } catch (const cometa::ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("node 2 (matmul)"), std::string::npos) << e.what();
  }
}

TEST(GraphForward, FeedsAndMissingFeed) {
  ad::Graph g;
  auto x = g.input({1, 2}, "x");
  auto y = ad::sum(ad::mul(x, g.constant(Tensor::row({2.0, 3.0}))));
  EXPECT_THROW(g.forward(y, {}), cometa::MissingFeedError);
  EXPECT_THROW(g.forward(y, {{x.id(), Tensor(2, 1)}}), cometa::ShapeError);
  EXPECT_DOUBLE_EQ(g.forward(y, {{x.id(), Tensor::row({1.0, 1.0})}})[0], 5.0);
  EXPECT_DOUBLE_EQ(g.forward(y, {{x.id(), Tensor::row({1.0, -1.0})}})[0], -1.0);
}

TEST(GraphForward, Deterministic) {
  std::mt19937_64 rng(3);
  const Tensor a = oracle::random_tensor(rng, 5, 7), b = oracle::random_tensor(rng, 7, 3);
  auto run = [&] {
    ad::Graph g;
    return ad::sigmoid(ad::matmul(g.constant(a), g.constant(b))).value();
  };
  EXPECT_TRUE(cometa::bitwise_equal(run(), run()));
}

TEST(GraphBackward, SigmoidDerivativeAtZero) {
  ad::Graph g;
  auto x = g.param(Tensor::scalar(0.0));
  auto grads = g.backward(ad::sigmoid(x));
  EXPECT_DOUBLE_EQ(grads.at(x.id())[0], 0.25);
}

TEST(GraphBackward, MeanGradientIsOneOverN) {
  ad::Graph g;
  auto x = g.param(Tensor(3, 4, 2.0));
  auto grads = g.backward(ad::mean(x));
  for (double v : grads.at(x.id()).values()) EXPECT_DOUBLE_EQ(v, 1.0 / 12.0);
}

TEST(GraphBackward, NonScalarLossRejected) {
  ad::Graph g;
  auto x = g.param(Tensor(2, 2, 1.0));
  EXPECT_THROW(g.backward(ad::relu(x)), cometa::ShapeError);
}

TEST(GraphBackward, UnreachableParameterGetsZero) {
  ad::Graph g;
  auto x = g.param(Tensor::row({1.0, 2.0}));
  auto unused = g.param(Tensor(2, 2, 5.0));
  auto grads = g.backward(ad::sum(x));
  ASSERT_EQ(grads.size(), 2u);
  EXPECT_EQ(grads.at(unused.id()), Tensor(2, 2, 0.0));
  EXPECT_EQ(grads.at(x.id()), Tensor::row({1.0, 1.0}));
}

TEST(GraphBackward, ChainRuleAdditivity) {
  // y = sum(x * x) + sum(3 x): dy/dx = 2x + 3, via two consumers of x.
  ad::Graph g;
  auto x = g.param(Tensor::row({1.0, -2.0, 0.5}));
  auto y = ad::add(ad::sum(ad::mul(x, x)), ad::sum(ad::scale(x, 3.0)));
  auto grads = g.backward(y);
  EXPECT_EQ(grads.at(x.id()), Tensor::row({5.0, -1.0, 4.0}));
}

namespace {

using Builder = std::function<ad::Var(ad::Graph&, const std::vector<ad::Var>&)>;

// loss = sum(out * W) for a fixed random W; compares analytic and numeric
// gradients for every input.
double worst_error(const Builder& build, const std::vector<Tensor>& inputs, const Tensor& weight) {
  auto loss_at = [&](const std::vector<Tensor>& xs) {
    ad::Graph g;
    std::vector<ad::Var> vars;
    for (const Tensor& x : xs) vars.push_back(g.param(x));
    return ad::sum(ad::mul(build(g, vars), g.constant(weight))).value()[0];
  };
  ad::Graph g;
  std::vector<ad::Var> vars;
  for (const Tensor& x : inputs) vars.push_back(g.param(x));
  const ad::Var loss = ad::sum(ad::mul(build(g, vars), g.constant(weight)));
  const std::vector<ad::Var> grads = g.grad(loss, vars, false);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const Tensor& xk) {
      std::vector<Tensor> xs = inputs;
      xs[k] = xk;
      return loss_at(xs);
    };
    worst = std::max(worst, oracle::relative_error(grads[k].value(), oracle::numeric_gradient(f, inputs[k])));
  }
  return worst;
}

struct OpCase {
  const char* name;
  Builder build;
  std::function<std::vector<Shape>(std::size_t, std::size_t, std::size_t)> shapes;
  std::function<Shape(std::size_t, std::size_t, std::size_t)> out;
};

std::vector<OpCase> op_cases() {
  using V = std::vector<ad::Var>;
  using S = std::vector<Shape>;
  auto same = [](std::size_t r, std::size_t c, std::size_t) { return S{{r, c}}; };
  auto out_rc = [](std::size_t r, std::size_t c, std::size_t) { return Shape{r, c}; };
  auto scalar = [](std::size_t, std::size_t, std::size_t) { return Shape{1, 1}; };
  auto pooling = std::make_shared<ad::Pooling>();
  pooling->add_single(1);
  const std::size_t mixed[] = {0, 1, 1};
  pooling->add_mean(mixed);
  pooling->add_mean({});
  std::shared_ptr<const ad::Pooling> pool = pooling;
  return {
      {"matmul", [](ad::Graph&, const V& v) { return ad::matmul(v[0], v[1]); },
       [](std::size_t r, std::size_t c, std::size_t k) { return S{{r, k}, {k, c}}; }, out_rc},
      {"transpose", [](ad::Graph&, const V& v) { return ad::transpose(v[0]); }, same,
       [](std::size_t r, std::size_t c, std::size_t) { return Shape{c, r}; }},
      {"add", [](ad::Graph&, const V& v) { return ad::add(v[0], v[1]); },
       [](std::size_t r, std::size_t c, std::size_t) { return S{{r, c}, {r, c}}; }, out_rc},
      {"add_row_broadcast", [](ad::Graph&, const V& v) { return ad::add(v[0], v[1]); },
       [](std::size_t r, std::size_t c, std::size_t) { return S{{r, c}, {1, c}}; }, out_rc},
      {"mul", [](ad::Graph&, const V& v) { return ad::mul(v[0], v[1]); },
       [](std::size_t r, std::size_t c, std::size_t) { return S{{r, c}, {r, c}}; }, out_rc},
      {"mul_scalar_broadcast", [](ad::Graph&, const V& v) { return ad::mul(v[0], v[1]); },
       [](std::size_t r, std::size_t c, std::size_t) { return S{{r, c}, {1, 1}}; }, out_rc},
      {"scale", [](ad::Graph&, const V& v) { return ad::scale(v[0], -1.7, 0.3); }, same, out_rc},
      {"concat", [](ad::Graph&, const V& v) { return ad::concat({v[0], v[1]}); },
       [](std::size_t r, std::size_t c, std::size_t k) { return S{{r, c}, {r, k}}; },
       [](std::size_t r, std::size_t c, std::size_t k) { return Shape{r, c + k}; }},
      {"slice", [](ad::Graph&, const V& v) { return ad::slice_cols(v[0], 1, v[0].shape().cols - 1); },
       [](std::size_t r, std::size_t c, std::size_t) { return S{{r, c + 2}}; }, out_rc},
      {"relu", [](ad::Graph&, const V& v) { return ad::relu(v[0]); }, same, out_rc},
      {"sigmoid", [](ad::Graph&, const V& v) { return ad::sigmoid(v[0]); }, same, out_rc},
      {"mean", [](ad::Graph&, const V& v) { return ad::mean(v[0]); }, same, scalar},
      {"sum_rows", [](ad::Graph&, const V& v) { return ad::sum_rows(v[0]); }, same,
       [](std::size_t, std::size_t c, std::size_t) { return Shape{1, c}; }},
      {"broadcast", [](ad::Graph&, const V& v) { return ad::broadcast(v[0], {5, v[0].shape().cols}); },
       [](std::size_t, std::size_t c, std::size_t) { return S{{1, c}}; },
       [](std::size_t, std::size_t c, std::size_t) { return Shape{5, c}; }},
      {"clamp", [](ad::Graph&, const V& v) { return ad::clamp(v[0], -0.5, 0.5); }, same, out_rc},
      {"reciprocal", [](ad::Graph& g, const V& v) { return ad::reciprocal(ad::add(ad::mul(v[0], v[0]), g.constant(Tensor::scalar(1.0)))); },
       same, out_rc},
      {"pool", [pool](ad::Graph&, const V& v) { return ad::pool(v[0], pool); },
       [](std::size_t, std::size_t c, std::size_t) { return S{{3, c}}; },
       [](std::size_t, std::size_t c, std::size_t) { return Shape{3, c}; }},
      {"pool_t", [pool](ad::Graph&, const V& v) { return ad::pool_t(v[0], pool, 4); },
       [](std::size_t, std::size_t c, std::size_t) { return S{{3, c}}; },
       [](std::size_t, std::size_t c, std::size_t) { return Shape{4, c}; }},
      {"bce", [](ad::Graph&, const V& v) {
         std::vector<double> y(v[0].shape().rows);
         for (std::size_t k = 0; k < y.size(); ++k) y[k] = k % 2 ? 1.0 : 0.0;
         return ad::bce(ad::sigmoid(v[0]), y);
       },
       [](std::size_t r, std::size_t, std::size_t) { return S{{r, 1}}; }, scalar},
  };
}

}  // namespace

TEST(GraphGradCheck, EveryOpMatchesCentralDifferences) {
  for (const OpCase& op : op_cases()) {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<std::size_t> dim(1, 8);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t r = dim(rng), c = dim(rng), k = dim(rng);
      std::vector<Tensor> inputs;
      for (Shape s : op.shapes(r, c, k)) inputs.push_back(oracle::random_tensor(rng, s.rows, s.cols));
      const Shape o = op.out(r, c, k);
      worst = std::max(worst, worst_error(op.build, inputs, oracle::random_tensor(rng, o.rows, o.cols)));
    }
    EXPECT_LT(worst, 1e-4) << op.name;
  }
}

TEST(GraphGradCheck, SecondOrderThroughCreateGraph) {
  // L(x) = sum(sigmoid(x W)^2); check d/dx of (g . c) where g = dL/dW built with create_graph.
  std::mt19937_64 rng(5);
  const Tensor w = oracle::random_tensor(rng, 3, 2), c = oracle::random_tensor(rng, 3, 2);
  const Tensor x0 = oracle::random_tensor(rng, 4, 3);
  auto outer = [&](const Tensor& x, Tensor* grad_out) {
    ad::Graph g;
    auto xv = g.param(x);
    auto wv = g.param(w);
    auto s = ad::sigmoid(ad::matmul(xv, wv));
    auto loss = ad::sum(ad::mul(s, s));
    auto gw = g.grad(loss, std::vector<ad::Var>{wv}, true)[0];
    auto inner = ad::sum(ad::mul(gw, g.constant(c)));
    if (grad_out) *grad_out = g.grad(inner, std::vector<ad::Var>{xv}, false)[0].value();
    return inner.value()[0];
  };
  Tensor analytic;
  outer(x0, &analytic);
  const Tensor numeric = oracle::numeric_gradient([&](const Tensor& x) { return outer(x, nullptr); }, x0);
  EXPECT_LT(oracle::relative_error(analytic, numeric), 1e-6);
}

TEST(GraphGradCheck, WithoutCreateGraphGradientsAreConstants) {
  ad::Graph g;
  auto x = g.param(Tensor::row({0.3, -0.2}));
  auto loss = ad::sum(ad::mul(x, x));
  auto gx = g.grad(loss, std::vector<ad::Var>{x}, false)[0];
  EXPECT_FALSE(gx.requires_grad());
  auto gx2 = g.grad(loss, std::vector<ad::Var>{x}, true)[0];
  EXPECT_TRUE(gx2.requires_grad());
}
