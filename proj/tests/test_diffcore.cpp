#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "uadlab/adam.hpp"
#include "uadlab/autodiff.hpp"
#include "uadlab/gradcheck.hpp"
#include "uadlab/rng.hpp"
#include "uadlab/tensor.hpp"

using namespace uadlab;
using namespace uadlab::diff;

namespace {

Tensor random_tensor(Shape shape, RandomStream& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Weighted sum with fixed random weights so every output entry gets a
// distinct upstream gradient.
Var weighted_sum(Tape& tape, Var y, std::uint64_t seed) {
  RandomStream rng(seed);
  return sum(mul(y, tape.constant(random_tensor(y.shape(), rng, 0.5, 1.5))));
}

}  // namespace

TEST(Primitives, MatmulExample) {
  Tape t;
  Var a = t.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  Var b = t.constant(Tensor::matrix(2, 1, {1, 1}));
  Var c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(c.value()[0], 3.0);
  EXPECT_DOUBLE_EQ(c.value()[1], 7.0);
}

TEST(Primitives, ReluAndMeanExamples) {
  Tape t;
  Var r = relu(t.constant(Tensor::vector({-1, 0, 2})));
  EXPECT_EQ(r.value().storage(), (std::vector<double>{0, 0, 2}));
  EXPECT_DOUBLE_EQ(mean(t.constant(Tensor::vector({2, 4, 6}))).value().item(), 4.0);
}

TEST(Primitives, ShapeMismatchNamesPrimitiveAndShapes) {
  Tape t;
  Var a = t.constant(Tensor(Shape{2, 3}));
  Var b = t.constant(Tensor(Shape{2, 3}));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos);
  }
  Var c = t.constant(Tensor(Shape{4}));
  EXPECT_THROW(add(a, c), ShapeError);
}

TEST(Primitives, LogOfNonPositiveIsDomainError) {
  Tape t;
  EXPECT_THROW(diff::log(t.constant(Tensor::vector({1.0, 0.0}))), DomainError);
  EXPECT_THROW(diff::log(t.constant(Tensor::vector({-1.0}))), DomainError);
}

TEST(Primitives, TrailingBroadcast) {
  Tape t;
  Var x = t.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Var b = t.constant(Tensor::vector({10, 20, 30}));
  EXPECT_EQ(add(x, b).value().storage(), (std::vector<double>{11, 22, 33, 14, 25, 36}));
  EXPECT_EQ(broadcast(b, {2, 3}).value().storage(),
            (std::vector<double>{10, 20, 30, 10, 20, 30}));
}

TEST(Primitives, SliceAndSumLast) {
  Tape t;
  Var x = t.constant(Tensor::matrix(2, 4, {1, 2, 3, 4, 5, 6, 7, 8}));
  EXPECT_EQ(slice(x, 1, 1, 3).value().storage(), (std::vector<double>{2, 3, 6, 7}));
  EXPECT_EQ(sum_last(x).value().storage(), (std::vector<double>{10, 26}));
  EXPECT_THROW(slice(x, 1, 3, 5), ShapeError);
}

TEST(Backward, Examples) {
  {
    Tape t;
    Var w = t.parameter(Tensor::vector({1, 2}));
    Gradients g = backward(t, sum(square(w)));
    EXPECT_EQ(g.at(w).storage(), (std::vector<double>{2, 4}));
  }
  {
    Tape t;
    Var w = t.parameter(Tensor::vector({1, 2, 3, 4}));
    Gradients g = backward(t, mean(w));
    EXPECT_EQ(g.at(w).storage(), (std::vector<double>(4, 0.25)));
  }
  {
    Tape t;
    Var w = t.parameter(Tensor::vector({0.3}));
    Gradients g = backward(t, sum(diff::log(diff::exp(w))));
    EXPECT_NEAR(g.at(w)[0], 1.0, 1e-15);
  }
}

TEST(Backward, NonScalarLossRejected) {
  Tape t;
  Var w = t.parameter(Tensor::vector({1, 2}));
  EXPECT_THROW(backward(t, square(w)), ShapeError);
}

TEST(Backward, DetachedAndUnreachableNodesAreAbsent) {
  Tape t;
  Var w = t.parameter(Tensor::vector({1, 2}));
  Var unused = t.parameter(Tensor::vector({5}));
  Var c = t.constant(Tensor::vector({3, 4}));
  Gradients g = backward(t, sum(mul(w, c)));
  EXPECT_TRUE(g.has(w));
  EXPECT_FALSE(g.has(c));
  EXPECT_FALSE(g.has(unused));
  EXPECT_EQ(g.find(unused), nullptr);
}

TEST(Backward, SharedNodeAccumulates) {
  Tape t;
  Var w = t.parameter(Tensor::vector({3}));
  Gradients g = backward(t, sum(mul(w, w)));
  EXPECT_DOUBLE_EQ(g.at(w)[0], 6.0);
}

// Every primitive against central differences, 100 random trials each.
TEST(Backward, PrimitivesMatchFiniteDifferences) {
  using Builder = std::function<Var(Tape&, std::span<const Var>)>;
  struct Case {
    std::string name;
    std::vector<Shape> shapes;
    Builder build;
    bool positive = false;
  };
  const std::vector<Case> cases = {
      {"matmul", {{3, 4}, {4, 2}}, [](Tape&, auto p) { return matmul(p[0], p[1]); }},
      {"add", {{3, 4}, {4}}, [](Tape&, auto p) { return add(p[0], p[1]); }},
      {"sub", {{3, 4}, {3, 4}}, [](Tape&, auto p) { return sub(p[0], p[1]); }},
      {"sub_scalar_left", {{1}, {3, 2}}, [](Tape&, auto p) { return sub(p[0], p[1]); }},
      {"mul", {{2, 5}, {5}}, [](Tape&, auto p) { return mul(p[0], p[1]); }},
      {"scale", {{6}}, [](Tape&, auto p) { return scale(p[0], -1.7); }},
      {"exp", {{6}}, [](Tape&, auto p) { return diff::exp(p[0]); }},
      {"log", {{6}}, [](Tape&, auto p) { return diff::log(p[0]); }, true},
      {"tanh", {{6}}, [](Tape&, auto p) { return diff::tanh(p[0]); }},
      {"relu", {{6}}, [](Tape&, auto p) { return relu(p[0]); }},
      {"sigmoid", {{6}}, [](Tape&, auto p) { return sigmoid(p[0]); }},
      {"softplus", {{6}}, [](Tape&, auto p) { return softplus(p[0]); }},
      {"square", {{6}}, [](Tape&, auto p) { return square(p[0]); }},
      {"sum", {{2, 3}}, [](Tape&, auto p) { return sum(p[0]); }},
      {"mean", {{2, 3}}, [](Tape&, auto p) { return mean(p[0]); }},
      {"sum_last", {{3, 4}}, [](Tape&, auto p) { return sum_last(p[0]); }},
      {"broadcast", {{4}}, [](Tape&, auto p) { return broadcast(p[0], {3, 4}); }},
      {"reshape", {{2, 6}}, [](Tape&, auto p) { return reshape(p[0], {3, 4}); }},
      {"slice", {{3, 6}}, [](Tape&, auto p) { return slice(p[0], 1, 2, 5); }},
  };
  RandomStream rng(2024);
  for (const Case& c : cases) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<Tensor> params;
      for (const Shape& s : c.shapes) {
        Tensor p = random_tensor(s, rng);
        for (double& v : p.data()) {
          if (c.positive) v = std::abs(v) + 0.1;
          // Keep relu away from its kink.
          if (c.name == "relu" && std::abs(v) < 1e-3) v = 0.5;
        }
        params.push_back(std::move(p));
      }
      const std::uint64_t wseed = 77 + trial;
      LossFn fn = [&](Tape& t, std::span<const Var> p) {
        return weighted_sum(t, c.build(t, p), wseed);
      };
      worst = std::max(worst, grad_check(fn, params, 1e-5));
    }
    EXPECT_LT(worst, 1e-6) << c.name;
  }
}

TEST(Backward, LinearityOverSummedLosses) {
  RandomStream rng(9);
  const Tensor w0 = random_tensor({3, 3}, rng);
  const Tensor x0 = random_tensor({2, 3}, rng);
  auto loss1 = [&](Var w, Var x) { return sum(diff::tanh(matmul(x, w))); };
  auto loss2 = [&](Var w, Var) { return mean(diff::exp(w)); };

  Tape ta;
  Var wa = ta.parameter(w0);
  Var xa = ta.constant(x0);
  Tensor g_sum = backward(ta, add(loss1(wa, xa), loss2(wa, xa))).at(wa);

  Tape tb;
  Var wb = tb.parameter(w0);
  Tensor g1 = backward(tb, loss1(wb, tb.constant(x0))).at(wb);
  Tape tc;
  Var wc = tc.parameter(w0);
  Tensor g2 = backward(tc, loss2(wc, tc.constant(x0))).at(wc);

  for (std::size_t i = 0; i < g_sum.size(); ++i) EXPECT_NEAR(g_sum[i], g1[i] + g2[i], 1e-12);
}

TEST(GradCheck, QuadraticIsExact) {
  LossFn fn = [](Tape& t, std::span<const Var> p) {
    return sum(mul(square(p[0]), t.constant(Tensor::vector({1.0, 2.0, 3.0}))));
  };
  EXPECT_LT(grad_check(fn, {Tensor::vector({0.5, -1.0, 2.0})}, 1e-5), 1e-8);
}

TEST(GradCheck, RejectsNondeterministicLoss) {
  int calls = 0;
  LossFn fn = [&](Tape& t, std::span<const Var> p) {
    ++calls;
    return add(sum(p[0]), static_cast<double>(calls));
  };
  EXPECT_THROW(grad_check(fn, {Tensor::vector({1.0})}, 1e-5), Error);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<Tensor> params{Tensor::vector({1.0})};
  std::vector<Tensor> grads{Tensor::vector({5.0})};
  AdamState state(AdamConfig{.lr = 0.1}, params);
  adam_step(params, grads, state);
  // m_hat = g, v_hat = g^2 after bias correction: step = lr * g / (|g| + eps).
  EXPECT_NEAR(params[0][0] - 1.0, -0.1 * 5.0 / (5.0 + 1e-8), 1e-15);
  EXPECT_EQ(state.step(), 1u);
}

TEST(Adam, ZeroGradientLeavesParamsButCountsStep) {
  std::vector<Tensor> params{Tensor::vector({1.0, -2.0})};
  std::vector<Tensor> grads{Tensor::vector({0.0, 0.0})};
  AdamState state(AdamConfig{}, params);
  adam_step(params, grads, state);
  EXPECT_EQ(params[0].storage(), (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(state.step(), 1u);
}

TEST(Adam, ConstantGradientStepsDoNotGrow) {
  std::vector<Tensor> params{Tensor::vector({0.0})};
  std::vector<Tensor> grads{Tensor::vector({0.3})};
  AdamState state(AdamConfig{.lr = 0.01}, params);
  adam_step(params, grads, state);
  const double d1 = std::abs(params[0][0]);
  const double before = params[0][0];
  adam_step(params, grads, state);
  const double d2 = std::abs(params[0][0] - before);
  EXPECT_LE(d2, d1 + 1e-12);
}

TEST(Adam, ShapeMismatchAndDeterminism) {
  std::vector<Tensor> params{Tensor::vector({1.0, 2.0})};
  AdamState state(AdamConfig{}, params);
  std::vector<Tensor> bad{Tensor::vector({1.0})};
  EXPECT_THROW(adam_step(params, bad, state), ShapeError);

  RandomStream rng(5);
  std::vector<Tensor> g{random_tensor({2}, rng)};
  std::vector<Tensor> p1 = params, p2 = params;
  AdamState s1(AdamConfig{}, p1), s2(AdamConfig{}, p2);
  for (int i = 0; i < 10; ++i) {
    adam_step(p1, g, s1);
    adam_step(p2, g, s2);
  }
  EXPECT_EQ(p1, p2);
}

TEST(TensorIo, RoundTripIsBitExact) {
  RandomStream rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Shape shape;
    const std::size_t rank = rng.below(4);
    for (std::size_t i = 0; i < rank; ++i) shape.push_back(1 + rng.below(5));
    Tensor t = random_tensor(shape, rng, -1e3, 1e3);
    const std::string bytes = encode_tensor(t);
    EXPECT_EQ(decode_tensor(bytes), t);
    EXPECT_EQ(encode_tensor(decode_tensor(bytes)), bytes);
  }
}

TEST(TensorIo, LayoutAndCorruption) {
  const std::string bytes = encode_tensor(Tensor::vector({1.0}));
  ASSERT_EQ(bytes.size(), 4u + 1 + 1 + 8 + 8);
  EXPECT_EQ(bytes.substr(0, 4), "TNSR");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 1u);  // extent, little-endian
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_tensor(bad), DataError);
  bad = bytes;
  bad[4] = 9;
  EXPECT_THROW(decode_tensor(bad), DataError);
  EXPECT_THROW(decode_tensor(bytes.substr(0, bytes.size() - 1)), DataError);
}

TEST(Rng, SubstreamsAreIndependent) {
  SeededRng a(42), b(42), c(43);
  RandomStream init_a = a.stream("init");
  RandomStream shuffle_b = b.stream("shuffle");
  for (int i = 0; i < 500; ++i) shuffle_b.next_u64();
  RandomStream init_b = b.stream("init");
  for (int i = 0; i < 100; ++i) EXPECT_EQ(init_a.next_u64(), init_b.next_u64());

  RandomStream x = a.stream("init"), y = c.stream("init");
  int equal = 0;
  for (int i = 0; i < 1000; ++i) equal += x.next_u64() == y.next_u64();
  EXPECT_EQ(equal, 0);
}

TEST(Rng, NormalMoments) {
  RandomStream rng(3);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.01);
}
