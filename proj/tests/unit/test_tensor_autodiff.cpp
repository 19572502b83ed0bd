#include <gtest/gtest.h>

#include <cmath>

#include "iconify/grad_check.hpp"
#include "iconify/ops.hpp"
#include "iconify/oracles.hpp"
#include "iconify/tape.hpp"
#include "naive.hpp"

using namespace iconify;

namespace {

using D = Var<double>;

/// Checks every coordinate of every input of `f` against test-local central differences.
void expect_matches_fd(const std::function<D(Tape<double>&, std::span<const D>)>& f,
                       const std::vector<Tensor<double>>& points, double tol = 1e-6) {
  Tape<double> tape;
  std::vector<D> leaves;
  for (const auto& p : points) leaves.push_back(tape.leaf(p));
  const D root = f(tape, leaves);
  const auto grads = tape.backward(root);
  for (std::size_t t = 0; t < points.size(); ++t) {
    auto eval = [&](const Tensor<double>& probe) {
      Tape<double> tp;
      std::vector<D> in;
      for (std::size_t s = 0; s < points.size(); ++s) in.push_back(tp.constant(s == t ? probe : points[s]));
      return f(tp, in).value().item();
    };
    const Tensor<double> numeric = naive::central_difference(eval, points[t]);
    const Tensor<double>& analytic = grads.at(leaves[t]);
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-8});
      EXPECT_LT(std::abs(analytic[i] - numeric[i]) / denom, tol) << "input " << t << " coord " << i;
    }
  }
}

/// Projects a tensor-valued op to a scalar with fixed random weights.
D project(Tape<double>& tape, const D& out, std::uint64_t seed) {
  return sum(mul(out, tape.constant(naive::randn(out.shape(), seed))));
}

}  // namespace

TEST(Tensor, ValueCountMustMatchShape) {
  EXPECT_THROW(Tensor<float>(Shape{2, 3}, std::vector<float>(5)), ShapeError);
  EXPECT_EQ(Tensor<float>(Shape{2, 3}).size(), 6u);
}

TEST(Tensor, ItemRequiresSingleElement) {
  EXPECT_DOUBLE_EQ(Tensor<double>::scalar(2.5).item(), 2.5);
  EXPECT_THROW(Tensor<double>(Shape{2}).item(), ShapeError);
}

TEST(Tensor, StackBatchChecksShapes) {
  std::vector<Tensor<float>> items{Tensor<float>(Shape{1, 3, 4, 4}, 1.f), Tensor<float>(Shape{1, 3, 4, 4}, 2.f)};
  const auto b = stack_batch<float>(items);
  EXPECT_EQ(b.shape(), (Shape{2, 3, 4, 4}));
  EXPECT_EQ(b.sample(1), items[1]);
  items.push_back(Tensor<float>(Shape{1, 3, 5, 4}));
  EXPECT_THROW(stack_batch<float>(items), ShapeError);
}

TEST(Tape, NodeIdsAreTopologicallyOrdered) {
  Tape<double> tape;
  const D a = tape.leaf(naive::randn({1, 2, 5, 5}, 1));
  const D w = tape.leaf(naive::randn({3, 2, 3, 3}, 2));
  const D y = activation(conv2d(a, w, std::optional<D>{}, 1, Padding::reflect(1)), Activation::relu());
  const D l = mean(y);
  for (NodeId id = 0; id < tape.size(); ++id)
    for (NodeId p : tape.parents(id)) EXPECT_LT(p, id);
  EXPECT_EQ(l.id(), tape.size() - 1);
}

TEST(Tape, ConstantsReceiveNoGradient) {
  Tape<double> tape;
  const D c = tape.constant(Tensor<double>(Shape{3}, 2.0));
  const D x = tape.leaf(Tensor<double>(Shape{3}, 1.0));
  const D cc = mul(c, c);
  EXPECT_FALSE(cc.requires_grad());
  const auto g = tape.backward(sum(mul(cc, x)));
  EXPECT_FALSE(g.contains(c));
  EXPECT_FALSE(g.contains(cc));
  ASSERT_TRUE(g.contains(x));
  for (double v : g.at(x).data()) EXPECT_DOUBLE_EQ(v, 4.0);
}

TEST(Tape, GradientsAccumulateOverFanOut) {
  Tape<double> tape;
  const D x = tape.leaf(Tensor<double>(Shape{2}, std::vector<double>{3.0, -1.0}));
  const auto g = tape.backward(sum(add(mul(x, x), scale(x, 4.0))));
  EXPECT_DOUBLE_EQ(g.at(x)[0], 10.0);
  EXPECT_DOUBLE_EQ(g.at(x)[1], 2.0);
}

TEST(Tape, BackwardRequiresScalarRoot) {
  Tape<double> tape;
  const D x = tape.leaf(Tensor<double>(Shape{2}, 1.0));
  EXPECT_THROW(tape.backward(x), ShapeError);
}

TEST(Tape, NonFiniteValuesAreRejected) {
  Tape<double> tape;
  Tensor<double> bad(Shape{2}, 1.0);
  bad[1] = std::nan("");
  EXPECT_THROW(tape.leaf(bad), NonFiniteError);
  const D big = tape.leaf(Tensor<double>(Shape{1}, 1e200));
  EXPECT_THROW(mul(big, big), NonFiniteError);
}

TEST(Tape, NonFiniteMessageNamesScope) {
  Tape<double> tape;
  const D big = tape.leaf(Tensor<double>(Shape{1}, 1e200));
  Tape<double>::Scope scope(tape, "cycle");
  try {
    mul(big, big);
    FAIL();
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("'cycle'"), std::string::npos) << e.what();
  }
}

TEST(Tape, ScopesLabelNodes) {
  Tape<double> tape;
  const D x = tape.leaf(Tensor<double>(Shape{2}, 1.0));
  {
    Tape<double>::Scope s(tape, "gan");
    sum(x);
    {
      Tape<double>::Scope inner(tape, "cycle");
      mean(x);
    }
    mean(x);
  }
  const auto counts = tape.scope_counts();
  EXPECT_EQ(counts.at(""), 1u);
  EXPECT_EQ(counts.at("gan"), 2u);
  EXPECT_EQ(counts.at("cycle"), 1u);
}

TEST(Ops, MixingTapesIsRejected) {
  Tape<double> t1, t2;
  const D a = t1.leaf(Tensor<double>(Shape{2}, 1.0));
  const D b = t2.leaf(Tensor<double>(Shape{2}, 1.0));
  EXPECT_THROW(add(a, b), std::invalid_argument);
}

TEST(Ops, ElementwiseShapesMustMatch) {
  Tape<double> tape;
  const D a = tape.leaf(Tensor<double>(Shape{2, 3}));
  const D b = tape.leaf(Tensor<double>(Shape{3, 2}));
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(l1_loss(a, b), ShapeError);
}

TEST(Ops, LossValues) {
  Tape<double> tape;
  const D a = tape.constant(Tensor<double>(Shape{4}, std::vector<double>{1, 2, 3, 4}));
  const D b = tape.constant(Tensor<double>(Shape{4}, std::vector<double>{0, 2, 5, 4}));
  EXPECT_DOUBLE_EQ(l1_loss(a, b).value().item(), 0.75);
  EXPECT_DOUBLE_EQ(mse_loss(a, b).value().item(), 1.25);
  EXPECT_DOUBLE_EQ(mean(a).value().item(), 2.5);
  EXPECT_DOUBLE_EQ(reduce_loss(a, b, LossKind::l1).value().item(), 0.75);
}

TEST(Ops, ActivationValues) {
  Tape<double> tape;
  const D x = tape.constant(Tensor<double>(Shape{3}, std::vector<double>{-2.0, 0.5, 3.0}));
  const auto r = activation(x, Activation::relu()).value();
  const auto l = activation(x, Activation::leaky_relu(0.2)).value();
  const auto t = activation(x, Activation::tanh()).value();
  const auto s = activation(x, Activation::sigmoid()).value();
  EXPECT_EQ(r.values(), (std::vector<double>{0.0, 0.5, 3.0}));
  EXPECT_DOUBLE_EQ(l[0], -0.4);
  EXPECT_DOUBLE_EQ(t[2], std::tanh(3.0));
  EXPECT_DOUBLE_EQ(s[1], 1.0 / (1.0 + std::exp(-0.5)));
}

TEST(Ops, ReflectPadMirrorsWithoutEdgeRepeat) {
  Tape<double> tape;
  const D x = tape.constant(Tensor<double>(Shape{1, 1, 1, 4}, std::vector<double>{1, 2, 3, 4}));
  EXPECT_THROW(pad_reflect(x, 1), ShapeError);  // height 1 cannot reflect
  const D y = tape.constant(Tensor<double>(Shape{1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9}));
  const auto p = pad_reflect(y, 2).value();
  ASSERT_EQ(p.shape(), (Shape{1, 1, 7, 7}));
  // Middle row of the 3x3 is 4 5 6; padded: 6 5 4 5 6 5 4.
  const std::vector<double> row{6, 5, 4, 5, 6, 5, 4};
  for (std::size_t j = 0; j < 7; ++j) EXPECT_EQ(p.at(0, 0, 3, j), row[j]);
  EXPECT_EQ(p.at(0, 0, 0, 0), 9.0);
}

TEST(Ops, InstanceNormStandardizesEachPlane) {
  Tape<double> tape;
  const D x = tape.constant(naive::randn({2, 3, 6, 5}, 7));
  const D g = tape.constant(Tensor<double>(Shape{3}, 1.0));
  const D b = tape.constant(Tensor<double>(Shape{3}, 0.0));
  const auto y = instance_norm(x, g, b, 0.0).value();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c) {
      double m = 0, v = 0;
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 5; ++j) m += y.at(n, c, i, j);
      m /= 30;
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 5; ++j) v += (y.at(n, c, i, j) - m) * (y.at(n, c, i, j) - m);
      EXPECT_NEAR(m, 0.0, 1e-12);
      EXPECT_NEAR(v / 30, 1.0, 1e-10);
    }
  EXPECT_THROW(instance_norm(x, tape.constant(Tensor<double>(Shape{2}, 1.0)), b), ShapeError);
}

TEST(Ops, ResizeAreaAveragesBlocksAndRepeatsWhenGrowing) {
  Tensor<double> x(Shape{1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
  const auto half = resize_area(x, 2, 2);
  EXPECT_EQ(half.values(), (std::vector<double>{2.5, 4.5, 10.5, 12.5}));
  EXPECT_EQ(resize_area(x, 4, 4), x);
  const auto grown = resize_area(half, 4, 4);
  EXPECT_EQ(grown.at(0, 0, 1, 1), 2.5);
  EXPECT_EQ(grown.at(0, 0, 3, 2), 12.5);
  const auto third = resize_area(Tensor<double>(Shape{1, 1, 3, 3}, 6.0), 2, 2);
  for (double v : third.data()) EXPECT_NEAR(v, 6.0, 1e-12);
}

TEST(Ops, ConvRejectsBadGeometry) {
  Tape<double> tape;
  const D x = tape.constant(Tensor<double>(Shape{1, 2, 3, 3}));
  const D w = tape.constant(Tensor<double>(Shape{4, 3, 3, 3}));
  EXPECT_THROW(conv2d(x, w, std::optional<D>{}, 1, Padding::zeros(1)), ShapeError);
  const D w2 = tape.constant(Tensor<double>(Shape{4, 2, 5, 5}));
  EXPECT_THROW(conv2d(x, w2, std::optional<D>{}, 1, Padding::zeros(0)), ShapeError);
  EXPECT_EQ(conv_output_extent(256, 4, 2, 1, "h"), 128u);
  EXPECT_EQ(conv_transpose_output_extent(64, 4, 2, 1), 128u);
}

TEST(ConvOracle, MatchesNaiveLoopsOverGeometries) {
  struct Case {
    std::size_t n, c, h, w, k, kernel, stride, pad;
  };
  const Case cases[] = {{1, 1, 5, 5, 1, 3, 1, 0}, {2, 3, 7, 6, 4, 3, 1, 1}, {1, 2, 8, 8, 3, 4, 2, 1},
                        {1, 3, 9, 7, 2, 7, 1, 3}, {2, 2, 6, 6, 5, 1, 1, 0}, {1, 4, 10, 10, 2, 4, 2, 2},
                        {1, 2, 11, 5, 3, 3, 3, 1}};
  std::uint64_t seed = 100;
  for (const auto& c : cases) {
    const auto x = naive::randn({c.n, c.c, c.h, c.w}, seed++);
    const auto w = naive::randn({c.k, c.c, c.kernel, c.kernel}, seed++);
    const auto b = naive::randn({c.k}, seed++);
    Tape<double> tape;
    const auto y = conv2d(tape.constant(x), tape.constant(w), std::optional<D>(tape.constant(b)), c.stride,
                          Padding::zeros(c.pad))
                       .value();
    const auto ref = naive::conv2d(x, w, &b, c.stride, c.pad);
    ASSERT_EQ(y.shape(), ref.shape());
    EXPECT_LT(naive::max_abs_diff(y, ref), 1e-10);
    // The library's own oracle agrees with the test-local one.
    EXPECT_LT(naive::max_abs_diff(oracle::conv2d(x, w, &b, c.stride, c.pad), ref), 1e-12);
  }
}

TEST(ConvOracle, TransposeMatchesNaiveGatherLoops) {
  struct Case {
    std::size_t n, c, h, w, k, kernel, stride, pad;
  };
  const Case cases[] = {{1, 1, 3, 3, 1, 3, 1, 1}, {2, 3, 4, 5, 2, 4, 2, 1}, {1, 4, 6, 6, 3, 3, 2, 1},
                        {1, 2, 5, 5, 3, 5, 1, 2}, {1, 2, 3, 4, 2, 4, 3, 0}};
  std::uint64_t seed = 200;
  for (const auto& c : cases) {
    const auto x = naive::randn({c.n, c.c, c.h, c.w}, seed++);
    const auto w = naive::randn({c.c, c.k, c.kernel, c.kernel}, seed++);
    const auto b = naive::randn({c.k}, seed++);
    Tape<double> tape;
    const auto y =
        conv_transpose2d(tape.constant(x), tape.constant(w), std::optional<D>(tape.constant(b)), c.stride, c.pad)
            .value();
    const auto ref = naive::conv_transpose2d(x, w, &b, c.stride, c.pad);
    ASSERT_EQ(y.shape(), ref.shape());
    EXPECT_LT(naive::max_abs_diff(y, ref), 1e-10);
    EXPECT_LT(naive::max_abs_diff(oracle::conv_transpose2d(x, w, &b, c.stride, c.pad), ref), 1e-12);
  }
}

TEST(ConvOracle, TransposeIsAdjointOfConv) {
  // <conv(x), y> == <x, conv_transpose(y)> for the same kernel.
  const auto x = naive::randn({2, 3, 8, 8}, 31);
  const auto w = naive::randn({5, 3, 4, 4}, 32);
  Tape<double> tape;
  const auto cx = conv2d(tape.constant(x), tape.constant(w), std::optional<D>{}, 2, Padding::zeros(1)).value();
  const auto y = naive::randn(cx.shape(), 33);
  const auto ty = conv_transpose2d(tape.constant(y), tape.constant(w), std::optional<D>{}, 2, 1).value();
  ASSERT_EQ(ty.shape(), x.shape());
  const double lhs = naive::dot(cx, y), rhs = naive::dot(x, ty);
  EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));
}

TEST(Gradients, ElementwiseAndReductions) {
  const auto a = naive::randn({2, 3}, 1), b = naive::randn({2, 3}, 2);
  expect_matches_fd([](Tape<double>& t, std::span<const D> v) { return project(t, add(v[0], v[1]), 9); }, {a, b});
  expect_matches_fd([](Tape<double>& t, std::span<const D> v) { return project(t, sub(v[0], v[1]), 9); }, {a, b});
  expect_matches_fd([](Tape<double>& t, std::span<const D> v) { return project(t, mul(v[0], v[1]), 9); }, {a, b});
  expect_matches_fd([](Tape<double>& t, std::span<const D> v) { return project(t, scale(v[0], -1.7), 9); }, {a});
  expect_matches_fd([](Tape<double>&, std::span<const D> v) { return mean(v[0]); }, {a});
  expect_matches_fd([](Tape<double>&, std::span<const D> v) { return mse_loss(v[0], v[1]); }, {a, b});
  expect_matches_fd([](Tape<double>&, std::span<const D> v) { return l1_loss(v[0], v[1]); }, {a, b});
}

TEST(Gradients, Activations) {
  // Inputs kept away from 0 so the kinks are not straddled.
  auto x = naive::randn({1, 2, 3, 3}, 5);
  for (auto& v : x.data()) v += v >= 0 ? 0.1 : -0.1;
  for (const auto& act : {Activation::relu(), Activation::leaky_relu(0.2), Activation::tanh(), Activation::sigmoid()}) {
    expect_matches_fd([act](Tape<double>& t, std::span<const D> v) { return project(t, activation(v[0], act), 4); },
                      {x});
  }
}

namespace {

Tensor<double> grad_x() { return naive::randn({2, 2, 6, 6}, 11); }

}  // namespace

TEST(Gradients, Conv2dZeroPadStrided) {
  expect_matches_fd(
      [](Tape<double>& t, std::span<const D> v) {
        return project(t, conv2d(v[0], v[1], std::optional<D>(v[2]), 2, Padding::zeros(1)), 3);
      },
      {grad_x(), naive::randn({3, 2, 3, 3}, 12), naive::randn({3}, 13)});
}

TEST(Gradients, Conv2dReflectPad) {
  expect_matches_fd(
      [](Tape<double>& t, std::span<const D> v) {
        return project(t, conv2d(v[0], v[1], std::optional<D>{}, 1, Padding::reflect(1)), 3);
      },
      {grad_x(), naive::randn({3, 2, 3, 3}, 12)});
}

TEST(Gradients, ConvTranspose2d) {
  expect_matches_fd(
      [](Tape<double>& t, std::span<const D> v) {
        return project(t, conv_transpose2d(v[0], v[1], std::optional<D>(v[2]), 2, 1), 3);
      },
      {grad_x(), naive::randn({2, 3, 4, 4}, 14), naive::randn({3}, 13)});
}

TEST(Gradients, InstanceNorm) {
  expect_matches_fd(
      [](Tape<double>& t, std::span<const D> v) { return project(t, instance_norm(v[0], v[1], v[2]), 3); },
      {grad_x(), Tensor<double>(Shape{2}, std::vector<double>{1.3, -0.8}), naive::randn({2}, 16)});
}

TEST(Gradients, ReflectPad) {
  expect_matches_fd([](Tape<double>& t, std::span<const D> v) { return project(t, pad_reflect(v[0], 2), 3); },
                    {grad_x()});
}

TEST(Gradients, ResizeArea) {
  for (std::size_t out : {3u, 4u, 9u}) {
    expect_matches_fd(
        [out](Tape<double>& t, std::span<const D> v) { return project(t, resize_area(v[0], out, out), 3); },
        {grad_x()});
  }
}

TEST(GradCheck, AgreesWithTestLocalDifferences) {
  const auto x = naive::randn({1, 2, 5, 5}, 21);
  const auto w = naive::randn({2, 2, 3, 3}, 22);
  const std::vector<Tensor<double>> pts{x, w};
  const auto r = grad_check(
      [](Tape<double>& t, std::span<const Var<double>> v) {
        return project(t, activation(conv2d(v[0], v[1], std::optional<D>{}, 1, Padding::zeros(1)), Activation::tanh()),
                       8);
      },
      pts);
  EXPECT_LT(r.max_rel_error, 1e-6);
  EXPECT_EQ(r.coords_checked, x.size() + w.size());
}

TEST(GradCheck, DetectsWrongGradient) {
  // A rule that reports twice the true derivative is caught.
  const auto x = naive::randn({4}, 3);
  const auto r = grad_check(
      [](Tape<double>& t, std::span<const Var<double>> v) {
        const auto& in = v[0];
        Tensor<double> out = in.value();
        for (auto& e : out.data()) e = e * e;
        const Tensor<double> xv = in.value();
        const D sq = t.record(std::move(out), {in.id()},
                              [xv](const Tensor<double>& g, GradSink<double>& sink) {
                                Tensor<double> dx(xv.shape());
                                for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = 4.0 * xv[i] * g[i];
                                sink.add(0, dx);
                              },
                              "square");
        return sum(sq);
      },
      std::vector<Tensor<double>>{x});
  EXPECT_GT(r.max_rel_error, 0.3);
}

TEST(GradCheck, KinkStraddlingCoordinateIsReprobed) {
  // relu input at 2e-6 sits inside the +-1e-5 window; the smaller step resolves it.
  Tensor<double> x(Shape{3}, std::vector<double>{2e-6, 0.7, -0.4});
  const std::vector<Tensor<double>> pts{x};
  auto f = [](Tape<double>&, std::span<const Var<double>> v) { return sum(activation(v[0], Activation::relu())); };
  const auto aware = grad_check(f, pts);
  EXPECT_LT(aware.max_rel_error, 1e-6);
  EXPECT_GE(aware.kink_reprobes, 1u);
  GradCheckOptions plain;
  plain.kink_aware = false;
  EXPECT_GT(grad_check(f, pts, plain).max_rel_error, 0.1);
}

TEST(GradCheck, FloatAndDoubleOpsAgree) {
  const auto x = naive::randn({1, 3, 8, 8}, 41);
  const auto w = naive::randn({4, 3, 3, 3}, 42);
  Tape<double> td;
  Tape<float> tf;
  const auto yd =
      conv2d(td.constant(x), td.constant(w), std::optional<D>{}, 1, Padding::reflect(1)).value();
  const auto yf = conv2d(tf.constant(x.cast<float>()), tf.constant(w.cast<float>()), std::optional<Var<float>>{}, 1,
                         Padding::reflect(1))
                      .value();
  EXPECT_LT(naive::max_abs_diff(yd, yf.cast<double>()), 1e-4);
}
