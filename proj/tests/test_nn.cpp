#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "gradcheck.hpp"
#include "unirit/error.hpp"
#include "unirit/nn.hpp"

using namespace unirit;
using namespace unirit::nn;

namespace {

template <typename S>
Tensor2D<S> random_tensor(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Tensor2D<S> t(r, c);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(n(rng));
  return t;
}

double scalar_activation(Activation a, double z) {
  switch (a) {
    case Activation::relu: return z > 0 ? z : 0.0;
    case Activation::leaky_relu: return z > 0 ? z : 0.01 * z;
    case Activation::tanh: return std::tanh(z);
    case Activation::none: return z;
  }
  return z;
}

// Per-element loops over the layer list; shares nothing with MlpStack::forward.
template <typename S>
std::vector<std::vector<double>> scalar_forward(const MlpStack<S>& stack, const Tensor2D<S>& input) {
  std::vector<std::vector<double>> rows;
  for (Eigen::Index r = 0; r < input.rows(); ++r) {
    std::vector<double> x(static_cast<std::size_t>(input.cols()));
    for (Eigen::Index c = 0; c < input.cols(); ++c) x[static_cast<std::size_t>(c)] = input(r, c);
    for (const auto& layer : stack.layers()) {
      std::vector<double> y(static_cast<std::size_t>(layer.fan_out()));
      for (Eigen::Index o = 0; o < layer.fan_out(); ++o) {
        double z = layer.bias(0, o);
        for (Eigen::Index i = 0; i < layer.fan_in(); ++i) z += x[static_cast<std::size_t>(i)] * layer.weight(i, o);
        y[static_cast<std::size_t>(o)] = scalar_activation(layer.activation, z);
      }
      x = std::move(y);
    }
    rows.push_back(std::move(x));
  }
  return rows;
}

const std::vector<Activation> kMixed{Activation::leaky_relu, Activation::tanh, Activation::none};

}  // namespace

TEST(Activation, NamesRoundTrip) {
  for (auto a : {Activation::relu, Activation::leaky_relu, Activation::tanh, Activation::none})
    EXPECT_EQ(activation_from_string(to_string(a)), a);
  for (auto p : {Pooling::max, Pooling::mean}) EXPECT_EQ(pooling_from_string(to_string(p)), p);
  EXPECT_THROW(activation_from_string("gelu"), ValidationError);
}

TEST(MlpForward, IdentityLayerPassesInputThrough) {
  DenseLayer<float> l{Tensor2D<float>::Identity(3, 3), Tensor2D<float>::Zero(1, 3), Activation::none};
  const MlpStack<float> s({l});
  const auto x = random_tensor<float>(5, 3, 1);
  EXPECT_EQ(s.forward(x), x);
}

TEST(MlpForward, ReluClampsNegativePreactivation) {
  DenseLayer<float> l{Tensor2D<float>::Constant(1, 1, 2.0f), Tensor2D<float>::Constant(1, 1, 1.0f), Activation::relu};
  const MlpStack<float> s({l});
  EXPECT_EQ(s.forward(Tensor2D<float>::Constant(1, 1, -3.0f))(0, 0), 0.0f);
}

TEST(MlpForward, MatchesScalarOracle) {
  const MlpStack<double> d({3, 7, 5, 2}, kMixed, 4);
  const auto xd = random_tensor<double>(6, 3, 5);
  const auto yd = d.forward(xd);
  const auto od = scalar_forward(d, xd);
  for (Eigen::Index r = 0; r < yd.rows(); ++r)
    for (Eigen::Index c = 0; c < yd.cols(); ++c) EXPECT_NEAR(yd(r, c), od[r][c], 1e-12);

  const MlpStack<float> f({3, 64, 32, 4}, {Activation::leaky_relu, Activation::relu, Activation::none}, 6);
  const auto xf = random_tensor<float>(10, 3, 7);
  const auto yf = f.forward(xf);
  const auto of = scalar_forward(f, xf);
  for (Eigen::Index r = 0; r < yf.rows(); ++r)
    for (Eigen::Index c = 0; c < yf.cols(); ++c) EXPECT_NEAR(yf(r, c), of[r][c], 1e-6 * std::max(1.0, std::abs(of[r][c])));
}

TEST(MlpForward, RejectsShapeMismatch) {
  const MlpStack<float> s({3, 4, 2}, {Activation::relu, Activation::none}, 1);
  EXPECT_THROW(s.forward(Tensor2D<float>::Zero(2, 4)), ValidationError);
  EXPECT_THROW(MlpStack<float>({3}, {}, 1), ValidationError);
  EXPECT_THROW(MlpStack<float>({3, 4}, {}, 1), ValidationError);
}

TEST(MlpInit, GlorotRangeAndDeterminism) {
  const MlpStack<float> a({3, 64, 128}, {Activation::relu, Activation::none}, 9);
  const MlpStack<float> b({3, 64, 128}, {Activation::relu, Activation::none}, 9);
  const MlpStack<float> c({3, 64, 128}, {Activation::relu, Activation::none}, 10);
  for (std::size_t l = 0; l < a.depth(); ++l) {
    const auto& w = a.layers()[l].weight;
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    EXPECT_LE(w.cwiseAbs().maxCoeff(), limit);
    EXPECT_GT(w.cwiseAbs().maxCoeff(), 0.5 * limit);
    EXPECT_TRUE(a.layers()[l].bias.isZero(0.0f));
    EXPECT_EQ(w, b.layers()[l].weight);
    EXPECT_NE(w, c.layers()[l].weight);
  }
}

TEST(MlpBackward, ZeroUpstreamGivesZeroGradients) {
  const MlpStack<float> s({3, 8, 4}, {Activation::leaky_relu, Activation::none}, 2);
  ForwardCache<float> cache;
  const auto y = s.forward(random_tensor<float>(5, 3, 3), &cache);
  auto g = s.zero_gradients();
  const auto gin = s.backward(cache, Tensor2D<float>::Zero(y.rows(), y.cols()), g);
  EXPECT_TRUE(gin.isZero(0.0f));
  for (std::size_t k = 0; k < g.weight.size(); ++k) {
    EXPECT_TRUE(g.weight[k].isZero(0.0f));
    EXPECT_TRUE(g.bias[k].isZero(0.0f));
  }
}

TEST(MlpBackward, LinearLayerInputGradientIsUpstreamTimesWeightTransposed) {
  const MlpStack<double> s({4, 3}, {Activation::none}, 8);
  ForwardCache<double> cache;
  s.forward(random_tensor<double>(6, 4, 9), &cache);
  const auto up = random_tensor<double>(6, 3, 10);
  auto g = s.zero_gradients();
  const Tensor2D<double> expected = up * s.layers()[0].weight.transpose();
  EXPECT_EQ(s.backward(cache, up, g), expected);
}

TEST(MlpBackward, RequiresForwardCache) {
  const MlpStack<float> s({3, 2}, {Activation::none}, 1);
  ForwardCache<float> empty;
  auto g = s.zero_gradients();
  EXPECT_THROW(s.backward(empty, Tensor2D<float>::Zero(1, 2), g), ValidationError);
}

TEST(MlpBackward, SinglePrecisionGradientsMatchDoubleFiniteDifferences) {
  // loss = sum(upstream .* forward(x)); gradients computed in float, differences in double.
  const MlpStack<float> sf({3, 16, 8, 4}, kMixed, 11);
  const auto xf = random_tensor<float>(7, 3, 12);
  const auto up = random_tensor<float>(7, 4, 13);
  ForwardCache<float> cache;
  sf.forward(xf, &cache);
  auto gf = sf.zero_gradients();
  const Tensor2D<float> gin = sf.backward(cache, up, gf);

  MlpStack<double> sd = sf.cast<double>();
  Tensor2D<double> xd = xf.cast<double>();
  const Tensor2D<double> upd = up.cast<double>();
  auto loss = [&] { return (sd.forward(xd).array() * upd.array()).sum(); };

  std::vector<Tensor2D<double>*> params;
  sd.collect_parameters(params);
  std::vector<Tensor2D<double>> analytic;
  for (std::size_t k = 0; k < gf.weight.size(); ++k) {
    analytic.push_back(gf.weight[k].cast<double>());
    analytic.push_back(gf.bias[k].cast<double>());
  }
  analytic.push_back(gin.cast<double>());
  params.push_back(&xd);
  std::vector<Tensor2D<double>*> grads;
  for (auto& a : analytic) grads.push_back(&a);
  std::mt19937_64 rng(1);
  const auto res = gradcheck::check_tensors(params, grads, 1.0, 1, 1e-3, 1e-3, 1e-3, loss, rng);
  EXPECT_EQ(res.failures, 0) << "max rel " << res.max_rel_error;
  EXPECT_GT(res.checked, 200);
}

TEST(MlpBroadcast, MatchesExplicitConcatenation) {
  const MlpStack<double> s({2 + 5 + 3, 6, 2}, {Activation::relu, Activation::none}, 14);
  typename MlpStack<double>::BroadcastInput in{random_tensor<double>(4, 2, 15), random_tensor<double>(1, 5, 16),
                                                random_tensor<double>(4, 3, 17)};
  Tensor2D<double> full(4, 10);
  full << in.left, in.shared.replicate(4, 1), in.right;
  ForwardCache<double> cb, cf;
  const auto yb = s.forward_broadcast(in, &cb);
  const auto yf = s.forward(full, &cf);
  EXPECT_LT((yb - yf).cwiseAbs().maxCoeff(), 1e-13);

  const auto up = random_tensor<double>(4, 2, 18);
  auto gb = s.zero_gradients();
  auto gfull = s.zero_gradients();
  const auto bgrad = s.backward_broadcast(cb, in, up, gb);
  const Tensor2D<double> fgrad = s.backward(cf, up, gfull);
  EXPECT_LT((bgrad.left - fgrad.leftCols(2)).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_LT((bgrad.shared - fgrad.middleCols(2, 5).colwise().sum()).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_LT((bgrad.right - fgrad.rightCols(3)).cwiseAbs().maxCoeff(), 1e-13);
  for (std::size_t k = 0; k < gb.weight.size(); ++k) {
    EXPECT_LT((gb.weight[k] - gfull.weight[k]).cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_LT((gb.bias[k] - gfull.bias[k]).cwiseAbs().maxCoeff(), 1e-13);
  }
}

TEST(Pooling, SinglePointAndDominantRow) {
  const auto one = random_tensor<float>(1, 5, 1);
  EXPECT_EQ(pool_max(one).value, one.row(0));
  Tensor2D<float> f = random_tensor<float>(6, 4, 2, 0.1);
  f.row(3).array() += 10.0f;
  const auto p = pool_max(f);
  EXPECT_EQ(p.value, f.row(3));
  for (auto idx : p.argmax) EXPECT_EQ(idx, 3);
  EXPECT_THROW(pool_max(Tensor2D<float>(0, 3)), ValidationError);
}

TEST(Pooling, TiesRouteToLowestIndex) {
  Tensor2D<float> f = Tensor2D<float>::Constant(3, 2, 1.0f);
  const auto p = pool_max(f);
  EXPECT_EQ(p.argmax[0], 0);
  const Tensor2D<float> g = pool_backward<float>(p, RowVector<float>::Constant(2, 1.0f));
  EXPECT_EQ(g.row(0).sum(), 2.0f);
  EXPECT_EQ(g.bottomRows(2).sum(), 0.0f);
}

TEST(Pooling, GradientsMatchFiniteDifferences) {
  for (auto kind : {Pooling::max, Pooling::mean}) {
    Tensor2D<double> f = random_tensor<double>(9, 5, 3);
    const RowVector<double> w = random_tensor<double>(1, 5, 4);
    const auto p = pool<double>(f, kind);
    const Tensor2D<double> g = pool_backward(p, w);
    auto loss = [&] { return pool<double>(f, kind).value.dot(w); };
    for (Eigen::Index i = 0; i < f.size(); ++i) {
      const double numeric = gradcheck::central_difference(f.data()[i], 1e-6, loss);
      EXPECT_LE(gradcheck::rel_error(g.data()[i], numeric, 1e-6), 1e-3);
    }
  }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor2D<float> p = random_tensor<float>(3, 3, 1);
  const Tensor2D<float> p0 = p;
  Tensor2D<float> g = Tensor2D<float>::Zero(3, 3);
  std::vector<Tensor2D<float>*> ps{&p}, gs{&g};
  AdamState<float> st;
  for (int i = 0; i < 10; ++i) adam_step<float>(ps, gs, st);
  EXPECT_EQ(p, p0);
  EXPECT_TRUE(st.m[0].isZero(0.0f));
  EXPECT_EQ(st.step, 10);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor2D<double> p = Tensor2D<double>::Zero(1, 3);
  Tensor2D<double> g(1, 3);
  g << 0.5, -2.0, 3.0;
  std::vector<Tensor2D<double>*> ps{&p}, gs{&g};
  AdamState<double> st;
  st.lr = 1e-3;
  adam_step<double>(ps, gs, st);
  // m_hat = g, v_hat = g^2, so the step is -lr * g / (|g| + eps)
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(p(0, k), -1e-3 * g(0, k) / (std::abs(g(0, k)) + 1e-8), 1e-12);
}

TEST(Adam, DeterministicAndShapeChecked) {
  auto run = [] {
    Tensor2D<float> p = random_tensor<float>(4, 2, 5);
    std::vector<Tensor2D<float>*> ps{&p};
    AdamState<float> st;
    for (int i = 0; i < 5; ++i) {
      Tensor2D<float> g = random_tensor<float>(4, 2, 100 + i);
      std::vector<Tensor2D<float>*> gs{&g};
      adam_step<float>(ps, gs, st);
    }
    return p;
  };
  EXPECT_EQ(run(), run());

  Tensor2D<float> p = Tensor2D<float>::Zero(2, 2);
  Tensor2D<float> g = Tensor2D<float>::Zero(2, 3);
  std::vector<Tensor2D<float>*> ps{&p}, gs{&g};
  AdamState<float> st;
  EXPECT_THROW(adam_step<float>(ps, gs, st), ValidationError);
}
