#include "finet/autodiff.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "finet/rng.hpp"

using namespace finet;
using Var = Tape<double>::Var;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Scalarize an arbitrary output by a fixed random projection so every
// output element influences the loss.
Var project(Tape<double>& tp, Var x, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> w(tp.val(x).shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-1.0, 1.0);
  return ops::dot(tp, x, tp.leaf(std::move(w)));
}

using Builder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

// Central-difference check of d(scalar)/d(every input element).
void check_grads(const std::vector<Tensor<double>>& inputs, const Builder& build, double h = 1e-5,
                 double tol = 1e-3) {
  Tape<double> tp;
  std::vector<Var> vars;
  for (const auto& in : inputs) vars.push_back(tp.leaf(in));
  const Var root = build(tp, vars);
  ASSERT_EQ(tp.val(root).size(), 1u);
  tp.backward(root);
  std::vector<Tensor<double>> grads;
  for (auto v : vars) grads.push_back(tp.grad(v));

  auto eval = [&](const std::vector<Tensor<double>>& ins) {
    Tape<double> t2;
    std::vector<Var> vs;
    for (const auto& in : ins) vs.push_back(t2.leaf(in));
    return t2.val(build(t2, vs))[0];
  };

  std::vector<Tensor<double>> work = inputs;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t j = 0; j < inputs[t].size(); ++j) {
      const double orig = work[t][j];
      work[t][j] = orig + h;
      const double up = eval(work);
      work[t][j] = orig - h;
      const double dn = eval(work);
      work[t][j] = orig;
      const double fd = (up - dn) / (2.0 * h);
      const double an = grads[t][j];
      const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
      EXPECT_LE(std::abs(fd - an) / denom, tol) << "input " << t << " elem " << j << " fd " << fd
                                                << " analytic " << an;
    }
  }
}

// Deliberately naive conv used as an oracle for the optimized kernel.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                          int stride) {
  const int h = x.dim(0), wd = x.dim(1), ci = x.dim(2);
  const int k = w.dim(0), co = w.dim(3);
  const int pad = (k - 1) / 2;
  const int ho = (h + stride - 1) / stride, wo = (wd + stride - 1) / stride;
  Tensor<double> y({ho, wo, co});
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      for (int o = 0; o < co; ++o) {
        double acc = b[o];
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const int iy = oy * stride - pad + ky;
            const int ix = ox * stride - pad + kx;
            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
            for (int c = 0; c < ci; ++c) acc += x.at(iy, ix, c) * w.at(ky, kx, c, o);
          }
        }
        y.at(oy, ox, o) = acc;
      }
    }
  }
  return y;
}

}  // namespace

TEST(Conv2d, ForwardMatchesNaiveReference) {
  Rng rng(1);
  for (int stride : {1, 2}) {
    for (int k : {1, 3}) {
      auto x = random_tensor({7, 6, 3}, rng);
      auto w = random_tensor({k, k, 3, 4}, rng);
      auto b = random_tensor({4}, rng);
      Tape<double> tp;
      const Var y = ops::conv2d(tp, tp.leaf(x), tp.leaf(w), tp.leaf(b), stride);
      const auto ref = naive_conv(x, w, b, stride);
      ASSERT_EQ(tp.val(y).shape(), ref.shape());
      for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(tp.val(y)[i], ref[i], 1e-12);
    }
  }
}

TEST(Conv2d, GradientsStride1) {
  Rng rng(2);
  check_grads({random_tensor({6, 5, 3}, rng), random_tensor({3, 3, 3, 4}, rng), random_tensor({4}, rng)},
              [](Tape<double>& tp, const std::vector<Var>& v) {
                return project(tp, ops::conv2d(tp, v[0], v[1], v[2], 1), 77);
              });
}

TEST(Conv2d, GradientsStride2OddSize) {
  Rng rng(3);
  check_grads({random_tensor({7, 5, 2}, rng), random_tensor({3, 3, 2, 3}, rng), random_tensor({3}, rng)},
              [](Tape<double>& tp, const std::vector<Var>& v) {
                return project(tp, ops::conv2d(tp, v[0], v[1], v[2], 2), 78);
              });
}

TEST(Conv2d, Gradients1x1) {
  Rng rng(4);
  check_grads({random_tensor({4, 4, 5}, rng), random_tensor({1, 1, 5, 2}, rng), random_tensor({2}, rng)},
              [](Tape<double>& tp, const std::vector<Var>& v) {
                return project(tp, ops::conv2d(tp, v[0], v[1], v[2], 1), 79);
              });
}

TEST(Conv2d, RejectsBadShapes) {
  Tape<double> tp;
  const Var x = tp.leaf(Tensor<double>({4, 4, 3}));
  const Var w = tp.leaf(Tensor<double>({3, 3, 2, 4}));  // wrong in channels
  const Var b = tp.leaf(Tensor<double>({4}));
  EXPECT_THROW(ops::conv2d(tp, x, w, b, 1), DimensionError);
  const Var w5 = tp.leaf(Tensor<double>({5, 5, 3, 4}));
  EXPECT_THROW(ops::conv2d(tp, x, w5, b, 1), DimensionError);
}

TEST(Fc, Gradients) {
  Rng rng(5);
  check_grads({random_tensor({7}, rng), random_tensor({7, 3}, rng), random_tensor({3}, rng)},
              [](Tape<double>& tp, const std::vector<Var>& v) {
                return project(tp, ops::fc(tp, v[0], v[1], v[2]), 80);
              });
}

TEST(Pointwise, ReluTanhClampGradients) {
  Rng rng(6);
  // Keep relu inputs away from zero and clamp inputs away from bounds.
  auto x = random_tensor({3, 4, 2}, rng);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::abs(x[i]) < 0.05) x[i] = 0.1;
  }
  check_grads({x}, [](Tape<double>& tp, const std::vector<Var>& v) {
    return project(tp, ops::relu(tp, v[0]), 81);
  });
  check_grads({random_tensor({3, 4, 2}, rng, -2.0, 2.0)}, [](Tape<double>& tp, const std::vector<Var>& v) {
    return project(tp, ops::tanh_op(tp, v[0]), 82);
  });
  check_grads({random_tensor({10}, rng, -0.4, 0.4)}, [](Tape<double>& tp, const std::vector<Var>& v) {
    return project(tp, ops::clamp(tp, v[0], -0.5, 0.5), 83);
  });
}

TEST(Pointwise, ClampSaturatesAndGatesGradient) {
  Tape<double> tp;
  const Var x = tp.leaf(Tensor<double>({3}, {-20.0, 0.0, 20.0}));
  const Var y = ops::clamp(tp, x, -10.0, 10.0);
  EXPECT_DOUBLE_EQ(tp.val(y)[0], -10.0);
  EXPECT_DOUBLE_EQ(tp.val(y)[2], 10.0);
  const Var s = project(tp, y, 84);
  tp.backward(s);
  EXPECT_DOUBLE_EQ(tp.grad(x)[0], 0.0);
  EXPECT_DOUBLE_EQ(tp.grad(x)[2], 0.0);
  EXPECT_NE(tp.grad(x)[1], 0.0);
}

TEST(Softmax, SumsToOneAndGradients) {
  Rng rng(7);
  auto x = random_tensor({3, 3, 5}, rng, -2.0, 2.0);
  Tape<double> tp;
  const Var p = ops::softmax_channels(tp, tp.leaf(x));
  for (int y = 0; y < 3; ++y) {
    for (int px = 0; px < 3; ++px) {
      double sum = 0;
      for (int c = 0; c < 5; ++c) {
        sum += tp.val(p).at(y, px, c);
        EXPECT_GT(tp.val(p).at(y, px, c), 0.0);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
  check_grads({x}, [](Tape<double>& t, const std::vector<Var>& v) {
    return project(t, ops::softmax_channels(t, v[0]), 85);
  });
}

TEST(Spatial, UpsampleAvgpoolGradients) {
  Rng rng(8);
  check_grads({random_tensor({3, 4, 2}, rng)}, [](Tape<double>& tp, const std::vector<Var>& v) {
    return project(tp, ops::upsample2_nearest(tp, v[0]), 86);
  });
  check_grads({random_tensor({4, 6, 2}, rng)}, [](Tape<double>& tp, const std::vector<Var>& v) {
    return project(tp, ops::avgpool2(tp, v[0]), 87);
  });
  Tape<double> tp;
  EXPECT_THROW(ops::avgpool2(tp, tp.leaf(Tensor<double>({3, 4, 1}))), DimensionError);
}

TEST(Spatial, CropResizeGradients) {
  Rng rng(9);
  check_grads({random_tensor({6, 7, 2}, rng)}, [](Tape<double>& tp, const std::vector<Var>& v) {
    return project(tp, ops::crop_box(tp, v[0], Box{1, 2, 5, 6}), 88);
  });
  check_grads({random_tensor({5, 4, 2}, rng)}, [](Tape<double>& tp, const std::vector<Var>& v) {
    return project(tp, ops::resize_bilinear_op(tp, v[0], 9, 7), 89);
  });
  check_grads({random_tensor({8, 8, 2}, rng)}, [](Tape<double>& tp, const std::vector<Var>& v) {
    return project(tp, ops::resize_bilinear_op(tp, v[0], 3, 5), 90);
  });
}

TEST(Plumbing, ConcatBroadcastFlattenSliceGradients) {
  Rng rng(10);
  check_grads({random_tensor({3, 3, 2}, rng), random_tensor({3, 3, 4}, rng), random_tensor({3, 3, 1}, rng)},
              [](Tape<double>& tp, const std::vector<Var>& v) {
                return project(tp, ops::concat_channels_op(tp, {v[0], v[1], v[2]}), 91);
              });
  check_grads({random_tensor({5}, rng)}, [](Tape<double>& tp, const std::vector<Var>& v) {
    return project(tp, ops::broadcast_latent(tp, v[0], 4, 3), 92);
  });
  check_grads({random_tensor({3, 2, 4}, rng)}, [](Tape<double>& tp, const std::vector<Var>& v) {
    return project(tp, ops::slice_vec(tp, ops::flatten(tp, v[0]), 5, 9), 93);
  });
}

TEST(Arith, AddSubScaleDotGradients) {
  Rng rng(11);
  check_grads({random_tensor({6}, rng), random_tensor({6}, rng)},
              [](Tape<double>& tp, const std::vector<Var>& v) {
                return project(tp, ops::add(tp, v[0], v[1]), 94);
              });
  check_grads({random_tensor({6}, rng), random_tensor({6}, rng)},
              [](Tape<double>& tp, const std::vector<Var>& v) {
                return project(tp, ops::sub(tp, v[0], v[1]), 95);
              });
  check_grads({random_tensor({6}, rng)}, [](Tape<double>& tp, const std::vector<Var>& v) {
    return project(tp, ops::scale(tp, v[0], -2.5), 96);
  });
  check_grads({random_tensor({6}, rng), random_tensor({6}, rng)},
              [](Tape<double>& tp, const std::vector<Var>& v) { return ops::dot(tp, v[0], v[1]); });
}

TEST(Arith, SqrtEpsValueAndGradients) {
  Rng rng(14);
  auto x = random_tensor({5}, rng, 0.2, 2.0);  // positive, away from the eps floor
  {
    Tape<double> tp;
    const auto v = tp.leaf(x);
    const auto y = tp.val(ops::sqrt_eps(tp, v));
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(y[i], std::sqrt(x[i] + 1e-12), 1e-12);
  }
  check_grads({x}, [](Tape<double>& tp, const std::vector<Var>& v) {
    return project(tp, ops::sqrt_eps(tp, v[0]), 97);
  });
}

TEST(Losses, L1ToConstGradients) {
  Rng rng(12);
  auto x = random_tensor({4, 3, 2}, rng, 0.5, 1.5);  // keep |x - target| away from zero
  Tensor<double> target(x.shape());
  check_grads({x}, [target](Tape<double>& tp, const std::vector<Var>& v) {
    return ops::l1_to_const(tp, v[0], target);
  });
}

TEST(Gram, PinnedValueAndBruteForce) {
  // Single channel, four pixels, all ones: G = [[4]].
  Tape<double> tp;
  const Var f = tp.leaf(Tensor<double>::full({2, 2, 1}, 1.0));
  const Var g = ops::gram_hwc(tp, f);
  ASSERT_EQ(tp.val(g).shape(), (std::vector<int>{1, 1}));
  EXPECT_DOUBLE_EQ(tp.val(g)[0], 4.0);

  Rng rng(13);
  auto feat = random_tensor({3, 4, 5}, rng);
  Tape<double> tp2;
  const Var gg = ops::gram_hwc(tp2, tp2.leaf(feat));
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      double acc = 0;
      for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 4; ++x) acc += feat.at(y, x, i) * feat.at(y, x, j);
      }
      EXPECT_NEAR(tp2.val(gg).at(i, j), acc, 1e-12);
      EXPECT_NEAR(tp2.val(gg).at(i, j), tp2.val(gg).at(j, i), 1e-12);
    }
  }
}

TEST(Gram, Gradients) {
  Rng rng(14);
  check_grads({random_tensor({3, 3, 4}, rng)}, [](Tape<double>& tp, const std::vector<Var>& v) {
    return project(tp, ops::gram_hwc(tp, v[0]), 97);
  });
}

TEST(Pooling, GlobalAvgpoolAndL2NormalizeGradients) {
  Rng rng(15);
  check_grads({random_tensor({4, 5, 3}, rng)}, [](Tape<double>& tp, const std::vector<Var>& v) {
    return project(tp, ops::global_avgpool(tp, v[0]), 98);
  });
  check_grads({random_tensor({6}, rng, 0.5, 1.5)}, [](Tape<double>& tp, const std::vector<Var>& v) {
    return project(tp, ops::l2_normalize(tp, v[0]), 99);
  });
  Tape<double> tp;
  const Var y = ops::l2_normalize(tp, tp.leaf(Tensor<double>({3}, {3.0, 0.0, 4.0})));
  EXPECT_NEAR(tp.val(y)[0], 0.6, 1e-12);
  EXPECT_NEAR(tp.val(y)[2], 0.8, 1e-12);
}

TEST(CrossEntropy, UniformPredictionGivesLogC) {
  const int c = 8;
  Tape<double> tp;
  const Var probs = tp.leaf(Tensor<double>::full({4, 4, c}, 1.0 / c));
  Tensor<double> truth({4, 4, c});
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) truth.at(y, x, (y + x) % c) = 1.0;
  }
  const Var loss = ops::cross_entropy_map(tp, probs, truth);
  EXPECT_NEAR(tp.val(loss)[0], std::log(8.0), 1e-12);
}

TEST(CrossEntropy, MixedPredictionPinnedValue) {
  // pred = 0.9 * truth + 0.1 * uniform over 8 channels.
  const int c = 8;
  Tape<double> tp;
  Tensor<double> truth({2, 2, c});
  Tensor<double> pred({2, 2, c});
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) {
      truth.at(y, x, 3) = 1.0;
      for (int k = 0; k < c; ++k) pred.at(y, x, k) = 0.9 * truth.at(y, x, k) + 0.1 / c;
    }
  }
  const Var loss = ops::cross_entropy_map(tp, tp.leaf(pred), truth);
  EXPECT_NEAR(tp.val(loss)[0], -std::log(0.9 + 0.1 / c), 1e-12);
}

TEST(CrossEntropy, GradientsThroughSoftmax) {
  Rng rng(16);
  auto logits = random_tensor({3, 3, 4}, rng, -1.5, 1.5);
  Tensor<double> truth({3, 3, 4});
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 3; ++x) truth.at(y, x, (y * 3 + x) % 4) = 1.0;
  }
  check_grads({logits}, [truth](Tape<double>& tp, const std::vector<Var>& v) {
    return ops::cross_entropy_map(tp, ops::softmax_channels(tp, v[0]), truth);
  });
}

TEST(CrossEntropy, ContractViolationsThrow) {
  Tape<double> tp;
  Tensor<double> truth({2, 2, 3});
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) truth.at(y, x, 0) = 1.0;
  }
  // Probabilities off by more than the tolerance.
  const Var bad = tp.leaf(Tensor<double>::full({2, 2, 3}, 0.4));
  EXPECT_THROW(ops::cross_entropy_map(tp, bad, truth), ContractError);

  const Var ok = tp.leaf(Tensor<double>::full({2, 2, 3}, 1.0 / 3));
  Tensor<double> soft_truth = Tensor<double>::full({2, 2, 3}, 1.0 / 3);
  EXPECT_THROW(ops::cross_entropy_map(tp, ok, soft_truth), ContractError);

  // Within tolerance passes.
  Tensor<double> nearly = Tensor<double>::full({2, 2, 3}, (1.0 + 5e-5) / 3);
  EXPECT_NO_THROW(ops::cross_entropy_map(tp, tp.leaf(nearly), truth));
}

TEST(Reparam, ValueAndGradients) {
  Rng rng(17);
  const std::vector<double> noise{0.3, -1.2, 0.0, 2.0};
  Tape<double> tp;
  const Var m = tp.leaf(Tensor<double>({4}, {1.0, 2.0, 3.0, 4.0}));
  const Var l = tp.leaf(Tensor<double>({4}, {0.0, 0.0, 0.0, std::log(4.0)}));
  const Var z = ops::reparam(tp, m, l, noise);
  EXPECT_NEAR(tp.val(z)[0], 1.3, 1e-12);
  EXPECT_NEAR(tp.val(z)[3], 4.0 + 2.0 * 2.0, 1e-12);

  check_grads({random_tensor({4}, rng), random_tensor({4}, rng)},
              [noise](Tape<double>& t, const std::vector<Var>& v) {
                return project(t, ops::reparam(t, v[0], v[1], noise), 100);
              });
}

TEST(KlOps, ValuesMatchDistributionsModule) {
  Rng rng(18);
  auto mq = random_tensor({5}, rng), lq = random_tensor({5}, rng);
  auto mp = random_tensor({5}, rng), lp = random_tensor({5}, rng);
  Tape<double> tp;
  const Var kl = ops::kl_between_op(tp, tp.leaf(mq), tp.leaf(lq), tp.leaf(mp), tp.leaf(lp));
  DiagonalGaussian<double> q(std::vector<double>(mq.data(), mq.data() + 5),
                             std::vector<double>(lq.data(), lq.data() + 5));
  DiagonalGaussian<double> p(std::vector<double>(mp.data(), mp.data() + 5),
                             std::vector<double>(lp.data(), lp.data() + 5));
  EXPECT_NEAR(tp.val(kl)[0], kl_between(q, p), 1e-12);

  const Var kls = ops::kl_to_standard_op(tp, tp.leaf(mq), tp.leaf(lq));
  EXPECT_NEAR(tp.val(kls)[0], kl_to_standard(q), 1e-12);
}

TEST(KlOps, Gradients) {
  Rng rng(19);
  check_grads({random_tensor({4}, rng), random_tensor({4}, rng), random_tensor({4}, rng),
               random_tensor({4}, rng)},
              [](Tape<double>& tp, const std::vector<Var>& v) {
                return ops::kl_between_op(tp, v[0], v[1], v[2], v[3]);
              });
  check_grads({random_tensor({4}, rng), random_tensor({4}, rng)},
              [](Tape<double>& tp, const std::vector<Var>& v) {
                return ops::kl_to_standard_op(tp, v[0], v[1]);
              });
}

TEST(Tape, CompositeGraphGradientsAndDeterminism) {
  Rng rng(20);
  auto x = random_tensor({6, 6, 2}, rng);
  auto w = random_tensor({3, 3, 2, 3}, rng);
  auto b = random_tensor({3}, rng);
  auto fcw = random_tensor({27, 4}, rng);
  auto fcb = random_tensor({4}, rng);
  const Builder build = [](Tape<double>& tp, const std::vector<Var>& v) {
    auto h = ops::relu(tp, ops::conv2d(tp, v[0], v[1], v[2], 2));  // 3x3x3
    auto flat = ops::flatten(tp, h);
    auto out = ops::fc(tp, flat, v[3], v[4]);
    return project(tp, ops::tanh_op(tp, out), 101);
  };
  check_grads({x, w, b, fcw, fcb}, build);

  // Two identical runs give bitwise-identical gradients.
  auto run = [&]() {
    Tape<double> tp;
    std::vector<Var> vars{tp.leaf(x), tp.leaf(w), tp.leaf(b), tp.leaf(fcw), tp.leaf(fcb)};
    tp.backward(build(tp, vars));
    return tp.grad(vars[1]);
  };
  auto g1 = run();
  auto g2 = run();
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_EQ(g1[i], g2[i]);
}

TEST(Tape, BackwardRequiresScalarRoot) {
  Tape<double> tp;
  const Var x = tp.leaf(Tensor<double>({3}));
  EXPECT_THROW(tp.backward(x), DimensionError);
}
