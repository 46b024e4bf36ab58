#include "finet/netcore.hpp"

#include <gtest/gtest.h>

#include "support.hpp"

#include <cmath>
#include <set>

#include "finet/optim.hpp"

using namespace finet;

namespace {

GenConfig micro_gen_config() {
  GenConfig cfg;
  cfg.image_size = 8;
  cfg.in_channels = 3;
  cfg.out_channels = 2;
  cfg.latent_dim = 3;
  cfg.levels = 2;
  cfg.base_channels = 4;
  cfg.head = Head::Softmax;
  return cfg;
}

Tensor<double> random_map(std::vector<int> shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST(LevelWidth, PinnedSchedules) {
  // levels=4, base=32 -> {8, 8, 16, 32}
  EXPECT_EQ(level_width(1, 4, 32), 8);
  EXPECT_EQ(level_width(2, 4, 32), 8);
  EXPECT_EQ(level_width(3, 4, 32), 16);
  EXPECT_EQ(level_width(4, 4, 32), 32);
  // levels=3, base=16 -> {8, 8, 16}
  EXPECT_EQ(level_width(1, 3, 16), 8);
  EXPECT_EQ(level_width(2, 3, 16), 8);
  EXPECT_EQ(level_width(3, 3, 16), 16);
  // levels=2, base=4 -> {4, 4}
  EXPECT_EQ(level_width(1, 2, 4), 4);
  EXPECT_EQ(level_width(2, 2, 4), 4);
}

TEST(GenNetwork, SoftmaxHeadProducesDistributions) {
  GenNetwork<double> gen(micro_gen_config());
  gen.init(123);
  Rng rng(1);
  auto ctx = random_map({8, 8, 3}, rng);
  auto out = gen.generate(ctx, {0.1, -0.2, 0.3});
  ASSERT_EQ(out.shape(), (std::vector<int>{8, 8, 2}));
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      double sum = 0;
      for (int c = 0; c < 2; ++c) {
        EXPECT_GT(out.at(y, x, c), 0.0);
        sum += out.at(y, x, c);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(GenNetwork, TanhHeadBounded) {
  auto cfg = micro_gen_config();
  cfg.head = Head::Tanh;
  cfg.out_channels = 3;
  GenNetwork<double> gen(cfg);
  gen.init(7);
  Rng rng(2);
  auto out = gen.generate(random_map({8, 8, 3}, rng), {1.0, 0.0, -1.0});
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_GT(out[i], -1.0);
    EXPECT_LT(out[i], 1.0);
  }
}

TEST(GenNetwork, DeterministicForward) {
  GenNetwork<double> gen(micro_gen_config());
  gen.init(55);
  Rng rng(3);
  auto ctx = random_map({8, 8, 3}, rng);
  auto a = gen.generate(ctx, {0.5, 0.5, 0.5});
  auto b = gen.generate(ctx, {0.5, 0.5, 0.5});
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(GenNetwork, LatentPerturbationMovesPreHeadOutput) {
  // With frozen random parameters, bumping one latent dimension by one
  // unit must change the pre-head output for at least 90% of dims.
  GenConfig cfg = micro_gen_config();
  cfg.latent_dim = 8;
  GenNetwork<double> gen(cfg);
  gen.init(99);
  Rng rng(4);
  auto ctx = random_map({8, 8, 3}, rng);
  std::vector<double> z(8, 0.0);

  auto prehead = [&](const std::vector<double>& latent) {
    Tape<double> tp;
    auto pv = gen.params().bind(tp);
    auto out = gen.forward(tp, tp.leaf(ctx), tp.leaf(Tensor<double>({8}, latent)), pv, false);
    return tp.val(out);
  };
  const auto base = prehead(z);
  int moved = 0;
  for (int d = 0; d < 8; ++d) {
    auto z2 = z;
    z2[d] += 1.0;
    const auto out = prehead(z2);
    double max_diff = 0;
    for (std::size_t i = 0; i < out.size(); ++i) max_diff = std::max(max_diff, std::abs(out[i] - base[i]));
    if (max_diff > 1e-9) ++moved;
  }
  EXPECT_GE(moved, 8 * 9 / 10);
}

TEST(GenNetwork, MicroEndToEndGradientCheck) {
  // Finite differences over a sampled subset of parameters, double
  // precision. Loss projects the softmax output onto a random vector.
  GenNetwork<double> gen(micro_gen_config());
  gen.init(31);
  testsupport::jitter_params(gen.params(), 310);
  Rng rng(5);
  auto ctx = random_map({8, 8, 3}, rng);
  const std::vector<double> z{0.2, -0.4, 0.1};
  Tensor<double> proj({8, 8, 2});
  for (std::size_t i = 0; i < proj.size(); ++i) proj[i] = rng.uniform(-1.0, 1.0);

  auto loss_value = [&]() {
    Tape<double> tp;
    auto pv = gen.params().bind(tp);
    auto out = gen.forward(tp, tp.leaf(ctx), tp.leaf(Tensor<double>({3}, z)), pv);
    return tp.val(ops::dot(tp, out, tp.leaf(proj)))[0];
  };

  Tape<double> tp;
  auto pv = gen.params().bind(tp);
  auto out = gen.forward(tp, tp.leaf(ctx), tp.leaf(Tensor<double>({3}, z)), pv);
  tp.backward(ops::dot(tp, out, tp.leaf(proj)));

  const double h = 1e-5;
  Rng pick(6);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int pi = pick.uniform_int(gen.params().count());
    auto& tensor = gen.params().value(pi);
    const int ei = pick.uniform_int(static_cast<int>(tensor.size()));
    const double orig = tensor[ei];
    tensor[ei] = orig + h;
    const double up = loss_value();
    tensor[ei] = orig - h;
    const double dn = loss_value();
    tensor[ei] = orig;
    const double fd = (up - dn) / (2 * h);
    const double an = tp.grad(pv[pi])[ei];
    const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
    EXPECT_LE(std::abs(fd - an) / denom, 1e-3) << gen.params().name(pi) << "[" << ei << "]";
    ++checked;
  }
  EXPECT_EQ(checked, 200);
}

TEST(GenNetwork, RejectsBadInputs) {
  GenNetwork<double> gen(micro_gen_config());
  gen.init(1);
  Rng rng(7);
  EXPECT_THROW(gen.generate(random_map({8, 8, 4}, rng), {0, 0, 0}), DimensionError);
  EXPECT_THROW(gen.generate(random_map({8, 8, 3}, rng), {0, 0}), DimensionError);
  GenConfig bad = micro_gen_config();
  bad.image_size = 10;  // not divisible by 2^levels
  EXPECT_THROW(GenNetwork<double>{bad}, DimensionError);
}

TEST(GaussEncoder, OutputShapesAndClamp) {
  EncConfig cfg;
  cfg.input_size = 8;
  cfg.in_channels = 2;
  cfg.latent_dim = 4;
  cfg.levels = 2;
  cfg.base_channels = 4;
  GaussEncoder<double> enc(cfg);
  enc.init(11);
  Rng rng(8);
  auto q = enc.encode(random_map({8, 8, 2}, rng));
  EXPECT_EQ(q.dim(), 4);
  for (double lv : q.log_var) {
    EXPECT_GE(lv, kLogVarMin);
    EXPECT_LE(lv, kLogVarMax);
  }
}

TEST(GaussEncoder, GradientsThroughKl) {
  EncConfig cfg;
  cfg.input_size = 8;
  cfg.in_channels = 1;
  cfg.latent_dim = 2;
  cfg.levels = 2;
  cfg.base_channels = 4;
  GaussEncoder<double> enc(cfg);
  enc.init(12);
  testsupport::jitter_params(enc.params(), 120);
  Rng rng(9);
  auto x = random_map({8, 8, 1}, rng);

  auto loss_value = [&]() {
    Tape<double> tp;
    auto pv = enc.params().bind(tp);
    auto [mean, log_var] = enc.forward(tp, tp.leaf(x), pv);
    return tp.val(ops::kl_to_standard_op(tp, mean, log_var))[0];
  };

  Tape<double> tp;
  auto pv = enc.params().bind(tp);
  auto [mean, log_var] = enc.forward(tp, tp.leaf(x), pv);
  tp.backward(ops::kl_to_standard_op(tp, mean, log_var));

  const double h = 1e-5;
  Rng pick(10);
  for (int trial = 0; trial < 120; ++trial) {
    const int pi = pick.uniform_int(enc.params().count());
    auto& tensor = enc.params().value(pi);
    const int ei = pick.uniform_int(static_cast<int>(tensor.size()));
    const double orig = tensor[ei];
    tensor[ei] = orig + h;
    const double up = loss_value();
    tensor[ei] = orig - h;
    const double dn = loss_value();
    tensor[ei] = orig;
    const double fd = (up - dn) / (2 * h);
    const double an = tp.grad(pv[pi])[ei];
    const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
    EXPECT_LE(std::abs(fd - an) / denom, 1e-3) << enc.params().name(pi) << "[" << ei << "]";
  }
}

TEST(ParamStore, InitBoundsAndDeterminism) {
  GenNetwork<double> a(micro_gen_config()), b(micro_gen_config());
  a.init(42);
  b.init(42);
  for (int i = 0; i < a.params().count(); ++i) {
    const auto& ta = a.params().value(i);
    const auto& tb = b.params().value(i);
    for (std::size_t j = 0; j < ta.size(); ++j) EXPECT_EQ(ta[j], tb[j]);

    if (ta.rank() == 1) {
      for (std::size_t j = 0; j < ta.size(); ++j) EXPECT_EQ(ta[j], 0.0);
    } else {
      int fan_in = ta.rank() == 4 ? ta.dim(0) * ta.dim(1) * ta.dim(2) : ta.dim(0);
      const double bound = std::sqrt(6.0 / fan_in);
      double max_abs = 0;
      for (std::size_t j = 0; j < ta.size(); ++j) max_abs = std::max(max_abs, std::abs(ta[j]));
      EXPECT_LE(max_abs, bound);
      if (ta.size() > 50) EXPECT_GT(max_abs, 0.5 * bound);  // actually spreads out
    }
  }
  GenNetwork<double> c(micro_gen_config());
  c.init(43);
  bool any_diff = false;
  for (std::size_t j = 0; j < a.params().value(0).size(); ++j) {
    if (a.params().value(0)[j] != c.params().value(0)[j]) any_diff = true;
  }
  EXPECT_TRUE(any_diff);
}

TEST(ParamStore, SaveLoadRoundTripAndShapeError) {
  GenNetwork<float> gen(micro_gen_config());
  gen.init(77);
  NamedTensors c;
  gen.params().save_into(c, "gen.");
  GenNetwork<float> other(micro_gen_config());
  other.init(1);
  other.params().load_from(c, "gen.");
  for (int i = 0; i < gen.params().count(); ++i) {
    const auto& ta = gen.params().value(i);
    const auto& tb = other.params().value(i);
    for (std::size_t j = 0; j < ta.size(); ++j) EXPECT_EQ(ta[j], tb[j]);
  }

  auto bad_cfg = micro_gen_config();
  bad_cfg.base_channels = 8;
  GenNetwork<float> mismatched(bad_cfg);
  EXPECT_THROW(mismatched.params().load_from(c, "gen."), IoError);
  EXPECT_THROW(other.params().load_from(c, "other."), IoError);
}

TEST(Adam, SingleStepHandComputed) {
  Tensor<double> p({2}, {1.0, -2.0});
  Tensor<double> g({2}, {0.5, -1.5});
  Adam<double> opt(0.1, 0.9, 0.999);
  opt.step({&p}, {g});
  // First step: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps).
  for (int i = 0; i < 2; ++i) {
    const double want = (i == 0 ? 1.0 : -2.0) - 0.1 * g[i] / (std::abs(g[i]) + 1e-8);
    EXPECT_NEAR(p[i], want, 1e-9);
  }
  EXPECT_EQ(opt.steps_taken(), 1);
}

TEST(Adam, ConvergesOnQuadratic)
{
  // Minimize 0.5 * (p - t)^2 elementwise.
  Tensor<double> p({3}, {5.0, -3.0, 0.5});
  const Tensor<double> target({3}, {1.0, 2.0, -0.25});
  Adam<double> opt(0.05, 0.9, 0.999);
  for (int step = 0; step < 2000; ++step) {
    Tensor<double> g({3});
    for (int i = 0; i < 3; ++i) g[i] = p[i] - target[i];
    opt.step({&p}, {g});
  }
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], target[i], 1e-3);
}

TEST(Adam, ShapeMismatchThrows) {
  Tensor<double> p({2});
  Tensor<double> g({3});
  Adam<double> opt(0.1, 0.9, 0.999);
  EXPECT_THROW(opt.step({&p}, {g}), DimensionError);
}
