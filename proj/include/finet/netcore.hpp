#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "finet/autodiff.hpp"
#include "finet/container.hpp"
#include "finet/distributions.hpp"
#include "finet/rng.hpp"
#include "finet/tensor.hpp"

namespace finet {

// Ordered named parameter set. Networks hold indices into their store;
// a forward pass binds every entry onto the tape in order.
template <typename T>
class ParamStore {
 public:
  int add(const std::string& name, std::vector<int> shape) {
    names_.push_back(name);
    values_.emplace_back(std::move(shape));
    return static_cast<int>(values_.size()) - 1;
  }

  int count() const { return static_cast<int>(values_.size()); }
  Tensor<T>& value(int i) { return values_[i]; }
  const Tensor<T>& value(int i) const { return values_[i]; }
  const std::string& name(int i) const { return names_[i]; }

  int find(const std::string& name) const {
    for (int i = 0; i < count(); ++i) {
      if (names_[i] == name) return i;
    }
    return -1;
  }

  // Kaiming-uniform for conv {k,k,in,out} and fc {in,out} weights,
  // zeros for biases. Fill order follows entry order, so a seed pins
  // every parameter.
  void init(Rng& rng) {
    for (auto& v : values_) {
      if (v.rank() == 1) {
        v.fill(T(0));
        continue;
      }
      int fan_in = 0;
      if (v.rank() == 4) fan_in = v.dim(0) * v.dim(1) * v.dim(2);
      if (v.rank() == 2) fan_in = v.dim(0);
      const double bound = std::sqrt(6.0 / fan_in);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(rng.uniform(-bound, bound));
    }
  }

  std::vector<typename Tape<T>::Var> bind(Tape<T>& tp) const {
    std::vector<typename Tape<T>::Var> vars;
    vars.reserve(values_.size());
    for (const auto& v : values_) vars.push_back(tp.leaf(v));
    return vars;
  }

  void save_into(NamedTensors& out, const std::string& prefix) const {
    for (int i = 0; i < count(); ++i) out.add(prefix + names_[i], tensor_cast<float>(values_[i]));
  }

  void load_from(const NamedTensors& in, const std::string& prefix) {
    for (int i = 0; i < count(); ++i) {
      const auto& t = in.require(prefix + names_[i]);
      if (t.shape() != values_[i].shape()) {
        throw IoError("checkpoint tensor '" + prefix + names_[i] + "' has shape " +
                      shape_string(t.shape()) + ", expected " + shape_string(values_[i].shape()));
      }
      values_[i] = tensor_cast<T>(t);
    }
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
};

// Channel width of pyramid level i (1-based): base at the deepest
// level, halved per level toward the input, floored at min(base, 8).
inline int level_width(int level, int levels, int base_channels) {
  const int floor_w = std::min(base_channels, 8);
  const int w = base_channels >> (levels - level);
  return std::max(floor_w, w);
}

enum class Head { Softmax, Tanh };

struct GenConfig {
  int image_size = 64;
  int in_channels = 0;
  int out_channels = 0;
  int latent_dim = 8;
  int levels = 4;
  int base_channels = 32;
  Head head = Head::Softmax;
};

namespace detail {

// One 1x1 entry convolution followed by two residual blocks.
struct R2Ids {
  int entry_w, entry_b;
  int a1_w, a1_b, a2_w, a2_b;
  int b1_w, b1_b, b2_w, b2_b;
};

template <typename T>
R2Ids make_r2(ParamStore<T>& ps, const std::string& prefix, int in_ch, int width) {
  R2Ids r;
  r.entry_w = ps.add(prefix + ".entry.w", {1, 1, in_ch, width});
  r.entry_b = ps.add(prefix + ".entry.b", {width});
  r.a1_w = ps.add(prefix + ".a1.w", {3, 3, width, width});
  r.a1_b = ps.add(prefix + ".a1.b", {width});
  r.a2_w = ps.add(prefix + ".a2.w", {3, 3, width, width});
  r.a2_b = ps.add(prefix + ".a2.b", {width});
  r.b1_w = ps.add(prefix + ".b1.w", {3, 3, width, width});
  r.b1_b = ps.add(prefix + ".b1.b", {width});
  r.b2_w = ps.add(prefix + ".b2.w", {3, 3, width, width});
  r.b2_b = ps.add(prefix + ".b2.b", {width});
  return r;
}

template <typename T>
typename Tape<T>::Var run_r2(Tape<T>& tp, typename Tape<T>::Var x, const R2Ids& ids,
                             const std::vector<typename Tape<T>::Var>& pv) {
  using namespace ops;
  auto h = relu(tp, conv2d(tp, x, pv[ids.entry_w], pv[ids.entry_b], 1));
  {
    auto r = relu(tp, conv2d(tp, h, pv[ids.a1_w], pv[ids.a1_b], 1));
    r = conv2d(tp, r, pv[ids.a2_w], pv[ids.a2_b], 1);
    h = relu(tp, add(tp, h, r));
  }
  {
    auto r = relu(tp, conv2d(tp, h, pv[ids.b1_w], pv[ids.b1_b], 1));
    r = conv2d(tp, r, pv[ids.b2_w], pv[ids.b2_b], 1);
    h = relu(tp, add(tp, h, r));
  }
  return h;
}

}  // namespace detail

// Encoder-decoder generator. Each encoder level downsamples with a
// stride-2 3x3 convolution, then refines the features concatenated with
// the broadcast latent code; decoder levels mirror them with nearest
// upsampling and symmetric skips, and every level reinjects the latent.
template <typename T>
class GenNetwork {
 public:
  using Var = typename Tape<T>::Var;

  explicit GenNetwork(GenConfig cfg) : cfg_(cfg) {
    if (cfg.image_size % (1 << cfg.levels) != 0) throw DimensionError("image size not divisible by 2^levels");
    int prev = cfg.in_channels;
    for (int i = 1; i <= cfg.levels; ++i) {
      const int w = width(i);
      Level lv;
      lv.down_w = params_.add("enc" + std::to_string(i) + ".down.w", {3, 3, prev, w});
      lv.down_b = params_.add("enc" + std::to_string(i) + ".down.b", {w});
      lv.r2 = detail::make_r2(params_, "enc" + std::to_string(i) + ".r2", w + cfg.latent_dim, w);
      enc_.push_back(lv);
      prev = w;
    }
    for (int i = cfg.levels; i >= 1; --i) {
      // Deepest decoder level sees only the bottleneck skip; shallower
      // ones also take the upsampled features from below.
      const int skip_w = width(i);
      const int in_ch = (i == cfg.levels ? skip_w : width(i + 1) + skip_w) + cfg.latent_dim;
      dec_.push_back(detail::make_r2(params_, "dec" + std::to_string(i) + ".r2", in_ch, skip_w));
    }
    out_w_ = params_.add("out.w", {3, 3, width(1), cfg.out_channels});
    out_b_ = params_.add("out.b", {cfg.out_channels});
  }

  int width(int level) const { return level_width(level, cfg_.levels, cfg_.base_channels); }
  const GenConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  void init(std::uint64_t seed) {
    Rng rng(seed);
    params_.init(rng);
  }

  Var forward(Tape<T>& tp, Var context, Var latent, const std::vector<Var>& pv,
              bool apply_head = true) const {
    using namespace ops;
    const auto& ctx = tp.val(context);
    if (ctx.dim(0) != cfg_.image_size || ctx.dim(1) != cfg_.image_size || ctx.dim(2) != cfg_.in_channels) {
      throw DimensionError("generator context shape mismatch");
    }
    if (tp.val(latent).rank() != 1 || tp.val(latent).dim(0) != cfg_.latent_dim) {
      throw DimensionError("generator latent shape mismatch");
    }
    std::vector<Var> skips(cfg_.levels + 1, -1);
    Var x = context;
    int size = cfg_.image_size;
    for (int i = 1; i <= cfg_.levels; ++i) {
      size /= 2;
      x = relu(tp, conv2d(tp, x, pv[enc_[i - 1].down_w], pv[enc_[i - 1].down_b], 2));
      const Var z = broadcast_latent(tp, latent, size, size);
      x = detail::run_r2(tp, concat_channels_op(tp, std::vector<Var>{x, z}), enc_[i - 1].r2, pv);
      skips[i] = x;
    }
    for (int i = cfg_.levels; i >= 1; --i) {
      const Var z = broadcast_latent(tp, latent, size, size);
      std::vector<Var> parts;
      if (i == cfg_.levels) {
        parts = {skips[i], z};
      } else {
        parts = {x, skips[i], z};
      }
      x = detail::run_r2(tp, concat_channels_op(tp, parts), dec_[cfg_.levels - i], pv);
      if (i > 1) {
        x = upsample2_nearest(tp, x);
        size *= 2;
      }
    }
    x = upsample2_nearest(tp, x);
    x = conv2d(tp, x, pv[out_w_], pv[out_b_], 1);
    if (!apply_head) return x;
    if (cfg_.head == Head::Softmax) return softmax_channels(tp, x);
    return tanh_op(tp, x);
  }

  // Inference without an external tape.
  Tensor<T> generate(const Tensor<T>& context, const std::vector<T>& latent) const {
    Tape<T> tp;
    const auto pv = params_.bind(tp);
    const auto ctx = tp.leaf(context);
    const auto z = tp.leaf(Tensor<T>({static_cast<int>(latent.size())}, latent));
    return tp.val(forward(tp, ctx, z, pv));
  }

 private:
  struct Level {
    int down_w, down_b;
    detail::R2Ids r2;
  };

  GenConfig cfg_;
  ParamStore<T> params_;
  std::vector<Level> enc_;
  std::vector<detail::R2Ids> dec_;
  int out_w_, out_b_;
};

struct EncConfig {
  int input_size = 32;
  int in_channels = 0;
  int latent_dim = 8;
  int levels = 4;
  int base_channels = 32;
};

// Convolutional encoder producing a diagonal Gaussian over the latent
// space. Same downsampling trunk as the generator's encoder half, no
// latent injection, fully connected head for mean and log-variance.
template <typename T>
class GaussEncoder {
 public:
  using Var = typename Tape<T>::Var;

  explicit GaussEncoder(EncConfig cfg) : cfg_(cfg) {
    if (cfg.input_size % (1 << cfg.levels) != 0) throw DimensionError("input size not divisible by 2^levels");
    int prev = cfg.in_channels;
    int size = cfg.input_size;
    for (int i = 1; i <= cfg.levels; ++i) {
      const int w = level_width(i, cfg.levels, cfg.base_channels);
      Level lv;
      lv.down_w = params_.add("enc" + std::to_string(i) + ".down.w", {3, 3, prev, w});
      lv.down_b = params_.add("enc" + std::to_string(i) + ".down.b", {w});
      lv.r2 = detail::make_r2(params_, "enc" + std::to_string(i) + ".r2", w, w);
      levels_.push_back(lv);
      prev = w;
      size /= 2;
    }
    flat_dim_ = size * size * prev;
    fc_w_ = params_.add("fc.w", {flat_dim_, 2 * cfg.latent_dim});
    fc_b_ = params_.add("fc.b", {2 * cfg.latent_dim});
  }

  const EncConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  void init(std::uint64_t seed) {
    Rng rng(seed);
    params_.init(rng);
  }

  // Returns (mean, log_var) with log_var already clamped.
  std::pair<Var, Var> forward(Tape<T>& tp, Var x, const std::vector<Var>& pv) const {
    using namespace ops;
    const auto& xv = tp.val(x);
    if (xv.dim(0) != cfg_.input_size || xv.dim(1) != cfg_.input_size || xv.dim(2) != cfg_.in_channels) {
      throw DimensionError("encoder input shape mismatch");
    }
    Var h = x;
    for (const auto& lv : levels_) {
      h = relu(tp, conv2d(tp, h, pv[lv.down_w], pv[lv.down_b], 2));
      h = detail::run_r2(tp, h, lv.r2, pv);
    }
    const Var stats = fc(tp, flatten(tp, h), pv[fc_w_], pv[fc_b_]);
    const Var mean = slice_vec(tp, stats, 0, cfg_.latent_dim);
    Var log_var = slice_vec(tp, stats, cfg_.latent_dim, cfg_.latent_dim);
    log_var = clamp(tp, log_var, static_cast<T>(kLogVarMin), static_cast<T>(kLogVarMax));
    return {mean, log_var};
  }

  DiagonalGaussian<T> encode(const Tensor<T>& x) const {
    Tape<T> tp;
    const auto pv = params_.bind(tp);
    const auto [mean, log_var] = forward(tp, tp.leaf(x), pv);
    const auto& m = tp.val(mean);
    const auto& l = tp.val(log_var);
    return DiagonalGaussian<T>(std::vector<T>(m.data(), m.data() + m.size()),
                               std::vector<T>(l.data(), l.data() + l.size()));
  }

 private:
  struct Level {
    int down_w, down_b;
    detail::R2Ids r2;
  };

  EncConfig cfg_;
  ParamStore<T> params_;
  std::vector<Level> levels_;
  int flat_dim_, fc_w_, fc_b_;
};

}  // namespace finet
