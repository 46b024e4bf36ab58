#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "finet/masks.hpp"
#include "finet/netcore.hpp"
#include "finet/optim.hpp"
#include "finet/synthdata.hpp"

namespace finet {

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Settings shared by both stages. The compatibility prior can be
// swapped for a standard normal to ablate it.
template <typename T>
struct StageConfig {
  int image_size = 64;
  int latent_dim = 8;
  int levels = 4;
  int base_channels = 32;
  T lambda_kl = static_cast<T>(0.1);
  bool standard_prior = false;
  int encoder_size() const { return image_size / 2; }
};

namespace detail {

template <typename T>
void append_meta(NamedTensors& c, const StageConfig<T>& cfg, const std::string& stage, bool trained) {
  c.set_meta("stage", stage);
  c.set_meta("image_size", std::to_string(cfg.image_size));
  c.set_meta("latent_dim", std::to_string(cfg.latent_dim));
  c.set_meta("levels", std::to_string(cfg.levels));
  c.set_meta("base_channels", std::to_string(cfg.base_channels));
  c.set_meta("lambda_kl", std::to_string(cfg.lambda_kl));
  c.set_meta("standard_prior", cfg.standard_prior ? "1" : "0");
  c.set_meta("trained", trained ? "1" : "0");
}

template <typename T>
StageConfig<T> parse_meta(const NamedTensors& c, const std::string& expected_stage, bool& trained) {
  auto req = [&](const std::string& key) {
    const std::string* v = c.find_meta(key);
    if (!v) throw IoError("checkpoint missing meta key '" + key + "'");
    return *v;
  };
  if (req("stage") != expected_stage) {
    throw IoError("checkpoint stage is '" + req("stage") + "', expected '" + expected_stage + "'");
  }
  StageConfig<T> cfg;
  cfg.image_size = std::stoi(req("image_size"));
  cfg.latent_dim = std::stoi(req("latent_dim"));
  cfg.levels = std::stoi(req("levels"));
  cfg.base_channels = std::stoi(req("base_channels"));
  cfg.lambda_kl = static_cast<T>(std::stod(req("lambda_kl")));
  cfg.standard_prior = req("standard_prior") == "1";
  trained = req("trained") == "1";
  return cfg;
}

// Gradient accumulation across the per-sample tapes of a batch.
template <typename T>
void accumulate_grads(Tape<T>& tp, const std::vector<typename Tape<T>::Var>& pv,
                      std::vector<Tensor<T>>& grads, std::size_t offset) {
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const auto& g = tp.grad(pv[i]);
    auto& acc = grads[offset + i];
    for (std::size_t j = 0; j < g.size(); ++j) acc[j] += g[j];
  }
}

}  // namespace detail

// Mean per-pixel cross-entropy between a predicted probability map and
// a one-hot truth map. Checks both contracts and throws ContractError
// on violation.
template <typename T>
T loss_seg(const Tensor<T>& pred, const Tensor<T>& truth) {
  Tape<T> tp;
  return tp.val(ops::cross_entropy_map(tp, tp.leaf(pred), truth))[0];
}

// Full shape objective: cross-entropy plus weighted KL. With
// standard_prior the prior argument is ignored.
template <typename T>
T loss_shape_total(const Tensor<T>& pred, const Tensor<T>& truth, const DiagonalGaussian<T>& q,
                   const DiagonalGaussian<T>& p, T lambda_kl, bool standard_prior = false) {
  const T kl = standard_prior ? kl_to_standard(q) : kl_between(q, p);
  return loss_seg(pred, truth) + lambda_kl * kl;
}

// Hard labels from a probability map; ties go to the lowest channel.
template <typename T>
Tensor<T> discretize(const Tensor<T>& probs) {
  const int h = probs.dim(0), w = probs.dim(1), c = probs.dim(2);
  Tensor<T> out(probs.shape());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int best = 0;
      for (int k = 1; k < c; ++k) {
        if (probs.at(y, x, k) > probs.at(y, x, best)) best = k;
      }
      out.at(y, x, best) = T(1);
    }
  }
  return out;
}

// Everything one training sample feeds the shape stage.
template <typename T>
struct ShapeExample {
  Tensor<T> s_hat;  // masked segmentation, image res x 8
  Tensor<T> p_s;    // pose + face mask, image res x 19
  Tensor<T> x_s;    // target garment mask, encoder res x 1
  Tensor<T> x_c;    // context garments, encoder res x 12
  Tensor<T> truth;  // full segmentation, image res x 8
};

template <typename T>
ShapeExample<T> make_shape_example(const OutfitSample& sample, Category cat, int encoder_size) {
  const auto seg = tensor_cast<T>(sample.seg);
  const auto pose = tensor_cast<T>(sample.pose);
  const auto image = tensor_cast<T>(sample.image);
  ShapeExample<T> ex;
  ex.s_hat = mask_shape_context(seg, cat);
  ex.p_s = person_rep_shape(pose, seg);
  ex.x_s = shape_code_input(seg, cat, encoder_size);
  ex.x_c = context_garments(image, seg, cat, encoder_size);
  ex.truth = seg;
  return ex;
}

struct StepMetrics {
  double recon_loss = 0;  // cross-entropy or perceptual+style, per stage
  double kl = 0;
  double total = 0;
};

// Shape generation stage: generator plus posterior and compatibility
// encoders, trained jointly.
template <typename T>
class ShapeStage {
 public:
  explicit ShapeStage(StageConfig<T> cfg)
      : cfg_(cfg),
        gen_(GenConfig{cfg.image_size, kSegChannels + kPoseChannels + 1, kSegChannels, cfg.latent_dim,
                       cfg.levels, cfg.base_channels, Head::Softmax}),
        enc_code_(EncConfig{cfg.encoder_size(), 1, cfg.latent_dim, cfg.levels, cfg.base_channels}),
        enc_compat_(EncConfig{cfg.encoder_size(), 3 * kNumCategories, cfg.latent_dim, cfg.levels,
                              cfg.base_channels}) {}

  const StageConfig<T>& config() const { return cfg_; }
  GenNetwork<T>& generator() { return gen_; }
  const GenNetwork<T>& generator() const { return gen_; }
  GaussEncoder<T>& code_encoder() { return enc_code_; }
  GaussEncoder<T>& compat_encoder() { return enc_compat_; }
  const GaussEncoder<T>& compat_encoder() const { return enc_compat_; }
  const GaussEncoder<T>& code_encoder() const { return enc_code_; }
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

  void init(std::uint64_t seed) {
    gen_.init(detail::splitmix64(seed ^ 0x67656eULL));
    enc_code_.init(detail::splitmix64(seed ^ 0x636f6465ULL));
    enc_compat_.init(detail::splitmix64(seed ^ 0x636f6d70ULL));
    trained_ = false;
  }

  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> out;
    for (int i = 0; i < gen_.params().count(); ++i) out.push_back(&gen_.params().value(i));
    for (int i = 0; i < enc_code_.params().count(); ++i) out.push_back(&enc_code_.params().value(i));
    for (int i = 0; i < enc_compat_.params().count(); ++i) out.push_back(&enc_compat_.params().value(i));
    return out;
  }

  void save(const std::filesystem::path& dir) const {
    NamedTensors c;
    detail::append_meta(c, cfg_, "shape", trained_);
    gen_.params().save_into(c, "gen.");
    enc_code_.params().save_into(c, "enc_code.");
    enc_compat_.params().save_into(c, "enc_compat.");
    write_container(dir, kCheckpointVersion, c);
  }

  static ShapeStage load(const std::filesystem::path& dir) {
    const auto c = read_container(dir, kCheckpointVersion);
    bool trained = false;
    const auto cfg = detail::parse_meta<T>(c, "shape", trained);
    ShapeStage stage(cfg);
    stage.gen_.params().load_from(c, "gen.");
    stage.enc_code_.params().load_from(c, "enc_code.");
    stage.enc_compat_.params().load_from(c, "enc_compat.");
    stage.trained_ = trained;
    return stage;
  }

  // Draw n segmentation maps conditioned on the masked context. Latents
  // come from the compatibility prior (or the standard normal under the
  // ablation), scaled by the temperature.
  std::vector<Tensor<T>> sample(const Tensor<T>& s_hat, const Tensor<T>& p_s, const Tensor<T>& x_c, int n,
                                T temperature, Rng& rng) const {
    const auto prior = cfg_.standard_prior ? DiagonalGaussian<T>::standard(cfg_.latent_dim)
                                           : enc_compat_.encode(x_c);
    const auto ctx = concat_channels<T>({&s_hat, &p_s});
    std::vector<Tensor<T>> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
      if (temperature == T(0)) {
        if (out.empty()) {
          out.push_back(gen_.generate(ctx, prior.mean));
        } else {
          out.push_back(out.front());  // mean code, identical by construction
        }
        continue;
      }
      std::vector<T> z(cfg_.latent_dim);
      for (int d = 0; d < cfg_.latent_dim; ++d) {
        z[d] = prior.mean[d] + temperature * std::exp(prior.log_var[d] / T(2)) * static_cast<T>(rng.normal());
      }
      out.push_back(gen_.generate(ctx, z));
    }
    return out;
  }

  friend StepMetrics train_step_shape(ShapeStage& stage, const std::vector<ShapeExample<T>>& batch,
                                      Adam<T>& opt, Rng& rng) {
    if (batch.empty()) throw TrainingError("empty batch");
    const int n_gen = stage.gen_.params().count();
    const int n_code = stage.enc_code_.params().count();
    const int n_compat = stage.enc_compat_.params().count();
    std::vector<Tensor<T>> grads;
    auto params = stage.parameters();
    grads.reserve(params.size());
    for (auto* p : params) grads.emplace_back(p->shape());

    StepMetrics metrics;
    for (const auto& ex : batch) {
      Tape<T> tp;
      const auto pv_gen = stage.gen_.params().bind(tp);
      const auto pv_code = stage.enc_code_.params().bind(tp);
      const auto pv_compat = stage.enc_compat_.params().bind(tp);

      const auto ctx = tp.leaf(concat_channels<T>({&ex.s_hat, &ex.p_s}));
      const auto [mq, lq] = stage.enc_code_.forward(tp, tp.leaf(ex.x_s), pv_code);

      std::vector<T> noise(stage.cfg_.latent_dim);
      for (auto& v : noise) v = static_cast<T>(rng.normal());
      const auto z = ops::reparam(tp, mq, lq, noise);
      const auto pred = stage.gen_.forward(tp, ctx, z, pv_gen);
      const auto ce = ops::cross_entropy_map(tp, pred, ex.truth);

      typename Tape<T>::Var kl;
      if (stage.cfg_.standard_prior) {
        kl = ops::kl_to_standard_op(tp, mq, lq);
      } else {
        const auto [mp, lp] = stage.enc_compat_.forward(tp, tp.leaf(ex.x_c), pv_compat);
        kl = ops::kl_between_op(tp, mq, lq, mp, lp);
      }
      const auto total = ops::add(tp, ce, ops::scale(tp, kl, stage.cfg_.lambda_kl));
      const double total_v = static_cast<double>(tp.val(total)[0]);
      if (!std::isfinite(total_v)) {
        throw TrainingError("non-finite shape loss (ce " + std::to_string(tp.val(ce)[0]) + ", kl " +
                            std::to_string(tp.val(kl)[0]) + ")");
      }
      metrics.recon_loss += tp.val(ce)[0];
      metrics.kl += tp.val(kl)[0];
      metrics.total += total_v;

      tp.backward(total);
      detail::accumulate_grads(tp, pv_gen, grads, 0);
      detail::accumulate_grads(tp, pv_code, grads, n_gen);
      detail::accumulate_grads(tp, pv_compat, grads, n_gen + n_code);
    }
    (void)n_compat;

    const T inv = T(1) / static_cast<T>(batch.size());
    for (auto& g : grads) {
      for (std::size_t j = 0; j < g.size(); ++j) g[j] *= inv;
    }
    opt.step(params, grads);
    stage.trained_ = true;

    metrics.recon_loss /= batch.size();
    metrics.kl /= batch.size();
    metrics.total /= batch.size();
    return metrics;
  }

 private:
  StageConfig<T> cfg_;
  GenNetwork<T> gen_;
  GaussEncoder<T> enc_code_;
  GaussEncoder<T> enc_compat_;
  bool trained_ = false;
};

}  // namespace finet
