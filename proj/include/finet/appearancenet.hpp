#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "finet/shapenet.hpp"

namespace finet {

// Weights of the frozen feature extractor are derived from this seed
// everywhere, so checkpoints only need to record the seed.
inline constexpr std::uint64_t kExtractorSeed = 0x66656174757265ULL;

// Small random convolutional pyramid standing in for a pretrained
// perceptual network. Five stages of conv3x3 + relu + avgpool2; the
// weights are fixed at construction and never updated.
template <typename T>
class FixedFeatureExtractor {
 public:
  static constexpr int kStages = 5;

  explicit FixedFeatureExtractor(std::uint64_t seed = kExtractorSeed) {
    static constexpr int kWidths[kStages] = {8, 16, 32, 32, 32};
    int c_in = 3;
    for (int s = 0; s < kStages; ++s) {
      const std::string p = "stage" + std::to_string(s);
      params_.add(p + ".w", {3, 3, c_in, kWidths[s]});
      params_.add(p + ".b", {kWidths[s]});
      c_in = kWidths[s];
    }
    Rng rng(seed);
    params_.init(rng);
  }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  // Stage activations phi_1..phi_5 for an image already on a tape.
  std::vector<typename Tape<T>::Var> forward(Tape<T>& tp, typename Tape<T>::Var img,
                                             const std::vector<typename Tape<T>::Var>& pv) const {
    std::vector<typename Tape<T>::Var> feats;
    feats.reserve(kStages);
    auto x = img;
    for (int s = 0; s < kStages; ++s) {
      x = ops::relu(tp, ops::conv2d(tp, x, pv[2 * s], pv[2 * s + 1], 1));
      x = ops::avgpool2(tp, x);
      feats.push_back(x);
    }
    return feats;
  }

  std::vector<Tensor<T>> features(const Tensor<T>& img) const {
    Tape<T> tp;
    const auto pv = params_.bind(tp);
    const auto feats = forward(tp, tp.leaf(img), pv);
    std::vector<Tensor<T>> out;
    out.reserve(feats.size());
    for (auto v : feats) out.push_back(tp.val(v));
    return out;
  }

 private:
  ParamStore<T> params_;
};

// Gram matrix of an HWC feature map: rows of the C x (H*W) matrix
// dotted against each other, no normalization.
template <typename T>
Tensor<T> gram(const Tensor<T>& feat) {
  Tape<T> tp;
  return tp.val(ops::gram_hwc(tp, tp.leaf(feat)));
}

namespace ops {

// Tape form of the reconstruction loss; the target image is constant.
template <typename T>
Var<T> loss_rec_op(Tape<T>& tp, Var<T> pred, const Tensor<T>& target, const FixedFeatureExtractor<T>& ext,
                   const std::vector<Var<T>>& pv_ext) {
  if (!tp.val(pred).same_shape(target)) throw DimensionError("loss_rec image shape mismatch");
  const auto target_feats = ext.features(target);
  const auto pred_feats = ext.forward(tp, pred, pv_ext);

  auto weighted_l1 = [&tp](Var<T> a, const Tensor<T>& b) {
    return ops::scale(tp, ops::l1_to_const(tp, a, b), T(1) / static_cast<T>(b.size()));
  };

  auto total = weighted_l1(pred, target);
  for (int l = 0; l < FixedFeatureExtractor<T>::kStages; ++l) {
    total = ops::add(tp, total, weighted_l1(pred_feats[l], target_feats[l]));
    const auto g_target = gram(target_feats[l]);
    total = ops::add(tp, total, weighted_l1(ops::gram_hwc(tp, pred_feats[l]), g_target));
  }
  return total;
}

}  // namespace ops

// Perceptual + style reconstruction loss between two images of equal
// size. Level 0 is the raw image; levels 1..5 are extractor stages.
// Each term is L1 weighted by the reciprocal of its element count.
template <typename T>
T loss_rec(const Tensor<T>& target, const Tensor<T>& pred, const FixedFeatureExtractor<T>& ext) {
  Tape<T> tp;
  const auto pv = ext.params().bind(tp);
  const auto node = ops::loss_rec_op(tp, tp.leaf(pred), target, ext, pv);
  return tp.val(node)[0];
}

// Everything one training sample feeds the appearance stage.
template <typename T>
struct AppearanceExample {
  Tensor<T> i_hat;   // masked image, image res x 3
  Tensor<T> p_a;     // segmentation + face RGB, image res x 11
  Tensor<T> x_a;     // masked target appearance, encoder res x 3
  Tensor<T> x_c;     // context garments, encoder res x 12
  Tensor<T> target;  // full image, image res x 3
  Box box;           // plausible region the loss is restricted to
};

template <typename T>
AppearanceExample<T> make_appearance_example(const OutfitSample& sample, Category cat, int encoder_size) {
  const auto seg = tensor_cast<T>(sample.seg);
  const auto image = tensor_cast<T>(sample.image);
  AppearanceExample<T> ex;
  ex.i_hat = mask_appearance_context(image, seg, cat);
  ex.p_a = person_rep_appearance(seg, image);
  ex.x_a = appearance_code_input(image, seg, cat, encoder_size);
  ex.x_c = context_garments(image, seg, cat, encoder_size);
  ex.target = image;
  ex.box = plausible_box(seg, cat);
  return ex;
}

// Appearance generation stage: renders RGB into the masked region given
// the shape map context, with the same latent structure as the shape
// stage.
template <typename T>
class AppearanceStage {
 public:
  explicit AppearanceStage(StageConfig<T> cfg)
      : cfg_(cfg),
        gen_(GenConfig{cfg.image_size, 3 + kSegChannels + 3, 3, cfg.latent_dim, cfg.levels,
                       cfg.base_channels, Head::Tanh}),
        enc_code_(EncConfig{cfg.encoder_size(), 3, cfg.latent_dim, cfg.levels, cfg.base_channels}),
        enc_compat_(EncConfig{cfg.encoder_size(), 3 * kNumCategories, cfg.latent_dim, cfg.levels,
                              cfg.base_channels}) {}

  const StageConfig<T>& config() const { return cfg_; }
  GenNetwork<T>& generator() { return gen_; }
  const GenNetwork<T>& generator() const { return gen_; }
  GaussEncoder<T>& code_encoder() { return enc_code_; }
  GaussEncoder<T>& compat_encoder() { return enc_compat_; }
  const GaussEncoder<T>& compat_encoder() const { return enc_compat_; }
  const GaussEncoder<T>& code_encoder() const { return enc_code_; }
  const FixedFeatureExtractor<T>& extractor() const { return ext_; }
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
    detail::append_meta(c, cfg_, "appearance", trained_);
    c.set_meta("extractor_seed", std::to_string(kExtractorSeed));
    gen_.params().save_into(c, "gen.");
    enc_code_.params().save_into(c, "enc_code.");
    enc_compat_.params().save_into(c, "enc_compat.");
    write_container(dir, kCheckpointVersion, c);
  }

  static AppearanceStage load(const std::filesystem::path& dir) {
    const auto c = read_container(dir, kCheckpointVersion);
    bool trained = false;
    const auto cfg = detail::parse_meta<T>(c, "appearance", trained);
    AppearanceStage stage(cfg);
    stage.gen_.params().load_from(c, "gen.");
    stage.enc_code_.params().load_from(c, "enc_code.");
    stage.enc_compat_.params().load_from(c, "enc_compat.");
    stage.trained_ = trained;
    return stage;
  }

  std::vector<Tensor<T>> sample(const Tensor<T>& i_hat, const Tensor<T>& p_a, const Tensor<T>& x_c, int n,
                                T temperature, Rng& rng) const {
    const auto prior = cfg_.standard_prior ? DiagonalGaussian<T>::standard(cfg_.latent_dim)
                                           : enc_compat_.encode(x_c);
    const auto ctx = concat_channels<T>({&i_hat, &p_a});
    std::vector<Tensor<T>> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
      if (temperature == T(0)) {
        if (out.empty()) {
          out.push_back(gen_.generate(ctx, prior.mean));
        } else {
          out.push_back(out.front());
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

  friend StepMetrics train_step_appearance(AppearanceStage& stage,
                                           const std::vector<AppearanceExample<T>>& batch, Adam<T>& opt,
                                           Rng& rng) {
    if (batch.empty()) throw TrainingError("empty batch");
    const int n_gen = stage.gen_.params().count();
    const int n_code = stage.enc_code_.params().count();
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
      const auto pv_ext = stage.ext_.params().bind(tp);

      const auto ctx = tp.leaf(concat_channels<T>({&ex.i_hat, &ex.p_a}));
      const auto [mq, lq] = stage.enc_code_.forward(tp, tp.leaf(ex.x_a), pv_code);

      std::vector<T> noise(stage.cfg_.latent_dim);
      for (auto& v : noise) v = static_cast<T>(rng.normal());
      const auto z = ops::reparam(tp, mq, lq, noise);
      const auto img = stage.gen_.forward(tp, ctx, z, pv_gen);

      // Reconstruction is judged on the plausible region only, resized
      // back up to full resolution before the feature pyramid.
      const int s = stage.cfg_.image_size;
      const auto region = ops::resize_bilinear_op(tp, ops::crop_box(tp, img, ex.box), s, s);
      const auto target_region = resize_bilinear(crop(ex.target, ex.box), s, s);
      const auto rec = ops::loss_rec_op(tp, region, target_region, stage.ext_, pv_ext);

      typename Tape<T>::Var kl;
      if (stage.cfg_.standard_prior) {
        kl = ops::kl_to_standard_op(tp, mq, lq);
      } else {
        const auto [mp, lp] = stage.enc_compat_.forward(tp, tp.leaf(ex.x_c), pv_compat);
        kl = ops::kl_between_op(tp, mq, lq, mp, lp);
      }
      const auto total = ops::add(tp, rec, ops::scale(tp, kl, stage.cfg_.lambda_kl));
      const double total_v = static_cast<double>(tp.val(total)[0]);
      if (!std::isfinite(total_v)) {
        throw TrainingError("non-finite appearance loss (rec " + std::to_string(tp.val(rec)[0]) + ", kl " +
                            std::to_string(tp.val(kl)[0]) + ")");
      }
      metrics.recon_loss += tp.val(rec)[0];
      metrics.kl += tp.val(kl)[0];
      metrics.total += total_v;

      tp.backward(total);
      detail::accumulate_grads(tp, pv_gen, grads, 0);
      detail::accumulate_grads(tp, pv_code, grads, n_gen);
      detail::accumulate_grads(tp, pv_compat, grads, n_gen + n_code);
      // Extractor gradients are computed but dropped: the pyramid stays
      // frozen.
    }

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
  FixedFeatureExtractor<T> ext_;
  bool trained_ = false;
};

}  // namespace finet
