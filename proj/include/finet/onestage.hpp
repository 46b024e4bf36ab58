#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "finet/appearancenet.hpp"

namespace finet {

// Everything one training sample feeds the one-stage baseline. The
// context merges both stages' conditioning: pose heatmaps, face RGB,
// masked segmentation and masked image, 32 channels total.
template <typename T>
struct OneStageExample {
  Tensor<T> ctx;     // image res x 32
  Tensor<T> x_a;     // masked target appearance, encoder res x 3
  Tensor<T> x_c;     // context garments, encoder res x 12
  Tensor<T> target;  // full image, image res x 3
  Box box;
};

// Merged conditioning map for the baseline.
template <typename T>
Tensor<T> onestage_context(const Tensor<T>& image, const Tensor<T>& seg, const Tensor<T>& pose,
                           Category cat) {
  const int h = image.dim(0), w = image.dim(1);
  Tensor<T> face({h, w, 3});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (seg.at(y, x, kSegFace) > T(0.5)) {
        for (int c = 0; c < 3; ++c) face.at(y, x, c) = image.at(y, x, c);
      }
    }
  }
  const auto s_hat = mask_shape_context(seg, cat);
  const auto i_hat = mask_appearance_context(image, seg, cat);
  return concat_channels<T>({&pose, &face, &s_hat, &i_hat});
}

template <typename T>
OneStageExample<T> make_onestage_example(const OutfitSample& sample, Category cat, int encoder_size) {
  const auto seg = tensor_cast<T>(sample.seg);
  const auto pose = tensor_cast<T>(sample.pose);
  const auto image = tensor_cast<T>(sample.image);
  OneStageExample<T> ex;
  ex.ctx = onestage_context(image, seg, pose, cat);
  ex.x_a = appearance_code_input(image, seg, cat, encoder_size);
  ex.x_c = context_garments(image, seg, cat, encoder_size);
  ex.target = image;
  ex.box = plausible_box(seg, cat);
  return ex;
}

// Baseline that skips the intermediate shape map and paints RGB straight
// from the merged conditioning. Same latent machinery and loss as the
// appearance stage.
template <typename T>
class OneStageModel {
 public:
  explicit OneStageModel(StageConfig<T> cfg)
      : cfg_(cfg),
        gen_(GenConfig{cfg.image_size, kPoseChannels + 3 + kSegChannels + 3, 3, cfg.latent_dim, cfg.levels,
                       cfg.base_channels, Head::Tanh}),
        enc_code_(EncConfig{cfg.encoder_size(), 3, cfg.latent_dim, cfg.levels, cfg.base_channels}),
        enc_compat_(EncConfig{cfg.encoder_size(), 3 * kNumCategories, cfg.latent_dim, cfg.levels,
                              cfg.base_channels}) {}

  const StageConfig<T>& config() const { return cfg_; }
  GenNetwork<T>& generator() { return gen_; }
  const GenNetwork<T>& generator() const { return gen_; }
  const GaussEncoder<T>& code_encoder() const { return enc_code_; }
  const GaussEncoder<T>& compat_encoder() const { return enc_compat_; }
  const FixedFeatureExtractor<T>& extractor() const { return ext_; }
  bool trained() const { return trained_; }

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
    detail::append_meta(c, cfg_, "onestage", trained_);
    c.set_meta("extractor_seed", std::to_string(kExtractorSeed));
    gen_.params().save_into(c, "gen.");
    enc_code_.params().save_into(c, "enc_code.");
    enc_compat_.params().save_into(c, "enc_compat.");
    write_container(dir, kCheckpointVersion, c);
  }

  static OneStageModel load(const std::filesystem::path& dir) {
    const auto c = read_container(dir, kCheckpointVersion);
    bool trained = false;
    const auto cfg = detail::parse_meta<T>(c, "onestage", trained);
    OneStageModel model(cfg);
    model.gen_.params().load_from(c, "gen.");
    model.enc_code_.params().load_from(c, "enc_code.");
    model.enc_compat_.params().load_from(c, "enc_compat.");
    model.trained_ = trained;
    return model;
  }

  std::vector<Tensor<T>> sample(const Tensor<T>& ctx, const Tensor<T>& x_c, int n, T temperature,
                                Rng& rng) const {
    const auto prior = cfg_.standard_prior ? DiagonalGaussian<T>::standard(cfg_.latent_dim)
                                           : enc_compat_.encode(x_c);
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

  friend StepMetrics train_step_onestage(OneStageModel& model, const std::vector<OneStageExample<T>>& batch,
                                         Adam<T>& opt, Rng& rng) {
    if (batch.empty()) throw TrainingError("empty batch");
    const int n_gen = model.gen_.params().count();
    const int n_code = model.enc_code_.params().count();
    std::vector<Tensor<T>> grads;
    auto params = model.parameters();
    grads.reserve(params.size());
    for (auto* p : params) grads.emplace_back(p->shape());

    StepMetrics metrics;
    for (const auto& ex : batch) {
      Tape<T> tp;
      const auto pv_gen = model.gen_.params().bind(tp);
      const auto pv_code = model.enc_code_.params().bind(tp);
      const auto pv_compat = model.enc_compat_.params().bind(tp);
      const auto pv_ext = model.ext_.params().bind(tp);

      const auto [mq, lq] = model.enc_code_.forward(tp, tp.leaf(ex.x_a), pv_code);
      std::vector<T> noise(model.cfg_.latent_dim);
      for (auto& v : noise) v = static_cast<T>(rng.normal());
      const auto z = ops::reparam(tp, mq, lq, noise);
      const auto img = model.gen_.forward(tp, tp.leaf(ex.ctx), z, pv_gen);

      const int s = model.cfg_.image_size;
      const auto region = ops::resize_bilinear_op(tp, ops::crop_box(tp, img, ex.box), s, s);
      const auto target_region = resize_bilinear(crop(ex.target, ex.box), s, s);
      const auto rec = ops::loss_rec_op(tp, region, target_region, model.ext_, pv_ext);

      typename Tape<T>::Var kl;
      if (model.cfg_.standard_prior) {
        kl = ops::kl_to_standard_op(tp, mq, lq);
      } else {
        const auto [mp, lp] = model.enc_compat_.forward(tp, tp.leaf(ex.x_c), pv_compat);
        kl = ops::kl_between_op(tp, mq, lq, mp, lp);
      }
      const auto total = ops::add(tp, rec, ops::scale(tp, kl, model.cfg_.lambda_kl));
      const double total_v = static_cast<double>(tp.val(total)[0]);
      if (!std::isfinite(total_v)) {
        throw TrainingError("non-finite one-stage loss");
      }
      metrics.recon_loss += tp.val(rec)[0];
      metrics.kl += tp.val(kl)[0];
      metrics.total += total_v;

      tp.backward(total);
      detail::accumulate_grads(tp, pv_gen, grads, 0);
      detail::accumulate_grads(tp, pv_code, grads, n_gen);
      detail::accumulate_grads(tp, pv_compat, grads, n_gen + n_code);
    }

    const T inv = T(1) / static_cast<T>(batch.size());
    for (auto& g : grads) {
      for (std::size_t j = 0; j < g.size(); ++j) g[j] *= inv;
    }
    opt.step(params, grads);
    model.trained_ = true;

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
