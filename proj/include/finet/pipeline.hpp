#pragma once

#include <vector>

#include "finet/appearancenet.hpp"
#include "finet/shapenet.hpp"

namespace finet {

// One composited inference output: the input image/segmentation with
// the plausible region replaced by generated content, untouched
// elsewhere.
template <typename T>
struct RenderResult {
  Tensor<T> image;
  Tensor<T> seg;
  Box box;
};

namespace detail {

template <typename T>
void validate_person(const ShapeStage<T>& shape, const AppearanceStage<T>& app, const Tensor<T>& image,
                     const Tensor<T>& seg, const Tensor<T>& pose) {
  const int s = shape.config().image_size;
  if (app.config().image_size != s) throw DimensionError("stage image sizes disagree");
  if (shape.config().latent_dim != app.config().latent_dim) {
    // Nothing shares the latent, but a mismatch almost always means two
    // unrelated checkpoints were paired up.
    throw DimensionError("stage latent dims disagree");
  }
  if (image.rank() != 3 || image.dim(0) != s || image.dim(1) != s || image.dim(2) != 3) {
    throw DimensionError("image must be " + std::to_string(s) + "x" + std::to_string(s) + "x3");
  }
  if (seg.rank() != 3 || seg.dim(0) != s || seg.dim(1) != s || seg.dim(2) != kSegChannels) {
    throw DimensionError("segmentation must be " + std::to_string(s) + "x" + std::to_string(s) + "x8");
  }
  if (pose.rank() != 3 || pose.dim(0) != s || pose.dim(1) != s || pose.dim(2) != kPoseChannels) {
    throw DimensionError("pose must be " + std::to_string(s) + "x" + std::to_string(s) + "x18");
  }
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      T sum = 0;
      for (int c = 0; c < kSegChannels; ++c) {
        const T v = seg.at(y, x, c);
        if (v != T(0) && v != T(1)) throw ContractError("segmentation is not one-hot");
        sum += v;
      }
      if (sum != T(1)) throw ContractError("segmentation is not one-hot");
    }
  }
}

// Latent draw: mean plus temperature-scaled noise. Temperature zero
// consumes no randomness.
template <typename T>
std::vector<T> draw_code(const DiagonalGaussian<T>& prior, T temperature, Rng& rng) {
  std::vector<T> z(prior.mean);
  if (temperature == T(0)) return z;
  for (int d = 0; d < prior.dim(); ++d) {
    z[d] += temperature * std::exp(prior.log_var[d] / T(2)) * static_cast<T>(rng.normal());
  }
  return z;
}

template <typename T>
DiagonalGaussian<T> stage_prior(const GaussEncoder<T>& compat, bool standard_prior, const Tensor<T>& x_c,
                                int latent_dim) {
  return standard_prior ? DiagonalGaussian<T>::standard(latent_dim) : compat.encode(x_c);
}

// Shared per-sample path: generate a layout from z_s, discretize and
// composite it, condition the appearance generator on the result, and
// composite the rendered pixels. Both stages read the person only
// through the masked context and clothing-agnostic channels; the target
// garment's own mask and pixels are never consulted.
template <typename T>
RenderResult<T> render_with_codes(const ShapeStage<T>& shape, const AppearanceStage<T>& app,
                                  const Tensor<T>& image, const Tensor<T>& seg, const Tensor<T>& pose,
                                  Category cat, const std::vector<T>& z_s, const std::vector<T>& z_a) {
  const int s = shape.config().image_size;
  const Box box = plausible_box(seg, cat);
  const auto s_hat = mask_shape_context(seg, cat);
  const auto p_s = person_rep_shape(pose, seg);
  const auto i_hat = mask_appearance_context(image, seg, cat);

  const auto probs = shape.generator().generate(concat_channels<T>({&s_hat, &p_s}), z_s);
  const auto hard = discretize(probs);
  Tensor<T> seg_out = seg;
  paste(seg_out, crop(hard, box), box);

  // p_a: composited layout plus face RGB. The face mask comes from the
  // input segmentation (person identity, same source as p_s), so the
  // generator's layout cannot redirect reads into the erased region.
  Tensor<T> p_a({s, s, kSegChannels + 3});
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      for (int c = 0; c < kSegChannels; ++c) p_a.at(y, x, c) = seg_out.at(y, x, c);
      const bool face = seg.at(y, x, kSegFace) > T(0.5);
      for (int c = 0; c < 3; ++c) p_a.at(y, x, kSegChannels + c) = face ? image.at(y, x, c) : T(0);
    }
  }

  const auto rendered = app.generator().generate(concat_channels<T>({&i_hat, &p_a}), z_a);
  Tensor<T> image_out = image;
  paste(image_out, crop(rendered, box), box);
  return RenderResult<T>{std::move(image_out), std::move(seg_out), box};
}

}  // namespace detail

// Diverse compatible inpainting: n independent draws from the
// compatibility priors (one shape draw paired with one appearance draw
// per output). Temperature scales the latent noise; zero freezes both
// codes at the prior means.
template <typename T>
std::vector<RenderResult<T>> inpaint(const ShapeStage<T>& shape, const AppearanceStage<T>& app,
                                     const Tensor<T>& image, const Tensor<T>& seg, const Tensor<T>& pose,
                                     Category cat, int n, T temperature, Rng& rng) {
  detail::validate_person(shape, app, image, seg, pose);
  const auto x_cs = context_garments(image, seg, cat, shape.config().encoder_size());
  const auto x_ca = context_garments(image, seg, cat, app.config().encoder_size());
  const auto prior_s = detail::stage_prior(shape.compat_encoder(), shape.config().standard_prior, x_cs,
                                           shape.config().latent_dim);
  const auto prior_a = detail::stage_prior(app.compat_encoder(), app.config().standard_prior, x_ca,
                                           app.config().latent_dim);
  std::vector<RenderResult<T>> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const auto z_s = detail::draw_code(prior_s, temperature, rng);
    const auto z_a = detail::draw_code(prior_a, temperature, rng);
    out.push_back(detail::render_with_codes(shape, app, image, seg, pose, cat, z_s, z_a));
  }
  return out;
}

// Clothing transfer: render a garment whose shape code comes from t_s
// and appearance code from t_a (posterior means, no noise).
template <typename T>
RenderResult<T> transfer(const ShapeStage<T>& shape, const AppearanceStage<T>& app, const Tensor<T>& image,
                         const Tensor<T>& seg, const Tensor<T>& pose, Category cat, const Tensor<T>& t_s,
                         const Tensor<T>& t_a) {
  detail::validate_person(shape, app, image, seg, pose);
  const int es = shape.config().encoder_size();
  const int ea = app.config().encoder_size();
  if (t_s.rank() != 3 || t_s.dim(0) != es || t_s.dim(1) != es || t_s.dim(2) != 1) {
    throw DimensionError("target shape code input must be " + std::to_string(es) + "x" + std::to_string(es) +
                         "x1");
  }
  if (t_a.rank() != 3 || t_a.dim(0) != ea || t_a.dim(1) != ea || t_a.dim(2) != 3) {
    throw DimensionError("target appearance code input must be " + std::to_string(ea) + "x" +
                         std::to_string(ea) + "x3");
  }
  const auto z_s = shape.code_encoder().encode(t_s).mean;
  const auto z_a = app.code_encoder().encode(t_a).mean;
  return detail::render_with_codes(shape, app, image, seg, pose, cat, z_s, z_a);
}

// Clothing reconstruction: transfer with the person's own garment as
// the target.
template <typename T>
RenderResult<T> reconstruct(const ShapeStage<T>& shape, const AppearanceStage<T>& app, const Tensor<T>& image,
                            const Tensor<T>& seg, const Tensor<T>& pose, Category cat) {
  const auto t_s = shape_code_input(seg, cat, shape.config().encoder_size());
  const auto t_a = appearance_code_input(image, seg, cat, app.config().encoder_size());
  return transfer(shape, app, image, seg, pose, cat, t_s, t_a);
}

}  // namespace finet
