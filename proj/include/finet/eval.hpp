#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "finet/pipeline.hpp"

namespace finet {

// RGB distance threshold separating garment pixels from the renderer's
// background and skin colors ([0,1] units). Garment saturation/value
// floors keep every legal garment color farther than this from all four
// reference colors.
inline constexpr double kPixelTau = 0.25;

namespace detail {
inline constexpr double kTwoPi = 2.0 * 3.14159265358979323846;
}

inline constexpr int kEmbedderInput = 32;
inline constexpr int kEmbedderDim = 32;
inline constexpr double kEmbedderMargin = 0.2;

// ---------------------------------------------------------------------------
// Garment extraction from pixels.

template <typename T>
Tensor<T> mask_from_seg(const Tensor<T>& seg, Category cat) {
  const int h = seg.dim(0), w = seg.dim(1);
  const int ch = seg_channel(cat);
  Tensor<T> mask({h, w, 1});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) mask.at(y, x, 0) = seg.at(y, x, ch) > T(0.5) ? T(1) : T(0);
  }
  return mask;
}

// Classify pixels inside the box as garment when their color is far
// from every non-garment reference color. Works on raw RGB alone, so
// the same instrument measures models with and without segmentation
// output.
template <typename T>
Tensor<T> mask_from_rgb(const Tensor<T>& image, const Box& box) {
  static constexpr const double* kRefs[4] = {kBackgroundRgb, kFaceRgb, kUpperSkinRgb, kLowerSkinRgb};
  const int h = image.dim(0), w = image.dim(1);
  Tensor<T> mask({h, w, 1});
  for (int y = box.y0; y < box.y1; ++y) {
    for (int x = box.x0; x < box.x1; ++x) {
      double rgb[3];
      for (int c = 0; c < 3; ++c) rgb[c] = (static_cast<double>(image.at(y, x, c)) + 1.0) / 2.0;
      double min_d = 1e9;
      for (const double* ref : kRefs) {
        double d2 = 0;
        for (int c = 0; c < 3; ++c) d2 += (rgb[c] - ref[c]) * (rgb[c] - ref[c]);
        min_d = std::min(min_d, std::sqrt(d2));
      }
      if (min_d > kPixelTau) mask.at(y, x, 0) = T(1);
    }
  }
  return mask;
}

template <typename Ta, typename Tb>
double mask_iou(const Tensor<Ta>& a, const Tensor<Tb>& b) {
  if (a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1)) throw DimensionError("iou size mismatch");
  long long inter = 0, uni = 0;
  for (int y = 0; y < a.dim(0); ++y) {
    for (int x = 0; x < a.dim(1); ++x) {
      const bool pa = a.at(y, x, 0) > Ta(0.5);
      const bool pb = b.at(y, x, 0) > Tb(0.5);
      inter += pa && pb;
      uni += pa || pb;
    }
  }
  if (uni == 0) return 1.0;  // both empty: identical
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Best IoU of a mask against the category's canonical shape templates.
// Sharp, correctly placed garment boundaries score high; smears score
// low against every template.
template <typename T>
double boundary_iou(const Tensor<T>& mask, Category cat) {
  const int size = mask.dim(0);
  double best = 0;
  for (const auto& code : category_shape_codes(cat)) {
    best = std::max(best, mask_iou(mask, render_garment_mask(code, size)));
  }
  return best;
}

// Categories rendered after the given one; their pixels can cover it.
inline std::vector<int> later_drawn_channels(Category cat) {
  switch (cat) {
    case Category::Bottom: return {kSegShoes, kSegTop, kSegHat};
    case Category::Shoes: return {kSegTop, kSegHat};
    case Category::Top: return {kSegHat};
    case Category::Hat: return {};
  }
  throw ContractError("bad category");
}

// Recover garment parameters from pixels: circular-mean hue plus mean
// saturation/value over the visible mask, shape classified as the
// best-IoU canonical template. Templates are compared after removing
// the parts the segmentation says are covered by later-drawn garments,
// so occlusion does not skew the classification. An empty mask reports
// the garment absent.
template <typename T>
GarmentParams extract_garment_estimate(const Tensor<T>& image, const Tensor<T>& seg, Category cat) {
  const auto mask = mask_from_seg(seg, cat);
  GarmentParams est;
  est.category = cat;
  est.present = false;

  double sin_sum = 0, cos_sum = 0, sat_sum = 0, val_sum = 0;
  long long area = 0;
  for (int y = 0; y < image.dim(0); ++y) {
    for (int x = 0; x < image.dim(1); ++x) {
      if (mask.at(y, x, 0) <= T(0.5)) continue;
      double rgb[3];
      for (int c = 0; c < 3; ++c) rgb[c] = (static_cast<double>(image.at(y, x, c)) + 1.0) / 2.0;
      double hue, sat, val;
      rgb_to_hsv(rgb[0], rgb[1], rgb[2], hue, sat, val);
      sin_sum += std::sin(detail::kTwoPi * hue);
      cos_sum += std::cos(detail::kTwoPi * hue);
      sat_sum += sat;
      val_sum += val;
      ++area;
    }
  }
  if (area == 0) return est;

  est.present = true;
  est.hue = wrap_unit(std::atan2(sin_sum, cos_sum) / detail::kTwoPi);
  est.saturation = sat_sum / area;
  est.value = val_sum / area;

  const auto later = later_drawn_channels(cat);
  double best = -1;
  for (const auto& code : category_shape_codes(cat)) {
    auto tmpl = render_garment_mask(code, image.dim(0));
    for (int y = 0; y < tmpl.dim(0); ++y) {
      for (int x = 0; x < tmpl.dim(1); ++x) {
        for (int ch : later) {
          if (seg.at(y, x, ch) > T(0.5)) tmpl.at(y, x, 0) = 0.0f;
        }
      }
    }
    const double iou = mask_iou(mask, tmpl);
    if (iou > best) {
      best = iou;
      est.sleeve = code.sleeve;
      est.length = code.length;
      est.bottom = code.bottom;
      est.kind = code.kind;
    }
  }
  return est;
}

// Exact compatibility of one generated garment, via parameter recovery
// and the dataset's rule oracle.
template <typename T>
double oracle_compat_sample(const Tensor<T>& image, const Tensor<T>& seg, Category cat,
                            const StyleSeed& style) {
  return compat_oracle(extract_garment_estimate(image, seg, cat), style);
}

template <typename T>
double oracle_compat_rate(const std::vector<RenderResult<T>>& samples, Category cat, const StyleSeed& style) {
  if (samples.empty()) throw ContractError("oracle_compat_rate over no samples");
  double sum = 0;
  for (const auto& r : samples) sum += oracle_compat_sample(r.image, r.seg, cat, style);
  return sum / samples.size();
}

// ---------------------------------------------------------------------------
// Diversity.

// Inpainted region of a result, resized to a fixed square for the
// feature pyramid.
template <typename T>
Tensor<T> region_crop(const RenderResult<T>& r, int size) {
  return resize_bilinear(crop(r.image, r.box), size, size);
}

// Mean pairwise feature distance over all crop pairs: per extractor
// stage the RMS-normalized L2 distance, averaged across stages.
template <typename T>
double diversity_score(const std::vector<Tensor<T>>& crops, const FixedFeatureExtractor<T>& ext) {
  const int n = static_cast<int>(crops.size());
  if (n < 2) return 0;
  std::vector<std::vector<Tensor<T>>> feats;
  feats.reserve(n);
  for (const auto& c : crops) feats.push_back(ext.features(c));

  double total = 0;
  int pairs = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double dist = 0;
      for (int l = 0; l < FixedFeatureExtractor<T>::kStages; ++l) {
        const auto& u = feats[i][l];
        const auto& v = feats[j][l];
        double d2 = 0;
        for (std::size_t k = 0; k < u.size(); ++k) {
          const double d = static_cast<double>(u[k]) - static_cast<double>(v[k]);
          d2 += d * d;
        }
        dist += std::sqrt(d2 / u.size());
      }
      total += dist / FixedFeatureExtractor<T>::kStages;
      ++pairs;
    }
  }
  return total / pairs;
}

// ---------------------------------------------------------------------------
// Learned compatibility embedding.

// Small conv encoder mapping a garment crop to a unit-norm embedding.
template <typename T>
class CompatEmbedder {
 public:
  CompatEmbedder() {
    params_.add("c0.w", {3, 3, 3, 16});
    params_.add("c0.b", {16});
    params_.add("c1.w", {3, 3, 16, 32});
    params_.add("c1.b", {32});
    params_.add("c2.w", {3, 3, 32, 32});
    params_.add("c2.b", {32});
    params_.add("fc.w", {4 * 4 * 32, kEmbedderDim});
    params_.add("fc.b", {kEmbedderDim});
  }

  void init(std::uint64_t seed) {
    Rng rng(seed);
    params_.init(rng);
  }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  typename Tape<T>::Var forward(Tape<T>& tp, typename Tape<T>::Var crop,
                                const std::vector<typename Tape<T>::Var>& pv) const {
    auto x = crop;
    for (int s = 0; s < 3; ++s) x = ops::relu(tp, ops::conv2d(tp, x, pv[2 * s], pv[2 * s + 1], 2));
    x = ops::fc(tp, ops::flatten(tp, x), pv[6], pv[7]);
    return ops::l2_normalize(tp, x);
  }

  std::vector<T> embed(const Tensor<T>& crop) const {
    if (crop.rank() != 3 || crop.dim(0) != kEmbedderInput || crop.dim(1) != kEmbedderInput ||
        crop.dim(2) != 3) {
      throw DimensionError("embedder expects a 32x32x3 crop");
    }
    Tape<T> tp;
    const auto pv = params_.bind(tp);
    const auto out = tp.val(forward(tp, tp.leaf(crop), pv));
    return std::vector<T>(&out[0], &out[0] + out.size());
  }

 private:
  ParamStore<T> params_;
};

template <typename T>
double compat_score(const CompatEmbedder<T>& emb, const Tensor<T>& a, const Tensor<T>& b) {
  const auto ea = emb.embed(a);
  const auto eb = emb.embed(b);
  double cos = 0;
  for (std::size_t i = 0; i < ea.size(); ++i) cos += static_cast<double>(ea[i]) * eb[i];
  return std::clamp(cos, -1.0, 1.0);
}

// Contrastive training over garment co-occurrence: crops from the same
// outfit are pulled together (squared distance), crops from different
// outfits are pushed apart up to the margin.
template <typename T>
CompatEmbedder<T> train_compat_embedding(const std::vector<OutfitSample>& data, std::uint64_t seed,
                                         int steps = 400) {
  if (data.size() < 2) throw TrainingError("compat embedding needs at least two outfits");

  std::vector<std::vector<Tensor<T>>> crops(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto image = tensor_cast<T>(data[i].image);
    const auto seg = tensor_cast<T>(data[i].seg);
    for (int c = 0; c < kNumCategories; ++c) {
      if (!data[i].garments[c].present) continue;
      crops[i].push_back(extract_garment_segment(image, seg, static_cast<Category>(c), kEmbedderInput));
    }
    if (crops[i].size() < 2) throw TrainingError("outfit without two garments cannot form positive pairs");
  }

  CompatEmbedder<T> emb;
  emb.init(detail::splitmix64(seed));
  Adam<T> opt(static_cast<T>(1e-3));
  Rng rng(seed);

  std::vector<Tensor<T>*> params;
  for (int i = 0; i < emb.params().count(); ++i) params.push_back(&emb.params().value(i));

  Tensor<T> margin({1});
  margin[0] = static_cast<T>(kEmbedderMargin);

  for (int step = 0; step < steps; ++step) {
    const int i = rng.uniform_int(static_cast<int>(data.size()));
    const int a = rng.uniform_int(static_cast<int>(crops[i].size()));
    int b = rng.uniform_int(static_cast<int>(crops[i].size()));
    while (b == a) b = rng.uniform_int(static_cast<int>(crops[i].size()));
    int j = rng.uniform_int(static_cast<int>(data.size()));
    while (j == i) j = rng.uniform_int(static_cast<int>(data.size()));
    const int c = rng.uniform_int(static_cast<int>(crops[j].size()));

    Tape<T> tp;
    const auto pv = emb.params().bind(tp);
    const auto ea = emb.forward(tp, tp.leaf(crops[i][a]), pv);
    const auto eb = emb.forward(tp, tp.leaf(crops[i][b]), pv);
    const auto ec = emb.forward(tp, tp.leaf(crops[j][c]), pv);

    const auto dpos = ops::sub(tp, ea, eb);
    const auto pos = ops::dot(tp, dpos, dpos);
    const auto dneg = ops::sub(tp, ea, ec);
    const auto d = ops::sqrt_eps(tp, ops::dot(tp, dneg, dneg));
    const auto hinge = ops::relu(tp, ops::sub(tp, tp.leaf(margin), d));
    const auto loss = ops::add(tp, pos, ops::dot(tp, hinge, hinge));

    tp.backward(loss);
    std::vector<Tensor<T>> grads;
    grads.reserve(pv.size());
    for (auto v : pv) grads.push_back(tp.grad(v));
    opt.step(params, grads);
  }
  return emb;
}

// ---------------------------------------------------------------------------
// Posterior-collapse diagnostics.

struct PosteriorDiagnostics {
  double mean_kl = 0;
  double mi_estimate = 0;
};

// mean_kl: average divergence of each posterior from its prior.
// mi_estimate: average divergence of each posterior from the aggregated
// posterior, the latter approximated by a single moment-matched
// Gaussian. Identical posteriors give zero; spread posteriors carry
// information about which sample produced them.
template <typename T>
PosteriorDiagnostics posterior_diagnostics(const std::vector<DiagonalGaussian<T>>& posteriors,
                                           const std::vector<DiagonalGaussian<T>>& priors) {
  if (posteriors.empty() || posteriors.size() != priors.size()) {
    throw ContractError("diagnostics need matched, non-empty posterior/prior lists");
  }
  const int dim = posteriors[0].dim();
  const double n = static_cast<double>(posteriors.size());

  PosteriorDiagnostics out;
  std::vector<double> mean_sum(dim, 0), second_moment(dim, 0);
  for (std::size_t i = 0; i < posteriors.size(); ++i) {
    if (posteriors[i].dim() != dim || priors[i].dim() != dim) {
      throw DimensionError("diagnostics latent dim mismatch");
    }
    out.mean_kl += static_cast<double>(kl_between(posteriors[i], priors[i]));
    for (int d = 0; d < dim; ++d) {
      const double m = posteriors[i].mean[d];
      const double v = std::exp(static_cast<double>(posteriors[i].log_var[d]));
      mean_sum[d] += m;
      second_moment[d] += v + m * m;
    }
  }
  out.mean_kl /= n;

  std::vector<T> agg_mean(dim), agg_log_var(dim);
  for (int d = 0; d < dim; ++d) {
    const double m = mean_sum[d] / n;
    const double v = std::max(second_moment[d] / n - m * m, 1e-12);
    agg_mean[d] = static_cast<T>(m);
    agg_log_var[d] = static_cast<T>(std::log(v));
  }
  const DiagonalGaussian<T> aggregated(agg_mean, agg_log_var);
  for (const auto& q : posteriors) out.mi_estimate += static_cast<double>(kl_between(q, aggregated));
  out.mi_estimate /= n;
  return out;
}

// Diagnostics of a shape stage over a dataset: posteriors from the code
// encoder on each sample's garment mask, priors from the compatibility
// encoder (or the standard normal under the ablation).
template <typename T>
PosteriorDiagnostics shape_posterior_diagnostics(const ShapeStage<T>& stage,
                                                 const std::vector<OutfitSample>& data, Category cat) {
  std::vector<DiagonalGaussian<T>> qs, ps;
  qs.reserve(data.size());
  ps.reserve(data.size());
  for (const auto& sample : data) {
    const auto seg = tensor_cast<T>(sample.seg);
    const auto image = tensor_cast<T>(sample.image);
    const int es = stage.config().encoder_size();
    qs.push_back(stage.code_encoder().encode(shape_code_input(seg, cat, es)));
    if (stage.config().standard_prior) {
      ps.push_back(DiagonalGaussian<T>::standard(stage.config().latent_dim));
    } else {
      ps.push_back(stage.compat_encoder().encode(context_garments(image, seg, cat, es)));
    }
  }
  return posterior_diagnostics(qs, ps);
}

}  // namespace finet
