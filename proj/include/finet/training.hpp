#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "finet/config.hpp"
#include "finet/onestage.hpp"

namespace finet {

struct TrainLogEntry {
  int step = 0;
  double recon_loss = 0;
  double kl = 0;
  double total = 0;
};

// One training slot per present garment per outfit: every garment takes
// a turn as the removed target while the rest form its context.
inline std::vector<std::pair<int, Category>> training_slots(const std::vector<OutfitSample>& data) {
  std::vector<std::pair<int, Category>> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (int c = 0; c < kNumCategories; ++c) {
      if (data[i].garments[c].present) out.emplace_back(static_cast<int>(i), static_cast<Category>(c));
    }
  }
  if (out.empty()) throw TrainingError("dataset holds no garments to train on");
  return out;
}

namespace detail {

template <typename T, typename MakeExample, typename Step>
std::vector<TrainLogEntry> train_loop(const std::vector<OutfitSample>& data, const TrainConfig& cfg,
                                      std::uint64_t seed, int log_every, MakeExample&& make_example,
                                      Step&& step_fn) {
  const auto slots = training_slots(data);
  Rng rng(detail::splitmix64(seed ^ 0x747261696eULL));
  std::vector<TrainLogEntry> log;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<decltype(make_example(data[0], Category::Top))> batch;
    batch.reserve(cfg.batch);
    for (int k = 0; k < cfg.batch; ++k) {
      const auto& [idx, cat] = slots[rng.uniform_int(static_cast<int>(slots.size()))];
      batch.push_back(make_example(data[idx], cat));
    }
    const StepMetrics m = step_fn(batch, rng);
    if (log_every > 0 && (step % log_every == 0 || step + 1 == cfg.steps)) {
      log.push_back({step, m.recon_loss, m.kl, m.total});
    }
  }
  return log;
}

}  // namespace detail

// Examples are built per batch rather than precomputed: a full example
// set for a desk-scale dataset would dwarf the model in memory.
template <typename T>
std::vector<TrainLogEntry> train_shape_stage(ShapeStage<T>& stage, const std::vector<OutfitSample>& data,
                                             const TrainConfig& cfg, std::uint64_t seed, int log_every = 50) {
  Adam<T> opt(static_cast<T>(cfg.lr), static_cast<T>(cfg.beta1), static_cast<T>(cfg.beta2));
  const int es = stage.config().encoder_size();
  return detail::train_loop<T>(
      data, cfg, seed, log_every,
      [&](const OutfitSample& s, Category cat) { return make_shape_example<T>(s, cat, es); },
      [&](const std::vector<ShapeExample<T>>& batch, Rng& rng) {
        return train_step_shape(stage, batch, opt, rng);
      });
}

template <typename T>
std::vector<TrainLogEntry> train_appearance_stage(AppearanceStage<T>& stage,
                                                  const std::vector<OutfitSample>& data,
                                                  const TrainConfig& cfg, std::uint64_t seed,
                                                  int log_every = 50) {
  Adam<T> opt(static_cast<T>(cfg.lr), static_cast<T>(cfg.beta1), static_cast<T>(cfg.beta2));
  const int es = stage.config().encoder_size();
  return detail::train_loop<T>(
      data, cfg, seed, log_every,
      [&](const OutfitSample& s, Category cat) { return make_appearance_example<T>(s, cat, es); },
      [&](const std::vector<AppearanceExample<T>>& batch, Rng& rng) {
        return train_step_appearance(stage, batch, opt, rng);
      });
}

template <typename T>
std::vector<TrainLogEntry> train_onestage_model(OneStageModel<T>& model,
                                                const std::vector<OutfitSample>& data, const TrainConfig& cfg,
                                                std::uint64_t seed, int log_every = 50) {
  Adam<T> opt(static_cast<T>(cfg.lr), static_cast<T>(cfg.beta1), static_cast<T>(cfg.beta2));
  const int es = model.config().encoder_size();
  return detail::train_loop<T>(
      data, cfg, seed, log_every,
      [&](const OutfitSample& s, Category cat) { return make_onestage_example<T>(s, cat, es); },
      [&](const std::vector<OneStageExample<T>>& batch, Rng& rng) {
        return train_step_onestage(model, batch, opt, rng);
      });
}

}  // namespace finet
