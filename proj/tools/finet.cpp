#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "finet/eval.hpp"
#include "finet/image_io.hpp"
#include "finet/training.hpp"

namespace fs = std::filesystem;
using namespace finet;

namespace {

// FINET_SEED overrides any --seed flag when set.
std::uint64_t effective_seed(std::uint64_t flag_seed) {
  const char* env = std::getenv("FINET_SEED");
  if (!env || !*env) return flag_seed;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0') {
    throw ContractError("FINET_SEED must be an unsigned integer, got '" + std::string(env) + "'");
  }
  return v;
}

// All outputs are written under a ".partial" sibling and renamed into
// place, so a failed run never leaves a partial result at the target.
template <typename Fn>
void atomic_dir(const fs::path& target, Fn&& write) {
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".partial";
  std::error_code ec;
  fs::remove_all(tmp, ec);
  write(tmp);
  fs::remove_all(target);
  fs::rename(tmp, target);
}

template <typename Fn>
void atomic_file(const fs::path& target, Fn&& write) {
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".partial";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot open output file: " + tmp.string());
    write(out);
    out.close();
    if (!out) throw IoError("failed writing output file " + tmp.string());
  }
  std::error_code ec;
  fs::remove(target, ec);
  fs::rename(tmp, target);
}

std::string tile_name(int r, int c) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "tile_%02d_%02d", r, c);
  return buf;
}

std::string result_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "result_%03d", i);
  return buf;
}

// ---------------------------------------------------------------------------
// Option structs, one per subcommand.

struct GenDataOpts {
  int n = 0;
  std::uint64_t seed = 0;
  int size = kCanonicalSize;
  std::string out;
};

struct TrainOpts {
  std::string data, out, config;
  int steps = -1;  // -1: take the config value
  std::uint64_t seed = 0;
  bool standard_prior = false;
};

struct InpaintOpts {
  std::string shape_ckpt, app_ckpt, sample, category = "top", out;
  int n = 1;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

struct TransferOpts {
  std::string shape_ckpt, app_ckpt, sample, category = "top";
  std::string target_sample, target_category = "top";
  std::string out;
};

struct EvalOpts {
  std::string shape_ckpt, app_ckpt, data, category = "top", out;
  std::vector<std::string> metrics;
  int n = 20;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

struct SweepOpts {
  std::string ckpt, sample, category = "top", dims, range, out;
};

// ---------------------------------------------------------------------------
// Handlers.

void run_gen_data(const GenDataOpts& o) {
  const auto samples = make_dataset(o.n, effective_seed(o.seed), o.size);
  atomic_dir(o.out, [&](const fs::path& tmp) { write_dataset(tmp, samples); });
}

void write_metrics_log(const fs::path& dir, const std::vector<TrainLogEntry>& log) {
  std::ofstream out(dir / "metrics.txt");
  if (!out) throw IoError("cannot write metrics log in " + dir.string());
  out << "# step recon_loss kl total\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%d %.9g %.9g %.9g\n", e.step, e.recon_loss, e.kl, e.total);
    out << buf;
  }
}

void run_train(const TrainOpts& o, bool appearance) {
  TrainConfig cfg = o.config.empty() ? TrainConfig{} : load_config(o.config);
  if (o.steps != -1) {
    if (o.steps <= 0) throw ContractError("--steps must be positive");
    cfg.steps = o.steps;
  }
  const std::uint64_t seed = effective_seed(o.seed);
  const auto data = read_dataset(o.data);
  if (data.front().size() != cfg.image_size) {
    throw ContractError("dataset resolution " + std::to_string(data.front().size()) +
                        " does not match configured image_size " + std::to_string(cfg.image_size));
  }

  if (appearance) {
    AppearanceStage<float> stage(stage_config<float>(cfg, o.standard_prior));
    stage.init(detail::splitmix64(seed ^ 0x617070ULL));
    const auto log = train_appearance_stage(stage, data, cfg, seed);
    atomic_dir(o.out, [&](const fs::path& tmp) {
      stage.save(tmp);
      write_metrics_log(tmp, log);
    });
  } else {
    ShapeStage<float> stage(stage_config<float>(cfg, o.standard_prior));
    stage.init(detail::splitmix64(seed ^ 0x736870ULL));
    const auto log = train_shape_stage(stage, data, cfg, seed);
    atomic_dir(o.out, [&](const fs::path& tmp) {
      stage.save(tmp);
      write_metrics_log(tmp, log);
    });
  }
}

void run_inpaint(const InpaintOpts& o) {
  if (o.n <= 0) throw ContractError("--n must be positive");
  const auto shape = ShapeStage<float>::load(o.shape_ckpt);
  const auto app = AppearanceStage<float>::load(o.app_ckpt);
  const auto s = read_sample(o.sample);
  const auto cat = category_from_name(o.category);
  const std::uint64_t seed = effective_seed(o.seed);

  Rng rng(detail::splitmix64(seed ^ 0x696e70ULL));
  const auto results =
      inpaint(shape, app, s.image, s.seg, s.pose, cat, o.n, static_cast<float>(o.temperature), rng);

  NamedTensors c;
  c.set_meta("kind", "inpaint");
  c.set_meta("category", o.category);
  c.set_meta("n", std::to_string(o.n));
  c.set_meta("temperature", std::to_string(o.temperature));
  c.set_meta("seed", std::to_string(seed));
  const Box box = results.front().box;
  c.set_meta("box", std::to_string(box.y0) + " " + std::to_string(box.x0) + " " + std::to_string(box.y1) +
                        " " + std::to_string(box.x1));
  for (std::size_t i = 0; i < results.size(); ++i) {
    c.add(result_name(static_cast<int>(i)) + ".image", results[i].image);
    c.add(result_name(static_cast<int>(i)) + ".seg", results[i].seg);
  }
  atomic_dir(o.out, [&](const fs::path& tmp) {
    write_container(tmp, kResultVersion, c);
    for (std::size_t i = 0; i < results.size(); ++i) {
      write_ppm(tmp / (result_name(static_cast<int>(i)) + ".ppm"), results[i].image);
      write_ppm(tmp / (result_name(static_cast<int>(i)) + ".seg.ppm"), colorize_seg(results[i].seg));
    }
  });
}

void run_transfer(const TransferOpts& o) {
  const auto shape = ShapeStage<float>::load(o.shape_ckpt);
  const auto app = AppearanceStage<float>::load(o.app_ckpt);
  const auto base = read_sample(o.sample);
  const auto donor = read_sample(o.target_sample);
  const auto cat = category_from_name(o.category);
  const auto donor_cat = category_from_name(o.target_category);

  const auto t_s = shape_code_input(donor.seg, donor_cat, shape.config().encoder_size());
  const auto t_a = appearance_code_input(donor.image, donor.seg, donor_cat, app.config().encoder_size());
  const auto result = transfer(shape, app, base.image, base.seg, base.pose, cat, t_s, t_a);

  NamedTensors c;
  c.set_meta("kind", "transfer");
  c.set_meta("category", o.category);
  c.set_meta("target_category", o.target_category);
  c.set_meta("box", std::to_string(result.box.y0) + " " + std::to_string(result.box.x0) + " " +
                        std::to_string(result.box.y1) + " " + std::to_string(result.box.x1));
  c.add("result.image", result.image);
  c.add("result.seg", result.seg);
  atomic_dir(o.out, [&](const fs::path& tmp) {
    write_container(tmp, kResultVersion, c);
    write_ppm(tmp / "result.ppm", result.image);
    write_ppm(tmp / "result.seg.ppm", colorize_seg(result.seg));
  });
}

void run_eval(const EvalOpts& o) {
  if (o.n <= 0) throw ContractError("--n must be positive");
  const auto shape = ShapeStage<float>::load(o.shape_ckpt);
  const auto app = AppearanceStage<float>::load(o.app_ckpt);
  const auto data = read_dataset(o.data);
  const auto cat = category_from_name(o.category);
  const std::uint64_t seed = effective_seed(o.seed);

  bool want_oracle = false, want_diversity = false, want_compat = false, want_posterior = false;
  for (const auto& m : o.metrics) {
    if (m == "oracle") want_oracle = true;
    else if (m == "diversity") want_diversity = true;
    else if (m == "compat") want_compat = true;
    else if (m == "posterior") want_posterior = true;
  }

  struct Row {
    std::string name;
    double value;
    std::size_t n;
  };
  std::vector<Row> rows;

  if (want_oracle || want_diversity || want_compat) {
    const FixedFeatureExtractor<float> ext;
    CompatEmbedder<float> emb;
    if (want_compat) emb = train_compat_embedding<float>(data, detail::splitmix64(seed ^ 0x656d62ULL));

    Rng rng(detail::splitmix64(seed ^ 0x6576616cULL));
    double oracle_sum = 0, div_sum = 0, compat_sum = 0;
    std::size_t compat_pairs = 0;
    for (const auto& s : data) {
      const auto draws =
          inpaint(shape, app, s.image, s.seg, s.pose, cat, o.n, static_cast<float>(o.temperature), rng);
      if (want_oracle) oracle_sum += oracle_compat_rate(draws, cat, s.style);
      if (want_diversity) {
        std::vector<Tensor<float>> crops;
        crops.reserve(draws.size());
        for (const auto& r : draws) crops.push_back(region_crop(r, kEmbedderInput));
        div_sum += diversity_score(crops, ext);
      }
      if (want_compat) {
        for (const auto& r : draws) {
          const auto gen_crop = extract_garment_segment(r.image, r.seg, cat, kEmbedderInput);
          for (int c2 = 0; c2 < kNumCategories; ++c2) {
            const auto other = static_cast<Category>(c2);
            if (other == cat || !s.garments[c2].present) continue;
            compat_sum += compat_score(emb, gen_crop, extract_garment_segment(s.image, s.seg, other, kEmbedderInput));
            ++compat_pairs;
          }
        }
      }
    }
    if (want_oracle) rows.push_back({"oracle_compat_rate", oracle_sum / data.size(), data.size()});
    if (want_diversity) rows.push_back({"diversity_score", div_sum / data.size(), data.size()});
    if (want_compat && compat_pairs > 0) {
      rows.push_back({"compat_embedding_score", compat_sum / compat_pairs, data.size()});
    }
  }

  if (want_posterior) {
    const auto d = shape_posterior_diagnostics(shape, data, cat);
    rows.push_back({"posterior_mean_kl", d.mean_kl, data.size()});
    rows.push_back({"posterior_mi", d.mi_estimate, data.size()});
  }

  atomic_file(o.out, [&](std::ofstream& out) {
    out << "# metric value n seed\n";
    char buf[160];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%s %.9g %zu %llu\n", r.name.c_str(), r.value, r.n,
                    static_cast<unsigned long long>(seed));
      out << buf;
    }
  });
}

std::pair<int, int> parse_dims(const std::string& s, int latent_dim) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw ContractError("--dims expects i,j, got '" + s + "'");
  int i = 0, j = 0;
  try {
    std::size_t u1 = 0, u2 = 0;
    i = std::stoi(s.substr(0, comma), &u1);
    j = std::stoi(s.substr(comma + 1), &u2);
    if (u1 != comma || u2 != s.size() - comma - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ContractError("--dims expects two integers, got '" + s + "'");
  }
  if (i < 0 || j < 0 || i >= latent_dim || j >= latent_dim) {
    throw ContractError("--dims indices must lie in [0, " + std::to_string(latent_dim) + ")");
  }
  return {i, j};
}

std::vector<float> parse_range(const std::string& s) {
  const auto c1 = s.find(':');
  const auto c2 = c1 == std::string::npos ? std::string::npos : s.find(':', c1 + 1);
  if (c1 == std::string::npos || c2 == std::string::npos) {
    throw ContractError("--range expects a:b:steps, got '" + s + "'");
  }
  double a = 0, b = 0;
  int steps = 0;
  try {
    a = std::stod(s.substr(0, c1));
    b = std::stod(s.substr(c1 + 1, c2 - c1 - 1));
    steps = std::stoi(s.substr(c2 + 1));
  } catch (const std::exception&) {
    throw ContractError("--range expects a:b:steps, got '" + s + "'");
  }
  if (steps <= 0) throw ContractError("--range step count must be positive");
  std::vector<float> vals(steps);
  for (int k = 0; k < steps; ++k) {
    vals[k] = static_cast<float>(steps == 1 ? a : a + k * (b - a) / (steps - 1));
  }
  return vals;
}

void run_latent_sweep(const SweepOpts& o) {
  const auto probe = read_container(o.ckpt, kCheckpointVersion);
  const std::string* stage_kind = probe.find_meta("stage");
  if (!stage_kind) throw IoError("checkpoint missing meta key 'stage'");
  if (*stage_kind != "shape" && *stage_kind != "appearance") {
    throw ContractError("latent-sweep supports shape or appearance checkpoints, got '" + *stage_kind + "'");
  }
  const auto s = read_sample(o.sample);
  const auto cat = category_from_name(o.category);
  const auto vals = parse_range(o.range);
  const int steps = static_cast<int>(vals.size());

  std::vector<Tensor<float>> tiles;
  tiles.reserve(static_cast<std::size_t>(steps) * steps);

  if (*stage_kind == "shape") {
    const auto stage = ShapeStage<float>::load(o.ckpt);
    if (s.size() != stage.config().image_size) {
      throw ContractError("sample resolution " + std::to_string(s.size()) +
                          " does not match checkpoint image_size " +
                          std::to_string(stage.config().image_size));
    }
    const auto [di, dj] = parse_dims(o.dims, stage.config().latent_dim);
    const auto base =
        stage.code_encoder().encode(shape_code_input(s.seg, cat, stage.config().encoder_size())).mean;
    const auto s_hat = mask_shape_context(s.seg, cat);
    const auto p_s = person_rep_shape(s.pose, s.seg);
    const auto ctx = concat_channels<float>({&s_hat, &p_s});
    for (int r = 0; r < steps; ++r) {
      for (int c = 0; c < steps; ++c) {
        auto z = base;
        z[di] = vals[r];
        z[dj] = vals[c];
        tiles.push_back(colorize_seg(discretize(stage.generator().generate(ctx, z))));
      }
    }
  } else {
    const auto stage = AppearanceStage<float>::load(o.ckpt);
    if (s.size() != stage.config().image_size) {
      throw ContractError("sample resolution " + std::to_string(s.size()) +
                          " does not match checkpoint image_size " +
                          std::to_string(stage.config().image_size));
    }
    const auto [di, dj] = parse_dims(o.dims, stage.config().latent_dim);
    const auto base = stage.code_encoder()
                          .encode(appearance_code_input(s.image, s.seg, cat, stage.config().encoder_size()))
                          .mean;
    const int sz = stage.config().image_size;
    const Box box = plausible_box(s.seg, cat);
    const auto i_hat = mask_appearance_context(s.image, s.seg, cat);
    // Conditioning for a reconstruction-style sweep: the person's own
    // layout plus the face pixels.
    Tensor<float> p_a({sz, sz, kSegChannels + 3});
    for (int y = 0; y < sz; ++y) {
      for (int x = 0; x < sz; ++x) {
        for (int c = 0; c < kSegChannels; ++c) p_a.at(y, x, c) = s.seg.at(y, x, c);
        const bool face = s.seg.at(y, x, kSegFace) > 0.5f;
        for (int c = 0; c < 3; ++c) p_a.at(y, x, kSegChannels + c) = face ? s.image.at(y, x, c) : 0.0f;
      }
    }
    const auto ctx = concat_channels<float>({&i_hat, &p_a});
    for (int r = 0; r < steps; ++r) {
      for (int c = 0; c < steps; ++c) {
        auto z = base;
        z[di] = vals[r];
        z[dj] = vals[c];
        Tensor<float> composite = s.image;
        paste(composite, crop(stage.generator().generate(ctx, z), box), box);
        tiles.push_back(std::move(composite));
      }
    }
  }

  NamedTensors c;
  c.set_meta("kind", "latent-sweep");
  c.set_meta("stage", *stage_kind);
  c.set_meta("category", o.category);
  c.set_meta("dims", o.dims);
  c.set_meta("range", o.range);
  for (int r = 0; r < steps; ++r) {
    for (int col = 0; col < steps; ++col) c.add(tile_name(r, col), tiles[r * steps + col]);
  }
  atomic_dir(o.out, [&](const fs::path& tmp) {
    write_container(tmp, kResultVersion, c);
    write_ppm(tmp / "grid.ppm", tile_grid(tiles, steps));
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"finet: compatible and diverse fashion image inpainting"};
  app.require_subcommand(1);
  const std::vector<std::string> kCategories = {"hat", "top", "bottom", "shoes"};

  GenDataOpts gen;
  auto* c_gen = app.add_subcommand("gen-data", "Generate a synthetic outfit dataset");
  c_gen->add_option("--n", gen.n, "Number of samples")->required()->check(CLI::PositiveNumber);
  c_gen->add_option("--seed", gen.seed, "RNG seed");
  c_gen->add_option("--size", gen.size, "Image resolution")->check(CLI::PositiveNumber);
  c_gen->add_option("--out", gen.out, "Output dataset directory")->required();

  TrainOpts tr_shape, tr_app;
  auto* c_ts = app.add_subcommand("train-shape", "Train the shape generation stage");
  auto* c_ta = app.add_subcommand("train-appearance", "Train the appearance generation stage");
  for (auto [cmd, opts] : {std::pair{c_ts, &tr_shape}, std::pair{c_ta, &tr_app}}) {
    cmd->add_option("--data", opts->data, "Training dataset directory")->required();
    cmd->add_option("--steps", opts->steps, "Gradient steps (overrides the config value)");
    cmd->add_option("--out", opts->out, "Output checkpoint directory")->required();
    cmd->add_option("--config", opts->config, "key=value hyperparameter file");
    cmd->add_option("--seed", opts->seed, "RNG seed");
    cmd->add_flag("--standard-prior", opts->standard_prior,
                  "Use a standard-normal prior instead of the compatibility encoder");
  }

  InpaintOpts inp;
  auto* c_inp = app.add_subcommand("inpaint", "Generate garments for a masked slot");
  c_inp->add_option("--shape-ckpt", inp.shape_ckpt, "Shape stage checkpoint")->required();
  c_inp->add_option("--app-ckpt", inp.app_ckpt, "Appearance stage checkpoint")->required();
  c_inp->add_option("--sample", inp.sample, "Sample directory")->required();
  c_inp->add_option("--category", inp.category, "Garment slot")->check(CLI::IsMember(kCategories));
  c_inp->add_option("--n", inp.n, "Number of draws");
  c_inp->add_option("--temperature", inp.temperature, "Latent noise scale");
  c_inp->add_option("--seed", inp.seed, "RNG seed");
  c_inp->add_option("--out", inp.out, "Output directory")->required();

  TransferOpts tra;
  auto* c_tra = app.add_subcommand("transfer", "Transfer a garment between samples");
  c_tra->add_option("--shape-ckpt", tra.shape_ckpt, "Shape stage checkpoint")->required();
  c_tra->add_option("--app-ckpt", tra.app_ckpt, "Appearance stage checkpoint")->required();
  c_tra->add_option("--sample", tra.sample, "Wearer sample directory")->required();
  c_tra->add_option("--category", tra.category, "Slot to fill on the wearer")
      ->check(CLI::IsMember(kCategories));
  c_tra->add_option("--target-sample", tra.target_sample, "Donor sample directory")->required();
  c_tra->add_option("--target-category", tra.target_category, "Garment slot on the donor")
      ->check(CLI::IsMember(kCategories));
  c_tra->add_option("--out", tra.out, "Output directory")->required();

  EvalOpts ev;
  auto* c_ev = app.add_subcommand("eval", "Evaluate checkpoints on a dataset");
  c_ev->add_option("--shape-ckpt", ev.shape_ckpt, "Shape stage checkpoint")->required();
  c_ev->add_option("--app-ckpt", ev.app_ckpt, "Appearance stage checkpoint")->required();
  c_ev->add_option("--data", ev.data, "Evaluation dataset directory")->required();
  c_ev->add_option("--category", ev.category, "Garment slot")->check(CLI::IsMember(kCategories));
  c_ev->add_option("--metrics", ev.metrics, "Metric groups")
      ->required()
      ->delimiter(',')
      ->check(CLI::IsMember({"compat", "oracle", "diversity", "posterior"}));
  c_ev->add_option("--n", ev.n, "Draws per outfit");
  c_ev->add_option("--temperature", ev.temperature, "Latent noise scale");
  c_ev->add_option("--seed", ev.seed, "RNG seed");
  c_ev->add_option("--out", ev.out, "Output report file")->required();

  SweepOpts sw;
  auto* c_sw = app.add_subcommand("latent-sweep", "Export a grid varying two latent dimensions");
  c_sw->add_option("--ckpt", sw.ckpt, "Shape or appearance checkpoint")->required();
  c_sw->add_option("--sample", sw.sample, "Sample directory")->required();
  c_sw->add_option("--category", sw.category, "Garment slot")->check(CLI::IsMember(kCategories));
  c_sw->add_option("--dims", sw.dims, "Two latent dimensions as i,j")->required();
  c_sw->add_option("--range", sw.range, "Sweep values as a:b:steps")->required();
  c_sw->add_option("--out", sw.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);  // --help and friends
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  try {
    if (app.got_subcommand(c_gen)) run_gen_data(gen);
    else if (app.got_subcommand(c_ts)) run_train(tr_shape, false);
    else if (app.got_subcommand(c_ta)) run_train(tr_app, true);
    else if (app.got_subcommand(c_inp)) run_inpaint(inp);
    else if (app.got_subcommand(c_tra)) run_transfer(tra);
    else if (app.got_subcommand(c_ev)) run_eval(ev);
    else if (app.got_subcommand(c_sw)) run_latent_sweep(sw);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
