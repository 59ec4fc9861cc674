#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sfmk/attack.hpp"
#include "sfmk/eval.hpp"
#include "sfmk/image_io.hpp"
#include "sfmk/scene.hpp"
#include "sfmk/train.hpp"

namespace sfmk {

// SFMK_THREADS caps worker threads; --deterministic forces one. Execution
// is currently serial everywhere, so this records intent for the batch
// assembly hooks, and determinism holds regardless.
inline int thread_budget(bool deterministic) {
  if (deterministic) return 1;
  const char* env = std::getenv("SFMK_THREADS");
  if (!env) return 1;
  const int v = std::atoi(env);
  return v >= 1 ? v : 1;
}

namespace detail {

inline std::string sanitize_id(const std::string& id) {
  std::string out = id;
  for (char& c : out)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '.')
      c = '_';
  return out;
}

}  // namespace detail

// `synth` renders plane scenes at the network resolution; `kitti:<root>`
// loads the directory layout (split file defaults to <root>/split.txt).
inline Dataset cli_dataset(const std::string& spec, const NetConfig& ncfg,
                           int scenes, uint64_t seed,
                           const std::string& split = "",
                           const std::string& exclusion = "") {
  if (spec == "synth") {
    SceneConfig sc;
    sc.height = ncfg.height;
    sc.width = ncfg.width;
    sc.fx = sc.fy = real(0.625) * static_cast<real>(ncfg.width);
    sc.cx = static_cast<real>(ncfg.width - 1) / 2;
    sc.cy = static_cast<real>(ncfg.height - 1) / 2;
    sc.texture_seed = seed * 1000 + 1;
    return make_synth_dataset(sc, scenes);
  }
  if (spec.rfind("kitti:", 0) == 0) {
    const std::string root = spec.substr(6);
    const std::string sp = split.empty() ? root + "/split.txt" : split;
    return load_kitti_layout(root, sp, ncfg.height, ncfg.width, exclusion,
                             &std::cerr);
  }
  throw ConfigError("unknown data spec '" + spec +
                    "' (expected synth or kitti:<root>)");
}

inline void apply_training_overrides(const Config& c, TrainConfig& tc) {
  tc.lr = c.get_real("lr", tc.lr);
  tc.weight_decay = c.get_real("weight_decay", tc.weight_decay);
  tc.epochs = static_cast<int>(c.get_int("epochs", tc.epochs));
  tc.seed = static_cast<uint64_t>(c.get_int("seed",
                                            static_cast<int64_t>(tc.seed)));
  tc.loss.alpha = c.get_real("loss_alpha", tc.loss.alpha);
  tc.loss.smoothness_lambda =
      c.get_real("smoothness_lambda", tc.loss.smoothness_lambda);
  tc.loss.depth_range.d_min = c.get_real("depth_min",
                                         tc.loss.depth_range.d_min);
  tc.loss.depth_range.d_max = c.get_real("depth_max",
                                         tc.loss.depth_range.d_max);
}

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"self-supervised monocular depth: training, evaluation, "
               "robustness"};
  app.require_subcommand(1);
  bool deterministic = false;
  app.add_flag("--deterministic", deterministic,
               "single-threaded bit-reproducible mode");

  std::string config_path, arch = "tt", preset = "desk", data = "synth";
  std::string out_dir, split, static_frames, checkpoint, csv_path;
  std::string kind = "pgd", corruption_name;
  bool learn_k = false, scaled = true, all_corruptions = false;
  uint64_t seed = 42;
  int epochs = 20, scenes = 4, severity = 5, iters = 10;
  double eps = 1.0;

  CLI::App* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--config", config_path,
                        "config file with training overrides");
  train_cmd->add_option("--arch", arch,
                        "depth/ego architecture pair: tt, tc, ct, cc")
      ->check(CLI::IsMember({"tt", "tc", "ct", "cc"}));
  train_cmd->add_flag("--learn-intrinsics", learn_k,
                      "predict camera intrinsics instead of reading them");
  train_cmd->add_option("--preset", preset, "network size preset")
      ->check(CLI::IsMember({"paper", "desk"}));
  train_cmd->add_option("--data", data, "synth or kitti:<root>");
  train_cmd->add_option("--seed", seed, "rng seed");
  train_cmd->add_option("--out", out_dir, "run directory");
  train_cmd->add_option("--epochs", epochs, "training epochs");
  train_cmd->add_option("--scenes", scenes, "synthetic scene count");
  train_cmd->add_option("--split", split, "kitti split file");
  train_cmd->add_option("--static-frames", static_frames,
                        "exclusion list of static frames");

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")
      ->required();
  eval_cmd->add_option("--data", data, "synth or kitti:<root>");
  eval_cmd->add_flag("--scaled,!--unscaled", scaled,
                     "median-scale predictions per image (default scaled)");
  eval_cmd->add_option("--csv", csv_path, "write metrics CSV here");
  eval_cmd->add_option("--seed", seed, "rng seed");
  eval_cmd->add_option("--scenes", scenes, "synthetic scene count");
  eval_cmd->add_option("--split", split, "kitti split file");
  eval_cmd->add_option("--static-frames", static_frames,
                       "exclusion list of static frames");

  CLI::App* attack_cmd =
      app.add_subcommand("attack", "adversarial robustness sweep");
  attack_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")
      ->required();
  attack_cmd->add_option("--kind", kind, "attack kind")
      ->check(CLI::IsMember({"pgd", "flip-h", "flip-v"}));
  attack_cmd->add_option("--eps", eps, "strength in 1/255 units");
  attack_cmd->add_option("--csv", csv_path, "write sweep CSV here");
  attack_cmd->add_option("--data", data, "synth or kitti:<root>");
  attack_cmd->add_option("--seed", seed, "rng seed");
  attack_cmd->add_option("--scenes", scenes, "synthetic scene count");

  CLI::App* corrupt_cmd =
      app.add_subcommand("corrupt", "write corrupted copies of a dataset");
  corrupt_cmd->add_option("--name", corruption_name, "one corruption name");
  corrupt_cmd->add_flag("--all", all_corruptions, "all 15 corruptions");
  corrupt_cmd->add_option("--severity", severity, "severity 1..5")
      ->check(CLI::Range(1, 5));
  corrupt_cmd->add_option("--out-dir", out_dir, "output directory")
      ->required();
  corrupt_cmd->add_option("--data", data, "synth or kitti:<root>");
  corrupt_cmd->add_option("--seed", seed, "rng seed");
  corrupt_cmd->add_option("--scenes", scenes, "synthetic scene count");
  corrupt_cmd->add_option("--preset", preset, "network size preset")
      ->check(CLI::IsMember({"paper", "desk"}));

  CLI::App* bench_cmd =
      app.add_subcommand("bench", "forward-pass frames per second");
  bench_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")
      ->required();
  bench_cmd->add_option("--iters", iters, "forward passes to time");

  CLI::App* export_cmd =
      app.add_subcommand("export", "write 16-bit PNG depth predictions");
  export_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")
      ->required();
  export_cmd->add_option("--out-dir", out_dir, "output directory")
      ->required();
  export_cmd->add_option("--data", data, "synth or kitti:<root>");
  export_cmd->add_option("--seed", seed, "rng seed");
  export_cmd->add_option("--scenes", scenes, "synthetic scene count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  const int threads = thread_budget(deterministic);
  namespace fs = std::filesystem;
  try {
    if (app.got_subcommand(train_cmd)) {
      NetConfig ncfg = preset == "paper" ? NetConfig::paper()
                                         : NetConfig::desk();
      const Arch da = arch[0] == 't' ? Arch::kTransformer : Arch::kConv;
      const Arch ea = arch[1] == 't' ? Arch::kTransformer : Arch::kConv;
      TrainConfig tc;
      tc.seed = seed;
      tc.epochs = epochs;
      if (!config_path.empty())
        apply_training_overrides(Config::load(config_path), tc);
      ModelBundle model = make_model(ncfg, da, ea, learn_k, tc.seed);
      Dataset ds = cli_dataset(data, ncfg, scenes, tc.seed, split,
                               static_frames);
      std::cout << "training " << arch << " preset " << preset << " on "
                << ds.items.size() << " triplets, " << tc.epochs
                << " epochs, threads " << threads << "\n";
      TrainResult res = run_training(model, ds, tc, out_dir, &std::cout);
      std::cout << "final mean_loss " << std::setprecision(17)
                << res.epoch_losses.back() << "\n";
    } else if (app.got_subcommand(eval_cmd)) {
      ModelBundle model = load_checkpoint(checkpoint);
      Dataset ds = cli_dataset(data, model.cfg, scenes, seed, split,
                               static_frames);
      EvalConfig ecfg;
      ecfg.scaled = scaled;
      MetricsReport r = evaluate(model, ds, ecfg);
      std::cout << (scaled ? "median-scaled" : "unscaled") << " metrics over "
                << ds.items.size() << " images\n" << metrics_table(r);
      if (!csv_path.empty()) {
        std::ofstream os(csv_path);
        os << metrics_csv_header() << "\n" << metrics_csv_row(r) << "\n";
        std::cout << "wrote " << csv_path << "\n";
      }
    } else if (app.got_subcommand(attack_cmd)) {
      ModelBundle model = load_checkpoint(checkpoint);
      Dataset ds = cli_dataset(data, model.cfg, scenes, seed);
      std::cout << kind << " eps " << eps << ": "
                << pgd_iterations(real(eps)) << " iterations\n";
      SweepSuite suite;
      suite.seed = seed;
      if (kind == "pgd") suite.pgd_epsilons = {real(eps)};
      if (kind == "flip-h") suite.flip_h_epsilons = {real(eps)};
      if (kind == "flip-v") suite.flip_v_epsilons = {real(eps)};
      std::vector<SweepRow> rows =
          robustness_sweep(model, ds, suite, {}, {}, &std::cout);
      const std::string csv = sweep_csv(rows);
      std::cout << csv;
      if (!csv_path.empty()) {
        std::ofstream os(csv_path);
        os << csv;
        std::cout << "wrote " << csv_path << "\n";
      }
    } else if (app.got_subcommand(corrupt_cmd)) {
      if (all_corruptions ? !corruption_name.empty()
                          : corruption_name.empty())
        throw ConfigError("pass exactly one of --name or --all");
      NetConfig ncfg = preset == "paper" ? NetConfig::paper()
                                         : NetConfig::desk();
      Dataset ds = cli_dataset(data, ncfg, scenes, seed);
      std::vector<std::string> names =
          all_corruptions ? corruption_names()
                          : std::vector<std::string>{corruption_name};
      int64_t written = 0;
      for (const std::string& name : names) {
        fs::create_directories(fs::path(out_dir) / name);
        for (size_t i = 0; i < ds.items.size(); ++i) {
          Tensor img = corrupt(ds.items[i].target, {name, severity},
                               seed + i);
          write_png((fs::path(out_dir) / name /
                     (detail::sanitize_id(ds.items[i].id) + ".png"))
                        .string(),
                    img);
          ++written;
        }
      }
      std::cout << "wrote " << written << " images to " << out_dir << "\n";
    } else if (app.got_subcommand(bench_cmd)) {
      ModelBundle model = load_checkpoint(checkpoint);
      Dataset ds = cli_dataset("synth", model.cfg, 1, seed);
      const Tensor& img = ds.items[0].target;
      model.disparities(img, false);  // warm caches before timing
      const auto t0 = std::chrono::steady_clock::now();
      for (int i = 0; i < iters; ++i) model.disparities(img, false);
      const double dt = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
      std::cout << "threads " << threads << "\n";
      std::cout << "fps " << std::setprecision(6)
                << static_cast<double>(iters) / dt << "\n";
    } else if (app.got_subcommand(export_cmd)) {
      ModelBundle model = load_checkpoint(checkpoint);
      Dataset ds = cli_dataset(data, model.cfg, scenes, seed);
      fs::create_directories(out_dir);
      for (const ImageTriplet& item : ds.items) {
        Tensor depth = predict_depth(model, item.target);
        write_depth_png((fs::path(out_dir) /
                         (detail::sanitize_id(item.id) + ".png"))
                            .string(),
                        depth);
      }
      std::cout << "wrote " << ds.items.size() << " predictions to "
                << out_dir << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace sfmk
