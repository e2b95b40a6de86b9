#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "pct/config.hpp"
#include "pct/errors.hpp"
#include "pct/harness.hpp"
#include "pct/io.hpp"
#include "pct/model.hpp"
#include "pct/synth.hpp"

namespace fs = std::filesystem;
using namespace pct;

namespace {

RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return RunConfig::from_config(KeyValueConfig::load(path));
}

void print_metrics(const fairness::GroupMetrics& m) {
  for (std::size_t g = 0; g < m.groups.size(); ++g) {
    std::printf("  %-10s accuracy %.4f\n", m.groups[g].c_str(), harness::round4(m.accuracy[g]));
  }
  std::printf("  AVE %.4f  STD %.4f\n", harness::round4(m.accuracy_summary.ave), harness::round4(m.accuracy_summary.std));
  for (const auto& r : m.fpr) {
    std::printf("  FPR %g: threshold %.4f pooled %.4f bias degree %.4f\n", r.target_fpr, harness::round4(r.threshold),
                harness::round4(r.pooled_fpr), harness::round4(r.bias_degree));
  }
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  for (char c : s) {
    if (c == ',') {
      out.push_back(item);
      item.clear();
    } else {
      item.push_back(c);
    }
  }
  if (!item.empty() || !out.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-transformer face model: data generation, training, fairness evaluation"};
  app.require_subcommand(1);

  std::string config, data, out, checkpoint, image, pairs, variants = "no-ct,pct", group_values, group_names;
  std::uint64_t seed = 0;
  std::vector<double> fpr_grid;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

  auto* gen = app.add_subcommand("generate", "write a synthetic grouped dataset");
  gen->add_option("--config", config, "dataset spec (key=value)");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--seed", seed, "generator seed");

  auto* tr = app.add_subcommand("train", "train a model and evaluate it on the dataset's pairs");
  tr->add_option("--config", config, "run config (key=value)");
  tr->add_option("--data", data, "dataset directory")->required();
  tr->add_option("--out", out, "output directory")->required();
  auto* train_seed = tr->add_option("--seed", seed, "overrides the config seed");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint, or summarise given group accuracies");
  ev->add_option("--checkpoint", checkpoint, "checkpoint .pct file");
  ev->add_option("--data", data, "dataset directory (image paths are relative to it)");
  ev->add_option("--pairs", pairs, "pair list (default: <data>/pairs.txt)");
  ev->add_option("--out", out, "output directory")->required();
  ev->add_option("--fpr-grid", fpr_grid, "target FPRs")->delimiter(',');
  ev->add_option("--group-values", group_values, "comma-separated per-group accuracies; skips the model");
  ev->add_option("--group-names", group_names, "comma-separated names for --group-values");

  auto* ab = app.add_subcommand("ablate", "train and evaluate several variants over several seeds");
  ab->add_option("--config", config, "base run config (key=value)");
  ab->add_option("--data", data, "dataset directory")->required();
  ab->add_option("--out", out, "output directory")->required();
  ab->add_option("--variants", variants, "no-ct, pct, ct@<stage>, h<heads>; comma separated");
  ab->add_option("--seeds", seeds, "model seeds")->delimiter(',');
  ab->add_option("--fpr-grid", fpr_grid, "target FPRs")->delimiter(',');

  auto* ex = app.add_subcommand("export-attn", "export CT attention maps for one image");
  ex->add_option("--checkpoint", checkpoint, "checkpoint .pct file")->required();
  ex->add_option("--image", image, "PCT1 image (C, H, W)")->required();
  ex->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      synth::DatasetSpec spec;
      if (!config.empty()) spec = synth::DatasetSpec::from_config(KeyValueConfig::load(config));
      const auto ds = synth::generate(spec, seed);
      synth::write_dataset(ds, out);
      std::printf("wrote %zu training and %zu test images, %zu pairs to %s\n", ds.train.size(), ds.test.size(),
                  ds.pairs.size(), out.c_str());
    } else if (*tr) {
      RunConfig cfg = load_run_config(config);
      if (train_seed->count()) cfg.seed = seed;
      harness::TrainOptions opts;
      opts.on_epoch = [](const harness::EpochStats& e) {
        std::printf("epoch %2d  lr %.5f/%.5f  face %.4f  race %.4f  total %.4f\n", e.epoch, e.lr_face, e.lr_race,
                    e.face_loss, e.race_loss, e.total_loss);
        std::fflush(stdout);
      };
      const auto rep = harness::run_train(cfg, data, out, opts);
      print_metrics(rep.metrics);
      std::printf("checkpoint %s (%.1f s)\n", rep.checkpoint.c_str(), rep.wall_seconds);
    } else if (*ev) {
      if (!group_values.empty()) {
        std::vector<double> values;
        for (const auto& v : split(group_values)) values.push_back(std::stod(v));
        std::vector<std::string> names = split(group_names);
        if (names.empty()) {
          for (std::size_t g = 0; g < values.size(); ++g) names.push_back("group_" + std::to_string(g));
        }
        const auto m = harness::published_metrics(names, values);
        fs::create_directories(out);
        std::ofstream(fs::path(out) / "metrics.json") << harness::metrics_to_json(m).dump(2) << '\n';
        std::ofstream(fs::path(out) / "metrics.csv") << harness::metrics_to_csv(m);
        std::printf("AVE %.2f  STD %.2f\n", m.accuracy_summary.ave, m.accuracy_summary.std);
      } else {
        if (checkpoint.empty() || data.empty()) {
          std::fprintf(stderr, "eval: --checkpoint and --data are required unless --group-values is given\n");
          return 1;
        }
        const fs::path pair_file = pairs.empty() ? fs::path(data) / "pairs.txt" : fs::path(pairs);
        print_metrics(harness::run_eval(checkpoint, pair_file, data, fpr_grid, out));
      }
    } else if (*ab) {
      RunConfig cfg = load_run_config(config);
      if (!fpr_grid.empty()) cfg.fpr_grid = fpr_grid;
      const auto table = harness::run_ablation(cfg, split(variants), seeds, data, out, [](const std::string& line) {
        std::printf("%s\n", line.c_str());
        std::fflush(stdout);
      });
      std::cout << harness::ablation_to_csv(table);
    } else if (*ex) {
      const Model model = Model::load(checkpoint);
      for (const auto& p : harness::export_attention(model, io::load_tensor(image), out)) {
        std::printf("%s\n", p.c_str());
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
