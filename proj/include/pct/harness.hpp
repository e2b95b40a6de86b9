#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "pct/fairness.hpp"
#include "pct/model.hpp"
#include "pct/synth.hpp"

// End-to-end workflows: training, evaluation, ablation sweeps, attention
// export, and the JSON / CSV reports they produce.
namespace pct::harness {

struct EpochStats {
  int epoch = 0;
  double lr_face = 0.0;
  double lr_race = 0.0;
  double face_loss = 0.0;  // mean over the epoch's batches
  double race_loss = 0.0;
  double total_loss = 0.0;
};

struct TrainOptions {
  std::function<void(const EpochStats&)> on_epoch;
};

// SGD over shuffled batches with the configured schedule. With alpha = 0 the
// race loss is reported but not optimised, so the race head never moves.
// Parameters that receive no gradient in a step are left untouched. Throws
// NumericError naming the step, learning rates and loss terms on a
// non-finite loss.
std::vector<EpochStats> train(Model& model, const synth::TrainingSet& data, const TrainOptions& options = {});

// Worker count for embedding extraction: PCT_THREADS if set (>= 1), else the
// hardware concurrency.
std::size_t worker_count();

// Identity embeddings of (N, C, H, W) images, computed in fixed chunks spread
// over `threads` workers; the result does not depend on the thread count.
Tensor embed_images(const Model& model, const Tensor& images, std::size_t threads);

// Scores every pair with the cosine of identity embeddings, grouped by
// "group_<id>". Images are read relative to `data_dir`.
std::map<std::string, std::vector<fairness::ScoredPair>> score_pairs(const Model& model,
                                                                     const std::vector<synth::PairRecord>& pairs,
                                                                     const std::filesystem::path& data_dir,
                                                                     std::size_t threads);

fairness::GroupMetrics evaluate(const Model& model, const std::vector<synth::PairRecord>& pairs,
                                const std::filesystem::path& data_dir, std::span<const double> fpr_grid,
                                std::size_t threads);

// Reports: every real is rounded to 4 decimals.
nlohmann::json metrics_to_json(const fairness::GroupMetrics& m);
fairness::GroupMetrics metrics_from_json(const nlohmann::json& j);
std::string metrics_to_csv(const fairness::GroupMetrics& m);
double round4(double x);

// AVE/STD of externally supplied per-group accuracies, as a report.
fairness::GroupMetrics published_metrics(const std::vector<std::string>& groups, const std::vector<double>& values);

struct TrainReport {
  std::vector<EpochStats> epochs;
  fairness::GroupMetrics metrics;
  double wall_seconds = 0.0;
  std::filesystem::path checkpoint;
};

// Trains on `data_dir`, writes checkpoint.pct/.json, metrics.json,
// metrics.csv and report.json into `out_dir`. The input dimensions of the
// backbone are taken from the dataset.
TrainReport run_train(RunConfig cfg, const std::filesystem::path& data_dir, const std::filesystem::path& out_dir,
                      const TrainOptions& options = {});

nlohmann::json report_to_json(const TrainReport& report, const RunConfig& cfg);
TrainReport report_from_json(const nlohmann::json& j);

// Evaluates a checkpoint on a pair list and writes metrics.json/csv.
fairness::GroupMetrics run_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& pairs_file,
                                const std::filesystem::path& data_dir, std::span<const double> fpr_grid,
                                const std::filesystem::path& out_dir);

struct Variant {
  std::string name;
  RunConfig config;
};

// Names: "no-ct", "pct" (CT at every stage), "ct@<k>" (CT at stage k only),
// "h<n>" (CT at every stage with n heads).
Variant make_variant(const RunConfig& base, const std::string& name);

struct AblationRow {
  std::string variant;
  std::string seed;  // seed value, or "mean" for aggregate rows
  double ave = 0.0;
  double std = 0.0;
  std::vector<double> bias_degree;  // one per feasible FPR target
};

struct AblationTable {
  std::vector<double> fpr_targets;
  std::vector<AblationRow> rows;  // (variant, seed) rows, then one mean row per variant

  const AblationRow& row(const std::string& variant, const std::string& seed) const;
};

// Trains and evaluates each variant for each seed on one dataset. Each run's
// artefacts go to out_dir/<variant>/seed_<s>; the table is written to
// out_dir/ablation.json and ablation.csv.
AblationTable run_ablation(const RunConfig& base, const std::vector<std::string>& variants,
                           const std::vector<std::uint64_t>& seeds, const std::filesystem::path& data_dir,
                           const std::filesystem::path& out_dir,
                           const std::function<void(const std::string&)>& progress = {});

nlohmann::json ablation_to_json(const AblationTable& table);
std::string ablation_to_csv(const AblationTable& table);

// Ridge-regression linear probe: fits on even-indexed rows, reports accuracy
// on odd-indexed rows. features is (N, D).
double probe_accuracy(const Tensor& features, std::span<const int> labels, std::size_t num_classes,
                      double ridge = 1e-3);

// Group probe accuracy on the pooled identity-branch features after each
// stage.
std::vector<double> stage_group_separability(const Model& model, const synth::TrainingSet& data);

// Writes per stage and direction the attention tensor (heads, n, n), the
// key-marginal heat maps (heads, h, w) as PCT1, and one 8-bit PGM per head.
// Returns the written paths.
std::vector<std::filesystem::path> export_attention(const Model& model, const Tensor& image,
                                                    const std::filesystem::path& out_dir);

}  // namespace pct::harness
