#include "pct/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <Eigen/Dense>

#include "pct/ct.hpp"
#include "pct/errors.hpp"
#include "pct/io.hpp"
#include "pct/losses.hpp"
#include "pct/ops.hpp"

namespace pct::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kEmbedChunk = 64;

Tensor gather(const Tensor& images, std::span<const std::size_t> rows) {
  const std::size_t stride = images.size() / images.dim(0);
  std::vector<double> out(rows.size() * stride);
  const auto src = images.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(rows[i] * stride), stride,
                out.begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  Shape shape = images.shape();
  shape[0] = rows.size();
  return Tensor::from(std::move(shape), std::move(out));
}

std::vector<Param*> with_grad(const std::vector<Param*>& params) {
  std::vector<Param*> out;
  for (Param* p : params) {
    if (p->value.has_grad()) out.push_back(p);
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::string fixed4(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", round4(x));
  return buf;
}

std::string target_label(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", t);
  return buf;
}

std::string group_name(int g) { return "group_" + std::to_string(g); }

void write_pgm(const fs::path& path, std::span<const double> values, std::size_t h, std::size_t w) {
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  const std::size_t factor = std::max<std::size_t>(1, 64 / std::max(h, w));
  const std::size_t H = h * factor, W = w * factor;
  std::string bytes = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double v = values[(y / factor) * w + x / factor];
      const double level = range > 0.0 ? (v - *lo) / range : 0.0;
      bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * level))));
    }
  }
  write_text(path, bytes);
}

}  // namespace

std::vector<EpochStats> train(Model& model, const synth::TrainingSet& data, const TrainOptions& options) {
  const RunConfig& cfg = model.config();
  const std::size_t n = data.images.dim(0);
  if (n == 0) throw ContractError("train: empty training set");
  if (data.num_classes > model.num_classes() || data.num_groups > model.num_groups()) {
    throw ContractError("train: dataset has more classes or groups than the model heads");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(backbone::derive_seed(cfg.seed, 5));
  const std::vector<Param*> face_params = model.face_params();
  const std::vector<Param*> race_params = model.race_params();
  zero_grads(model.all_params());

  std::vector<EpochStats> history;
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochStats stats{epoch, learning_rate_at(cfg.face_opt, epoch), learning_rate_at(cfg.race_opt, epoch)};
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      std::vector<int> classes, groups;
      for (std::size_t r : rows) {
        classes.push_back(data.class_labels[r]);
        groups.push_back(data.group_labels[r]);
      }
      auto where = [&] {
        std::ostringstream os;
        os << "step " << step << " (epoch " << epoch << ", alpha=" << cfg.alpha << ", lr_face=" << stats.lr_face
           << ", lr_race=" << stats.lr_race << ")";
        return os.str();
      };
      Tensor face, race;
      try {
        const auto fwd = model.net().forward(gather(data.images, rows));
        const Tensor logits =
            losses::margin_logits(fwd.embeddings.id_embed, model.face_head(), classes, cfg.margin);
        face = losses::face_loss(logits, classes);
        if (cfg.alpha > 0.0) {
          race = losses::race_loss(fwd.embeddings.ra_embed, groups, model.race_head());
        } else {
          NoGradGuard guard;
          race = losses::race_loss(fwd.embeddings.ra_embed.detach(), groups, model.race_head());
        }
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at " + where());
      }
      if (!std::isfinite(face.item()) || !std::isfinite(race.item())) {
        std::ostringstream os;
        os << "non-finite loss at " << where() << ": face=" << face.item() << " race=" << race.item();
        throw NumericError(os.str());
      }
      const Tensor total = cfg.alpha > 0.0 ? losses::total_loss(face, race, {cfg.alpha}) : face;
      total.backward();
      if (cfg.grad_clip > 0.0) {
        std::vector<Param*> all = face_params;
        all.insert(all.end(), race_params.begin(), race_params.end());
        clip_grad_norm(all, cfg.grad_clip);
      }
      sgd_step(with_grad(face_params), cfg.face_opt, epoch);
      sgd_step(with_grad(race_params), cfg.race_opt, epoch);
      stats.face_loss += face.item();
      stats.race_loss += race.item();
      stats.total_loss += total.item();
      ++batches;
    }
    stats.face_loss /= static_cast<double>(batches);
    stats.race_loss /= static_cast<double>(batches);
    stats.total_loss /= static_cast<double>(batches);
    history.push_back(stats);
    if (options.on_epoch) options.on_epoch(stats);
  }
  return history;
}

std::size_t worker_count() {
  if (const char* env = std::getenv("PCT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

Tensor embed_images(const Model& model, const Tensor& images, std::size_t threads) {
  if (images.rank() != 4) throw DimensionError("embed_images: expected (N, C, H, W), got " + to_string(images.shape()));
  const std::size_t n = images.dim(0);
  const std::size_t d = model.config().backbone.embed_dim;
  std::vector<double> out(n * d);
  const std::size_t chunks = (n + kEmbedChunk - 1) / kEmbedChunk;
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, chunks));
  auto work = [&](std::size_t worker) {
    for (std::size_t c = worker; c < chunks; c += threads) {
      const std::size_t begin = c * kEmbedChunk, end = std::min(n, begin + kEmbedChunk);
      std::vector<std::size_t> rows(end - begin);
      std::iota(rows.begin(), rows.end(), begin);
      const Tensor e = model.embed(gather(images, rows));
      std::copy(e.data().begin(), e.data().end(), out.begin() + static_cast<std::ptrdiff_t>(begin * d));
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          work(w);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return Tensor::from({n, d}, std::move(out));
}

std::map<std::string, std::vector<fairness::ScoredPair>> score_pairs(const Model& model,
                                                                     const std::vector<synth::PairRecord>& pairs,
                                                                     const fs::path& data_dir, std::size_t threads) {
  std::map<std::string, std::size_t> index;
  std::vector<std::string> paths;
  for (const auto& p : pairs) {
    for (const std::string* path : {&p.path_a, &p.path_b}) {
      if (index.emplace(*path, paths.size()).second) paths.push_back(*path);
    }
  }
  const auto& b = model.config().backbone;
  const Shape image_shape{b.in_channels, b.in_height, b.in_width};
  std::vector<double> pixels;
  pixels.reserve(paths.size() * numel(image_shape));
  for (const std::string& path : paths) {
    const fs::path full = data_dir / path;
    if (!fs::exists(full)) throw IoError("missing image file " + full.string());
    const Tensor img = io::load_tensor(full);
    if (img.shape() != image_shape) {
      throw IoError(full.string() + ": image shape " + to_string(img.shape()) + " does not match model input " +
                    to_string(image_shape));
    }
    pixels.insert(pixels.end(), img.data().begin(), img.data().end());
  }
  Shape batch{paths.size()};
  batch.insert(batch.end(), image_shape.begin(), image_shape.end());
  const Tensor embeds = embed_images(model, Tensor::from(std::move(batch), std::move(pixels)), threads);
  const std::size_t d = embeds.dim(1);
  const auto e = embeds.data();
  std::map<std::string, std::vector<fairness::ScoredPair>> grouped;
  for (const auto& p : pairs) {
    const auto a = e.subspan(index.at(p.path_a) * d, d);
    const auto c = e.subspan(index.at(p.path_b) * d, d);
    grouped[group_name(p.group)].push_back({fairness::cosine_similarity(a, c), p.same});
  }
  return grouped;
}

fairness::GroupMetrics evaluate(const Model& model, const std::vector<synth::PairRecord>& pairs,
                                const fs::path& data_dir, std::span<const double> fpr_grid, std::size_t threads) {
  return fairness::evaluate_groups(score_pairs(model, pairs, data_dir, threads), fpr_grid);
}

double round4(double x) {
  const double r = std::round(x * 1e4) / 1e4;
  return r == 0.0 ? 0.0 : r;
}

json metrics_to_json(const fairness::GroupMetrics& m) {
  json j;
  j["groups"] = m.groups;
  json acc = json::object(), thr = json::object();
  for (std::size_t g = 0; g < m.groups.size(); ++g) {
    acc[m.groups[g]] = round4(m.accuracy.at(g));
    if (g < m.thresholds.size()) thr[m.groups[g]] = round4(m.thresholds[g]);
  }
  j["accuracy"] = acc;
  j["thresholds"] = thr;
  j["ave"] = round4(m.accuracy_summary.ave);
  j["std"] = round4(m.accuracy_summary.std);
  json fpr = json::array();
  for (const auto& r : m.fpr) {
    json g = json::object();
    for (std::size_t k = 0; k < m.groups.size(); ++k) g[m.groups[k]] = round4(r.group_fprs.at(k));
    fpr.push_back({{"target_fpr", r.target_fpr},
                   {"threshold", round4(r.threshold)},
                   {"pooled_fpr", round4(r.pooled_fpr)},
                   {"group_fpr", g},
                   {"bias_degree", round4(r.bias_degree)}});
  }
  j["fpr"] = fpr;
  return j;
}

fairness::GroupMetrics metrics_from_json(const json& j) {
  fairness::GroupMetrics m;
  try {
    m.groups = j.at("groups").get<std::vector<std::string>>();
    for (const auto& g : m.groups) {
      m.accuracy.push_back(j.at("accuracy").at(g).get<double>());
      if (j.at("thresholds").contains(g)) m.thresholds.push_back(j.at("thresholds").at(g).get<double>());
    }
    m.accuracy_summary = {j.at("ave").get<double>(), j.at("std").get<double>()};
    for (const auto& r : j.at("fpr")) {
      fairness::FprReport rep;
      rep.target_fpr = r.at("target_fpr").get<double>();
      rep.threshold = r.at("threshold").get<double>();
      rep.pooled_fpr = r.at("pooled_fpr").get<double>();
      for (const auto& g : m.groups) rep.group_fprs.push_back(r.at("group_fpr").at(g).get<double>());
      rep.bias_degree = r.at("bias_degree").get<double>();
      m.fpr.push_back(std::move(rep));
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed metrics report: ") + e.what());
  }
  return m;
}

std::string metrics_to_csv(const fairness::GroupMetrics& m) {
  std::ostringstream os;
  os << "metric,group,target_fpr,value\n";
  for (std::size_t g = 0; g < m.groups.size(); ++g) {
    os << "accuracy," << m.groups[g] << ",," << fixed4(m.accuracy[g]) << '\n';
    if (g < m.thresholds.size()) os << "threshold," << m.groups[g] << ",," << fixed4(m.thresholds[g]) << '\n';
  }
  os << "ave,,," << fixed4(m.accuracy_summary.ave) << '\n';
  os << "std,,," << fixed4(m.accuracy_summary.std) << '\n';
  for (const auto& r : m.fpr) {
    const std::string t = target_label(r.target_fpr);
    os << "global_threshold,," << t << ',' << fixed4(r.threshold) << '\n';
    os << "pooled_fpr,," << t << ',' << fixed4(r.pooled_fpr) << '\n';
    for (std::size_t g = 0; g < m.groups.size(); ++g) {
      os << "group_fpr," << m.groups[g] << ',' << t << ',' << fixed4(r.group_fprs[g]) << '\n';
    }
    os << "bias_degree,," << t << ',' << fixed4(r.bias_degree) << '\n';
  }
  return os.str();
}

fairness::GroupMetrics published_metrics(const std::vector<std::string>& groups, const std::vector<double>& values) {
  if (groups.size() != values.size()) throw ContractError("published_metrics: one value per group required");
  fairness::GroupMetrics m;
  m.groups = groups;
  m.accuracy = values;
  m.accuracy_summary = fairness::ave_std(values);
  return m;
}

json report_to_json(const TrainReport& report, const RunConfig& cfg) {
  json j;
  j["config"] = cfg.to_config().values();
  json epochs = json::array();
  for (const auto& e : report.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"lr_face", e.lr_face},
                      {"lr_race", e.lr_race},
                      {"face_loss", e.face_loss},
                      {"race_loss", e.race_loss},
                      {"total_loss", e.total_loss}});
  }
  j["epochs"] = epochs;
  j["metrics"] = metrics_to_json(report.metrics);
  j["wall_seconds"] = report.wall_seconds;
  j["checkpoint"] = report.checkpoint.string();
  return j;
}

TrainReport report_from_json(const json& j) {
  TrainReport r;
  try {
    for (const auto& e : j.at("epochs")) {
      r.epochs.push_back({e.at("epoch").get<int>(), e.at("lr_face").get<double>(), e.at("lr_race").get<double>(),
                          e.at("face_loss").get<double>(), e.at("race_loss").get<double>(),
                          e.at("total_loss").get<double>()});
    }
    r.wall_seconds = j.at("wall_seconds").get<double>();
    r.checkpoint = j.at("checkpoint").get<std::string>();
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed run report: ") + e.what());
  }
  r.metrics = metrics_from_json(j.at("metrics"));
  return r;
}

TrainReport run_train(RunConfig cfg, const fs::path& data_dir, const fs::path& out_dir, const TrainOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const synth::TrainingSet data = synth::load_training_set(data_dir);
  cfg.backbone.in_channels = data.images.dim(1);
  cfg.backbone.in_height = data.images.dim(2);
  cfg.backbone.in_width = data.images.dim(3);
  const auto pairs = synth::read_pairs(data_dir / "pairs.txt");

  Model model(cfg, data.num_classes, data.num_groups);
  TrainReport report;
  report.epochs = train(model, data, options);
  model.round_to_float32();
  fs::create_directories(out_dir);
  report.checkpoint = out_dir / "checkpoint.pct";
  model.save(report.checkpoint);
  report.metrics = evaluate(model, pairs, data_dir, cfg.fpr_grid, worker_count());
  write_text(out_dir / "metrics.json", metrics_to_json(report.metrics).dump(2) + "\n");
  write_text(out_dir / "metrics.csv", metrics_to_csv(report.metrics));
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_text(out_dir / "report.json", report_to_json(report, model.config()).dump(2) + "\n");
  return report;
}

fairness::GroupMetrics run_eval(const fs::path& checkpoint, const fs::path& pairs_file, const fs::path& data_dir,
                                std::span<const double> fpr_grid, const fs::path& out_dir) {
  const Model model = Model::load(checkpoint);
  const auto pairs = synth::read_pairs(pairs_file);
  const std::vector<double> grid =
      fpr_grid.empty() ? model.config().fpr_grid : std::vector<double>(fpr_grid.begin(), fpr_grid.end());
  auto metrics = evaluate(model, pairs, data_dir, grid, worker_count());
  write_text(out_dir / "metrics.json", metrics_to_json(metrics).dump(2) + "\n");
  write_text(out_dir / "metrics.csv", metrics_to_csv(metrics));
  return metrics;
}

Variant make_variant(const RunConfig& base, const std::string& name) {
  Variant v{name, base};
  auto& stages = v.config.backbone.stages;
  auto set_all = [&](bool on) {
    for (auto& s : stages) s.ct_enabled = on;
  };
  if (name == "no-ct") {
    set_all(false);
  } else if (name == "pct") {
    set_all(true);
  } else if (name.rfind("ct@", 0) == 0 || (name.size() > 1 && name[0] == 'h')) {
    const bool is_stage = name[0] == 'c';
    const std::string digits = name.substr(is_stage ? 3 : 1);
    std::size_t k = 0;
    try {
      std::size_t used = 0;
      k = std::stoul(digits, &used);
      if (used != digits.size()) throw std::invalid_argument(digits);
    } catch (const std::exception&) {
      throw ConfigError("unknown variant '" + name + "'");
    }
    if (is_stage) {
      if (k >= stages.size()) throw ConfigError("variant " + name + ": no stage " + std::to_string(k));
      set_all(false);
      stages[k].ct_enabled = true;
    } else {
      set_all(true);
      v.config.backbone.heads = k;
    }
  } else {
    throw ConfigError("unknown variant '" + name + "' (expected no-ct, pct, ct@<stage> or h<heads>)");
  }
  v.config.validate();
  return v;
}

const AblationRow& AblationTable::row(const std::string& variant, const std::string& seed) const {
  for (const auto& r : rows) {
    if (r.variant == variant && r.seed == seed) return r;
  }
  throw ContractError("ablation table has no row (" + variant + ", " + seed + ")");
}

AblationTable run_ablation(const RunConfig& base, const std::vector<std::string>& variants,
                           const std::vector<std::uint64_t>& seeds, const fs::path& data_dir,
                           const fs::path& out_dir, const std::function<void(const std::string&)>& progress) {
  if (variants.empty() || seeds.empty()) throw ConfigError("ablation needs at least one variant and one seed");
  std::vector<Variant> configs;
  for (const auto& name : variants) configs.push_back(make_variant(base, name));
  AblationTable table;
  std::vector<AblationRow> means;
  for (const auto& v : configs) {
    AblationRow mean{v.name, "mean", 0.0, 0.0, {}};
    for (std::uint64_t seed : seeds) {
      RunConfig cfg = v.config;
      cfg.seed = seed;
      const auto run_dir = out_dir / v.name / ("seed_" + std::to_string(seed));
      const TrainReport rep = run_train(cfg, data_dir, run_dir);
      if (table.fpr_targets.empty()) {
        for (const auto& r : rep.metrics.fpr) table.fpr_targets.push_back(r.target_fpr);
        mean.bias_degree.assign(table.fpr_targets.size(), 0.0);
      }
      AblationRow row{v.name, std::to_string(seed), rep.metrics.accuracy_summary.ave, rep.metrics.accuracy_summary.std,
                      {}};
      for (const auto& r : rep.metrics.fpr) row.bias_degree.push_back(r.bias_degree);
      if (mean.bias_degree.empty()) mean.bias_degree.assign(row.bias_degree.size(), 0.0);
      mean.ave += row.ave / static_cast<double>(seeds.size());
      mean.std += row.std / static_cast<double>(seeds.size());
      for (std::size_t k = 0; k < row.bias_degree.size() && k < mean.bias_degree.size(); ++k) {
        mean.bias_degree[k] += row.bias_degree[k] / static_cast<double>(seeds.size());
      }
      if (progress) {
        progress(v.name + " seed " + row.seed + ": ave " + fixed4(row.ave) + " std " + fixed4(row.std) + " (" +
                 fixed4(rep.wall_seconds) + " s)");
      }
      table.rows.push_back(std::move(row));
    }
    means.push_back(std::move(mean));
  }
  table.rows.insert(table.rows.end(), means.begin(), means.end());
  write_text(out_dir / "ablation.json", ablation_to_json(table).dump(2) + "\n");
  write_text(out_dir / "ablation.csv", ablation_to_csv(table));
  return table;
}

json ablation_to_json(const AblationTable& table) {
  json j;
  j["fpr_targets"] = table.fpr_targets;
  json rows = json::array();
  for (const auto& r : table.rows) {
    json bd = json::array();
    for (double b : r.bias_degree) bd.push_back(round4(b));
    rows.push_back({{"variant", r.variant},
                    {"seed", r.seed},
                    {"ave", round4(r.ave)},
                    {"std", round4(r.std)},
                    {"bias_degree", bd}});
  }
  j["rows"] = rows;
  return j;
}

std::string ablation_to_csv(const AblationTable& table) {
  std::ostringstream os;
  os << "variant,seed,ave,std";
  for (double t : table.fpr_targets) os << ",bias_degree@" << target_label(t);
  os << '\n';
  for (const auto& r : table.rows) {
    os << r.variant << ',' << r.seed << ',' << fixed4(r.ave) << ',' << fixed4(r.std);
    for (double b : r.bias_degree) os << ',' << fixed4(b);
    os << '\n';
  }
  return os.str();
}

double probe_accuracy(const Tensor& features, std::span<const int> labels, std::size_t num_classes, double ridge) {
  if (features.rank() != 2 || features.dim(0) != labels.size()) {
    throw DimensionError("probe_accuracy: features " + to_string(features.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = features.dim(0), d = features.dim(1);
  const std::size_t n_fit = (n + 1) / 2, n_test = n / 2;
  if (n_test == 0) throw ContractError("probe_accuracy: need at least 2 samples");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(features.data().data(),
                                                                                             static_cast<long>(n),
                                                                                             static_cast<long>(d));
  Eigen::MatrixXd fit(n_fit, d + 1), test(n_test, d + 1), y = Eigen::MatrixXd::Zero(n_fit, num_classes);
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i % 2 == 0 ? fit : test;
    const long r = static_cast<long>(i / 2);
    dst.row(r).head(d) = x.row(static_cast<long>(i));
    dst(r, static_cast<long>(d)) = 1.0;
    if (i % 2 == 0) {
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
        throw ContractError("probe_accuracy: label out of range");
      }
      y(r, labels[i]) = 1.0;
    }
  }
  // Standardise feature columns on the fitting rows.
  for (std::size_t c = 0; c < d; ++c) {
    const double mu = fit.col(static_cast<long>(c)).mean();
    const double sd = std::sqrt((fit.col(static_cast<long>(c)).array() - mu).square().mean());
    const double inv = sd > 1e-12 ? 1.0 / sd : 0.0;
    fit.col(static_cast<long>(c)) = (fit.col(static_cast<long>(c)).array() - mu) * inv;
    test.col(static_cast<long>(c)) = (test.col(static_cast<long>(c)).array() - mu) * inv;
  }
  Eigen::MatrixXd gram = fit.transpose() * fit;
  gram.diagonal().array() += ridge * static_cast<double>(n_fit);
  const Eigen::MatrixXd w = gram.ldlt().solve(fit.transpose() * y);
  const Eigen::MatrixXd scores = test * w;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n_test; ++i) {
    Eigen::Index best = 0;
    scores.row(static_cast<long>(i)).maxCoeff(&best);
    if (best == labels[2 * i + 1]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n_test);
}

std::vector<double> stage_group_separability(const Model& model, const synth::TrainingSet& data) {
  const std::size_t n = data.images.dim(0);
  const std::size_t stages = model.config().backbone.stages.size();
  std::vector<std::vector<double>> pooled(stages);
  NoGradGuard guard;
  for (std::size_t begin = 0; begin < n; begin += kEmbedChunk) {
    std::vector<std::size_t> rows(std::min(n, begin + kEmbedChunk) - begin);
    std::iota(rows.begin(), rows.end(), begin);
    const auto fwd = model.net().forward(gather(data.images, rows));
    for (std::size_t t = 0; t < stages; ++t) {
      const auto v = fwd.stage_id_pooled[t].data();
      pooled[t].insert(pooled[t].end(), v.begin(), v.end());
    }
  }
  std::vector<double> out;
  for (std::size_t t = 0; t < stages; ++t) {
    const std::size_t width = pooled[t].size() / n;
    out.push_back(probe_accuracy(Tensor::from({n, width}, std::move(pooled[t])), data.group_labels, data.num_groups));
  }
  return out;
}

std::vector<fs::path> export_attention(const Model& model, const Tensor& image, const fs::path& out_dir) {
  NoGradGuard guard;
  const auto fwd = model.net().forward(image);
  if (fwd.attention.empty()) throw ContractError("export_attention: model has no CT stages");
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (const auto& rec : fwd.attention) {
    const std::size_t heads = rec.id_to_ra.dim(rec.id_to_ra.rank() - 3);
    const std::size_t n = rec.h * rec.w;
    const std::string stage = "stage" + std::to_string(rec.stage);
    for (const auto& [dir, attn] : {std::pair{std::string("id_to_ra"), rec.id_to_ra}, {"ra_to_id", rec.ra_to_id}}) {
      const Tensor a = reshape(attn, {heads, n, n});
      const Tensor heat = ct::key_marginal_heatmaps(a, rec.h, rec.w);
      const fs::path base = out_dir / (stage + "_" + dir);
      io::save_tensor(base.string() + ".pct", a);
      io::save_tensor(base.string() + "_heat.pct", heat);
      written.push_back(base.string() + ".pct");
      written.push_back(base.string() + "_heat.pct");
      for (std::size_t k = 0; k < heads; ++k) {
        const fs::path pgm = base.string() + "_head" + std::to_string(k) + ".pgm";
        write_pgm(pgm, heat.data().subspan(k * n, n), rec.h, rec.w);
        written.push_back(pgm);
      }
    }
  }
  return written;
}

}  // namespace pct::harness
