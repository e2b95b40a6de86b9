#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "pct/config.hpp"
#include "pct/errors.hpp"
#include "pct/harness.hpp"
#include "pct/io.hpp"
#include "pct/model.hpp"
#include "pct/synth.hpp"

using namespace pct;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pct_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Small dataset on disk, generated once per test binary.
const fs::path& tiny_data() {
  static const fs::path dir = [] {
    synth::DatasetSpec s;
    s.ids_per_group = 6;
    s.images_per_id = 4;
    s.test_ids_per_group = 2;
    s.pairs_per_group = 10;
    s.height = 8;
    s.width = 8;
    const fs::path d = scratch("data");
    synth::write_dataset(synth::generate(s, 7), d);
    return d;
  }();
  return dir;
}

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.backbone.in_height = 8;
  cfg.backbone.in_width = 8;
  cfg.backbone.stem_width = 4;
  cfg.backbone.stages = {{4, 1, true}, {8, 2, true}};
  cfg.backbone.embed_dim = 8;
  cfg.backbone.max_rel_offset = 2;
  cfg.backbone.ct_value_gain = 0.5;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 3;
  cfg.fpr_grid = {0.5, 0.25};
  return cfg;
}

std::vector<const Param*> as_const(const std::vector<Param*>& ps) { return {ps.begin(), ps.end()}; }

}  // namespace

TEST(Io, Pct1RoundTrip) {
  Tensor t = Tensor::from({2, 3}, {1.5, -2.25, 0, 1e-3, 3.14159, -7});
  std::stringstream buf;
  io::write_pct1(buf, t);
  EXPECT_EQ(buf.str().size(), io::pct1_record_size({2, 3}));
  EXPECT_EQ(buf.str().substr(0, 4), "PCT1");
  const Tensor back = io::read_pct1(buf);
  EXPECT_EQ(back.shape(), t.shape());
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(back.data()[i], static_cast<double>(static_cast<float>(t.data()[i])));
}

TEST(Io, BadRecordsThrow) {
  std::stringstream bad("PCT2\x01\x00\x00\x00");
  EXPECT_THROW(io::read_pct1(bad), IoError);
  std::stringstream truncated;
  io::write_pct1(truncated, Tensor::from({4}, {1, 2, 3, 4}));
  std::stringstream cut(truncated.str().substr(0, truncated.str().size() - 2));
  EXPECT_THROW(io::read_pct1(cut), IoError);
  EXPECT_THROW(io::load_tensor("/nonexistent/x.pct"), IoError);
}

TEST(Config, ParsesCommentsListsAndErrors) {
  const auto cfg = KeyValueConfig::parse_string("# run\nalpha = 0.5\n\nstage_widths=8,16 , 32\n", "run.cfg");
  EXPECT_EQ(cfg.get_double("alpha", 1.0), 0.5);
  EXPECT_EQ(cfg.get_ints("stage_widths", {}), (std::vector<long>{8, 16, 32}));
  EXPECT_EQ(cfg.get_double("missing", 2.5), 2.5);
  EXPECT_THROW(KeyValueConfig::parse_string("a=1\na=2\n"), ConfigError);
  EXPECT_THROW(KeyValueConfig::parse_string("a=x\n").get_double("a", 0), ConfigError);
  try {
    KeyValueConfig::parse_string("a=1\nlr_face=0.1\noops\n", "run.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:3"), std::string::npos);
  }
}

TEST(RunConfig, RoundTripAndValidation) {
  RunConfig cfg = tiny_config();
  cfg.alpha = 0.25;
  cfg.margin.variant = losses::MarginVariant::cos;
  cfg.backbone.stages[1].ct_enabled = false;
  const RunConfig back = RunConfig::from_config(cfg.to_config());
  EXPECT_EQ(back.to_config().serialize(), cfg.to_config().serialize());
  EXPECT_EQ(back.backbone.stages[0].ct_enabled, true);
  EXPECT_EQ(back.backbone.stages[1].ct_enabled, false);
  EXPECT_THROW(RunConfig::from_config(KeyValueConfig::parse_string("unknown_key=1\n")), ConfigError);
  EXPECT_THROW(RunConfig::from_config(KeyValueConfig::parse_string("heads=3\n")), ConfigError);
  EXPECT_THROW(RunConfig::from_config(KeyValueConfig::parse_string("lr_face=-1\n")), ConfigError);
  EXPECT_THROW(RunConfig::from_config(KeyValueConfig::parse_string("alpha=-1\n")), ConfigError);
}

TEST(RunConfig, DefaultsFollowTheTrainingRecipe) {
  const RunConfig cfg;
  EXPECT_EQ(cfg.backbone.heads, 2u);
  EXPECT_EQ(cfg.margin.s, 64.0);
  EXPECT_EQ(cfg.margin.m, 0.35);
  EXPECT_EQ(cfg.alpha, 1.0);
  EXPECT_EQ(cfg.epochs, 32);
  EXPECT_EQ(cfg.face_opt.momentum, 0.9);
  EXPECT_EQ(cfg.face_opt.weight_decay, 5e-4);
  EXPECT_EQ(cfg.face_opt.schedule, (std::vector<std::pair<int, double>>{{16, 0.1}, {24, 0.1}, {28, 0.1}}));
  EXPECT_NEAR(cfg.race_opt.learning_rate / cfg.face_opt.learning_rate, 0.1, 1e-12);
}

TEST(Model, CheckpointRoundTrip) {
  const fs::path dir = scratch("ckpt");
  Model m(tiny_config(), 12, 4);
  m.round_to_float32();
  m.save(dir / "model.pct");
  ASSERT_TRUE(fs::exists(dir / "model.json"));
  const auto manifest = nlohmann::json::parse(slurp(dir / "model.json"));
  EXPECT_EQ(manifest.at("format"), "pct-checkpoint");
  EXPECT_EQ(manifest.at("num_classes"), 12);
  const Model back = Model::load(dir / "model.pct");
  const std::vector<const Param*> a = std::as_const(m).all_params(), b = back.all_params();
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(parameter_hash(a), parameter_hash(b));
  back.save(dir / "again.pct");
  EXPECT_EQ(slurp(dir / "model.pct"), slurp(dir / "again.pct"));
  fs::remove_all(dir);
}

TEST(Model, CorruptCheckpointThrows) {
  const fs::path dir = scratch("corrupt");
  Model(tiny_config(), 12, 4).save(dir / "m.pct");
  const std::string bytes = slurp(dir / "m.pct");
  std::ofstream(dir / "m.pct", std::ios::binary | std::ios::trunc) << bytes.substr(0, bytes.size() / 2);
  EXPECT_THROW(Model::load(dir / "m.pct"), Error);
  EXPECT_THROW(Model::load(dir / "missing.pct"), IoError);
  fs::remove_all(dir);
}

TEST(Train, OneEpochOn32SamplesIsFinite) {
  synth::TrainingSet data = synth::load_training_set(tiny_data());
  ASSERT_GE(data.images.dim(0), 32u);
  // Keep the first 32 samples.
  std::vector<double> px(data.images.data().begin(), data.images.data().begin() + 32 * 64);
  data.images = Tensor::from({32, 1, 8, 8}, std::move(px));
  data.class_labels.resize(32);
  data.group_labels.resize(32);
  RunConfig cfg = tiny_config();
  cfg.epochs = 1;
  Model model(cfg, data.num_classes, data.num_groups);
  const auto hist = harness::train(model, data);
  ASSERT_EQ(hist.size(), 1u);
  EXPECT_TRUE(std::isfinite(hist[0].total_loss));
  EXPECT_GT(hist[0].face_loss, 0.0);
}

TEST(Train, AlphaZeroNeverMovesTheRaceHead) {
  const synth::TrainingSet data = synth::load_training_set(tiny_data());
  RunConfig cfg = tiny_config();
  cfg.alpha = 0.0;
  Model model(cfg, data.num_classes, data.num_groups);
  const std::vector<const Param*> head{&model.race_head().weight, &model.race_head().bias};
  const std::vector<const Param*> face{&model.face_head().weight};
  const auto before = parameter_hash(head), face_before = parameter_hash(face);
  const auto hist = harness::train(model, data);
  EXPECT_EQ(parameter_hash(head), before);
  EXPECT_NE(parameter_hash(face), face_before);
  EXPECT_GT(hist.back().race_loss, 0.0);
}

TEST(Train, NonFiniteLossNamesTheStep) {
  const synth::TrainingSet data = synth::load_training_set(tiny_data());
  Model model(tiny_config(), data.num_classes, data.num_groups);
  model.face_head().weight.value.mutable_data()[0] = std::nan("");
  try {
    harness::train(model, data);
    FAIL() << "expected a numeric error";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
  }
}

TEST(Eval, EmbeddingsDoNotDependOnThreadCount) {
  const synth::TrainingSet data = synth::load_training_set(tiny_data());
  const Model model(tiny_config(), data.num_classes, data.num_groups);
  const Tensor a = harness::embed_images(model, data.images, 1);
  const Tensor b = harness::embed_images(model, data.images, 3);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST(Eval, RandomModelIsNearChance) {
  const fs::path out = scratch("chance");
  synth::DatasetSpec s;
  s.ids_per_group = 20;
  s.test_ids_per_group = 10;
  s.pairs_per_group = 200;
  // Without an identity pattern the pairs carry no identity signal at all.
  s.identity_amplitude = 0.0;
  const fs::path data = out / "data";
  synth::write_dataset(synth::generate(s, 11), data);
  RunConfig cfg;
  cfg.seed = 5;
  const Model model(cfg, 40, 4);
  const auto m = harness::evaluate(model, synth::read_pairs(data / "pairs.txt"), data, cfg.fpr_grid, 1);
  for (double a : m.accuracy) {
    EXPECT_GE(a, 0.4);
    EXPECT_LE(a, 0.6);
  }
  fs::remove_all(out);
}

TEST(Eval, MissingImageNamesThePath) {
  const Model model(tiny_config(), 12, 4);
  const std::vector<synth::PairRecord> pairs{{0, "group_0/id_0/img_0.pct", "nope/img.pct", false}};
  try {
    harness::evaluate(model, pairs, tiny_data(), std::vector<double>{0.1}, 1);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("nope/img.pct"), std::string::npos);
  }
}

TEST(Reports, MetricsJsonRoundTrip) {
  fairness::GroupMetrics m = harness::published_metrics({"a", "b", "c"}, {0.91234, 0.85, 0.77777});
  m.thresholds = {0.1, 0.2, 0.3};
  m.fpr.push_back({0.1, 0.54321, 0.1, {0.05, 0.1, 0.15}, 0.27217});
  const auto j = harness::metrics_to_json(m);
  const auto back = harness::metrics_from_json(j);
  EXPECT_EQ(back.groups, m.groups);
  EXPECT_EQ(back.accuracy, (std::vector<double>{0.9123, 0.85, 0.7778}));
  EXPECT_EQ(harness::metrics_to_json(back), j);
  EXPECT_THROW(harness::metrics_from_json(nlohmann::json::object()), IoError);
  EXPECT_EQ(harness::round4(-0.00001), 0.0);
  EXPECT_FALSE(std::signbit(harness::round4(-0.00001)));
}

TEST(Reports, PublishedValuesReproducePrintedSummary) {
  const auto& row = pct::testing::published_rows().at(6);
  const auto m = harness::published_metrics({"African", "Asian", "Caucasian", "Indian"},
                                            {row.accuracy.begin(), row.accuracy.end()});
  const auto back = harness::metrics_from_json(harness::metrics_to_json(m));
  EXPECT_EQ(pct::testing::round_to(back.accuracy_summary.ave, 2), 95.56);
  EXPECT_EQ(pct::testing::round_to(back.accuracy_summary.std, 2), 0.53);
}

TEST(Workflow, TrainEvalDeterminismAndReload) {
  const fs::path a = scratch("run_a"), b = scratch("run_b"), e = scratch("run_eval");
  const auto ra = harness::run_train(tiny_config(), tiny_data(), a);
  harness::run_train(tiny_config(), tiny_data(), b);
  EXPECT_EQ(slurp(a / "checkpoint.pct"), slurp(b / "checkpoint.pct"));
  EXPECT_EQ(slurp(a / "checkpoint.json"), slurp(b / "checkpoint.json"));
  EXPECT_EQ(slurp(a / "metrics.json"), slurp(b / "metrics.json"));
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));

  const auto rep = harness::report_from_json(nlohmann::json::parse(slurp(a / "report.json")));
  EXPECT_EQ(rep.epochs.size(), 2u);
  EXPECT_EQ(rep.checkpoint, a / "checkpoint.pct");
  EXPECT_EQ(harness::metrics_to_json(rep.metrics), harness::metrics_to_json(ra.metrics));

  harness::run_eval(a / "checkpoint.pct", tiny_data() / "pairs.txt", tiny_data(), {}, e);
  EXPECT_EQ(slurp(e / "metrics.json"), slurp(a / "metrics.json"));
  for (const auto& p : {a, b, e}) fs::remove_all(p);
}

TEST(Workflow, SingleVariantAblationMatchesTrain) {
  const fs::path a = scratch("abl"), t = scratch("abl_train");
  const auto table = harness::run_ablation(tiny_config(), {"pct"}, {3}, tiny_data(), a);
  const auto rep = harness::run_train(tiny_config(), tiny_data(), t);
  ASSERT_EQ(table.rows.size(), 2u);
  EXPECT_EQ(table.row("pct", "3").ave, rep.metrics.accuracy_summary.ave);
  EXPECT_EQ(table.row("pct", "3").std, rep.metrics.accuracy_summary.std);
  EXPECT_EQ(table.row("pct", "mean").ave, rep.metrics.accuracy_summary.ave);
  EXPECT_EQ(slurp(a / "pct" / "seed_3" / "checkpoint.pct"), slurp(t / "checkpoint.pct"));
  EXPECT_TRUE(fs::exists(a / "ablation.json"));
  EXPECT_TRUE(fs::exists(a / "ablation.csv"));
  fs::remove_all(a);
  fs::remove_all(t);
}

TEST(Workflow, AblationTableShape) {
  RunConfig cfg = tiny_config();
  cfg.epochs = 1;
  const fs::path a = scratch("abl_shape");
  const auto table = harness::run_ablation(cfg, {"no-ct", "ct@1", "h1"}, {1, 2}, tiny_data(), a);
  EXPECT_EQ(table.rows.size(), 3u * 2 + 3);
  EXPECT_EQ(table.rows.back().seed, "mean");
  const std::string csv = harness::ablation_to_csv(table);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), table.rows.size() + 1);
  fs::remove_all(a);
}

TEST(Workflow, VariantNames) {
  const RunConfig base = tiny_config();
  EXPECT_FALSE(harness::make_variant(base, "no-ct").config.backbone.stages[0].ct_enabled);
  const auto one = harness::make_variant(base, "ct@1").config.backbone.stages;
  EXPECT_FALSE(one[0].ct_enabled);
  EXPECT_TRUE(one[1].ct_enabled);
  EXPECT_EQ(harness::make_variant(base, "h4").config.backbone.heads, 4u);
  EXPECT_THROW(harness::make_variant(base, "ct@9"), ConfigError);
  EXPECT_THROW(harness::make_variant(base, "h3"), ConfigError);
  EXPECT_THROW(harness::make_variant(base, "fancy"), ConfigError);
}

TEST(Analysis, ProbeSeparatesLinearClasses) {
  std::vector<double> f;
  std::vector<int> y;
  for (int i = 0; i < 200; ++i) {
    const int c = i % 3;
    f.push_back(c == 0 ? 1.0 : 0.0);
    f.push_back(c == 1 ? 1.0 : 0.0);
    f.push_back(0.01 * (i % 7));
    y.push_back(c);
  }
  EXPECT_EQ(harness::probe_accuracy(Tensor::from({200, 3}, f), y, 3), 1.0);
}

TEST(Analysis, AttentionExportWritesMaps) {
  const fs::path out = scratch("attn");
  const Model model(tiny_config(), 12, 4);
  const Tensor image = synth::load_training_set(tiny_data()).images;
  std::vector<double> first(image.data().begin(), image.data().begin() + 64);
  const auto files = harness::export_attention(model, Tensor::from({1, 8, 8}, first), out);
  // 2 stages x 2 directions x (attention, heat map, 2 head images).
  EXPECT_EQ(files.size(), 16u);
  for (const auto& f : files) EXPECT_TRUE(fs::exists(f)) << f;
  const Tensor heat = io::load_tensor(out / "stage0_id_to_ra_heat.pct");
  EXPECT_EQ(heat.shape(), (Shape{2, 4, 4}));
  fs::remove_all(out);
}

#ifdef PCT_CLI_PATH
TEST(Cli, MalformedSpecReportsLine) {
  const fs::path dir = scratch("cli");
  std::ofstream(dir / "spec.txt") << "num_groups=4\nids_per_group\n";
  const std::string cmd = std::string(PCT_CLI_PATH) + " generate --config " + (dir / "spec.txt").string() +
                          " --out " + (dir / "out").string() + " 2> " + (dir / "err.txt").string();
  const int status = std::system(cmd.c_str());
  EXPECT_NE(status, 0);
  EXPECT_NE(slurp(dir / "err.txt").find("spec.txt:2"), std::string::npos) << slurp(dir / "err.txt");
  fs::remove_all(dir);
}

TEST(Cli, GenerateTwiceSameManifest) {
  const fs::path dir = scratch("cli_gen");
  for (const char* name : {"a", "b"}) {
    const std::string cmd = std::string(PCT_CLI_PATH) + " generate --seed 4 --out " + (dir / name).string() +
                            " > /dev/null";
    ASSERT_EQ(std::system(cmd.c_str()), 0);
  }
  EXPECT_EQ(slurp(dir / "a" / "manifest.json"), slurp(dir / "b" / "manifest.json"));
  fs::remove_all(dir);
}

TEST(Cli, PublishedValuesMode) {
  const fs::path dir = scratch("cli_pub");
  const std::string cmd = std::string(PCT_CLI_PATH) +
                          " eval --group-values 95.72,94.98,96.22,95.33 --out " + dir.string() + " > " +
                          (dir / "stdout.txt").string();
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_NE(slurp(dir / "stdout.txt").find("AVE 95.56  STD 0.53"), std::string::npos);
  fs::remove_all(dir);
}
#endif
