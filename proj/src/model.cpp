#include "pct/model.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

#include "pct/errors.hpp"
#include "pct/io.hpp"
#include "pct/synth.hpp"

namespace pct {

namespace {

const std::set<std::string> kRunKeys = {
    "in_channels", "in_height", "in_width",   "stem_width",   "stem_stride",  "kernel",       "stage_widths",
    "stage_strides", "ct_stages", "embed_dim", "heads",       "max_rel_offset", "ct_value_gain", "margin",     "s",
    "m",           "alpha",     "lr_face",    "lr_race",      "momentum",     "weight_decay", "decay_epochs",
    "decay_factor", "grad_clip", "epochs",   "batch_size", "seed",         "fpr_grid"};

std::vector<std::pair<int, double>> make_schedule(const std::vector<long>& epochs, double factor) {
  std::vector<std::pair<int, double>> out;
  for (long e : epochs) out.emplace_back(static_cast<int>(e), factor);
  return out;
}

std::string ct_stage_list(const backbone::BackboneConfig& b) {
  std::vector<long> on;
  for (std::size_t t = 0; t < b.stages.size(); ++t) {
    if (b.stages[t].ct_enabled) on.push_back(static_cast<long>(t));
  }
  if (on.empty()) return "none";
  if (on.size() == b.stages.size()) return "all";
  return join_ints(on);
}

}  // namespace

void RunConfig::validate() const {
  backbone.validate();
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be nonnegative");
  if (!(margin.s > 0.0)) throw ConfigError("margin scale s must be positive");
  if (!(margin.m >= 0.0)) throw ConfigError("margin m must be nonnegative");
  face_opt.validate();
  race_opt.validate();
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be nonnegative");
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  for (double f : fpr_grid) {
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("fpr_grid entries must lie in (0, 1)");
  }
}

RunConfig RunConfig::from_config(const KeyValueConfig& kv) {
  kv.check_keys(kRunKeys);
  RunConfig c;
  auto& b = c.backbone;
  b.in_channels = kv.get_size("in_channels", b.in_channels);
  b.in_height = kv.get_size("in_height", b.in_height);
  b.in_width = kv.get_size("in_width", b.in_width);
  b.stem_width = kv.get_size("stem_width", b.stem_width);
  b.stem_stride = static_cast<int>(kv.get_int("stem_stride", b.stem_stride));
  b.kernel = kv.get_size("kernel", b.kernel);
  b.embed_dim = kv.get_size("embed_dim", b.embed_dim);
  b.heads = kv.get_size("heads", b.heads);
  b.max_rel_offset = kv.get_size("max_rel_offset", b.max_rel_offset);
  b.ct_value_gain = kv.get_double("ct_value_gain", b.ct_value_gain);

  std::vector<long> widths, strides;
  for (const auto& s : b.stages) {
    widths.push_back(static_cast<long>(s.width));
    strides.push_back(s.stride);
  }
  widths = kv.get_ints("stage_widths", widths);
  strides = kv.get_ints("stage_strides", strides);
  if (widths.size() != strides.size()) {
    throw ConfigError("stage_widths and stage_strides must have the same length");
  }
  b.stages.clear();
  for (std::size_t t = 0; t < widths.size(); ++t) {
    if (widths[t] <= 0) throw ConfigError("stage_widths entries must be positive");
    b.stages.push_back({static_cast<std::size_t>(widths[t]), static_cast<int>(strides[t]), true});
  }
  const std::string ct = kv.get_string("ct_stages", "all");
  if (ct == "none") {
    for (auto& s : b.stages) s.ct_enabled = false;
  } else if (ct != "all") {
    for (auto& s : b.stages) s.ct_enabled = false;
    for (long t : kv.get_ints("ct_stages", {})) {
      if (t < 0 || static_cast<std::size_t>(t) >= b.stages.size()) {
        throw ConfigError("ct_stages entry " + std::to_string(t) + " is not a stage index");
      }
      b.stages[static_cast<std::size_t>(t)].ct_enabled = true;
    }
  }

  c.margin.variant = losses::parse_variant(kv.get_string("margin", losses::to_string(c.margin.variant)));
  c.margin.s = kv.get_double("s", c.margin.s);
  c.margin.m = kv.get_double("m", c.margin.m);
  c.alpha = kv.get_double("alpha", c.alpha);

  c.face_opt.learning_rate = kv.get_double("lr_face", c.face_opt.learning_rate);
  c.race_opt.learning_rate = kv.get_double("lr_race", c.race_opt.learning_rate);
  const double mom = kv.get_double("momentum", c.face_opt.momentum);
  const double wd = kv.get_double("weight_decay", c.face_opt.weight_decay);
  const auto decay = kv.get_ints("decay_epochs", {16, 24, 28});
  const double factor = kv.get_double("decay_factor", 0.1);
  for (OptimizerConfig* o : {&c.face_opt, &c.race_opt}) {
    o->momentum = mom;
    o->weight_decay = wd;
    o->schedule = make_schedule(decay, factor);
  }
  c.grad_clip = kv.get_double("grad_clip", c.grad_clip);
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  const long batch = kv.get_int("batch_size", static_cast<long>(c.batch_size));
  if (batch <= 0) throw ConfigError("batch_size must be positive");
  c.batch_size = static_cast<std::size_t>(batch);
  c.seed = static_cast<std::uint64_t>(kv.get_size("seed", c.seed));
  c.fpr_grid = kv.get_doubles("fpr_grid", c.fpr_grid);
  c.validate();
  return c;
}

KeyValueConfig RunConfig::to_config() const {
  KeyValueConfig kv;
  const auto& b = backbone;
  kv.set("in_channels", std::to_string(b.in_channels));
  kv.set("in_height", std::to_string(b.in_height));
  kv.set("in_width", std::to_string(b.in_width));
  kv.set("stem_width", std::to_string(b.stem_width));
  kv.set("stem_stride", std::to_string(b.stem_stride));
  kv.set("kernel", std::to_string(b.kernel));
  std::vector<long> widths, strides;
  for (const auto& s : b.stages) {
    widths.push_back(static_cast<long>(s.width));
    strides.push_back(s.stride);
  }
  kv.set("stage_widths", join_ints(widths));
  kv.set("stage_strides", join_ints(strides));
  kv.set("ct_stages", ct_stage_list(b));
  kv.set("embed_dim", std::to_string(b.embed_dim));
  kv.set("heads", std::to_string(b.heads));
  kv.set("max_rel_offset", std::to_string(b.max_rel_offset));
  kv.set("ct_value_gain", join_doubles({b.ct_value_gain}));
  kv.set("margin", losses::to_string(margin.variant));
  kv.set("s", join_doubles({margin.s}));
  kv.set("m", join_doubles({margin.m}));
  kv.set("alpha", join_doubles({alpha}));
  kv.set("lr_face", join_doubles({face_opt.learning_rate}));
  kv.set("lr_race", join_doubles({race_opt.learning_rate}));
  kv.set("momentum", join_doubles({face_opt.momentum}));
  kv.set("weight_decay", join_doubles({face_opt.weight_decay}));
  std::vector<long> decay;
  double factor = 0.1;
  for (const auto& [e, f] : face_opt.schedule) {
    decay.push_back(e);
    factor = f;
  }
  kv.set("decay_epochs", join_ints(decay));
  kv.set("decay_factor", join_doubles({factor}));
  kv.set("grad_clip", join_doubles({grad_clip}));
  kv.set("epochs", std::to_string(epochs));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("seed", std::to_string(seed));
  kv.set("fpr_grid", join_doubles(fpr_grid));
  return kv;
}

Model::Model(RunConfig cfg, std::size_t num_classes, std::size_t num_groups)
    : cfg_(std::move(cfg)),
      num_classes_(num_classes),
      num_groups_(num_groups),
      net_(cfg_.backbone, cfg_.seed) {
  cfg_.validate();
  if (num_classes < 2) throw ConfigError("need at least 2 identity classes");
  if (num_groups < 2) throw ConfigError("need at least 2 groups");
  cfg_.margin.num_classes = num_classes;
  cfg_.margin.validate();
  std::mt19937_64 face_rng(backbone::derive_seed(cfg_.seed, 3));
  face_head_ = losses::ClassifierHead::init(num_classes, cfg_.backbone.embed_dim, face_rng);
  std::mt19937_64 race_rng(backbone::derive_seed(cfg_.seed, 4));
  race_head_ = losses::LinearHead::init(cfg_.backbone.embed_dim, num_groups, race_rng);
}

std::vector<Param*> Model::face_params() {
  std::vector<Param*> out = net_.identity_params();
  auto ct = net_.ct_params();
  out.insert(out.end(), ct.begin(), ct.end());
  out.push_back(&face_head_.weight);
  return out;
}

std::vector<Param*> Model::race_params() {
  std::vector<Param*> out = net_.race_params();
  out.push_back(&race_head_.weight);
  out.push_back(&race_head_.bias);
  return out;
}

std::vector<Param*> Model::all_params() {
  std::vector<Param*> out = face_params();
  auto ra = race_params();
  out.insert(out.end(), ra.begin(), ra.end());
  return out;
}

std::vector<const Param*> Model::all_params() const {
  auto mutable_params = const_cast<Model*>(this)->all_params();
  return {mutable_params.begin(), mutable_params.end()};
}

Tensor Model::embed(const Tensor& images) const {
  NoGradGuard guard;
  return net_.forward(images).embeddings.id_embed;
}

void Model::round_to_float32() {
  for (Param* p : all_params()) io::round_to_float32(p->value);
}

void Model::save(const std::filesystem::path& path) const {
  std::ostringstream blob;
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const Param* p : all_params()) {
    io::write_pct1(blob, p->value);
    tensors.push_back({{"name", p->name}, {"offset", offset}, {"shape", p->value.shape()}});
    offset += io::pct1_record_size(p->value.shape());
  }
  nlohmann::json manifest;
  manifest["format"] = "pct-checkpoint";
  manifest["version"] = 1;
  manifest["num_classes"] = num_classes_;
  manifest["num_groups"] = num_groups_;
  manifest["config"] = cfg_.to_config().serialize();
  manifest["tensors"] = tensors;
  manifest["bytes"] = offset;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << blob.str();
  std::filesystem::path manifest_path = path;
  manifest_path.replace_extension(".json");
  std::ofstream mout(manifest_path, std::ios::trunc);
  if (!mout) throw IoError("cannot write checkpoint manifest " + manifest_path.string());
  mout << manifest.dump(2) << '\n';
}

Model Model::load(const std::filesystem::path& path) {
  std::filesystem::path manifest_path = path;
  manifest_path.replace_extension(".json");
  std::ifstream min(manifest_path);
  if (!min) throw IoError("cannot open checkpoint manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(min);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "pct-checkpoint") {
    throw IoError(manifest_path.string() + ": not a checkpoint manifest");
  }
  const RunConfig cfg =
      RunConfig::from_config(KeyValueConfig::parse_string(manifest.at("config").get<std::string>(), manifest_path.string()));
  Model model(cfg, manifest.at("num_classes").get<std::size_t>(), manifest.at("num_groups").get<std::size_t>());

  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::map<std::string, Param*> by_name;
  for (Param* p : model.all_params()) by_name[p->name] = p;
  std::set<std::string> seen;
  for (const auto& entry : manifest.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError(path.string() + ": unexpected tensor '" + name + "'");
    in.seekg(static_cast<std::streamoff>(entry.at("offset").get<std::size_t>()));
    Tensor t = io::read_pct1(in);
    if (t.shape() != it->second->value.shape()) {
      throw IoError(path.string() + ": tensor '" + name + "' has shape " + to_string(t.shape()) + ", expected " +
                    to_string(it->second->value.shape()));
    }
    std::copy(t.data().begin(), t.data().end(), it->second->value.mutable_data().begin());
    seen.insert(name);
  }
  if (seen.size() != by_name.size()) {
    for (const auto& [name, p] : by_name) {
      if (!seen.count(name)) throw IoError(path.string() + ": missing tensor '" + name + "'");
    }
  }
  return model;
}

std::uint64_t parameter_hash(std::span<const Param* const> params) {
  std::string bytes;
  for (const Param* p : params) {
    for (double v : p->value.data()) {
      char buf[sizeof(double)];
      std::memcpy(buf, &v, sizeof v);
      bytes.append(buf, sizeof buf);
    }
  }
  return synth::fnv1a(bytes);
}

}  // namespace pct
