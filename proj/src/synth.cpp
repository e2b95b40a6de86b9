#include "pct/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

#include "pct/errors.hpp"
#include "pct/io.hpp"

namespace pct::synth {

namespace {

const std::set<std::string> kSpecKeys = {
    "num_groups",     "ids_per_group",  "images_per_id",      "height",     "width",       "test_ids_per_group",
    "pairs_per_group", "identity_cell", "identity_amplitude", "group_gain", "noise_sigma", "clip"};

std::vector<double> group_texture(const DatasetSpec& spec, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> freq(0, 2);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> amp(0.5, 1.0);
  std::vector<double> field(spec.height * spec.width, 0.0);
  for (int c = 0; c < 3; ++c) {
    int fy = freq(rng), fx = freq(rng);
    if (fy == 0 && fx == 0) fx = 1;
    const double ph = phase(rng), a = amp(rng);
    for (std::size_t y = 0; y < spec.height; ++y) {
      for (std::size_t x = 0; x < spec.width; ++x) {
        const double arg = 2.0 * std::numbers::pi *
                           (fy * static_cast<double>(y) / spec.height + fx * static_cast<double>(x) / spec.width);
        field[y * spec.width + x] += a * std::cos(arg + ph);
      }
    }
  }
  double peak = 0.0;
  for (double v : field) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (double& v : field) v /= peak;
  }
  return field;
}

std::vector<double> identity_template(const DatasetSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-spec.identity_amplitude, spec.identity_amplitude);
  const std::size_t cells_y = (spec.height + spec.identity_cell - 1) / spec.identity_cell;
  const std::size_t cells_x = (spec.width + spec.identity_cell - 1) / spec.identity_cell;
  std::vector<double> cells(cells_y * cells_x);
  for (double& v : cells) v = dist(rng);
  std::vector<double> out(spec.height * spec.width);
  for (std::size_t y = 0; y < spec.height; ++y) {
    for (std::size_t x = 0; x < spec.width; ++x) {
      out[y * spec.width + x] = cells[(y / spec.identity_cell) * cells_x + x / spec.identity_cell];
    }
  }
  return out;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
}

}  // namespace

void DatasetSpec::validate() const {
  if (num_groups < 2) throw SpecError("dataset needs at least 2 groups");
  if (ids_per_group < 2) throw SpecError("ids_per_group must be at least 2 for impostor pairs");
  if (images_per_id < 2) throw SpecError("images_per_id must be at least 2 for genuine pairs");
  if (height == 0 || width == 0) throw SpecError("image extents must be positive");
  if (test_ids_per_group < 2 || test_ids_per_group >= ids_per_group) {
    throw SpecError("test_ids_per_group must lie in [2, ids_per_group)");
  }
  if (pairs_per_group == 0) throw SpecError("pairs_per_group must be positive");
  const std::size_t genuine = test_ids_per_group * images_per_id * (images_per_id - 1) / 2;
  if (pairs_per_group > genuine) {
    throw SpecError("pairs_per_group " + std::to_string(pairs_per_group) + " exceeds the " +
                    std::to_string(genuine) + " available genuine pairs");
  }
  if (identity_cell == 0) throw SpecError("identity_cell must be positive");
  if (group_gain.size() != num_groups || noise_sigma.size() != num_groups) {
    throw SpecError("group_gain and noise_sigma need one entry per group");
  }
  for (double g : group_gain) {
    if (!(g >= 0.0)) throw SpecError("group gains must be nonnegative");
  }
  for (double s : noise_sigma) {
    if (!(s >= 0.0)) throw SpecError("noise sigmas must be nonnegative");
  }
  if (!(clip > 0.0)) throw SpecError("clip must be positive");
}

DatasetSpec DatasetSpec::from_config(const KeyValueConfig& cfg) {
  DatasetSpec s;
  try {
    cfg.check_keys(kSpecKeys);
    s.num_groups = cfg.get_size("num_groups", s.num_groups);
    s.ids_per_group = cfg.get_size("ids_per_group", s.ids_per_group);
    s.images_per_id = cfg.get_size("images_per_id", s.images_per_id);
    s.height = cfg.get_size("height", s.height);
    s.width = cfg.get_size("width", s.width);
    s.test_ids_per_group = cfg.get_size("test_ids_per_group", s.test_ids_per_group);
    s.pairs_per_group = cfg.get_size("pairs_per_group", s.pairs_per_group);
    s.identity_cell = cfg.get_size("identity_cell", s.identity_cell);
    s.identity_amplitude = cfg.get_double("identity_amplitude", s.identity_amplitude);
    s.clip = cfg.get_double("clip", s.clip);
    if (s.num_groups != 4 && !cfg.has("group_gain")) s.group_gain.assign(s.num_groups, 1.0);
    if (s.num_groups != 4 && !cfg.has("noise_sigma")) {
      s.noise_sigma.assign(s.num_groups, 0.5);
      s.noise_sigma[1] = 1.0;
    }
    s.group_gain = cfg.get_doubles("group_gain", s.group_gain);
    s.noise_sigma = cfg.get_doubles("noise_sigma", s.noise_sigma);
  } catch (const ConfigError& e) {
    throw SpecError(e.what());
  }
  s.validate();
  return s;
}

KeyValueConfig DatasetSpec::to_config() const {
  KeyValueConfig c;
  c.set("num_groups", std::to_string(num_groups));
  c.set("ids_per_group", std::to_string(ids_per_group));
  c.set("images_per_id", std::to_string(images_per_id));
  c.set("height", std::to_string(height));
  c.set("width", std::to_string(width));
  c.set("test_ids_per_group", std::to_string(test_ids_per_group));
  c.set("pairs_per_group", std::to_string(pairs_per_group));
  c.set("identity_cell", std::to_string(identity_cell));
  c.set("identity_amplitude", join_doubles({identity_amplitude}));
  c.set("group_gain", join_doubles(group_gain));
  c.set("noise_sigma", join_doubles(noise_sigma));
  c.set("clip", join_doubles({clip}));
  return c;
}

std::size_t Dataset::num_train_classes() const {
  std::set<int> ids;
  for (const Sample& s : train) ids.insert(s.id_label);
  return ids.size();
}

std::string image_path(std::size_t group, std::size_t id, std::size_t image) {
  return "group_" + std::to_string(group) + "/id_" + std::to_string(id) + "/img_" + std::to_string(image) + ".pct";
}

Dataset generate(const DatasetSpec& spec, std::uint64_t seed) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.seed = seed;
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> textures;
  for (std::size_t g = 0; g < spec.num_groups; ++g) textures.push_back(group_texture(spec, rng));

  const std::size_t train_ids = spec.ids_per_group - spec.test_ids_per_group;
  std::normal_distribution<double> unit(0.0, 1.0);
  // Paths of test images per group, per local identity.
  std::vector<std::vector<std::vector<std::string>>> test_paths(spec.num_groups);
  for (std::size_t g = 0; g < spec.num_groups; ++g) {
    for (std::size_t local = 0; local < spec.ids_per_group; ++local) {
      const std::size_t id = g * spec.ids_per_group + local;
      const std::vector<double> tmpl = identity_template(spec, rng);
      const bool is_test = local >= train_ids;
      if (is_test) test_paths[g].emplace_back();
      for (std::size_t k = 0; k < spec.images_per_id; ++k) {
        std::vector<double> pixels(tmpl.size());
        for (std::size_t p = 0; p < pixels.size(); ++p) {
          const double noise = spec.noise_sigma[g] * unit(rng);
          pixels[p] = std::clamp(tmpl[p] + spec.group_gain[g] * textures[g][p] + noise, -spec.clip, spec.clip);
        }
        Sample s{Tensor::from({1, spec.height, spec.width}, std::move(pixels)), static_cast<int>(id),
                 static_cast<int>(g), image_path(g, id, k)};
        if (is_test) {
          test_paths[g].back().push_back(s.path);
          ds.test.push_back(std::move(s));
        } else {
          ds.train.push_back(std::move(s));
        }
      }
    }
  }

  std::mt19937_64 pair_rng(seed ^ 0x5eed5eed5eedULL);
  for (std::size_t g = 0; g < spec.num_groups; ++g) {
    const auto& ids = test_paths[g];
    std::vector<std::pair<std::size_t, std::pair<std::size_t, std::size_t>>> genuine;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (std::size_t a = 0; a < ids[i].size(); ++a) {
        for (std::size_t b = a + 1; b < ids[i].size(); ++b) genuine.push_back({i, {a, b}});
      }
    }
    std::shuffle(genuine.begin(), genuine.end(), pair_rng);
    for (std::size_t p = 0; p < spec.pairs_per_group; ++p) {
      const auto& [i, ab] = genuine[p];
      ds.pairs.push_back({static_cast<int>(g), ids[i][ab.first], ids[i][ab.second], true});
    }
    std::uniform_int_distribution<std::size_t> pick_id(0, ids.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_img(0, spec.images_per_id - 1);
    std::set<std::pair<std::string, std::string>> seen;
    while (seen.size() < spec.pairs_per_group) {
      const std::size_t i = pick_id(pair_rng), j = pick_id(pair_rng);
      const std::size_t a = pick_img(pair_rng), b = pick_img(pair_rng);
      if (i == j) continue;
      auto key = std::minmax(ids[i][a], ids[j][b]);
      if (!seen.insert({key.first, key.second}).second) continue;
      ds.pairs.push_back({static_cast<int>(g), ids[i][a], ids[j][b], false});
    }
  }
  return ds;
}

void write_pairs(const std::vector<PairRecord>& pairs, const std::filesystem::path& file) {
  std::ostringstream os;
  for (const PairRecord& p : pairs) os << p.group << ',' << p.path_a << ',' << p.path_b << ',' << (p.same ? 1 : 0) << '\n';
  write_file(file, os.str());
}

std::vector<PairRecord> read_pairs(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open pair list " + file.string());
  std::vector<PairRecord> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    const std::string where = file.string() + ":" + std::to_string(number);
    if (fields.size() != 4 || (fields[3] != "0" && fields[3] != "1")) {
      throw IoError(where + ": expected group_id,path_a,path_b,same(0|1)");
    }
    PairRecord p;
    try {
      p.group = std::stoi(fields[0]);
    } catch (const std::exception&) {
      throw IoError(where + ": bad group id '" + fields[0] + "'");
    }
    p.path_a = fields[1];
    p.path_b = fields[2];
    p.same = fields[3] == "1";
    out.push_back(std::move(p));
  }
  return out;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::map<std::string, std::uint64_t> hashes;
  auto write_image = [&](const Sample& s) {
    const fs::path p = dir / s.path;
    fs::create_directories(p.parent_path());
    std::ostringstream os;
    io::write_pct1(os, s.image);
    write_file(p, os.str());
    hashes[s.path] = fnv1a(os.str());
  };
  for (const Sample& s : ds.train) write_image(s);
  for (const Sample& s : ds.test) write_image(s);

  write_pairs(ds.pairs, dir / "pairs.txt");
  std::map<int, int> classes;
  std::ostringstream train;
  for (const Sample& s : ds.train) {
    auto it = classes.emplace(s.id_label, static_cast<int>(classes.size())).first;
    train << s.path << ',' << it->second << ',' << s.group_label << '\n';
  }
  write_file(dir / "train.txt", train.str());
  const std::string spec_text = ds.spec.to_config().serialize();
  write_file(dir / "spec.txt", spec_text);

  nlohmann::json manifest;
  manifest["seed"] = ds.seed;
  manifest["num_groups"] = ds.spec.num_groups;
  manifest["train_images"] = ds.train.size();
  manifest["test_images"] = ds.test.size();
  manifest["train_classes"] = classes.size();
  manifest["pairs"] = ds.pairs.size();
  manifest["spec"] = spec_text;
  manifest["files"]["pairs.txt"] = fnv1a(read_file(dir / "pairs.txt"));
  manifest["files"]["train.txt"] = fnv1a(train.str());
  for (const auto& [path, h] : hashes) manifest["files"][path] = h;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

TrainingSet training_set(const Dataset& ds) {
  TrainingSet out;
  std::map<int, int> classes;
  std::vector<double> pixels;
  for (const Sample& s : ds.train) {
    auto it = classes.emplace(s.id_label, static_cast<int>(classes.size())).first;
    out.class_labels.push_back(it->second);
    out.group_labels.push_back(s.group_label);
    pixels.insert(pixels.end(), s.image.data().begin(), s.image.data().end());
  }
  out.images = Tensor::from({ds.train.size(), 1, ds.spec.height, ds.spec.width}, std::move(pixels));
  out.num_classes = classes.size();
  out.num_groups = ds.spec.num_groups;
  return out;
}

TrainingSet load_training_set(const std::filesystem::path& dir) {
  const auto list = dir / "train.txt";
  std::ifstream in(list);
  if (!in) throw IoError("cannot open " + list.string() + " (is this a generated dataset?)");
  TrainingSet out;
  std::vector<double> pixels;
  Shape image_shape;
  std::set<int> classes, groups;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string path, cls, grp;
    if (!std::getline(ss, path, ',') || !std::getline(ss, cls, ',') || !std::getline(ss, grp)) {
      throw IoError(list.string() + ":" + std::to_string(number) + ": expected path,class,group");
    }
    Tensor img = io::load_tensor(dir / path);
    if (image_shape.empty()) image_shape = img.shape();
    if (img.shape() != image_shape) throw IoError(path + ": inconsistent image shape " + to_string(img.shape()));
    pixels.insert(pixels.end(), img.data().begin(), img.data().end());
    out.class_labels.push_back(std::stoi(cls));
    out.group_labels.push_back(std::stoi(grp));
    classes.insert(out.class_labels.back());
    groups.insert(out.group_labels.back());
  }
  if (out.class_labels.empty()) throw IoError(list.string() + " lists no images");
  Shape batch_shape = {out.class_labels.size()};
  batch_shape.insert(batch_shape.end(), image_shape.begin(), image_shape.end());
  out.images = Tensor::from(std::move(batch_shape), std::move(pixels));
  out.num_classes = static_cast<std::size_t>(*classes.rbegin()) + 1;
  out.num_groups = static_cast<std::size_t>(*groups.rbegin()) + 1;
  return out;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace pct::synth
