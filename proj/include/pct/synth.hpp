#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pct/config.hpp"
#include "pct/tensor.hpp"

// Grouped synthetic face-like images: a per-identity random pattern, plus a
// smooth per-group texture scaled by a group gain, plus Gaussian noise whose
// sigma may differ by group (the planted difficulty bias).
namespace pct::synth {

struct DatasetSpec {
  std::size_t num_groups = 4;
  std::size_t ids_per_group = 50;
  std::size_t images_per_id = 8;
  std::size_t height = 16;
  std::size_t width = 16;
  // The last `test_ids_per_group` identities of every group are held out for
  // verification pairs; the rest form the training set.
  std::size_t test_ids_per_group = 15;
  // Genuine pairs per group; the same number of impostor pairs is drawn.
  std::size_t pairs_per_group = 300;
  // Side of the square cells the identity pattern is constant on.
  std::size_t identity_cell = 2;
  double identity_amplitude = 1.0;
  std::vector<double> group_gain = {1.0, 1.0, 1.0, 1.0};
  std::vector<double> noise_sigma = {0.5, 1.0, 0.5, 0.5};
  // Pixel values are clipped to [-clip, clip].
  double clip = 3.0;

  void validate() const;
  static DatasetSpec from_config(const KeyValueConfig& cfg);
  KeyValueConfig to_config() const;
};

struct Sample {
  Tensor image;  // (1, h, w)
  int id_label = 0;     // global identity index
  int group_label = 0;
  std::string path;     // relative path inside the dataset directory
};

struct PairRecord {
  int group = 0;
  std::string path_a;
  std::string path_b;
  bool same = false;
};

struct Dataset {
  DatasetSpec spec;
  std::uint64_t seed = 0;
  std::vector<Sample> train;
  std::vector<Sample> test;
  std::vector<PairRecord> pairs;

  // Training identities remapped to 0..K-1 in order of first appearance.
  std::size_t num_train_classes() const;
};

// Identity template: i.i.d. uniform values on identity_cell-sized blocks.
// Group texture: a unit-peak mixture of three low-frequency cosines.
Dataset generate(const DatasetSpec& spec, std::uint64_t seed);

std::string image_path(std::size_t group, std::size_t id, std::size_t image);

// Writes images (PCT1), pairs.txt, train.txt, spec.txt and manifest.json.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

// Pair list lines: group_id,path_a,path_b,same(0|1)
std::vector<PairRecord> read_pairs(const std::filesystem::path& file);
void write_pairs(const std::vector<PairRecord>& pairs, const std::filesystem::path& file);

struct TrainingSet {
  Tensor images;  // (N, 1, h, w)
  std::vector<int> class_labels;
  std::vector<int> group_labels;
  std::size_t num_classes = 0;
  std::size_t num_groups = 0;
};

// Loads train.txt and its images from a dataset directory.
TrainingSet load_training_set(const std::filesystem::path& dir);
TrainingSet training_set(const Dataset& dataset);

// FNV-1a 64-bit over a byte string.
std::uint64_t fnv1a(const std::string& bytes);

}  // namespace pct::synth
