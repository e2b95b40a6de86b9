#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "pct/backbone.hpp"
#include "pct/config.hpp"
#include "pct/losses.hpp"
#include "pct/optim.hpp"

namespace pct {

// Everything a training run depends on besides the dataset.
struct RunConfig {
  backbone::BackboneConfig backbone;
  losses::MarginConfig margin;  // num_classes is taken from the dataset
  double alpha = 1.0;
  // Identity branch, CT modules and face head.
  OptimizerConfig face_opt{0.05, 0.9, 5e-4, {{16, 0.1}, {24, 0.1}, {28, 0.1}}};
  // Race branch and race head.
  OptimizerConfig race_opt{0.005, 0.9, 5e-4, {{16, 0.1}, {24, 0.1}, {28, 0.1}}};
  // Joint gradient-norm bound applied before every step; 0 disables it.
  double grad_clip = 1.0;
  int epochs = 32;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::vector<double> fpr_grid = {1e-1, 1e-2, 1e-3, 1e-4, 1e-5};

  void validate() const;
  // Recognised keys: in_channels in_height in_width stem_width stem_stride
  // kernel stage_widths stage_strides ct_stages(all|none|i,j,..) embed_dim
  // heads max_rel_offset ct_value_gain margin(arc|cos) s m alpha lr_face lr_race momentum
  // weight_decay decay_epochs decay_factor grad_clip epochs batch_size seed fpr_grid
  static RunConfig from_config(const KeyValueConfig& cfg);
  KeyValueConfig to_config() const;
};

// Backbone plus the two classification heads.
class Model {
 public:
  Model(RunConfig cfg, std::size_t num_classes, std::size_t num_groups);

  const RunConfig& config() const { return cfg_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t num_groups() const { return num_groups_; }

  backbone::Backbone& net() { return net_; }
  const backbone::Backbone& net() const { return net_; }
  losses::ClassifierHead& face_head() { return face_head_; }
  const losses::ClassifierHead& face_head() const { return face_head_; }
  losses::LinearHead& race_head() { return race_head_; }
  const losses::LinearHead& race_head() const { return race_head_; }

  // Trained at the face learning rate: identity branch, CT modules, face head.
  std::vector<Param*> face_params();
  // Trained at the race learning rate: race branch and race head.
  std::vector<Param*> race_params();
  std::vector<Param*> all_params();
  std::vector<const Param*> all_params() const;

  // Identity-branch embeddings of a (N, C, H, W) batch, without history.
  Tensor embed(const Tensor& images) const;

  // Narrows every parameter to float32 precision, the precision a checkpoint
  // stores, so that a reloaded model reproduces this one exactly.
  void round_to_float32();

  // Writes `path` (concatenated PCT1 records) and `path` with extension
  // .json (manifest: name -> offset, shape; config echo; class counts).
  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);

 private:
  RunConfig cfg_;
  std::size_t num_classes_;
  std::size_t num_groups_;
  backbone::Backbone net_;
  losses::ClassifierHead face_head_;
  losses::LinearHead race_head_;
};

// FNV-1a over the float64 bytes of the given parameters.
std::uint64_t parameter_hash(std::span<const Param* const> params);

}  // namespace pct
