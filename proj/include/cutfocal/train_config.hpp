#pragma once

#include <cstdint>
#include <string_view>

#include "cutfocal/datasets.hpp"
#include "cutfocal/loss_core.hpp"
#include "cutfocal/networks.hpp"
#include "cutfocal/patch_sampler.hpp"

namespace cutfocal {

enum class Mode { CUT, FastCUT };

std::string_view to_string(Mode m);
Mode parse_mode(std::string_view s);

struct TrainConfig {
  Mode mode = Mode::CUT;
  int total_epochs = 400;
  int constant_lr_epochs = 200;
  double base_lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch_size = 1;
  uint64_t seed = 0;
  LossConfig loss;
  NetworkPreset network = NetworkPreset::full;
  int num_patches = 256;
  int head_hidden = 256;
  int embedding_dim = 256;
  bool flip_equivariance = false;
  int fid_every_epochs = 5;
  int64_t max_iterations = 0;  // 0: run the full schedule
  DatasetSpec dataset;

  /// CUT: lambdas (1, 1), 400 epochs with decay after 200, no flips.
  /// FastCUT: lambdas (10, 0), 200 epochs with decay after 150, flips on.
  static TrainConfig preset(Mode mode);

  TapPreset taps() const { return network == NetworkPreset::full ? TapPreset::full : TapPreset::tiny; }

  /// Throws ConfigError.
  void validate() const;
};

}  // namespace cutfocal
