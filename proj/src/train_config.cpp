#include "cutfocal/train_config.hpp"

#include <stdexcept>
#include <string>

#include "cutfocal/errors.hpp"

namespace cutfocal {

std::string_view to_string(Mode m) { return m == Mode::FastCUT ? "FastCUT" : "CUT"; }

Mode parse_mode(std::string_view s) {
  if (s == "CUT" || s == "cut") return Mode::CUT;
  if (s == "FastCUT" || s == "fastcut") return Mode::FastCUT;
  throw std::invalid_argument("unknown mode '" + std::string(s) + "'");
}

TrainConfig TrainConfig::preset(Mode mode) {
  TrainConfig cfg;
  cfg.mode = mode;
  if (mode == Mode::CUT) {
    cfg.loss.lambda_x = 1.0;
    cfg.loss.lambda_y = 1.0;
    cfg.total_epochs = 400;
    cfg.constant_lr_epochs = 200;
    cfg.flip_equivariance = false;
  } else {
    cfg.loss.lambda_x = 10.0;
    cfg.loss.lambda_y = 0.0;
    cfg.total_epochs = 200;
    cfg.constant_lr_epochs = 150;
    cfg.flip_equivariance = true;
  }
  return cfg;
}

void TrainConfig::validate() const {
  try {
    loss.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (total_epochs < 1) throw ConfigError("total_epochs must be >= 1");
  if (constant_lr_epochs < 0 || constant_lr_epochs > total_epochs) {
    throw ConfigError("constant_lr_epochs must lie in [0, total_epochs]");
  }
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (num_patches < 1) throw ConfigError("num_patches must be >= 1");
  if (head_hidden < 1 || embedding_dim < 1) throw ConfigError("projection head widths must be >= 1");
  if (fid_every_epochs < 1) throw ConfigError("fid_every_epochs must be >= 1");
  if (max_iterations < 0) throw ConfigError("max_iterations must be >= 0");
  if (dataset.image_size < 16 || dataset.image_size % 4 != 0) {
    throw ConfigError("image_size must be a multiple of 4 and at least 16");
  }
}

}  // namespace cutfocal
