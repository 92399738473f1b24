#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cutfocal/fid.hpp"
#include "cutfocal/train_config.hpp"

namespace cutfocal {

/// Everything one CLI run needs. Serialized as a flat INI file whose
/// sections are named after the module that owns the keys:
///
///   [trainer]    mode, total_epochs, constant_lr_epochs, base_lr, beta1,
///                beta2, batch_size, seed, network, num_patches,
///                head_hidden, embedding_dim, flip_equivariance,
///                fid_every_epochs, max_iterations
///   [loss_core]  temperature, gamma, alpha, lambda_x, lambda_y,
///                inner_loss, gan_loss
///   [datasets]   layout, root, image_size
///   [fid_eval]   extractor, dim, seed, weights
///   [cli]        output_dir
struct RunConfig {
  TrainConfig train = TrainConfig::preset(Mode::CUT);
  FeatureExtractorSpec extractor;
  std::filesystem::path output_dir = "runs/default";
};

/// "section.key" -> raw value, exactly as written by the user.
using Settings = std::map<std::string, std::string>;
using OrderedSettings = std::vector<std::pair<std::string, std::string>>;

/// Throws ConfigError on syntax errors or a missing file.
Settings parse_settings(std::istream& in);
Settings read_settings_file(const std::filesystem::path& path);

/// Later maps win.
Settings merge(Settings base, const Settings& overrides);

/// Applies the mode preset first, then every explicit setting on top, so a
/// preset value only changes when its key is given. Unknown keys and
/// malformed values throw ConfigError.
RunConfig resolve_run_config(const Settings& explicit_settings);

OrderedSettings to_settings(const RunConfig& cfg);
OrderedSettings to_settings(const TrainConfig& cfg);

std::string format_settings(const OrderedSettings& settings);
void write_settings_file(const std::filesystem::path& path, const OrderedSettings& settings);

/// TrainConfig stored in a checkpoint or resolved config text.
TrainConfig train_config_from_text(const std::string& text);

}  // namespace cutfocal
