#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "cutfocal/datasets.hpp"
#include "cutfocal/networks.hpp"
#include "cutfocal/patch_sampler.hpp"
#include "cutfocal/train_config.hpp"

namespace cutfocal {

/// Generator, discriminator and projection heads built from one config.
struct Models {
  Generator generator{nullptr};
  Discriminator discriminator{nullptr};
  ProjectionHeads heads{nullptr};
  std::vector<LayerTap> taps;

  /// Seeds torch's generator with cfg.seed before initializing weights.
  explicit Models(const TrainConfig& cfg);

  std::vector<int> tap_indices() const;
};

struct LossBreakdown {
  torch::Tensor total;
  torch::Tensor gan;
  torch::Tensor nce_x;
  torch::Tensor nce_y;
};

/// Mean inner patch loss over every sampled (layer, location) of every
/// image in the batch. Queries come from `translated`, positives and
/// negatives from `source`; keys are detached unless told otherwise.
torch::Tensor patchnce_term(const torch::Tensor& source, const torch::Tensor& translated, Models& models,
                            const TrainConfig& cfg, std::mt19937_64& rng, bool detach_keys = true);

/// Generator-side objective: GAN + lambda_x * PatchNCE(x, G(x)) +
/// lambda_y * PatchNCE(y, G(y)). Terms with a zero weight are skipped and
/// reported as exact zeros.
LossBreakdown total_objective(const torch::Tensor& x, const torch::Tensor& y, Models& models, const TrainConfig& cfg,
                              std::mt19937_64& rng);

/// Constant base_lr, then linear decay reaching zero at total_epochs.
double lr_at(int epoch, const TrainConfig& cfg);

/// Horizontal flip with probability 1/2 when flip augmentation is enabled;
/// otherwise returns the input untouched without consuming randomness.
std::pair<torch::Tensor, bool> flip_augment(const torch::Tensor& x, const TrainConfig& cfg, std::mt19937_64& rng);

struct StepMetrics {
  int64_t epoch = 0;
  int64_t iteration = 0;
  double loss_G_gan = 0.0;
  double loss_D = 0.0;
  double loss_nce_x = 0.0;
  double loss_nce_y = 0.0;
  double lr = 0.0;
  double seconds_per_iter = 0.0;
};

/// Append-only CSV of step metrics; writes the header for a new file.
class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path);
  void append(const StepMetrics& m);

  static constexpr const char* kHeader = "epoch,iter,loss_G_gan,loss_D,loss_nce_x,loss_nce_y,lr,seconds_per_iter";

 private:
  std::ofstream out_;
};

inline constexpr int64_t kCheckpointSchemaVersion = 1;

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  /// One discriminator update followed by one generator+heads update.
  /// Accepts [3, H, W] or [B, 3, H, W] images. Throws DivergenceError
  /// naming the term when any loss is non-finite.
  StepMetrics train_step(torch::Tensor x, torch::Tensor y);

  struct Hooks {
    std::function<void(const StepMetrics&)> on_step;
    // Called after the periodic checkpoint for `epoch` has been written.
    std::function<void(int epoch, const std::filesystem::path& checkpoint)> on_checkpoint;
  };

  /// Runs the remaining schedule over `data`, appending to metrics.csv and
  /// writing epoch_NNNN.pt every fid_every_epochs plus latest.pt in
  /// `out_dir`.
  void fit(const UnpairedDataset& data, const std::filesystem::path& out_dir, const Hooks& hooks = {});

  /// Sets the optimizer learning rate from the schedule.
  void begin_epoch(int epoch);

  void save(const std::filesystem::path& path) const;
  static Trainer load(const std::filesystem::path& path);

  const TrainConfig& config() const { return cfg_; }
  Models& models() { return models_; }
  int64_t epoch() const { return epoch_; }
  int64_t iteration() const { return iteration_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  TrainConfig cfg_;
  Models models_;
  torch::optim::Adam opt_g_;
  torch::optim::Adam opt_d_;
  torch::optim::Adam opt_h_;
  std::mt19937_64 rng_;
  int64_t epoch_ = 0;
  int64_t iteration_ = 0;
  std::size_t cursor_ = 0;  // position inside the current epoch of domain A
  double lr_ = 0.0;
};

/// Config stored in a checkpoint. Throws CheckpointError.
TrainConfig read_checkpoint_config(const std::filesystem::path& path);

/// Loads only the generator weights, checking every tensor shape.
void load_generator(const std::filesystem::path& path, Generator& generator);

/// Translates images in chunks without tracking gradients.
std::vector<torch::Tensor> translate_all(Generator& generator, std::span<const torch::Tensor> images);

}  // namespace cutfocal
