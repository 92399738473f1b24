#pragma once

#include <span>
#include <string_view>
#include <vector>

#include <torch/torch.h>

namespace cutfocal {

enum class InnerLoss { cross_entropy, focal };
enum class GanLoss { least_squares, nonsaturating_log };

std::string_view to_string(InnerLoss v);
std::string_view to_string(GanLoss v);
InnerLoss parse_inner_loss(std::string_view s);
GanLoss parse_gan_loss(std::string_view s);

struct LossConfig {
  double temperature = 0.07;
  double gamma = 2.0;
  double alpha = 0.25;
  double lambda_x = 1.0;
  double lambda_y = 1.0;
  InnerLoss inner_loss = InnerLoss::cross_entropy;
  GanLoss gan_loss = GanLoss::least_squares;

  /// Focal inner loss with gamma = 2, alpha = 0.25.
  static LossConfig focal_preset();

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
};

/// One (N+1)-way patch classification problem: a query, its positive and
/// N negatives, all unit-norm vectors of the same dimension.
struct PatchClassificationBatch {
  std::vector<double> query;
  std::vector<double> positive;
  std::vector<std::vector<double>> negatives;
  double temperature = 0.07;

  static constexpr double kNormTolerance = 1e-4;

  void validate() const;
};

// Lower clamp applied to log(p0) so saturated logits never produce -inf.
inline constexpr double kMinLogProb = -27.631021115928547;  // log(1e-12)

/// Logits of the patch classification problem; index 0 is the positive.
std::vector<double> nce_logits(const PatchClassificationBatch& batch);

/// -log softmax(logits)[0]
double cross_entropy_patch_loss(std::span<const double> logits);

/// -alpha * (1 - p0)^gamma * log(p0) with p0 = softmax(logits)[0].
double focal_patch_loss(std::span<const double> logits, double gamma, double alpha);

// Closed-form gradients with respect to the logits.
std::vector<double> cross_entropy_patch_loss_grad(std::span<const double> logits);
std::vector<double> focal_patch_loss_grad(std::span<const double> logits, double gamma, double alpha);

// Batched, autograd-aware variants used by training. Each row of `logits`
// is one classification problem with the positive in column 0; the result
// holds one loss per row.
torch::Tensor cross_entropy_patch_loss(const torch::Tensor& logits);
torch::Tensor focal_patch_loss(const torch::Tensor& logits, double gamma, double alpha);
torch::Tensor inner_patch_loss(const torch::Tensor& logits, const LossConfig& cfg);

/// Discriminator objective over patch score maps of identical shape.
torch::Tensor gan_loss_discriminator(const torch::Tensor& d_real, const torch::Tensor& d_fake, GanLoss variant);

/// Generator objective over the discriminator's scores for translated images.
torch::Tensor gan_loss_generator(const torch::Tensor& d_fake, GanLoss variant);

}  // namespace cutfocal
