#include "cutfocal/loss_core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "cutfocal/errors.hpp"

namespace cutfocal {

std::string_view to_string(InnerLoss v) {
  return v == InnerLoss::focal ? "focal" : "cross_entropy";
}

std::string_view to_string(GanLoss v) {
  return v == GanLoss::nonsaturating_log ? "nonsaturating_log" : "least_squares";
}

InnerLoss parse_inner_loss(std::string_view s) {
  if (s == "cross_entropy" || s == "ce") return InnerLoss::cross_entropy;
  if (s == "focal") return InnerLoss::focal;
  throw std::invalid_argument("unknown inner loss '" + std::string(s) + "'");
}

GanLoss parse_gan_loss(std::string_view s) {
  if (s == "least_squares" || s == "lsgan") return GanLoss::least_squares;
  if (s == "nonsaturating_log" || s == "vanilla") return GanLoss::nonsaturating_log;
  throw std::invalid_argument("unknown GAN loss '" + std::string(s) + "'");
}

LossConfig LossConfig::focal_preset() {
  LossConfig cfg;
  cfg.inner_loss = InnerLoss::focal;
  cfg.gamma = 2.0;
  cfg.alpha = 0.25;
  return cfg;
}

void LossConfig::validate() const {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be >= 0");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in (0, 1]");
  if (!(lambda_x >= 0.0) || !(lambda_y >= 0.0)) throw std::invalid_argument("loss weights must be >= 0");
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

void require_unit(std::span<const double> v, const char* what) {
  const double norm = std::sqrt(dot(v, v));
  if (std::abs(norm - 1.0) > PatchClassificationBatch::kNormTolerance) {
    throw std::invalid_argument(std::string(what) + " is not unit-norm (norm " + std::to_string(norm) + ")");
  }
}

void require_finite(std::span<const double> logits) {
  if (logits.size() < 2) throw std::invalid_argument("need at least one positive and one negative logit");
  for (double v : logits) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite logit");
  }
}

// Positive-class probability in log space plus its complement, both computed
// with max subtraction. The complement is summed directly over the negatives
// so it keeps full precision when p0 is close to 1.
struct PositiveProb {
  double log_p0;  // unclamped
  double p0;
  double q;  // 1 - p0
  std::vector<double> probs;
};

PositiveProb positive_prob(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  PositiveProb r;
  r.probs.resize(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    r.probs[i] = std::exp(logits[i] - m);
    z += r.probs[i];
  }
  double neg = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    r.probs[i] /= z;
    if (i > 0) neg += r.probs[i];
  }
  r.log_p0 = logits[0] - m - std::log(z);
  r.p0 = r.probs[0];
  r.q = neg;
  return r;
}

}  // namespace

void PatchClassificationBatch::validate() const {
  if (query.empty()) throw std::invalid_argument("embedding dimension must be >= 1");
  if (negatives.empty()) throw std::invalid_argument("need at least one negative");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  if (positive.size() != query.size()) throw std::invalid_argument("positive dimension mismatch");
  require_unit(query, "query");
  require_unit(positive, "positive");
  for (const auto& n : negatives) {
    if (n.size() != query.size()) throw std::invalid_argument("negative dimension mismatch");
    require_unit(n, "negative");
  }
}

std::vector<double> nce_logits(const PatchClassificationBatch& batch) {
  batch.validate();
  std::vector<double> logits;
  logits.reserve(batch.negatives.size() + 1);
  logits.push_back(dot(batch.query, batch.positive) / batch.temperature);
  for (const auto& n : batch.negatives) logits.push_back(dot(batch.query, n) / batch.temperature);
  return logits;
}

double cross_entropy_patch_loss(std::span<const double> logits) {
  require_finite(logits);
  return -std::max(positive_prob(logits).log_p0, kMinLogProb);
}

double focal_patch_loss(std::span<const double> logits, double gamma, double alpha) {
  require_finite(logits);
  if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be >= 0");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in (0, 1]");
  const auto p = positive_prob(logits);
  const double log_p0 = std::max(p.log_p0, kMinLogProb);
  return -alpha * std::pow(p.q, gamma) * log_p0;
}

std::vector<double> cross_entropy_patch_loss_grad(std::span<const double> logits) {
  require_finite(logits);
  const auto p = positive_prob(logits);
  std::vector<double> g(logits.size(), 0.0);
  if (p.log_p0 < kMinLogProb) return g;
  for (std::size_t j = 0; j < g.size(); ++j) g[j] = p.probs[j] - (j == 0 ? 1.0 : 0.0);
  return g;
}

std::vector<double> focal_patch_loss_grad(std::span<const double> logits, double gamma, double alpha) {
  require_finite(logits);
  if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be >= 0");
  const auto p = positive_prob(logits);
  const bool clamped = p.log_p0 < kMinLogProb;
  const double log_p0 = clamped ? kMinLogProb : p.log_p0;

  // dL/dp0 * p0, then the softmax Jacobian p0 * (delta_0j - p_j) / p0.
  double modulator_term = 0.0;  // gamma * (1-p0)^(gamma-1) * p0 * log p0
  if (gamma > 0.0 && p.q > 0.0) modulator_term = gamma * std::pow(p.q, gamma - 1.0) * p.p0 * log_p0;
  const double log_term = clamped ? 0.0 : std::pow(p.q, gamma);
  const double scale = alpha * (modulator_term - log_term);

  std::vector<double> g(logits.size());
  for (std::size_t j = 0; j < g.size(); ++j) {
    g[j] = scale * ((j == 0 ? 1.0 : 0.0) - p.probs[j]);
  }
  return g;
}

namespace {

void require_finite(const torch::Tensor& logits) {
  if (logits.dim() != 2 || logits.size(1) < 2) {
    throw std::invalid_argument("patch logits must be [rows, N+1] with N >= 1");
  }
  if (!torch::isfinite(logits).all().item<bool>()) throw DivergenceError("non-finite patch logits");
}

torch::Tensor clamped_log_p0(const torch::Tensor& logits) {
  return torch::log_softmax(logits, 1).select(1, 0).clamp_min(kMinLogProb);
}

}  // namespace

torch::Tensor cross_entropy_patch_loss(const torch::Tensor& logits) {
  require_finite(logits);
  return -clamped_log_p0(logits);
}

torch::Tensor focal_patch_loss(const torch::Tensor& logits, double gamma, double alpha) {
  require_finite(logits);
  if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be >= 0");
  const auto log_p0 = clamped_log_p0(logits);
  if (gamma == 0.0) return -alpha * log_p0;
  // pow'(q) diverges at q = 0 for gamma < 1; the floor keeps the graph finite.
  const auto q = (-torch::expm1(log_p0)).clamp_min(1e-12);
  return -alpha * torch::pow(q, gamma) * log_p0;
}

torch::Tensor inner_patch_loss(const torch::Tensor& logits, const LossConfig& cfg) {
  switch (cfg.inner_loss) {
    case InnerLoss::focal:
      return focal_patch_loss(logits, cfg.gamma, cfg.alpha);
    case InnerLoss::cross_entropy:
      break;
  }
  return cross_entropy_patch_loss(logits);
}

torch::Tensor gan_loss_discriminator(const torch::Tensor& d_real, const torch::Tensor& d_fake, GanLoss variant) {
  if (d_real.sizes() != d_fake.sizes()) throw std::invalid_argument("discriminator maps differ in shape");
  if (d_real.numel() == 0) throw std::invalid_argument("empty discriminator map");
  if (variant == GanLoss::least_squares) {
    return (d_real - 1.0).pow(2).mean() + d_fake.pow(2).mean();
  }
  // -log sigmoid(r) = softplus(-r), -log(1 - sigmoid(f)) = softplus(f)
  return torch::softplus(-d_real).mean() + torch::softplus(d_fake).mean();
}

torch::Tensor gan_loss_generator(const torch::Tensor& d_fake, GanLoss variant) {
  if (d_fake.numel() == 0) throw std::invalid_argument("empty discriminator map");
  if (variant == GanLoss::least_squares) return (d_fake - 1.0).pow(2).mean();
  return torch::softplus(-d_fake).mean();
}

}  // namespace cutfocal
