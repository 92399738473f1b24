#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <torch/torch.h>

namespace cutfocal {

class ImageCollection;

/// Mean and unbiased covariance of a feature sample.
struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  int64_t sample_count = 0;

  /// Symmetric within 1e-8, eigenvalues >= -1e-6, at least two samples.
  void validate() const;
};

/// Rows are samples. Requires at least two finite rows.
GaussianStats gaussian_stats(const Eigen::MatrixXd& features);

/// Principal square root of a symmetric PSD matrix via eigendecomposition,
/// negative eigenvalues clipped to zero.
Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& a);

/// Frechet distance between two Gaussians:
///   |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)
double fid(const GaussianStats& a, const GaussianStats& b);

/// Same distance straight from two feature samples. When the feature
/// dimension exceeds the sample counts the trace term is taken as the
/// nuclear norm of the centred cross-Gram matrix, which avoids the d x d
/// eigenproblems; otherwise this is fid(gaussian_stats(a), gaussian_stats(b)).
double fid_from_features(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

enum class ExtractorKind { identity_pixels, random_projection, external_pretrained };

std::string_view to_string(ExtractorKind k);
ExtractorKind parse_extractor_kind(std::string_view s);

struct FeatureExtractorSpec {
  ExtractorKind kind = ExtractorKind::identity_pixels;
  int64_t dim = 0;  // 0: input size for identity_pixels
  uint64_t seed = 0;
  std::filesystem::path weights;  // TorchScript module for external_pretrained
};

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;

  /// One row per image.
  virtual Eigen::MatrixXd extract(std::span<const torch::Tensor> images) = 0;
};

std::unique_ptr<FeatureExtractor> make_extractor(const FeatureExtractorSpec& spec);

double fid_between_sets(std::span<const torch::Tensor> real, std::span<const torch::Tensor> generated,
                        FeatureExtractor& extractor);

std::vector<torch::Tensor> collect(const ImageCollection& images, std::size_t limit = SIZE_MAX);

}  // namespace cutfocal
