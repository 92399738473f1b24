#include "cutfocal/fid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include <torch/script.h>

#include "cutfocal/datasets.hpp"

namespace cutfocal {

void GaussianStats::validate() const {
  if (sample_count < 2) throw std::invalid_argument("Gaussian statistics need at least two samples");
  if (covariance.rows() != mean.size() || covariance.cols() != mean.size()) {
    throw std::invalid_argument("covariance shape does not match mean");
  }
  if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-8) {
    throw std::invalid_argument("covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(covariance, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-6) throw std::invalid_argument("covariance is not positive semidefinite");
}

GaussianStats gaussian_stats(const Eigen::MatrixXd& features) {
  if (features.rows() < 2) throw std::invalid_argument("need at least two feature rows, got " + std::to_string(features.rows()));
  if (!features.allFinite()) throw std::invalid_argument("non-finite feature values");
  GaussianStats s;
  s.sample_count = features.rows();
  s.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centred = features.rowwise() - s.mean.transpose();
  s.covariance = (centred.transpose() * centred) / static_cast<double>(features.rows() - 1);
  return s;
}

namespace {

Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& a) { return 0.5 * (a + a.transpose()); }

}  // namespace

Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("sqrtm_psd needs a square matrix");
  if (a.size() == 0) return a;
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
    throw std::invalid_argument("sqrtm_psd needs a symmetric matrix");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetrized(a));
  // eigenvalues within roundoff of zero are zero; their square roots would not be
  const double floor = static_cast<double>(a.rows()) * std::numeric_limits<double>::epsilon() *
                       std::max(eig.eigenvalues().cwiseAbs().maxCoeff(), 0.0);
  const Eigen::VectorXd roots =
      eig.eigenvalues().unaryExpr([floor](double v) { return v > floor ? std::sqrt(v) : 0.0; });
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

double fid(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size()) {
    throw std::invalid_argument("feature dimensions differ: " + std::to_string(a.mean.size()) + " vs " +
                                std::to_string(b.mean.size()));
  }
  const double mean_term = (a.mean - b.mean).squaredNorm();
  // tr sqrt(Ra Sb Ra) with Ra Sb Ra = (Rb Ra)'(Rb Ra): the nuclear norm of Rb Ra,
  // which avoids square roots of roundoff-sized eigenvalues and is symmetric in a, b.
  const Eigen::MatrixXd root_a = sqrtm_psd(symmetrized(a.covariance));
  const Eigen::MatrixXd root_b = sqrtm_psd(symmetrized(b.covariance));
  Eigen::BDCSVD<Eigen::MatrixXd> svd(root_b * root_a);
  const double cross = svd.singularValues().sum();
  const double value = mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
  return std::max(value, 0.0);
}

double fid_from_features(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("feature dimensions differ");
  if (a.rows() < 2 || b.rows() < 2) throw std::invalid_argument("need at least two feature rows per set");
  if (a.cols() <= std::max(a.rows(), b.rows())) return fid(gaussian_stats(a), gaussian_stats(b));
  if (!a.allFinite() || !b.allFinite()) throw std::invalid_argument("non-finite feature values");

  // With S_a = A'A and S_b = B'B, the nonzero eigenvalues of S_a^1/2 S_b S_a^1/2
  // are the squared singular values of A B'.
  const Eigen::RowVectorXd mean_a = a.colwise().mean();
  const Eigen::RowVectorXd mean_b = b.colwise().mean();
  const Eigen::MatrixXd ca = (a.rowwise() - mean_a) / std::sqrt(static_cast<double>(a.rows() - 1));
  const Eigen::MatrixXd cb = (b.rowwise() - mean_b) / std::sqrt(static_cast<double>(b.rows() - 1));
  const Eigen::MatrixXd cross_gram = ca * cb.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(cross_gram);
  const double value = (mean_a - mean_b).squaredNorm() + ca.squaredNorm() + cb.squaredNorm() -
                       2.0 * svd.singularValues().sum();
  return std::max(value, 0.0);
}

std::string_view to_string(ExtractorKind k) {
  switch (k) {
    case ExtractorKind::random_projection:
      return "random_projection";
    case ExtractorKind::external_pretrained:
      return "external_pretrained";
    case ExtractorKind::identity_pixels:
      break;
  }
  return "identity_pixels";
}

ExtractorKind parse_extractor_kind(std::string_view s) {
  if (s == "identity_pixels") return ExtractorKind::identity_pixels;
  if (s == "random_projection") return ExtractorKind::random_projection;
  if (s == "external_pretrained") return ExtractorKind::external_pretrained;
  throw std::invalid_argument("unknown feature extractor '" + std::string(s) + "'");
}

namespace {

Eigen::MatrixXd flatten(std::span<const torch::Tensor> images) {
  if (images.empty()) throw std::invalid_argument("no images to extract features from");
  const int64_t d = images.front().numel();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), d);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].numel() != d) throw std::invalid_argument("images differ in size");
    auto flat = images[i].detach().cpu().to(torch::kDouble).contiguous().view({-1});
    out.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(flat.data_ptr<double>(), d);
  }
  return out;
}

class IdentityPixels final : public FeatureExtractor {
 public:
  explicit IdentityPixels(int64_t dim) : dim_(dim) {}

  Eigen::MatrixXd extract(std::span<const torch::Tensor> images) override {
    auto f = flatten(images);
    if (dim_ > 0 && f.cols() != dim_) {
      throw std::invalid_argument("identity_pixels expected " + std::to_string(dim_) + " values per image, got " +
                                  std::to_string(f.cols()));
    }
    return f;
  }

 private:
  int64_t dim_;
};

// Fixed Gaussian projection x -> P'x / sqrt(D), drawn once per input size.
class RandomProjection final : public FeatureExtractor {
 public:
  RandomProjection(int64_t dim, uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim <= 0) throw std::invalid_argument("random_projection needs a positive output dimension");
  }

  Eigen::MatrixXd extract(std::span<const torch::Tensor> images) override {
    auto f = flatten(images);
    if (projection_.rows() != f.cols()) {
      std::mt19937_64 rng(seed_);
      std::normal_distribution<double> normal(0.0, 1.0);
      projection_.resize(f.cols(), dim_);
      for (Eigen::Index j = 0; j < projection_.cols(); ++j) {
        for (Eigen::Index i = 0; i < projection_.rows(); ++i) projection_(i, j) = normal(rng);
      }
      projection_ /= std::sqrt(static_cast<double>(f.cols()));
    }
    return f * projection_;
  }

 private:
  int64_t dim_;
  uint64_t seed_;
  Eigen::MatrixXd projection_;
};

class ScriptedExtractor final : public FeatureExtractor {
 public:
  ScriptedExtractor(const std::filesystem::path& weights, int64_t dim) : dim_(dim) {
    if (weights.empty()) throw std::invalid_argument("external_pretrained needs a weights path");
    try {
      module_ = torch::jit::load(weights.string());
    } catch (const c10::Error& e) {
      throw std::invalid_argument("cannot load feature extractor " + weights.string() + ": " + e.what_without_backtrace());
    }
    module_.eval();
  }

  Eigen::MatrixXd extract(std::span<const torch::Tensor> images) override {
    if (images.empty()) throw std::invalid_argument("no images to extract features from");
    torch::NoGradGuard guard;
    std::vector<torch::Tensor> rows;
    constexpr std::size_t kChunk = 32;
    for (std::size_t i = 0; i < images.size(); i += kChunk) {
      const auto end = std::min(images.size(), i + kChunk);
      auto batch = torch::stack(std::vector<torch::Tensor>(images.begin() + i, images.begin() + end));
      rows.push_back(module_.forward({batch}).toTensor().flatten(1).to(torch::kDouble).contiguous());
    }
    auto all = torch::cat(rows, 0).contiguous();
    if (dim_ > 0 && all.size(1) != dim_) {
      throw std::invalid_argument("external extractor produced " + std::to_string(all.size(1)) +
                                  " features, expected " + std::to_string(dim_));
    }
    Eigen::MatrixXd out(all.size(0), all.size(1));
    auto acc = all.accessor<double, 2>();
    for (int64_t r = 0; r < all.size(0); ++r)
      for (int64_t c = 0; c < all.size(1); ++c) out(r, c) = acc[r][c];
    return out;
  }

 private:
  torch::jit::script::Module module_;
  int64_t dim_;
};

}  // namespace

std::unique_ptr<FeatureExtractor> make_extractor(const FeatureExtractorSpec& spec) {
  switch (spec.kind) {
    case ExtractorKind::random_projection:
      return std::make_unique<RandomProjection>(spec.dim, spec.seed);
    case ExtractorKind::external_pretrained:
      return std::make_unique<ScriptedExtractor>(spec.weights, spec.dim);
    case ExtractorKind::identity_pixels:
      break;
  }
  return std::make_unique<IdentityPixels>(spec.dim);
}

double fid_between_sets(std::span<const torch::Tensor> real, std::span<const torch::Tensor> generated,
                        FeatureExtractor& extractor) {
  if (real.empty()) throw std::invalid_argument("real image set is empty");
  if (generated.empty()) throw std::invalid_argument("generated image set is empty");
  return fid_from_features(extractor.extract(real), extractor.extract(generated));
}

std::vector<torch::Tensor> collect(const ImageCollection& images, std::size_t limit) {
  std::vector<torch::Tensor> out;
  const auto n = std::min(limit, images.size());
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(images.at(i));
  return out;
}

}  // namespace cutfocal
