#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace testing_support {

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::vector<double> random_unit(std::size_t dim, std::mt19937_64& rng);
std::vector<double> random_logits(std::size_t n, double scale, std::mt19937_64& rng);

/// Independent softmax: explicit exponentials, no max subtraction.
double brute_force_log_p0(const std::vector<double>& logits);

/// -log p0 with the loss floor log(1e-12) applied.
double brute_force_ce(const std::vector<double>& logits);

/// Directional central difference of f along `direction`.
template <typename F>
double central_difference(F&& f, std::vector<double> x, const std::vector<double>& direction, double h) {
  auto plus = x, minus = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    plus[i] += h * direction[i];
    minus[i] -= h * direction[i];
  }
  return (f(plus) - f(minus)) / (2.0 * h);
}

inline double rel_error(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Coloured-rectangle image in [-1, 1], [3, size, size].
torch::Tensor synthetic_image(int size, std::mt19937_64& rng);

/// Pixel-wise channel inversion (255 - v in 8-bit terms).
inline torch::Tensor invert(const torch::Tensor& img) { return -img; }

/// Writes `count` synthetic images as PNG into dir (creating it).
void write_synthetic_dir(const std::filesystem::path& dir, int count, int size, uint64_t seed, bool inverted = false);

}  // namespace testing_support
