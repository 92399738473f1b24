#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

#include <unistd.h>

#include "cutfocal/datasets.hpp"

namespace fs = std::filesystem;

namespace testing_support {

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  std::ostringstream name;
  name << "cutfocal_test_" << ::getpid() << '_' << counter++;
  path_ = fs::temp_directory_path() / name.str();
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::vector<double> random_unit(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::vector<double> v(dim);
  double n2 = 0.0;
  for (auto& x : v) {
    x = normal(rng);
    n2 += x * x;
  }
  for (auto& x : v) x /= std::sqrt(n2);
  return v;
}

std::vector<double> random_logits(std::size_t n, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

double brute_force_log_p0(const std::vector<double>& logits) {
  double denom = 0.0;
  for (double l : logits) denom += std::exp(l);
  return std::log(std::exp(logits[0]) / denom);
}

double brute_force_ce(const std::vector<double>& logits) {
  return -std::max(brute_force_log_p0(logits), std::log(1e-12));
}

torch::Tensor synthetic_image(int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> colour(-1.0, 1.0);
  std::uniform_int_distribution<int> pos(0, size - 1);
  // Warm background with a few saturated rectangles.
  auto img = torch::empty({3, size, size});
  img[0].fill_(0.2 + 0.5 * std::abs(colour(rng)));
  img[1].fill_(-0.3 + 0.3 * colour(rng));
  img[2].fill_(-0.6 + 0.2 * colour(rng));
  for (int r = 0; r < 3; ++r) {
    int x0 = pos(rng), x1 = pos(rng), y0 = pos(rng), y1 = pos(rng);
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    for (int c = 0; c < 3; ++c) {
      img[c].slice(0, y0, y1 + 1).slice(1, x0, x1 + 1).fill_(colour(rng));
    }
  }
  return img;
}

void write_synthetic_dir(const fs::path& dir, int count, int size, uint64_t seed, bool inverted) {
  fs::create_directories(dir);
  std::mt19937_64 rng(seed);
  for (int i = 0; i < count; ++i) {
    auto img = synthetic_image(size, rng);
    if (inverted) img = invert(img);
    std::ostringstream name;
    name << "img_" << (i < 10 ? "00" : i < 100 ? "0" : "") << i << ".png";
    cutfocal::write_rgb(dir / name.str(), cutfocal::depreprocess(img));
  }
}

}  // namespace testing_support
