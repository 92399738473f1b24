#include "doctest_torch.hpp"

#include <fstream>
#include <random>
#include <set>

#include <opencv2/imgcodecs.hpp>

#include "cutfocal/datasets.hpp"
#include "cutfocal/errors.hpp"
#include "support.hpp"

using namespace cutfocal;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

cv::Mat solid(int rows, int cols, cv::Vec3b rgb) { return cv::Mat(rows, cols, CV_8UC3, cv::Scalar(rgb[0], rgb[1], rgb[2])); }

}  // namespace

TEST_CASE("preprocess scales endpoints and resizes") {
  auto black = preprocess(solid(8, 8, {0, 0, 0}), 8);
  auto white = preprocess(solid(8, 8, {255, 255, 255}), 8);
  CHECK(black.sizes() == torch::IntArrayRef{3, 8, 8});
  CHECK(black.min().item<float>() == -1.0f);
  CHECK(white.max().item<float>() == 1.0f);

  auto big = preprocess(solid(600, 600, {10, 20, 30}), 256);
  CHECK(big.sizes() == torch::IntArrayRef{3, 256, 256});

  cv::Mat gray(16, 16, CV_8UC1, cv::Scalar(51));
  auto g = preprocess(gray, 16);
  CHECK(g.size(0) == 3);
  CHECK(torch::allclose(g[0], g[2]));
  CHECK(g[1][0][0].item<float>() == doctest::Approx(51 / 127.5 - 1.0));

  cv::Mat two(4, 4, CV_8UC2);
  CHECK_THROWS_AS(preprocess(two, 4), std::invalid_argument);
}

TEST_CASE("preprocess output stays in range and round-trips at native size") {
  cv::Mat img(24, 24, CV_8UC3);
  cv::randu(img, cv::Scalar::all(0), cv::Scalar::all(256));
  auto t = preprocess(img, 24);
  CHECK(t.min().item<float>() >= -1.0f);
  CHECK(t.max().item<float>() <= 1.0f);
  cv::Mat back = depreprocess(t);
  cv::Mat diff;
  cv::absdiff(back, img, diff);
  double max_diff = 0;
  cv::minMaxLoc(diff.reshape(1), nullptr, &max_diff);
  CHECK(max_diff <= 1.0);
}

TEST_CASE("side-by-side layout splits each file into two domains") {
  TempDir tmp;
  fs::create_directories(tmp / "train");
  for (int i = 0; i < 3; ++i) {
    cv::Mat img(32, 64, CV_8UC3);
    img(cv::Rect(0, 0, 32, 32)).setTo(cv::Scalar(0, 0, 255));   // left: red in BGR
    img(cv::Rect(32, 0, 32, 32)).setTo(cv::Scalar(255, 0, 0));  // right: blue
    cv::imwrite((tmp / "train" / ("p" + std::to_string(i) + ".png")).string(), img);
  }
  auto data = load_dataset({DatasetLayout::side_by_side, tmp.path(), Split::train, 32});
  CHECK(data.a.size() == 3);
  CHECK(data.b.size() == 3);
  auto a = data.a.at(0);
  auto b = data.b.at(0);
  CHECK(a.sizes() == torch::IntArrayRef{3, 32, 32});
  CHECK(a[0].mean().item<float>() == 1.0f);   // red
  CHECK(a[2].mean().item<float>() == -1.0f);
  CHECK(b[2].mean().item<float>() == 1.0f);   // blue
}

TEST_CASE("side-by-side rejects odd widths") {
  TempDir tmp;
  fs::create_directories(tmp / "train");
  cv::imwrite((tmp / "train" / "odd.png").string(), cv::Mat(8, 17, CV_8UC3, cv::Scalar::all(0)));
  CHECK_THROWS_AS(load_dataset({DatasetLayout::side_by_side, tmp.path(), Split::train, 8}), DataError);
}

TEST_CASE("two-folder layout in lexicographic order") {
  TempDir tmp;
  fs::create_directories(tmp / "testA");
  for (auto name : {"c.png", "a.png", "b.jpg"}) cv::imwrite((tmp / "testA" / name).string(), solid(8, 8, {1, 2, 3}));
  fs::create_directories(tmp / "testB");
  cv::imwrite((tmp / "testB" / "z.png").string(), solid(8, 8, {9, 9, 9}));
  std::ofstream(tmp / "testA" / "notes.txt") << "ignored";

  auto data = load_dataset({DatasetLayout::two_folders, tmp.path(), Split::test, 8});
  REQUIRE(data.a.size() == 3);
  CHECK(data.a.name(0) == "a.png");
  CHECK(data.a.name(1) == "b.jpg");
  CHECK(data.a.name(2) == "c.png");
  CHECK(data.b.size() == 1);
}

TEST_CASE("dataset errors") {
  TempDir tmp;
  CHECK_THROWS_AS(load_dataset({DatasetLayout::two_folders, tmp / "nope", Split::train, 8}), DataError);
  fs::create_directories(tmp / "trainA");
  fs::create_directories(tmp / "trainB");
  cv::imwrite((tmp / "trainA" / "x.png").string(), solid(8, 8, {0, 0, 0}));
  CHECK_THROWS_AS(load_dataset({DatasetLayout::two_folders, tmp.path(), Split::train, 8}), DataError);
  std::ofstream(tmp / "trainB" / "broken.png") << "not a png";
  CHECK_THROWS_AS(load_dataset({DatasetLayout::two_folders, tmp.path(), Split::train, 8}), DataError);
}

TEST_CASE("unaligned pair sampler") {
  UnpairedDataset data{ImageCollection(4), ImageCollection(4)};
  for (int i = 0; i < 6; ++i) data.a.add_tensor(torch::full({3, 4, 4}, i / 10.0), "a" + std::to_string(i));
  for (int i = 0; i < 5; ++i) data.b.add_tensor(torch::full({3, 4, 4}, -i / 10.0), "b" + std::to_string(i));

  UnalignedPairSampler s(data);
  CHECK(s.epoch_length() == 6);
  std::mt19937_64 rng(1);
  std::vector<std::size_t> seen_a, seen_b;
  for (int i = 0; i < 6; ++i) {
    auto [x, y] = s.next(rng);
    seen_a.push_back(s.last_a());
    seen_b.push_back(s.last_b());
    CHECK(x[0][0][0].item<float>() == doctest::Approx(s.last_a() / 10.0));
  }
  CHECK(seen_a == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
  CHECK(s.epoch() == 0);
  s.next(rng);
  CHECK(s.epoch() == 1);
  CHECK(s.last_a() == 0);

  UnalignedPairSampler t(data);
  std::mt19937_64 rng2(1);
  for (int i = 0; i < 6; ++i) {
    t.next(rng2);
    CHECK(t.last_b() == seen_b[i]);
  }

  UnpairedDataset one{ImageCollection(4), ImageCollection(4)};
  one.a.add_tensor(torch::zeros({3, 4, 4}), "a");
  for (int i = 0; i < 5; ++i) one.b.add_tensor(torch::zeros({3, 4, 4}), "b");
  CHECK(UnalignedPairSampler(one).epoch_length() == 1);
}
