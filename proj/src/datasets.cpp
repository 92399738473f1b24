#include "cutfocal/datasets.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cutfocal/errors.hpp"

namespace fs = std::filesystem;

namespace cutfocal {

std::string_view to_string(DatasetLayout v) { return v == DatasetLayout::side_by_side ? "side_by_side" : "two_folders"; }

std::string_view to_string(Split v) {
  switch (v) {
    case Split::test:
      return "test";
    case Split::val:
      return "val";
    case Split::train:
      break;
  }
  return "train";
}

DatasetLayout parse_layout(std::string_view s) {
  if (s == "two_folders") return DatasetLayout::two_folders;
  if (s == "side_by_side") return DatasetLayout::side_by_side;
  throw std::invalid_argument("unknown dataset layout '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  if (s == "val") return Split::val;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

cv::Mat read_rgb(const fs::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw DataError("cannot decode image " + path.string());
  if (raw.depth() != CV_8U) {
    cv::Mat scaled;
    raw.convertTo(scaled, CV_8U, raw.depth() == CV_16U ? 1.0 / 257.0 : 1.0);
    raw = scaled;
  }
  cv::Mat rgb;
  switch (raw.channels()) {
    case 1:
      cv::cvtColor(raw, rgb, cv::COLOR_GRAY2RGB);
      break;
    case 3:
      cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
      break;
    case 4:
      cv::cvtColor(raw, rgb, cv::COLOR_BGRA2RGB);
      break;
    default:
      throw DataError("unsupported channel count in " + path.string());
  }
  return rgb;
}

void write_rgb(const fs::path& path, const cv::Mat& rgb) {
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw DataError("cannot write image " + path.string());
}

torch::Tensor preprocess(const cv::Mat& img, int size) {
  if (img.empty()) throw std::invalid_argument("empty image");
  if (img.depth() != CV_8U) throw std::invalid_argument("preprocess expects 8-bit images");
  cv::Mat rgb;
  if (img.channels() == 1) {
    cv::cvtColor(img, rgb, cv::COLOR_GRAY2RGB);
  } else if (img.channels() == 4) {
    cv::cvtColor(img, rgb, cv::COLOR_RGBA2RGB);
  } else if (img.channels() == 3) {
    rgb = img;
  } else {
    throw std::invalid_argument("cannot convert image with " + std::to_string(img.channels()) + " channels to RGB");
  }
  if (rgb.rows != size || rgb.cols != size) {
    cv::Mat resized;
    cv::resize(rgb, resized, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
    rgb = resized;
  }
  if (!rgb.isContinuous()) rgb = rgb.clone();
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).to(torch::kFloat);
  return (t / 127.5 - 1.0).permute({2, 0, 1}).contiguous();
}

cv::Mat depreprocess(const torch::Tensor& img) {
  if (img.dim() != 3 || img.size(0) != 3) throw std::invalid_argument("depreprocess expects [3, H, W]");
  auto t = ((img.detach().cpu().to(torch::kFloat) + 1.0) * 127.5).round().clamp(0, 255).to(torch::kUInt8);
  t = t.permute({1, 2, 0}).contiguous();
  cv::Mat out(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_8UC3);
  std::memcpy(out.data, t.data_ptr<uint8_t>(), static_cast<std::size_t>(t.numel()));
  return out;
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  return files;
}

void ImageCollection::add_file(fs::path path, Half half) {
  auto name = path.filename().string();
  entries_.push_back({FileImage{std::move(path), half}, std::move(name)});
}

void ImageCollection::add_tensor(torch::Tensor image, std::string name) {
  if (image.dim() != 3 || image.size(0) != 3) throw std::invalid_argument("in-memory images must be [3, H, W]");
  entries_.push_back({std::move(image), std::move(name)});
}

torch::Tensor ImageCollection::at(std::size_t i) const {
  const auto& e = entries_.at(i);
  if (const auto* t = std::get_if<torch::Tensor>(&e.source)) return *t;
  const auto& f = std::get<FileImage>(e.source);
  cv::Mat img = read_rgb(f.path);
  if (f.half != Half::whole) {
    if (img.cols % 2 != 0) throw DataError("side-by-side image has odd width: " + f.path.string());
    const int w = img.cols / 2;
    img = img(cv::Rect(f.half == Half::left ? 0 : w, 0, w, img.rows)).clone();
  }
  return preprocess(img, image_size_);
}

std::string ImageCollection::name(std::size_t i) const { return entries_.at(i).name; }

UnpairedDataset load_dataset(const DatasetSpec& spec) {
  if (!fs::is_directory(spec.root)) throw DataError("dataset root does not exist: " + spec.root.string());
  UnpairedDataset data{ImageCollection(spec.image_size), ImageCollection(spec.image_size)};
  const std::string split(to_string(spec.split));
  if (spec.layout == DatasetLayout::two_folders) {
    for (auto [suffix, domain] : {std::pair{"A", &data.a}, std::pair{"B", &data.b}}) {
      const auto dir = spec.root / (split + suffix);
      if (!fs::is_directory(dir)) throw DataError("missing domain folder " + dir.string());
      for (auto& p : list_images(dir)) {
        if (!cv::haveImageReader(p.string())) throw DataError("unreadable image " + p.string());
        domain->add_file(std::move(p));
      }
    }
  } else {
    const auto dir = spec.root / split;
    if (!fs::is_directory(dir)) throw DataError("missing split folder " + dir.string());
    for (const auto& p : list_images(dir)) {
      // Only the header is needed to validate the width, but imread has no
      // header-only mode; decode once up front.
      const cv::Mat img = cv::imread(p.string(), cv::IMREAD_UNCHANGED);
      if (img.empty()) throw DataError("cannot decode image " + p.string());
      if (img.cols % 2 != 0) throw DataError("side-by-side image has odd width: " + p.string());
      data.a.add_file(p, ImageCollection::Half::left);
      data.b.add_file(p, ImageCollection::Half::right);
    }
  }
  if (data.a.empty()) throw DataError("domain A is empty under " + spec.root.string());
  if (data.b.empty()) throw DataError("domain B is empty under " + spec.root.string());
  return data;
}

UnalignedPairSampler::UnalignedPairSampler(const UnpairedDataset& data) : data_(&data) {
  if (data.a.empty() || data.b.empty()) throw DataError("both domains must be non-empty");
}

std::pair<torch::Tensor, torch::Tensor> UnalignedPairSampler::next(std::mt19937_64& rng) {
  if (cursor_ >= data_->a.size()) {
    cursor_ = 0;
    ++epoch_;
  }
  last_a_ = cursor_++;
  std::uniform_int_distribution<std::size_t> pick(0, data_->b.size() - 1);
  last_b_ = pick(rng);
  return {data_->a.at(last_a_), data_->b.at(last_b_)};
}

void UnalignedPairSampler::seek(int64_t epoch, std::size_t cursor) {
  if (cursor > data_->a.size()) throw std::out_of_range("sampler cursor beyond epoch length");
  epoch_ = epoch;
  cursor_ = cursor;
}

}  // namespace cutfocal
