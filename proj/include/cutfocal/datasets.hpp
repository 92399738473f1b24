#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

namespace cutfocal {

enum class DatasetLayout { two_folders, side_by_side };
enum class Split { train, test, val };

std::string_view to_string(DatasetLayout v);
std::string_view to_string(Split v);
DatasetLayout parse_layout(std::string_view s);
Split parse_split(std::string_view s);

struct DatasetSpec {
  DatasetLayout layout = DatasetLayout::two_folders;
  std::filesystem::path root;
  Split split = Split::train;
  int image_size = 256;
};

/// 8-bit image as RGB, converting grayscale and dropping alpha. Throws
/// DataError when the file cannot be decoded.
cv::Mat read_rgb(const std::filesystem::path& path);
void write_rgb(const std::filesystem::path& path, const cv::Mat& rgb);

/// Bilinear resize to size x size (skipped when already that size), then
/// v / 127.5 - 1. Returns [3, size, size] float.
torch::Tensor preprocess(const cv::Mat& img, int size);

/// Inverse scaling of a [3, H, W] tensor to an 8-bit RGB image.
cv::Mat depreprocess(const torch::Tensor& img);

bool is_image_file(const std::filesystem::path& p);

/// Image files of a directory in lexicographic filename order.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// Ordered images of one domain, decoded on access.
class ImageCollection {
 public:
  enum class Half { whole, left, right };

  struct FileImage {
    std::filesystem::path path;
    Half half = Half::whole;
  };

  ImageCollection() = default;
  explicit ImageCollection(int image_size) : image_size_(image_size) {}

  void add_file(std::filesystem::path path, Half half = Half::whole);
  /// Already preprocessed [3, H, W] tensor.
  void add_tensor(torch::Tensor image, std::string name);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  int image_size() const { return image_size_; }

  torch::Tensor at(std::size_t i) const;
  std::string name(std::size_t i) const;

 private:
  struct Entry {
    std::variant<FileImage, torch::Tensor> source;
    std::string name;
  };
  std::vector<Entry> entries_;
  int image_size_ = 256;
};

struct UnpairedDataset {
  ImageCollection a;
  ImageCollection b;
};

/// Throws DataError for a missing root, an empty domain, an unreadable
/// file or an odd-width side-by-side image.
UnpairedDataset load_dataset(const DatasetSpec& spec);

/// Walks domain A in order, one epoch at a time, pairing each image with
/// an independently drawn domain B image.
class UnalignedPairSampler {
 public:
  explicit UnalignedPairSampler(const UnpairedDataset& data);

  std::pair<torch::Tensor, torch::Tensor> next(std::mt19937_64& rng);

  std::size_t epoch_length() const { return data_->a.size(); }
  std::size_t cursor() const { return cursor_; }
  int64_t epoch() const { return epoch_; }
  void seek(int64_t epoch, std::size_t cursor);

  // Indices of the most recent pair.
  std::size_t last_a() const { return last_a_; }
  std::size_t last_b() const { return last_b_; }

 private:
  const UnpairedDataset* data_;
  std::size_t cursor_ = 0;
  int64_t epoch_ = 0;
  std::size_t last_a_ = 0;
  std::size_t last_b_ = 0;
};

}  // namespace cutfocal
