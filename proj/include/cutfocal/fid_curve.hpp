#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cutfocal/datasets.hpp"
#include "cutfocal/fid.hpp"
#include "cutfocal/networks.hpp"

namespace cutfocal {

struct CurvePoint {
  int epoch = 0;
  double fid = 0.0;  // NaN when the point failed
  std::string error;

  bool ok() const { return error.empty(); }
};

/// epoch_NNNN.pt files of a run directory, sorted by epoch.
std::vector<std::pair<int, std::filesystem::path>> list_epoch_checkpoints(const std::filesystem::path& dir);

/// FID between generator outputs for the first `num_generated` domain-A
/// test images and all of `real`.
double generator_fid(Generator& generator, const ImageCollection& sources, std::span<const torch::Tensor> real,
                     FeatureExtractor& extractor, std::size_t num_generated);

/// One point per checkpoint whose epoch is a multiple of every_k. A
/// checkpoint that fails to load or evaluate yields a flagged point and the
/// series continues. Throws DataError when the directory holds no
/// checkpoints at all.
std::vector<CurvePoint> fid_curve(const std::filesystem::path& checkpoint_dir, const UnpairedDataset& test_set,
                                  int every_k, FeatureExtractor& extractor, std::size_t num_generated = 500);

/// CSV with header "epoch,fid"; failed points are written as nan.
void write_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& points);

/// Line plot of FID against epoch, one coloured series per run, as PNG.
void plot_curves(const std::filesystem::path& path,
                 const std::vector<std::pair<std::string, std::vector<CurvePoint>>>& runs);

}  // namespace cutfocal
