#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "cutfocal/loss_core.hpp"
#include "cutfocal/networks.hpp"

namespace cutfocal {

enum class TapPreset { full, tiny };

std::string_view to_string(TapPreset p);

struct LayerTap {
  int tap = 0;  // encoder position, see GeneratorImpl
  std::string name;
  int receptive_field = 1;  // pixels, informational
  int channels = 3;
};

/// full: pixels, both downsampling convs, residual blocks 1 and 5.
/// tiny: pixels, first downsampling conv, residual block 1.
std::vector<LayerTap> select_layers(const GeneratorImpl& generator, TapPreset preset);

/// min(count, spatial) distinct indices in [0, spatial), drawn uniformly
/// without replacement, in sampled order.
std::vector<int64_t> sample_locations(int64_t spatial, int64_t count, std::mt19937_64& rng);

/// One two-layer perceptron per tapped layer (linear, ReLU, linear).
class ProjectionHeadsImpl : public torch::nn::Module {
 public:
  ProjectionHeadsImpl(const std::vector<int>& in_channels, int hidden = 256, int out = 256);

  /// [n, C_l] -> [n, K], not normalized.
  torch::Tensor project(std::size_t layer, const torch::Tensor& features);

  std::size_t size() const { return heads_.size(); }
  int embedding_dim() const { return out_; }

 private:
  std::vector<torch::nn::Sequential> heads_;
  int out_;
};
TORCH_MODULE(ProjectionHeads);

inline constexpr double kNormEpsilon = 1e-8;

/// Gathers the C-vector at each location of a [C, H, W] (or [C, S]) map,
/// projects it through the layer's head and L2-normalizes every row.
torch::Tensor embed(const torch::Tensor& feature_map, std::span<const int64_t> locations, ProjectionHeads& heads,
                    std::size_t layer);

struct EmbeddedLayer {
  int layer_id = 0;
  int receptive_field = 1;
  std::vector<int64_t> locations;
  torch::Tensor features;  // [num_sampled, K], unit rows
};

using EmbeddedPatchSet = std::vector<EmbeddedLayer>;

/// Samples locations on each map of one image (maps are [C, H, W]).
std::vector<std::vector<int64_t>> sample_patch_locations(const std::vector<torch::Tensor>& maps, int64_t count,
                                                         std::mt19937_64& rng);

EmbeddedPatchSet embed_patch_set(const std::vector<torch::Tensor>& maps, const std::vector<LayerTap>& taps,
                                 const std::vector<std::vector<int64_t>>& locations, ProjectionHeads& heads);

/// A classification problem together with where its vectors came from.
struct PatchBatchRecord {
  PatchClassificationBatch batch;
  int layer_id = 0;
  int64_t query_location = 0;
  int64_t positive_location = 0;
  std::vector<int64_t> negative_locations;
};

/// Queries come from `output_set`, positives and negatives from
/// `input_set`; negatives are the other sampled locations of the same
/// layer. Layers with a single location are skipped.
std::vector<PatchBatchRecord> build_batches(const EmbeddedPatchSet& input_set, const EmbeddedPatchSet& output_set,
                                            double temperature);

/// Same problems as build_batches for one layer, as a [n, n] logit matrix:
/// row i holds the positive in column 0 followed by the negatives in
/// location-list order. Differentiable. Returns an undefined tensor for a
/// single-location layer.
torch::Tensor layer_logits(const EmbeddedLayer& input, const EmbeddedLayer& output, double temperature);

}  // namespace cutfocal
