#include "cutfocal/patch_sampler.hpp"

#include <iostream>
#include <numeric>
#include <stdexcept>

namespace cutfocal {

std::string_view to_string(TapPreset p) { return p == TapPreset::full ? "full" : "tiny"; }

std::vector<LayerTap> select_layers(const GeneratorImpl& generator, TapPreset preset) {
  const int blocks = generator.spec().residual_blocks;
  std::vector<LayerTap> taps;
  auto add = [&](int tap, std::string name, int rf) {
    taps.push_back({tap, std::move(name), rf, generator.tap_channels(tap)});
  };
  if (preset == TapPreset::full) {
    if (blocks < 5) {
      throw std::invalid_argument("full tap preset needs >= 5 residual blocks, encoder has " + std::to_string(blocks));
    }
    add(0, "pixels", 1);
    add(generator.first_downsample_tap(), "downsample1", 9);
    add(generator.second_downsample_tap(), "downsample2", 15);
    add(generator.residual_block_tap(1), "resblock1", 35);
    add(generator.residual_block_tap(5), "resblock5", 99);
  } else {
    if (blocks < 1) throw std::invalid_argument("tiny tap preset needs a residual block");
    add(0, "pixels", 1);
    add(generator.first_downsample_tap(), "downsample1", 9);
    add(generator.residual_block_tap(1), "resblock1", 35);
  }
  return taps;
}

std::vector<int64_t> sample_locations(int64_t spatial, int64_t count, std::mt19937_64& rng) {
  if (spatial <= 0) throw std::invalid_argument("cannot sample from an empty feature map");
  if (count < 1) throw std::invalid_argument("sample count must be >= 1");
  const int64_t n = std::min(count, spatial);
  std::vector<int64_t> pool(static_cast<std::size_t>(spatial));
  std::iota(pool.begin(), pool.end(), int64_t{0});
  // Partial Fisher-Yates: the first n slots end up a uniform sample.
  for (int64_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<int64_t> pick(i, spatial - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(static_cast<std::size_t>(n));
  return pool;
}

ProjectionHeadsImpl::ProjectionHeadsImpl(const std::vector<int>& in_channels, int hidden, int out) : out_(out) {
  if (hidden < 1 || out < 1) throw std::invalid_argument("projection head widths must be positive");
  for (std::size_t l = 0; l < in_channels.size(); ++l) {
    auto head = torch::nn::Sequential(torch::nn::Linear(in_channels[l], hidden), torch::nn::ReLU(),
                                      torch::nn::Linear(hidden, out));
    heads_.push_back(register_module("mlp_" + std::to_string(l), head));
  }
  init_weights(*this);
}

torch::Tensor ProjectionHeadsImpl::project(std::size_t layer, const torch::Tensor& features) {
  if (layer >= heads_.size()) throw std::out_of_range("no projection head for layer " + std::to_string(layer));
  return heads_[layer]->forward(features);
}

torch::Tensor embed(const torch::Tensor& feature_map, std::span<const int64_t> locations, ProjectionHeads& heads,
                    std::size_t layer) {
  if (feature_map.dim() != 2 && feature_map.dim() != 3) throw std::invalid_argument("feature map must be [C, H, W]");
  const auto flat = feature_map.reshape({feature_map.size(0), -1});  // [C, S]
  const int64_t spatial = flat.size(1);
  for (int64_t s : locations) {
    if (s < 0 || s >= spatial) throw std::out_of_range("patch location " + std::to_string(s) + " out of range");
  }
  auto index = torch::tensor(std::vector<int64_t>(locations.begin(), locations.end()), torch::kLong);
  auto gathered = flat.index_select(1, index).t();  // [n, C]
  auto projected = heads->project(layer, gathered);
  return projected / (projected.norm(2, 1, true) + kNormEpsilon);
}

std::vector<std::vector<int64_t>> sample_patch_locations(const std::vector<torch::Tensor>& maps, int64_t count,
                                                         std::mt19937_64& rng) {
  std::vector<std::vector<int64_t>> out;
  out.reserve(maps.size());
  for (const auto& m : maps) out.push_back(sample_locations(m.numel() / m.size(0), count, rng));
  return out;
}

EmbeddedPatchSet embed_patch_set(const std::vector<torch::Tensor>& maps, const std::vector<LayerTap>& taps,
                                 const std::vector<std::vector<int64_t>>& locations, ProjectionHeads& heads) {
  if (maps.size() != taps.size() || locations.size() != taps.size()) {
    throw std::invalid_argument("maps, taps and location lists differ in count");
  }
  EmbeddedPatchSet set;
  set.reserve(maps.size());
  for (std::size_t l = 0; l < maps.size(); ++l) {
    set.push_back({static_cast<int>(l), taps[l].receptive_field, locations[l], embed(maps[l], locations[l], heads, l)});
  }
  return set;
}

namespace {

void check_correspondence(const EmbeddedLayer& input, const EmbeddedLayer& output) {
  if (input.layer_id != output.layer_id || input.locations != output.locations) {
    throw std::invalid_argument("input and output patch sets sample different locations in layer " +
                                std::to_string(input.layer_id));
  }
}

std::vector<double> row(const torch::Tensor& features, int64_t i) {
  auto r = features[i].to(torch::kDouble).contiguous();
  return {r.data_ptr<double>(), r.data_ptr<double>() + r.numel()};
}

}  // namespace

std::vector<PatchBatchRecord> build_batches(const EmbeddedPatchSet& input_set, const EmbeddedPatchSet& output_set,
                                            double temperature) {
  if (input_set.size() != output_set.size()) throw std::invalid_argument("patch sets differ in layer count");
  std::vector<PatchBatchRecord> out;
  for (std::size_t l = 0; l < input_set.size(); ++l) {
    const auto& in = input_set[l];
    const auto& o = output_set[l];
    check_correspondence(in, o);
    const auto n = static_cast<int64_t>(in.locations.size());
    if (n < 2) {
      std::cerr << "warning: layer " << in.layer_id << " has a single sampled location; no patch batches\n";
      continue;
    }
    const auto in_feats = in.features.detach().cpu();
    const auto out_feats = o.features.detach().cpu();
    for (int64_t i = 0; i < n; ++i) {
      PatchBatchRecord rec;
      rec.layer_id = in.layer_id;
      rec.query_location = o.locations[i];
      rec.positive_location = in.locations[i];
      rec.batch.temperature = temperature;
      rec.batch.query = row(out_feats, i);
      rec.batch.positive = row(in_feats, i);
      for (int64_t j = 0; j < n; ++j) {
        if (j == i) continue;
        rec.batch.negatives.push_back(row(in_feats, j));
        rec.negative_locations.push_back(in.locations[j]);
      }
      out.push_back(std::move(rec));
    }
  }
  return out;
}

torch::Tensor layer_logits(const EmbeddedLayer& input, const EmbeddedLayer& output, double temperature) {
  check_correspondence(input, output);
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  const int64_t n = input.features.size(0);
  if (n < 2) return {};
  const auto& q = output.features;
  const auto& k = input.features;
  auto positive = (q * k).sum(1, true);  // [n, 1]
  auto all = torch::matmul(q, k.t());    // [n, n]
  auto off_diagonal = ~torch::eye(n, torch::TensorOptions().dtype(torch::kBool).device(all.device()));
  auto negatives = all.masked_select(off_diagonal).view({n, n - 1});
  return torch::cat({positive, negatives}, 1) / temperature;
}

}  // namespace cutfocal
