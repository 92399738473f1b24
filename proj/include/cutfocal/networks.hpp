#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

namespace cutfocal {

enum class NetworkPreset { full, tiny };

std::string_view to_string(NetworkPreset p);
NetworkPreset parse_network_preset(std::string_view s);

struct GeneratorSpec {
  NetworkPreset preset = NetworkPreset::tiny;
  int residual_blocks = 2;
  int base_channels = 8;
  int downsamples = 2;

  static GeneratorSpec for_preset(NetworkPreset preset);
  int downsampling_factor() const { return 1 << downsamples; }
};

struct DiscriminatorSpec {
  NetworkPreset preset = NetworkPreset::tiny;
  int base_channels = 8;
  // Conv layer count in the usual n_layers sense: layers - 1 strided convs
  // follow the input conv, then one stride-1 conv and the score conv.
  int layers = 2;

  static DiscriminatorSpec for_preset(NetworkPreset preset);
};

/// ResNet-style encoder/decoder generator. The encoder is a flat sequence
/// of layers so that intermediate activations can be tapped by index: tap
/// k is the activation after the first k encoder layers, tap 0 being the
/// input pixels themselves.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(GeneratorSpec spec = {});

  torch::Tensor forward(const torch::Tensor& x);

  /// Full encoder output.
  torch::Tensor encode(const torch::Tensor& x);

  /// Activations at the given taps, which must be strictly increasing and
  /// within [0, encoder_depth()].
  std::vector<torch::Tensor> encode(const torch::Tensor& x, const std::vector<int>& taps);

  torch::Tensor decode(const torch::Tensor& h);

  const GeneratorSpec& spec() const { return spec_; }
  int encoder_depth() const { return static_cast<int>(encoder_->size()); }

  // Encoder layer positions of the named stages; used by tap selection.
  int first_downsample_tap() const { return 5; }
  int second_downsample_tap() const { return 8; }
  int residual_block_tap(int block) const { return 10 + block; }  // 1-based block

  int tap_channels(int tap) const;

  /// Rejects tensors that are not [B, 3, H, W] in [-1, 1] with H and W
  /// divisible by the downsampling factor.
  void check_input(const torch::Tensor& x) const;

 private:
  GeneratorSpec spec_;
  torch::nn::Sequential encoder_{nullptr};
  torch::nn::Sequential decoder_{nullptr};
};
TORCH_MODULE(Generator);

/// PatchGAN discriminator: a stack of 4x4 convolutions that emits a map of
/// unbounded realism scores, one per receptive-field patch.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(DiscriminatorSpec spec = {});

  torch::Tensor forward(const torch::Tensor& img);

  const DiscriminatorSpec& spec() const { return spec_; }

 private:
  DiscriminatorSpec spec_;
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Discriminator);

/// N(0, 0.02) weights, zero biases.
void init_weights(torch::nn::Module& module);

inline torch::Tensor generate(Generator& g, const torch::Tensor& x) { return g->forward(x); }
inline torch::Tensor discriminate(Discriminator& d, const torch::Tensor& img) { return d->forward(img); }

}  // namespace cutfocal
