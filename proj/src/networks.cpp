#include "cutfocal/networks.hpp"

#include <stdexcept>
#include <string>

namespace cutfocal {

namespace nn = torch::nn;

std::string_view to_string(NetworkPreset p) { return p == NetworkPreset::full ? "full" : "tiny"; }

NetworkPreset parse_network_preset(std::string_view s) {
  if (s == "full") return NetworkPreset::full;
  if (s == "tiny") return NetworkPreset::tiny;
  throw std::invalid_argument("unknown network preset '" + std::string(s) + "'");
}

GeneratorSpec GeneratorSpec::for_preset(NetworkPreset preset) {
  if (preset == NetworkPreset::full) return {NetworkPreset::full, 9, 64, 2};
  return {NetworkPreset::tiny, 2, 8, 2};
}

DiscriminatorSpec DiscriminatorSpec::for_preset(NetworkPreset preset) {
  // full: the usual 70x70 receptive field configuration
  if (preset == NetworkPreset::full) return {NetworkPreset::full, 64, 3};
  return {NetworkPreset::tiny, 8, 2};
}

namespace {

// Convolutions feeding an instance norm carry no bias: the norm removes it.
nn::Conv2d conv(int in, int out, int kernel, int stride, int padding, bool bias) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(bias));
}

nn::InstanceNorm2d inorm(int channels) { return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels)); }

class ResidualBlockImpl : public nn::Module {
 public:
  explicit ResidualBlockImpl(int channels) {
    body_ = register_module("body", nn::Sequential(nn::ReflectionPad2d(1), conv(channels, channels, 3, 1, 0, false),
                                                   inorm(channels), nn::ReLU(), nn::ReflectionPad2d(1),
                                                   conv(channels, channels, 3, 1, 0, false), inorm(channels)));
  }

  torch::Tensor forward(const torch::Tensor& x) { return x + body_->forward(x); }

 private:
  nn::Sequential body_{nullptr};
};
TORCH_MODULE(ResidualBlock);

}  // namespace

void init_weights(nn::Module& module) {
  torch::NoGradGuard guard;
  for (auto& item : module.named_parameters()) {
    if (item.key().ends_with("bias")) {
      item.value().zero_();
    } else {
      item.value().normal_(0.0, 0.02);
    }
  }
}

GeneratorImpl::GeneratorImpl(GeneratorSpec spec) : spec_(spec) {
  if (spec_.residual_blocks < 1 || spec_.base_channels < 1 || spec_.downsamples != 2) {
    throw std::invalid_argument("generator needs >= 1 residual block and exactly 2 downsamples");
  }
  const int c = spec_.base_channels;
  nn::Sequential enc(nn::ReflectionPad2d(3), conv(3, c, 7, 1, 0, false), inorm(c), nn::ReLU(),
                     conv(c, 2 * c, 3, 2, 1, false), inorm(2 * c), nn::ReLU(),
                     conv(2 * c, 4 * c, 3, 2, 1, false), inorm(4 * c), nn::ReLU());
  for (int i = 0; i < spec_.residual_blocks; ++i) enc->push_back(ResidualBlock(4 * c));
  encoder_ = register_module("encoder", enc);

  auto up = [](int in, int out) {
    return nn::ConvTranspose2d(
        nn::ConvTranspose2dOptions(in, out, 3).stride(2).padding(1).output_padding(1).bias(false));
  };
  decoder_ = register_module(
      "decoder", nn::Sequential(up(4 * c, 2 * c), inorm(2 * c), nn::ReLU(), up(2 * c, c), inorm(c), nn::ReLU(),
                                nn::ReflectionPad2d(3), conv(c, 3, 7, 1, 0, true), nn::Tanh()));
  init_weights(*this);
}

void GeneratorImpl::check_input(const torch::Tensor& x) const {
  if (x.dim() != 4 || x.size(1) != 3) throw std::invalid_argument("generator input must be [B, 3, H, W]");
  const int f = spec_.downsampling_factor();
  if (x.size(2) % f != 0 || x.size(3) % f != 0) {
    throw std::invalid_argument("image size " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) +
                                " is not a multiple of " + std::to_string(f));
  }
  const double tol = 1e-4;
  if (x.numel() > 0) {
    const auto mn = x.min().item<double>();
    const auto mx = x.max().item<double>();
    // NaN passes through here and is reported by the loss guards instead.
    if (mn < -1.0 - tol || mx > 1.0 + tol) throw std::invalid_argument("generator input outside [-1, 1]");
  }
}

torch::Tensor GeneratorImpl::encode(const torch::Tensor& x) {
  check_input(x);
  return encoder_->forward(x);
}

std::vector<torch::Tensor> GeneratorImpl::encode(const torch::Tensor& x, const std::vector<int>& taps) {
  check_input(x);
  for (std::size_t i = 0; i < taps.size(); ++i) {
    if (taps[i] < 0 || taps[i] > encoder_depth()) throw std::invalid_argument("encoder tap out of range");
    if (i > 0 && taps[i] <= taps[i - 1]) throw std::invalid_argument("encoder taps must be strictly increasing");
  }
  std::vector<torch::Tensor> out;
  out.reserve(taps.size());
  auto h = x;
  std::size_t next = 0;
  int depth = 0;
  for (auto& layer : *encoder_) {
    if (next == taps.size()) break;
    if (taps[next] == depth) out.push_back(h), ++next;
    h = layer.forward(h);
    ++depth;
  }
  if (next < taps.size() && taps[next] == depth) out.push_back(h);
  return out;
}

torch::Tensor GeneratorImpl::decode(const torch::Tensor& h) { return decoder_->forward(h); }

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x) { return decode(encode(x)); }

int GeneratorImpl::tap_channels(int tap) const {
  const int c = spec_.base_channels;
  if (tap < 0 || tap > encoder_depth()) throw std::invalid_argument("encoder tap out of range");
  if (tap <= 1) return 3;
  if (tap <= 4) return c;
  if (tap <= 7) return 2 * c;
  return 4 * c;
}

DiscriminatorImpl::DiscriminatorImpl(DiscriminatorSpec spec) : spec_(spec) {
  if (spec_.layers < 1 || spec_.base_channels < 1) throw std::invalid_argument("invalid discriminator spec");
  const int c = spec_.base_channels;
  auto lrelu = [] { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); };
  nn::Sequential body(conv(3, c, 4, 2, 1, true), lrelu());
  int mult = 1;
  for (int i = 1; i < spec_.layers; ++i) {
    const int prev = mult;
    mult = std::min(1 << i, 8);
    body->push_back(conv(c * prev, c * mult, 4, 2, 1, false));
    body->push_back(inorm(c * mult));
    body->push_back(lrelu());
  }
  const int prev = mult;
  mult = std::min(1 << spec_.layers, 8);
  body->push_back(conv(c * prev, c * mult, 4, 1, 1, false));
  body->push_back(inorm(c * mult));
  body->push_back(lrelu());
  body->push_back(conv(c * mult, 1, 4, 1, 1, true));
  body_ = register_module("body", body);
  init_weights(*this);
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& img) {
  if (img.dim() != 4 || img.size(1) != 3) throw std::invalid_argument("discriminator input must be [B, 3, H, W]");
  if (img.size(2) < 16 || img.size(3) < 16) throw std::invalid_argument("discriminator input smaller than 16x16");
  return body_->forward(img);
}

}  // namespace cutfocal
