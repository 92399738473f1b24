#include "doctest_torch.hpp"

#include <numeric>

#include "cutfocal/networks.hpp"
#include "cutfocal/patch_sampler.hpp"

using namespace cutfocal;

namespace {

torch::Tensor random_image(int64_t size, int64_t batch = 1) { return torch::rand({batch, 3, size, size}) * 2 - 1; }

}  // namespace

TEST_CASE("tiny generator keeps shape and range") {
  torch::manual_seed(0);
  Generator g(GeneratorSpec::for_preset(NetworkPreset::tiny));
  auto y = g->forward(random_image(32));
  CHECK(y.sizes() == torch::IntArrayRef{1, 3, 32, 32});
  CHECK(y.min().item<double>() >= -1.0);
  CHECK(y.max().item<double>() <= 1.0);
}

TEST_CASE("generator range holds for large random weights") {
  torch::manual_seed(1);
  Generator g(GeneratorSpec::for_preset(NetworkPreset::tiny));
  {
    torch::NoGradGuard guard;
    for (auto& p : g->parameters()) p.normal_(0.0, 3.0);
  }
  auto y = g->forward(random_image(32, 2));
  CHECK(y.min().item<double>() >= -1.0);
  CHECK(y.max().item<double>() <= 1.0);
}

TEST_CASE("generate is decode after encode") {
  torch::manual_seed(2);
  Generator g(GeneratorSpec::for_preset(NetworkPreset::tiny));
  auto x = random_image(32);
  CHECK(torch::equal(generate(g, x), g->decode(g->encode(x))));
}

TEST_CASE("generator input validation") {
  Generator g(GeneratorSpec::for_preset(NetworkPreset::tiny));
  CHECK_THROWS_AS(g->forward(random_image(30)), std::invalid_argument);
  CHECK_THROWS_AS(g->forward(torch::zeros({3, 32, 32})), std::invalid_argument);
  CHECK_THROWS_AS(g->forward(torch::zeros({1, 1, 32, 32})), std::invalid_argument);
  CHECK_THROWS_AS(g->forward(torch::full({1, 3, 32, 32}, 1.5)), std::invalid_argument);
}

TEST_CASE("encoder taps") {
  torch::manual_seed(3);
  Generator g(GeneratorSpec::for_preset(NetworkPreset::tiny));
  const auto taps = select_layers(*g, TapPreset::tiny);
  std::vector<int> idx;
  for (const auto& t : taps) idx.push_back(t.tap);
  auto x = random_image(32);
  const auto maps = g->encode(x, idx);
  REQUIRE(maps.size() == taps.size());
  CHECK(torch::equal(maps[0], x));
  CHECK(maps[0].size(2) * maps[0].size(3) == 1024);
  CHECK(maps[0].size(1) == 3);
  for (std::size_t l = 0; l < maps.size(); ++l) {
    CHECK(maps[l].size(1) == taps[l].channels);
    if (l > 0) CHECK(maps[l].size(2) <= maps[l - 1].size(2));
  }
  const auto again = g->encode(x, idx);
  for (std::size_t l = 0; l < maps.size(); ++l) CHECK(torch::equal(maps[l], again[l]));

  // every tap's channel count matches the activation
  std::vector<int> every(g->encoder_depth() + 1);
  std::iota(every.begin(), every.end(), 0);
  const auto all = g->encode(x, every);
  for (int t = 0; t <= g->encoder_depth(); ++t) CHECK(all[t].size(1) == g->tap_channels(t));
  CHECK(torch::equal(all.back(), g->encode(x)));

  CHECK_THROWS_AS(g->encode(x, {0, g->encoder_depth() + 1}), std::invalid_argument);
  CHECK_THROWS_AS(g->encode(x, {5, 0}), std::invalid_argument);
  CHECK_THROWS_AS(g->encode(x, {-1}), std::invalid_argument);
}

TEST_CASE("patch discriminator emits a score map") {
  torch::manual_seed(4);
  Discriminator d(DiscriminatorSpec::for_preset(NetworkPreset::tiny));
  auto s = d->forward(random_image(32));
  CHECK(s.dim() == 4);
  CHECK(s.size(1) == 1);
  CHECK(s.size(2) < 32);
  CHECK(s.size(2) * s.size(3) >= 4);
  CHECK(torch::isfinite(d->forward(torch::zeros({1, 3, 32, 32}))).all().item<bool>());
  CHECK_THROWS_AS(d->forward(torch::zeros({1, 1, 32, 32})), std::invalid_argument);
}

TEST_CASE("full discriminator downsamples by 8 with the 70px configuration") {
  torch::manual_seed(5);
  Discriminator d(DiscriminatorSpec::for_preset(NetworkPreset::full));
  // 256 -> 128 -> 64 -> 32 -> 31 -> 30
  CHECK(d->forward(torch::zeros({1, 3, 256, 256})).sizes() == torch::IntArrayRef{1, 1, 30, 30});
}

TEST_CASE("discriminator scores shift with the input") {
  torch::manual_seed(6);
  Discriminator d(DiscriminatorSpec::for_preset(NetworkPreset::tiny));
  // Content sits well inside a zero surround, so border handling and the
  // instance-norm statistics are identical for both placements.
  auto content = torch::rand({1, 3, 16, 16}) * 2 - 1;
  auto a = torch::zeros({1, 3, 64, 64});
  auto b = torch::zeros({1, 3, 64, 64});
  a.slice(2, 20, 36).slice(3, 20, 36).copy_(content);
  b.slice(2, 24, 40).slice(3, 24, 40).copy_(content);  // shifted by 4 px = one score cell
  torch::NoGradGuard guard;
  auto sa = d->forward(a);
  auto sb = d->forward(b);
  const int64_t n = sa.size(2);
  auto interior_a = sa.slice(2, 2, n - 3).slice(3, 2, n - 3);
  auto interior_b = sb.slice(2, 3, n - 2).slice(3, 3, n - 2);
  CHECK(torch::allclose(interior_a, interior_b, 1e-4, 1e-5));
  CHECK_FALSE(torch::allclose(sa, sb, 1e-4, 1e-5));
}

TEST_CASE("forward passes are deterministic") {
  torch::manual_seed(7);
  Generator g(GeneratorSpec::for_preset(NetworkPreset::tiny));
  Discriminator d(DiscriminatorSpec::for_preset(NetworkPreset::tiny));
  auto x = random_image(32);
  CHECK(torch::equal(g->forward(x), g->forward(x)));
  CHECK(torch::equal(d->forward(x), d->forward(x)));
}
