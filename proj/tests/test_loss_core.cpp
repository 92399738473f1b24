#include "doctest_torch.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cutfocal/errors.hpp"
#include "cutfocal/loss_core.hpp"
#include "support.hpp"

using namespace cutfocal;
using testing_support::brute_force_ce;
using testing_support::random_logits;
using testing_support::random_unit;

namespace {

std::vector<double> e(std::size_t i, std::size_t dim) {
  std::vector<double> v(dim, 0.0);
  v[i] = 1.0;
  return v;
}

torch::Tensor row_tensor(const std::vector<double>& v) {
  return torch::tensor(v, torch::kDouble).unsqueeze(0);
}

}  // namespace

TEST_CASE("nce_logits places the positive at index 0") {
  PatchClassificationBatch b{e(0, 3), e(0, 3), {e(1, 3)}, 1.0};
  auto l = nce_logits(b);
  REQUIRE(l.size() == 2);
  CHECK(l[0] == 1.0);
  CHECK(l[1] == 0.0);

  b.temperature = 0.07;
  l = nce_logits(b);
  CHECK(l[0] == doctest::Approx(1.0 / 0.07).epsilon(1e-12));
  CHECK(l[0] == doctest::Approx(14.2857).epsilon(1e-5));
  CHECK(l[1] == 0.0);

  PatchClassificationBatch swapped{e(0, 3), e(1, 3), {e(0, 3)}, 1.0};
  l = nce_logits(swapped);
  CHECK(l[0] == 0.0);
  CHECK(l[1] == 1.0);
}

TEST_CASE("nce_logits validates its batch") {
  PatchClassificationBatch b{e(0, 3), e(0, 3), {e(1, 3)}, 1.0};
  b.query[0] = 1.01;
  CHECK_THROWS_AS(nce_logits(b), std::invalid_argument);
  b.query[0] = 1.0;
  b.temperature = 0.0;
  CHECK_THROWS_AS(nce_logits(b), std::invalid_argument);
  b.temperature = -1.0;
  CHECK_THROWS_AS(nce_logits(b), std::invalid_argument);
  b.temperature = 1.0;
  b.negatives.clear();
  CHECK_THROWS_AS(nce_logits(b), std::invalid_argument);
  // within the 1e-4 norm tolerance
  PatchClassificationBatch ok{e(0, 2), e(0, 2), {{0.0, 1.00005}}, 1.0};
  CHECK_NOTHROW(nce_logits(ok));
}

TEST_CASE("cross-entropy patch loss examples") {
  CHECK(cross_entropy_patch_loss(std::vector<double>{3.0, 3.0, 3.0, 3.0}) == doctest::Approx(std::log(4.0)));
  CHECK(cross_entropy_patch_loss(std::vector<double>{-7.5, -7.5, -7.5, -7.5}) == doctest::Approx(1.3863).epsilon(1e-4));
  CHECK(cross_entropy_patch_loss(std::vector<double>{80.0, 0.0, 0.1, -2.0}) < 1e-30);
  // oracle: -log(e / (e + 1))
  const double oracle = -std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(0.0)));
  CHECK(cross_entropy_patch_loss(std::vector<double>{1.0, 0.0}) == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(oracle == doctest::Approx(0.3133).epsilon(1e-4));
}

TEST_CASE("cross-entropy rejects non-finite logits and saturates at the clamp") {
  CHECK_THROWS_AS(cross_entropy_patch_loss(std::vector<double>{NAN, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy_patch_loss(std::vector<double>{INFINITY, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy_patch_loss(std::vector<double>{0.0}), std::invalid_argument);
  // p0 far below 1e-12: loss pinned at -log(1e-12)
  CHECK(cross_entropy_patch_loss(std::vector<double>{-100.0, 100.0}) == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("focal patch loss examples") {
  const std::vector<double> half{0.0, 0.0};
  const double oracle = 0.25 * 0.5 * 0.5 * -std::log(0.5);
  CHECK(focal_patch_loss(half, 2.0, 0.25) == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(oracle == doctest::Approx(0.043322).epsilon(1e-5));

  CHECK(focal_patch_loss(std::vector<double>{60.0, 0.0, -3.0}, 2.0, 0.25) < 1e-40);
  CHECK(focal_patch_loss(std::vector<double>{60.0, 0.0, -3.0}, 0.0, 1.0) < 1e-20);

  std::mt19937_64 rng(7);
  for (int i = 0; i < 50; ++i) {
    auto l = random_logits(2 + i, 10.0, rng);
    CHECK(focal_patch_loss(l, 0.0, 1.0) == cross_entropy_patch_loss(l));
  }
  CHECK_THROWS_AS(focal_patch_loss(half, -0.1, 0.25), std::invalid_argument);
  CHECK_THROWS_AS(focal_patch_loss(half, 2.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(focal_patch_loss(std::vector<double>{NAN, 1.0}, 2.0, 0.25), std::invalid_argument);
}

TEST_CASE("inner losses match a brute-force softmax on random batches") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + trial % 17, n = 1 + (trial * 7) % 40;
    PatchClassificationBatch b;
    b.query = random_unit(k, rng);
    b.positive = random_unit(k, rng);
    for (std::size_t j = 0; j < n; ++j) b.negatives.push_back(random_unit(k, rng));
    b.temperature = 0.07;
    const auto logits = nce_logits(b);
    CHECK(cross_entropy_patch_loss(logits) == doctest::Approx(brute_force_ce(logits)).epsilon(1e-9));
  }
}

TEST_CASE("focal loss is bounded by alpha * CE and decreases with p0") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto l = random_logits(2 + trial % 30, 8.0, rng);
    for (double gamma : {0.5, 1.0, 2.0, 3.0}) {
      for (double alpha : {0.25, 0.5, 1.0}) {
        CHECK(focal_patch_loss(l, gamma, alpha) <= alpha * cross_entropy_patch_loss(l) + 1e-12);
      }
    }
  }
  // raising the positive logit raises p0 and must not raise the loss
  std::vector<double> l{0.0, 0.5, -0.3, 1.2};
  double prev = focal_patch_loss(l, 2.0, 0.25);
  for (int i = 0; i < 40; ++i) {
    l[0] += 0.25;
    const double cur = focal_patch_loss(l, 2.0, 0.25);
    CHECK(cur <= prev);
    prev = cur;
  }
}

TEST_CASE("permuting negatives leaves inner losses unchanged") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    auto l = random_logits(10, 5.0, rng);
    auto p = l;
    std::shuffle(p.begin() + 1, p.end(), rng);
    CHECK(cross_entropy_patch_loss(p) == doctest::Approx(cross_entropy_patch_loss(l)).epsilon(1e-13));
    CHECK(focal_patch_loss(p, 2.0, 0.25) == doctest::Approx(focal_patch_loss(l, 2.0, 0.25)).epsilon(1e-13));
  }
}

TEST_CASE("temperature scaling preserves the argmax of the logits") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    PatchClassificationBatch b;
    b.query = random_unit(8, rng);
    b.positive = random_unit(8, rng);
    for (int j = 0; j < 6; ++j) b.negatives.push_back(random_unit(8, rng));
    b.temperature = 1.0;
    const auto base = nce_logits(b);
    for (double tau : {0.01, 0.07, 0.5, 3.0}) {
      b.temperature = tau;
      const auto scaled = nce_logits(b);
      CHECK(std::max_element(scaled.begin(), scaled.end()) - scaled.begin() ==
            std::max_element(base.begin(), base.end()) - base.begin());
    }
  }
}

TEST_CASE("closed-form gradients agree with autograd and finite differences") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 25; ++trial) {
    const auto l = random_logits(2 + trial * 3, 4.0, rng);
    for (double gamma : {0.0, 0.5, 2.0, 3.0}) {
      const double alpha = gamma == 0.0 ? 1.0 : 0.25;
      const auto closed = focal_patch_loss_grad(l, gamma, alpha);

      auto t = row_tensor(l).requires_grad_(true);
      focal_patch_loss(t, gamma, alpha).sum().backward();
      auto auto_grad = t.grad().squeeze(0);

      const auto dir = random_unit(l.size(), rng);
      auto f = [&](const std::vector<double>& x) { return focal_patch_loss(x, gamma, alpha); };
      const double fd = testing_support::central_difference(f, l, dir, 1e-4);
      double analytic = 0.0;
      for (std::size_t j = 0; j < l.size(); ++j) {
        CHECK(closed[j] == doctest::Approx(auto_grad[j].item<double>()).epsilon(1e-9).scale(1e-12));
        analytic += closed[j] * dir[j];
      }
      CHECK(testing_support::rel_error(analytic, fd, 1e-8) < 1e-4);
    }
    const auto ce = cross_entropy_patch_loss_grad(l);
    const auto fl = focal_patch_loss_grad(l, 0.0, 1.0);
    for (std::size_t j = 0; j < l.size(); ++j) CHECK(ce[j] == doctest::Approx(fl[j]).epsilon(1e-14));
  }
}

TEST_CASE("batched tensor losses match the scalar definitions") {
  std::mt19937_64 rng(4);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 6; ++i) rows.push_back(random_logits(9, 6.0, rng));
  auto t = torch::empty({6, 9}, torch::kDouble);
  for (int i = 0; i < 6; ++i) t[i] = row_tensor(rows[i]).squeeze(0);
  auto ce = cross_entropy_patch_loss(t);
  auto fl = focal_patch_loss(t, 2.0, 0.25);
  LossConfig cfg = LossConfig::focal_preset();
  auto dispatched = inner_patch_loss(t, cfg);
  for (int i = 0; i < 6; ++i) {
    CHECK(ce[i].item<double>() == doctest::Approx(cross_entropy_patch_loss(rows[i])).epsilon(1e-12));
    CHECK(fl[i].item<double>() == doctest::Approx(focal_patch_loss(rows[i], 2.0, 0.25)).epsilon(1e-12));
    CHECK(dispatched[i].item<double>() == fl[i].item<double>());
  }
  CHECK_THROWS_AS(cross_entropy_patch_loss(torch::full({2, 3}, NAN, torch::kDouble)), DivergenceError);
}

TEST_CASE("least-squares GAN losses") {
  auto ones = torch::ones({1, 1, 4, 4}, torch::kDouble);
  auto zeros = torch::zeros({1, 1, 4, 4}, torch::kDouble);
  auto halves = torch::full({1, 1, 4, 4}, 0.5, torch::kDouble);
  const auto ls = GanLoss::least_squares;
  CHECK(gan_loss_discriminator(ones, zeros, ls).item<double>() == 0.0);
  CHECK(gan_loss_discriminator(zeros, ones, ls).item<double>() == 2.0);
  CHECK(gan_loss_discriminator(halves, halves, ls).item<double>() == doctest::Approx(0.5));
  CHECK(gan_loss_generator(ones, ls).item<double>() == 0.0);
  CHECK(gan_loss_generator(zeros, ls).item<double>() == 1.0);
  CHECK(gan_loss_generator(torch::full({2, 1, 3, 3}, 0.25, torch::kDouble), ls).item<double>() ==
        doctest::Approx(0.5625));
  CHECK_THROWS_AS(gan_loss_discriminator(ones, torch::zeros({1, 1, 3, 4}), ls), std::invalid_argument);
  CHECK_THROWS_AS(gan_loss_generator(torch::empty({0}), ls), std::invalid_argument);
}

TEST_CASE("log-form GAN losses match the logistic definition") {
  auto r = torch::tensor({0.3, -1.2, 2.0}, torch::kDouble);
  auto f = torch::tensor({-0.7, 0.1, 1.5}, torch::kDouble);
  double expect_d = 0.0, expect_g = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double sr = 1.0 / (1.0 + std::exp(-r[i].item<double>()));
    const double sf = 1.0 / (1.0 + std::exp(-f[i].item<double>()));
    expect_d += (-std::log(sr) - std::log(1.0 - sf)) / 3.0;
    expect_g += -std::log(sf) / 3.0;
  }
  CHECK(gan_loss_discriminator(r, f, GanLoss::nonsaturating_log).item<double>() == doctest::Approx(expect_d));
  CHECK(gan_loss_generator(f, GanLoss::nonsaturating_log).item<double>() == doctest::Approx(expect_g));
}

TEST_CASE("GAN loss gradients match central differences") {
  torch::manual_seed(1);
  for (auto variant : {GanLoss::least_squares, GanLoss::nonsaturating_log}) {
    for (int trial = 0; trial < 5; ++trial) {
      auto r = torch::randn({1, 1, 3, 3}, torch::kDouble).requires_grad_(true);
      auto f = torch::randn({1, 1, 3, 3}, torch::kDouble).requires_grad_(true);
      (gan_loss_discriminator(r, f, variant) + gan_loss_generator(f, variant)).backward();
      auto value = [&](const torch::Tensor& rr, const torch::Tensor& ff) {
        return (gan_loss_discriminator(rr, ff, variant) + gan_loss_generator(ff, variant)).item<double>();
      };
      torch::NoGradGuard g;
      auto dr = torch::randn_like(r), df = torch::randn_like(f);
      const double h = 1e-4;
      const double fd = (value(r + h * dr, f + h * df) - value(r - h * dr, f - h * df)) / (2 * h);
      const double analytic = (r.grad() * dr).sum().item<double>() + (f.grad() * df).sum().item<double>();
      CHECK(testing_support::rel_error(analytic, fd) < 1e-4);
    }
  }
}

TEST_CASE("loss config presets and validation") {
  LossConfig d;
  CHECK(d.temperature == 0.07);
  auto f = LossConfig::focal_preset();
  CHECK(f.inner_loss == InnerLoss::focal);
  CHECK(f.gamma == 2.0);
  CHECK(f.alpha == 0.25);
  CHECK_NOTHROW(f.validate());
  f.alpha = 1.5;
  CHECK_THROWS_AS(f.validate(), std::invalid_argument);
  CHECK(parse_inner_loss("focal") == InnerLoss::focal);
  CHECK_THROWS(parse_gan_loss("hinge"));
}
