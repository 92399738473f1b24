#include "cutfocal/trainer.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "cutfocal/config.hpp"
#include "cutfocal/errors.hpp"

namespace fs = std::filesystem;

namespace cutfocal {

Models::Models(const TrainConfig& cfg) {
  torch::manual_seed(cfg.seed);
  generator = Generator(GeneratorSpec::for_preset(cfg.network));
  discriminator = Discriminator(DiscriminatorSpec::for_preset(cfg.network));
  taps = select_layers(*generator, cfg.taps());
  std::vector<int> channels;
  for (const auto& t : taps) channels.push_back(t.channels);
  heads = ProjectionHeads(channels, cfg.head_hidden, cfg.embedding_dim);
}

std::vector<int> Models::tap_indices() const {
  std::vector<int> out;
  for (const auto& t : taps) out.push_back(t.tap);
  return out;
}

namespace {

torch::Tensor as_batch(torch::Tensor t) { return t.dim() == 3 ? t.unsqueeze(0) : t; }

}  // namespace

torch::Tensor patchnce_term(const torch::Tensor& source_in, const torch::Tensor& translated_in, Models& models,
                            const TrainConfig& cfg, std::mt19937_64& rng, bool detach_keys) {
  const auto source = as_batch(source_in);
  const auto translated = as_batch(translated_in);
  if (source.sizes() != translated.sizes()) throw std::invalid_argument("source and translated shapes differ");
  const auto taps = models.tap_indices();

  std::vector<torch::Tensor> key_maps;
  {
    std::optional<torch::NoGradGuard> no_grad;
    if (detach_keys) no_grad.emplace();
    key_maps = models.generator->encode(source, taps);
  }
  const auto query_maps = models.generator->encode(translated, taps);

  std::vector<torch::Tensor> losses;
  for (int64_t b = 0; b < source.size(0); ++b) {
    std::vector<torch::Tensor> keys_b, queries_b;
    for (std::size_t l = 0; l < taps.size(); ++l) {
      keys_b.push_back(key_maps[l][b]);
      queries_b.push_back(query_maps[l][b]);
    }
    const auto locations = sample_patch_locations(keys_b, cfg.num_patches, rng);
    EmbeddedPatchSet keys;
    {
      std::optional<torch::NoGradGuard> no_grad;
      if (detach_keys) no_grad.emplace();
      keys = embed_patch_set(keys_b, models.taps, locations, models.heads);
    }
    const auto queries = embed_patch_set(queries_b, models.taps, locations, models.heads);
    for (std::size_t l = 0; l < taps.size(); ++l) {
      auto logits = layer_logits(keys[l], queries[l], cfg.loss.temperature);
      if (!logits.defined()) {
        std::cerr << "warning: layer " << models.taps[l].name << " has a single location; skipped\n";
        continue;
      }
      losses.push_back(inner_patch_loss(logits, cfg.loss));
    }
  }
  if (losses.empty()) throw std::invalid_argument("no layer produced a patch classification problem");
  return torch::cat(losses).mean();
}

LossBreakdown total_objective(const torch::Tensor& x_in, const torch::Tensor& y_in, Models& models,
                              const TrainConfig& cfg, std::mt19937_64& rng) {
  const auto x = as_batch(x_in);
  const auto y = as_batch(y_in);
  LossBreakdown out;
  const auto fake = models.generator->forward(x);
  out.gan = gan_loss_generator(models.discriminator->forward(fake), cfg.loss.gan_loss);
  const auto zero = torch::zeros({}, out.gan.options());
  out.nce_x = cfg.loss.lambda_x > 0.0 ? patchnce_term(x, fake, models, cfg, rng) : zero;
  out.nce_y = zero;
  if (cfg.loss.lambda_y > 0.0) {
    const auto identity = models.generator->forward(y);
    out.nce_y = patchnce_term(y, identity, models, cfg, rng);
  }
  out.total = out.gan;
  if (cfg.loss.lambda_x > 0.0) out.total = out.total + cfg.loss.lambda_x * out.nce_x;
  if (cfg.loss.lambda_y > 0.0) out.total = out.total + cfg.loss.lambda_y * out.nce_y;
  return out;
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch > cfg.total_epochs) {
    throw std::out_of_range("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.total_epochs) + "]");
  }
  if (epoch < cfg.constant_lr_epochs) return cfg.base_lr;
  if (epoch >= cfg.total_epochs) return 0.0;
  return cfg.base_lr * static_cast<double>(cfg.total_epochs - epoch) /
         static_cast<double>(cfg.total_epochs - cfg.constant_lr_epochs);
}

std::pair<torch::Tensor, bool> flip_augment(const torch::Tensor& x, const TrainConfig& cfg, std::mt19937_64& rng) {
  if (!cfg.flip_equivariance) return {x, false};
  const bool flip = std::bernoulli_distribution(0.5)(rng);
  return {flip ? x.flip({-1}) : x, flip};
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

MetricsLog::MetricsLog(const fs::path& path) {
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  out_.open(path, std::ios::app);
  if (!out_) throw std::runtime_error("cannot open metrics log " + path.string());
  if (fresh) out_ << kHeader << '\n';
}

void MetricsLog::append(const StepMetrics& m) {
  out_ << m.epoch << ',' << m.iteration << ',' << fmt_double(m.loss_G_gan) << ',' << fmt_double(m.loss_D) << ','
       << fmt_double(m.loss_nce_x) << ',' << fmt_double(m.loss_nce_y) << ',' << fmt_double(m.lr) << ','
       << fmt_double(m.seconds_per_iter) << '\n';
  out_.flush();
}

namespace {

torch::optim::AdamOptions adam_options(const TrainConfig& cfg) {
  return torch::optim::AdamOptions(cfg.base_lr).betas({cfg.beta1, cfg.beta2});
}

void set_lr(torch::optim::Adam& opt, double lr) {
  for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

// Stops gradient accumulation into a module for the guard's lifetime.
class FrozenScope {
 public:
  explicit FrozenScope(torch::nn::Module& m) : module_(m) { set(false); }
  ~FrozenScope() { set(true); }
  FrozenScope(const FrozenScope&) = delete;
  FrozenScope& operator=(const FrozenScope&) = delete;

 private:
  void set(bool on) {
    for (auto& p : module_.parameters()) p.set_requires_grad(on);
  }
  torch::nn::Module& module_;
};

}  // namespace

Trainer::Trainer(TrainConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      models_(cfg_),
      opt_g_(models_.generator->parameters(), adam_options(cfg_)),
      opt_d_(models_.discriminator->parameters(), adam_options(cfg_)),
      opt_h_(models_.heads->parameters(), adam_options(cfg_)),
      rng_(cfg_.seed) {
  begin_epoch(0);
}

void Trainer::begin_epoch(int epoch) {
  lr_ = lr_at(epoch, cfg_);
  set_lr(opt_g_, lr_);
  set_lr(opt_d_, lr_);
  set_lr(opt_h_, lr_);
}

StepMetrics Trainer::train_step(torch::Tensor x, torch::Tensor y) {
  const auto start = std::chrono::steady_clock::now();
  x = flip_augment(as_batch(x), cfg_, rng_).first;
  y = as_batch(y);
  auto& generator = models_.generator;
  auto& discriminator = models_.discriminator;

  StepMetrics m;
  m.epoch = epoch_;
  m.iteration = iteration_;
  m.lr = lr_;

  auto guard = [&](const char* term, const torch::Tensor& value) {
    const double v = value.item<double>();
    if (std::isfinite(v)) return v;
    std::ostringstream msg;
    msg << "non-finite loss in term '" << term << "' (value " << v << ") at epoch " << epoch_ << ", iteration "
        << iteration_ << "; loss_D=" << m.loss_D << " loss_G_gan=" << m.loss_G_gan << " loss_nce_x=" << m.loss_nce_x
        << " loss_nce_y=" << m.loss_nce_y;
    throw DivergenceError(msg.str());
  };

  torch::Tensor fake;
  {
    torch::NoGradGuard no_grad;
    fake = generator->forward(x);
  }
  opt_d_.zero_grad();
  auto loss_d = gan_loss_discriminator(discriminator->forward(y), discriminator->forward(fake), cfg_.loss.gan_loss);
  m.loss_D = guard("loss_D", loss_d);
  loss_d.backward();
  opt_d_.step();

  {
    FrozenScope frozen(*discriminator);
    opt_g_.zero_grad();
    opt_h_.zero_grad();
    LossBreakdown terms;
    try {
      terms = total_objective(x, y, models_, cfg_, rng_);
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string("non-finite loss while building the generator objective: ") + e.what());
    }
    m.loss_G_gan = guard("loss_G_gan", terms.gan);
    m.loss_nce_x = guard("loss_nce_x", terms.nce_x);
    m.loss_nce_y = guard("loss_nce_y", terms.nce_y);
    terms.total.backward();
    opt_g_.step();
    opt_h_.step();
  }

  ++iteration_;
  m.seconds_per_iter = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return m;
}

void Trainer::fit(const UnpairedDataset& data, const fs::path& out_dir, const Hooks& hooks) {
  fs::create_directories(out_dir);
  MetricsLog log(out_dir / "metrics.csv");
  UnalignedPairSampler sampler(data);
  const auto epoch_length = sampler.epoch_length();
  auto limit_reached = [&] { return cfg_.max_iterations > 0 && iteration_ >= cfg_.max_iterations; };

  while (epoch_ < cfg_.total_epochs && !limit_reached()) {
    begin_epoch(static_cast<int>(epoch_));
    sampler.seek(epoch_, cursor_);
    while (cursor_ < epoch_length && !limit_reached()) {
      std::vector<torch::Tensor> xs, ys;
      for (int b = 0; b < cfg_.batch_size && sampler.cursor() < epoch_length; ++b) {
        auto [x, y] = sampler.next(rng_);
        xs.push_back(std::move(x));
        ys.push_back(std::move(y));
      }
      cursor_ = sampler.cursor();
      const auto m = train_step(torch::stack(xs), torch::stack(ys));
      log.append(m);
      if (hooks.on_step) hooks.on_step(m);
    }
    if (cursor_ < epoch_length) break;  // iteration limit hit mid-epoch
    ++epoch_;
    cursor_ = 0;
    if (epoch_ % cfg_.fid_every_epochs == 0) {
      std::ostringstream name;
      name << "epoch_" << std::setw(4) << std::setfill('0') << epoch_ << ".pt";
      save(out_dir / name.str());
      if (hooks.on_checkpoint) hooks.on_checkpoint(static_cast<int>(epoch_), out_dir / name.str());
    }
  }
  save(out_dir / "latest.pt");
}

void Trainer::save(const fs::path& path) const {
  torch::serialize::OutputArchive ar;
  ar.write("schema_version", c10::IValue(kCheckpointSchemaVersion));
  ar.write("config", c10::IValue(format_settings(to_settings(cfg_))));
  ar.write("epoch", c10::IValue(epoch_));
  ar.write("iteration", c10::IValue(iteration_));
  ar.write("cursor", c10::IValue(static_cast<int64_t>(cursor_)));
  std::ostringstream rng_state;
  rng_state << rng_;
  ar.write("rng", c10::IValue(rng_state.str()));

  auto write_sub = [&](const char* key, auto&& saver) {
    torch::serialize::OutputArchive sub;
    saver(sub);
    ar.write(key, sub);
  };
  // flat dotted names so loading can check each tensor by name and shape
  auto module_saver = [](const torch::nn::Module& m) {
    return [&m](torch::serialize::OutputArchive& a) {
      for (const auto& p : m.named_parameters()) a.write(p.key(), p.value());
      for (const auto& b : m.named_buffers()) a.write(b.key(), b.value(), true);
    };
  };
  write_sub("generator", module_saver(*models_.generator));
  write_sub("discriminator", module_saver(*models_.discriminator));
  write_sub("heads", module_saver(*models_.heads));
  write_sub("optim_generator", [&](auto& a) { opt_g_.save(a); });
  write_sub("optim_discriminator", [&](auto& a) { opt_d_.save(a); });
  write_sub("optim_heads", [&](auto& a) { opt_h_.save(a); });

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  ar.save_to(tmp.string());
  fs::rename(tmp, path);
}

namespace {

torch::serialize::InputArchive open_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw CheckpointError(CheckpointError::Kind::corrupt, "no checkpoint at " + path.string());
  torch::serialize::InputArchive ar;
  try {
    ar.load_from(path.string());
  } catch (const c10::Error& e) {
    throw CheckpointError(CheckpointError::Kind::corrupt,
                          "cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  c10::IValue version;
  if (!ar.try_read("schema_version", version) || !version.isInt()) {
    throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint " + path.string() + " has no schema version");
  }
  if (version.toInt() != kCheckpointSchemaVersion) {
    throw CheckpointError(CheckpointError::Kind::version,
                          "checkpoint schema version " + std::to_string(version.toInt()) + " is not supported (expected " +
                              std::to_string(kCheckpointSchemaVersion) + ")");
  }
  return ar;
}

c10::IValue read_value(torch::serialize::InputArchive& ar, const char* key) {
  c10::IValue v;
  if (!ar.try_read(key, v)) throw CheckpointError(CheckpointError::Kind::corrupt, std::string("checkpoint lacks ") + key);
  return v;
}

std::string shape_str(at::IntArrayRef s) {
  std::ostringstream o;
  o << s;
  return o.str();
}

void load_checked(torch::serialize::InputArchive& ar, const std::string& key, torch::nn::Module& module) {
  torch::serialize::InputArchive sub;
  if (!ar.try_read(key, sub)) throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint lacks " + key);
  torch::NoGradGuard no_grad;
  auto copy = [&](const std::string& name, torch::Tensor& target, bool is_buffer) {
    torch::Tensor stored;
    if (!sub.try_read(name, stored, is_buffer)) {
      throw CheckpointError(CheckpointError::Kind::shape, key + "." + name + " missing from checkpoint");
    }
    if (stored.sizes() != target.sizes()) {
      throw CheckpointError(CheckpointError::Kind::shape, "shape mismatch for " + key + "." + name + ": checkpoint " +
                                                              shape_str(stored.sizes()) + " vs model " +
                                                              shape_str(target.sizes()));
    }
    target.copy_(stored);
  };
  for (auto& p : module.named_parameters()) copy(p.key(), p.value(), false);
  for (auto& b : module.named_buffers()) copy(b.key(), b.value(), true);
}

void load_optimizer(torch::serialize::InputArchive& ar, const std::string& key, torch::optim::Adam& opt) {
  torch::serialize::InputArchive sub;
  if (!ar.try_read(key, sub)) throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint lacks " + key);
  try {
    opt.load(sub);
  } catch (const c10::Error& e) {
    throw CheckpointError(CheckpointError::Kind::shape, "cannot restore " + key + ": " + e.what_without_backtrace());
  }
}

}  // namespace

TrainConfig read_checkpoint_config(const fs::path& path) {
  auto ar = open_checkpoint(path);
  try {
    return train_config_from_text(read_value(ar, "config").toStringRef());
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointError::Kind::corrupt, std::string("checkpoint config is invalid: ") + e.what());
  }
}

Trainer Trainer::load(const fs::path& path) {
  auto ar = open_checkpoint(path);
  TrainConfig cfg;
  try {
    cfg = train_config_from_text(read_value(ar, "config").toStringRef());
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointError::Kind::corrupt, std::string("checkpoint config is invalid: ") + e.what());
  }
  Trainer t(cfg);
  load_checked(ar, "generator", *t.models_.generator);
  load_checked(ar, "discriminator", *t.models_.discriminator);
  load_checked(ar, "heads", *t.models_.heads);
  load_optimizer(ar, "optim_generator", t.opt_g_);
  load_optimizer(ar, "optim_discriminator", t.opt_d_);
  load_optimizer(ar, "optim_heads", t.opt_h_);
  t.epoch_ = read_value(ar, "epoch").toInt();
  t.iteration_ = read_value(ar, "iteration").toInt();
  t.cursor_ = static_cast<std::size_t>(read_value(ar, "cursor").toInt());
  std::istringstream rng_state(read_value(ar, "rng").toStringRef());
  rng_state >> t.rng_;
  if (!rng_state) throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint rng state is unreadable");
  t.begin_epoch(static_cast<int>(std::min<int64_t>(t.epoch_, t.cfg_.total_epochs)));
  return t;
}

void load_generator(const fs::path& path, Generator& generator) {
  auto ar = open_checkpoint(path);
  load_checked(ar, "generator", *generator);
}

std::vector<torch::Tensor> translate_all(Generator& generator, std::span<const torch::Tensor> images) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> out;
  out.reserve(images.size());
  constexpr std::size_t kChunk = 8;
  for (std::size_t i = 0; i < images.size(); i += kChunk) {
    const auto end = std::min(images.size(), i + kChunk);
    auto batch = torch::stack(std::vector<torch::Tensor>(images.begin() + i, images.begin() + end));
    for (auto& t : generator->forward(batch).unbind(0)) out.push_back(t.contiguous());
  }
  return out;
}

}  // namespace cutfocal
