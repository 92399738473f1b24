#include "cutfocal/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "cutfocal/errors.hpp"

namespace cutfocal {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* first = value.data();
  const auto* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) throw ConfigError("invalid value '" + value + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("invalid boolean '" + value + "' for " + key);
}

template <typename F>
auto enum_value(const std::string& key, const std::string& value, F parse) {
  try {
    return parse(value);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"trainer.mode", [](RunConfig& c, auto& k, auto& v) { c.train.mode = enum_value(k, v, parse_mode); }},
      {"trainer.total_epochs", [](RunConfig& c, auto& k, auto& v) { c.train.total_epochs = parse_number<int>(k, v); }},
      {"trainer.constant_lr_epochs",
       [](RunConfig& c, auto& k, auto& v) { c.train.constant_lr_epochs = parse_number<int>(k, v); }},
      {"trainer.base_lr", [](RunConfig& c, auto& k, auto& v) { c.train.base_lr = parse_number<double>(k, v); }},
      {"trainer.beta1", [](RunConfig& c, auto& k, auto& v) { c.train.beta1 = parse_number<double>(k, v); }},
      {"trainer.beta2", [](RunConfig& c, auto& k, auto& v) { c.train.beta2 = parse_number<double>(k, v); }},
      {"trainer.batch_size", [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = parse_number<int>(k, v); }},
      {"trainer.seed", [](RunConfig& c, auto& k, auto& v) { c.train.seed = parse_number<uint64_t>(k, v); }},
      {"trainer.network",
       [](RunConfig& c, auto& k, auto& v) { c.train.network = enum_value(k, v, parse_network_preset); }},
      {"trainer.num_patches", [](RunConfig& c, auto& k, auto& v) { c.train.num_patches = parse_number<int>(k, v); }},
      {"trainer.head_hidden", [](RunConfig& c, auto& k, auto& v) { c.train.head_hidden = parse_number<int>(k, v); }},
      {"trainer.embedding_dim",
       [](RunConfig& c, auto& k, auto& v) { c.train.embedding_dim = parse_number<int>(k, v); }},
      {"trainer.flip_equivariance",
       [](RunConfig& c, auto& k, auto& v) { c.train.flip_equivariance = parse_bool(k, v); }},
      {"trainer.fid_every_epochs",
       [](RunConfig& c, auto& k, auto& v) { c.train.fid_every_epochs = parse_number<int>(k, v); }},
      {"trainer.max_iterations",
       [](RunConfig& c, auto& k, auto& v) { c.train.max_iterations = parse_number<int64_t>(k, v); }},
      {"loss_core.temperature",
       [](RunConfig& c, auto& k, auto& v) { c.train.loss.temperature = parse_number<double>(k, v); }},
      {"loss_core.gamma", [](RunConfig& c, auto& k, auto& v) { c.train.loss.gamma = parse_number<double>(k, v); }},
      {"loss_core.alpha", [](RunConfig& c, auto& k, auto& v) { c.train.loss.alpha = parse_number<double>(k, v); }},
      {"loss_core.lambda_x",
       [](RunConfig& c, auto& k, auto& v) { c.train.loss.lambda_x = parse_number<double>(k, v); }},
      {"loss_core.lambda_y",
       [](RunConfig& c, auto& k, auto& v) { c.train.loss.lambda_y = parse_number<double>(k, v); }},
      {"loss_core.inner_loss",
       [](RunConfig& c, auto& k, auto& v) { c.train.loss.inner_loss = enum_value(k, v, parse_inner_loss); }},
      {"loss_core.gan_loss",
       [](RunConfig& c, auto& k, auto& v) { c.train.loss.gan_loss = enum_value(k, v, parse_gan_loss); }},
      {"datasets.layout", [](RunConfig& c, auto& k, auto& v) { c.train.dataset.layout = enum_value(k, v, parse_layout); }},
      {"datasets.root", [](RunConfig& c, auto&, auto& v) { c.train.dataset.root = v; }},
      {"datasets.image_size",
       [](RunConfig& c, auto& k, auto& v) { c.train.dataset.image_size = parse_number<int>(k, v); }},
      {"fid_eval.extractor",
       [](RunConfig& c, auto& k, auto& v) { c.extractor.kind = enum_value(k, v, parse_extractor_kind); }},
      {"fid_eval.dim", [](RunConfig& c, auto& k, auto& v) { c.extractor.dim = parse_number<int64_t>(k, v); }},
      {"fid_eval.seed", [](RunConfig& c, auto& k, auto& v) { c.extractor.seed = parse_number<uint64_t>(k, v); }},
      {"fid_eval.weights", [](RunConfig& c, auto&, auto& v) { c.extractor.weights = v; }},
      {"cli.output_dir", [](RunConfig& c, auto&, auto& v) { c.output_dir = v; }},
  };
  return table;
}

}  // namespace

Settings parse_settings(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax error: ") + e.what());
  }
  Settings out;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      if (body.data().empty()) continue;  // empty [section]
      throw ConfigError("config key '" + section + "' must live inside a [section]");
    }
    for (const auto& [key, value] : body) out[section + "." + key] = value.get_value<std::string>();
  }
  return out;
}

Settings read_settings_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_settings(in);
}

Settings merge(Settings base, const Settings& overrides) {
  for (const auto& [k, v] : overrides) base[k] = v;
  return base;
}

RunConfig resolve_run_config(const Settings& explicit_settings) {
  for (const auto& [key, value] : explicit_settings) {
    if (!setters().contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  RunConfig cfg;
  Mode mode = Mode::CUT;
  if (auto it = explicit_settings.find("trainer.mode"); it != explicit_settings.end()) {
    mode = enum_value(it->first, it->second, parse_mode);
  }
  cfg.train = TrainConfig::preset(mode);
  for (const auto& [key, value] : explicit_settings) setters().at(key)(cfg, key, value);
  cfg.train.validate();
  return cfg;
}

OrderedSettings to_settings(const TrainConfig& c) {
  return {
      {"trainer.mode", std::string(to_string(c.mode))},
      {"trainer.total_epochs", std::to_string(c.total_epochs)},
      {"trainer.constant_lr_epochs", std::to_string(c.constant_lr_epochs)},
      {"trainer.base_lr", fmt_double(c.base_lr)},
      {"trainer.beta1", fmt_double(c.beta1)},
      {"trainer.beta2", fmt_double(c.beta2)},
      {"trainer.batch_size", std::to_string(c.batch_size)},
      {"trainer.seed", std::to_string(c.seed)},
      {"trainer.network", std::string(to_string(c.network))},
      {"trainer.num_patches", std::to_string(c.num_patches)},
      {"trainer.head_hidden", std::to_string(c.head_hidden)},
      {"trainer.embedding_dim", std::to_string(c.embedding_dim)},
      {"trainer.flip_equivariance", c.flip_equivariance ? "true" : "false"},
      {"trainer.fid_every_epochs", std::to_string(c.fid_every_epochs)},
      {"trainer.max_iterations", std::to_string(c.max_iterations)},
      {"loss_core.temperature", fmt_double(c.loss.temperature)},
      {"loss_core.gamma", fmt_double(c.loss.gamma)},
      {"loss_core.alpha", fmt_double(c.loss.alpha)},
      {"loss_core.lambda_x", fmt_double(c.loss.lambda_x)},
      {"loss_core.lambda_y", fmt_double(c.loss.lambda_y)},
      {"loss_core.inner_loss", std::string(to_string(c.loss.inner_loss))},
      {"loss_core.gan_loss", std::string(to_string(c.loss.gan_loss))},
      {"datasets.layout", std::string(to_string(c.dataset.layout))},
      {"datasets.root", c.dataset.root.string()},
      {"datasets.image_size", std::to_string(c.dataset.image_size)},
  };
}

OrderedSettings to_settings(const RunConfig& c) {
  auto out = to_settings(c.train);
  out.emplace_back("fid_eval.extractor", std::string(to_string(c.extractor.kind)));
  out.emplace_back("fid_eval.dim", std::to_string(c.extractor.dim));
  out.emplace_back("fid_eval.seed", std::to_string(c.extractor.seed));
  out.emplace_back("fid_eval.weights", c.extractor.weights.string());
  out.emplace_back("cli.output_dir", c.output_dir.string());
  return out;
}

std::string format_settings(const OrderedSettings& settings) {
  std::ostringstream out;
  std::string current;
  for (const auto& [full_key, value] : settings) {
    const auto dot = full_key.find('.');
    const auto section = full_key.substr(0, dot);
    if (section != current) {
      if (!current.empty()) out << '\n';
      out << '[' << section << "]\n";
      current = section;
    }
    out << full_key.substr(dot + 1) << " = " << value << '\n';
  }
  return out.str();
}

void write_settings_file(const std::filesystem::path& path, const OrderedSettings& settings) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file " + path.string());
  out << format_settings(settings);
}

TrainConfig train_config_from_text(const std::string& text) {
  std::istringstream in(text);
  return resolve_run_config(parse_settings(in)).train;
}

}  // namespace cutfocal
