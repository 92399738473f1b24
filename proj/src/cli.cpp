#include "cutfocal/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <opencv2/imgproc.hpp>

#include "cutfocal/config.hpp"
#include "cutfocal/errors.hpp"
#include "cutfocal/fid_curve.hpp"
#include "cutfocal/trainer.hpp"

namespace fs = std::filesystem;

namespace cutfocal {

namespace {

fs::path output_root_path(const fs::path& p) {
  const char* root = std::getenv(kOutputRootEnv);
  if (root == nullptr || *root == '\0' || p.is_absolute()) return p;
  return fs::path(root) / p;
}

struct ExtractorFlags {
  std::string kind = "identity_pixels";
  int64_t dim = 0;
  uint64_t seed = 0;
  std::string weights;

  void add_to(CLI::App& app) {
    app.add_option("--extractor", kind, "identity_pixels | random_projection | external_pretrained")
        ->capture_default_str();
    app.add_option("--feature-dim", dim, "extractor output dimension (0: input size)");
    app.add_option("--feature-seed", seed, "random projection seed");
    app.add_option("--feature-weights", weights, "TorchScript feature network for external_pretrained");
  }

  FeatureExtractorSpec spec() const {
    FeatureExtractorSpec s;
    try {
      s.kind = parse_extractor_kind(kind);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    s.dim = dim;
    s.seed = seed;
    s.weights = weights;
    return s;
  }
};

std::unique_ptr<FeatureExtractor> build_extractor(const FeatureExtractorSpec& spec) {
  try {
    return make_extractor(spec);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

// --- train ---------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::optional<std::string> mode, network, inner_loss, dataset, layout, output, resume;
  std::optional<int> image_size, epochs;
  std::optional<uint64_t> seed;
  std::optional<int64_t> max_iterations;
  std::vector<std::string> sets;
};

Settings flag_settings(const TrainArgs& a) {
  Settings s;
  if (a.mode) s["trainer.mode"] = *a.mode;
  if (a.network) s["trainer.network"] = *a.network;
  if (a.epochs) s["trainer.total_epochs"] = std::to_string(*a.epochs);
  if (a.seed) s["trainer.seed"] = std::to_string(*a.seed);
  if (a.max_iterations) s["trainer.max_iterations"] = std::to_string(*a.max_iterations);
  if (a.inner_loss) s["loss_core.inner_loss"] = *a.inner_loss;
  if (a.dataset) s["datasets.root"] = *a.dataset;
  if (a.layout) s["datasets.layout"] = *a.layout;
  if (a.image_size) s["datasets.image_size"] = std::to_string(*a.image_size);
  if (a.output) s["cli.output_dir"] = *a.output;
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + kv + "'");
    s[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return s;
}

std::optional<UnpairedDataset> try_test_split(DatasetSpec spec) {
  spec.split = Split::test;
  try {
    return load_dataset(spec);
  } catch (const DataError& e) {
    std::cerr << "note: no usable test split (" << e.what() << "); FID tracking disabled\n";
    return std::nullopt;
  }
}

int cmd_train(const TrainArgs& args) {
  Settings explicit_settings;
  if (!args.config.empty()) explicit_settings = read_settings_file(args.config);
  explicit_settings = merge(std::move(explicit_settings), flag_settings(args));
  RunConfig run = resolve_run_config(explicit_settings);
  run.output_dir = output_root_path(run.output_dir);

  std::optional<Trainer> trainer;
  if (args.resume) {
    trainer.emplace(Trainer::load(*args.resume));
    run.train = trainer->config();
    std::cout << "resumed from " << *args.resume << " at epoch " << trainer->epoch() << ", iteration "
              << trainer->iteration() << '\n';
  }
  if (run.train.dataset.root.empty()) throw ConfigError("no dataset root given (datasets.root or --dataset)");
  if (!fs::is_directory(run.train.dataset.root)) {
    throw DataError("dataset directory does not exist: " + run.train.dataset.root.string());
  }
  run.train.dataset.split = Split::train;
  const auto data = load_dataset(run.train.dataset);

  fs::create_directories(run.output_dir);
  write_settings_file(run.output_dir / "config.ini", to_settings(run));
  if (!trainer) trainer.emplace(run.train);

  const auto test = try_test_split(run.train.dataset);
  auto extractor = build_extractor(run.extractor);
  std::optional<std::ofstream> curve;
  if (test) {
    const auto curve_path = run.output_dir / "fid_curve.csv";
    const bool fresh = !fs::exists(curve_path);
    curve.emplace(curve_path, std::ios::app);
    if (fresh) *curve << "epoch,fid\n";
  }
  std::vector<torch::Tensor> real;
  if (test) real = collect(test->b);

  const auto& lx = run.train.loss;
  std::cout << "training " << to_string(run.train.mode) << " (lambda_x=" << lx.lambda_x << ", lambda_y=" << lx.lambda_y
            << ", inner=" << to_string(lx.inner_loss) << ") on " << data.a.size() << "/" << data.b.size()
            << " images into " << run.output_dir << '\n';

  Trainer::Hooks hooks;
  hooks.on_step = [](const StepMetrics& m) {
    if (m.iteration % 100 == 0) {
      std::cout << "epoch " << m.epoch << " iter " << m.iteration << " D " << m.loss_D << " G " << m.loss_G_gan
                << " nce_x " << m.loss_nce_x << " nce_y " << m.loss_nce_y << " lr " << m.lr << '\n';
    }
  };
  hooks.on_checkpoint = [&](int epoch, const fs::path&) {
    if (!test) return;
    auto& g = trainer->models().generator;
    g->eval();
    const double value = generator_fid(g, test->a, real, *extractor, 500);
    g->train();
    *curve << epoch << ',' << value << '\n' << std::flush;
    std::cout << "epoch " << epoch << " FID " << value << '\n';
  };
  trainer->fit(data, run.output_dir, hooks);
  std::cout << "done: " << trainer->iteration() << " iterations, checkpoint " << run.output_dir / "latest.pt" << '\n';
  return kExitOk;
}

// --- translate -----------------------------------------------------------

int cmd_translate(const fs::path& checkpoint, const fs::path& input, const fs::path& output_arg) {
  const auto cfg = read_checkpoint_config(checkpoint);
  Generator generator(GeneratorSpec::for_preset(cfg.network));
  load_generator(checkpoint, generator);
  generator->eval();

  const auto files = list_images(input);
  if (files.empty()) {
    std::cerr << "warning: no images in " << input << "; nothing written\n";
    return kExitOk;
  }
  const auto output = output_root_path(output_arg);
  fs::create_directories(output);
  int failures = 0;
  for (const auto& f : files) {
    try {
      const cv::Mat src = read_rgb(f);
      auto x = preprocess(src, cfg.dataset.image_size);
      const auto y = translate_all(generator, std::span(&x, 1)).front();
      cv::Mat out = depreprocess(y);
      if (out.rows != src.rows || out.cols != src.cols) {
        cv::Mat resized;
        cv::resize(out, resized, src.size(), 0, 0, cv::INTER_LINEAR);
        out = resized;
      }
      write_rgb(output / f.filename(), out);
    } catch (const std::exception& e) {
      ++failures;
      std::cerr << "error: " << f << ": " << e.what() << '\n';
    }
  }
  std::cout << "translated " << files.size() - failures << " of " << files.size() << " images into " << output << '\n';
  return failures == 0 ? kExitOk : kExitData;
}

// --- evaluate ------------------------------------------------------------

struct EvaluateArgs {
  std::string checkpoint, dataset, layout = "two_folders", generated_dir, real_dir, results;
  std::optional<int> image_size;
  std::size_t num_generated = 500;
  ExtractorFlags extractor;
};

std::vector<torch::Tensor> load_dir(const fs::path& dir, int size, std::size_t limit = SIZE_MAX) {
  ImageCollection c(size);
  for (auto& p : list_images(dir)) c.add_file(std::move(p));
  return collect(c, limit);
}

int cmd_evaluate(const EvaluateArgs& a) {
  auto extractor = build_extractor(a.extractor.spec());
  std::optional<TrainConfig> cfg;
  if (!a.checkpoint.empty()) cfg = read_checkpoint_config(a.checkpoint);
  const int size = a.image_size.value_or(cfg ? cfg->dataset.image_size : 256);

  std::vector<torch::Tensor> real, generated;
  std::optional<UnpairedDataset> test;
  if (!a.dataset.empty()) {
    DatasetSpec spec{parse_layout(a.layout), a.dataset, Split::test, size};
    test = load_dataset(spec);
  }
  if (!a.real_dir.empty()) {
    real = load_dir(a.real_dir, size);
  } else if (test) {
    real = collect(test->b);
  } else {
    throw ConfigError("evaluate needs --dataset or --real-dir");
  }

  if (!a.generated_dir.empty()) {
    generated = load_dir(a.generated_dir, size, a.num_generated);
  } else {
    if (!cfg) throw ConfigError("evaluate needs --checkpoint or --generated-dir");
    if (!test) throw ConfigError("generating images needs --dataset");
    Generator generator(GeneratorSpec::for_preset(cfg->network));
    load_generator(a.checkpoint, generator);
    generator->eval();
    generated = translate_all(generator, collect(test->a, a.num_generated));
  }
  if (generated.empty()) throw DataError("no generated images to evaluate");

  const double value = fid_between_sets(real, generated, *extractor);
  std::cout << "FID " << value << " (" << generated.size() << " generated vs " << real.size() << " real, "
            << a.extractor.kind << ")\n";

  const auto results = output_root_path(a.results.empty() ? fs::path("results.csv") : fs::path(a.results));
  if (results.has_parent_path()) fs::create_directories(results.parent_path());
  const bool fresh = !fs::exists(results);
  std::ofstream out(results, std::ios::app);
  if (!out) throw DataError("cannot write " + results.string());
  if (fresh) out << "checkpoint,extractor,num_generated,num_real,fid\n";
  out << (a.checkpoint.empty() ? a.generated_dir : a.checkpoint) << ',' << a.extractor.kind << ',' << generated.size()
      << ',' << real.size() << ',' << value << '\n';
  return kExitOk;
}

// --- curve ---------------------------------------------------------------

struct CurveArgs {
  std::vector<std::string> runs;
  std::string dataset, layout = "two_folders", out, plot;
  int every_k = 5;
  std::optional<int> image_size;
  std::size_t num_generated = 500;
  ExtractorFlags extractor;
};

int cmd_curve(const CurveArgs& a) {
  auto extractor = build_extractor(a.extractor.spec());
  const fs::path out_dir = output_root_path(a.out.empty() ? fs::path(".") : fs::path(a.out));
  fs::create_directories(out_dir);
  std::vector<std::pair<std::string, std::vector<CurvePoint>>> series;
  for (const auto& run : a.runs) {
    const auto checkpoints = list_epoch_checkpoints(run);
    if (checkpoints.empty()) throw DataError("no epoch checkpoints in " + run);
    int size = a.image_size.value_or(0);
    if (size == 0) {
      try {
        size = read_checkpoint_config(checkpoints.front().second).dataset.image_size;
      } catch (const CheckpointError&) {
        size = 256;
      }
    }
    const auto test = load_dataset({parse_layout(a.layout), a.dataset, Split::test, size});
    auto points = fid_curve(run, test, a.every_k, *extractor, a.num_generated);
    const auto name = fs::path(run).lexically_normal().filename().string().empty()
                          ? fs::path(run).lexically_normal().parent_path().filename().string()
                          : fs::path(run).lexically_normal().filename().string();
    const auto csv = out_dir / (name + "_fid.csv");
    write_curve_csv(csv, points);
    for (const auto& p : points) {
      if (!p.ok()) std::cerr << "warning: " << name << " epoch " << p.epoch << ": " << p.error << '\n';
    }
    std::cout << "wrote " << points.size() << " points to " << csv << '\n';
    series.emplace_back(name, std::move(points));
  }
  if (!a.plot.empty()) {
    const auto plot = output_root_path(a.plot);
    plot_curves(plot, series);
    std::cout << "plot written to " << plot << '\n';
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Contrastive unpaired image translation with cross-entropy or focal patch losses"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a translation model");
  train_cmd->add_option("--config", train.config, "INI config file");
  train_cmd->add_option("--mode", train.mode, "CUT | FastCUT");
  train_cmd->add_option("--network", train.network, "full | tiny");
  train_cmd->add_option("--inner-loss", train.inner_loss, "cross_entropy | focal");
  train_cmd->add_option("--dataset", train.dataset, "dataset root");
  train_cmd->add_option("--layout", train.layout, "two_folders | side_by_side");
  train_cmd->add_option("--image-size", train.image_size);
  train_cmd->add_option("--epochs", train.epochs, "total epochs");
  train_cmd->add_option("--seed", train.seed);
  train_cmd->add_option("--max-iterations", train.max_iterations);
  train_cmd->add_option("--output", train.output, "run directory");
  train_cmd->add_option("--resume", train.resume, "checkpoint to resume from");
  train_cmd->add_option("--set", train.sets, "section.key=value override (repeatable)");

  std::string ckpt, input, output;
  auto* translate_cmd = app.add_subcommand("translate", "translate a directory of images");
  translate_cmd->add_option("--checkpoint", ckpt)->required();
  translate_cmd->add_option("--input", input)->required();
  translate_cmd->add_option("--output", output)->required();

  EvaluateArgs eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "FID of a trained generator against the domain-B test split");
  eval_cmd->add_option("--checkpoint", eval.checkpoint);
  eval_cmd->add_option("--dataset", eval.dataset, "dataset root");
  eval_cmd->add_option("--layout", eval.layout)->capture_default_str();
  eval_cmd->add_option("--image-size", eval.image_size);
  eval_cmd->add_option("--num-generated", eval.num_generated)->capture_default_str();
  eval_cmd->add_option("--generated-dir", eval.generated_dir, "use pre-generated images instead of a checkpoint");
  eval_cmd->add_option("--real-dir", eval.real_dir, "real images instead of the domain-B test split");
  eval_cmd->add_option("--results", eval.results, "results CSV to append to (default results.csv)");
  eval.extractor.add_to(*eval_cmd);

  CurveArgs curve;
  auto* curve_cmd = app.add_subcommand("curve", "FID over the epoch checkpoints of one or more runs");
  curve_cmd->add_option("--runs", curve.runs, "run directories")->required();
  curve_cmd->add_option("--dataset", curve.dataset)->required();
  curve_cmd->add_option("--layout", curve.layout)->capture_default_str();
  curve_cmd->add_option("--k", curve.every_k, "epoch interval")->capture_default_str();
  curve_cmd->add_option("--image-size", curve.image_size);
  curve_cmd->add_option("--num-generated", curve.num_generated)->capture_default_str();
  curve_cmd->add_option("--out", curve.out, "directory for the per-run CSVs");
  curve_cmd->add_option("--plot", curve.plot, "PNG comparing all runs");
  curve.extractor.add_to(*curve_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train_cmd) return cmd_train(train);
    if (*translate_cmd) return cmd_translate(ckpt, input, output);
    if (*eval_cmd) return cmd_evaluate(eval);
    if (*curve_cmd) return cmd_curve(curve);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kExitData;
  } catch (const DivergenceError& e) {
    std::cerr << "numeric divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace cutfocal
