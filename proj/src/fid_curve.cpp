#include "cutfocal/fid_curve.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <regex>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "cutfocal/errors.hpp"
#include "cutfocal/trainer.hpp"

namespace fs = std::filesystem;

namespace cutfocal {

std::vector<std::pair<int, fs::path>> list_epoch_checkpoints(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("checkpoint directory does not exist: " + dir.string());
  static const std::regex pattern(R"(epoch_(\d+)\.pt)");
  std::vector<std::pair<int, fs::path>> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && std::regex_match(name, m, pattern)) out.emplace_back(std::stoi(m[1].str()), e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

double generator_fid(Generator& generator, const ImageCollection& sources, std::span<const torch::Tensor> real,
                     FeatureExtractor& extractor, std::size_t num_generated) {
  const auto inputs = collect(sources, num_generated);
  const auto generated = translate_all(generator, inputs);
  return fid_between_sets(real, generated, extractor);
}

std::vector<CurvePoint> fid_curve(const fs::path& checkpoint_dir, const UnpairedDataset& test_set, int every_k,
                                  FeatureExtractor& extractor, std::size_t num_generated) {
  if (every_k < 1) throw std::invalid_argument("curve interval must be >= 1");
  const auto checkpoints = list_epoch_checkpoints(checkpoint_dir);
  if (checkpoints.empty()) throw DataError("no epoch checkpoints in " + checkpoint_dir.string());
  const auto real = collect(test_set.b);

  std::vector<CurvePoint> points;
  for (const auto& [epoch, path] : checkpoints) {
    if (epoch % every_k != 0) continue;
    CurvePoint p;
    p.epoch = epoch;
    try {
      const auto cfg = read_checkpoint_config(path);
      Generator generator(GeneratorSpec::for_preset(cfg.network));
      load_generator(path, generator);
      generator->eval();
      p.fid = generator_fid(generator, test_set.a, real, extractor, num_generated);
    } catch (const std::exception& e) {
      p.fid = std::numeric_limits<double>::quiet_NaN();
      p.error = e.what();
    }
    points.push_back(std::move(p));
  }
  return points;
}

void write_curve_csv(const fs::path& path, const std::vector<CurvePoint>& points) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,fid\n";
  for (const auto& p : points) {
    out << p.epoch << ',';
    if (p.ok()) {
      char buf[64];
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, p.fid);
      out.write(buf, end - buf);
    } else {
      out << "nan";
    }
    out << '\n';
  }
}

void plot_curves(const fs::path& path, const std::vector<std::pair<std::string, std::vector<CurvePoint>>>& runs) {
  constexpr int kWidth = 800, kHeight = 500, kMargin = 60;
  cv::Mat canvas(kHeight, kWidth, CV_8UC3, cv::Scalar(255, 255, 255));

  double max_epoch = 1.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& [name, pts] : runs) {
    for (const auto& p : pts) {
      if (!p.ok()) continue;
      max_epoch = std::max(max_epoch, static_cast<double>(p.epoch));
      lo = std::min(lo, p.fid);
      hi = std::max(hi, p.fid);
    }
  }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-9) hi = lo + 1.0;

  auto to_px = [&](double epoch, double fid) {
    const double x = kMargin + (kWidth - 2 * kMargin) * epoch / max_epoch;
    const double y = kHeight - kMargin - (kHeight - 2 * kMargin) * (fid - lo) / (hi - lo);
    return cv::Point(static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y)));
  };

  const cv::Scalar axis(0, 0, 0);
  cv::line(canvas, {kMargin, kHeight - kMargin}, {kWidth - kMargin, kHeight - kMargin}, axis, 1);
  cv::line(canvas, {kMargin, kMargin}, {kMargin, kHeight - kMargin}, axis, 1);
  auto label = [&](const std::string& text, cv::Point at) {
    cv::putText(canvas, text, at, cv::FONT_HERSHEY_SIMPLEX, 0.45, axis, 1, cv::LINE_AA);
  };
  label("epoch", {kWidth / 2 - 20, kHeight - 15});
  label("FID", {10, kMargin - 20});
  std::ostringstream hi_s, lo_s, ep_s;
  hi_s << hi;
  lo_s << lo;
  ep_s << max_epoch;
  label(hi_s.str(), {5, kMargin + 5});
  label(lo_s.str(), {5, kHeight - kMargin});
  label(ep_s.str(), {kWidth - kMargin - 10, kHeight - kMargin + 20});

  static const cv::Scalar palette[] = {{200, 80, 30}, {30, 60, 200}, {40, 160, 40}, {150, 40, 150}, {20, 140, 200}};
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const auto colour = palette[r % std::size(palette)];
    std::vector<cv::Point> line;
    for (const auto& p : runs[r].second) {
      if (p.ok()) line.push_back(to_px(p.epoch, p.fid));
    }
    if (line.size() > 1) cv::polylines(canvas, line, false, colour, 2, cv::LINE_AA);
    for (const auto& pt : line) cv::circle(canvas, pt, 3, colour, cv::FILLED, cv::LINE_AA);
    const cv::Point key(kWidth - kMargin - 180, kMargin + 20 * static_cast<int>(r));
    cv::line(canvas, key, key + cv::Point(20, 0), colour, 2);
    cv::putText(canvas, runs[r].first, key + cv::Point(28, 5), cv::FONT_HERSHEY_SIMPLEX, 0.45, colour, 1, cv::LINE_AA);
  }
  write_rgb(path, canvas);
}

}  // namespace cutfocal
