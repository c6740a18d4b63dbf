#include "ffn/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ffn/training.hpp"

namespace ffn {

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

double mean_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) throw ShapeError("compare_stats: channel counts differ");
  if (a.empty()) return 0.0;
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(double(a[i]) - double(b[i]));
  return s / static_cast<double>(a.size());
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

NormStats extract_norm_stats(const Model<float>& model, int branch, std::string source) {
  if (branch < 0 || branch >= model.num_branches()) throw std::out_of_range("extract_norm_stats: no such branch");
  NormStats s;
  s.source = std::move(source);
  const auto& arrays = model.arrays();
  for (int i = 0; i < static_cast<int>(model.spec().blocks.size()); ++i) {
    s.layers.push_back("block" + std::to_string(i));
    s.mu.push_back(arrays[model.mean_index(i, branch)].values);
    s.var.push_back(arrays[model.var_index(i, branch)].values);
    s.gamma.push_back(arrays[model.gamma_index(i, branch)].values);
    s.beta.push_back(arrays[model.beta_index(i, branch)].values);
  }
  return s;
}

void write_normstats_csv(const std::vector<NormStats>& stats, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "layer,channel,mu,var,gamma,beta,source\n";
  char buf[256];
  for (const auto& s : stats)
    for (std::size_t l = 0; l < s.layers.size(); ++l)
      for (std::size_t c = 0; c < s.mu[l].size(); ++c) {
        std::snprintf(buf, sizeof buf, "%s,%zu,%.8g,%.8g,%.8g,%.8g,", s.layers[l].c_str(), c, s.mu[l][c], s.var[l][c],
                      s.gamma[l][c], s.beta[l][c]);
        out << buf << s.source << "\n";
      }
}

StatsDistance compare_stats(const NormStats& a, const NormStats& b) {
  if (a.layers.size() != b.layers.size()) throw ShapeError("compare_stats: layer counts differ");
  StatsDistance d;
  d.layers = a.layers;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    d.mu.push_back(mean_abs_diff(a.mu[l], b.mu[l]));
    d.var.push_back(mean_abs_diff(a.var[l], b.var[l]));
    d.gamma.push_back(mean_abs_diff(a.gamma[l], b.gamma[l]));
    d.beta.push_back(mean_abs_diff(a.beta[l], b.beta[l]));
  }
  d.aggregate_mu = mean(d.mu);
  d.aggregate_var = mean(d.var);
  d.aggregate_gamma = mean(d.gamma);
  d.aggregate_beta = mean(d.beta);
  d.aggregate = d.aggregate_mu + d.aggregate_var + d.aggregate_gamma + d.aggregate_beta;
  return d;
}

void write_compare_csv(const StatsDistance& d, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "layer,d_mu,d_var,d_gamma,d_beta\n";
  char buf[256];
  for (std::size_t l = 0; l < d.layers.size(); ++l) {
    std::snprintf(buf, sizeof buf, "%s,%.8g,%.8g,%.8g,%.8g\n", d.layers[l].c_str(), d.mu[l], d.var[l], d.gamma[l],
                  d.beta[l]);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "aggregate,%.8g,%.8g,%.8g,%.8g\n", d.aggregate_mu, d.aggregate_var,
                d.aggregate_gamma, d.aggregate_beta);
  out << buf;
}

// ---------------------------------------------------------------- deviation

const DeviationRow* DeviationReport::find(int eval_frames) const {
  for (const auto& r : rows)
    if (r.eval_frames == eval_frames) return &r;
  return nullptr;
}

DeviationReport deviation_sweep(const Model<float>& model, const Dataset& data, std::span<const int> eval_frames) {
  DeviationReport report;
  std::map<int, double> cache;  // frames -> top1
  auto top1_at = [&](int frames) {
    auto it = cache.find(frames);
    if (it != cache.end()) return it->second;
    return cache[frames] = evaluate(model, data, data.val, frames).top1;
  };
  const auto& counts = model.branches();
  for (int f : eval_frames) {
    DeviationRow r;
    r.eval_frames = f;
    r.train_frames = model.kind() == ModelKind::ffn ? counts.frames(select_branch(counts, f)) : counts.max_frames();
    r.top1 = top1_at(f);
    r.drop = f == r.train_frames ? 0.0 : top1_at(r.train_frames) - r.top1;
    r.outbound = f < counts.frames(0) || f > counts.max_frames();
    report.rows.push_back(r);
  }
  return report;
}

void write_deviation_csv(const std::vector<DeviationReport>& reports, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "train_frames,eval_frames,top1,drop\n";
  char buf[128];
  for (const auto& rep : reports)
    for (const auto& r : rep.rows) {
      std::snprintf(buf, sizeof buf, "%d,%d,%.4f,%.4f\n", r.train_frames, r.eval_frames, r.top1, r.drop);
      out << buf;
    }
}

std::vector<NearbyRow> nearby_alleviation_report(const DeviationReport& report, double tolerance) {
  std::vector<NearbyRow> out;
  for (const auto& a : report.rows)
    for (const auto& b : report.rows) {
      if (a.train_frames != b.train_frames) continue;
      const int c = a.train_frames;
      const int da = a.eval_frames - c, db = b.eval_frames - c;
      const bool same_side = (da < 0 && db < 0) || (da > 0 && db > 0);
      if (!same_side || std::abs(da) >= std::abs(db)) continue;
      out.push_back({c, a.eval_frames, b.eval_frames, a.drop, b.drop, a.drop <= b.drop + tolerance});
    }
  return out;
}

void write_nearby_csv(const std::vector<NearbyRow>& rows, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "train_frames,near_frames,far_frames,drop_near,drop_far,holds\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%d,%d,%.4f,%.4f,%d\n", r.train_frames, r.near_frames, r.far_frames, r.drop_near,
                  r.drop_far, r.holds ? 1 : 0);
    out << buf;
  }
}

// ---------------------------------------------------------------- shifted statistics

Model<float> recalibrate_norm(const Model<float>& model, const Dataset& data, int frames, int batch_size) {
  Model<float> copy = model;
  // Plain average of per-batch moments over the whole split.
  const int blocks = static_cast<int>(model.spec().blocks.size());
  std::vector<std::vector<double>> mean_sum(blocks), var_sum(blocks);
  int batches = 0;
  std::vector<int> idx;
  const int n = static_cast<int>(data.train.size());
  for (int start = 0; start < n; start += batch_size) {
    idx.resize(std::min(batch_size, n - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto video = make_batch<float>(data, data.train, idx, frames, SampleVariant::eval, nullptr);
    // Running stats after one training-mode pass from a zeroed state are
    // momentum * batch moments; recover the batch moments from them.
    Model<float> probe = copy;
    for (int i = 0; i < blocks; ++i) {
      auto& m = probe.arrays()[probe.mean_index(i, 0)].values;
      auto& v = probe.arrays()[probe.var_index(i, 0)].values;
      std::fill(m.begin(), m.end(), 0.0f);
      std::fill(v.begin(), v.end(), 0.0f);
    }
    probe.run(video, 0, NormMode::train);
    for (int i = 0; i < blocks; ++i) {
      const auto& m = probe.arrays()[probe.mean_index(i, 0)].values;
      const auto& v = probe.arrays()[probe.var_index(i, 0)].values;
      mean_sum[i].resize(m.size(), 0.0);
      var_sum[i].resize(v.size(), 0.0);
      for (std::size_t c = 0; c < m.size(); ++c) {
        mean_sum[i][c] += m[c] / kNormMomentum;
        var_sum[i][c] += v[c] / kNormMomentum;
      }
    }
    ++batches;
  }
  for (int i = 0; i < blocks; ++i) {
    auto& m = copy.arrays()[copy.mean_index(i, 0)].values;
    auto& v = copy.arrays()[copy.var_index(i, 0)].values;
    for (std::size_t c = 0; c < m.size(); ++c) {
      m[c] = static_cast<float>(mean_sum[i][c] / batches);
      v[c] = static_cast<float>(var_sum[i][c] / batches);
    }
  }
  return copy;
}

double simulate_shifted_norm(const Model<float>& model, const Dataset& data, int eval_frames, ShiftMode mode) {
  if (model.kind() != ModelKind::base) throw std::invalid_argument("simulate_shifted_norm expects a base model");
  if (mode == ShiftMode::cross) return evaluate(model, data, data.val, eval_frames).top1;
  return evaluate(recalibrate_norm(model, data, eval_frames), data, data.val, eval_frames).top1;
}

double estimate_gflops(const BackboneSpec& spec, int frames, bool alteration) {
  double macs = 0;
  int h = spec.height, w = spec.width;
  for (const auto& g : spec.geometries()) {
    h = g.out_extent(h);
    w = g.out_extent(w);
    const double pixels = static_cast<double>(h) * w;
    macs += pixels * g.out_channels * g.in_channels * g.kernel * g.kernel;
    macs += pixels * g.out_channels * 2;  // normalization affine
    if (alteration) macs += pixels * g.out_channels * spec.alteration_kernel * spec.alteration_kernel;
  }
  macs += static_cast<double>(spec.feature_channels()) * spec.num_classes / frames;
  return 2.0 * macs * frames / 1e9;
}

// ---------------------------------------------------------------- plots

void write_line_plot(const std::vector<PlotSeries>& series, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::filesystem::path& path) {
  const int W = 720, H = 480, left = 70, right = 170, top = 40, bottom = 60;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
  double x0 = std::numeric_limits<double>::max(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (x0 > x1) {
    x0 = 0;
    x1 = 1;
    y0 = 0;
    y1 = 1;
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return left + static_cast<int>((x - x0) / (x1 - x0) * (W - left - right)); };
  auto py = [&](double y) { return H - bottom - static_cast<int>((y - y0) / (y1 - y0) * (H - top - bottom)); };

  const cv::Scalar black(0, 0, 0), grey(200, 200, 200);
  cv::rectangle(img, {left, top}, {W - right, H - bottom}, black, 1);
  char buf[64];
  for (int t = 0; t <= 4; ++t) {
    const double yv = y0 + (y1 - y0) * t / 4.0;
    cv::line(img, {left, py(yv)}, {W - right, py(yv)}, grey, 1);
    std::snprintf(buf, sizeof buf, "%.3g", yv);
    cv::putText(img, buf, {5, py(yv) + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black, 1);
    const double xv = x0 + (x1 - x0) * t / 4.0;
    std::snprintf(buf, sizeof buf, "%.3g", xv);
    cv::putText(img, buf, {px(xv) - 10, H - bottom + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black, 1);
  }
  cv::putText(img, title, {left, 25}, cv::FONT_HERSHEY_SIMPLEX, 0.6, black, 1);
  cv::putText(img, x_label, {W / 2 - 40, H - 15}, cv::FONT_HERSHEY_SIMPLEX, 0.5, black, 1);
  cv::putText(img, y_label, {5, top - 8}, cv::FONT_HERSHEY_SIMPLEX, 0.5, black, 1);

  const cv::Scalar palette[] = {{180, 80, 30}, {30, 120, 230}, {60, 160, 60}, {40, 40, 200}, {160, 60, 160}, {90, 90, 90}};
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const cv::Scalar colour = palette[k % 6];
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const cv::Point p(px(s.x[i]), py(s.y[i]));
      cv::circle(img, p, 3, colour, cv::FILLED);
      if (i > 0) cv::line(img, {px(s.x[i - 1]), py(s.y[i - 1])}, p, colour, 2);
    }
    const int ly = top + 15 + static_cast<int>(k) * 18;
    cv::line(img, {W - right + 10, ly - 4}, {W - right + 30, ly - 4}, colour, 2);
    cv::putText(img, s.name, {W - right + 35, ly}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black, 1);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), img)) throw std::runtime_error("cannot write plot " + path.string());
}

}  // namespace ffn
