#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "doctest.h"
#include "ffn/diagnostics.hpp"
#include "ffn/training.hpp"
#include "helpers.hpp"

using namespace ffn;

namespace {

// Dataset whose clips match test::micro_spec(): 8 channels, 6x6 frames.
Dataset micro_dataset(int clips, std::uint64_t seed) {
  Dataset d;
  d.channels = 8;
  d.height = d.width = 6;
  d.num_classes = 3;
  d.class_names = {"a", "b", "c"};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> px(0, 255);
  for (int i = 0; i < clips; ++i) {
    Clip c;
    c.frame_count = 16;
    c.label = i % 3;
    c.pixels.resize(16u * 8 * 36);
    for (auto& p : c.pixels) p = static_cast<std::uint8_t>(px(rng));
    (i % 4 == 0 ? d.val : d.train).push_back(std::move(c));
  }
  return d;
}

NormStats two_layer_stats(float offset) {
  NormStats s;
  s.layers = {"block0", "block1"};
  s.mu = {{0.0f + offset, 1.0f}, {2.0f, 2.0f, 2.0f}};
  s.var = {{1.0f, 1.0f}, {1.0f, 1.0f, 1.0f}};
  s.gamma = {{1.0f, 1.0f}, {1.0f, 1.0f, 1.0f}};
  s.beta = {{0.0f, 0.0f}, {0.0f, 0.0f, 0.5f * offset}};
  return s;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("compare_stats: per-layer mean absolute difference and aggregates") {
  const auto a = two_layer_stats(0.0f), b = two_layer_stats(3.0f);
  const auto same = compare_stats(a, a);
  CHECK(same.aggregate == 0.0);
  const auto d = compare_stats(a, b);
  // block0 mu differs by 3 in one of two channels; block1 beta by 1.5 in one of three.
  CHECK(d.mu[0] == doctest::Approx(1.5));
  CHECK(d.mu[1] == doctest::Approx(0.0));
  CHECK(d.beta[1] == doctest::Approx(0.5));
  CHECK(d.aggregate_mu == doctest::Approx(0.75));
  CHECK(d.aggregate_beta == doctest::Approx(0.25));
  CHECK(d.aggregate == doctest::Approx(1.0));
  // Symmetric.
  CHECK(compare_stats(b, a).aggregate == d.aggregate);

  auto short_stats = a;
  short_stats.layers.pop_back();
  CHECK_THROWS_AS(compare_stats(a, short_stats), ShapeError);

  const auto dir = std::filesystem::temp_directory_path() / "ffn_test_compare";
  write_compare_csv(d, dir / "compare.csv");
  CHECK(read_file(dir / "compare.csv").rfind("layer,d_mu,d_var,d_gamma,d_beta\nblock0,1.5,0,0,0\n", 0) == 0);
}

TEST_CASE("extract_norm_stats reads the branch's normalization set") {
  auto m = Model<float>::ffn(test::micro_spec(2, 3), FrameBranchSet(std::vector<int>{2, 4}), {}, 1);
  m.arrays()[m.mean_index(1, 1)].values[2] = 7.5f;
  const auto s0 = extract_norm_stats(m, 0, "b0");
  const auto s1 = extract_norm_stats(m, 1, "b1");
  CHECK(s1.source == "b1");
  REQUIRE(s1.layers.size() == 2);
  CHECK(s1.mu[1][2] == 7.5f);
  CHECK(s0.mu[1][2] == 0.0f);
  CHECK(s1.mu[1].size() == 16);
  CHECK_THROWS_AS(extract_norm_stats(m, 2), std::out_of_range);

  const auto dir = std::filesystem::temp_directory_path() / "ffn_test_normstats";
  write_normstats_csv({s0, s1}, dir / "normstats.csv");
  const auto text = read_file(dir / "normstats.csv");
  CHECK(text.rfind("layer,channel,mu,var,gamma,beta,source\n", 0) == 0);
  CHECK(text.find("block1,2,7.5,1,1,0,b1\n") != std::string::npos);
}

TEST_CASE("deviation sweep: matched rows have zero drop, routed rows name their branch") {
  const auto d = micro_dataset(24, 3);
  const auto base = Model<float>::base(test::micro_spec(2, 3), FrameBranchSet(std::vector<int>{8}), 2);
  const std::vector<int> frames{2, 4, 8, 12};
  const auto r = deviation_sweep(base, d, frames);
  REQUIRE(r.rows.size() == 4);
  for (const auto& row : r.rows) CHECK(row.train_frames == 8);
  CHECK(r.find(8)->drop == 0.0);
  CHECK(r.find(4)->drop == doctest::Approx(r.find(8)->top1 - r.find(4)->top1));
  CHECK(r.find(12)->outbound);
  CHECK(r.find(4)->outbound);
  CHECK(r.find(99) == nullptr);

  const auto ffn_model = Model<float>::ffn(test::micro_spec(2, 3), FrameBranchSet(std::vector<int>{4, 8}), {}, 2);
  const auto rf = deviation_sweep(ffn_model, d, std::vector<int>{2, 4, 6, 8, 12});
  CHECK(rf.find(4)->drop == 0.0);
  CHECK(rf.find(8)->drop == 0.0);
  CHECK(rf.find(2)->train_frames == 4);
  CHECK(rf.find(6)->train_frames == 8);  // tie goes to the higher count
  CHECK(rf.find(12)->train_frames == 8);
  CHECK(rf.find(2)->outbound);
  CHECK_FALSE(rf.find(6)->outbound);
}

TEST_CASE("nearby alleviation pairs counts on the same side of the trained count") {
  DeviationReport r;
  r.rows = {{8, 2, 20.0, 60.0, true}, {8, 4, 50.0, 30.0, true}, {8, 6, 75.0, 5.0, true},
            {8, 8, 80.0, 0.0, false}, {8, 12, 70.0, 10.0, true}, {8, 16, 72.0, 8.0, true}};
  const auto rows = nearby_alleviation_report(r, 1.0);
  // Below: (6,4) (6,2) (4,2); above: (12,16).
  REQUIRE(rows.size() == 4);
  int holds = 0;
  for (const auto& row : rows) {
    CHECK(std::abs(row.near_frames - 8) < std::abs(row.far_frames - 8));
    holds += row.holds;
  }
  CHECK(holds == 3);
  bool found_violation = false;
  for (const auto& row : rows)
    if (row.near_frames == 12 && row.far_frames == 16) found_violation = !row.holds;
  CHECK(found_violation);
}

TEST_CASE("recalibration re-estimates running statistics and nothing else") {
  const auto d = micro_dataset(24, 5);
  auto m = Model<float>::base(test::micro_spec(2, 3), FrameBranchSet(std::vector<int>{8}), 4);
  const auto original = m.arrays();
  const int n = static_cast<int>(d.train.size());
  const auto re = recalibrate_norm(m, d, 4, n);  // one batch holds the whole split

  // Oracle: batch moments of the first block's convolution output.
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const auto video = make_batch<float>(d, d.train, idx, 4, SampleVariant::eval, nullptr);
  ForwardCache<float> cache;
  auto probe = m;
  probe.forward_branch(video, 0, NormMode::batch_stats, &cache);
  const double count = static_cast<double>(n) * 4 * 6 * 6;
  const auto& mu = re.arrays()[re.mean_index(0, 0)].values;
  const auto& var = re.arrays()[re.var_index(0, 0)].values;
  for (std::size_t c = 0; c < mu.size(); ++c) {
    CHECK(mu[c] == doctest::Approx(cache.blocks[0].mean[c]).epsilon(1e-4));
    CHECK(var[c] == doctest::Approx(cache.blocks[0].var[c] * count / (count - 1)).epsilon(1e-4));
  }
  for (std::size_t i = 0; i < original.size(); ++i) {
    CHECK(m.arrays()[i].values == original[i].values);  // input untouched
    if (original[i].trainable) CHECK(re.arrays()[i].values == original[i].values);
  }
  CHECK(simulate_shifted_norm(m, d, 4, ShiftMode::cross) == evaluate(m, d, d.val, 4).top1);
  CHECK(simulate_shifted_norm(m, d, 4, ShiftMode::native) == evaluate(recalibrate_norm(m, d, 4), d, d.val, 4).top1);
}

TEST_CASE("estimate_gflops counts convolution, affine and alteration work") {
  const auto spec = test::micro_spec(1, 3);  // 8 -> 8 channels, 3x3, 6x6 output
  const double pixels = 36, conv = pixels * 8 * 8 * 9, affine = pixels * 8 * 2, alter = pixels * 8 * 9;
  const double head = 8.0 * 3;
  CHECK(estimate_gflops(spec, 4, false) == doctest::Approx(2 * (4 * (conv + affine) + head) / 1e9));
  CHECK(estimate_gflops(spec, 4, true) == doctest::Approx(2 * (4 * (conv + affine + alter) + head) / 1e9));
}

TEST_CASE("line plots are written as PNG images") {
  const auto path = std::filesystem::temp_directory_path() / "ffn_test_plot" / "p.png";
  std::filesystem::remove(path);
  write_line_plot({{"a", {1, 2, 3}, {10, 20, 15}}, {"b", {1, 3}, {5, 25}}}, "title", "x", "y", path);
  const cv::Mat img = cv::imread(path.string());
  CHECK(img.cols == 720);
  CHECK(img.rows == 480);
}
