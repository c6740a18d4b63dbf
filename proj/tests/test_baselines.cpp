#include <cmath>
#include <vector>

#include "doctest.h"
#include "ffn/baselines.hpp"
#include "helpers.hpp"

using namespace ffn;

namespace {

Dataset tiny_dataset() {
  SyntheticConfig c;
  c.num_classes = 4;
  c.samples_per_class = 4;
  c.seed = 31;
  return generate_synthetic_dataset(c);
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.num_classes = 4;
  c.frames = {2, 4};
  c.eval_frames = {2, 4};
  c.epochs = 1;
  c.batch_size = 4;
  c.seed = 5;
  return c;
}

bool same_weights(const Model<float>& a, const Model<float>& b) {
  if (a.arrays().size() != b.arrays().size()) return false;
  for (std::size_t i = 0; i < a.arrays().size(); ++i)
    if (a.arrays()[i].values != b.arrays()[i].values) return false;
  return true;
}

VideoTensor<float> constant_clip(int t, float v) {
  VideoTensor<float> x(1, t, 1, 4, 4);
  std::fill(x.frames.data.begin(), x.frames.data.end(), v);
  return x;
}

}  // namespace

TEST_CASE("mixup_blend: endpoints and midpoint") {
  const auto a = test::random_video<float>(2, 4, test::micro_spec(), 1);
  const auto b = test::random_video<float>(2, 4, test::micro_spec(), 2);
  CHECK(mixup_blend(a, b, 1.0).frames.data == a.frames.data);
  CHECK(mixup_blend(a, b, 0.0).frames.data == b.frames.data);
  const auto mid = mixup_blend(constant_clip(4, 0.0f), constant_clip(4, 2.0f), 0.5);
  for (float v : mid.frames.data) CHECK(v == 1.0f);
  CHECK_THROWS_AS(mixup_blend(constant_clip(4, 0.0f), constant_clip(3, 0.0f), 0.5), ShapeError);
}

TEST_CASE("blend window start is uniform over 0..high-low") {
  std::mt19937_64 rng(17);
  const int draws = 10000, bins = 13;
  std::vector<int> hist(bins, 0);
  for (int i = 0; i < draws; ++i) {
    const int s = draw_window_start(rng, 16, 4);
    REQUIRE(s >= 0);
    REQUIRE(s <= 12);
    ++hist[s];
  }
  // Pearson chi-square against uniform, 12 degrees of freedom; 32.91 is the
  // 0.999 quantile.
  const double expected = static_cast<double>(draws) / bins;
  double chi2 = 0;
  for (int h : hist) chi2 += (h - expected) * (h - expected) / expected;
  CHECK(chi2 < 32.91);
  for (int h : hist) CHECK(h > 0);
  CHECK(draw_window_start(rng, 4, 4) == 0);
  CHECK_THROWS_AS(draw_window_start(rng, 4, 8), std::invalid_argument);
}

TEST_CASE("degenerate mixing and proportional settings replay plain training") {
  const auto d = tiny_dataset();
  auto c = tiny_config();
  const auto plain_high = train_single(c, d, 4);
  const auto plain_low = train_single(c, d, 2);

  c.rho = 0.0;
  CHECK(same_weights(train_mixed(c, d).model, plain_high.model));
  c.varrho = 1.0;
  CHECK(same_weights(train_proportional(c, d).model, plain_high.model));
  c.varrho = 0.0;
  CHECK(same_weights(train_proportional(c, d).model, plain_low.model));

  c.rho = 1.0;
  CHECK_FALSE(same_weights(train_mixed(c, d).model, plain_high.model));
}

TEST_CASE("separated training stores one full base model per count") {
  const auto d = tiny_dataset();
  const auto c = tiny_config();
  const auto runs = train_separated(c, d);
  REQUIRE(runs.size() == 2);
  std::size_t stored = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    CHECK(runs[i].model.kind() == ModelKind::base);
    CHECK(runs[i].model.branches().max_frames() == c.frames[i]);
    stored += runs[i].model.count_parameters().total;
  }
  const auto single = runs[0].model.count_parameters().total;
  CHECK(single == base_parameter_count(runs[0].model.spec()));
  CHECK(stored == 2 * single);
  // A single count is plain training.
  auto one = c;
  one.frames = {4};
  CHECK(same_weights(train_separated(one, d)[0].model, train_single(one, d, 4).model));
}

TEST_CASE("finetune: zero epochs is the identity and other kinds are rejected") {
  const auto d = tiny_dataset();
  auto c = tiny_config();
  const auto source = train_single(c, d, 4).model;
  c.finetune_frames = 2;
  c.finetune_epochs = 0;
  const auto same = finetune(source, c, d);
  CHECK(same_weights(same.model, source));
  CHECK(same.model.branches().max_frames() == 2);
  CHECK(same.metrics.empty());

  c.finetune_epochs = 1;
  const auto moved = finetune(source, c, d);
  CHECK_FALSE(same_weights(moved.model, source));

  const auto ffn_model = Model<float>::ffn(backbone_for(d), FrameBranchSet(std::vector<int>{2, 4}), {}, 1);
  CHECK_THROWS_AS(finetune(ffn_model, c, d), std::invalid_argument);
}

TEST_CASE("ensemble: mean of member probabilities, order invariant") {
  const auto d = tiny_dataset();
  const auto spec = backbone_for(d);
  std::vector<Model<float>> members;
  for (int s = 0; s < 3; ++s) members.push_back(Model<float>::base(spec, FrameBranchSet(std::vector<int>{2 + 2 * s}), 10 + s));
  // Give the classifiers weight so members disagree.
  for (int s = 0; s < 3; ++s) {
    auto& w = members[s].arrays()[members[s].classifier_weight_index()].values;
    w = test::random_vec<float>(w.size(), 40 + s, 0.0, 0.5);
  }
  const std::vector<int> idx{0, 1, 2, 3};
  const std::vector<const Model<float>*> abc{&members[0], &members[1], &members[2]};
  const std::vector<const Model<float>*> cab{&members[2], &members[0], &members[1]};
  const auto p = ensemble_predict(abc, d, d.val, idx);
  const auto q = ensemble_predict(cab, d, d.val, idx);
  CHECK(p.data == q.data);

  Matrix<double> oracle(4, d.num_classes);
  for (const auto* m : abc) {
    const auto v = make_batch<float>(d, d.val, idx, m->branches().max_frames(), SampleVariant::eval, nullptr);
    const auto probs = softmax(m->predict_branch(v, 0));
    for (std::size_t i = 0; i < probs.data.size(); ++i) oracle.data[i] += probs.data[i] / 3.0;
  }
  CHECK(test::max_abs_diff(p.data, oracle.data) < 1e-6);
  for (int r = 0; r < p.rows; ++r) {
    double s = 0;
    for (float v : p.row(r)) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }
  CHECK_THROWS_AS(ensemble_predict(abc, std::vector<VideoTensor<float>>{}), std::invalid_argument);
}
