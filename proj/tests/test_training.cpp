#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "ffn/checkpoint.hpp"
#include "ffn/training.hpp"
#include "helpers.hpp"

using namespace ffn;
using test::micro_spec;
using test::random_video;

namespace {

struct Fixture {
  BackboneSpec spec = micro_spec(2, 3);
  FrameBranchSet branches{std::vector<int>{2, 4}};
  std::vector<int> labels{0, 2, 1};

  template <typename T>
  std::vector<VideoTensor<T>> views(std::uint64_t seed) const {
    return {random_video<T>(3, 2, spec, seed), random_video<T>(3, 4, spec, seed + 1)};
  }
};

// Objective with the teacher distribution frozen at `teacher_probs`.
double frozen_objective(Model<double>& m, const std::vector<VideoTensor<double>>& v, std::span<const int> labels,
                        const Matrix<double>& teacher_probs, double lambda) {
  const int teacher = m.num_branches() - 1;
  double j = cross_entropy(m.forward_branch(v[teacher], teacher, NormMode::batch_stats), labels).value;
  for (int s = 0; s < teacher; ++s) {
    j += lambda * distillation_kl(teacher_probs, m.forward_branch(v[s], s, NormMode::batch_stats)).value;
  }
  return j;
}

void randomize(Model<double>& m, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  for (auto& a : m.arrays())
    if (a.name.ends_with(".phi") || a.name.ends_with(".gamma") || a.name.ends_with(".beta"))
      for (auto& v : a.values) v += d(rng);
}

template <typename T>
std::size_t arrays_index(const Model<T>& m, const std::string& name) {
  for (std::size_t i = 0; i < m.arrays().size(); ++i)
    if (m.arrays()[i].name == name) return i;
  throw std::out_of_range(name);
}

Dataset tiny_dataset(int samples_per_class = 4) {
  SyntheticConfig c;
  c.num_classes = 4;
  c.samples_per_class = samples_per_class;
  c.seed = 21;
  return generate_synthetic_dataset(c);
}

}  // namespace

TEST_CASE("scheduled_lr: linear warmup then cosine to zero") {
  CHECK(scheduled_lr(0.1, 0, 100, 10) == doctest::Approx(0.01));
  CHECK(scheduled_lr(0.1, 9, 100, 10) == doctest::Approx(0.1));
  CHECK(scheduled_lr(0.1, 10, 100, 10) == doctest::Approx(0.1));
  CHECK(scheduled_lr(0.1, 55, 100, 10) == doctest::Approx(0.05));
  CHECK(scheduled_lr(0.1, 100, 100, 10) == doctest::Approx(0.0));
  CHECK(scheduled_lr(0.1, 0, 100, 0) == doctest::Approx(0.1));
}

TEST_CASE("SGD: momentum recursion and decay only on weights") {
  auto m = Model<double>::ffn(micro_spec(1, 3), FrameBranchSet(std::vector<int>{2, 4}), {}, 1);
  SgdOptimizer<double> opt(m, 0.9, 0.1);
  auto g = m.make_gradients();
  const int w = m.weight_index(0), gamma = m.gamma_index(0, 0);
  const double w0 = m.arrays()[w].values[0], gm0 = m.arrays()[gamma].values[0];
  g.values[w][0] = 1.0;
  g.values[gamma][0] = 1.0;
  opt.step(m, g, 0.5);
  // v1 = g + wd * w0; w1 = w0 - lr * v1.
  const double v1 = 1.0 + 0.1 * w0;
  const double w1 = w0 - 0.5 * v1;
  CHECK(m.arrays()[w].values[0] == doctest::Approx(w1));
  CHECK(m.arrays()[gamma].values[0] == doctest::Approx(gm0 - 0.5));
  opt.step(m, g, 0.5);
  const double v2 = 0.9 * v1 + 1.0 + 0.1 * w1;
  CHECK(m.arrays()[w].values[0] == doctest::Approx(w1 - 0.5 * v2));
  CHECK(m.arrays()[gamma].values[0] == doctest::Approx(gm0 - 0.5 - 0.5 * 1.9));
}

TEST_CASE("full objective gradient matches finite differences with the teacher frozen") {
  Fixture f;
  auto m = Model<double>::ffn(f.spec, f.branches, {}, 3);
  randomize(m, 4, 0.2);
  const auto v = f.views<double>(10);
  const double lambda = 0.7;
  auto grads = m.make_gradients();
  grads.zero();
  const StepOptions opts{lambda, true, NormMode::batch_stats};
  const auto bundle = accumulate_gradients(m, v, std::span<const int>(f.labels), opts, grads);
  const auto teacher_probs = softmax(m.forward_branch(v[1], 1, NormMode::batch_stats));
  CHECK(bundle.total == doctest::Approx(frozen_objective(m, v, f.labels, teacher_probs, lambda)).epsilon(1e-10));

  const double h = 1e-6;
  for (const std::string name : {"block0.shared.W", "block1.branch0.phi", "block1.branch1.phi", "block0.branch0.gamma",
                                 "block1.branch1.beta", "classifier.W"}) {
    auto& arr = m.array(name);
    const int idx = static_cast<int>(arrays_index(m, name));
    double max_err = 0, max_ref = 0;
    for (std::size_t i = 0; i < arr.values.size(); i += std::max<std::size_t>(1, arr.values.size() / 7)) {
      const double orig = arr.values[i];
      arr.values[i] = orig + h;
      const double jp = frozen_objective(m, v, f.labels, teacher_probs, lambda);
      arr.values[i] = orig - h;
      const double jm = frozen_objective(m, v, f.labels, teacher_probs, lambda);
      arr.values[i] = orig;
      const double fd = (jp - jm) / (2 * h);
      max_err = std::max(max_err, std::abs(fd - grads.values[idx][i]));
      max_ref = std::max(max_ref, std::abs(fd));
    }
    INFO(name);
    CHECK(max_err <= 1e-3 * std::max(max_ref, 1e-3));
  }
}

TEST_CASE("teacher is constant inside the distillation term") {
  Fixture f;
  auto m = Model<double>::ffn(f.spec, f.branches, {}, 5);
  const auto v = f.views<double>(20);
  const StepOptions opts{1.0, true, NormMode::batch_stats};
  auto g = m.make_gradients();
  const auto before = accumulate_gradients(m, v, std::span<const int>(f.labels), opts, g);
  // Student-only parameter: moves the KL, never the teacher cross-entropy.
  for (auto& x : m.array("block0.branch0.phi").values) x += 0.05;
  auto g2 = m.make_gradients();
  const auto after = accumulate_gradients(m, v, std::span<const int>(f.labels), opts, g2);
  CHECK(after.ce == before.ce);
  CHECK(after.kl != before.kl);
  // No gradient reaches teacher-private parameters from the KL term: with
  // lambda scaled the teacher-branch gradients stay identical.
  auto g3 = m.make_gradients();
  accumulate_gradients(m, v, std::span<const int>(f.labels), StepOptions{5.0, true, NormMode::batch_stats}, g3);
  for (const std::string name : {"block0.branch1.phi", "block1.branch1.gamma", "block1.branch1.beta"}) {
    const int idx = static_cast<int>(arrays_index(m, name));
    INFO(name);
    CHECK(test::max_abs_diff(g2.values[idx], g3.values[idx]) == 0.0);
  }
}

TEST_CASE("lambda = 0 leaves student parameters untouched") {
  Fixture f;
  auto m = Model<float>::ffn(f.spec, f.branches, {}, 6);
  const auto before = m.arrays();
  SgdOptimizer<float> opt(m, 0.9, 1e-4);
  const auto v = f.views<float>(30);
  train_step(m, v, std::span<const int>(f.labels), StepOptions{0.0, true, NormMode::train}, opt, 0.1, 0);
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto& a = m.arrays()[i];
    if (!a.trainable) continue;
    INFO(a.name);
    if (a.branch == 0) {
      CHECK(a.values == before[i].values);
    } else {
      CHECK(a.values != before[i].values);
    }
  }
}

TEST_CASE("a small step descends the objective") {
  Fixture f;
  auto m = Model<float>::ffn(f.spec, f.branches, {}, 7);
  SgdOptimizer<float> opt(m, 0.0, 0.0);
  const auto v = f.views<float>(40);
  const StepOptions opts{1.0, true, NormMode::batch_stats};
  const auto first = train_step(m, v, std::span<const int>(f.labels), opts, opt, 1e-3, 0);
  auto g = m.make_gradients();
  const auto second = accumulate_gradients(m, v, std::span<const int>(f.labels), opts, g);
  CHECK(second.total < first.total);
}

TEST_CASE("training updates each branch's running statistics separately") {
  Fixture f;
  auto m = Model<float>::ffn(f.spec, f.branches, {}, 8);
  SgdOptimizer<float> opt(m, 0.9, 0.0);
  for (int s = 0; s < 3; ++s) {
    const auto v = f.views<float>(50 + s);
    train_step(m, v, std::span<const int>(f.labels), StepOptions{}, opt, 0.01, s);
  }
  for (int block = 0; block < 2; ++block) {
    CHECK(m.arrays()[m.mean_index(block, 0)].values != m.arrays()[m.mean_index(block, 1)].values);
    CHECK(m.arrays()[m.var_index(block, 0)].values != m.arrays()[m.var_index(block, 1)].values);
  }
}

TEST_CASE("without distillation every branch takes cross-entropy") {
  Fixture f;
  auto m = Model<double>::ffn(f.spec, f.branches, {}, 9);
  const auto v = f.views<double>(60);
  auto g = m.make_gradients();
  std::vector<BranchStepStats> stats;
  const auto b = accumulate_gradients(m, v, std::span<const int>(f.labels), StepOptions{1.0, false, NormMode::batch_stats},
                                      g, &stats);
  CHECK(b.kl == 0.0);
  CHECK(b.lambda == 0.0);
  CHECK(b.ce == doctest::Approx(stats[0].ce + stats[1].ce));
  CHECK(b.total == doctest::Approx(b.ce));
}

TEST_CASE("non-finite loss raises a training fault and keeps parameters") {
  Fixture f;
  auto m = Model<float>::ffn(f.spec, f.branches, {}, 10);
  SgdOptimizer<float> opt(m, 0.9, 0.0);
  const auto v = f.views<float>(70);
  m.array("classifier.b").values[1] = std::numeric_limits<float>::infinity();
  const auto before = m.arrays();
  try {
    train_step(m, v, std::span<const int>(f.labels), StepOptions{}, opt, 0.1, 42);
    FAIL("expected a training fault");
  } catch (const TrainingFault& e) {
    CHECK(e.step() == 42);
    CHECK(std::string(e.what()).find("step 42") != std::string::npos);
  }
  for (std::size_t i = 0; i < before.size(); ++i)
    if (before[i].trainable) CHECK(m.arrays()[i].values == before[i].values);
}

TEST_CASE("config: JSON round trip, unknown keys and validation") {
  TrainConfig c;
  c.method = "mixed";
  c.frames = {4, 16};
  c.rho = 0.25;
  c.seed = 12345678901234ull;
  const auto back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"lamda", 1.0}}), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"epochs", "many"}}), std::invalid_argument);

  auto bad = TrainConfig{};
  bad.frames = {8, 4};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = TrainConfig{};
  bad.rho = 1.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = TrainConfig{};
  bad.method = "magic";
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  TrainConfig ft;
  ft.epochs = 8;
  CHECK(ft.resolved_finetune_epochs() == 2);
  ft.epochs = 1;
  CHECK(ft.resolved_finetune_epochs() == 1);
  ft.finetune_epochs = 0;
  CHECK(ft.resolved_finetune_epochs() == 0);
}

TEST_CASE("metrics CSV format") {
  const std::vector<MetricsRow> rows{{1, "train", 4, 1.5, 0.25, 1.75, 37.5}, {1, "val", 16, 0.1234567, 0, 0.1234567, 90}};
  CHECK(format_metrics(rows) ==
        "epoch,split,branch_frames,loss_ce,loss_kl,loss_total,top1\n"
        "1,train,4,1.500000,0.250000,1.750000,37.5000\n"
        "1,val,16,0.123457,0.000000,0.123457,90.0000\n");
}

TEST_CASE("evaluate rejects frame counts longer than the clips") {
  const auto d = tiny_dataset();
  TrainConfig c;
  c.num_classes = 4;
  const auto m = Model<float>::base(backbone_for(d), FrameBranchSet(std::vector<int>{4}), 1);
  CHECK_THROWS_AS(evaluate(m, d, d.val, 33), std::invalid_argument);
  const auto r = evaluate(m, d, d.val, 4);
  CHECK(r.top1 >= 0.0);
  CHECK(r.top1 <= 100.0);
}

TEST_CASE("train_ffn is deterministic for a fixed seed and writes per-branch metrics") {
  const auto d = tiny_dataset();
  TrainConfig c;
  c.num_classes = 4;
  c.frames = {2, 4};
  c.eval_frames = {2, 4};
  c.epochs = 1;
  c.batch_size = 4;
  c.seed = 3;
  const auto a = train_ffn(c, d);
  const auto b = train_ffn(c, d);
  for (std::size_t i = 0; i < a.model.arrays().size(); ++i) CHECK(a.model.arrays()[i].values == b.model.arrays()[i].values);
  int train_rows = 0, val_rows = 0;
  for (const auto& r : a.metrics) (r.split == "train" ? train_rows : val_rows) += 1;
  CHECK(train_rows == 2);
  CHECK(val_rows == 2);
  c.seed = 4;
  const auto other = train_ffn(c, d);
  CHECK(other.model.arrays()[other.model.weight_index(0)].values != a.model.arrays()[a.model.weight_index(0)].values);
}
