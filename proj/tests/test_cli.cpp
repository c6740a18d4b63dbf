#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ffn/checkpoint.hpp"
#include "ffn/cli.hpp"

using namespace ffn;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "ffn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Four classes, two clips each, so a full CLI round trip takes seconds.
std::vector<std::string> tiny_flags(const fs::path& out) {
  return {"--frames", "2,4", "--epochs", "1", "--set", "num_classes=4", "--set", "samples_per_class=2",
          "--set", "eval_frames=[2,4]", "--set", "batch_size=4", "--out", out.string()};
}

}  // namespace

TEST_CASE("frame lists and overrides") {
  CHECK(parse_frame_list("4,8,16") == std::vector<int>{4, 8, 16});
  CHECK(parse_frame_list("12") == std::vector<int>{12});
  CHECK_THROWS_AS(parse_frame_list(""), std::invalid_argument);
  CHECK_THROWS_AS(parse_frame_list("4,x"), std::invalid_argument);
  CHECK_THROWS_AS(parse_frame_list("4,,8"), std::invalid_argument);
  CHECK_THROWS_AS(parse_frame_list("0"), std::invalid_argument);

  const auto c = apply_overrides({}, {"lambda=0.5", "frames=[4,16]", "out_dir=some/where", "distill=false"});
  CHECK(c.lambda == 0.5);
  CHECK(c.frames == std::vector<int>{4, 16});
  CHECK(c.out_dir == "some/where");
  CHECK_FALSE(c.distill);
  CHECK_THROWS_AS(apply_overrides({}, {"novalue"}), std::invalid_argument);
  CHECK_THROWS_AS(apply_overrides({}, {"nosuchkey=1"}), std::invalid_argument);
}

TEST_CASE("default output directory honours FFN_OUTPUT_ROOT") {
  ::setenv("FFN_OUTPUT_ROOT", "/tmp/ffn_root", 1);
  CHECK(default_output_dir("ffn", 3) == fs::path("/tmp/ffn_root/ffn_seed3"));
  ::unsetenv("FFN_OUTPUT_ROOT");
  CHECK(default_output_dir("st", 0) == fs::path("runs/st_seed0"));
}

TEST_CASE("usage and data errors map to exit codes") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  CHECK(cli({"train", "magic"}).code == kExitUsage);
  CHECK(cli({"train", "ffn", "--method", "st"}).code == kExitUsage);
  CHECK(cli({"train", "ffn", "--frames", "8,4"}).code == kExitUsage);
  CHECK(cli({"eval"}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);
  const auto missing = cli({"eval", "--checkpoint", "/nonexistent/model.ckpt"});
  CHECK(missing.code == kExitData);
  CHECK(missing.err.find("/nonexistent/model.ckpt") != std::string::npos);
  CHECK(cli({"diagnose", "sweep"}).code == kExitUsage);
  // An override does not swallow the positional that follows it.
  CHECK(cli({"train", "--set", "lr=-1", "ffn"}).code == kExitUsage);
  CHECK(cli({"train", "--set", "lr=-1", "ffn"}).err.find("override") == std::string::npos);
}

TEST_CASE("train, eval and diagnose round trip") {
  const fs::path root = fs::temp_directory_path() / "ffn_test_cli";
  fs::remove_all(root);

  auto args = tiny_flags(root / "ffn");
  args.insert(args.begin(), {"train", "ffn"});
  const auto r = cli(args);
  INFO(r.err);
  REQUIRE(r.code == kExitOk);
  for (const char* f : {"manifest.json", "config.json", "timings.json", "metrics.csv", "model.ckpt", "dataset.ffnd"})
    CHECK(fs::exists(root / "ffn" / f));
  const auto manifest = nlohmann::json::parse(slurp(root / "ffn" / "manifest.json"));
  CHECK(manifest["method"] == "ffn");
  CHECK(manifest["config"]["frames"] == nlohmann::json::array({2, 4}));
  CHECK(manifest.contains("code_version"));
  CHECK(slurp(root / "ffn" / "metrics.csv").rfind("epoch,split,branch_frames,loss_ce,loss_kl,loss_total,top1\n", 0) == 0);

  auto st_args = tiny_flags(root / "st");
  st_args.insert(st_args.begin(), {"train", "--method", "st"});
  REQUIRE(cli(st_args).code == kExitOk);
  CHECK(fs::exists(root / "st" / "st_2f" / "model.ckpt"));
  CHECK(fs::exists(root / "st" / "st_4f" / "model.ckpt"));

  auto ft_args = tiny_flags(root / "ft");
  ft_args.insert(ft_args.begin(), {"train", "finetune", "--source", (root / "st" / "st_4f" / "model.ckpt").string()});
  ft_args.insert(ft_args.end(), {"--set", "finetune_frames=2"});
  REQUIRE(cli(ft_args).code == kExitOk);

  const auto ev = cli({"eval", "--checkpoint", (root / "ffn" / "model.ckpt").string(), "--frames", "2,3,4",
                       "--out", (root / "eval").string()});
  REQUIRE(ev.code == kExitOk);
  CHECK(slurp(root / "eval" / "eval.csv").rfind("eval_frames,branch_frames,top1,loss_ce\n2,2,", 0) == 0);

  const std::string st2 = (root / "st" / "st_2f" / "model.ckpt").string();
  const std::string st4 = (root / "st" / "st_4f" / "model.ckpt").string();
  const std::string diag = (root / "diag").string();
  CHECK(cli({"diagnose", "sweep", "--checkpoint", st4, "--frames", "2,3,4", "--out", diag, "--plot"}).code == kExitOk);
  CHECK(slurp(root / "diag" / "deviation.csv").rfind("train_frames,eval_frames,top1,drop\n4,2,", 0) == 0);
  CHECK(fs::exists(root / "diag" / "deviation.png"));
  CHECK(cli({"diagnose", "stats", "--checkpoint", st2, "--checkpoint", st4, "--out", diag, "--plot"}).code == kExitOk);
  CHECK(fs::exists(root / "diag" / "normstats.csv"));
  CHECK(cli({"diagnose", "compare", "--checkpoint", st2, "--checkpoint", st4, "--out", diag}).code == kExitOk);
  CHECK(cli({"diagnose", "compare", "--checkpoint", st2, "--out", diag}).code == kExitUsage);
  CHECK(cli({"diagnose", "shiftsim", "--checkpoint", st4, "--frames", "2", "--out", diag}).code == kExitOk);
  CHECK(cli({"diagnose", "nearby", "--checkpoint", st4, "--frames", "1,2,3,4", "--out", diag}).code == kExitOk);
  CHECK(fs::exists(root / "diag" / "nearby.csv"));
}

TEST_CASE("identical runs in different directories write identical checkpoints") {
  const fs::path root = fs::temp_directory_path() / "ffn_test_cli_repeat";
  fs::remove_all(root);
  for (const char* name : {"a", "b"}) {
    auto args = tiny_flags(root / name);
    args.insert(args.begin(), {"train", "ffn"});
    REQUIRE(cli(args).code == kExitOk);
  }
  CHECK(checkpoint_digest(root / "a" / "model.ckpt") == checkpoint_digest(root / "b" / "model.ckpt"));
  CHECK(slurp(root / "a" / "metrics.csv") == slurp(root / "b" / "metrics.csv"));
  // Evaluation still finds the cached dataset next to the checkpoint.
  const auto t0 = fs::last_write_time(root / "b" / "dataset.ffnd");
  REQUIRE(cli({"eval", "--checkpoint", (root / "b" / "model.ckpt").string()}).code == kExitOk);
  CHECK(fs::last_write_time(root / "b" / "dataset.ffnd") == t0);
  CHECK_FALSE(fs::exists("runs/default"));
}
