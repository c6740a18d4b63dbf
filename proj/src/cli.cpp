#include "ffn/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "ffn/baselines.hpp"
#include "ffn/checkpoint.hpp"
#include "ffn/diagnostics.hpp"

#ifndef FFN_CODE_VERSION
#define FFN_CODE_VERSION "unknown"
#endif

namespace ffn {

namespace fs = std::filesystem;

nlohmann::json to_json(const RunManifest& m) {
  return {{"command", m.command},     {"method", m.method},         {"seed", m.seed},
          {"code_version", m.code_version}, {"started_utc", m.started_utc}, {"output_dir", m.output_dir},
          {"dataset_digest", m.dataset_digest}, {"config", m.config}};
}

namespace {

void write_json(const nlohmann::json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

std::string joined_command(int argc, const char* const* argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) s += (i ? " " : "") + std::string(argv[i]);
  return s;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Checkpoints carry the config that produced them so eval and diagnose can
// find the same data without extra flags. The output directory is left out:
// identical runs written to different places produce identical files.
void save_model(const Model<float>& model, const TrainConfig& config, const fs::path& path) {
  Checkpoint c = model.to_checkpoint();
  c.metadata["train_config"] = config_to_json(config);
  c.metadata["train_config"].erase("out_dir");
  fs::create_directories(path.parent_path());
  save_checkpoint(c, path);
}

struct LoadedModel {
  fs::path path;
  Model<float> model;
  TrainConfig config;
};

LoadedModel load_model(const fs::path& path) {
  const Checkpoint c = load_checkpoint(path);
  LoadedModel m{path, Model<float>::from_checkpoint(c), {}};
  if (c.metadata.contains("train_config")) m.config = config_from_json(c.metadata["train_config"]);
  // The run directory holding the dataset cache: the checkpoint's own
  // directory, or its parent for per-count st models.
  const fs::path dir = path.parent_path();
  m.config.out_dir = (!fs::exists(dir / "dataset.ffnd") && fs::exists(dir.parent_path() / "dataset.ffnd"))
                         ? dir.parent_path().string()
                         : dir.string();
  return m;
}

std::string label_of(const LoadedModel& m) {
  const auto& b = m.model.branches();
  std::string s = m.model.kind() == ModelKind::ffn ? "FFN(" : "base@";
  for (int i = 0; i < b.size(); ++i) s += (i ? "," : "") + std::to_string(b.frames(i));
  if (m.model.kind() == ModelKind::ffn) s += ")";
  return s + " " + m.path.parent_path().filename().string();
}

// Shared options of every subcommand that resolves a TrainConfig.
struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda, rho, varrho;
  std::optional<int> epochs;
  std::string frames;
  bool regenerate = false;
};

void add_config_flags(CLI::App* app, ConfigFlags& f) {
  app->add_option("--config", f.config_path, "JSON config file")->check(CLI::ExistingFile);
  // One value per occurrence, so `--set k=v METHOD` leaves METHOD positional.
  app->add_option("--set", f.overrides, "override a config key: key=value (repeatable)")->allow_extra_args(false);
  app->add_option("--out", f.out, "output directory");
  app->add_option("--seed", f.seed, "run seed");
  app->add_option("--lambda", f.lambda, "distillation weight");
  app->add_option("--rho", f.rho, "mixed sampling: blend probability");
  app->add_option("--varrho", f.varrho, "proportional sampling: high-frame probability");
  app->add_option("--epochs", f.epochs, "training epochs");
  app->add_option("--frames", f.frames, "frame counts, e.g. 4,8,16");
  app->add_flag("--regenerate", f.regenerate, "rebuild the synthetic dataset cache");
}

TrainConfig resolve_config(TrainConfig base, const ConfigFlags& f) {
  TrainConfig c = f.config_path.empty() ? std::move(base) : config_from_json(
      [&] {
        std::ifstream in(f.config_path);
        return nlohmann::json::parse(in);
      }(),
      std::move(base));
  c = apply_overrides(std::move(c), f.overrides);
  if (f.seed) c.seed = *f.seed;
  if (f.lambda) c.lambda = *f.lambda;
  if (f.rho) c.rho = *f.rho;
  if (f.varrho) c.varrho = *f.varrho;
  if (f.epochs) c.epochs = *f.epochs;
  if (!f.frames.empty()) c.frames = parse_frame_list(f.frames);
  return c;
}

// ---------------------------------------------------------------- train

int cmd_train(const std::string& method_arg, const ConfigFlags& flags, const std::string& source, int argc,
              const char* const* argv, std::ostream& out) {
  TrainConfig config = resolve_config({}, flags);
  if (!method_arg.empty()) config.method = method_arg;
  if (!source.empty()) config.source_checkpoint = source;
  bool out_from_file = false;
  if (!flags.config_path.empty()) {
    std::ifstream in(flags.config_path);
    out_from_file = nlohmann::json::parse(in).contains("out_dir");
  }
  for (const auto& a : flags.overrides) out_from_file = out_from_file || a.rfind("out_dir=", 0) == 0;
  if (!flags.out.empty()) {
    config.out_dir = flags.out;
  } else if (!out_from_file) {
    config.out_dir = default_output_dir(config.method, config.seed).string();
  }
  config.validate();
  const fs::path dir = config.out_dir;
  fs::create_directories(dir);

  const auto t0 = std::chrono::steady_clock::now();
  const Dataset data = dataset_for(config, flags.regenerate);
  const double data_seconds = seconds_since(t0);

  RunManifest manifest{joined_command(argc, argv), config.method, config.seed, code_version(), utc_now(),
                       fs::absolute(dir).string(), dataset_digest(data), config_to_json(config)};
  write_manifest(manifest, dir);
  write_json(config_to_json(config), dir / "config.json");

  auto progress = [&out](const std::string& line) { out << line << std::endl; };
  const auto t1 = std::chrono::steady_clock::now();
  std::vector<std::pair<fs::path, TrainResult>> results;
  if (config.method == "ffn") {
    results.emplace_back(dir, train_ffn(config, data, progress));
  } else if (config.method == "st") {
    for (int f : config.frames) {
      out << "training ST at " << f << " frames" << std::endl;
      results.emplace_back(dir / ("st_" + std::to_string(f) + "f"), train_single(config, data, f, progress));
    }
  } else if (config.method == "mixed") {
    results.emplace_back(dir, train_mixed(config, data, progress));
  } else if (config.method == "proportional") {
    results.emplace_back(dir, train_proportional(config, data, progress));
  } else if (config.method == "finetune") {
    if (config.source_checkpoint.empty()) throw std::invalid_argument("finetune needs --source or source_checkpoint");
    const auto src = load_model(config.source_checkpoint);
    results.emplace_back(dir, finetune(src.model, config, data, progress));
  } else {
    throw std::invalid_argument("unknown method: " + config.method);
  }
  const double train_seconds = seconds_since(t1);

  for (const auto& [path, r] : results) {
    save_model(r.model, config, path / "model.ckpt");
    write_metrics_csv(r.metrics, path / "metrics.csv");
    out << "wrote " << (path / "model.ckpt").string() << " (" << checkpoint_digest(path / "model.ckpt") << ")\n";
  }
  write_json({{"data_seconds", data_seconds}, {"train_seconds", train_seconds}}, dir / "timings.json");
  return kExitOk;
}

// ---------------------------------------------------------------- eval

int cmd_eval(const std::string& ckpt, const ConfigFlags& flags, std::ostream& out) {
  const auto m = load_model(ckpt);
  TrainConfig config = resolve_config(m.config, flags);
  const std::vector<int> frames = flags.frames.empty() ? config.eval_frames : parse_frame_list(flags.frames);
  const Dataset data = dataset_for(config, flags.regenerate);
  std::vector<MetricsRow> rows;
  out << label_of(m) << "\n";
  for (int f : frames) {
    const auto r = evaluate(m.model, data, data.val, f);
    rows.push_back({0, "val", m.model.branches().frames(r.branch), r.loss_ce, 0.0, r.loss_ce, r.top1});
    out << std::fixed << std::setprecision(2) << "  " << f << "F -> branch " << m.model.branches().frames(r.branch)
        << "F  top1 " << r.top1 << "%  ce " << std::setprecision(4) << r.loss_ce << "  ~"
        << std::setprecision(3) << estimate_gflops(m.model.spec(), f, m.model.has_alteration()) << " GFLOPs/clip\n";
  }
  if (!flags.out.empty()) {
    std::ofstream csv = [&] {
      fs::create_directories(flags.out);
      return std::ofstream(fs::path(flags.out) / "eval.csv", std::ios::trunc);
    }();
    csv << "eval_frames,branch_frames,top1,loss_ce\n";
    for (std::size_t i = 0; i < frames.size(); ++i)
      csv << frames[i] << "," << rows[i].branch_frames << "," << rows[i].top1 << "," << rows[i].loss_ce << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- diagnose

int cmd_diagnose(const std::string& kind, const std::vector<std::string>& ckpts, const ConfigFlags& flags, int branch,
                 bool plot, std::ostream& out) {
  if (ckpts.empty()) throw CLI::ValidationError("--checkpoint", "at least one checkpoint is required");
  std::vector<LoadedModel> models;
  for (const auto& p : ckpts) models.push_back(load_model(p));
  const TrainConfig config = resolve_config(models.front().config, flags);
  const fs::path dir = flags.out.empty() ? fs::path(ckpts.front()).parent_path() / "diagnostics" : fs::path(flags.out);
  fs::create_directories(dir);

  if (kind == "stats") {
    std::vector<NormStats> stats;
    std::vector<PlotSeries> series;
    for (const auto& m : models) {
      stats.push_back(extract_norm_stats(m.model, branch, label_of(m)));
      PlotSeries s{stats.back().source, {}, {}};
      for (std::size_t l = 0; l < stats.back().layers.size(); ++l) {
        double acc = 0;
        for (float v : stats.back().mu[l]) acc += v;
        s.x.push_back(static_cast<double>(l));
        s.y.push_back(acc / stats.back().mu[l].size());
      }
      series.push_back(std::move(s));
    }
    write_normstats_csv(stats, dir / "normstats.csv");
    if (plot) write_line_plot(series, "channel-mean running mean per layer", "layer", "mean mu", dir / "normstats.png");
    out << "wrote " << (dir / "normstats.csv").string() << "\n";
    return kExitOk;
  }
  if (kind == "compare") {
    if (models.size() != 2) throw CLI::ValidationError("--checkpoint", "compare takes exactly two checkpoints");
    const auto d = compare_stats(extract_norm_stats(models[0].model, branch), extract_norm_stats(models[1].model, branch));
    write_compare_csv(d, dir / "compare.csv");
    out << std::setprecision(6) << "aggregate |d mu| " << d.aggregate_mu << "  |d var| " << d.aggregate_var
        << "  |d gamma| " << d.aggregate_gamma << "  |d beta| " << d.aggregate_beta << "\n";
    return kExitOk;
  }

  const Dataset data = dataset_for(config, flags.regenerate);
  const std::vector<int> frames = flags.frames.empty() ? config.eval_frames : parse_frame_list(flags.frames);

  if (kind == "sweep" || kind == "nearby") {
    std::vector<DeviationReport> reports;
    std::vector<NearbyRow> nearby;
    std::vector<PlotSeries> series;
    for (const auto& m : models) {
      reports.push_back(deviation_sweep(m.model, data, frames));
      PlotSeries s{label_of(m), {}, {}};
      out << label_of(m) << "\n";
      for (const auto& r : reports.back().rows) {
        s.x.push_back(r.eval_frames);
        s.y.push_back(r.top1);
        out << std::fixed << std::setprecision(2) << "  eval " << r.eval_frames << "F (trained " << r.train_frames
            << "F" << (r.outbound ? ", outbound" : "") << ")  top1 " << r.top1 << "  drop " << r.drop << "\n";
      }
      const auto rows = nearby_alleviation_report(reports.back());
      nearby.insert(nearby.end(), rows.begin(), rows.end());
      series.push_back(std::move(s));
    }
    if (kind == "sweep") {
      write_deviation_csv(reports, dir / "deviation.csv");
      if (plot) write_line_plot(series, "top-1 vs evaluation frames", "frames", "top-1 (%)", dir / "deviation.png");
      out << "wrote " << (dir / "deviation.csv").string() << "\n";
    } else {
      write_nearby_csv(nearby, dir / "nearby.csv");
      int held = 0;
      for (const auto& r : nearby) held += r.holds;
      out << held << "/" << nearby.size() << " near/far pairs have the smaller drop nearer the trained count\n";
    }
    return kExitOk;
  }
  if (kind == "shiftsim") {
    std::ofstream csv(dir / "shiftsim.csv", std::ios::trunc);
    csv << "checkpoint,eval_frames,mode,top1\n";
    for (const auto& m : models)
      for (int f : frames)
        for (ShiftMode mode : {ShiftMode::cross, ShiftMode::native}) {
          const double top1 = simulate_shifted_norm(m.model, data, f, mode);
          const char* name = mode == ShiftMode::cross ? "cross" : "native";
          csv << m.path.string() << "," << f << "," << name << "," << top1 << "\n";
          out << std::fixed << std::setprecision(2) << label_of(m) << "  " << f << "F " << name << " top1 " << top1
              << "\n";
        }
    return kExitOk;
  }
  throw CLI::ValidationError("diagnose", "unknown analysis: " + kind);
}

}  // namespace

void write_manifest(const RunManifest& m, const fs::path& dir) { write_json(to_json(m), dir / "manifest.json"); }

std::string code_version() { return FFN_CODE_VERSION; }

fs::path default_output_dir(const std::string& method, std::uint64_t seed) {
  const char* root = std::getenv("FFN_OUTPUT_ROOT");
  return fs::path(root && *root ? root : "runs") / (method + "_seed" + std::to_string(seed));
}

std::vector<int> parse_frame_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || v < 1) throw std::invalid_argument("bad frame list: " + text);
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("empty frame list");
  return out;
}

TrainConfig apply_overrides(TrainConfig config, const std::vector<std::string>& assignments) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override must be key=value: " + a);
    const std::string key = a.substr(0, eq), value = a.substr(eq + 1);
    auto parsed = nlohmann::json::parse(value, nullptr, false);
    j[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
  }
  return config_from_json(j, std::move(config));
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Frame-flexible video classification: training, evaluation and diagnostics", "ffn"};
  app.require_subcommand(1);

  ConfigFlags train_flags, eval_flags, diag_flags;
  std::string method_pos, method_opt, source;
  auto* train = app.add_subcommand("train", "train a model (ffn, st, mixed, proportional, finetune)");
  train->add_option("METHOD", method_pos, "training method")
      ->check(CLI::IsMember({"ffn", "st", "mixed", "proportional", "finetune"}));
  train->add_option("--method", method_opt, "training method (alternative to the positional form)")
      ->check(CLI::IsMember({"ffn", "st", "mixed", "proportional", "finetune"}));
  train->add_option("--source", source, "base checkpoint to fine-tune");
  add_config_flags(train, train_flags);

  std::string eval_ckpt;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint at one or more frame counts");
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  add_config_flags(eval, eval_flags);

  std::string kind;
  std::vector<std::string> ckpts;
  int branch = 0;
  bool plot = false;
  auto* diag = app.add_subcommand("diagnose", "frame-deviation analyses");
  diag->add_option("ANALYSIS", kind, "sweep | stats | compare | shiftsim | nearby")
      ->required()
      ->check(CLI::IsMember({"sweep", "stats", "compare", "shiftsim", "nearby"}));
  diag->add_option("--checkpoint", ckpts, "checkpoint file (repeatable)")->allow_extra_args(false);
  diag->add_option("--branch", branch, "branch whose normalization set is inspected");
  diag->add_flag("--plot", plot, "also write PNG plots");
  add_config_flags(diag, diag_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) {
      if (!method_pos.empty() && !method_opt.empty() && method_pos != method_opt) {
        throw std::invalid_argument("conflicting methods: " + method_pos + " and " + method_opt);
      }
      return cmd_train(method_pos.empty() ? method_opt : method_pos, train_flags, source, argc, argv, out);
    }
    if (*eval) return cmd_eval(eval_ckpt, eval_flags, out);
    return cmd_diagnose(kind, ckpts, diag_flags, branch, plot, out);
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TrainingFault& e) {
    err << "error: " << e.what() << "\n";
    return kExitTraining;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::out_of_range& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::runtime_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace ffn
