#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pderank/dataset.hpp"
#include "pderank/errors.hpp"
#include "pderank/metrics.hpp"
#include "pderank/model.hpp"
#include "pderank/trainer.hpp"
#include "pderank/verify.hpp"

#ifndef PDERANK_VERSION
#define PDERANK_VERSION "unknown"
#endif

namespace pderank::cli {

namespace fs = std::filesystem;

namespace {

constexpr int kUsageError = 2;

std::string fmt(double v) {
  if (std::isinf(v)) return "inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t fnv1a_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize k = 0; k < in.gcount(); ++k) {
      h ^= static_cast<unsigned char>(buf[k]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

double parse_clip(const std::string& s) {
  if (s == "inf" || s == "none") return kNoClip;
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size() || !(v > 0.0)) throw std::invalid_argument("--clip must be a positive number or 'inf'");
  return v;
}

struct DataFiles {
  fs::path train;
  std::optional<fs::path> test;
};

DataFiles locate(const fs::path& dir) {
  DataFiles files{dir / "train.txt", std::nullopt};
  if (!fs::exists(files.train)) throw std::runtime_error("missing " + files.train.string());
  if (fs::exists(dir / "test.txt")) files.test = dir / "test.txt";
  return files;
}

struct TrainArgs {
  std::string data;
  std::string out;
  std::int64_t n_users = 0;
  std::int64_t n_items = 0;
  std::string risk = "pde";
  std::string model = "mf";
  std::string optimizer = "adam";
  std::string clip = "5";
  double holdout_fraction = 0.0;
  bool no_wall_clock = false;
  TrainConfig cfg;
};

void write_manifest(const TrainArgs& a, const DataFiles& files, std::int64_t n_users, std::int64_t n_items,
                    const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const TrainConfig& c = a.cfg;
  out << "# pderank run manifest; replay with: pderank train --config <this file>\n";
  out << "# version = " << PDERANK_VERSION << '\n';
  out << "# train.txt fnv1a64 = " << hex(fnv1a_file(files.train)) << '\n';
  if (files.test) out << "# test.txt fnv1a64 = " << hex(fnv1a_file(*files.test)) << '\n';
  out << "data = \"" << a.data << "\"\n";
  out << "out = \"" << a.out << "\"\n";
  out << "n-users = " << n_users << '\n';
  out << "n-items = " << n_items << '\n';
  out << "risk = \"" << to_string(c.risk) << "\"\n";
  out << "model = \"" << to_string(c.backbone) << "\"\n";
  out << "dim = " << c.dim << '\n';
  out << "layers = " << c.layers << '\n';
  out << "lambda = " << fmt(c.lambda) << '\n';
  out << "clip = \"" << fmt(c.clip_bound) << "\"\n";
  out << "lr = " << fmt(c.learning_rate) << '\n';
  out << "batch-users = " << c.batch_users << '\n';
  out << "max-iterations = " << c.max_iterations << '\n';
  out << "eval-every = " << c.eval_every << '\n';
  out << "ans-m = " << c.ans_m << '\n';
  out << "seed = " << c.seed << '\n';
  out << "optimizer = \"" << to_string(c.optimizer) << "\"\n";
  out << "k = " << c.eval_k << '\n';
  out << "threads = " << c.threads << '\n';
  out << "holdout-fraction = " << fmt(a.holdout_fraction) << '\n';
  out << "no-wall-clock = " << (a.no_wall_clock ? "true" : "false") << '\n';
}

int cmd_train(TrainArgs& a, std::ostream& out, std::ostream& err) {
  TrainConfig& cfg = a.cfg;
  try {
    cfg.risk = parse_risk(a.risk);
    cfg.backbone = parse_backbone(a.model);
    cfg.optimizer = parse_optimizer(a.optimizer);
    cfg.clip_bound = parse_clip(a.clip);
    cfg.record_wall_clock = !a.no_wall_clock;
    validate(cfg);
    if (!(a.holdout_fraction >= 0.0 && a.holdout_fraction < 1.0))
      throw std::invalid_argument("--holdout-fraction must lie in [0, 1)");
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsageError;
  }

  const DataFiles files = locate(a.data);
  std::int64_t n_users = a.n_users;
  std::int64_t n_items = a.n_items;
  if (n_users <= 0 || n_items <= 0) {
    std::vector<fs::path> paths{files.train};
    if (files.test) paths.push_back(*files.test);
    const auto [nu, ni] = scan_id_bounds(paths);
    if (n_users <= 0) n_users = nu;
    if (n_items <= 0) n_items = ni;
  }
  InteractionDataset train_split = load_interactions(files.train, n_users, n_items, SplitTag::kTrain);
  std::optional<InteractionDataset> test_split;
  if (files.test) test_split = load_interactions(*files.test, n_users, n_items, SplitTag::kTest);

  std::optional<InteractionDataset> validation;
  if (a.holdout_fraction > 0.0) {
    auto [kept, held] = carve_holdout(train_split, a.holdout_fraction, derive_seed(cfg.seed, 3));
    train_split = std::move(kept);
    validation = std::move(held);
  }
  const InteractionDataset* eval_split =
      validation ? &*validation : (test_split ? &*test_split : nullptr);

  const fs::path out_dir = a.out;
  fs::create_directories(out_dir);
  write_manifest(a, files, n_users, n_items, out_dir / "manifest.toml");

  out << "training " << to_string(cfg.risk) << "-" << to_string(cfg.backbone) << " on " << n_users << " users x "
      << n_items << " items, " << train_split.interaction_count() << " train interactions\n";

  double best_ndcg = -1.0;
  auto on_eval = [&](const EvalRecord& r, const EmbeddingModel& model) {
    out << "iter " << r.iteration << " objective " << fmt(r.objective);
    if (r.ndcg) out << " recall@" << cfg.eval_k << ' ' << fmt(*r.recall) << " ndcg@" << cfg.eval_k << ' ' << fmt(*r.ndcg);
    out << '\n';
    if (r.ndcg && *r.ndcg > best_ndcg) {
      best_ndcg = *r.ndcg;
      save_checkpoint(model, out_dir / "best.ckpt");
    }
  };

  TrainResult result = [&] {
    try {
      return train(train_split, cfg, eval_split, on_eval);
    } catch (const TrainingFailure& e) {
      write_history_csv(e.history(), out_dir / "history.csv");
      throw;
    }
  }();

  save_checkpoint(result.model, out_dir / "model.ckpt");
  write_history_csv(result.history, out_dir / "history.csv");
  if (result.skipped_steps > 0) out << "skipped " << result.skipped_steps << " degenerate batches\n";
  if (auto best = result.history.best()) out << "best ndcg@" << cfg.eval_k << " at iteration " << best->iteration << '\n';

  if (test_split) {
    const MetricsReport report = evaluate(result.model, train_split, *test_split, cfg.eval_k, cfg.threads);
    write_metrics_json(report, out_dir / "metrics.json");
    out << "test recall@" << report.k << ' ' << fmt(report.recall) << " ndcg@" << report.k << ' ' << fmt(report.ndcg)
        << " (" << report.n_evaluated << " users)\n";
  }
  return 0;
}

struct EvaluateArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string per_user_csv;
  int k = 20;
  int threads = 1;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  EmbeddingModel model = load_checkpoint(fs::path(a.checkpoint));
  const DataFiles files = locate(a.data);
  if (!files.test) throw std::runtime_error("missing " + (fs::path(a.data) / "test.txt").string());
  const auto bounds = scan_id_bounds(std::vector<fs::path>{files.train, *files.test});
  if (bounds.first > model.n_users() || bounds.second > model.n_items())
    throw DatasetError("data ids exceed checkpoint dimensions (" + std::to_string(bounds.first) + " users, " +
                       std::to_string(bounds.second) + " items vs " + std::to_string(model.n_users()) + ", " +
                       std::to_string(model.n_items()) + ")");
  const InteractionDataset train_split = load_interactions(files.train, model.n_users(), model.n_items(), SplitTag::kTrain);
  const InteractionDataset test_split = load_interactions(*files.test, model.n_users(), model.n_items(), SplitTag::kTest);
  if (model.backbone() == Backbone::kLGCN) model.attach_graph(std::make_shared<NormalizedGraph>(train_split));

  const MetricsReport report = evaluate(model, train_split, test_split, a.k, a.threads);
  const fs::path target = a.out.empty() ? fs::path(a.checkpoint).parent_path() / "metrics.json" : fs::path(a.out);
  write_metrics_json(report, target);
  if (!a.per_user_csv.empty()) write_per_user_csv(report, a.per_user_csv);
  out << "recall@" << report.k << ' ' << fmt(report.recall) << " ndcg@" << report.k << ' ' << fmt(report.ndcg) << " ("
      << report.n_evaluated << " evaluated, " << report.n_skipped << " skipped)\n";
  return 0;
}

struct SynthArgs {
  std::int64_t n_users = 200;
  std::int64_t n_items = 500;
  int dim = 8;
  std::int64_t positives_per_user = 20;
  std::int64_t test_top_k = 20;
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  SyntheticData data = generate_synthetic(a.n_users, a.n_items, a.dim, a.positives_per_user, a.seed);
  const InteractionDataset test = planted_top_items(data.truth, data.train, a.test_top_k);
  const fs::path dir = a.out;
  fs::create_directories(dir);
  write_interactions(data.train, dir / "train.txt");
  write_interactions(test, dir / "test.txt");
  write_ground_truth(data.truth, dir / "ground_truth.tsv");
  out << "wrote " << data.train.interaction_count() << " train and " << test.interaction_count()
      << " test interactions to " << dir.string() << '\n';
  return 0;
}

struct StatsArgs {
  std::string data;
};

int cmd_stats(const StatsArgs& a, std::ostream& out) {
  const DataFiles files = locate(a.data);
  std::vector<fs::path> paths{files.train};
  if (files.test) paths.push_back(*files.test);
  const auto [nu, ni] = scan_id_bounds(paths);
  InteractionDataset all = load_interactions(files.train, nu, ni);
  if (files.test) all = merge(all, load_interactions(*files.test, nu, ni, SplitTag::kTest));
  const StatsReport s = dataset_stats(all);
  char density[32];
  std::snprintf(density, sizeof density, "%.5f", s.density);
  out << "users " << s.n_users << "\nitems " << s.n_items << "\ninteractions " << s.interactions << "\ndensity "
      << density << '\n';
  return 0;
}

// Splices `key = value` lines from the file named by --config into the argument
// list as --key value, skipping keys already given on the command line.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  auto it = std::find_if(args.begin(), args.end(),
                         [](const std::string& a) { return a == "--config" || a.rfind("--config=", 0) == 0; });
  if (it == args.end()) return args;
  std::string path;
  if (*it == "--config") {
    if (std::next(it) == args.end()) throw CLI::ArgumentMismatch("--config requires a file path");
    path = *std::next(it);
    it = args.erase(it, std::next(it, 2));
  } else {
    path = it->substr(9);
    it = args.erase(it);
  }
  std::ifstream in(path);
  if (!in) throw CLI::FileError::Missing(path);

  auto given = [&](const std::string& key) {
    const std::string flag = "--" + key;
    return std::any_of(args.begin(), args.end(),
                       [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
  };
  auto trim = [](std::string v) {
    const auto b = v.find_first_not_of(" \t\r");
    const auto e = v.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
  };

  std::vector<std::string> spliced;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw CLI::ConversionError(path + ":" + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    std::replace(key.begin(), key.end(), '_', '-');
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (given(key)) continue;
    if (value == "true") {
      spliced.push_back("--" + key);
    } else if (value != "false") {
      spliced.push_back("--" + key);
      spliced.push_back(value);
    }
  }
  args.insert(it, spliced.begin(), spliced.end());
  return args;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Top-K ranking from implicit feedback by parametric density estimation", "pderank"};
  app.require_subcommand(1);
  app.set_version_flag("--version", PDERANK_VERSION);

  TrainArgs train_args;
  TrainConfig& c = train_args.cfg;
  auto* train_cmd = app.add_subcommand("train", "Train a ranker and write manifest, checkpoints, history and metrics");
  std::string config_path;
  train_cmd->add_option("--config", config_path, "Read `key = value` defaults from a file (explicit flags win)");
  train_cmd->add_option("--data", train_args.data, "Directory holding train.txt (and optionally test.txt)")->required();
  train_cmd->add_option("--out", train_args.out, "Output directory")->required();
  train_cmd->add_option("--n-users", train_args.n_users, "Declared user count (0: infer from files)")->capture_default_str();
  train_cmd->add_option("--n-items", train_args.n_items, "Declared item count (0: infer from files)")->capture_default_str();
  train_cmd->add_option("--risk", train_args.risk, "Training risk")
      ->check(CLI::IsMember({"pde", "wd", "pairwise-ans"}))
      ->capture_default_str();
  train_cmd->add_option("--model", train_args.model, "Backbone")->check(CLI::IsMember({"mf", "lgcn"}))->capture_default_str();
  train_cmd->add_option("--dim", c.dim, "Embedding dimension")->capture_default_str();
  train_cmd->add_option("--layers", c.layers, "Graph convolution layers (lgcn)")->capture_default_str();
  train_cmd->add_option("--lambda", c.lambda, "L2 regularisation weight")->capture_default_str();
  train_cmd->add_option("--clip", train_args.clip, "Embedding norm bound, or 'inf' to disable clipping")->capture_default_str();
  train_cmd->add_option("--lr", c.learning_rate, "Learning rate")->capture_default_str();
  train_cmd->add_option("--batch-users", c.batch_users, "Users per mini-batch")->capture_default_str();
  train_cmd->add_option("--max-iterations", c.max_iterations, "Training steps")->capture_default_str();
  train_cmd->add_option("--eval-every", c.eval_every, "Steps between evaluations")->capture_default_str();
  train_cmd->add_option("--ans-m", c.ans_m, "Negatives re-sampled per user (pairwise-ans)")->capture_default_str();
  train_cmd->add_option("--seed", c.seed, "Random seed (falls back to $PDERANK_SEED)")->envname("PDERANK_SEED")->capture_default_str();
  train_cmd->add_option("--optimizer", train_args.optimizer, "Optimiser")->check(CLI::IsMember({"adam", "sgd"}))->capture_default_str();
  train_cmd->add_option("--k", c.eval_k, "Ranking cutoff for evaluation")->capture_default_str();
  train_cmd->add_option("--threads", c.threads, "Worker threads (results do not depend on this)")->capture_default_str();
  train_cmd->add_option("--holdout-fraction", train_args.holdout_fraction,
                        "Fraction of each user's train positives held out for validation metrics")
      ->capture_default_str();
  train_cmd->add_flag("--no-wall-clock", train_args.no_wall_clock, "Write elapsed_s = 0 so history files are reproducible");

  EvaluateArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on a data directory's test split");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval_args.data, "Directory holding train.txt and test.txt")->required();
  eval_cmd->add_option("--k", eval_args.k, "Ranking cutoff")->capture_default_str()->check(CLI::PositiveNumber);
  eval_cmd->add_option("--out", eval_args.out, "metrics.json path (default: next to the checkpoint)");
  eval_cmd->add_option("--per-user-csv", eval_args.per_user_csv, "Also write per-user recall/ndcg");
  eval_cmd->add_option("--threads", eval_args.threads, "Worker threads")->capture_default_str();

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic dataset with planted embeddings");
  synth_cmd->add_option("--n-users", synth_args.n_users, "Users")->capture_default_str();
  synth_cmd->add_option("--n-items", synth_args.n_items, "Items")->capture_default_str();
  synth_cmd->add_option("--dim", synth_args.dim, "Planted dimension")->capture_default_str();
  synth_cmd->add_option("--positives-per-user", synth_args.positives_per_user, "Train positives per user")->capture_default_str();
  synth_cmd->add_option("--test-top-k", synth_args.test_top_k, "Planted top items per user written to test.txt")->capture_default_str();
  synth_cmd->add_option("--seed", synth_args.seed, "Random seed")->envname("PDERANK_SEED")->capture_default_str();
  synth_cmd->add_option("--out", synth_args.out, "Output directory")->required();

  VerifyOptions verify_opts;
  auto* verify_cmd = app.add_subcommand("verify", "Run the oracle property suite");
  verify_cmd->add_option("--trials", verify_opts.trials, "Random instances per property")->capture_default_str();
  verify_cmd->add_option("--seed", verify_opts.seed, "Random seed")->capture_default_str();
  verify_cmd->add_option("--dirichlet-samples", verify_opts.dirichlet_samples, "Random generators per optimality case")
      ->capture_default_str();
  verify_cmd->add_option("--corrupt-gradient", verify_opts.corrupt_gradient, "Test hook: perturb the analytic gradient")
      ->group("");

  StatsArgs stats_args;
  auto* stats_cmd = app.add_subcommand("stats", "Print user/item/interaction counts over train+test");
  stats_cmd->add_option("--data", stats_args.data, "Data directory")->required();

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    const bool is_train = !args.empty() && args.front() == "train";
    if (is_train) args = expand_config(std::move(args));
    // CLI11 consumes the vector from the back.
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsageError;
  }

  try {
    if (*train_cmd) return cmd_train(train_args, out, err);
    if (*eval_cmd) return cmd_evaluate(eval_args, out);
    if (*synth_cmd) return cmd_synth(synth_args, out);
    if (*stats_cmd) return cmd_stats(stats_args, out);
    if (*verify_cmd) {
      const VerifyReport report = run_verification(verify_opts);
      print_report(report, out);
      return report.all_passed() ? 0 : 1;
    }
  } catch (const NumericFailure& e) {
    err << "numeric failure at " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return kUsageError;
}

}  // namespace pderank::cli
