#include "ahl/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "ahl/errors.hpp"
#include "ahl/format.hpp"
#include "ahl/plot.hpp"
#include "ahl/run_io.hpp"
#include "ahl/synthdata.hpp"
#include "ahl/training.hpp"

namespace ahl {

namespace {

namespace fs = std::filesystem;

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<double> parse_real_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(parse_double(item, what));
    } catch (const FormatError& e) {
      throw ConfigError(e.what());
    }
  }
  if (out.empty()) throw ConfigError(what + ": expected a comma-separated list of numbers");
  return out;
}

std::vector<std::size_t> parse_size_list(const std::string& text, const std::string& what) {
  std::vector<std::size_t> out;
  for (double v : parse_real_list(text, what)) {
    if (!(v >= 0) || v != std::floor(v)) throw ConfigError(what + ": expected non-negative integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

void check_pck(const std::vector<double>& thresholds) {
  std::vector<std::string> errors;
  for (double r : thresholds) {
    if (!(r > 0.0)) errors.push_back("--pck: thresholds must be > 0 (got " + format_double(r) + ")");
  }
  if (!errors.empty()) throw ConfigError(errors);
}

bool non_empty_dir(const fs::path& dir) { return fs::is_directory(dir) && !fs::is_empty(dir); }

void claim_output(const fs::path& dir, bool force, const std::vector<std::string>& owned) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw IoError(dir.string() + " exists and is not a directory");
  if (non_empty_dir(dir)) {
    if (!force) throw ConfigError("output directory " + dir.string() + " is not empty; pass --force to overwrite");
    for (const auto& name : owned) fs::remove_all(dir / name);
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::uint64_t env_seed() {
  const char* text = std::getenv("AHL_SEED");
  std::uint64_t v = 0;
  const std::string s = text;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ConfigError("AHL_SEED must be a non-negative integer, got '" + s + "'");
  }
  return v;
}

// ---- gen-data --------------------------------------------------------------------

struct GenDataArgs {
  std::size_t n = 400, size = 64, landmarks = 4;
  std::uint64_t seed = 0;
  std::string out;
  bool force = false;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  const DatasetSplit split = gen_dataset(a.n, a.size, a.size, a.landmarks, a.seed);
  claim_output(a.out, a.force, {"meta.json", "landmarks.csv", "images"});
  save_dataset(split, a.out);
  out << "dataset n=" << split.total() << " train=" << split.train.size() << " validation=" << split.validation.size()
      << " test=" << split.test.size() << " size=" << split.height << "x" << split.width
      << " landmarks=" << split.landmarks << " seed=" << split.seed << " -> " << a.out << "\n";
  return 0;
}

// ---- train ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config_file, data, out, mode, sigma_broadcast, pck, controller_hidden, widths;
  bool force = false, quiet = false;
  std::size_t samples = 0, inner_epochs = 0, epochs = 0, warmup = 0, early_stop_start = 0, early_stop_window = 0,
              batch = 0, threads = 0, depth = 0;
  std::uint64_t seed = 0;
  double sigma = 0, sigma_init = 0, sigma_min = 0, sigma_max = 0, reward_c = 0, early_stop_threshold = 0, lr = 0,
         controller_lr = 0, coordreg_lr = 0;
  bool early_stop = true, augment = true;
  std::map<std::string, CLI::Option*> opts;

  bool given(const std::string& name) const {
    const auto it = opts.find(name);
    return it != opts.end() && it->second->count() > 0;
  }
};

ExperimentConfig resolve_train_config(const TrainArgs& a) {
  ExperimentConfig cfg;
  if (!a.config_file.empty()) cfg = config_from_json(read_json_file(a.config_file));
  if (std::getenv("AHL_SEED")) cfg.train.seed = env_seed();

  TrainConfig& c = cfg.train;
  std::vector<std::string> errors;
  const auto guard = [&](auto&& apply) {
    try {
      apply();
    } catch (const ConfigError& e) {
      errors.insert(errors.end(), e.violations().begin(), e.violations().end());
    }
  };
  if (a.given("data")) cfg.data = a.data;
  if (a.given("mode")) guard([&] { c.mode = parse_mode(a.mode); });
  if (a.given("samples")) c.samples = a.samples;
  if (a.given("inner-epochs")) c.inner_epochs = a.inner_epochs;
  if (a.given("epochs")) c.epochs = a.epochs;
  if (a.given("warmup")) c.warmup = a.warmup;
  if (a.given("early-stop-start")) c.early_stop_start = a.early_stop_start;
  if (a.given("sigma")) c.sigma_init = a.sigma;
  if (a.given("sigma-init")) c.sigma_init = a.sigma_init;
  if (a.given("sigma") && a.given("sigma-init") && a.sigma != a.sigma_init) {
    errors.push_back("--sigma and --sigma-init disagree; pass one of them");
  }
  if (a.given("sigma-min")) c.sigma_min = a.sigma_min;
  if (a.given("sigma-max")) c.sigma_max = a.sigma_max;
  if (a.given("reward-c")) c.reward_c = a.reward_c;
  if (a.given("early-stop-window")) c.early_stop_window = a.early_stop_window;
  if (a.given("early-stop-threshold")) c.early_stop_threshold = a.early_stop_threshold;
  if (a.given("early-stop")) c.early_stop = a.early_stop;
  if (a.given("lr")) c.lr = a.lr;
  if (a.given("controller-lr")) c.controller_lr = a.controller_lr;
  if (a.given("coordreg-lr")) c.coordreg_lr = a.coordreg_lr;
  if (a.given("batch")) c.batch = a.batch;
  if (a.given("augment")) c.augment = a.augment;
  if (a.given("seed")) c.seed = a.seed;
  if (a.given("threads")) c.threads = a.threads;
  if (a.given("sigma-broadcast")) guard([&] { c.sigma_broadcast = parse_sigma_broadcast(a.sigma_broadcast); });
  if (a.given("pck")) guard([&] { c.pck_thresholds = parse_real_list(a.pck, "--pck"); });
  if (a.given("controller-hidden")) {
    guard([&] { c.controller_hidden = parse_size_list(a.controller_hidden, "--controller-hidden"); });
  }
  if (a.given("depth")) c.arch.depth = a.depth;
  if (a.given("widths")) guard([&] { c.arch.widths = parse_size_list(a.widths, "--widths"); });
  if (cfg.data.empty()) errors.push_back("no dataset given (--data or \"data\" in the config file)");
  guard([&] { c.validate(); });
  if (!errors.empty()) throw ConfigError(errors);
  return cfg;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  ExperimentConfig cfg = resolve_train_config(a);
  const DatasetSplit data = load_dataset(cfg.data);
  cfg.train = bind_to_dataset(cfg.train, data);
  cfg.train.validate();
  claim_output(a.out, a.force, run_file_names());

  LoopHooks<LearnerState> hooks;
  if (!a.quiet) {
    hooks.on_epoch = [&out](const EpochRecord& rec) {
      double sum = 0.0;
      for (double v : rec.val_error) sum += v;
      out << "epoch=" << rec.epoch << " mean_val_mre=" << fixed(sum / static_cast<double>(rec.val_error.size()))
          << "\n"
          << std::flush;
    };
  }
  const TrainingResult result = run_training(cfg.train, data, std::move(hooks));
  write_run(a.out, cfg, result);
  out << "test mre_mean=" << fixed(result.summary.mre.mean) << " mre_sd=" << fixed(result.summary.mre.sd);
  for (const auto& p : result.summary.pck) out << " pck@" << format_double(p.radius) << "=" << fixed(p.percent, 2);
  out << "\nrun written to " << a.out << "\n";
  return 0;
}

// ---- evaluate ------------------------------------------------------------------------

struct EvaluateArgs {
  std::string run, data, pck, out;
  bool force = false;
  CLI::Option* data_opt = nullptr;
  CLI::Option* pck_opt = nullptr;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  std::vector<double> thresholds;
  if (a.pck_opt->count() > 0) {
    thresholds = parse_real_list(a.pck, "--pck");
    check_pck(thresholds);
  }
  const fs::path run(a.run);
  if (!fs::is_directory(run)) throw IoError("run directory " + run.string() + " does not exist");
  const ExperimentConfig cfg = config_from_json(read_json_file(run / "config.echo.json"));
  if (a.pck_opt->count() == 0) thresholds = cfg.train.pck_thresholds;
  const LearnerState learner = load_checkpoint(run / "learner.ckpt");
  const std::string data_dir = a.data_opt->count() > 0 ? a.data : cfg.data;
  const DatasetSplit data = load_dataset(data_dir);
  if (data.landmarks != learner.arch.landmarks || data.height != learner.arch.height ||
      data.width != learner.arch.width) {
    throw ConfigError("dataset " + data_dir + " does not match the checkpoint architecture");
  }
  const EvaluationSummary s = evaluate_learner(learner, data.test, decoder_for(cfg.train.mode), thresholds);

  for (std::size_t i = 0; i < s.mre.per_landmark.size(); ++i) {
    const std::string name = i < data.landmark_names.size() ? data.landmark_names[i] : std::to_string(i);
    out << "landmark " << i << " (" << name << ") mre=" << fixed(s.mre.per_landmark[i]) << "\n";
  }
  out << "mean mre=" << fixed(s.mre.mean) << " sd=" << fixed(s.mre.sd) << "\n";
  for (const auto& p : s.pck) out << "pck r=" << format_double(p.radius) << " " << fixed(p.percent, 2) << "%\n";
  if (!a.out.empty()) {
    claim_output(a.out, a.force, {"evaluation.json"});
    write_text_file(fs::path(a.out) / "evaluation.json", summary_document(s));
    out << "evaluation written to " << (fs::path(a.out) / "evaluation.json").string() << "\n";
  }
  return 0;
}

// ---- plot ---------------------------------------------------------------------------

struct RunListArgs {
  std::vector<std::string> runs, labels;
  std::string out;
  bool force = false;
};

std::vector<std::string> labels_for(const RunListArgs& a) {
  if (!a.labels.empty() && a.labels.size() != a.runs.size()) {
    throw ConfigError("--label must be given once per --run");
  }
  if (!a.labels.empty()) return a.labels;
  std::vector<std::string> out;
  for (const auto& r : a.runs) out.push_back(fs::path(r).filename().string().empty() ? r : fs::path(r).filename().string());
  return out;
}

int cmd_plot(const RunListArgs& a, std::ostream& out) {
  if (a.runs.empty() || a.runs.size() > 2) throw ConfigError("plot takes one run, or two runs to overlay");
  const auto labels = labels_for(a);
  std::vector<PlotRun> runs;
  for (std::size_t r = 0; r < a.runs.size(); ++r) {
    if (!fs::is_directory(a.runs[r])) throw IoError("run directory " + a.runs[r] + " does not exist");
    runs.push_back({labels[r], read_artifacts(a.runs[r])});
  }
  if (runs.size() == 2 && (runs[0].artifacts.sigma.empty() || runs[1].artifacts.sigma.empty() ||
                           runs[0].artifacts.sigma.front().size() != runs[1].artifacts.sigma.front().size())) {
    throw ConfigError("overlaid runs must have the same landmark count");
  }
  claim_output(a.out, a.force, {"sigma_curves.svg", "reward_curves.svg"});
  write_text_file(fs::path(a.out) / "sigma_curves.svg", sigma_curves_svg(runs));
  write_text_file(fs::path(a.out) / "reward_curves.svg", reward_curves_svg(runs));
  out << "plots written to " << a.out << "\n";
  return 0;
}

// ---- compare ------------------------------------------------------------------------

struct CompareRow {
  std::string label, mode;
  std::vector<double> values;  // per landmark MRE, then mean, then sd
};

int cmd_compare(const RunListArgs& a, std::ostream& out) {
  if (a.runs.size() < 2) throw ConfigError("compare needs at least two --run directories");
  const auto labels = labels_for(a);
  std::vector<CompareRow> rows;
  std::size_t n = 0;
  for (std::size_t r = 0; r < a.runs.size(); ++r) {
    const RunRecord rec = read_run(a.runs[r]);
    const auto& s = rec.summary;
    std::vector<double> values;
    try {
      values = s.at("mre_per_landmark").get<std::vector<double>>();
      values.push_back(s.at("mre_mean").get<double>());
      values.push_back(s.at("mre_sd").get<double>());
    } catch (const nlohmann::json::exception&) {
      throw FormatError((fs::path(a.runs[r]) / "summary.json").string() + ": missing MRE fields");
    }
    const std::size_t landmarks = values.size() - 2;
    if (r == 0) n = landmarks;
    if (landmarks != n) {
      throw ConfigError("run " + a.runs[r] + " has " + std::to_string(landmarks) + " landmarks, expected " +
                        std::to_string(n));
    }
    rows.push_back({labels[r], to_string(rec.config.train.mode), std::move(values)});
  }

  const std::size_t columns = n + 2;
  std::vector<double> best(columns);
  for (std::size_t c = 0; c < columns; ++c) {
    best[c] = rows[0].values[c];
    for (const auto& row : rows) best[c] = std::min(best[c], row.values[c]);
  }

  // One mean row per mode that has at least two runs, in first-seen order.
  std::vector<std::string> modes;
  for (const auto& row : rows) {
    if (std::find(modes.begin(), modes.end(), row.mode) == modes.end()) modes.push_back(row.mode);
  }
  std::vector<CompareRow> mean_rows;
  for (const auto& m : modes) {
    std::vector<double> sum(columns, 0.0);
    std::size_t count = 0;
    for (const auto& row : rows) {
      if (row.mode != m) continue;
      ++count;
      for (std::size_t c = 0; c < columns; ++c) sum[c] += row.values[c];
    }
    if (count < 2) continue;
    for (auto& v : sum) v /= static_cast<double>(count);
    mean_rows.push_back({"mean(" + m + ")", m, std::move(sum)});
  }

  const auto marks = [&](const CompareRow& row, bool is_run) {
    std::vector<bool> m(columns, false);
    if (is_run) {
      for (std::size_t c = 0; c < columns; ++c) m[c] = row.values[c] == best[c];
    }
    return m;
  };

  // Table.
  std::size_t label_w = 5;
  for (const auto& row : rows) label_w = std::max(label_w, row.label.size());
  for (const auto& row : mean_rows) label_w = std::max(label_w, row.label.size());
  const auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
  };
  out << pad("run", label_w) << "  " << pad("mode", 8);
  for (std::size_t i = 0; i < n; ++i) out << "  " << pad("L" + std::to_string(i), 9);
  out << "  Mean+-SD\n";
  const auto print_row = [&](const CompareRow& row, bool is_run) {
    const auto m = marks(row, is_run);
    out << pad(row.label, label_w) << "  " << pad(row.mode, 8);
    for (std::size_t i = 0; i < n; ++i) out << "  " << pad(fixed(row.values[i], 3) + (m[i] ? "*" : ""), 9);
    out << "  " << fixed(row.values[n], 3) << (m[n] ? "*" : "") << " +- " << fixed(row.values[n + 1], 3)
        << (m[n + 1] ? "*" : "") << "\n";
  };
  for (const auto& row : rows) print_row(row, true);
  for (const auto& row : mean_rows) print_row(row, false);
  out << "(* marks the lowest value per column among runs)\n";

  claim_output(a.out, a.force, {"compare.csv"});
  std::ostringstream csv;
  csv << "run,mode";
  for (std::size_t i = 0; i < n; ++i) csv << ",mre_" << i;
  csv << ",mean,sd,best\n";
  const auto csv_row = [&](const CompareRow& row, bool is_run) {
    const auto m = marks(row, is_run);
    csv << row.label << ',' << row.mode;
    for (double v : row.values) csv << ',' << format_double(v);
    std::string best_cols;
    for (std::size_t c = 0; c < columns; ++c) {
      if (!m[c]) continue;
      if (!best_cols.empty()) best_cols += ';';
      best_cols += c < n ? "mre_" + std::to_string(c) : (c == n ? "mean" : "sd");
    }
    csv << ',' << best_cols << '\n';
  };
  for (const auto& row : rows) csv_row(row, true);
  for (const auto& row : mean_rows) csv_row(row, false);
  write_text_file(fs::path(a.out) / "compare.csv", csv.str());
  out << "table written to " << (fs::path(a.out) / "compare.csv").string() << "\n";
  return 0;
}

// ---- dispatch ------------------------------------------------------------------------

int report(std::ostream& err, const std::vector<std::string>& lines, int code) {
  for (const auto& l : lines) err << "error: " << l << "\n";
  return code;
}

}  // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adaptive heatmap target precision: data generation, training, evaluation and reporting", "ahl"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic landmark dataset");
  gen_cmd->add_option("--n", gen.n, "Number of images (>= 10)")->capture_default_str();
  gen_cmd->add_option("--size", gen.size, "Image height and width in pixels")->capture_default_str();
  gen_cmd->add_option("--landmarks", gen.landmarks, "Landmarks per image (1-8)")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_flag("--force", gen.force, "Overwrite an existing dataset");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a run directory");
  const auto topt = [&](const std::string& name, auto& var, const std::string& help) {
    tr.opts[name] = train_cmd->add_option("--" + name, var, help);
  };
  train_cmd->add_option("--config", tr.config_file, "JSON config file; explicit flags take precedence");
  train_cmd->add_option("--out", tr.out, "Run directory")->required();
  train_cmd->add_flag("--force", tr.force, "Overwrite an existing run directory");
  train_cmd->add_flag("--quiet", tr.quiet, "Suppress per-epoch progress lines");
  topt("data", tr.data, "Dataset directory");
  topt("mode", tr.mode, "laoml, fixed, decay or coordreg");
  topt("samples", tr.samples, "Sigma samples per iteration (K)");
  topt("inner-epochs", tr.inner_epochs, "Epochs per iteration (t')");
  topt("epochs", tr.epochs, "Total epoch budget");
  topt("warmup", tr.warmup, "Warm-up epochs at sigma-init");
  topt("early-stop-start", tr.early_stop_start, "First epoch at which landmarks may freeze");
  topt("sigma", tr.sigma, "Gaussian sigma (same as --sigma-init)");
  topt("sigma-init", tr.sigma_init, "Initial sigma for all landmarks");
  topt("sigma-min", tr.sigma_min, "Lower sigma bound");
  topt("sigma-max", tr.sigma_max, "Upper sigma bound");
  topt("reward-c", tr.reward_c, "Reward constant C in R = C - error");
  topt("early-stop-window", tr.early_stop_window, "Early-stop window M in epochs");
  topt("early-stop-threshold", tr.early_stop_threshold, "Early-stop variance threshold");
  topt("lr", tr.lr, "Learner learning rate (heatmap modes)");
  topt("controller-lr", tr.controller_lr, "Controller learning rate");
  topt("coordreg-lr", tr.coordreg_lr, "Learner learning rate in coordreg mode");
  topt("batch", tr.batch, "Mini-batch size");
  topt("seed", tr.seed, "Run seed (overrides AHL_SEED and the config file)");
  topt("threads", tr.threads, "Threads for the K parallel trainings");
  topt("sigma-broadcast", tr.sigma_broadcast, "per_landmark or global");
  topt("pck", tr.pck, "Comma-separated PCK radii in pixels");
  topt("controller-hidden", tr.controller_hidden, "Comma-separated controller hidden widths");
  topt("depth", tr.depth, "Encoder-decoder depth");
  topt("widths", tr.widths, "Comma-separated channel widths per level");
  tr.opts["early-stop"] = train_cmd->add_flag("--early-stop,!--no-early-stop", tr.early_stop, "Enable early stop");
  tr.opts["augment"] = train_cmd->add_flag("--augment,!--no-augment", tr.augment, "Enable augmentation");

  EvaluateArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a run's checkpoint on the test split");
  eval_cmd->add_option("--run", ev.run, "Run directory")->required();
  ev.data_opt = eval_cmd->add_option("--data", ev.data, "Dataset directory (default: the run's dataset)");
  ev.pck_opt = eval_cmd->add_option("--pck", ev.pck, "Comma-separated PCK radii (default: the run's)");
  eval_cmd->add_option("--out", ev.out, "Directory for evaluation.json");
  eval_cmd->add_flag("--force", ev.force, "Overwrite an existing evaluation.json");

  RunListArgs pl;
  auto* plot_cmd = app.add_subcommand("plot", "Write sigma and reward SVG charts");
  plot_cmd->add_option("--run", pl.runs, "Run directory (twice to overlay)")->required();
  plot_cmd->add_option("--label", pl.labels, "Legend label per run");
  plot_cmd->add_option("--out", pl.out, "Output directory")->required();
  plot_cmd->add_flag("--force", pl.force, "Overwrite existing charts");

  RunListArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare", "Tabulate test MRE across runs");
  cmp_cmd->add_option("--run", cmp.runs, "Run directory (two or more)")->required();
  cmp_cmd->add_option("--label", cmp.labels, "Row label per run");
  cmp_cmd->add_option("--out", cmp.out, "Directory for compare.csv")->required();
  cmp_cmd->add_flag("--force", cmp.force, "Overwrite an existing compare.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    return report(err, {e.what()}, 1);
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen, out);
    if (train_cmd->parsed()) return cmd_train(tr, out);
    if (eval_cmd->parsed()) return cmd_evaluate(ev, out);
    if (plot_cmd->parsed()) return cmd_plot(pl, out);
    if (cmp_cmd->parsed()) return cmd_compare(cmp, out);
  } catch (const ConfigError& e) {
    return report(err, e.violations(), 1);
  } catch (const DimensionError& e) {
    return report(err, {e.what()}, 1);
  } catch (const NumericalError& e) {
    return report(err, {e.what()}, 2);
  } catch (const IoError& e) {
    return report(err, {e.what()}, 3);
  } catch (const FormatError& e) {
    return report(err, {e.what()}, 3);
  } catch (const fs::filesystem_error& e) {
    return report(err, {e.what()}, 3);
  } catch (const std::exception& e) {
    return report(err, {e.what()}, 2);
  }
  return 1;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<std::string> storage{"ahl"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  argv.push_back(nullptr);
  return run_cli(static_cast<int>(storage.size()), argv.data(), out, err);
}

}  // namespace ahl
