#include "ahl/run_io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "ahl/errors.hpp"
#include "ahl/format.hpp"

namespace ahl {

namespace {

using json = nlohmann::json;

const char* decoder_name(Decoder d) { return d == Decoder::Argmax ? "argmax" : "soft_argmax"; }

// ---- CSV ------------------------------------------------------------------------

struct CsvTable {
  std::filesystem::path path;
  std::vector<std::vector<std::string>> rows;  // without header
};

CsvTable read_csv(const std::filesystem::path& path, const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  CsvTable t{path, {}};
  std::string line;
  std::size_t line_no = 0;
  const auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(s);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!s.empty() && s.back() == ',') out.emplace_back();
    return out;
  };
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file, expected a header");
  ++line_no;
  if (split(line) != header) throw FormatError(path.string() + " (line 1): unexpected header '" + line + "'");
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split(line);
    if (fields.size() != header.size()) {
      throw FormatError(path.string() + " (line " + std::to_string(line_no) + "): expected " +
                        std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  return t;
}

std::size_t csv_index(const CsvTable& t, std::size_t row, std::size_t col) {
  const std::string& s = t.rows[row][col];
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw FormatError(t.path.string() + " (line " + std::to_string(row + 2) + "): expected a non-negative integer, got '" +
                      s + "'");
  }
  return v;
}

double csv_real(const CsvTable& t, std::size_t row, std::size_t col) {
  return parse_double(t.rows[row][col], t.path.string() + " (line " + std::to_string(row + 2) + ")");
}

// ---- typed JSON access ----------------------------------------------------------

class ConfigReader {
 public:
  explicit ConfigReader(const json& doc) : doc_(doc) {
    if (!doc.is_object()) throw ConfigError("configuration must be a JSON object");
  }

  template <class F>
  void with(const char* key, F&& apply) {
    seen_.push_back(key);
    if (!doc_.contains(key)) return;
    try {
      apply(doc_.at(key));
    } catch (const ConfigError& e) {
      for (const auto& v : e.violations()) errors_.push_back(std::string(key) + ": " + v);
    }
  }

  void size(const char* key, std::size_t& out) {
    with(key, [&](const json& v) { out = as_size(v); });
  }
  void real(const char* key, double& out) {
    with(key, [&](const json& v) { out = as_real(v); });
  }
  void flag(const char* key, bool& out) {
    with(key, [&](const json& v) {
      if (!v.is_boolean()) throw ConfigError("expected true or false");
      out = v.get<bool>();
    });
  }
  void text(const char* key, std::string& out) {
    with(key, [&](const json& v) {
      if (!v.is_string()) throw ConfigError("expected a string");
      out = v.get<std::string>();
    });
  }
  void reals(const char* key, std::vector<double>& out) {
    with(key, [&](const json& v) {
      if (!v.is_array()) throw ConfigError("expected an array of numbers");
      std::vector<double> r;
      for (const auto& e : v) r.push_back(as_real(e));
      out = std::move(r);
    });
  }
  void sizes(const char* key, std::vector<std::size_t>& out) {
    with(key, [&](const json& v) {
      if (!v.is_array()) throw ConfigError("expected an array of non-negative integers");
      std::vector<std::size_t> r;
      for (const auto& e : v) r.push_back(as_size(e));
      out = std::move(r);
    });
  }

  void finish() {
    for (const auto& [key, value] : doc_.items()) {
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) errors_.push_back("unknown key '" + key + "'");
    }
    if (!errors_.empty()) throw ConfigError(errors_);
  }

  static std::size_t as_size(const json& v) {
    if (v.is_number_unsigned()) return v.get<std::size_t>();
    if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::size_t>(v.get<long long>());
    throw ConfigError("expected a non-negative integer, got " + v.dump());
  }
  static double as_real(const json& v) {
    if (!v.is_number()) throw ConfigError("expected a number, got " + v.dump());
    return v.get<double>();
  }

 private:
  const json& doc_;
  std::vector<std::string> seen_;
  std::vector<std::string> errors_;
};

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void close_out(std::ofstream& out, const std::filesystem::path& path) {
  out.close();
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

// ---- configuration ----------------------------------------------------------------

json config_to_json(const ExperimentConfig& config) {
  const TrainConfig& c = config.train;
  json j = json::object();
  j["augment"] = c.augment;
  j["batch"] = c.batch;
  j["controller_hidden"] = c.controller_hidden;
  j["controller_lr"] = c.controller_lr;
  j["coordreg_lr"] = c.coordreg_lr;
  j["data"] = config.data;
  j["depth"] = c.arch.depth;
  j["early_stop"] = c.early_stop;
  j["early_stop_start"] = c.resolved_early_stop_start();
  j["early_stop_threshold"] = c.early_stop_threshold;
  j["early_stop_window"] = c.early_stop_window;
  j["epochs"] = c.epochs;
  j["inner_epochs"] = c.inner_epochs;
  j["lr"] = c.lr;
  j["mode"] = to_string(c.mode);
  j["pck"] = c.pck_thresholds;
  j["reward_c"] = c.reward_c;
  j["samples"] = c.samples;
  j["seed"] = c.seed;
  j["sigma_broadcast"] = to_string(c.sigma_broadcast);
  j["sigma_init"] = c.sigma_init;
  j["sigma_max"] = c.sigma_max;
  j["sigma_min"] = c.sigma_min;
  j["threads"] = c.threads;
  j["warmup"] = c.resolved_warmup();
  j["widths"] = c.arch.widths;
  return j;
}

ExperimentConfig config_from_json(const json& doc, ExperimentConfig base) {
  ConfigReader r(doc);
  TrainConfig& c = base.train;
  r.flag("augment", c.augment);
  r.size("batch", c.batch);
  r.sizes("controller_hidden", c.controller_hidden);
  r.real("controller_lr", c.controller_lr);
  r.real("coordreg_lr", c.coordreg_lr);
  r.text("data", base.data);
  r.size("depth", c.arch.depth);
  r.flag("early_stop", c.early_stop);
  r.with("early_stop_start", [&](const json& v) { c.early_stop_start = ConfigReader::as_size(v); });
  r.real("early_stop_threshold", c.early_stop_threshold);
  r.size("early_stop_window", c.early_stop_window);
  r.size("epochs", c.epochs);
  r.size("inner_epochs", c.inner_epochs);
  r.real("lr", c.lr);
  r.with("mode", [&](const json& v) {
    if (!v.is_string()) throw ConfigError("expected a string");
    c.mode = parse_mode(v.get<std::string>());
  });
  r.reals("pck", c.pck_thresholds);
  r.real("reward_c", c.reward_c);
  r.size("samples", c.samples);
  r.with("seed", [&](const json& v) { c.seed = ConfigReader::as_size(v); });
  r.with("sigma_broadcast", [&](const json& v) {
    if (!v.is_string()) throw ConfigError("expected a string");
    c.sigma_broadcast = parse_sigma_broadcast(v.get<std::string>());
  });
  r.real("sigma_init", c.sigma_init);
  r.real("sigma_max", c.sigma_max);
  r.real("sigma_min", c.sigma_min);
  r.size("threads", c.threads);
  r.with("warmup", [&](const json& v) { c.warmup = ConfigReader::as_size(v); });
  r.sizes("widths", c.arch.widths);
  r.finish();
  return base;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + " (byte " + std::to_string(e.byte) + "): invalid JSON");
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  close_out(out, path);
}

// ---- summary ------------------------------------------------------------------------

json summary_to_json(const EvaluationSummary& s) {
  json j = json::object();
  j["decoder"] = decoder_name(s.decoder);
  j["images"] = s.images;
  j["landmarks"] = s.mre.per_landmark.size();
  j["mre_per_landmark"] = s.mre.per_landmark;
  j["mre_mean"] = s.mre.mean;
  j["mre_sd"] = s.mre.sd;
  json pck = json::array();
  for (const auto& e : s.pck) pck.push_back({{"radius", e.radius}, {"percent", e.percent}});
  j["pck"] = pck;
  return j;
}

std::string summary_document(const EvaluationSummary& summary) { return summary_to_json(summary).dump(2) + "\n"; }

// ---- run directory --------------------------------------------------------------------

std::vector<std::string> run_file_names() {
  return {"config.echo.json", "sigma.csv",   "reward.csv",   "epochs.csv",      "freeze.csv",
          "summary.json",     "timing.json", "learner.ckpt", "controllers.ckpt"};
}

void write_run(const std::filesystem::path& dir, const ExperimentConfig& config, const TrainingResult& result) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const RunArtifacts& a = result.artifacts;

  write_text_file(dir / "config.echo.json", config_to_json(config).dump(2) + "\n");

  {
    const auto path = dir / "sigma.csv";
    auto out = open_out(path);
    out << "iteration,landmark,sigma\n";
    for (std::size_t t = 0; t < a.sigma.size(); ++t) {
      for (std::size_t i = 0; i < a.sigma[t].size(); ++i) out << t << ',' << i << ',' << format_double(a.sigma[t][i]) << '\n';
    }
    close_out(out, path);
  }
  {
    const auto path = dir / "reward.csv";
    auto out = open_out(path);
    out << "iteration,sample,landmark,sigma,epsilon,reward\n";
    for (const auto& r : a.rewards) {
      out << r.iteration << ',' << r.sample << ',' << r.landmark << ',' << format_double(r.sigma) << ','
          << format_double(r.epsilon) << ',' << format_double(r.reward) << '\n';
    }
    close_out(out, path);
  }
  {
    const auto path = dir / "epochs.csv";
    auto out = open_out(path);
    out << "epoch,landmark,train_mse,val_mre\n";
    for (const auto& e : a.epochs) {
      for (std::size_t i = 0; i < e.train_loss.size(); ++i) {
        out << e.epoch << ',' << i << ',' << format_double(e.train_loss[i]) << ',' << format_double(e.val_error[i])
            << '\n';
      }
    }
    close_out(out, path);
  }
  {
    const auto path = dir / "freeze.csv";
    auto out = open_out(path);
    out << "landmark,iteration\n";
    for (std::size_t i = 0; i < a.freeze_iteration.size(); ++i) {
      if (a.freeze_iteration[i]) out << i << ',' << *a.freeze_iteration[i] << '\n';
    }
    close_out(out, path);
  }
  write_text_file(dir / "summary.json", summary_document(result.summary));
  {
    json t = json::object();
    t["warmup_seconds"] = a.timings.warmup_seconds;
    t["inner_seconds"] = a.timings.inner_seconds;
    t["outer_seconds"] = a.timings.outer_seconds;
    t["evaluation_seconds"] = a.timings.evaluation_seconds;
    write_text_file(dir / "timing.json", t.dump(2) + "\n");
  }
  save_checkpoint(dir / "learner.ckpt", result.learner);
  if (!result.controllers.empty()) {
    save_controllers(dir / "controllers.ckpt", result.controllers);
  } else {
    std::filesystem::remove(dir / "controllers.ckpt", ec);
  }
}

RunArtifacts read_artifacts(const std::filesystem::path& dir) {
  RunArtifacts a;
  {
    const CsvTable t = read_csv(dir / "sigma.csv", {"iteration", "landmark", "sigma"});
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const std::size_t it = csv_index(t, r, 0), lm = csv_index(t, r, 1);
      if (it > a.sigma.size() || (it + 1 < a.sigma.size())) {
        throw FormatError(t.path.string() + " (line " + std::to_string(r + 2) + "): iterations must be consecutive");
      }
      if (it == a.sigma.size()) a.sigma.emplace_back();
      if (lm != a.sigma[it].size()) {
        throw FormatError(t.path.string() + " (line " + std::to_string(r + 2) + "): landmarks must be consecutive");
      }
      a.sigma[it].push_back(csv_real(t, r, 2));
    }
  }
  {
    const CsvTable t = read_csv(dir / "reward.csv", {"iteration", "sample", "landmark", "sigma", "epsilon", "reward"});
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      a.rewards.push_back({csv_index(t, r, 0), csv_index(t, r, 1), csv_index(t, r, 2), csv_real(t, r, 3),
                           csv_real(t, r, 4), csv_real(t, r, 5)});
    }
  }
  {
    const CsvTable t = read_csv(dir / "epochs.csv", {"epoch", "landmark", "train_mse", "val_mre"});
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const std::size_t epoch = csv_index(t, r, 0), lm = csv_index(t, r, 1);
      if (a.epochs.empty() || a.epochs.back().epoch != epoch) a.epochs.push_back({epoch, {}, {}});
      if (lm != a.epochs.back().train_loss.size()) {
        throw FormatError(t.path.string() + " (line " + std::to_string(r + 2) + "): landmarks must be consecutive");
      }
      a.epochs.back().train_loss.push_back(csv_real(t, r, 2));
      a.epochs.back().val_error.push_back(csv_real(t, r, 3));
    }
  }
  const std::size_t n = a.sigma.empty() ? 0 : a.sigma.front().size();
  a.freeze_iteration.assign(n, std::nullopt);
  {
    const CsvTable t = read_csv(dir / "freeze.csv", {"landmark", "iteration"});
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const std::size_t lm = csv_index(t, r, 0);
      if (lm >= n) throw FormatError(t.path.string() + " (line " + std::to_string(r + 2) + "): landmark out of range");
      a.freeze_iteration[lm] = csv_index(t, r, 1);
    }
  }
  return a;
}

RunRecord read_run(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("run directory " + dir.string() + " does not exist");
  RunRecord rec;
  rec.dir = dir;
  rec.config = config_from_json(read_json_file(dir / "config.echo.json"));
  rec.artifacts = read_artifacts(dir);
  rec.summary = read_json_file(dir / "summary.json");
  return rec;
}

}  // namespace ahl
