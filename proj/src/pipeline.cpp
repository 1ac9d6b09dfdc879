#include "dsink/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <future>
#include <iomanip>
#include <map>
#include <sstream>

#include "dsink/auxiliaries.hpp"
#include "dsink/binary_io.hpp"
#include "dsink/error.hpp"
#include "dsink/models.hpp"
#include "dsink/synth_data.hpp"
#include "dsink/trainer.hpp"

namespace dsink::cli {

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex32(std::uint32_t x) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08x", x);
  return buf;
}

std::string fixed(double x, int digits) {
  if (std::isnan(x)) return "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << x;
  return os.str();
}

// Keeps only the dataset and aux sections, which fully determine the cache.
std::string aux_echo(const ExperimentConfig& cfg) {
  std::istringstream in(cfg.echo());
  std::string out;
  for (std::string line; std::getline(in, line);) {
    if (line.starts_with("dataset.") || line.starts_with("aux.")) out += line + "\n";
  }
  return out;
}

RunManifest start_manifest(const std::string& command, const ExperimentConfig& cfg) {
  RunManifest m;
  m.command = command;
  m.resolved_config = cfg.echo();
  m.started_utc = utc_now();
  return m;
}

void load_datasets(const ExperimentConfig& cfg, data::Dataset& train, data::Dataset& test) {
  train = data::load(cfg.paths.train_data_path(cfg.dataset.seed));
  test = data::load(cfg.paths.test_data_path(cfg.dataset.seed));
  if (train.split != data::Split::kTrain || test.split != data::Split::kTest) {
    throw Error(ErrorKind::kIo, "dataset files have the wrong split");
  }
}

const std::vector<double eval::EvalReport::*>& summary_fields() {
  static const std::vector<double eval::EvalReport::*> fields = {
      &eval::EvalReport::overall_acc, &eval::EvalReport::many_acc,
      &eval::EvalReport::medium_acc,  &eval::EvalReport::few_acc,
      &eval::EvalReport::macro_f1,    &eval::EvalReport::macro_auc,
      &eval::EvalReport::noise_correction_rate};
  return fields;
}

}  // namespace

ExperimentConfig resolve_config(const GlobalOptions& options) {
  ExperimentConfig cfg = load_config(options.config);
  if (options.seed) cfg.set_seed(*options.seed);
  if (options.out_dir) cfg.paths.out_dir = *options.out_dir;
  if (options.debug_invariants) cfg.train.debug_invariants = true;
  return cfg;
}

void RunManifest::add(std::string role, const std::filesystem::path& path) {
  artifacts.push_back({std::move(role), path, io::crc32(io::read_file(path))});
}

std::string RunManifest::to_text() const {
  std::ostringstream os;
  os << "command=" << command << '\n'
     << "tool_version=" << tool_version << '\n'
     << "config_path=" << config_path.string() << '\n'
     << "started_utc=" << started_utc << '\n'
     << "finished_utc=" << finished_utc << '\n';
  for (const ManifestEntry& a : artifacts) {
    os << "artifact." << a.role << '=' << a.path.string() << " crc32=" << hex32(a.crc32) << '\n';
  }
  os << "[resolved config]\n" << resolved_config;
  return os.str();
}

std::filesystem::path write_manifest(const RunManifest& manifest,
                                     const std::filesystem::path& out_dir,
                                     const std::string& name) {
  const std::filesystem::path path = out_dir / "manifests" / (name + ".txt");
  std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  f << manifest.to_text();
  if (!f) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  return path;
}

RunManifest cmd_gen_data(const ExperimentConfig& cfg, std::ostream& out) {
  RunManifest m = start_manifest("gen-data", cfg);
  const data::Dataset train = data::generate(cfg.dataset, data::Split::kTrain);
  const data::Dataset test = data::generate(cfg.dataset, data::Split::kTest);
  const auto train_path = cfg.paths.train_data_path(cfg.dataset.seed);
  const auto test_path = cfg.paths.test_data_path(cfg.dataset.seed);
  data::save(train, train_path);
  data::save(test, test_path);
  m.add("train_data", train_path);
  m.add("test_data", test_path);

  out << "recipe:\n";
  std::istringstream recipe(cfg.dataset.echo());
  for (std::string line; std::getline(recipe, line);) out << "  " << line << '\n';
  out << "train: " << train.size() << " samples -> " << train_path.string() << '\n'
      << "test:  " << test.size() << " samples -> " << test_path.string() << '\n'
      << "measured_ir=" << fixed(data::measure_ir(train), 4)
      << " measured_nr=" << fixed(data::measure_nr(train), 4) << '\n';
  m.finished_utc = utc_now();
  return m;
}

RunManifest cmd_train_aux(const ExperimentConfig& cfg, std::ostream& out) {
  RunManifest m = start_manifest("train-aux", cfg);
  const auto train_path = cfg.paths.train_data_path(cfg.dataset.seed);
  const data::Dataset train = data::load(train_path);

  auto fl_job = std::async(std::launch::async, [&] { return aux::train_fl(train, cfg); });
  auto fn_job = std::async(std::launch::async, [&] { return aux::train_fn(train, cfg); });
  const model::ClassifierParams fl = fl_job.get();
  const model::ClassifierParams fn = fn_job.get();

  const auto fl_path = cfg.paths.fl_checkpoint_path(cfg.aux.seed);
  const auto fn_path = cfg.paths.fn_checkpoint_path(cfg.aux.seed);
  const auto cache_path = cfg.paths.aux_cache_path(cfg.aux.seed);
  model::save_checkpoint(fl, fl_path);
  model::save_checkpoint(fn, fn_path);
  const aux::AuxPredictionCache cache = aux::cache_predictions(fl, fn, train, aux_echo(cfg));
  aux::save_cache(cache, cache_path);
  m.add("train_data", train_path);
  m.add("fl_checkpoint", fl_path);
  m.add("fn_checkpoint", fn_path);
  m.add("aux_cache", cache_path);

  out << "fl -> " << fl_path.string() << '\n'
      << "fn -> " << fn_path.string() << '\n'
      << "cache -> " << cache_path.string() << " (dataset crc32 " << hex32(cache.dataset_checksum)
      << ")\n";
  m.finished_utc = utc_now();
  return m;
}

RunManifest cmd_train(const ExperimentConfig& cfg, std::ostream& out, eval::EvalReport* report) {
  RunManifest m = start_manifest(std::string("train --arm ") + std::string(to_string(cfg.train.arm)),
                                 cfg);
  data::Dataset train;
  data::Dataset test;
  load_datasets(cfg, train, test);
  const auto cache_path = cfg.paths.aux_cache_path(cfg.aux.seed);
  const aux::AuxPredictionCache cache = aux::load_cache(cache_path);
  cache.verify_binding(train);
  m.add("train_data", cfg.paths.train_data_path(cfg.dataset.seed));
  m.add("test_data", cfg.paths.test_data_path(cfg.dataset.seed));
  m.add("aux_cache", cache_path);

  std::optional<train::AuxModels> aux_models;
  if (!train::is_trainable(cfg.train.arm)) {
    aux_models = train::AuxModels{model::load_checkpoint(cfg.paths.fl_checkpoint_path(cfg.aux.seed)),
                                  model::load_checkpoint(cfg.paths.fn_checkpoint_path(cfg.aux.seed))};
  }
  train::ArmOutcome outcome =
      train::run_arm(train, test, cache, aux_models ? &*aux_models : nullptr, cfg);

  if (outcome.params) {
    const auto ckpt = cfg.paths.checkpoint_path(cfg.train.arm, cfg.train.seed);
    const auto log_path = cfg.paths.log_path(cfg.train.arm, cfg.train.seed);
    model::save_checkpoint(*outcome.params, ckpt);
    outcome.log.checkpoint = ckpt.string();
    train::save_log(outcome.log, log_path);
    outcome.report.log_file = log_path.string();
    m.add("checkpoint", ckpt);
    m.add("training_log", log_path);
  }
  const auto results = cfg.paths.results_path();
  eval::append_report(results, outcome.report);
  m.add("results", results);

  const eval::EvalReport& r = outcome.report;
  out << "arm=" << r.arm << " seed=" << r.seed << " overall_acc=" << fixed(r.overall_acc, 2)
      << " many=" << fixed(r.many_acc, 2) << " medium=" << fixed(r.medium_acc, 2)
      << " few=" << fixed(r.few_acc, 2) << " macro_f1=" << fixed(r.macro_f1, 4)
      << " macro_auc=" << fixed(r.macro_auc, 4)
      << " noise_correction_rate=" << fixed(r.noise_correction_rate, 4) << '\n';
  if (report) *report = outcome.report;
  m.finished_utc = utc_now();
  return m;
}

const std::vector<std::string>& summary_metric_names() {
  static const std::vector<std::string> names = {
      "overall_acc", "many_acc", "medium_acc", "few_acc", "macro_f1", "macro_auc",
      "noise_correction_rate"};
  return names;
}

std::vector<ArmSummary> summarize(const std::vector<eval::EvalReport>& rows) {
  std::vector<std::string> arm_order;
  std::map<std::string, std::map<std::uint64_t, const eval::EvalReport*>> latest;
  for (const eval::EvalReport& r : rows) {
    if (!latest.count(r.arm)) arm_order.push_back(r.arm);
    latest[r.arm][r.seed] = &r;
  }
  std::vector<ArmSummary> out;
  for (const std::string& arm : arm_order) {
    ArmSummary s;
    s.arm = arm;
    s.seeds = latest[arm].size();
    for (auto field : summary_fields()) {
      std::vector<double> xs;
      for (const auto& [seed, r] : latest[arm])
        if (!std::isnan(r->*field)) xs.push_back(r->*field);
      MetricSummary ms{std::numeric_limits<double>::quiet_NaN(), 0.0};
      if (!xs.empty()) {
        double sum = 0.0;
        for (double x : xs) sum += x;
        ms.mean = sum / static_cast<double>(xs.size());
        if (xs.size() > 1) {
          double ss = 0.0;
          for (double x : xs) ss += (x - ms.mean) * (x - ms.mean);
          ms.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
        }
      }
      s.metrics.push_back(ms);
    }
    out.push_back(std::move(s));
  }
  return out;
}

void cmd_report(const std::filesystem::path& results, std::ostream& out,
                const std::optional<std::filesystem::path>& report_dir) {
  const std::vector<eval::EvalReport> rows = eval::read_reports(results);
  const std::vector<ArmSummary> summary = summarize(rows);
  const auto& names = summary_metric_names();
  const std::filesystem::path dir =
      report_dir ? *report_dir : (results.has_parent_path() ? results.parent_path() : ".");
  std::filesystem::create_directories(dir);

  constexpr int kArmWidth = 16;
  constexpr int kCellWidth = 20;
  out << std::left << std::setw(kArmWidth) << "arm" << std::setw(6) << "n";
  for (const auto& n : names) out << std::setw(kCellWidth) << n;
  out << '\n';
  std::ofstream csv(dir / "summary.csv", std::ios::trunc);
  csv << "arm,seeds";
  for (const auto& n : names) csv << ',' << n << "_mean," << n << "_std";
  csv << '\n';

  const ArmSummary* dsink = nullptr;
  const ArmSummary* ce = nullptr;
  for (const ArmSummary& s : summary) {
    if (s.arm == "dsink") dsink = &s;
    if (s.arm == "ce") ce = &s;
    out << std::setw(kArmWidth) << s.arm << std::setw(6) << s.seeds;
    csv << s.arm << ',' << s.seeds;
    for (std::size_t k = 0; k < names.size(); ++k) {
      const int digits = k < 4 ? 2 : 4;
      out << std::setw(kCellWidth)
          << (fixed(s.metrics[k].mean, digits) + " +/- " + fixed(s.metrics[k].std, digits));
      csv << ',' << fixed(s.metrics[k].mean, 6) << ',' << fixed(s.metrics[k].std, 6);
    }
    out << '\n';
    csv << '\n';
  }
  if (dsink && ce) {
    out << std::setw(kArmWidth) << "margin dsink-ce" << std::setw(6) << "";
    csv << "margin_dsink_minus_ce,";
    for (std::size_t k = 0; k < names.size(); ++k) {
      const double d = dsink->metrics[k].mean - ce->metrics[k].mean;
      out << std::setw(kCellWidth) << fixed(d, k < 4 ? 2 : 4);
      csv << ',' << fixed(d, 6) << ',';
    }
    out << '\n';
    csv << '\n';
  }
  if (!csv) throw Error(ErrorKind::kIo, "cannot write " + (dir / "summary.csv").string());

  std::ofstream curves(dir / "curves.csv", std::ios::trunc);
  curves << "arm,seed,epoch,lr,base_loss,dsink_loss,test_acc,noise_correction_rate\n";
  std::size_t written = 0;
  for (const ArmSummary& s : summary) {
    std::map<std::uint64_t, const eval::EvalReport*> last;
    for (const eval::EvalReport& r : rows)
      if (r.arm == s.arm) last[r.seed] = &r;
    for (const auto& [seed, rp] : last) {
      const eval::EvalReport& r = *rp;
      if (r.log_file.empty() || !std::filesystem::exists(r.log_file)) continue;
      const train::TrainingLog log = train::load_log(r.log_file);
      std::istringstream lines(train::to_csv(log));
      std::string line;
      std::getline(lines, line);  // header
      while (std::getline(lines, line)) curves << r.arm << ',' << r.seed << ',' << line << '\n';
      ++written;
    }
  }
  if (!curves) throw Error(ErrorKind::kIo, "cannot write " + (dir / "curves.csv").string());
  out << "wrote " << (dir / "summary.csv").string() << " and " << (dir / "curves.csv").string()
      << " (" << written << " training curves)\n";
}

}  // namespace dsink::cli
