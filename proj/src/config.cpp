#include "dsink/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "dsink/error.hpp"

namespace dsink {

namespace {

constexpr double kReferenceEpochs = 300.0;

struct ArmName {
  Arm arm;
  const char* name;
};

constexpr ArmName kArms[] = {
    {Arm::kCe, "ce"},
    {Arm::kDsink, "dsink"},
    {Arm::kNaiveDistill, "naive_distill"},
    {Arm::kEnsemble, "ensemble"},
    {Arm::kDsinkNoBase, "dsink_no_base"},
    {Arm::kDsinkNoFl, "dsink_no_fl"},
    {Arm::kAuxFl, "fl"},
    {Arm::kAuxFn, "fn"},
};

[[noreturn]] void config_error(const std::string& message) {
  throw Error(ErrorKind::kConfig, message);
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_value(const std::string& key, std::string_view text) {
  T value{};
  const char* begin = text.data();
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    config_error("bad value for " + key + ": '" + std::string(text) + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  config_error("bad value for " + key + ": '" + std::string(text) + "' (expected true/false)");
}

std::string fmt(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, end);
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, std::string_view)>;

void add_optimizer_keys(std::map<std::string, Setter>& t, const std::string& prefix,
                        OptimizerConfig& (*get)(ExperimentConfig&)) {
  t[prefix + "epochs"] = [get](auto& c, auto& k, auto v) { get(c).epochs = parse_value<int>(k, v); };
  t[prefix + "batch_size"] = [get](auto& c, auto& k, auto v) {
    get(c).batch_size = parse_value<int>(k, v);
  };
  t[prefix + "lr"] = [get](auto& c, auto& k, auto v) {
    get(c).schedule.initial = parse_value<double>(k, v);
  };
  t[prefix + "lr_decay_factor"] = [get](auto& c, auto& k, auto v) {
    get(c).schedule.factor = parse_value<double>(k, v);
  };
  t[prefix + "lr_first_decay_epoch"] = [get](auto& c, auto& k, auto v) {
    get(c).schedule.first_decay_epoch = parse_value<double>(k, v);
  };
  t[prefix + "lr_decay_every"] = [get](auto& c, auto& k, auto v) {
    get(c).schedule.decay_every = parse_value<double>(k, v);
  };
  t[prefix + "lr_epoch_scale"] = [get](auto& c, auto& k, auto v) {
    get(c).schedule.epoch_scale = parse_value<double>(k, v);
  };
  t[prefix + "momentum"] = [get](auto& c, auto& k, auto v) {
    get(c).sgd.momentum = parse_value<double>(k, v);
  };
  t[prefix + "weight_decay"] = [get](auto& c, auto& k, auto v) {
    get(c).sgd.weight_decay = parse_value<double>(k, v);
  };
  t[prefix + "arch"] = [get](auto& c, auto&, auto v) {
    get(c).arch = model::architecture_from_string(v);
  };
  t[prefix + "hidden_width"] = [get](auto& c, auto& k, auto v) {
    get(c).hidden_width = parse_value<int>(k, v);
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["dataset.num_classes"] = [](auto& c, auto& k, auto v) {
      c.dataset.num_classes = parse_value<int>(k, v);
    };
    t["dataset.base_per_class"] = [](auto& c, auto& k, auto v) {
      c.dataset.base_per_class = parse_value<int>(k, v);
    };
    t["dataset.imbalance_ratio"] = [](auto& c, auto& k, auto v) {
      c.dataset.imbalance_ratio = parse_value<double>(k, v);
    };
    t["dataset.noise_mode"] = [](auto& c, auto&, auto v) {
      c.dataset.noise_mode = data::noise_mode_from_string(v);
    };
    t["dataset.noise_ratio"] = [](auto& c, auto& k, auto v) {
      c.dataset.noise_ratio = parse_value<double>(k, v);
    };
    t["dataset.feature_dim"] = [](auto& c, auto& k, auto v) {
      c.dataset.feature_dim = parse_value<int>(k, v);
    };
    t["dataset.class_separation"] = [](auto& c, auto& k, auto v) {
      c.dataset.class_separation = parse_value<double>(k, v);
    };
    t["dataset.seed"] = [](auto& c, auto& k, auto v) {
      c.dataset.seed = parse_value<std::uint64_t>(k, v);
    };
    t["dataset.test_per_class"] = [](auto& c, auto& k, auto v) {
      c.dataset.test_per_class = parse_value<int>(k, v);
    };

    add_optimizer_keys(t, "aux.", [](ExperimentConfig& c) -> OptimizerConfig& {
      return c.aux.opt;
    });
    t["aux.seed"] = [](auto& c, auto& k, auto v) { c.aux.seed = parse_value<std::uint64_t>(k, v); };
    t["aux.la_tau"] = [](auto& c, auto& k, auto v) { c.aux.la_tau = parse_value<double>(k, v); };
    t["aux.keep_fraction"] = [](auto& c, auto& k, auto v) {
      c.aux.keep_fraction = parse_value<double>(k, v);
    };
    t["aux.warmup_fraction"] = [](auto& c, auto& k, auto v) {
      c.aux.warmup_fraction = parse_value<double>(k, v);
    };

    add_optimizer_keys(t, "train.", [](ExperimentConfig& c) -> OptimizerConfig& {
      return c.train.opt;
    });
    t["train.seed"] = [](auto& c, auto& k, auto v) {
      c.train.seed = parse_value<std::uint64_t>(k, v);
    };
    t["train.arm"] = [](auto& c, auto&, auto v) { c.train.arm = arm_from_string(v); };
    t["train.alpha"] = [](auto& c, auto& k, auto v) { c.train.alpha = parse_value<double>(k, v); };
    t["train.sinkhorn_iters"] = [](auto& c, auto& k, auto v) {
      c.train.sinkhorn_iters = parse_value<int>(k, v);
    };
    t["train.lambda"] = [](auto& c, auto& k, auto v) { c.train.lambda = parse_value<double>(k, v); };
    t["train.debug_invariants"] = [](auto& c, auto& k, auto v) {
      c.train.debug_invariants = parse_bool(k, v);
    };
    t["train.base_loss"] = [](auto&, auto& k, auto v) {
      if (v != "ce") config_error("bad value for " + k + ": only 'ce' is supported");
    };

    t["paths.out_dir"] = [](auto& c, auto&, auto v) { c.paths.out_dir = std::string(v); };
    t["paths.train_data"] = [](auto& c, auto&, auto v) { c.paths.train_data = std::string(v); };
    t["paths.test_data"] = [](auto& c, auto&, auto v) { c.paths.test_data = std::string(v); };
    t["paths.aux_cache"] = [](auto& c, auto&, auto v) { c.paths.aux_cache = std::string(v); };
    t["paths.results"] = [](auto& c, auto&, auto v) { c.paths.results = std::string(v); };
    return t;
  }();
  return table;
}

void validate_optimizer(const OptimizerConfig& o, const std::string& section) {
  if (o.epochs < 1) config_error(section + "epochs must be at least 1");
  if (o.batch_size < 1) config_error(section + "batch_size must be at least 1");
  if (!(o.schedule.initial > 0.0)) config_error(section + "lr must be positive");
  if (!(o.schedule.factor > 0.0 && o.schedule.factor <= 1.0))
    config_error(section + "lr_decay_factor must be in (0, 1]");
  if (!(o.schedule.decay_every > 0.0)) config_error(section + "lr_decay_every must be positive");
  if (!(o.sgd.momentum >= 0.0 && o.sgd.momentum < 1.0))
    config_error(section + "momentum must be in [0, 1)");
  if (!(o.sgd.weight_decay >= 0.0)) config_error(section + "weight_decay must be nonnegative");
  if (o.arch == model::Architecture::kMlp1 && o.hidden_width < 1)
    config_error(section + "hidden_width must be at least 1 for mlp1");
}

void echo_optimizer(std::ostringstream& os, const OptimizerConfig& o, const std::string& prefix) {
  os << prefix << "epochs=" << o.epochs << '\n'
     << prefix << "batch_size=" << o.batch_size << '\n'
     << prefix << "lr=" << fmt(o.schedule.initial) << '\n'
     << prefix << "lr_decay_factor=" << fmt(o.schedule.factor) << '\n'
     << prefix << "lr_first_decay_epoch=" << fmt(o.schedule.first_decay_epoch) << '\n'
     << prefix << "lr_decay_every=" << fmt(o.schedule.decay_every) << '\n'
     << prefix << "lr_epoch_scale=" << fmt(o.schedule.epoch_scale) << '\n'
     << prefix << "momentum=" << fmt(o.sgd.momentum) << '\n'
     << prefix << "weight_decay=" << fmt(o.sgd.weight_decay) << '\n'
     << prefix << "arch=" << model::to_string(o.arch) << '\n'
     << prefix << "hidden_width=" << o.hidden_width << '\n';
}

}  // namespace

std::string_view to_string(Arm arm) {
  for (const auto& a : kArms)
    if (a.arm == arm) return a.name;
  return "unknown";
}

Arm arm_from_string(std::string_view s) {
  for (const auto& a : kArms)
    if (s == a.name) return a.arm;
  std::string valid;
  for (const auto& a : kArms) valid += (valid.empty() ? "" : ", ") + std::string(a.name);
  throw Error(ErrorKind::kConfig, "unknown arm '" + std::string(s) + "' (valid arms: " + valid + ")");
}

const std::vector<std::string>& arm_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& a : kArms) n.emplace_back(a.name);
    return n;
  }();
  return names;
}

double AuxConfig::resolved_keep_fraction(const data::DatasetRecipe& recipe) const {
  if (keep_fraction) return *keep_fraction;
  return recipe.noise_mode == data::NoiseMode::kNone ? 1.0 : 1.0 - recipe.noise_ratio;
}

namespace {
std::string seed_suffix(std::uint64_t seed) { return "_seed" + std::to_string(seed); }
}  // namespace

std::filesystem::path PathConfig::train_data_path(std::uint64_t dataset_seed) const {
  return train_data.empty() ? out_dir / "data" / ("train" + seed_suffix(dataset_seed) + ".dsnk")
                            : train_data;
}
std::filesystem::path PathConfig::test_data_path(std::uint64_t dataset_seed) const {
  return test_data.empty() ? out_dir / "data" / ("test" + seed_suffix(dataset_seed) + ".dsnk")
                           : test_data;
}
std::filesystem::path PathConfig::aux_cache_path(std::uint64_t aux_seed) const {
  return aux_cache.empty() ? out_dir / "aux" / ("cache" + seed_suffix(aux_seed) + ".dsnc")
                           : aux_cache;
}
std::filesystem::path PathConfig::fl_checkpoint_path(std::uint64_t aux_seed) const {
  return out_dir / "aux" / ("fl" + seed_suffix(aux_seed) + ".ckpt");
}
std::filesystem::path PathConfig::fn_checkpoint_path(std::uint64_t aux_seed) const {
  return out_dir / "aux" / ("fn" + seed_suffix(aux_seed) + ".ckpt");
}
std::filesystem::path PathConfig::results_path() const {
  return results.empty() ? out_dir / "results.csv" : results;
}
std::filesystem::path PathConfig::checkpoint_path(Arm arm, std::uint64_t seed) const {
  return out_dir / "checkpoints" / (std::string(to_string(arm)) + seed_suffix(seed) + ".ckpt");
}
std::filesystem::path PathConfig::log_path(Arm arm, std::uint64_t seed) const {
  return out_dir / "logs" / (std::string(to_string(arm)) + seed_suffix(seed) + ".csv");
}

void ExperimentConfig::validate() const {
  dataset.validate();
  validate_optimizer(aux.opt, "aux.");
  validate_optimizer(train.opt, "train.");
  if (aux.keep_fraction && !(*aux.keep_fraction > 0.0 && *aux.keep_fraction <= 1.0))
    config_error("aux.keep_fraction must be in (0, 1]");
  if (!(aux.warmup_fraction >= 0.0 && aux.warmup_fraction <= 1.0))
    config_error("aux.warmup_fraction must be in [0, 1]");
  if (!(aux.la_tau >= 0.0)) config_error("aux.la_tau must be nonnegative");
  if (!(train.alpha >= 0.0)) config_error("train.alpha must be nonnegative");
  if (train.sinkhorn_iters < 1) config_error("train.sinkhorn_iters must be at least 1");
  if (!(train.lambda > 0.0)) config_error("train.lambda must be positive");
}

void ExperimentConfig::set_seed(std::uint64_t seed) {
  dataset.seed = seed;
  aux.seed = seed;
  train.seed = seed;
}

std::string ExperimentConfig::echo() const {
  std::ostringstream os;
  std::string recipe = dataset.echo();
  std::istringstream lines(recipe);
  for (std::string line; std::getline(lines, line);) os << "dataset." << line << '\n';
  echo_optimizer(os, aux.opt, "aux.");
  os << "aux.seed=" << aux.seed << '\n'
     << "aux.la_tau=" << fmt(aux.la_tau) << '\n'
     << "aux.keep_fraction=" << fmt(aux.resolved_keep_fraction(dataset)) << '\n'
     << "aux.warmup_fraction=" << fmt(aux.warmup_fraction) << '\n';
  echo_optimizer(os, train.opt, "train.");
  os << "train.seed=" << train.seed << '\n'
     << "train.arm=" << to_string(train.arm) << '\n'
     << "train.alpha=" << fmt(train.alpha) << '\n'
     << "train.sinkhorn_iters=" << train.sinkhorn_iters << '\n'
     << "train.lambda=" << fmt(train.lambda) << '\n'
     << "train.debug_invariants=" << (train.debug_invariants ? "true" : "false") << '\n'
     << "train.base_loss=ce\n";
  return os.str();
}

ExperimentConfig parse_config(std::string_view text, const std::string& origin) {
  ExperimentConfig cfg;
  // Unset epoch_scale is derived from the epoch budget below.
  cfg.aux.opt.schedule.epoch_scale = 0.0;
  cfg.train.opt.schedule.epoch_scale = 0.0;

  std::set<std::string> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      config_error(origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      config_error(origin + ":" + std::to_string(line_no) + ": invalid config key '" + key + "'");
    }
    if (!seen.insert(key).second) {
      config_error(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    it->second(cfg, key, value);
  }
  if (!seen.count("dataset.num_classes")) {
    config_error(origin + ": missing required key dataset.num_classes");
  }
  for (OptimizerConfig* o : {&cfg.aux.opt, &cfg.train.opt}) {
    if (o->schedule.epoch_scale <= 0.0) o->schedule.epoch_scale = o->epochs / kReferenceEpochs;
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

}  // namespace dsink
