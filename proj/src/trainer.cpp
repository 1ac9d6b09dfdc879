#include "dsink/trainer.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "dsink/batching.hpp"
#include "dsink/error.hpp"
#include "dsink/proxy_alloc.hpp"
#include "dsink/random.hpp"

namespace dsink::train {

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
// Debug check on each batch's proxy labels, per unit of batch mass.
constexpr double kDebugResidualTol = 1e-5;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool same_bits(double a, double b) {
  return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

std::string num(double x) {
  if (std::isnan(x)) return "nan";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, end);
}

double parse_num(std::string_view s, const std::string& where) {
  if (s == "nan") return kNaN;
  double x = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorKind::kIo, where + ": bad number '" + std::string(s) + "'");
  }
  return x;
}

double accuracy_percent(const Eigen::MatrixXd& probs, std::span<const std::uint32_t> labels) {
  const std::vector<std::uint32_t> pred = eval::predict_labels(probs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return 100.0 * static_cast<double>(hits) / static_cast<double>(pred.size());
}

bool has_noise(const data::Dataset& ds) {
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.observed_labels[i] != ds.true_labels[i]) return true;
  return false;
}

[[noreturn]] void numerical_abort(const char* what, int epoch, std::size_t batch) {
  throw Error(ErrorKind::kNumerical, std::string(what) + " at epoch " + std::to_string(epoch) +
                                         " batch " + std::to_string(batch));
}

}  // namespace

bool operator==(const EpochRecord& a, const EpochRecord& b) {
  return a.epoch == b.epoch && same_bits(a.lr, b.lr) && same_bits(a.base_loss, b.base_loss) &&
         same_bits(a.dsink_loss, b.dsink_loss) && same_bits(a.test_acc, b.test_acc) &&
         same_bits(a.noise_correction_rate, b.noise_correction_rate);
}

std::string log_csv_header() {
  return "epoch,lr,base_loss,dsink_loss,test_acc,noise_correction_rate";
}

std::string to_csv(const TrainingLog& log) {
  std::string out = log_csv_header() + "\n";
  for (const EpochRecord& r : log.epochs) {
    out += std::to_string(r.epoch) + "," + num(r.lr) + "," + num(r.base_loss) + "," +
           num(r.dsink_loss) + "," + num(r.test_acc) + "," + num(r.noise_correction_rate) + "\n";
  }
  return out;
}

TrainingLog parse_log_csv(std::string_view text, const std::string& origin) {
  TrainingLog log;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != log_csv_header()) {
    throw Error(ErrorKind::kIo, origin + ": missing training log header");
  }
  for (std::size_t line_no = 2; std::getline(in, line); ++line_no) {
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    std::vector<std::string_view> f;
    std::string_view rest = line;
    for (;;) {
      const auto comma = rest.find(',');
      f.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    if (f.size() != 6) throw Error(ErrorKind::kIo, where + ": expected 6 fields");
    EpochRecord r;
    const double epoch = parse_num(f[0], where);
    r.epoch = static_cast<int>(epoch);
    if (r.epoch != epoch || (!log.epochs.empty() && r.epoch != log.epochs.back().epoch + 1)) {
      throw Error(ErrorKind::kIo, where + ": epoch indices must increase by one");
    }
    r.lr = parse_num(f[1], where);
    r.base_loss = parse_num(f[2], where);
    r.dsink_loss = parse_num(f[3], where);
    r.test_acc = parse_num(f[4], where);
    r.noise_correction_rate = parse_num(f[5], where);
    log.epochs.push_back(r);
  }
  return log;
}

void save_log(const TrainingLog& log, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << to_csv(log);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
}

TrainingLog load_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_log_csv(ss.str(), path.string());
}

bool is_trainable(Arm arm) {
  switch (arm) {
    case Arm::kCe:
    case Arm::kDsink:
    case Arm::kNaiveDistill:
    case Arm::kDsinkNoBase:
    case Arm::kDsinkNoFl:
      return true;
    default:
      return false;
  }
}

TrainResult train_arm(const data::Dataset& ds, const aux::AuxPredictionCache& cache,
                      const ExperimentConfig& cfg, const data::Dataset* test) {
  const Arm arm = cfg.train.arm;
  if (!is_trainable(arm)) {
    throw Error(ErrorKind::kInvalidArgument,
                "arm " + std::string(to_string(arm)) + " has no trainable parameters");
  }
  cfg.validate();
  if (ds.size() == 0) throw Error(ErrorKind::kInvalidArgument, "cannot train on an empty dataset");
  const bool uses_cache = arm != Arm::kCe;
  if (uses_cache) cache.verify_binding(ds);
  if (test && test->feature_dim() != ds.feature_dim()) {
    throw Error(ErrorKind::kInvalidArgument, "test set feature dimension differs from training set");
  }

  const OptimizerConfig& opt = cfg.train.opt;
  const bool base_term = arm != Arm::kDsinkNoBase;
  const bool proxy_term = arm == Arm::kDsink || arm == Arm::kDsinkNoBase || arm == Arm::kDsinkNoFl;
  const double alpha = cfg.train.alpha;
  const bool measure_ncr = has_noise(ds);

  TrainResult out;
  out.params = model::init_params(opt.arch, ds.feature_dim(), ds.num_classes(), opt.hidden_width,
                                  mix_seed(cfg.train.seed, kInitStream));
  model::GradientBuffer velocity = model::GradientBuffer::zeros_like(out.params);
  Rng rng(mix_seed(cfg.train.seed, kShuffleStream));
  model::SgdHyper hyper = opt.sgd;

  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::int64_t batch_id = 0;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    hyper.lr = opt.schedule.at(epoch);
    double base_sum = 0.0;
    double distill_sum = 0.0;
    const auto batches = epoch_batches(all, static_cast<std::size_t>(opt.batch_size), rng);
    for (std::size_t b = 0; b < batches.size(); ++b, ++batch_id) {
      const auto& idx = batches[b];
      const Eigen::MatrixXd x = gather_columns(ds.features, idx);
      const std::vector<std::uint32_t> y = gather(ds.observed_labels, idx);
      const model::ForwardCache fc = model::forward_cached(out.params, x);
      const auto n = static_cast<double>(idx.size());

      const double base_loss = model::cross_entropy_columns(fc.logits, y).sum() / n;
      Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(fc.probs.rows(), fc.probs.cols());
      if (base_term) {
        dlogits = fc.probs;
        for (std::size_t i = 0; i < y.size(); ++i)
          dlogits(static_cast<Eigen::Index>(y[i]), static_cast<Eigen::Index>(i)) -= 1.0;
        dlogits /= n;
      }

      double distill_loss = kNaN;
      if (uses_cache) {
        proxy::BatchPredictions preds;
        preds.target = fc.probs;
        preds.noise_robust = gather_columns(cache.fn_probs, idx);
        preds.imbalance_robust =
            arm == Arm::kDsinkNoFl ? fc.probs : gather_columns(cache.fl_probs, idx);
        Eigen::MatrixXd dterm;
        if (proxy_term) {
          proxy::AllocateOptions ao;
          ao.iters = cfg.train.sinkhorn_iters;
          ao.lambda = cfg.train.lambda;
          ao.batch_id = batch_id;
          const proxy::ProxyLabels q = proxy::allocate_proxies(preds, ao);
          if (cfg.train.debug_invariants) {
            if (!q.q.allFinite() || q.q.minCoeff() <= 0.0 || !(q.residual <= kDebugResidualTol * n)) {
              numerical_abort(("proxy labels violate their marginals (residual " +
                               std::to_string(q.residual) + ")")
                                  .c_str(),
                              epoch, b);
            }
          }
          distill_loss = proxy::dsink_loss_kl(q.q, preds);
          // d/dz KL(q || softmax z) = p * sum(q) - q
          dterm = fc.probs * q.q.colwise().sum().asDiagonal();
          dterm -= q.q;
        } else {
          distill_loss = proxy::naive_distill_loss(preds);
          dterm = 2.0 * fc.probs - preds.imbalance_robust - preds.noise_robust;
        }
        dlogits += (alpha / n) * dterm;
      }

      const double total = (base_term ? base_loss : 0.0) + (uses_cache ? alpha * distill_loss : 0.0);
      if (!std::isfinite(total)) numerical_abort("nonfinite training loss", epoch, b);
      const model::GradientBuffer grad = model::backward(out.params, x, fc, dlogits);
      if (!grad.all_finite()) numerical_abort("nonfinite gradient", epoch, b);
      model::sgd_step(out.params, grad, hyper, velocity);
      if (!out.params.all_finite()) numerical_abort("nonfinite parameters", epoch, b);

      base_sum += base_loss * n;
      if (uses_cache) distill_sum += distill_loss * n;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = hyper.lr;
    rec.base_loss = base_sum / static_cast<double>(ds.size());
    rec.dsink_loss = uses_cache ? distill_sum / static_cast<double>(ds.size()) : kNaN;
    rec.test_acc = test ? accuracy_percent(model::forward(out.params, test->features),
                                           test->true_labels)
                        : kNaN;
    rec.noise_correction_rate =
        measure_ncr ? eval::noise_correction_rate(model::forward(out.params, ds.features), ds)
                    : kNaN;
    out.log.epochs.push_back(rec);
  }
  return out;
}

TrainResult train_dsink(const data::Dataset& ds, const aux::AuxPredictionCache& cache,
                        const ExperimentConfig& cfg, const data::Dataset* test) {
  ExperimentConfig c = cfg;
  c.train.arm = Arm::kDsink;
  return train_arm(ds, cache, c, test);
}

ArmOutcome run_arm(const data::Dataset& train, const data::Dataset& test,
                   const aux::AuxPredictionCache& cache, const AuxModels* aux_models,
                   const ExperimentConfig& cfg) {
  const Arm arm = cfg.train.arm;
  ArmOutcome out;
  if (is_trainable(arm)) {
    TrainResult r = train_arm(train, cache, cfg, &test);
    out.train_probs = model::forward(r.params, train.features);
    out.test_probs = model::forward(r.params, test.features);
    out.params = std::move(r.params);
    out.log = std::move(r.log);
  } else {
    if (!aux_models) {
      throw Error(ErrorKind::kInvalidArgument,
                  "arm " + std::string(to_string(arm)) + " needs the auxiliary checkpoints");
    }
    cache.verify_binding(train);
    switch (arm) {
      case Arm::kAuxFl:
        out.train_probs = cache.fl_probs;
        out.test_probs = model::forward(aux_models->fl, test.features);
        break;
      case Arm::kAuxFn:
        out.train_probs = cache.fn_probs;
        out.test_probs = model::forward(aux_models->fn, test.features);
        break;
      default:  // ensemble
        out.train_probs = 0.5 * (cache.fl_probs + cache.fn_probs);
        out.test_probs = 0.5 * (model::forward(aux_models->fl, test.features) +
                                model::forward(aux_models->fn, test.features));
        break;
    }
  }
  out.report = eval::evaluate(out.test_probs, test.true_labels, train.class_counts);
  out.report.arm = std::string(to_string(arm));
  out.report.seed = cfg.train.seed;
  out.report.recipe = eval::recipe_tag(train.recipe);
  out.report.noise_correction_rate =
      has_noise(train) ? eval::noise_correction_rate(out.train_probs, train) : kNaN;
  return out;
}

}  // namespace dsink::train
