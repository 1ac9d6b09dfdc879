#include "dsink/auxiliaries.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "dsink/batching.hpp"
#include "dsink/binary_io.hpp"
#include "dsink/error.hpp"
#include "dsink/random.hpp"

namespace dsink::aux {

namespace {

constexpr std::uint64_t kFlStream = 11;
constexpr std::uint64_t kFnStream = 12;
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

void put_matrix(io::ByteWriter& w, const Eigen::MatrixXd& m) {
  for (Eigen::Index k = 0; k < m.size(); ++k) w.put_f64(m.data()[k]);
}

Eigen::MatrixXd take_matrix(io::ByteReader& r, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = r.take_f64();
  return m;
}

bool bitwise_equal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::equal(a.data(), a.data() + a.size(), b.data(), [](double x, double y) {
           return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
         });
}

}  // namespace

std::vector<std::size_t> small_loss_selection(const Eigen::VectorXd& losses, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "keep fraction must be in (0, 1]");
  }
  const auto n = static_cast<std::size_t>(losses.size());
  const auto keep = static_cast<std::size_t>(std::llround(keep_fraction * static_cast<double>(n)));
  if (keep == 0) {
    throw Error(ErrorKind::kInvalidArgument,
                "keep fraction " + std::to_string(keep_fraction) + " selects no samples out of " +
                    std::to_string(n));
  }
  std::vector<std::size_t> order = all_indices(n);
  if (keep < n) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return losses(static_cast<Eigen::Index>(a)) < losses(static_cast<Eigen::Index>(b));
    });
    order.resize(keep);
    std::sort(order.begin(), order.end());
  }
  return order;
}

Eigen::VectorXd log_prior_shift(const data::Dataset& ds, double tau) {
  const std::vector<std::size_t> counts = data::observed_counts(ds);
  Eigen::VectorXd shift(static_cast<Eigen::Index>(counts.size()));
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) {
      throw Error(ErrorKind::kInvalidArgument,
                  "class " + std::to_string(c) + " has no observed training labels");
    }
    shift(static_cast<Eigen::Index>(c)) =
        tau * std::log(static_cast<double>(counts[c]) / static_cast<double>(ds.size()));
  }
  return shift;
}

FitResult fit_classifier(const data::Dataset& ds, const FitOptions& options) {
  if (ds.size() == 0) throw Error(ErrorKind::kInvalidArgument, "cannot train on an empty dataset");
  const OptimizerConfig& opt = options.opt;
  FitResult out;
  out.params = model::init_params(opt.arch, ds.feature_dim(), ds.num_classes(), opt.hidden_width,
                                  mix_seed(options.seed, kInitStream));
  model::GradientBuffer velocity = model::GradientBuffer::zeros_like(out.params);
  Rng rng(mix_seed(options.seed, kShuffleStream));
  model::SgdHyper hyper = opt.sgd;
  std::vector<std::size_t> selected = all_indices(ds.size());

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    if (epoch >= options.warmup_epochs && options.keep_fraction < 1.0) {
      const Eigen::VectorXd losses =
          model::per_sample_ce(out.params, ds.features, ds.observed_labels);
      selected = small_loss_selection(losses, options.keep_fraction);
    }
    hyper.lr = opt.schedule.at(epoch);
    for (const auto& batch : epoch_batches(selected, static_cast<std::size_t>(opt.batch_size), rng)) {
      const Eigen::MatrixXd x = gather_columns(ds.features, batch);
      const std::vector<std::uint32_t> y = gather(ds.observed_labels, batch);
      const model::LossGrad lg = model::ce_loss_grad(out.params, x, y, options.logit_shift);
      if (!std::isfinite(lg.loss) || !lg.grad.all_finite()) {
        throw Error(ErrorKind::kNumerical,
                    "nonfinite auxiliary loss at epoch " + std::to_string(epoch));
      }
      model::sgd_step(out.params, lg.grad, hyper, velocity);
    }
  }
  out.last_kept.assign(ds.size(), 0);
  for (std::size_t i : selected) out.last_kept[i] = 1;
  return out;
}

std::uint64_t fl_seed(const ExperimentConfig& cfg) { return mix_seed(cfg.aux.seed, kFlStream); }
std::uint64_t fn_seed(const ExperimentConfig& cfg) { return mix_seed(cfg.aux.seed, kFnStream); }

FitOptions fl_options(const data::Dataset& ds, const ExperimentConfig& cfg) {
  FitOptions o;
  o.opt = cfg.aux.opt;
  o.seed = fl_seed(cfg);
  o.logit_shift = log_prior_shift(ds, cfg.aux.la_tau);
  return o;
}

FitOptions fn_options(const data::Dataset&, const ExperimentConfig& cfg) {
  FitOptions o;
  o.opt = cfg.aux.opt;
  o.seed = fn_seed(cfg);
  o.keep_fraction = cfg.aux.resolved_keep_fraction(cfg.dataset);
  o.warmup_epochs =
      static_cast<int>(std::lround(cfg.aux.warmup_fraction * static_cast<double>(cfg.aux.opt.epochs)));
  return o;
}

model::ClassifierParams train_fl(const data::Dataset& ds, const ExperimentConfig& cfg) {
  return fit_classifier(ds, fl_options(ds, cfg)).params;
}

model::ClassifierParams train_fn(const data::Dataset& ds, const ExperimentConfig& cfg,
                                 std::vector<std::uint8_t>* last_kept) {
  FitResult r = fit_classifier(ds, fn_options(ds, cfg));
  if (last_kept) *last_kept = std::move(r.last_kept);
  return std::move(r.params);
}

void AuxPredictionCache::verify_binding(const data::Dataset& ds) const {
  const std::uint32_t actual = data::checksum(ds);
  if (actual != dataset_checksum) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "prediction cache was built for dataset %08x, got %08x",
                  dataset_checksum, actual);
    throw Error(ErrorKind::kChecksum, buf);
  }
  if (fl_probs.cols() != static_cast<Eigen::Index>(ds.size()) ||
      fl_probs.rows() != ds.num_classes()) {
    throw Error(ErrorKind::kChecksum, "prediction cache shape does not match the dataset");
  }
}

bool operator==(const AuxPredictionCache& a, const AuxPredictionCache& b) {
  return a.dataset_checksum == b.dataset_checksum && a.config_echo == b.config_echo &&
         bitwise_equal(a.fl_probs, b.fl_probs) && bitwise_equal(a.fn_probs, b.fn_probs);
}

AuxPredictionCache cache_predictions(const model::ClassifierParams& fl,
                                     const model::ClassifierParams& fn, const data::Dataset& ds,
                                     std::string config_echo) {
  AuxPredictionCache cache;
  cache.fl_probs = model::forward(fl, ds.features);
  cache.fn_probs = model::forward(fn, ds.features);
  cache.dataset_checksum = data::checksum(ds);
  cache.config_echo = std::move(config_echo);
  return cache;
}

std::vector<std::uint8_t> serialize(const AuxPredictionCache& cache) {
  if (cache.fl_probs.rows() != cache.fn_probs.rows() ||
      cache.fl_probs.cols() != cache.fn_probs.cols()) {
    throw Error(ErrorKind::kInvalidArgument, "prediction cache matrices differ in shape");
  }
  io::ByteWriter w;
  w.put_bytes(std::string_view(kCacheMagic, 4));
  w.put_u16(kCacheFormatVersion);
  w.put_u32(cache.dataset_checksum);
  w.put_u64(static_cast<std::uint64_t>(cache.fl_probs.rows()));
  w.put_u64(static_cast<std::uint64_t>(cache.fl_probs.cols()));
  w.put_string(cache.config_echo);
  put_matrix(w, cache.fl_probs);
  put_matrix(w, cache.fn_probs);
  w.seal();
  return w.bytes();
}

AuxPredictionCache deserialize_cache(std::span<const std::uint8_t> bytes, const std::string& what) {
  io::ByteReader r(bytes, what);
  if (r.take_bytes(4) != std::string_view(kCacheMagic, 4)) {
    throw Error(ErrorKind::kIo, what + ": not a prediction cache file");
  }
  const std::uint16_t version = r.take_u16();
  if (version != kCacheFormatVersion) {
    throw Error(ErrorKind::kIo, what + ": unsupported format version " + std::to_string(version));
  }
  AuxPredictionCache cache;
  cache.dataset_checksum = r.take_u32();
  const std::uint64_t c = r.take_u64();
  const std::uint64_t n = r.take_u64();
  cache.config_echo = r.take_string();
  if (c == 0 || n == 0 || c > r.remaining() || n > r.remaining() / (16 * c)) {
    throw Error(ErrorKind::kIo, what + ": implausible matrix shape");
  }
  const auto rows = static_cast<Eigen::Index>(c);
  const auto cols = static_cast<Eigen::Index>(n);
  cache.fl_probs = take_matrix(r, rows, cols);
  cache.fn_probs = take_matrix(r, rows, cols);
  if (r.remaining() != 4) throw Error(ErrorKind::kIo, what + ": unexpected trailing bytes");
  io::verify_sealed(bytes, what);
  return cache;
}

void save_cache(const AuxPredictionCache& cache, const std::filesystem::path& path) {
  io::write_file(path, serialize(cache));
}

AuxPredictionCache load_cache(const std::filesystem::path& path) {
  return deserialize_cache(io::read_file(path), path.string());
}

}  // namespace dsink::aux
