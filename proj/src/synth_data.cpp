#include "dsink/synth_data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dsink/binary_io.hpp"
#include "dsink/error.hpp"
#include "dsink/random.hpp"

namespace dsink::data {

namespace {

enum Stream : std::uint64_t { kGeometry = 1, kTrainSamples = 2, kTestSamples = 3, kNoise = 4 };

void require_recipe(bool ok, const std::string& message) {
  if (!ok) throw Error(ErrorKind::kConfig, "invalid dataset recipe: " + message);
}

std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, end);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw Error(ErrorKind::kIo, "recipe echo: bad value for " + std::string(key) + ": '" +
                                    std::string(text) + "'");
  }
  return value;
}

// Unit directions for the class means: orthonormal when d >= C.
Eigen::MatrixXd class_directions(int dim, int classes, Rng& rng) {
  Eigen::MatrixXd raw(dim, classes);
  for (Eigen::Index j = 0; j < raw.cols(); ++j)
    for (Eigen::Index i = 0; i < raw.rows(); ++i) raw(i, j) = rng.normal();
  if (dim >= classes) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
    return qr.householderQ() * Eigen::MatrixXd::Identity(dim, classes);
  }
  raw.colwise().normalize();
  return raw;
}

}  // namespace

std::string_view to_string(NoiseMode mode) {
  switch (mode) {
    case NoiseMode::kNone:
      return "none";
    case NoiseMode::kSymmetric:
      return "symmetric";
    case NoiseMode::kAsymmetric:
      return "asymmetric";
  }
  return "none";
}

NoiseMode noise_mode_from_string(std::string_view s) {
  if (s == "none") return NoiseMode::kNone;
  if (s == "symmetric" || s == "sym") return NoiseMode::kSymmetric;
  if (s == "asymmetric" || s == "asym") return NoiseMode::kAsymmetric;
  throw Error(ErrorKind::kConfig, "unknown noise mode '" + std::string(s) +
                                      "' (expected none, symmetric, asymmetric)");
}

void DatasetRecipe::validate() const {
  require_recipe(num_classes >= 2, "num_classes must be at least 2");
  require_recipe(base_per_class >= 1, "base_per_class must be at least 1");
  require_recipe(std::isfinite(imbalance_ratio) && imbalance_ratio >= 1.0,
                 "imbalance_ratio must be >= 1");
  require_recipe(static_cast<double>(base_per_class) / imbalance_ratio >= 1.0,
                 "base_per_class / imbalance_ratio must be >= 1 (rarest class empty)");
  require_recipe(noise_ratio >= 0.0 && noise_ratio < 1.0, "noise_ratio must be in [0, 1)");
  require_recipe(feature_dim >= 1, "feature_dim must be at least 1");
  require_recipe(std::isfinite(class_separation) && class_separation > 0.0,
                 "class_separation must be positive");
  require_recipe(test_per_class >= 1, "test_per_class must be at least 1");
}

std::string DatasetRecipe::echo() const {
  std::ostringstream os;
  os << "num_classes=" << num_classes << '\n'
     << "base_per_class=" << base_per_class << '\n'
     << "imbalance_ratio=" << format_double(imbalance_ratio) << '\n'
     << "noise_mode=" << to_string(noise_mode) << '\n'
     << "noise_ratio=" << format_double(noise_ratio) << '\n'
     << "feature_dim=" << feature_dim << '\n'
     << "class_separation=" << format_double(class_separation) << '\n'
     << "seed=" << seed << '\n'
     << "test_per_class=" << test_per_class << '\n';
  return os.str();
}

DatasetRecipe DatasetRecipe::from_echo(std::string_view text) {
  DatasetRecipe r;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorKind::kIo, "recipe echo: malformed line '" + std::string(line) + "'");
    }
    const auto key = line.substr(0, eq);
    const auto value = line.substr(eq + 1);
    if (key == "num_classes") r.num_classes = parse_number<int>(key, value);
    else if (key == "base_per_class") r.base_per_class = parse_number<int>(key, value);
    else if (key == "imbalance_ratio") r.imbalance_ratio = parse_number<double>(key, value);
    else if (key == "noise_mode") r.noise_mode = noise_mode_from_string(value);
    else if (key == "noise_ratio") r.noise_ratio = parse_number<double>(key, value);
    else if (key == "feature_dim") r.feature_dim = parse_number<int>(key, value);
    else if (key == "class_separation") r.class_separation = parse_number<double>(key, value);
    else if (key == "seed") r.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "test_per_class") r.test_per_class = parse_number<int>(key, value);
    else throw Error(ErrorKind::kIo, "recipe echo: unknown key '" + std::string(key) + "'");
  }
  return r;
}

bool operator==(const Dataset& a, const Dataset& b) {
  if (a.features.rows() != b.features.rows() || a.features.cols() != b.features.cols()) return false;
  const auto n = static_cast<std::size_t>(a.features.size());
  return std::equal(a.features.data(), a.features.data() + n, b.features.data(),
                    [](double x, double y) { return std::bit_cast<std::uint64_t>(x) ==
                                                    std::bit_cast<std::uint64_t>(y); }) &&
         a.observed_labels == b.observed_labels && a.true_labels == b.true_labels &&
         a.class_counts == b.class_counts && a.split == b.split && a.recipe == b.recipe;
}

std::vector<std::size_t> sample_longtail_counts(const DatasetRecipe& recipe) {
  recipe.validate();
  const int classes = recipe.num_classes;
  std::vector<std::size_t> counts(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    const double exponent = classes > 1 ? -static_cast<double>(c) / (classes - 1) : 0.0;
    const double raw = recipe.base_per_class * std::pow(recipe.imbalance_ratio, exponent);
    counts[static_cast<std::size_t>(c)] =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(raw + 0.5)));
  }
  return counts;
}

std::vector<std::uint32_t> inject_noise(std::span<const std::uint32_t> labels, NoiseMode mode,
                                        double ratio, int num_classes, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "noise ratio must be in [0, 1)");
  }
  std::vector<std::uint32_t> out(labels.begin(), labels.end());
  if (mode == NoiseMode::kNone || ratio == 0.0 || out.empty()) return out;
  if (num_classes < 2) {
    throw Error(ErrorKind::kInvalidArgument, "label noise needs at least two classes");
  }

  Rng rng(seed);
  std::vector<std::size_t> order(out.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  const auto flips = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(out.size()) + 0.5));
  const auto classes = static_cast<std::uint32_t>(num_classes);
  for (std::size_t k = 0; k < flips; ++k) {
    std::uint32_t& y = out[order[k]];
    if (mode == NoiseMode::kAsymmetric) {
      y = (y + 1) % classes;
    } else {
      // Uniform over the other C - 1 classes.
      const auto draw = static_cast<std::uint32_t>(rng.below(classes - 1));
      y = draw >= y ? draw + 1 : draw;
    }
  }
  return out;
}

Dataset generate(const DatasetRecipe& recipe, Split split) {
  recipe.validate();
  const int classes = recipe.num_classes;
  const int dim = recipe.feature_dim;

  Rng geometry(mix_seed(recipe.seed, kGeometry));
  const Eigen::MatrixXd means =
      class_directions(dim, classes, geometry) * (recipe.class_separation / std::sqrt(2.0));

  std::vector<std::size_t> counts =
      split == Split::kTrain
          ? sample_longtail_counts(recipe)
          : std::vector<std::size_t>(static_cast<std::size_t>(classes),
                                     static_cast<std::size_t>(recipe.test_per_class));

  std::vector<std::uint32_t> labels;
  for (int c = 0; c < classes; ++c)
    labels.insert(labels.end(), counts[static_cast<std::size_t>(c)], static_cast<std::uint32_t>(c));

  Rng sampler(mix_seed(recipe.seed, split == Split::kTrain ? kTrainSamples : kTestSamples));
  sampler.shuffle(labels);

  Dataset ds;
  ds.split = split;
  ds.recipe = recipe;
  ds.class_counts = std::move(counts);
  ds.features.resize(dim, static_cast<Eigen::Index>(labels.size()));
  for (Eigen::Index i = 0; i < ds.features.cols(); ++i) {
    const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]);
    for (Eigen::Index k = 0; k < dim; ++k) ds.features(k, i) = means(k, y) + sampler.normal();
  }
  ds.true_labels = labels;
  ds.observed_labels = split == Split::kTrain
                           ? inject_noise(labels, recipe.noise_mode, recipe.noise_ratio, classes,
                                          mix_seed(recipe.seed, kNoise))
                           : labels;
  return ds;
}

double measure_nr(const Dataset& ds) {
  if (ds.size() == 0) return 0.0;
  std::size_t mismatched = 0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    mismatched += ds.observed_labels[i] != ds.true_labels[i];
  return static_cast<double>(mismatched) / static_cast<double>(ds.size());
}

double measure_ir(const Dataset& ds) {
  if (ds.class_counts.empty()) throw Error(ErrorKind::kInvalidArgument, "dataset has no classes");
  const auto [lo, hi] = std::minmax_element(ds.class_counts.begin(), ds.class_counts.end());
  if (*lo == 0) {
    const auto c = std::distance(ds.class_counts.begin(), lo);
    throw Error(ErrorKind::kInvalidArgument, "class " + std::to_string(c) + " is empty");
  }
  return static_cast<double>(*hi) / static_cast<double>(*lo);
}

std::vector<std::size_t> observed_counts(const Dataset& ds) {
  std::vector<std::size_t> counts(ds.class_counts.size(), 0);
  for (std::uint32_t y : ds.observed_labels) ++counts.at(y);
  return counts;
}

std::vector<std::uint8_t> serialize(const Dataset& ds) {
  io::ByteWriter w;
  w.put_bytes(std::string_view(kDatasetMagic, 4));
  w.put_u16(kDatasetFormatVersion);
  w.put_u64(ds.size());
  w.put_u64(ds.class_counts.size());
  w.put_u64(static_cast<std::uint64_t>(ds.features.rows()));
  w.put_u8(static_cast<std::uint8_t>(ds.split));
  w.put_string(ds.recipe.echo());
  // Column-major d x N is row-major N x d.
  const double* x = ds.features.data();
  for (Eigen::Index k = 0; k < ds.features.size(); ++k) w.put_f64(x[k]);
  for (std::uint32_t y : ds.observed_labels) w.put_u32(y);
  for (std::uint32_t y : ds.true_labels) w.put_u32(y);
  w.seal();
  return w.bytes();
}

Dataset deserialize(std::span<const std::uint8_t> bytes, const std::string& what) {
  if (bytes.size() < 4 || !std::equal(kDatasetMagic, kDatasetMagic + 4, bytes.begin())) {
    throw Error(ErrorKind::kIo, what + ": not a dataset file (bad magic)");
  }
  // Structure is checked before the CRC so truncation reads as malformed.
  io::ByteReader r(bytes, what);
  r.take_bytes(4);
  const std::uint16_t version = r.take_u16();
  if (version != kDatasetFormatVersion) {
    throw Error(ErrorKind::kIo, what + ": unsupported format version " + std::to_string(version));
  }
  const std::uint64_t n = r.take_u64();
  const std::uint64_t classes = r.take_u64();
  const std::uint64_t dim = r.take_u64();
  const std::uint8_t split = r.take_u8();
  if (split > 1) throw Error(ErrorKind::kIo, what + ": bad split flag");
  // Payload size check before allocating.
  if (dim != 0 && n > r.remaining() / (8 * dim)) {
    throw Error(ErrorKind::kIo, what + ": header sizes exceed file length");
  }

  Dataset ds;
  ds.split = static_cast<Split>(split);
  ds.recipe = DatasetRecipe::from_echo(r.take_string());
  ds.features.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(n));
  double* x = ds.features.data();
  for (Eigen::Index k = 0; k < ds.features.size(); ++k) x[k] = r.take_f64();
  ds.observed_labels.resize(n);
  ds.true_labels.resize(n);
  for (auto& y : ds.observed_labels) y = r.take_u32();
  for (auto& y : ds.true_labels) y = r.take_u32();
  if (r.remaining() != 4) throw Error(ErrorKind::kIo, what + ": malformed payload length");
  io::verify_sealed(bytes, what);

  ds.class_counts.assign(classes, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (ds.true_labels[i] >= classes || ds.observed_labels[i] >= classes) {
      throw Error(ErrorKind::kIo, what + ": label out of range at sample " + std::to_string(i));
    }
    ++ds.class_counts[ds.true_labels[i]];
  }
  return ds;
}

void save(const Dataset& ds, const std::filesystem::path& path) {
  io::write_file(path, serialize(ds));
}

Dataset load(const std::filesystem::path& path) {
  return deserialize(io::read_file(path), path.string());
}

std::uint32_t checksum(const Dataset& ds) {
  const auto bytes = serialize(ds);
  return io::crc32(std::span(bytes).first(bytes.size() - 4));
}

}  // namespace dsink::data
