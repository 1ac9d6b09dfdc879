#include "dsink/models.hpp"

#include <cmath>
#include <string>

#include "dsink/binary_io.hpp"
#include "dsink/error.hpp"
#include "dsink/random.hpp"

namespace dsink::model {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw Error(ErrorKind::kInvalidArgument, message);
}

void check_input(const ClassifierParams& params, const Eigen::MatrixXd& x) {
  require(!params.layers.empty(), "classifier has no layers");
  require(x.rows() == params.input_dim(),
          "feature dimension " + std::to_string(x.rows()) + " does not match model input " +
              std::to_string(params.input_dim()));
  if (!x.allFinite()) throw Error(ErrorKind::kNumerical, "nonfinite feature value");
}

// Column-wise softmax, max-subtracted.
Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.cols(); ++i) {
    const double m = z.col(i).maxCoeff();
    p.col(i) = (z.col(i).array() - m).exp();
    p.col(i) /= p.col(i).sum();
  }
  return p;
}

// log softmax of one column.
Eigen::VectorXd log_softmax(const Eigen::Ref<const Eigen::VectorXd>& z) {
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  return z.array() - lse;
}

void check_targets(const ClassifierParams& params, const Eigen::MatrixXd& x,
                   const Eigen::MatrixXd& t) {
  require(t.rows() == params.num_classes() && t.cols() == x.cols(),
          "target matrix shape does not match the batch");
  require(t.allFinite(), "target matrix contains a nonfinite entry");
}

void put_matrix(io::ByteWriter& w, const Eigen::MatrixXd& m) {
  for (Eigen::Index k = 0; k < m.size(); ++k) w.put_f64(m.data()[k]);
}

void take_matrix(io::ByteReader& r, Eigen::MatrixXd& m) {
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = r.take_f64();
}

}  // namespace

std::string_view to_string(Architecture arch) {
  return arch == Architecture::kMlp1 ? "mlp1" : "linear";
}

Architecture architecture_from_string(std::string_view s) {
  if (s == "linear") return Architecture::kLinear;
  if (s == "mlp1") return Architecture::kMlp1;
  throw Error(ErrorKind::kConfig, "unknown architecture '" + std::string(s) +
                                      "' (expected linear or mlp1)");
}

int ClassifierParams::input_dim() const {
  return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols());
}

int ClassifierParams::num_classes() const {
  return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows());
}

std::size_t ClassifierParams::num_parameters() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

bool ClassifierParams::all_finite() const {
  for (const auto& l : layers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

bool operator==(const ClassifierParams& a, const ClassifierParams& b) {
  if (a.arch != b.arch || a.hidden_width != b.hidden_width || a.layers.size() != b.layers.size())
    return false;
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    const Layer& x = a.layers[k];
    const Layer& y = b.layers[k];
    if (x.weight.rows() != y.weight.rows() || x.weight.cols() != y.weight.cols() ||
        x.bias.size() != y.bias.size())
      return false;
    if (x.weight != y.weight || x.bias != y.bias) return false;
  }
  return true;
}

ClassifierParams init_params(Architecture arch, int input_dim, int num_classes, int hidden_width,
                             std::uint64_t seed) {
  require(input_dim >= 1 && num_classes >= 1, "init_params: dimensions must be positive");
  ClassifierParams p;
  p.arch = arch;
  Rng rng(seed);
  auto make_layer = [&rng](int out, int in) {
    Layer l;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    l.weight.resize(out, in);
    for (Eigen::Index k = 0; k < l.weight.size(); ++k) l.weight.data()[k] = rng.uniform(-bound, bound);
    l.bias = Eigen::VectorXd::Zero(out);
    return l;
  };
  if (arch == Architecture::kLinear) {
    p.layers.push_back(make_layer(num_classes, input_dim));
  } else {
    require(hidden_width >= 1, "init_params: mlp1 needs hidden_width >= 1");
    p.hidden_width = hidden_width;
    p.layers.push_back(make_layer(hidden_width, input_dim));
    p.layers.push_back(make_layer(num_classes, hidden_width));
  }
  return p;
}

GradientBuffer GradientBuffer::zeros_like(const ClassifierParams& params) {
  GradientBuffer g;
  for (const auto& l : params.layers) {
    g.layers.push_back(Layer{Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                             Eigen::VectorXd::Zero(l.bias.size())});
  }
  return g;
}

void GradientBuffer::add(const GradientBuffer& other, double scale) {
  require(other.layers.size() == layers.size(), "gradient buffers differ in layer count");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    layers[k].weight += scale * other.layers[k].weight;
    layers[k].bias += scale * other.layers[k].bias;
  }
  accumulated += other.accumulated;
}

bool GradientBuffer::all_finite() const {
  for (const auto& l : layers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

Eigen::VectorXd flatten(std::span<const Layer> layers) {
  Eigen::Index n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  Eigen::VectorXd flat(n);
  Eigen::Index off = 0;
  for (const auto& l : layers) {
    flat.segment(off, l.weight.size()) = l.weight.reshaped();
    off += l.weight.size();
    flat.segment(off, l.bias.size()) = l.bias;
    off += l.bias.size();
  }
  return flat;
}

void unflatten(const Eigen::VectorXd& flat, std::span<Layer> layers) {
  Eigen::Index off = 0;
  for (auto& l : layers) {
    require(off + l.weight.size() + l.bias.size() <= flat.size(), "unflatten: vector too short");
    l.weight.reshaped() = flat.segment(off, l.weight.size());
    off += l.weight.size();
    l.bias = flat.segment(off, l.bias.size());
    off += l.bias.size();
  }
  require(off == flat.size(), "unflatten: vector too long");
}

ForwardCache forward_cached(const ClassifierParams& params, const Eigen::MatrixXd& x,
                            const Eigen::VectorXd& logit_shift) {
  check_input(params, x);
  ForwardCache cache;
  if (params.arch == Architecture::kLinear) {
    const Layer& l = params.layers[0];
    cache.logits = (l.weight * x).colwise() + l.bias;
  } else {
    const Layer& l1 = params.layers[0];
    const Layer& l2 = params.layers[1];
    cache.hidden = ((l1.weight * x).colwise() + l1.bias).array().tanh();
    cache.logits = (l2.weight * cache.hidden).colwise() + l2.bias;
  }
  if (logit_shift.size() > 0) {
    require(logit_shift.size() == cache.logits.rows(), "logit shift length mismatch");
    cache.logits.colwise() += logit_shift;
  }
  cache.probs = softmax_columns(cache.logits);
  return cache;
}

Eigen::MatrixXd forward(const ClassifierParams& params, const Eigen::MatrixXd& x) {
  return forward_cached(params, x).probs;
}

GradientBuffer backward(const ClassifierParams& params, const Eigen::MatrixXd& x,
                        const ForwardCache& cache, const Eigen::MatrixXd& dlogits) {
  require(dlogits.rows() == cache.logits.rows() && dlogits.cols() == cache.logits.cols(),
          "dlogits shape mismatch");
  GradientBuffer g;
  g.accumulated = 1;
  if (params.arch == Architecture::kLinear) {
    g.layers.push_back(Layer{dlogits * x.transpose(), dlogits.rowwise().sum()});
  } else {
    const Layer& l2 = params.layers[1];
    const Eigen::MatrixXd dhidden = l2.weight.transpose() * dlogits;
    const Eigen::MatrixXd dpre =
        (dhidden.array() * (1.0 - cache.hidden.array().square())).matrix();
    g.layers.push_back(Layer{dpre * x.transpose(), dpre.rowwise().sum()});
    g.layers.push_back(Layer{dlogits * cache.hidden.transpose(), dlogits.rowwise().sum()});
  }
  return g;
}

LossGrad ce_loss_grad(const ClassifierParams& params, const Eigen::MatrixXd& x,
                      std::span<const std::uint32_t> labels, const Eigen::VectorXd& logit_shift) {
  require(static_cast<Eigen::Index>(labels.size()) == x.cols(), "label count does not match batch");
  require(x.cols() > 0, "empty batch");
  const ForwardCache cache = forward_cached(params, x, logit_shift);
  const auto n = static_cast<double>(x.cols());
  Eigen::MatrixXd dlogits = cache.probs;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]);
    require(y < cache.logits.rows(), "label out of range");
    loss -= log_softmax(cache.logits.col(i))(y);
    dlogits(y, i) -= 1.0;
  }
  dlogits /= n;
  return {loss / n, backward(params, x, cache, dlogits)};
}

LossGrad ce_loss_grad(const ClassifierParams& params, const Eigen::MatrixXd& x,
                      const Eigen::MatrixXd& soft_targets) {
  check_targets(params, x, soft_targets);
  require(x.cols() > 0, "empty batch");
  const ForwardCache cache = forward_cached(params, x);
  const auto n = static_cast<double>(x.cols());
  double loss = 0.0;
  Eigen::MatrixXd dlogits(cache.probs.rows(), cache.probs.cols());
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    loss -= soft_targets.col(i).dot(log_softmax(cache.logits.col(i)));
    // d/dz of -t.log softmax(z) = p * sum(t) - t
    dlogits.col(i) = cache.probs.col(i) * soft_targets.col(i).sum() - soft_targets.col(i);
  }
  dlogits /= n;
  return {loss / n, backward(params, x, cache, dlogits)};
}

LossGrad kl_to_target_grad(const ClassifierParams& params, const Eigen::MatrixXd& x,
                           const Eigen::MatrixXd& targets) {
  check_targets(params, x, targets);
  require(x.cols() > 0, "empty batch");
  const ForwardCache cache = forward_cached(params, x);
  const auto n = static_cast<double>(x.cols());
  double loss = 0.0;
  Eigen::MatrixXd dlogits(cache.probs.rows(), cache.probs.cols());
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    const Eigen::VectorXd logp = log_softmax(cache.logits.col(i));
    for (Eigen::Index c = 0; c < targets.rows(); ++c) {
      const double t = targets(c, i);
      if (t > 0.0) loss += t * (std::log(t) - logp(c));
    }
    dlogits.col(i) = cache.probs.col(i) * targets.col(i).sum() - targets.col(i);
  }
  dlogits /= n;
  return {loss / n, backward(params, x, cache, dlogits)};
}

Eigen::VectorXd cross_entropy_columns(const Eigen::MatrixXd& logits,
                                      std::span<const std::uint32_t> labels) {
  require(static_cast<Eigen::Index>(labels.size()) == logits.cols(),
          "label count does not match batch");
  Eigen::VectorXd out(logits.cols());
  for (Eigen::Index i = 0; i < logits.cols(); ++i) {
    const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]);
    require(y < logits.rows(), "label out of range");
    out(i) = -log_softmax(logits.col(i))(y);
  }
  return out;
}

Eigen::VectorXd per_sample_ce(const ClassifierParams& params, const Eigen::MatrixXd& x,
                              std::span<const std::uint32_t> labels) {
  require(static_cast<Eigen::Index>(labels.size()) == x.cols(), "label count does not match batch");
  return cross_entropy_columns(forward_cached(params, x).logits, labels);
}

void sgd_step(ClassifierParams& params, const GradientBuffer& grads, const SgdHyper& hyper,
              GradientBuffer& velocity) {
  require(hyper.lr > 0.0, "sgd_step: learning rate must be positive");
  require(grads.layers.size() == params.layers.size() &&
              velocity.layers.size() == params.layers.size(),
          "sgd_step: gradient/velocity layout does not match parameters");
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    Layer& p = params.layers[k];
    const Layer& g = grads.layers[k];
    Layer& v = velocity.layers[k];
    require(g.weight.rows() == p.weight.rows() && g.weight.cols() == p.weight.cols() &&
                g.bias.size() == p.bias.size() && v.weight.rows() == p.weight.rows() &&
                v.weight.cols() == p.weight.cols() && v.bias.size() == p.bias.size(),
            "sgd_step: shape mismatch in layer " + std::to_string(k));
    v.weight = hyper.momentum * v.weight + g.weight + hyper.weight_decay * p.weight;
    v.bias = hyper.momentum * v.bias + g.bias + hyper.weight_decay * p.bias;
    p.weight -= hyper.lr * v.weight;
    p.bias -= hyper.lr * v.bias;
  }
}

double LrSchedule::at(int epoch) const {
  const double scale = epoch_scale > 0.0 ? epoch_scale : 1.0;
  const double first = first_decay_epoch * scale;
  const double every = decay_every * scale;
  if (epoch < first) return initial;
  const int decays = 1 + static_cast<int>(std::floor((epoch - first) / every));
  return initial * std::pow(factor, decays);
}

std::vector<std::uint8_t> serialize(const ClassifierParams& params) {
  io::ByteWriter w;
  w.put_bytes(std::string_view(kCheckpointMagic, 4));
  w.put_u16(kCheckpointFormatVersion);
  w.put_u8(static_cast<std::uint8_t>(params.arch));
  w.put_u64(static_cast<std::uint64_t>(params.input_dim()));
  w.put_u64(static_cast<std::uint64_t>(params.hidden_width));
  w.put_u64(static_cast<std::uint64_t>(params.num_classes()));
  for (const auto& l : params.layers) {
    put_matrix(w, l.weight);
    put_matrix(w, l.bias);
  }
  w.seal();
  return w.bytes();
}

ClassifierParams deserialize_params(std::span<const std::uint8_t> bytes, const std::string& what) {
  if (bytes.size() < 4 || !std::equal(kCheckpointMagic, kCheckpointMagic + 4, bytes.begin())) {
    throw Error(ErrorKind::kIo, what + ": not a checkpoint file (bad magic)");
  }
  io::ByteReader r(bytes, what);
  r.take_bytes(4);
  const std::uint16_t version = r.take_u16();
  if (version != kCheckpointFormatVersion) {
    throw Error(ErrorKind::kIo, what + ": unsupported format version " + std::to_string(version));
  }
  const std::uint8_t arch = r.take_u8();
  if (arch > 1) throw Error(ErrorKind::kIo, what + ": unknown architecture tag");
  const std::uint64_t in = r.take_u64();
  const std::uint64_t hidden = r.take_u64();
  const std::uint64_t classes = r.take_u64();
  constexpr std::uint64_t kMaxDim = 1u << 20;
  if (in == 0 || classes == 0 || in > kMaxDim || hidden > kMaxDim || classes > kMaxDim) {
    throw Error(ErrorKind::kIo, what + ": implausible layer sizes");
  }

  ClassifierParams p;
  p.arch = static_cast<Architecture>(arch);
  auto shaped = [](std::uint64_t out, std::uint64_t in_dim) {
    return Layer{Eigen::MatrixXd(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in_dim)),
                 Eigen::VectorXd(static_cast<Eigen::Index>(out))};
  };
  if (p.arch == Architecture::kLinear) {
    p.layers.push_back(shaped(classes, in));
  } else {
    p.hidden_width = static_cast<int>(hidden);
    p.layers.push_back(shaped(hidden, in));
    p.layers.push_back(shaped(classes, hidden));
  }
  for (auto& l : p.layers) {
    take_matrix(r, l.weight);
    Eigen::MatrixXd b(l.bias.size(), 1);
    take_matrix(r, b);
    l.bias = b.col(0);
  }
  if (r.remaining() != 4) throw Error(ErrorKind::kIo, what + ": malformed payload length");
  io::verify_sealed(bytes, what);
  return p;
}

void save_checkpoint(const ClassifierParams& params, const std::filesystem::path& path) {
  io::write_file(path, serialize(params));
}

ClassifierParams load_checkpoint(const std::filesystem::path& path) {
  return deserialize_params(io::read_file(path), path.string());
}

}  // namespace dsink::model
