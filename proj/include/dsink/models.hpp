#pragma once

// Small softmax classifiers with analytic gradients.
//
//   linear:  z = W x + b
//   mlp1:    z = W2 tanh(W1 x + b1) + b2
//
// Inputs are d x N batches (one column per sample); outputs are C x N
// column-stochastic probability matrices.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace dsink::model {

enum class Architecture : std::uint8_t { kLinear = 0, kMlp1 = 1 };

std::string_view to_string(Architecture arch);
Architecture architecture_from_string(std::string_view s);

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

struct ClassifierParams {
  Architecture arch = Architecture::kLinear;
  int hidden_width = 0;  // mlp1 only
  std::vector<Layer> layers;

  int input_dim() const;
  int num_classes() const;
  std::size_t num_parameters() const;
  bool all_finite() const;
};

bool operator==(const ClassifierParams& a, const ClassifierParams& b);

/// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
ClassifierParams init_params(Architecture arch, int input_dim, int num_classes, int hidden_width,
                             std::uint64_t seed);

/// Same layout as the parameters it belongs to.
struct GradientBuffer {
  std::vector<Layer> layers;
  int accumulated = 0;

  static GradientBuffer zeros_like(const ClassifierParams& params);
  /// this += scale * other
  void add(const GradientBuffer& other, double scale = 1.0);
  bool all_finite() const;
};

/// Parameters in a fixed order: layer by layer, weight (column-major) then bias.
Eigen::VectorXd flatten(std::span<const Layer> layers);
void unflatten(const Eigen::VectorXd& flat, std::span<Layer> layers);

struct ForwardCache {
  Eigen::MatrixXd hidden;  // tanh activations, mlp1 only
  Eigen::MatrixXd logits;
  Eigen::MatrixXd probs;
};

/// Softmax probabilities. Throws on shape mismatch or nonfinite input.
Eigen::MatrixXd forward(const ClassifierParams& params, const Eigen::MatrixXd& x);

/// Forward pass keeping intermediates. `logit_shift` (length C, or empty)
/// is added to every logit column before the softmax.
ForwardCache forward_cached(const ClassifierParams& params, const Eigen::MatrixXd& x,
                            const Eigen::VectorXd& logit_shift = {});

/// Backpropagates dL/dlogits through the network.
GradientBuffer backward(const ClassifierParams& params, const Eigen::MatrixXd& x,
                        const ForwardCache& cache, const Eigen::MatrixXd& dlogits);

struct LossGrad {
  double loss = 0.0;
  GradientBuffer grad;
};

/// Mean cross-entropy against hard labels, optionally on shifted logits.
LossGrad ce_loss_grad(const ClassifierParams& params, const Eigen::MatrixXd& x,
                      std::span<const std::uint32_t> labels,
                      const Eigen::VectorXd& logit_shift = {});

/// Mean cross-entropy -sum_c t_c log f_c against soft targets.
LossGrad ce_loss_grad(const ClassifierParams& params, const Eigen::MatrixXd& x,
                      const Eigen::MatrixXd& soft_targets);

/// Mean KL(target_i || f(x_i)); dL/dlogits = (f - target) / N.
LossGrad kl_to_target_grad(const ClassifierParams& params, const Eigen::MatrixXd& x,
                           const Eigen::MatrixXd& targets);

/// -log softmax(logits.col(i))(labels[i]) for every column.
Eigen::VectorXd cross_entropy_columns(const Eigen::MatrixXd& logits,
                                      std::span<const std::uint32_t> labels);

/// Per-sample cross-entropy -log f_y(x_i), length N.
Eigen::VectorXd per_sample_ce(const ClassifierParams& params, const Eigen::MatrixXd& x,
                              std::span<const std::uint32_t> labels);

struct SgdHyper {
  double lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v.
/// `velocity` must be shaped like `params` (GradientBuffer::zeros_like).
void sgd_step(ClassifierParams& params, const GradientBuffer& grads, const SgdHyper& hyper,
              GradientBuffer& velocity);

/// Step decay: `initial` until `first_decay_epoch`, then multiplied by
/// `factor` at that epoch and every `decay_every` epochs after it. Epoch
/// counts are multiplied by `epoch_scale` (desk runs shrink a 300-epoch
/// schedule to fewer epochs); a nonpositive scale counts as 1.
struct LrSchedule {
  double initial = 0.02;
  double factor = 0.1;
  double first_decay_epoch = 100;
  double decay_every = 50;
  double epoch_scale = 1.0;

  double at(int epoch) const;
};

inline constexpr char kCheckpointMagic[4] = {'D', 'S', 'K', 'P'};
inline constexpr std::uint16_t kCheckpointFormatVersion = 1;

std::vector<std::uint8_t> serialize(const ClassifierParams& params);
ClassifierParams deserialize_params(std::span<const std::uint8_t> bytes,
                                    const std::string& what = "checkpoint");
void save_checkpoint(const ClassifierParams& params, const std::filesystem::path& path);
ClassifierParams load_checkpoint(const std::filesystem::path& path);

}  // namespace dsink::model
