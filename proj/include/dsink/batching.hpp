#pragma once

// Mini-batch plumbing shared by the training loops.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dsink/random.hpp"

namespace dsink {

/// Shuffles `indices` with `rng` and cuts them into batches of `batch_size`.
/// The last partial batch is kept.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::vector<std::size_t> indices,
                                                           std::size_t batch_size, Rng& rng) {
  rng.shuffle(indices);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t stop = std::min(indices.size(), start + batch_size);
    batches.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(start),
                         indices.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return batches;
}

inline Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& m, std::span<const std::size_t> idx) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j)
    out.col(static_cast<Eigen::Index>(j)) = m.col(static_cast<Eigen::Index>(idx[j]));
  return out;
}

inline std::vector<std::uint32_t> gather(std::span<const std::uint32_t> v,
                                         std::span<const std::size_t> idx) {
  std::vector<std::uint32_t> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

}  // namespace dsink
