#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "aigen/core/random.hpp"
#include "aigen/core/tensor.hpp"

namespace aigen {

/// Clamp applied to uniform draws before the double logarithm of Gumbel noise.
inline constexpr double kGumbelUniformClamp = 1e-10;
/// Clamp applied to probabilities before any logarithm in the adversarial losses.
inline constexpr double kProbabilityClamp = 1e-7;

template <class T>
std::vector<T> softmax(std::span<const T> logits) {
  detail::require(!logits.empty(), "softmax: empty input");
  detail::require(all_finite(logits), "softmax: non-finite logit");
  const T mx = *std::max_element(logits.begin(), logits.end());
  std::vector<T> out(logits.size());
  T z{0};
  for (std::size_t i = 0; i < logits.size(); ++i) z += (out[i] = std::exp(logits[i] - mx));
  for (auto& v : out) v /= z;
  return out;
}

template <class T>
std::vector<T> softmax(const std::vector<T>& logits) {
  return softmax(std::span<const T>(logits));
}

/// K independent Gumbel(0, 1) draws: −ln(−ln u), u clamped away from 0 and 1.
inline std::vector<double> gumbel_noise(RandomStream& rng, std::size_t k) {
  std::vector<double> out(k);
  for (auto& g : out) {
    const double u = std::clamp(rng.uniform(), kGumbelUniformClamp, 1.0 - kGumbelUniformClamp);
    g = -std::log(-std::log(u));
  }
  return out;
}

/// softmax((logits + noise) / temperature).
template <class T>
std::vector<T> gumbel_softmax(std::span<const T> logits, double temperature,
                              std::span<const double> noise) {
  detail::require(temperature > 0.0, "gumbel_softmax: temperature must be positive");
  detail::require(noise.size() == logits.size(), "gumbel_softmax: noise length mismatch");
  std::vector<T> shifted(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    shifted[i] = static_cast<T>((logits[i] + noise[i]) / temperature);
  return softmax(std::span<const T>(shifted));
}

struct CrossEntropyResult {
  double value = 0.0;
  /// Set when no step was included, in which case value is 0.
  bool empty_mask = false;
};

/// Mean over included steps of −log softmax(logits row)[target].
template <class T>
CrossEntropyResult cross_entropy_loss(const Tensor<T>& logits, std::span<const std::size_t> targets,
                                      std::span<const std::uint8_t> mask) {
  detail::require(targets.size() == logits.rows() && mask.size() == logits.rows(),
                  "cross_entropy_loss: target/mask length mismatch");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (!mask[i]) continue;
    detail::require(targets[i] < logits.cols(), "cross_entropy_loss: target id out of range");
    const auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (auto v : row) z += std::exp(static_cast<double>(v) - mx);
    total += -(static_cast<double>(row[targets[i]]) - mx - std::log(z));
    ++count;
  }
  if (count == 0) return {0.0, true};
  return {total / static_cast<double>(count), false};
}

inline double clamp_probability(double p) {
  return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

/// −label·ln p − (1−label)·ln(1−p) with p clamped to [1e-7, 1 − 1e-7].
inline double binary_cross_entropy(double p, int label) {
  detail::require(label == 0 || label == 1, "binary_cross_entropy: label must be 0 or 1");
  const double q = clamp_probability(p);
  return label == 1 ? -std::log(q) : -std::log1p(-q);
}

}  // namespace aigen
