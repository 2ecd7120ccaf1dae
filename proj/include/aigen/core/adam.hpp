#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "aigen/core/tape.hpp"

namespace aigen {

struct AdamHyper {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<T> first_moment;
  std::vector<T> second_moment;
  std::uint64_t step = 0;
  AdamHyper hyper;
};

/// One bias-corrected Adam update applied in place.
template <class T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state) {
  detail::require(params.size() == grads.size(), "adam_step: parameter/gradient size mismatch");
  if (state.first_moment.empty() && state.second_moment.empty()) {
    state.first_moment.assign(params.size(), T{0});
    state.second_moment.assign(params.size(), T{0});
  }
  detail::require(state.first_moment.size() == params.size() &&
                      state.second_moment.size() == params.size(),
                  "adam_step: optimizer state size mismatch");
  const auto& h = state.hyper;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = T(h.beta1), b2 = T(h.beta2);
  const T c1 = T(1.0 - std::pow(h.beta1, t));
  const T c2 = T(1.0 - std::pow(h.beta2, t));
  const T lr = T(h.learning_rate), eps = T(h.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    T& m = state.first_moment[i];
    T& v = state.second_moment[i];
    m = b1 * m + (T{1} - b1) * g;
    v = b2 * v + (T{1} - b2) * g * g;
    const T m_hat = m / c1;
    const T v_hat = v / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

/// Adam over an ordered list of parameters, one state per parameter.
template <class T>
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t count, AdamHyper hyper) : states_(count) {
    for (auto& s : states_) s.hyper = hyper;
  }

  void step(const std::vector<Parameter<T>*>& params) {
    detail::require(params.size() == states_.size(), "Adam: parameter count changed");
    for (std::size_t i = 0; i < params.size(); ++i)
      adam_step(std::span<T>(params[i]->value.data), std::span<const T>(params[i]->grad), states_[i]);
  }

  std::vector<AdamState<T>>& states() { return states_; }
  const std::vector<AdamState<T>>& states() const { return states_; }

 private:
  std::vector<AdamState<T>> states_;
};

template <class T>
double gradient_norm(const std::vector<Parameter<T>*>& params) {
  double sq = 0.0;
  for (const auto* p : params)
    for (auto g : p->grad) sq += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(sq);
}

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <class T>
double clip_gradients(const std::vector<Parameter<T>*>& params, double max_norm) {
  const double norm = gradient_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const T factor = T(max_norm / norm);
    for (auto* p : params)
      for (auto& g : p->grad) g *= factor;
  }
  return norm;
}

template <class T>
void zero_gradients(const std::vector<Parameter<T>*>& params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace aigen
