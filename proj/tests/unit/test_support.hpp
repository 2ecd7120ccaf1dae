#pragma once

#include <functional>
#include <vector>

#include "aigen/core/gradcheck.hpp"
#include "aigen/core/ops.hpp"
#include "aigen/core/random.hpp"

namespace aigen::testing {

inline Tensor<double> random_tensor(std::size_t rows, std::size_t cols, RandomStream& rng,
                                    double scale = 1.0) {
  Tensor<double> t(rows, cols);
  for (auto& v : t.data) v = rng.normal() * scale;
  return t;
}

using BuildFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Largest relative error between reverse-mode and central-difference
/// gradients of sum(W ⊙ build(inputs)) over every input tensor.
inline double op_gradient_error(const BuildFn& build, const std::vector<Tensor<double>>& inputs,
                                RandomStream& rng, double h = 1e-6) {
  Tensor<double> weights;
  auto forward = [&](const std::vector<Tensor<double>>& xs, Tape<double>& tape,
                     std::vector<Var<double>>& vars) {
    vars.clear();
    for (const auto& x : xs) vars.push_back(tape.variable(x));
    const Var<double> out = build(tape, vars);
    if (weights.empty()) weights = random_tensor(out.rows(), out.cols(), rng);
    return ops::weighted_sum(out, weights);
  };
  Tape<double> tape;
  std::vector<Var<double>> vars;
  const Var<double> loss = forward(inputs, tape, vars);
  tape.backward(loss);
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::vector<double> analytic = tape.grad(vars[i].id);
    auto f = [&](const std::vector<double>& x) {
      auto xs = inputs;
      xs[i].data = x;
      Tape<double> t;
      std::vector<Var<double>> v;
      return forward(xs, t, v).item();
    };
    const auto numeric = finite_difference_gradient(f, inputs[i].data, h);
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

/// Relative error of parameter gradients of a scalar built from a model.
/// forward(tape) must bind the parameters as trainable and return the loss.
/// Groups with an exactly zero gradient (attention key biases) are compared
/// against the floor instead of their own vanishing norm.
template <class Params>
double model_gradient_error(const std::function<Var<double>(Tape<double>&)>& forward, Params params,
                            double h = 1e-4, double floor = 1e-6) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    tape.backward(forward(tape));
  }
  double worst = 0.0;
  for (auto* p : params) {
    const std::vector<double> analytic = p->grad;
    const std::vector<double> saved = p->value.data;
    auto f = [&](const std::vector<double>& x) {
      p->value.data = x;
      Tape<double> t;
      return forward(t).item();
    };
    const auto numeric = finite_difference_gradient(f, saved, h);
    p->value.data = saved;
    worst = std::max(worst, relative_error(analytic, numeric, floor));
  }
  return worst;
}

}  // namespace aigen::testing
