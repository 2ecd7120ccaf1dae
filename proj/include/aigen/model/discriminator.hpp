#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "aigen/core/functional.hpp"
#include "aigen/model/transformer.hpp"

namespace aigen {

enum class Pooling { cls, mean };

inline const char* to_string(Pooling p) { return p == Pooling::cls ? "cls" : "mean"; }

inline Pooling parse_pooling(const std::string& s) {
  if (s == "cls") return Pooling::cls;
  if (s == "mean") return Pooling::mean;
  throw InvalidInput("unknown pooling '" + s + "' (expected cls or mean)");
}

/// Bidirectional encoder with a sigmoid real/fake head on the pooled state.
/// Its embedding tables are independent of the generator's.
template <class T>
struct EncoderModel {
  ModelDims dims;
  Pooling pooling = Pooling::cls;
  InputEmbedding<T> embedding;
  TransformerStack<T> stack;
  Linear<T> head;

  static EncoderModel init(const ModelDims& dims, RandomStream& rng, double init_std = 0.02,
                           Pooling pooling = Pooling::cls) {
    dims.validate();
    EncoderModel m;
    m.dims = dims;
    m.pooling = pooling;
    m.embedding = make_input_embedding<T>(dims, init_std, rng);
    m.stack = make_stack<T>(dims, init_std, rng);
    m.head = detail::make_linear<T>("head", dims.d_model, 1, init_std, rng);
    return m;
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    collect_embedding(out, embedding);
    collect_stack(out, stack);
    collect(out, head);
    return out;
  }
  std::vector<const Parameter<T>*> parameters() const {
    std::vector<const Parameter<T>*> out;
    collect_embedding(out, embedding);
    collect_stack(out, stack);
    collect(out, head);
    return out;
  }
};

inline constexpr int kRealLabel = 1;
inline constexpr int kFakeLabel = 0;

struct RealFakeScore {
  /// D(I, x), clamped to [1e-7, 1 − 1e-7].
  double probability = 0.5;
  int label = kRealLabel;

  bool judged_real() const { return probability >= 0.5; }
  double loss() const { return binary_cross_entropy(probability, label); }
};

/// D(I, x) as a clamped probability node. Soft instructions (SoftText) read
/// their rows from soft_rows and embed as mixtures of token embeddings.
template <class T, class Model>
Var<T> score_var(Tape<T>& tape, Model& model, const Trajectory& traj, const TextBlock& instruction,
                 const text::Vocab& vocab, const AssemblyOptions& opts,
                 std::optional<Var<T>> soft_rows = std::nullopt) {
  const AssembledSequence seq =
      assemble_discriminator_input(traj, instruction, vocab, detail::fit_options(opts, model.dims));
  const Var<T> x = embed(tape, model.embedding, seq, traj, soft_rows);
  const Var<T> h = run_stack(tape, model.stack, x, seq.mask);
  const Var<T> pooled = model.pooling == Pooling::cls ? ops::slice_rows(h, 0, 1) : ops::mean_rows(h);
  const Var<T> p = ops::sigmoid(apply_linear(tape, model.head, pooled));
  return ops::clamp(p, static_cast<T>(kProbabilityClamp), static_cast<T>(1.0 - kProbabilityClamp));
}

template <class T>
RealFakeScore score(const EncoderModel<T>& model, const Trajectory& traj,
                    const std::vector<text::TokenId>& instruction, const text::Vocab& vocab,
                    const AssemblyOptions& opts = {}, int label = kRealLabel) {
  Tape<T> tape;
  const Var<T> p = score_var(tape, model, traj, TextBlock{instruction}, vocab, opts);
  return {static_cast<double>(p.item()), label};
}

/// Scores an instruction given as rows of distributions over the vocabulary.
template <class T>
RealFakeScore score(const EncoderModel<T>& model, const Trajectory& traj, const Tensor<T>& soft_rows,
                    const text::Vocab& vocab, const AssemblyOptions& opts = {}, int label = kFakeLabel) {
  Tape<T> tape;
  std::optional<Var<T>> rows;
  std::size_t count = 0;
  if (!soft_rows.empty()) {
    rows = tape.constant(soft_rows);
    count = soft_rows.rows();
  }
  const Var<T> p = score_var(tape, model, traj, TextBlock{SoftText{count}}, vocab, opts, rows);
  return {static_cast<double>(p.item()), label};
}

/// L_D = −log(1 − D(I_G, x)) − log(D(I_R, x)).
inline double discriminator_loss(double p_fake, double p_real) {
  return -std::log1p(-clamp_probability(p_fake)) - std::log(clamp_probability(p_real));
}

/// L_G = −log(D(I_G, x)).
inline double adversarial_generator_loss(double p_fake) { return -std::log(clamp_probability(p_fake)); }

/// Tape forms of the two losses; inputs are already clamped score nodes.
template <class T>
Var<T> discriminator_loss(Var<T> p_fake, Var<T> p_real) {
  return ops::add(ops::neg_log1m(p_fake), ops::neg_log(p_real));
}

template <class T>
Var<T> adversarial_generator_loss(Var<T> p_fake) {
  return ops::neg_log(p_fake);
}

}  // namespace aigen
