#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aigen/core/functional.hpp"
#include "aigen/model/transformer.hpp"

namespace aigen {

/// Decoder transformer conditioned on a flattened visual + object prompt. The
/// output head is tied to the token embedding table.
template <class T>
struct DecoderModel {
  ModelDims dims;
  InputEmbedding<T> embedding;
  TransformerStack<T> stack;

  static DecoderModel init(const ModelDims& dims, RandomStream& rng, double init_std = 0.02) {
    dims.validate();
    DecoderModel m;
    m.dims = dims;
    m.embedding = make_input_embedding<T>(dims, init_std, rng);
    m.stack = make_stack<T>(dims, init_std, rng);
    return m;
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    collect_embedding(out, embedding);
    collect_stack(out, stack);
    return out;
  }
  std::vector<const Parameter<T>*> parameters() const {
    std::vector<const Parameter<T>*> out;
    collect_embedding(out, embedding);
    collect_stack(out, stack);
    return out;
  }
};

struct GeneratorOptions {
  AssemblyOptions assembly;
  /// Feed hard one-hot tokens forward with soft gradients; false feeds the
  /// relaxed distribution itself.
  bool straight_through = true;
};

enum class StopReason { eos, max_len };

inline const char* to_string(StopReason r) { return r == StopReason::eos ? "eos" : "max_len"; }

struct GenerationResult {
  /// Generated ids, ending in EOS when stop == eos.
  std::vector<text::TokenId> ids;
  /// steps × vocab relaxed distributions; empty unless produced adversarially.
  std::vector<std::vector<double>> soft;
  std::vector<double> log_probs;
  StopReason stop = StopReason::max_len;

  /// Ids without the closing EOS.
  std::vector<text::TokenId> body() const {
    std::vector<text::TokenId> out = ids;
    if (stop == StopReason::eos && !out.empty()) out.pop_back();
    return out;
  }
  std::string text(const text::Vocab& vocab) const { return text::decode(ids, vocab); }
};

template <class T>
struct TeacherForcedOutput {
  Var<T> loss;
  /// S × vocab logits at the text positions BOS .. last instruction token.
  Var<T> logits;
  std::size_t steps = 0;
};

namespace detail {

template <class T, class Model>
Var<T> decoder_hidden(Tape<T>& tape, Model& model, const AssembledSequence& seq, const Trajectory& traj,
                      std::optional<Var<T>> soft_rows = std::nullopt) {
  const Var<T> x = embed(tape, model.embedding, seq, traj, soft_rows);
  return run_stack(tape, model.stack, x, seq.mask);
}

template <class T, class Model>
Var<T> last_logits(Tape<T>& tape, Model& model, const AssembledSequence& seq, const Trajectory& traj,
                   std::optional<Var<T>> soft_rows = std::nullopt) {
  const Var<T> h = decoder_hidden(tape, model, seq, traj, soft_rows);
  return ops::matmul_nt(ops::slice_rows(h, seq.size() - 1, 1), tape.parameter(model.embedding.tokens));
}

template <class T>
std::size_t argmax_lowest(std::span<const T> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

template <class T>
double log_softmax_at(std::span<const T> row, std::size_t index) {
  const double mx = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (auto v : row) z += std::exp(static_cast<double>(v) - mx);
  return static_cast<double>(row[index]) - mx - std::log(z);
}

/// Number of tokens that still fit after a prompt of the given length.
inline std::size_t generation_budget(std::size_t prompt_len, std::size_t max_len,
                                     const AssemblyOptions& opts) {
  const std::size_t room = opts.max_seq_len > prompt_len ? opts.max_seq_len - prompt_len + 1 : 0;
  return std::min(max_len, room);
}

}  // namespace detail

/// Cross-entropy of the reference under teacher forcing. Only text positions
/// contribute: BOS predicts the first token, the last token predicts EOS.
template <class T, class Model>
TeacherForcedOutput<T> teacher_forced_loss(Tape<T>& tape, Model& model, const Trajectory& traj,
                                           std::span<const text::TokenId> reference,
                                           const text::Vocab& vocab, const GeneratorOptions& opts = {}) {
  detail::require(!reference.empty(), "teacher_forced_loss: empty reference");
  const AssembledSequence seq =
      assemble_generator_input(traj, reference, vocab, detail::fit_options(opts.assembly, model.dims));
  const Var<T> h = detail::decoder_hidden(tape, model, seq, traj);
  const std::size_t steps = reference.size() + 1;
  const Var<T> logits = ops::matmul_nt(ops::slice_rows(h, seq.text_begin, steps),
                                       tape.parameter(model.embedding.tokens));
  std::vector<std::size_t> targets;
  for (std::size_t i = 1; i <= steps; ++i) targets.push_back(static_cast<std::size_t>(seq.text_ids[i]));
  const Var<T> loss = ops::cross_entropy(logits, std::move(targets), std::vector<std::uint8_t>(steps, 1));
  return {loss, logits, steps};
}

namespace detail {

/// Autoregressive hard-token decoding; pick chooses the next id from logits.
template <class T, class Pick>
GenerationResult decode_with(const DecoderModel<T>& model, const Trajectory& traj,
                             const text::Vocab& vocab, std::size_t max_len, const GeneratorOptions& opts,
                             Pick&& pick) {
  GenerationResult result;
  const AssemblyOptions aopts = fit_options(opts.assembly, model.dims);
  const AssembledSequence prompt = assemble_generator_prefix(traj, std::vector<text::TokenId>{}, vocab, aopts);
  const std::size_t budget = generation_budget(prompt.size(), max_len, aopts);
  for (std::size_t step = 0; step < budget; ++step) {
    Tape<T> tape;
    const AssembledSequence seq = assemble_generator_prefix(traj, result.body(), vocab, aopts);
    const Var<T> logits = last_logits(tape, model, seq, traj);
    const auto row = logits.value().row(0);
    const std::size_t id = pick(row);
    result.ids.push_back(static_cast<text::TokenId>(id));
    result.log_probs.push_back(log_softmax_at(row, id));
    if (static_cast<text::TokenId>(id) == text::kEos) {
      result.stop = StopReason::eos;
      break;
    }
  }
  return result;
}

}  // namespace detail

/// Argmax decoding until EOS or max_len tokens; ties go to the lowest id.
template <class T>
GenerationResult decode_greedy(const DecoderModel<T>& model, const Trajectory& traj,
                               const text::Vocab& vocab, std::size_t max_len,
                               const GeneratorOptions& opts = {}) {
  detail::require(max_len >= 1, "decode_greedy: max_len must be >= 1");
  return detail::decode_with(model, traj, vocab, max_len, opts,
                             [](std::span<const T> row) { return detail::argmax_lowest(row); });
}

/// Categorical sampling from softmax(logits / temperature).
template <class T>
GenerationResult sample_decode(const DecoderModel<T>& model, const Trajectory& traj,
                               const text::Vocab& vocab, double temperature, RandomStream& rng,
                               std::size_t max_len, const GeneratorOptions& opts = {}) {
  detail::require(temperature > 0.0, "sample_decode: temperature must be positive");
  detail::require(max_len >= 1, "sample_decode: max_len must be >= 1");
  return detail::decode_with(model, traj, vocab, max_len, opts, [&](std::span<const T> row) {
    const double mx = *std::max_element(row.begin(), row.end());
    std::vector<double> w(row.size());
    double z = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) z += (w[i] = std::exp((row[i] - mx) / temperature));
    double u = rng.uniform() * z;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (u < w[i]) return i;
      u -= w[i];
    }
    return detail::argmax_lowest(std::span<const double>(w));
  });
}

/// Output of the differentiable generation path.
template <class T>
struct SoftGeneration {
  GenerationResult result;
  /// Rows fed back as inputs, one 1 × vocab node per step (including EOS).
  std::vector<Var<T>> rows;

  /// Instruction rows for the discriminator: every step before EOS, stacked.
  std::optional<Var<T>> instruction() const {
    const std::size_t n = result.stop == StopReason::eos ? rows.size() - 1 : rows.size();
    if (n == 0) return std::nullopt;
    if (n == 1) return rows.front();
    return ops::concat_rows(std::vector<Var<T>>(rows.begin(), rows.begin() + static_cast<long>(n)));
  }
  std::size_t instruction_length() const {
    return result.stop == StopReason::eos ? rows.size() - 1 : rows.size();
  }
};

/// Supplies Gumbel noise for one step over a vocabulary of the given size.
using NoiseSource = std::function<std::vector<double>(std::size_t)>;

/// Gumbel-Softmax generation. Each step draws softmax((logits + g) / τ); the
/// straight-through row (one-hot forward, soft gradient) becomes the next
/// input, so gradients reach every generator parameter.
template <class T, class Model>
SoftGeneration<T> generate_soft(Tape<T>& tape, Model& model, const Trajectory& traj,
                                const text::Vocab& vocab, double temperature, const NoiseSource& noise,
                                std::size_t max_len, const GeneratorOptions& opts = {}) {
  detail::require(temperature > 0.0, "generate_soft: temperature must be positive");
  detail::require(max_len >= 1, "generate_soft: max_len must be >= 1");
  SoftGeneration<T> out;
  const AssemblyOptions aopts = detail::fit_options(opts.assembly, model.dims);
  const AssembledSequence prompt = assemble_generator_prefix(traj, std::vector<text::TokenId>{}, vocab, aopts);
  const std::size_t budget = detail::generation_budget(prompt.size(), max_len, aopts);
  const T inv_tau = static_cast<T>(1.0 / temperature);
  for (std::size_t step = 0; step < budget; ++step) {
    const AssembledSequence seq =
        assemble_generator_prefix(traj, SoftText{out.rows.size()}, vocab, aopts);
    std::optional<Var<T>> fed;
    if (!out.rows.empty())
      fed = out.rows.size() == 1 ? out.rows.front() : ops::concat_rows(out.rows);
    const Var<T> logits = detail::last_logits(tape, model, seq, traj, fed);
    const std::vector<double> g = noise(logits.cols());
    Tensor<T> g_t(1, g.size());
    for (std::size_t i = 0; i < g.size(); ++i) g_t.data[i] = static_cast<T>(g[i]);
    const Var<T> soft = ops::softmax_rows(ops::scale(ops::add(logits, tape.constant(std::move(g_t))), inv_tau));
    const Var<T> row = opts.straight_through ? ops::straight_through(soft) : soft;
    const auto soft_values = soft.value().row(0);
    const std::size_t id = detail::argmax_lowest(soft_values);
    out.rows.push_back(row);
    out.result.ids.push_back(static_cast<text::TokenId>(id));
    out.result.soft.emplace_back(soft_values.begin(), soft_values.end());
    out.result.log_probs.push_back(detail::log_softmax_at(logits.value().row(0), id));
    if (static_cast<text::TokenId>(id) == text::kEos) {
      out.result.stop = StopReason::eos;
      break;
    }
  }
  return out;
}

template <class T, class Model>
SoftGeneration<T> generate_soft(Tape<T>& tape, Model& model, const Trajectory& traj,
                                const text::Vocab& vocab, double temperature, RandomStream& rng,
                                std::size_t max_len, const GeneratorOptions& opts = {}) {
  return generate_soft(
      tape, model, traj, vocab, temperature,
      NoiseSource([&rng](std::size_t k) { return gumbel_noise(rng, k); }), max_len, opts);
}

}  // namespace aigen
