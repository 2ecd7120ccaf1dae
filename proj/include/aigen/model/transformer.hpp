#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "aigen/core/ops.hpp"
#include "aigen/core/random.hpp"
#include "aigen/multimodal/assembly.hpp"

namespace aigen {

/// Topology of one transformer: L blocks of width d with H heads and a
/// feed-forward hidden width, plus the input vocabulary and feature sizes.
struct ModelDims {
  std::size_t vocab_size = 0;
  std::size_t feature_dim = 32;
  std::size_t d_model = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_width = 256;
  std::size_t max_seq_len = 64;

  void validate() const {
    detail::require(vocab_size > text::kSpecialCount, "model vocabulary holds only special tokens");
    detail::require(feature_dim > 0 && d_model > 0 && layers > 0 && heads > 0 && ff_width > 0 &&
                        max_seq_len > 0,
                    "model dimensions must be positive");
    detail::require(d_model % heads == 0, "d_model must be divisible by the head count");
  }
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

template <class T>
struct Linear {
  Parameter<T> weight;
  Parameter<T> bias;
};

template <class T>
struct LayerNorm {
  Parameter<T> gain;
  Parameter<T> bias;
};

template <class T>
struct TransformerBlock {
  LayerNorm<T> attn_norm;
  Linear<T> query, key, value, attn_out;
  LayerNorm<T> ff_norm;
  Linear<T> ff_in, ff_out;
};

/// Token, position, and segment tables plus the visual projection D_img → d.
template <class T>
struct InputEmbedding {
  Parameter<T> tokens;
  Parameter<T> positions;
  Parameter<T> segments;
  Linear<T> visual;
};

/// Pre-norm transformer stack followed by a final layer norm.
template <class T>
struct TransformerStack {
  std::size_t heads = 1;
  std::vector<TransformerBlock<T>> blocks;
  LayerNorm<T> final_norm;
};

namespace detail {

/// Assembly options limited to what the position table can index.
inline AssemblyOptions fit_options(AssemblyOptions opts, const ModelDims& dims) {
  opts.max_seq_len = std::min(opts.max_seq_len, dims.max_seq_len);
  return opts;
}

template <class T>
Parameter<T> gaussian(std::string name, std::size_t rows, std::size_t cols, double stddev,
                      RandomStream& rng) {
  Tensor<T> t(rows, cols);
  for (auto& v : t.data) v = static_cast<T>(rng.normal() * stddev);
  return {std::move(name), std::move(t)};
}

template <class T>
Parameter<T> filled(std::string name, std::size_t rows, std::size_t cols, T value) {
  return {std::move(name), Tensor<T>(rows, cols, value)};
}

template <class T>
Linear<T> make_linear(const std::string& name, std::size_t in, std::size_t out, double stddev,
                      RandomStream& rng) {
  return {gaussian<T>(name + ".weight", in, out, stddev, rng), filled<T>(name + ".bias", 1, out, T{0})};
}

template <class T>
LayerNorm<T> make_norm(const std::string& name, std::size_t width) {
  return {filled<T>(name + ".gain", 1, width, T{1}), filled<T>(name + ".bias", 1, width, T{0})};
}

}  // namespace detail

template <class T>
InputEmbedding<T> make_input_embedding(const ModelDims& dims, double stddev, RandomStream& rng) {
  InputEmbedding<T> e;
  e.tokens = detail::gaussian<T>("embed.tokens", dims.vocab_size, dims.d_model, stddev, rng);
  e.positions = detail::gaussian<T>("embed.positions", dims.max_seq_len, dims.d_model, stddev, rng);
  e.segments = detail::gaussian<T>("embed.segments", kSegmentCount, dims.d_model, stddev, rng);
  e.visual = detail::make_linear<T>("embed.visual", dims.feature_dim, dims.d_model, stddev, rng);
  return e;
}

template <class T>
TransformerStack<T> make_stack(const ModelDims& dims, double stddev, RandomStream& rng) {
  TransformerStack<T> s;
  s.heads = dims.heads;
  for (std::size_t l = 0; l < dims.layers; ++l) {
    const std::string p = "block" + std::to_string(l);
    TransformerBlock<T> b;
    b.attn_norm = detail::make_norm<T>(p + ".attn_norm", dims.d_model);
    b.query = detail::make_linear<T>(p + ".query", dims.d_model, dims.d_model, stddev, rng);
    b.key = detail::make_linear<T>(p + ".key", dims.d_model, dims.d_model, stddev, rng);
    b.value = detail::make_linear<T>(p + ".value", dims.d_model, dims.d_model, stddev, rng);
    b.attn_out = detail::make_linear<T>(p + ".attn_out", dims.d_model, dims.d_model, stddev, rng);
    b.ff_norm = detail::make_norm<T>(p + ".ff_norm", dims.d_model);
    b.ff_in = detail::make_linear<T>(p + ".ff_in", dims.d_model, dims.ff_width, stddev, rng);
    b.ff_out = detail::make_linear<T>(p + ".ff_out", dims.ff_width, dims.d_model, stddev, rng);
    s.blocks.push_back(std::move(b));
  }
  s.final_norm = detail::make_norm<T>("final_norm", dims.d_model);
  return s;
}

/// Appends parameter addresses in declaration order. Works for const and
/// non-const owners; P is Parameter<T> or const Parameter<T>.
template <class P, class L>
void collect(std::vector<P*>& out, L& linear_or_norm) {
  if constexpr (requires { linear_or_norm.weight; }) {
    out.push_back(&linear_or_norm.weight);
    out.push_back(&linear_or_norm.bias);
  } else {
    out.push_back(&linear_or_norm.gain);
    out.push_back(&linear_or_norm.bias);
  }
}

template <class P, class E>
void collect_embedding(std::vector<P*>& out, E& e) {
  out.push_back(&e.tokens);
  out.push_back(&e.positions);
  out.push_back(&e.segments);
  collect(out, e.visual);
}

template <class P, class S>
void collect_stack(std::vector<P*>& out, S& s) {
  for (auto& b : s.blocks) {
    collect(out, b.attn_norm);
    collect(out, b.query);
    collect(out, b.key);
    collect(out, b.value);
    collect(out, b.attn_out);
    collect(out, b.ff_norm);
    collect(out, b.ff_in);
    collect(out, b.ff_out);
  }
  collect(out, s.final_norm);
}

template <class T, class L>
Var<T> apply_linear(Tape<T>& tape, L& l, Var<T> x) {
  return ops::linear(x, tape.parameter(l.weight), tape.parameter(l.bias));
}

template <class T, class N>
Var<T> apply_norm(Tape<T>& tape, N& n, Var<T> x) {
  return ops::layer_norm(x, tape.parameter(n.gain), tape.parameter(n.bias));
}

/// Runs the stack over n×d inputs. Stack may be const (frozen weights).
template <class T, class Stack>
Var<T> run_stack(Tape<T>& tape, Stack& stack, Var<T> x,
                 const std::shared_ptr<const ops::AttentionMask>& mask) {
  for (auto& b : stack.blocks) {
    const Var<T> h = apply_norm(tape, b.attn_norm, x);
    const Var<T> q = apply_linear(tape, b.query, h);
    const Var<T> k = apply_linear(tape, b.key, h);
    const Var<T> v = apply_linear(tape, b.value, h);
    const Var<T> a = ops::attention(q, k, v, stack.heads, mask);
    x = ops::add(x, apply_linear(tape, b.attn_out, a));
    const Var<T> h2 = apply_norm(tape, b.ff_norm, x);
    x = ops::add(x, apply_linear(tape, b.ff_out, ops::gelu(apply_linear(tape, b.ff_in, h2))));
  }
  return apply_norm(tape, stack.final_norm, x);
}

/// Slot embeddings: content + position + segment. Content is the projected
/// visual feature, the token embedding, or for soft slots the
/// distribution-weighted mixture of token embeddings (rows of soft_rows).
template <class T, class Embedding>
Var<T> embed(Tape<T>& tape, Embedding& emb, const AssembledSequence& seq, const Trajectory& traj,
             std::optional<std::type_identity_t<Var<T>>> soft_rows = std::nullopt) {
  const Var<T> tokens = tape.parameter(emb.tokens);
  std::vector<Var<T>> parts;
  std::size_t i = 0;
  const std::size_t n = seq.size();
  while (i < n) {
    const SlotKind kind = seq.slots[i].kind;
    std::size_t j = i;
    while (j < n && seq.slots[j].kind == kind) ++j;
    if (kind == SlotKind::visual) {
      Tensor<T> feats(j - i, traj.feature_dim());
      for (std::size_t r = i; r < j; ++r) {
        const auto src = traj.features.row(static_cast<std::size_t>(seq.slots[r].index));
        std::copy(src.begin(), src.end(), feats.row(r - i).begin());
      }
      parts.push_back(apply_linear(tape, emb.visual, tape.constant(std::move(feats))));
    } else if (kind == SlotKind::token) {
      std::vector<std::size_t> ids;
      for (std::size_t r = i; r < j; ++r) ids.push_back(static_cast<std::size_t>(seq.slots[r].index));
      parts.push_back(ops::gather_rows(tokens, std::move(ids)));
    } else {
      detail::require(soft_rows.has_value(), "soft slots require soft distributions");
      const auto first = static_cast<std::size_t>(seq.slots[i].index);
      const Var<T> rows = (first == 0 && j - i == soft_rows->rows())
                              ? *soft_rows
                              : ops::slice_rows(*soft_rows, first, j - i);
      parts.push_back(ops::matmul(rows, tokens));
    }
    i = j;
  }
  const Var<T> content = parts.size() == 1 ? parts.front() : ops::concat_rows(parts);
  const Var<T> pos = ops::gather_rows(tape.parameter(emb.positions), seq.position_ids);
  const Var<T> seg = ops::gather_rows(tape.parameter(emb.segments), seq.segment_ids);
  return ops::add(ops::add(content, pos), seg);
}

}  // namespace aigen
