#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <variant>
#include <vector>

#include "aigen/core/ops.hpp"
#include "aigen/multimodal/trajectory.hpp"
#include "aigen/text/vocab.hpp"

namespace aigen {

enum class SlotKind : std::uint8_t { visual, token, soft };

inline constexpr std::size_t kVisualSegment = 0;
inline constexpr std::size_t kObjectSegment = 1;
inline constexpr std::size_t kTextSegment = 2;
inline constexpr std::size_t kSegmentCount = 3;

/// One position of the flattened sequence. index is the trajectory step for
/// visual slots, the token id for token slots, and the row of the supplied
/// soft distributions for soft slots.
struct Slot {
  SlotKind kind = SlotKind::token;
  std::int64_t index = 0;
  friend bool operator==(const Slot&, const Slot&) = default;
};

/// Placeholder for an instruction given as distributions over the vocabulary.
struct SoftText {
  std::size_t rows = 0;
};

using TextBlock = std::variant<std::vector<text::TokenId>, SoftText>;

struct AssemblyOptions {
  bool use_objects = true;
  /// Let prefix (visual + object) slots attend to each other bidirectionally.
  bool prefix_visible = false;
  std::size_t max_seq_len = 64;
};

struct AssembledSequence {
  std::size_t visual_slots = 0;
  std::vector<text::TokenId> object_ids;
  /// Hard ids of the text block including the specials placed in it.
  std::vector<text::TokenId> text_ids;
  std::size_t soft_rows = 0;
  std::vector<Slot> slots;
  std::vector<std::size_t> position_ids;
  std::vector<std::size_t> segment_ids;
  std::shared_ptr<const ops::AttentionMask> mask;
  /// Index of the first text-segment slot (BOS for the generator).
  std::size_t text_begin = 0;

  std::size_t size() const { return slots.size(); }

  friend bool operator==(const AssembledSequence& a, const AssembledSequence& b) {
    return a.visual_slots == b.visual_slots && a.object_ids == b.object_ids &&
           a.text_ids == b.text_ids && a.soft_rows == b.soft_rows && a.slots == b.slots &&
           a.position_ids == b.position_ids && a.segment_ids == b.segment_ids &&
           *a.mask == *b.mask && a.text_begin == b.text_begin;
  }
};

namespace detail {

inline std::vector<text::TokenId> encode_objects(const Trajectory& traj, const text::Vocab& vocab) {
  std::vector<text::TokenId> ids;
  for (const auto& label : traj.objects)
    for (const auto& tok : text::tokenize(label)) ids.push_back(vocab.id(tok));
  return ids;
}

class SequenceBuilder {
 public:
  void push(Slot slot, std::size_t segment) {
    seq_.position_ids.push_back(seq_.slots.size());
    seq_.slots.push_back(slot);
    seq_.segment_ids.push_back(segment);
  }
  void token(text::TokenId id, std::size_t segment) {
    push({SlotKind::token, id}, segment);
    if (segment == kObjectSegment) seq_.object_ids.push_back(id);
    if (segment == kTextSegment) seq_.text_ids.push_back(id);
  }
  /// Separator or classifier slot that belongs to no content block.
  void marker(text::TokenId id, std::size_t segment) { push({SlotKind::token, id}, segment); }
  void visual(const Trajectory& traj) {
    for (std::size_t t = 0; t < traj.steps(); ++t)
      push({SlotKind::visual, static_cast<std::int64_t>(t)}, kVisualSegment);
    seq_.visual_slots = traj.steps();
  }
  void text(const TextBlock& block) {
    if (const auto* ids = std::get_if<std::vector<text::TokenId>>(&block)) {
      for (auto id : *ids) token(id, kTextSegment);
    } else {
      const auto rows = std::get<SoftText>(block).rows;
      for (std::size_t r = 0; r < rows; ++r)
        push({SlotKind::soft, static_cast<std::int64_t>(r)}, kTextSegment);
      seq_.soft_rows = rows;
    }
  }
  void mark_text_begin() { seq_.text_begin = seq_.slots.size(); }
  std::size_t size() const { return seq_.slots.size(); }

  AssembledSequence finish(const AssemblyOptions& opts, bool causal, std::size_t prefix_len) {
    const std::size_t n = seq_.slots.size();
    require(n <= opts.max_seq_len, "assembled length " + std::to_string(n) + " exceeds max_seq_len " +
                                       std::to_string(opts.max_seq_len));
    auto mask = std::make_shared<ops::AttentionMask>();
    mask->size = n;
    mask->allowed.assign(n * n, causal ? 0 : 1);
    if (causal) {
      for (std::size_t q = 0; q < n; ++q)
        for (std::size_t k = 0; k <= q; ++k) mask->allowed[q * n + k] = 1;
      if (opts.prefix_visible)
        for (std::size_t q = 0; q < prefix_len; ++q)
          for (std::size_t k = 0; k < prefix_len; ++k) mask->allowed[q * n + k] = 1;
    }
    seq_.mask = std::move(mask);
    return std::move(seq_);
  }

 private:
  AssembledSequence seq_;
};

inline void check_instruction(std::span<const text::TokenId> ids, const text::Vocab& vocab) {
  for (auto id : ids) {
    require(!text::is_special(id), "instruction ids must not contain special tokens");
    require(static_cast<std::size_t>(id) < vocab.size(), "instruction id outside vocabulary");
  }
}

inline AssembledSequence build_generator(const Trajectory& traj, const TextBlock& continuation,
                                         bool close_with_eos, const text::Vocab& vocab,
                                         const AssemblyOptions& opts) {
  require(traj.steps() >= 1, "trajectory has no visual steps");
  SequenceBuilder b;
  b.visual(traj);
  if (opts.use_objects)
    for (auto id : encode_objects(traj, vocab)) b.token(id, kObjectSegment);
  const std::size_t prefix = b.size();
  b.mark_text_begin();
  b.token(text::kBos, kTextSegment);
  b.text(continuation);
  if (close_with_eos) b.token(text::kEos, kTextSegment);
  return b.finish(opts, true, prefix);
}

}  // namespace detail

/// Generator layout [visual][objects][BOS][instruction][EOS] with a causal
/// mask. An empty instruction yields the generation prompt ending at BOS.
inline AssembledSequence assemble_generator_input(const Trajectory& traj,
                                                  std::span<const text::TokenId> instruction,
                                                  const text::Vocab& vocab,
                                                  const AssemblyOptions& opts = {}) {
  detail::check_instruction(instruction, vocab);
  const bool teacher_forcing = !instruction.empty();
  return detail::build_generator(
      traj, std::vector<text::TokenId>(instruction.begin(), instruction.end()), teacher_forcing,
      vocab, opts);
}

/// Generator layout during decoding: the prompt followed by already generated
/// tokens (hard ids or soft rows), without a closing EOS.
inline AssembledSequence assemble_generator_prefix(const Trajectory& traj, const TextBlock& generated,
                                                   const text::Vocab& vocab,
                                                   const AssemblyOptions& opts = {}) {
  return detail::build_generator(traj, generated, false, vocab, opts);
}

/// Discriminator layout [CLS][visual][SEP][objects][SEP][instruction][SEP]
/// with full attention. Without objects the object block and its SEP are
/// dropped.
inline AssembledSequence assemble_discriminator_input(const Trajectory& traj,
                                                      const TextBlock& instruction,
                                                      const text::Vocab& vocab,
                                                      const AssemblyOptions& opts = {}) {
  detail::require(traj.steps() >= 1, "trajectory has no visual steps");
  if (const auto* ids = std::get_if<std::vector<text::TokenId>>(&instruction))
    detail::check_instruction(*ids, vocab);
  detail::SequenceBuilder b;
  b.marker(text::kCls, kVisualSegment);
  b.visual(traj);
  b.marker(text::kSep, kVisualSegment);
  if (opts.use_objects) {
    for (auto id : detail::encode_objects(traj, vocab)) b.token(id, kObjectSegment);
    b.marker(text::kSep, kObjectSegment);
  }
  b.mark_text_begin();
  b.text(instruction);
  b.marker(text::kSep, kTextSegment);
  return b.finish(opts, false, 0);
}

}  // namespace aigen
