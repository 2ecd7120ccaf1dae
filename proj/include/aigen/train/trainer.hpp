#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "aigen/train/checkpoint.hpp"

namespace aigen {

/// Tokenized training episodes. Every episode carries at least one reference.
struct TrainCorpus {
  text::Vocab vocab;
  std::vector<Trajectory> episodes;
  /// references[e][r]: token ids of reference r of episode e.
  std::vector<std::vector<std::vector<text::TokenId>>> references;
  /// Flattened (episode, reference) pairs used by CE pretraining.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::size_t feature_dim = 0;
};

/// Vocabulary over the references and the object labels of the episodes.
inline text::Vocab build_training_vocab(const std::vector<Trajectory>& episodes, std::size_t min_frequency) {
  std::vector<std::string> corpus;
  for (const auto& e : episodes) {
    for (const auto& r : e.references) corpus.push_back(r);
    for (const auto& o : e.objects) corpus.push_back(o);
  }
  return text::build_vocab(corpus, min_frequency);
}

/// References longer than max_instruction_len tokens are truncated.
inline TrainCorpus make_corpus(std::vector<Trajectory> episodes, text::Vocab vocab,
                               std::size_t max_instruction_len) {
  detail::require(!episodes.empty(), "training corpus is empty");
  TrainCorpus c;
  c.feature_dim = episodes.front().feature_dim();
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const auto& ep = episodes[e];
    ep.validate();
    detail::require(ep.feature_dim() == c.feature_dim, "episode '" + ep.id + "' has feature dim " +
                                                           std::to_string(ep.feature_dim()) + ", expected " +
                                                           std::to_string(c.feature_dim));
    detail::require(!ep.references.empty(), "training episode '" + ep.id + "' has no reference");
    std::vector<std::vector<text::TokenId>> refs;
    for (const auto& r : ep.references) {
      auto ids = text::encode(r, vocab);
      detail::require(!ids.empty(), "training episode '" + ep.id + "' has an empty reference");
      if (ids.size() > max_instruction_len) ids.resize(max_instruction_len);
      c.pairs.emplace_back(e, refs.size());
      refs.push_back(std::move(ids));
    }
    c.references.push_back(std::move(refs));
  }
  c.episodes = std::move(episodes);
  c.vocab = std::move(vocab);
  return c;
}

/// Index sampler that walks a fresh seeded permutation every epoch. Item i
/// of the global stream depends only on (stream, i), so a resumed run sees
/// the same batches.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, RandomStream stream) : n_(n), stream_(stream) {
    detail::require(n > 0, "EpochSampler: empty population");
  }
  std::size_t at(std::size_t global_index) {
    const std::size_t epoch = global_index / n_;
    if (!cached_ || *cached_ != epoch) {
      perm_.resize(n_);
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      RandomStream r = stream_.substream(epoch);
      r.shuffle(perm_.begin(), perm_.end());
      cached_ = epoch;
    }
    return perm_[global_index % n_];
  }
  std::vector<std::size_t> batch(std::size_t step, std::size_t size) {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < size; ++k) out.push_back(at(step * size + k));
    return out;
  }

 private:
  std::size_t n_;
  RandomStream stream_;
  std::optional<std::size_t> cached_;
  std::vector<std::size_t> perm_;
};

struct TrainLogRecord {
  std::size_t step = 0;
  Phase phase = Phase::ce;
  std::size_t phase_step = 0;
  double l_ce = 0.0;
  std::optional<double> l_g, l_d, p_real_mean, p_fake_mean, tau;
  std::vector<double> p_real, p_fake, l_d_each;
  double wall_time = 0.0;
  bool aborted = false;

  bool finite() const {
    auto ok = [](std::optional<double> v) { return !v || std::isfinite(*v); };
    return std::isfinite(l_ce) && ok(l_g) && ok(l_d) && ok(p_real_mean) && ok(p_fake_mean) && ok(tau);
  }
};

/// One JSON object per record; wall_time is omitted when with_time is false
/// so records can be compared across runs.
inline nlohmann::ordered_json record_to_json(const TrainLogRecord& r, bool with_time = true) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["phase"] = to_string(r.phase);
  j["phase_step"] = r.phase_step;
  j["l_ce"] = r.l_ce;
  if (r.l_g) j["l_g"] = *r.l_g;
  if (r.l_d) j["l_d"] = *r.l_d;
  if (r.p_real_mean) j["p_real_mean"] = *r.p_real_mean;
  if (r.p_fake_mean) j["p_fake_mean"] = *r.p_fake_mean;
  if (r.tau) j["tau"] = *r.tau;
  if (!r.p_real.empty()) j["p_real"] = r.p_real;
  if (!r.p_fake.empty()) j["p_fake"] = r.p_fake;
  if (!r.l_d_each.empty()) j["l_d_each"] = r.l_d_each;
  if (r.aborted) j["aborted"] = true;
  if (with_time) j["wall_time"] = r.wall_time;
  return j;
}

/// Raised when a loss turns non-finite; carries the diagnostic record.
class NonFiniteLoss : public NumericError {
 public:
  NonFiniteLoss(const std::string& what, TrainLogRecord record)
      : NumericError(what), record_(std::move(record)) {}
  const TrainLogRecord& record() const { return record_; }

 private:
  TrainLogRecord record_;
};

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline void check_finite(double v, const char* what, TrainLogRecord& r) {
  if (std::isfinite(v)) return;
  r.aborted = true;
  throw NonFiniteLoss(std::string("non-finite ") + what + " at step " + std::to_string(r.step), r);
}

template <class T>
Var<T> scaled(Var<T> v, double factor) {
  return factor == 1.0 ? v : ops::scale(v, static_cast<T>(factor));
}

}  // namespace detail

/// A fake instruction detached from the generator: rows of distributions
/// (one-hot under straight-through) with no path back to its parameters.
template <class T>
struct FakeInstruction {
  const Trajectory* trajectory = nullptr;
  Tensor<T> rows;
};

/// A real instruction for one trajectory.
struct RealInstruction {
  const Trajectory* trajectory = nullptr;
  std::vector<text::TokenId> ids;
};

struct DiscriminatorStepResult {
  double loss = 0.0;
  std::vector<double> p_real, p_fake, loss_each;
};

/// Batch-mean discriminator loss over paired fakes/reals and one clipped Adam step on D.
/// Reported values are from before the update.
template <class T>
DiscriminatorStepResult discriminator_update(EncoderModel<T>& d, Adam<T>& opt,
                                             const std::vector<FakeInstruction<T>>& fakes,
                                             const std::vector<RealInstruction>& reals,
                                             const text::Vocab& vocab, const TrainConfig& cfg) {
  detail::require(!fakes.empty() && fakes.size() == reals.size(),
                  "discriminator_update: need equally many fakes and reals");
  const auto params = d.parameters();
  zero_gradients(params);
  DiscriminatorStepResult out;
  const double inv_b = 1.0 / static_cast<double>(fakes.size());
  for (std::size_t i = 0; i < fakes.size(); ++i) {
    Tape<T> tape;
    const auto& f = fakes[i];
    std::optional<Var<T>> rows;
    if (!f.rows.empty()) rows = tape.constant(f.rows);
    const Var<T> p_fake = score_var(tape, d, *f.trajectory, TextBlock{SoftText{f.rows.empty() ? 0 : f.rows.rows()}},
                                    vocab, cfg.assembly(), rows);
    const Var<T> p_real = score_var(tape, d, *reals[i].trajectory, TextBlock{reals[i].ids}, vocab, cfg.assembly());
    const Var<T> loss = discriminator_loss(p_fake, p_real);
    out.p_fake.push_back(static_cast<double>(p_fake.item()));
    out.p_real.push_back(static_cast<double>(p_real.item()));
    out.loss_each.push_back(static_cast<double>(loss.item()));
    tape.backward(detail::scaled(loss, inv_b));
  }
  out.loss = detail::mean_of(out.loss_each);
  if (std::isfinite(out.loss)) {
    clip_gradients(params, cfg.clip_norm);
    opt.step(params);
  }
  return out;
}

/// Samples fakes from a frozen generator and detaches them.
template <class T>
FakeInstruction<T> sample_fake(const DecoderModel<T>& g, const Trajectory& traj, const text::Vocab& vocab,
                               double tau, RandomStream rng, const TrainConfig& cfg) {
  Tape<T> tape;
  const auto soft = generate_soft(tape, g, traj, vocab, tau, rng, cfg.max_instruction_len + 1,
                                  cfg.generator_options());
  FakeInstruction<T> f{&traj, {}};
  if (const auto rows = soft.instruction()) f.rows = rows->value();
  return f;
}

template <class T>
class Trainer {
 public:
  Trainer(TrainingState<T>& state, const TrainCorpus& corpus)
      : s_(state),
        c_(corpus),
        root_(state.config.seed),
        ce_sampler_(corpus.pairs.size(), root_.substream("ce-batches")),
        gan_sampler_(corpus.episodes.size(), root_.substream("gan-batches")) {
    detail::require(corpus.vocab.hash() == state.vocab.hash(),
                    "corpus vocabulary does not match the model vocabulary");
    detail::require(corpus.feature_dim == state.feature_dim, "corpus feature dim does not match the model");
  }

  /// One CE pretraining step on the batch for the current ce_step.
  TrainLogRecord ce_step() {
    const auto& cfg = s_.config;
    TrainLogRecord r;
    r.step = s_.ce_step + s_.gan_step;
    r.phase = Phase::ce;
    r.phase_step = s_.ce_step;
    const auto batch = ce_sampler_.batch(s_.ce_step, cfg.batch_size);
    auto params = s_.generator.parameters();
    zero_gradients(params);
    // Mean over the batch of per-example mean token losses.
    double total = 0.0;
    for (std::size_t idx : batch) {
      const auto [e, ref] = c_.pairs[idx];
      Tape<T> tape;
      const auto out = teacher_forced_loss(tape, s_.generator, c_.episodes[e], c_.references[e][ref], c_.vocab,
                                           cfg.generator_options());
      total += static_cast<double>(out.loss.item());
      tape.backward(detail::scaled(out.loss, 1.0 / static_cast<double>(batch.size())));
    }
    r.l_ce = total / static_cast<double>(batch.size());
    detail::check_finite(r.l_ce, "CE loss", r);
    clip_gradients(params, cfg.clip_norm);
    s_.generator_opt.step(params);
    ++s_.ce_step;
    return r;
  }

  /// Batch, temperature and noise streams of the current GAN step.
  struct GanBatch {
    double tau = 1.0;
    RandomStream rng{0};
    std::vector<RealInstruction> reals;
  };

  GanBatch gan_batch() {
    const auto& cfg = s_.config;
    GanBatch b;
    b.tau = cfg.temperature(s_.gan_step);
    b.rng = root_.substream("gan").substream(s_.gan_step);
    const auto episodes = gan_sampler_.batch(s_.gan_step, cfg.batch_size);
    for (std::size_t k = 0; k < episodes.size(); ++k) {
      RandomStream pick = b.rng.substream("reference").substream(k);
      const auto& refs = c_.references[episodes[k]];
      b.reals.push_back({&c_.episodes[episodes[k]], refs[pick.below(refs.size())]});
    }
    return b;
  }

  /// d_steps discriminator updates against fakes sampled from the frozen
  /// generator. Touches only D and its optimizer.
  void discriminator_phase(const GanBatch& b, TrainLogRecord& r) {
    const auto& cfg = s_.config;
    DiscriminatorStepResult d_result;
    for (std::size_t ds = 0; ds < cfg.d_steps; ++ds) {
      std::vector<FakeInstruction<T>> fakes;
      const RandomStream noise = b.rng.substream("d-noise").substream(ds);
      for (std::size_t k = 0; k < b.reals.size(); ++k)
        fakes.push_back(sample_fake(std::as_const(s_.generator), *b.reals[k].trajectory, c_.vocab, b.tau,
                                    noise.substream(k), cfg));
      d_result = discriminator_update(s_.discriminator, s_.discriminator_opt, fakes, b.reals, c_.vocab, cfg);
      r.p_real = d_result.p_real;
      r.p_fake = d_result.p_fake;
      r.l_d_each = d_result.loss_each;
      r.l_d = d_result.loss;
      detail::check_finite(d_result.loss, "discriminator loss", r);
    }
    r.p_real_mean = detail::mean_of(d_result.p_real);
    r.p_fake_mean = detail::mean_of(d_result.p_fake);
  }

  /// Generator update on ce_weight·L_CE + λ_adv·L_G with fresh fakes and a
  /// frozen discriminator. Touches only G and its optimizer.
  void generator_phase(const GanBatch& b, TrainLogRecord& r) {
    const auto& cfg = s_.config;
    auto params = s_.generator.parameters();
    zero_gradients(params);
    const double inv_b = 1.0 / static_cast<double>(b.reals.size());
    double ce_total = 0.0, g_total = 0.0;
    const RandomStream g_noise = b.rng.substream("g-noise");
    for (std::size_t k = 0; k < b.reals.size(); ++k) {
      const Trajectory& traj = *b.reals[k].trajectory;
      Tape<T> tape;
      RandomStream noise = g_noise.substream(k);
      const auto fake = generate_soft(tape, s_.generator, traj, c_.vocab, b.tau, noise, cfg.max_instruction_len + 1,
                                      cfg.generator_options());
      const Var<T> p_fake = score_var(tape, std::as_const(s_.discriminator), traj,
                                      TextBlock{SoftText{fake.instruction_length()}}, c_.vocab, cfg.assembly(),
                                      fake.instruction());
      const Var<T> l_g = adversarial_generator_loss(p_fake);
      const auto ce = teacher_forced_loss(tape, s_.generator, traj, b.reals[k].ids, c_.vocab, cfg.generator_options());
      ce_total += static_cast<double>(ce.loss.item());
      g_total += static_cast<double>(l_g.item());
      const Var<T> objective = ops::add(detail::scaled(ce.loss, cfg.ce_weight), detail::scaled(l_g, cfg.lambda_adv));
      tape.backward(detail::scaled(objective, inv_b));
    }
    r.l_ce = ce_total * inv_b;
    r.l_g = g_total * inv_b;
    detail::check_finite(r.l_ce, "CE loss", r);
    detail::check_finite(*r.l_g, "generator adversarial loss", r);
    clip_gradients(params, cfg.clip_norm);
    s_.generator_opt.step(params);
  }

  /// One GAN iteration: discriminator phase, then generator phase.
  TrainLogRecord gan_step() {
    TrainLogRecord r;
    r.step = s_.ce_step + s_.gan_step;
    r.phase = Phase::gan;
    r.phase_step = s_.gan_step;
    const GanBatch b = gan_batch();
    r.tau = b.tau;
    discriminator_phase(b, r);
    generator_phase(b, r);
    ++s_.gan_step;
    return r;
  }

 private:
  TrainingState<T>& s_;
  const TrainCorpus& c_;
  RandomStream root_;
  EpochSampler ce_sampler_;
  EpochSampler gan_sampler_;
};

struct TrainHooks {
  std::function<void(const TrainLogRecord&)> on_record;
  /// Called at every checkpoint interval and when the run stops.
  std::function<void()> on_checkpoint;
  /// Stop after this many steps in this invocation (resume continues).
  std::optional<std::size_t> halt_after;
};

/// CE pretraining then GAN fine-tuning, continuing from whatever progress
/// the state records. Returns true when both phases are complete.
template <class T>
bool train(TrainingState<T>& state, const TrainCorpus& corpus, const TrainHooks& hooks = {}) {
  Trainer<T> trainer(state, corpus);
  const auto start = std::chrono::steady_clock::now();
  const auto& cfg = state.config;
  std::size_t done = 0;
  auto emit = [&](TrainLogRecord& r) {
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (hooks.on_record) hooks.on_record(r);
  };
  auto after_step = [&] {
    ++done;
    if (cfg.checkpoint_every > 0 && (state.ce_step + state.gan_step) % cfg.checkpoint_every == 0 &&
        hooks.on_checkpoint)
      hooks.on_checkpoint();
    return hooks.halt_after && done >= *hooks.halt_after;
  };
  auto halt = [&] {
    if (hooks.on_checkpoint) hooks.on_checkpoint();
    return false;
  };
  auto finished = [&] {
    return (state.ce_complete || state.ce_step >= cfg.ce_steps) && state.gan_step >= cfg.gan_steps;
  };
  try {
    while (!state.ce_complete) {
      if (state.ce_step >= cfg.ce_steps) {
        state.ce_complete = true;
        break;
      }
      auto r = trainer.ce_step();
      if (cfg.ce_stop_loss > 0.0 && r.l_ce < cfg.ce_stop_loss) state.ce_complete = true;
      emit(r);
      if (after_step() && !finished()) return halt();
    }
    while (state.gan_step < cfg.gan_steps) {
      auto r = trainer.gan_step();
      emit(r);
      if (after_step() && !finished()) return halt();
    }
  } catch (NonFiniteLoss& e) {
    TrainLogRecord r = e.record();
    emit(r);
    throw;
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint();
  return true;
}

/// CE pretraining alone: runs until ce_steps or the stop loss.
template <class T>
std::vector<TrainLogRecord> ce_pretrain(TrainingState<T>& state, const TrainCorpus& corpus) {
  std::vector<TrainLogRecord> log;
  TrainConfig cfg = state.config;
  const std::size_t gan_steps = cfg.gan_steps;
  state.config.gan_steps = 0;
  TrainHooks hooks;
  hooks.on_record = [&](const TrainLogRecord& r) { log.push_back(r); };
  try {
    train(state, corpus, hooks);
  } catch (...) {
    state.config.gan_steps = gan_steps;
    throw;
  }
  state.config.gan_steps = gan_steps;
  return log;
}

/// Mean per-token CE of every (episode, reference) pair.
template <class T>
double corpus_ce(const DecoderModel<T>& g, const TrainCorpus& corpus, const GeneratorOptions& opts) {
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& [e, ref] : corpus.pairs) {
    Tape<T> tape;
    const auto out = teacher_forced_loss(tape, g, corpus.episodes[e], corpus.references[e][ref], corpus.vocab, opts);
    nll += static_cast<double>(out.loss.item()) * static_cast<double>(out.steps);
    tokens += out.steps;
  }
  return nll / static_cast<double>(tokens);
}

/// A trajectory/instruction pair with a real (1) or fake (0) label.
struct LabeledPair {
  const Trajectory* trajectory = nullptr;
  std::vector<text::TokenId> ids;
  int label = kRealLabel;
};

/// Supervised binary cross-entropy training of D on labeled hard pairs.
/// Returns the batch loss of each step.
template <class T>
std::vector<double> fit_discriminator(EncoderModel<T>& d, Adam<T>& opt, const std::vector<LabeledPair>& data,
                                      const text::Vocab& vocab, const TrainConfig& cfg, std::size_t steps) {
  detail::require(!data.empty(), "fit_discriminator: no training pairs");
  EpochSampler sampler(data.size(), RandomStream(cfg.seed).substream("discriminator-fit"));
  const auto params = d.parameters();
  std::vector<double> losses;
  for (std::size_t step = 0; step < steps; ++step) {
    zero_gradients(params);
    const auto batch = sampler.batch(step, cfg.batch_size);
    double total = 0.0;
    for (std::size_t idx : batch) {
      const auto& ex = data[idx];
      Tape<T> tape;
      const Var<T> p = score_var(tape, d, *ex.trajectory, TextBlock{ex.ids}, vocab, cfg.assembly());
      const Var<T> loss = ex.label == kRealLabel ? ops::neg_log(p) : ops::neg_log1m(p);
      total += static_cast<double>(loss.item());
      tape.backward(detail::scaled(loss, 1.0 / static_cast<double>(batch.size())));
    }
    losses.push_back(total / static_cast<double>(batch.size()));
    detail::require(std::isfinite(losses.back()), "fit_discriminator: non-finite loss");
    clip_gradients(params, cfg.clip_norm);
    opt.step(params);
  }
  return losses;
}

/// Fraction of pairs whose thresholded score matches the label.
template <class T>
double discriminator_accuracy(const EncoderModel<T>& d, const std::vector<LabeledPair>& data,
                              const text::Vocab& vocab, const AssemblyOptions& opts) {
  detail::require(!data.empty(), "discriminator_accuracy: no pairs");
  std::size_t correct = 0;
  for (const auto& ex : data) {
    const bool real = score(d, *ex.trajectory, ex.ids, vocab, opts).judged_real();
    correct += real == (ex.label == kRealLabel);
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace aigen
