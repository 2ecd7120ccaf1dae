#include <gtest/gtest.h>

#include <cmath>
#include <utility>

#include "aigen/model/discriminator.hpp"
#include "aigen/model/generator.hpp"
#include "test_support.hpp"

using namespace aigen;
using aigen::testing::model_gradient_error;
using aigen::testing::random_tensor;
using text::TokenId;

namespace {

struct Micro {
  text::Vocab vocab = text::build_vocab({"walk to the sink", "open door"}, 1);
  ModelDims dims;
  Trajectory traj;

  Micro() {
    dims.vocab_size = vocab.size();
    dims.feature_dim = 4;
    dims.d_model = 16;
    dims.layers = 2;
    dims.heads = 2;
    dims.ff_width = 64;
    dims.max_seq_len = 16;
    RandomStream rng(99);
    traj.id = "micro";
    traj.features = random_tensor(3, 4, rng);
    traj.objects = {"sink"};
  }

  std::vector<TokenId> ids(const std::string& s) const { return text::encode(s, vocab); }

  /// Wide init with perturbed norms so no gradient is structurally tiny.
  template <class Model>
  Model model(std::uint64_t seed, double init_std = 0.3) const {
    RandomStream rng(seed);
    auto m = Model::init(dims, rng, init_std);
    for (auto* p : m.parameters())
      if (p->name.find("norm") != std::string::npos || p->name.find("bias") != std::string::npos)
        for (auto& v : p->value.data) v += rng.normal() * 0.1;
    return m;
  }
};

using G = DecoderModel<double>;
using D = EncoderModel<double>;

/// Replays a fixed noise table step by step, so repeated forwards see the
/// same draws.
NoiseSource replay(const std::vector<std::vector<double>>& table) {
  auto step = std::make_shared<std::size_t>(0);
  return [table, step](std::size_t k) {
    const auto& row = table.at((*step)++);
    EXPECT_EQ(row.size(), k);
    return row;
  };
}

std::vector<std::vector<double>> noise_table(std::size_t steps, std::size_t k, RandomStream& rng) {
  std::vector<std::vector<double>> t;
  for (std::size_t i = 0; i < steps; ++i) t.push_back(gumbel_noise(rng, k));
  return t;
}

}  // namespace

TEST(TeacherForced, ZeroTokenTableGivesLogVocab) {
  Micro m;
  auto g = m.model<G>(1);
  std::fill(g.embedding.tokens.value.data.begin(), g.embedding.tokens.value.data.end(), 0.0);
  Tape<double> tape;
  const auto out = teacher_forced_loss(tape, g, m.traj, m.ids("walk to the sink"), m.vocab);
  EXPECT_NEAR(out.loss.item(), std::log(static_cast<double>(m.vocab.size())), 1e-12);
}

TEST(TeacherForced, LossCountsOnlyTextSteps) {
  Micro m;
  auto g = m.model<G>(2);
  const auto ref = m.ids("open door");
  Tape<double> tape;
  const auto with = teacher_forced_loss(tape, g, m.traj, ref, m.vocab);
  auto other = m.traj;
  other.objects = {"door", "sink"};
  const auto changed = teacher_forced_loss(tape, g, other, ref, m.vocab);
  EXPECT_EQ(with.steps, 3u);
  EXPECT_EQ(changed.steps, 3u);
  EXPECT_EQ(with.logits.rows(), 3u);
  EXPECT_NE(with.logits.value().data, changed.logits.value().data);

  // Manual mean of the per-step negative log-likelihoods.
  const std::vector<TokenId> targets{ref[0], ref[1], text::kEos};
  double nll = 0.0;
  for (std::size_t s = 0; s < 3; ++s)
    nll -= detail::log_softmax_at(with.logits.value().row(s), static_cast<std::size_t>(targets[s]));
  EXPECT_NEAR(with.loss.item(), nll / 3.0, 1e-12);
}

TEST(TeacherForced, RejectsEmptyReferenceAndOverflow) {
  Micro m;
  auto g = m.model<G>(3);
  Tape<double> tape;
  EXPECT_THROW(teacher_forced_loss(tape, g, m.traj, std::vector<TokenId>{}, m.vocab), InvalidInput);
  std::vector<TokenId> long_ref(20, m.vocab.id("walk"));
  EXPECT_THROW(teacher_forced_loss(tape, g, m.traj, long_ref, m.vocab), InvalidInput);
}

TEST(TeacherForced, EndToEndGradientCheck) {
  Micro m;
  auto g = m.model<G>(4);
  const auto ref = m.ids("walk to the sink");
  const double err = model_gradient_error(
      [&](Tape<double>& tape) { return teacher_forced_loss(tape, g, m.traj, ref, m.vocab).loss; },
      g.parameters());
  EXPECT_LT(err, 1e-4);
}

TEST(TeacherForced, EveryParameterGroupReceivesGradient) {
  Micro m;
  auto g = m.model<G>(5);
  for (auto* p : g.parameters()) p->zero_grad();
  Tape<double> tape;
  tape.backward(teacher_forced_loss(tape, g, m.traj, m.ids("open door"), m.vocab).loss);
  for (const auto* p : g.parameters()) {
    double norm = 0.0;
    for (double v : p->grad) norm += v * v;
    EXPECT_GT(norm, 0.0) << p->name;
  }
}

TEST(DecodeGreedy, DeterministicAndBounded) {
  Micro m;
  const auto g = m.model<G>(6);
  for (std::size_t max_len : {1u, 2u, 5u, 40u}) {
    const auto a = decode_greedy(g, m.traj, m.vocab, max_len);
    const auto b = decode_greedy(g, m.traj, m.vocab, max_len);
    EXPECT_EQ(a.ids, b.ids);
    EXPECT_EQ(a.log_probs, b.log_probs);
    EXPECT_GE(a.ids.size(), 1u);
    EXPECT_LE(a.ids.size(), max_len);
    EXPECT_EQ(a.log_probs.size(), a.ids.size());
    if (a.stop == StopReason::eos) {
      EXPECT_EQ(a.ids.back(), text::kEos);
    } else {
      EXPECT_TRUE(a.ids.size() == max_len || m.traj.steps() + 2 + a.ids.size() > m.dims.max_seq_len);
    }
  }
  const auto one = decode_greedy(g, m.traj, m.vocab, 1);
  EXPECT_EQ(one.ids.size(), 1u);
  EXPECT_EQ(one.stop, one.ids[0] == text::kEos ? StopReason::eos : StopReason::max_len);
  EXPECT_THROW(decode_greedy(g, m.traj, m.vocab, 0), InvalidInput);
}

TEST(DecodeGreedy, TiesGoToLowestId) {
  Micro m;
  auto g = m.model<G>(7);
  std::fill(g.embedding.tokens.value.data.begin(), g.embedding.tokens.value.data.end(), 0.0);
  const auto r = decode_greedy(g, m.traj, m.vocab, 3);
  EXPECT_EQ(r.ids, (std::vector<TokenId>{0, 0, 0}));
}

TEST(DecodeGreedy, TruncatesAtSequenceLimit) {
  Micro m;
  auto g = m.model<G>(8);
  // Constant final state e_0 makes logits column 0 of the token table.
  std::fill(g.stack.final_norm.gain.value.data.begin(), g.stack.final_norm.gain.value.data.end(), 0.0);
  std::fill(g.stack.final_norm.bias.value.data.begin(), g.stack.final_norm.bias.value.data.end(), 0.0);
  g.stack.final_norm.bias.value(0, 0) = 1.0;
  g.embedding.tokens.value(text::kEos, 0) = -50.0;
  const auto r = decode_greedy(g, m.traj, m.vocab, 100);
  const std::size_t prompt = m.traj.steps() + 1 + 1;
  EXPECT_EQ(r.stop, StopReason::max_len);
  EXPECT_EQ(r.ids.size(), m.dims.max_seq_len - prompt + 1);
}

TEST(SampleDecode, LowTemperatureRecoversGreedy) {
  Micro m;
  const auto g = m.model<G>(9);
  const auto greedy = decode_greedy(g, m.traj, m.vocab, 10);
  RandomStream rng(1);
  const auto sampled = sample_decode(g, m.traj, m.vocab, 1e-4, rng, 10);
  EXPECT_EQ(sampled.ids, greedy.ids);
  EXPECT_THROW(sample_decode(g, m.traj, m.vocab, 0.0, rng, 10), InvalidInput);
}

TEST(SampleDecode, SeedsCanDiffer) {
  Micro m;
  const auto g = m.model<G>(10, 0.05);
  bool differ = false;
  RandomStream a(1), b(2);
  for (int i = 0; i < 10 && !differ; ++i)
    differ = sample_decode(g, m.traj, m.vocab, 1.0, a, 8).ids != sample_decode(g, m.traj, m.vocab, 1.0, b, 8).ids;
  EXPECT_TRUE(differ);
}

TEST(SampleDecode, FirstTokenFrequenciesMatchSoftmax) {
  Micro m;
  const auto g = m.model<G>(11, 0.1);
  Tape<double> tape;
  const auto prompt = assemble_generator_prefix(m.traj, std::vector<TokenId>{}, m.vocab);
  const auto logits = detail::last_logits(tape, g, prompt, m.traj);
  const auto p = softmax(std::vector<double>(logits.value().data));

  constexpr std::size_t kSamples = 10000;
  std::vector<std::size_t> counts(p.size(), 0);
  RandomStream rng(123);
  for (std::size_t i = 0; i < kSamples; ++i)
    ++counts[static_cast<std::size_t>(sample_decode(g, m.traj, m.vocab, 1.0, rng, 1).ids[0])];
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double sigma = std::sqrt(p[k] * (1.0 - p[k]) / kSamples);
    EXPECT_NEAR(static_cast<double>(counts[k]) / kSamples, p[k], 3.0 * sigma) << "token " << k;
  }
}

TEST(GenerateSoft, ZeroNoiseReproducesGreedyExactly) {
  Micro m;
  auto g = m.model<G>(12);
  const auto greedy = decode_greedy(std::as_const(g), m.traj, m.vocab, 8);
  for (double tau : {1.0, 0.3}) {
    Tape<double> tape;
    const auto soft = generate_soft(tape, g, m.traj, m.vocab, tau,
                                    NoiseSource([](std::size_t k) { return std::vector<double>(k, 0.0); }), 8);
    EXPECT_EQ(soft.result.ids, greedy.ids);
    EXPECT_EQ(soft.result.log_probs, greedy.log_probs);
    EXPECT_EQ(soft.result.stop, greedy.stop);
  }
}

TEST(GenerateSoft, LowTemperatureRowsAreOneHot) {
  Micro m;
  auto g = m.model<G>(13);
  const auto greedy = decode_greedy(std::as_const(g), m.traj, m.vocab, 6);
  Tape<double> tape;
  const auto soft = generate_soft(tape, g, m.traj, m.vocab, 0.01,
                                  NoiseSource([](std::size_t k) { return std::vector<double>(k, 0.0); }), 6);
  ASSERT_EQ(soft.result.ids, greedy.ids);
  for (std::size_t s = 0; s < soft.result.soft.size(); ++s)
    for (std::size_t k = 0; k < m.vocab.size(); ++k)
      EXPECT_NEAR(soft.result.soft[s][k], static_cast<TokenId>(k) == soft.result.ids[s] ? 1.0 : 0.0, 1e-3);
}

TEST(GenerateSoft, ForcedNoiseFollowsHardContext) {
  Micro m;
  auto g = m.model<G>(14);
  const std::vector<TokenId> forced{m.vocab.id("open"), m.vocab.id("the"), m.vocab.id("door")};
  std::vector<std::vector<double>> table;
  for (auto id : forced) {
    std::vector<double> row(m.vocab.size(), 0.0);
    row[static_cast<std::size_t>(id)] = 1e6;
    table.push_back(row);
  }
  Tape<double> tape;
  const auto soft = generate_soft(tape, g, m.traj, m.vocab, 1.0, replay(table), 3);
  ASSERT_EQ(soft.result.ids, forced);
  std::vector<TokenId> prefix;
  for (std::size_t s = 0; s < forced.size(); ++s) {
    Tape<double> t;
    const auto seq = assemble_generator_prefix(m.traj, prefix, m.vocab);
    const auto logits = detail::last_logits(t, std::as_const(g), seq, m.traj);
    EXPECT_EQ(soft.result.log_probs[s],
              detail::log_softmax_at(logits.value().row(0), static_cast<std::size_t>(forced[s])));
    prefix.push_back(forced[s]);
  }
}

TEST(GenerateSoft, RowsAreDistributionsAndIdsAreArgmax) {
  Micro m;
  auto g = m.model<G>(15, 0.05);
  RandomStream rng(5);
  for (double tau : {2.0, 1.0, 0.5, 0.1}) {
    for (bool st : {true, false}) {
      GeneratorOptions opts;
      opts.straight_through = st;
      Tape<double> tape;
      const auto soft = generate_soft(tape, g, m.traj, m.vocab, tau, rng, 6, opts);
      ASSERT_EQ(soft.result.soft.size(), soft.result.ids.size());
      EXPECT_LE(soft.result.ids.size(), 6u);
      for (std::size_t s = 0; s < soft.result.ids.size(); ++s) {
        const auto& row = soft.result.soft[s];
        double sum = 0.0;
        for (double v : row) sum += v;
        EXPECT_NEAR(sum, 1.0, 1e-6);
        EXPECT_EQ(static_cast<std::size_t>(soft.result.ids[s]),
                  detail::argmax_lowest(std::span<const double>(row)));
      }
    }
  }
  Tape<double> tape;
  EXPECT_THROW(generate_soft(tape, g, m.traj, m.vocab, 0.0, rng, 4), InvalidInput);
}

TEST(GenerateSoft, DiscriminatorGradientReachesGeneratorEmbeddings) {
  Micro m;
  auto g = m.model<G>(16, 0.02);
  const auto d = m.model<D>(17, 0.02);
  RandomStream rng(3);
  for (auto* p : g.parameters()) p->zero_grad();
  Tape<double> tape;
  const auto fake = generate_soft(tape, g, m.traj, m.vocab, 1.0, rng, 5);
  const auto rows = fake.instruction();
  ASSERT_TRUE(rows.has_value());
  const auto p = score_var(tape, d, m.traj, TextBlock{SoftText{fake.instruction_length()}}, m.vocab, {}, rows);
  tape.backward(adversarial_generator_loss(p));
  double norm = 0.0;
  for (double v : g.embedding.tokens.grad) norm += v * v;
  EXPECT_GT(norm, 0.0);
  for (const auto* q : d.parameters())
    for (double v : q->grad) EXPECT_EQ(v, 0.0);
}

TEST(FakePath, GradientMatchesFiniteDifferences) {
  Micro m;
  auto g = m.model<G>(18);
  const auto d = m.model<D>(19);
  RandomStream rng(8);
  const auto table = noise_table(4, m.vocab.size(), rng);
  GeneratorOptions opts;
  opts.straight_through = false;  // the relaxed path is differentiable everywhere
  auto forward = [&](Tape<double>& tape) {
    const auto fake = generate_soft(tape, g, m.traj, m.vocab, 1.0, replay(table), 4, opts);
    const auto rows = fake.instruction();
    const auto p =
        score_var(tape, d, m.traj, TextBlock{SoftText{fake.instruction_length()}}, m.vocab, {}, rows);
    EXPECT_GT(p.item(), 1e-3);
    EXPECT_LT(p.item(), 1.0 - 1e-3);
    return adversarial_generator_loss(p);
  };
  EXPECT_LT(model_gradient_error(forward, g.parameters()), 1e-4);
}

TEST(Score, ClampedRange) {
  Micro m;
  RandomStream rng(20);
  for (double bias : {-100.0, -3.0, 0.0, 3.0, 100.0}) {
    auto d = m.model<D>(21);
    d.head.bias.value(0, 0) = bias;
    const auto s = score(d, m.traj, m.ids("walk to the sink"), m.vocab);
    EXPECT_GE(s.probability, kProbabilityClamp);
    EXPECT_LE(s.probability, 1.0 - kProbabilityClamp);
    EXPECT_EQ(s.label, kRealLabel);
  }
  auto d = m.model<D>(21);
  d.head.bias.value(0, 0) = 100.0;
  EXPECT_DOUBLE_EQ(score(d, m.traj, m.ids("open door"), m.vocab).probability, 1.0 - kProbabilityClamp);
  d.head.bias.value(0, 0) = -100.0;
  EXPECT_DOUBLE_EQ(score(d, m.traj, m.ids("open door"), m.vocab).probability, kProbabilityClamp);
}

TEST(Score, OneHotRowsMatchHardIds) {
  Micro m;
  for (Pooling pooling : {Pooling::cls, Pooling::mean}) {
    auto d = m.model<D>(22);
    d.pooling = pooling;
    const auto ids = m.ids("walk to the sink");
    Tensor<double> onehot(ids.size(), m.vocab.size());
    for (std::size_t i = 0; i < ids.size(); ++i) onehot(i, static_cast<std::size_t>(ids[i])) = 1.0;
    EXPECT_EQ(score(d, m.traj, ids, m.vocab).probability, score(d, m.traj, onehot, m.vocab).probability);
  }
}

TEST(Score, DeterministicAndOrderIndependent) {
  Micro m;
  const auto d = m.model<D>(23);
  auto other = m.traj;
  other.id = "other";
  other.features.data[0] += 1.0;
  const auto a1 = score(d, m.traj, m.ids("open door"), m.vocab).probability;
  const auto b1 = score(d, other, m.ids("walk"), m.vocab).probability;
  const auto b2 = score(d, other, m.ids("walk"), m.vocab).probability;
  const auto a2 = score(d, m.traj, m.ids("open door"), m.vocab).probability;
  EXPECT_EQ(a1, a2);
  EXPECT_EQ(b1, b2);
}

TEST(Score, RejectsOverflowAndMismatchedFeatures) {
  Micro m;
  const auto d = m.model<D>(24);
  EXPECT_THROW(score(d, m.traj, std::vector<TokenId>(12, m.vocab.id("walk")), m.vocab), InvalidInput);
  auto wide = m.traj;
  RandomStream rng(1);
  wide.features = random_tensor(3, 5, rng);
  EXPECT_THROW(score(d, wide, m.ids("walk"), m.vocab), InvalidInput);
}

TEST(Pooling, ParsesNames) {
  EXPECT_EQ(parse_pooling("cls"), Pooling::cls);
  EXPECT_EQ(parse_pooling("mean"), Pooling::mean);
  EXPECT_THROW(parse_pooling("max"), InvalidInput);
  EXPECT_STREQ(to_string(Pooling::mean), "mean");
}

TEST(Losses, ClosedFormAnchors) {
  EXPECT_NEAR(discriminator_loss(0.5, 0.5), 2.0 * std::log(2.0), 1e-12);
  EXPECT_NEAR(discriminator_loss(0.9, 0.2), -std::log(0.1) - std::log(0.2), 1e-12);
  EXPECT_NEAR(discriminator_loss(0.9, 0.2), 3.912, 5e-4);
  EXPECT_NEAR(adversarial_generator_loss(0.5), std::log(2.0), 1e-12);
  EXPECT_LT(discriminator_loss(0.0, 1.0), 1e-6);
  EXPECT_GT(discriminator_loss(0.0, 1.0), 0.0);
  EXPECT_LT(adversarial_generator_loss(1.0), 1e-6);
}

TEST(Losses, TapeFormsMatchClosedFormOnRandomProbabilities) {
  RandomStream rng(31);
  for (int i = 0; i < 1000; ++i) {
    const double pf = clamp_probability(rng.uniform());
    const double pr = clamp_probability(rng.uniform());
    Tape<double> tape;
    const auto vf = tape.variable(Tensor<double>(1, 1, pf));
    const auto vr = tape.variable(Tensor<double>(1, 1, pr));
    EXPECT_NEAR(discriminator_loss(vf, vr).item(), -std::log(1.0 - pf) - std::log(pr), 1e-9);
    const auto lg = adversarial_generator_loss(vf);
    EXPECT_NEAR(lg.item(), -std::log(pf), 1e-9);
    EXPECT_NEAR(discriminator_loss(pf, pr), -std::log(1.0 - pf) - std::log(pr), 1e-9);
    tape.backward(lg);
    EXPECT_LT(tape.grad(vf)[0], 0.0);
    EXPECT_NEAR(tape.grad(vf)[0], -1.0 / pf, 1e-9 / pf);
  }
}
