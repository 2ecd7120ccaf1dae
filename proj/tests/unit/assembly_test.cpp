#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "aigen/model/transformer.hpp"
#include "test_support.hpp"

using namespace aigen;
using aigen::testing::random_tensor;

namespace {

text::Vocab fixture_vocab() { return text::build_vocab({"turn on the sink", "open drawer in kitchen"}, 1); }

Trajectory make_trajectory(std::size_t steps, std::size_t dim, std::vector<std::string> objects,
                           std::uint64_t seed = 1) {
  RandomStream rng(seed);
  Trajectory t;
  t.id = "ep" + std::to_string(seed);
  t.features = random_tensor(steps, dim, rng);
  t.objects = std::move(objects);
  return t;
}

}  // namespace

TEST(GeneratorAssembly, TeacherForcingLayout) {
  const auto vocab = fixture_vocab();
  const auto traj = make_trajectory(2, 4, {"sink"});
  const std::vector<text::TokenId> text{vocab.id("turn"), vocab.id("on")};
  const auto seq = assemble_generator_input(traj, text, vocab);
  ASSERT_EQ(seq.size(), 7u);
  EXPECT_EQ(seq.segment_ids, (std::vector<std::size_t>{0, 0, 1, 2, 2, 2, 2}));
  EXPECT_EQ(seq.position_ids, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(seq.visual_slots, 2u);
  EXPECT_EQ(seq.object_ids, (std::vector<text::TokenId>{vocab.id("sink")}));
  EXPECT_EQ(seq.text_ids, (std::vector<text::TokenId>{text::kBos, vocab.id("turn"), vocab.id("on"), text::kEos}));
  EXPECT_EQ(seq.text_begin, 3u);
}

TEST(GeneratorAssembly, PromptEndsAtBos) {
  const auto vocab = fixture_vocab();
  const auto traj = make_trajectory(3, 4, {"sink", "drawer"});
  const auto seq = assemble_generator_input(traj, std::vector<text::TokenId>{}, vocab);
  ASSERT_EQ(seq.size(), 6u);
  EXPECT_EQ(seq.slots.back(), (Slot{SlotKind::token, text::kBos}));
  EXPECT_EQ(seq.text_ids, (std::vector<text::TokenId>{text::kBos}));
}

TEST(GeneratorAssembly, CausalMaskIsLowerTriangular) {
  const auto vocab = fixture_vocab();
  const auto traj = make_trajectory(2, 4, {"sink"});
  const std::vector<text::TokenId> text{vocab.id("turn"), vocab.id("on")};
  const auto seq = assemble_generator_input(traj, text, vocab);
  ASSERT_EQ(seq.mask->size, 7u);
  for (std::size_t j = 0; j < 7; ++j)
    for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ((*seq.mask)(j, i), i <= j) << j << "," << i;
}

TEST(GeneratorAssembly, PrefixVisibleSwitch) {
  const auto vocab = fixture_vocab();
  const auto traj = make_trajectory(2, 4, {"sink"});
  AssemblyOptions opts;
  opts.prefix_visible = true;
  const auto seq = assemble_generator_input(traj, std::vector<text::TokenId>{vocab.id("on")}, vocab, opts);
  EXPECT_TRUE((*seq.mask)(0, 2));   // visual sees object slot
  EXPECT_FALSE((*seq.mask)(0, 3));  // but not text
  EXPECT_FALSE((*seq.mask)(3, 4));
}

TEST(GeneratorAssembly, NoObjectsKeepsPositionsContiguous) {
  const auto vocab = fixture_vocab();
  const auto traj = make_trajectory(2, 4, {"sink"});
  AssemblyOptions opts;
  opts.use_objects = false;
  const auto seq = assemble_generator_input(traj, std::vector<text::TokenId>{vocab.id("on")}, vocab, opts);
  EXPECT_EQ(seq.segment_ids, (std::vector<std::size_t>{0, 0, 2, 2, 2}));
  EXPECT_EQ(seq.position_ids, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(GeneratorAssembly, RejectsOverflowAndSpecials) {
  const auto vocab = fixture_vocab();
  const auto traj = make_trajectory(5, 4, {"sink"});
  AssemblyOptions opts;
  opts.max_seq_len = 8;
  const std::vector<text::TokenId> text{vocab.id("turn"), vocab.id("on")};
  EXPECT_THROW(assemble_generator_input(traj, text, vocab, opts), InvalidInput);
  EXPECT_THROW(assemble_generator_input(traj, std::vector<text::TokenId>{text::kEos}, vocab),
               InvalidInput);
  Trajectory empty;
  EXPECT_THROW(assemble_generator_input(empty, text, vocab), InvalidInput);
}

TEST(DiscriminatorAssembly, LayoutAndFullMask) {
  const auto vocab = fixture_vocab();
  const auto traj = make_trajectory(2, 4, {"sink"});
  const std::vector<text::TokenId> text{vocab.id("turn"), vocab.id("on"), vocab.id("the")};
  const auto seq = assemble_discriminator_input(traj, TextBlock{text}, vocab);
  ASSERT_EQ(seq.size(), 10u);
  EXPECT_EQ(seq.slots.front(), (Slot{SlotKind::token, text::kCls}));
  EXPECT_EQ(seq.slots[3], (Slot{SlotKind::token, text::kSep}));
  EXPECT_EQ(seq.slots[5], (Slot{SlotKind::token, text::kSep}));
  EXPECT_EQ(seq.slots.back(), (Slot{SlotKind::token, text::kSep}));
  EXPECT_EQ(seq.segment_ids, (std::vector<std::size_t>{0, 0, 0, 0, 1, 1, 2, 2, 2, 2}));
  EXPECT_EQ(seq.object_ids.size(), 1u);
  EXPECT_EQ(seq.text_ids, text);
  EXPECT_EQ(seq.mask->allowed, std::vector<std::uint8_t>(100, 1));
}

TEST(DiscriminatorAssembly, RealAndGeneratedDifferOnlyInText) {
  const auto vocab = fixture_vocab();
  const auto traj = make_trajectory(3, 4, {"sink"});
  const std::vector<text::TokenId> real{vocab.id("turn"), vocab.id("on")};
  const std::vector<text::TokenId> fake{vocab.id("open"), vocab.id("drawer")};
  const auto a = assemble_discriminator_input(traj, TextBlock{real}, vocab);
  const auto b = assemble_discriminator_input(traj, TextBlock{fake}, vocab);
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(a.segment_ids, b.segment_ids);
  EXPECT_EQ(a.position_ids, b.position_ids);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (i >= a.text_begin && i < a.text_begin + 2) continue;
    EXPECT_EQ(a.slots[i], b.slots[i]);
  }
  const auto soft = assemble_discriminator_input(traj, TextBlock{SoftText{2}}, vocab);
  EXPECT_EQ(soft.segment_ids, a.segment_ids);
  EXPECT_EQ(soft.slots[a.text_begin], (Slot{SlotKind::soft, 0}));
}

TEST(Assembly, Deterministic) {
  const auto vocab = fixture_vocab();
  const auto traj = make_trajectory(4, 4, {"sink", "drawer"});
  const std::vector<text::TokenId> text{vocab.id("turn"), vocab.id("on")};
  EXPECT_EQ(assemble_generator_input(traj, text, vocab), assemble_generator_input(traj, text, vocab));
  EXPECT_EQ(assemble_discriminator_input(traj, TextBlock{text}, vocab),
            assemble_discriminator_input(traj, TextBlock{text}, vocab));
}

namespace {

struct EmbedFixture {
  text::Vocab vocab = fixture_vocab();
  ModelDims dims;
  InputEmbedding<double> emb;
  EmbedFixture() {
    dims.vocab_size = vocab.size();
    dims.feature_dim = 4;
    dims.d_model = 8;
    dims.max_seq_len = 16;
    RandomStream rng(21);
    emb = make_input_embedding<double>(dims, 0.5, rng);
    for (auto& b : emb.visual.bias.value.data) b = rng.normal();
  }
};

}  // namespace

TEST(Embed, OneHotSoftRowsEqualHardTokens) {
  EmbedFixture f;
  const auto traj = make_trajectory(2, 4, {"sink"});
  const std::vector<text::TokenId> ids{f.vocab.id("turn"), f.vocab.id("on"), f.vocab.id("kitchen")};
  Tensor<double> onehot(ids.size(), f.vocab.size());
  for (std::size_t i = 0; i < ids.size(); ++i) onehot(i, static_cast<std::size_t>(ids[i])) = 1.0;
  Tape<double> tape;
  const auto hard = embed(tape, f.emb, assemble_discriminator_input(traj, TextBlock{ids}, f.vocab), traj);
  const auto soft = embed(tape, f.emb, assemble_discriminator_input(traj, TextBlock{SoftText{3}}, f.vocab),
                          traj, tape.constant(onehot));
  EXPECT_EQ(hard.value().data, soft.value().data);
}

TEST(Embed, ZeroVisualFeatureGivesBiasPlusPositionPlusSegment) {
  EmbedFixture f;
  auto traj = make_trajectory(2, 4, {});
  std::fill(traj.features.data.begin(), traj.features.data.end(), 0.0);
  Tape<double> tape;
  const auto seq = assemble_generator_input(traj, std::vector<text::TokenId>{}, f.vocab);
  const auto x = embed(tape, f.emb, seq, traj);
  for (std::size_t slot = 0; slot < 2; ++slot)
    for (std::size_t c = 0; c < f.dims.d_model; ++c) {
      const double expected = f.emb.visual.bias.value(0, c) + f.emb.positions.value(slot, c) +
                              f.emb.segments.value(kVisualSegment, c);
      EXPECT_DOUBLE_EQ(x.value()(slot, c), expected);
    }
}

TEST(Embed, SoftMixtureMatchesLoopOracle) {
  EmbedFixture f;
  const auto traj = make_trajectory(1, 4, {"sink"});
  RandomStream rng(4);
  Tensor<double> soft(2, f.vocab.size());
  for (std::size_t r = 0; r < 2; ++r) {
    double z = 0.0;
    for (auto& v : soft.row(r)) z += (v = rng.uniform());
    for (auto& v : soft.row(r)) v /= z;
  }
  const auto seq = assemble_discriminator_input(traj, TextBlock{SoftText{2}}, f.vocab);
  Tape<double> tape;
  const auto x = embed(tape, f.emb, seq, traj, tape.constant(soft));
  for (std::size_t r = 0; r < 2; ++r) {
    const std::size_t slot = seq.text_begin + r;
    for (std::size_t c = 0; c < f.dims.d_model; ++c) {
      double mix = 0.0;
      for (std::size_t v = 0; v < f.vocab.size(); ++v) mix += soft(r, v) * f.emb.tokens.value(v, c);
      const double expected =
          mix + f.emb.positions.value(slot, c) + f.emb.segments.value(kTextSegment, c);
      EXPECT_NEAR(x.value()(slot, c), expected, 1e-12);
    }
  }
}

TEST(Ingestion, ReadsJsonLinesAndValidatesManifest) {
  const auto dir = std::filesystem::temp_directory_path() / "aigen_ingest_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "traj.jsonl").string();
  {
    std::ofstream out(path);
    out << R"({"id":"a","features":[[1,2],[3,4]],"objects":["sink"],"references":["turn on"]})" << "\n";
    out << R"({"id":"b","features":[[0.5,0.25]],"objects":[],"references":[],"truth":{"room":"x"}})" << "\n";
  }
  std::ofstream(manifest_path(path)) << R"({"feature_dim":2})";
  const auto trajs = read_trajectories(path);
  ASSERT_EQ(trajs.size(), 2u);
  EXPECT_EQ(trajs[0].steps(), 2u);
  EXPECT_EQ(trajs[0].features(1, 0), 3.0);
  EXPECT_EQ(trajs[1].references.size(), 0u);

  std::ofstream(manifest_path(path)) << R"({"feature_dim":3})";
  EXPECT_THROW(read_trajectories(path), InvalidInput);
  std::filesystem::remove(manifest_path(path));

  {
    std::ofstream out(path);
    out << R"({"id":"a","features":[[1,2],[3]],"objects":[],"references":[]})" << "\n";
  }
  try {
    read_trajectories(path);
    FAIL() << "expected ragged features to be rejected";
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find(":1:"), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}
