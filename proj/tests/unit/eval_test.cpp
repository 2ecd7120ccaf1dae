#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "aigen/core/random.hpp"
#include "aigen/eval/report.hpp"

using namespace aigen;
using namespace aigen::eval;

namespace {

std::vector<Sentence> sents(std::initializer_list<const char*> texts) {
  std::vector<Sentence> out;
  for (const char* t : texts) out.push_back(tokens(t));
  return out;
}

std::vector<ReferenceSet> single_refs(std::initializer_list<const char*> texts) {
  std::vector<ReferenceSet> out;
  for (const char* t : texts) out.push_back({tokens(t)});
  return out;
}

const std::string kGenerated = std::string(AIGEN_TEST_DATA) + "/eval_generated.jsonl";
const std::string kReferences = std::string(AIGEN_TEST_DATA) + "/eval_references.jsonl";
const std::string kGolden = std::string(AIGEN_TEST_DATA) + "/eval_golden.json";

}  // namespace

TEST(NGrams, CountsAndDocumentFrequency) {
  const auto idx = NGramIndex::build(sents({"a b a b", "b c"}));
  ASSERT_EQ(idx.sentences.size(), 2u);
  EXPECT_EQ(idx.sentences[0][0].at("a"), 2u);
  EXPECT_EQ(idx.sentences[0][1].at("a b"), 2u);
  EXPECT_EQ(idx.sentences[0][1].at("b a"), 1u);
  EXPECT_EQ(idx.sentences[0][3].size(), 1u);
  EXPECT_TRUE(idx.sentences[1][2].empty());
  EXPECT_EQ(idx.document_frequency[0].at("b"), 2u);
  EXPECT_EQ(idx.document_frequency[0].at("c"), 1u);
  for (const auto& df : idx.document_frequency)
    for (const auto& [g, n] : df) EXPECT_LE(n, 2u);
}

TEST(Bleu, IdenticalIsOneAndDisjointIsZero) {
  const auto c = sents({"go to the kitchen", "open the door now"});
  std::vector<ReferenceSet> r{{c[0]}, {tokens("shut it"), c[1]}};
  for (std::size_t n = 1; n <= 4; ++n) EXPECT_DOUBLE_EQ(bleu(c, r, n), 1.0);
  EXPECT_EQ(bleu(sents({"x y z"}), single_refs({"a b c"}), 1), 0.0);
}

TEST(Bleu, BrevityPenaltyFixture) {
  EXPECT_NEAR(bleu(sents({"the cat sat"}), single_refs({"the cat sat down"}), 1), 0.7165313105737893, 1e-12);
  EXPECT_NEAR(std::exp(1.0 - 4.0 / 3.0), 0.7165313105737893, 1e-15);
}

TEST(Bleu, ClippingAgainstReferences) {
  // "the" appears seven times but at most twice in a reference.
  const double b1 = bleu(sents({"the the the the the the the"}), {{tokens("the cat is on the mat")}}, 1);
  EXPECT_NEAR(b1, 2.0 / 7.0, 1e-12);
}

TEST(Bleu, RejectsEmptyAndMismatched) {
  EXPECT_THROW(bleu({}, {}, 1), InvalidInput);
  EXPECT_THROW(bleu(sents({"a"}), {}, 1), InvalidInput);
  EXPECT_THROW(bleu(sents({"a"}), {ReferenceSet{}}, 1), InvalidInput);
}

TEST(Rouge, Fixtures) {
  EXPECT_DOUBLE_EQ(rouge_l(sents({"a b c"}), single_refs({"a b c"})), 1.0);
  EXPECT_EQ(rouge_l(sents({"a b"}), single_refs({"c d"})), 0.0);
  // LCS 2, P = 1, R = 2/3, beta 1.2.
  const double p = 1.0, r = 2.0 / 3.0, b2 = 1.44;
  const double expected = (1 + b2) * p * r / (r + b2 * p);
  EXPECT_NEAR(rouge_l(sents({"a c"}), single_refs({"a b c"})), expected, 1e-15);
  EXPECT_NEAR(expected, 0.7721518987341772, 1e-15);
}

TEST(Rouge, MaxOverReferences) {
  std::vector<ReferenceSet> refs{{tokens("x y z"), tokens("a b c")}};
  EXPECT_DOUBLE_EQ(rouge_l(sents({"a b c"}), refs), 1.0);
  EXPECT_THROW(rouge_l({}, {}), InvalidInput);
}

TEST(Meteor, Stemmer) {
  EXPECT_EQ(stem("walking"), "walk");
  EXPECT_EQ(stem("opened"), "open");
  EXPECT_EQ(stem("dogs"), "dog");
  EXPECT_EQ(stem("glass"), "glass");
  EXPECT_EQ(stem("is"), "is");
  EXPECT_EQ(stem("sing"), "sing");
}

TEST(Meteor, AnalyticFixtures) {
  EXPECT_EQ(meteor_lite(sents({"x y"}), single_refs({"a b"})), 0.0);
  const auto a = meteor_align(tokens("dog"), tokens("dog"));
  EXPECT_EQ(a.matches, 1u);
  EXPECT_EQ(a.chunks, 1u);
  EXPECT_DOUBLE_EQ(a.score, 0.5);
}

TEST(Meteor, HandAlignedTwoSentenceFixture) {
  const auto first = meteor_align(tokens("the dogs ran quickly home"), tokens("the dog ran home quickly"));
  EXPECT_EQ(first.matches, 5u);
  EXPECT_EQ(first.chunks, 3u);
  EXPECT_NEAR(first.score, 0.892, 1e-12);
  const auto second = meteor_align(tokens("a cat is sleeping on the mat"), tokens("the cat sleeps on a mat"));
  EXPECT_EQ(second.matches, 6u);
  EXPECT_EQ(second.chunks, 5u);
  EXPECT_NEAR(second.score, 60.0 / 61.0 * (1.0 - 0.5 * 125.0 / 216.0), 1e-12);
  const double corpus = meteor_lite(sents({"the dogs ran quickly home", "a cat is sleeping on the mat"}),
                                    single_refs({"the dog ran home quickly", "the cat sleeps on a mat"}));
  EXPECT_NEAR(corpus, 0.7954990892531877, 1e-12);
}

TEST(Cider, SinglePairIsZero) {
  EXPECT_EQ(cider_d(sents({"go to the kitchen"}), single_refs({"go to the kitchen"})), 0.0);
}

TEST(Cider, ExactCopyIsMaximalInFixture) {
  const auto pairs = load_eval_pairs(kGenerated, kReferences);
  std::vector<Sentence> cands;
  std::vector<ReferenceSet> refs;
  for (const auto& p : pairs) {
    cands.push_back(tokens(p.generated));
    ReferenceSet s;
    for (const auto& r : p.references) s.push_back(tokens(r));
    refs.push_back(s);
  }
  const auto each = cider_d_each(cands, refs);
  const std::vector<double> oracle{6.476573962098894,  10.0, 6.027547440367639,  2.3476949561668543,
                                   4.828682646298682,  3.873547991025264,  1.3251987284449196,
                                   1.3853263238390774, 0.982095798937056,  0.21755408447013236};
  ASSERT_EQ(each.size(), oracle.size());
  for (std::size_t i = 0; i < each.size(); ++i) EXPECT_NEAR(each[i], oracle[i], 1e-9) << i;
  // g02 is identical to its only reference.
  EXPECT_GT(each[1], 0.0);
  EXPECT_EQ(std::max_element(each.begin(), each.end()) - each.begin(), 1);
}

TEST(Cider, ScalingTermFrequenciesKeepsSimilarity) {
  eval::detail::TfIdf a, b;
  a.vec[0] = {{"x", 1.0}, {"y", 2.0}};
  b.vec[0] = {{"x", 3.0}, {"y", 1.0}};
  auto norms = [](eval::detail::TfIdf& t) {
    for (std::size_t n = 0; n < kMaxOrder; ++n) {
      double s = 0.0;
      for (const auto& [g, w] : t.vec[n]) s += w * w;
      t.norm[n] = std::sqrt(s);
    }
  };
  norms(a);
  norms(b);
  const auto base = eval::detail::cider_sim(a, b, 6.0);
  for (auto* t : {&a, &b})
    for (auto& [g, w] : t->vec[0]) w *= 2.0;
  norms(a);
  norms(b);
  EXPECT_NEAR(eval::detail::cider_sim(a, b, 6.0)[0], base[0], 1e-15);
}

TEST(Diversity, HandCountedFixture) {
  const auto d = diversity_report(sents({"a b", "a b"}), sents({"z"}));
  EXPECT_EQ(d.unigrams, 2u);
  EXPECT_EQ(d.unigram_tokens, 4u);
  EXPECT_DOUBLE_EQ(d.div1, 0.5);
  EXPECT_EQ(d.bigrams, 1u);
  EXPECT_DOUBLE_EQ(d.div2, 0.25);
  EXPECT_DOUBLE_EQ(d.novel, 1.0);
  const auto conventional = diversity_report(sents({"a b", "a b"}), sents({"z"}), Div2Denominator::bigram_tokens);
  EXPECT_DOUBLE_EQ(conventional.div2, 0.5);
}

TEST(Diversity, CopyOfReferencesIsNotNovel) {
  const auto refs = sents({"go to the kitchen", "open the fridge", "go to the hall"});
  const auto copy = diversity_report(refs, refs);
  EXPECT_EQ(copy.novel, 0.0);
  const auto self = diversity_report(refs, sents({"unrelated"}));
  EXPECT_EQ(copy.div1, self.div1);
  EXPECT_EQ(copy.div2, self.div2);
}

TEST(Diversity, RejectsEmpty) {
  EXPECT_THROW(diversity_report({}, sents({"a"})), InvalidInput);
  EXPECT_THROW(diversity_report(sents({"a"}), {}), InvalidInput);
  EXPECT_THROW(diversity_report({Sentence{}}, sents({"a"})), InvalidInput);
}

TEST(Diversity, BoundsOnRandomCorpora) {
  RandomStream rng(31);
  const std::vector<std::string> words{"a", "b", "c", "d", "e", "f", "g"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Sentence> corpus(1 + rng.below(6));
    for (auto& s : corpus) {
      s.resize(1 + rng.below(8));
      for (auto& w : s) w = words[rng.below(words.size())];
    }
    const auto d = diversity_report(corpus, corpus);
    EXPECT_GT(d.div1, 0.0);
    EXPECT_LE(d.div1, 1.0);
    EXPECT_LE(d.bigrams, d.unigram_tokens - corpus.size());
  }
}

TEST(Diversity, PublishedTableIsConsistentWithUnigramDenominator) {
  const auto gt = implied_div2(3675, 21551, 0.019);
  EXPECT_NEAR(gt.tokens, 193421.05263157896, 1e-6);
  EXPECT_NEAR(gt.div2, 0.113, 0.003);
  const auto ai = implied_div2(14783, 43013, 0.072);
  EXPECT_NEAR(ai.tokens, 205319.44444444447, 1e-6);
  EXPECT_NEAR(ai.div2, 0.210, 0.003);
}

TEST(Invariance, PermutationAndDuplicateReferences) {
  const auto pairs = load_eval_pairs(kGenerated, kReferences);
  const auto base = compute_report(pairs);
  auto shuffled = pairs;
  RandomStream rng(5);
  rng.shuffle(shuffled.begin(), shuffled.end());
  const auto perm = compute_report(shuffled);
  auto dup = pairs;
  for (auto& p : dup) p.references.push_back(p.references.front());
  const auto with_dup = compute_report(dup);
  for (const auto* r : {&perm, &with_dup}) {
    for (std::size_t n = 0; n < 4; ++n) EXPECT_NEAR(r->bleu[n], base.bleu[n], 1e-12);
    EXPECT_NEAR(r->rouge_l, base.rouge_l, 1e-12);
    EXPECT_NEAR(r->meteor, base.meteor, 1e-12);
  }
  EXPECT_NEAR(perm.cider_d, base.cider_d, 1e-12);
  EXPECT_NEAR(perm.diversity.div2, base.diversity.div2, 1e-15);
}

TEST(Report, FixtureMatchesGolden) {
  const auto r = compute_report(load_eval_pairs(kGenerated, kReferences));
  std::ifstream in(kGolden);
  ASSERT_TRUE(in);
  const auto golden = nlohmann::json::parse(in);
  const auto got = report_to_json(r);
  for (const char* k : {"bleu_1", "bleu_2", "bleu_3", "bleu_4", "meteor_lite", "rouge_l", "cider_d"})
    EXPECT_NEAR(got[k].get<double>(), golden[k].get<double>(), 1e-9) << k;
  EXPECT_EQ(got["candidates"], golden["candidates"]);
  EXPECT_EQ(got["references"], golden["references"]);
  for (const char* k : {"unigrams", "bigrams", "unigram_tokens", "bigram_tokens", "sentences"})
    EXPECT_EQ(got["diversity"][k], golden["diversity"][k]) << k;
  for (const char* k : {"novel", "div1", "div2"})
    EXPECT_NEAR(got["diversity"][k].get<double>(), golden["diversity"][k].get<double>(), 1e-12) << k;
  EXPECT_EQ(report_from_json(nlohmann::json::parse(got.dump())).cider_d, r.cider_d);
}

TEST(Report, PerfectCopy) {
  std::vector<EvalPair> pairs{{"a", "go to the kitchen and open the fridge", {"go to the kitchen and open the fridge"}},
                              {"b", "walk into the hall", {"walk into the hall", "enter the hall"}}};
  const auto r = compute_report(pairs);
  EXPECT_DOUBLE_EQ(r.bleu[0], 1.0);
  EXPECT_DOUBLE_EQ(r.bleu[3], 1.0);
  EXPECT_DOUBLE_EQ(r.rouge_l, 1.0);
  EXPECT_EQ(r.diversity.novel, 0.0);
}

TEST(Report, TableHasPublishedColumns) {
  const auto r = compute_report(load_eval_pairs(kGenerated, kReferences));
  const auto table = format_report_table(r, "fixture");
  for (const char* col : {"BLEU-1", "METEOR", "ROUGE", "CIDEr", "%Novel", "Unigrams", "Bigrams", "Div-1", "Div-2"})
    EXPECT_NE(table.find(col), std::string::npos) << col;
  EXPECT_NE(table.find("80.0%"), std::string::npos) << table;
}

TEST(Report, MissingReferenceIdIsNamed) {
  const auto path = (std::filesystem::temp_directory_path() / "aigen_eval_missing.jsonl").string();
  {
    std::ofstream out(path);
    out << R"({"id":"g01","text":"a"})" << '\n' << R"({"id":"zz9","text":"b"})" << '\n';
  }
  try {
    load_eval_pairs(path, kReferences);
    FAIL() << "expected InvalidInput";
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("zz9"), std::string::npos) << e.what();
  }
  std::filesystem::remove(path);
}
