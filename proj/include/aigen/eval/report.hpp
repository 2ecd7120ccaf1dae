#pragma once

#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aigen/eval/metrics.hpp"
#include "aigen/multimodal/trajectory.hpp"

namespace aigen::eval {

struct MetricReport {
  std::array<double, kMaxOrder> bleu{};
  double meteor = 0.0;
  double rouge_l = 0.0;
  double cider_d = 0.0;
  std::size_t candidates = 0;
  std::size_t references = 0;
  Div2Denominator div2_denominator = Div2Denominator::unigram_tokens;
  DiversityBlock diversity;
};

/// One generated instruction joined to its reference set.
struct EvalPair {
  std::string id;
  std::string generated;
  std::vector<std::string> references;
};

inline MetricReport compute_report(const std::vector<EvalPair>& pairs,
                                   Div2Denominator denom = Div2Denominator::unigram_tokens) {
  aigen::detail::require(!pairs.empty(), "eval: no instructions to score");
  std::vector<Sentence> cands;
  std::vector<ReferenceSet> refs;
  std::vector<Sentence> ref_corpus;
  for (const auto& p : pairs) {
    cands.push_back(tokens(p.generated));
    ReferenceSet set;
    for (const auto& r : p.references) set.push_back(tokens(r));
    ref_corpus.insert(ref_corpus.end(), set.begin(), set.end());
    refs.push_back(std::move(set));
  }
  MetricReport r;
  const auto b = bleu_all(cands, refs);
  std::copy(b.begin(), b.end(), r.bleu.begin());
  r.meteor = meteor_lite(cands, refs);
  r.rouge_l = rouge_l(cands, refs);
  r.cider_d = cider_d(cands, refs);
  r.candidates = cands.size();
  r.references = ref_corpus.size();
  r.div2_denominator = denom;
  r.diversity = diversity_report(cands, ref_corpus, denom);
  return r;
}

inline const char* to_string(Div2Denominator d) {
  return d == Div2Denominator::unigram_tokens ? "unigram_tokens" : "bigram_tokens";
}

inline nlohmann::ordered_json report_to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["bleu_1"] = r.bleu[0];
  j["bleu_2"] = r.bleu[1];
  j["bleu_3"] = r.bleu[2];
  j["bleu_4"] = r.bleu[3];
  j["meteor_lite"] = r.meteor;
  j["rouge_l"] = r.rouge_l;
  j["cider_d"] = r.cider_d;
  j["candidates"] = r.candidates;
  j["references"] = r.references;
  const auto& d = r.diversity;
  j["diversity"] = {{"novel", d.novel},
                    {"unigrams", d.unigrams},
                    {"bigrams", d.bigrams},
                    {"div1", d.div1},
                    {"div2", d.div2},
                    {"unigram_tokens", d.unigram_tokens},
                    {"bigram_tokens", d.bigram_tokens},
                    {"sentences", d.sentences},
                    {"div2_denominator", to_string(r.div2_denominator)}};
  return j;
}

inline MetricReport report_from_json(const nlohmann::json& j) {
  try {
    MetricReport r;
    r.bleu = {j.at("bleu_1").get<double>(), j.at("bleu_2").get<double>(), j.at("bleu_3").get<double>(),
              j.at("bleu_4").get<double>()};
    r.meteor = j.at("meteor_lite").get<double>();
    r.rouge_l = j.at("rouge_l").get<double>();
    r.cider_d = j.at("cider_d").get<double>();
    r.candidates = j.at("candidates").get<std::size_t>();
    r.references = j.at("references").get<std::size_t>();
    const auto& d = j.at("diversity");
    r.diversity.novel = d.at("novel").get<double>();
    r.diversity.unigrams = d.at("unigrams").get<std::size_t>();
    r.diversity.bigrams = d.at("bigrams").get<std::size_t>();
    r.diversity.div1 = d.at("div1").get<double>();
    r.diversity.div2 = d.at("div2").get<double>();
    r.diversity.unigram_tokens = d.at("unigram_tokens").get<std::size_t>();
    r.diversity.bigram_tokens = d.at("bigram_tokens").get<std::size_t>();
    r.diversity.sentences = d.at("sentences").get<std::size_t>();
    r.div2_denominator = d.at("div2_denominator").get<std::string>() == "bigram_tokens"
                             ? Div2Denominator::bigram_tokens
                             : Div2Denominator::unigram_tokens;
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed metric report: ") + e.what());
  }
}

namespace detail {

inline std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

inline std::string render(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    width[c] = header[c].size();
    for (const auto& row : rows) width[c] = std::max(width[c], row[c].size());
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) out += "  ";
      const std::string pad(width[c] - cells[c].size(), ' ');
      out += c == 0 ? cells[c] + pad : pad + cells[c];
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out + '\n';
  };
  std::string out = line(header);
  std::size_t total = 0;
  for (auto w : width) total += w;
  out += std::string(total + 2 * (width.size() - 1), '-') + '\n';
  for (const auto& row : rows) out += line(row);
  return out;
}

}  // namespace detail

/// Two aligned tables: description metrics, then diversity.
inline std::string format_report_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::vector<std::vector<std::string>> quality, diversity;
  for (const auto& [label, r] : rows) {
    quality.push_back({label, detail::fmt("%.3f", r.bleu[0]), detail::fmt("%.3f", r.meteor),
                       detail::fmt("%.3f", r.rouge_l), detail::fmt("%.3f", r.cider_d)});
    const auto& d = r.diversity;
    diversity.push_back({label, detail::fmt("%.1f%%", 100.0 * d.novel), std::to_string(d.unigrams),
                         std::to_string(d.bigrams), detail::fmt("%.3f", d.div1), detail::fmt("%.3f", d.div2)});
  }
  return detail::render({"", "BLEU-1", "METEOR", "ROUGE", "CIDEr"}, quality) + '\n' +
         detail::render({"", "%Novel", "Unigrams", "Bigrams", "Div-1", "Div-2"}, diversity);
}

inline std::string format_report_table(const MetricReport& r, const std::string& label = "generated") {
  return format_report_table({{label, r}});
}

/// Joins generated {"id", "text"} lines to reference {"id", "texts"} lines.
/// Every generated id must have references.
inline std::vector<EvalPair> load_eval_pairs(const std::string& generated_path, const std::string& references_path) {
  std::map<std::string, std::vector<std::string>> refs;
  for_each_jsonl(references_path, [&](const nlohmann::json& j) {
    const auto id = j.at("id").get<std::string>();
    auto texts = j.at("texts").get<std::vector<std::string>>();
    aigen::detail::require(!texts.empty(), "reference '" + id + "' has no texts");
    aigen::detail::require(refs.emplace(id, std::move(texts)).second, "duplicate reference id '" + id + "'");
  });
  std::vector<EvalPair> out;
  std::set<std::string> seen;
  for_each_jsonl(generated_path, [&](const nlohmann::json& j) {
    EvalPair p;
    p.id = j.at("id").get<std::string>();
    p.generated = j.at("text").get<std::string>();
    aigen::detail::require(seen.insert(p.id).second, "duplicate generated id '" + p.id + "'");
    out.push_back(std::move(p));
  });
  aigen::detail::require(!out.empty(), generated_path + ": no generated instructions");
  for (auto& p : out) {
    const auto it = refs.find(p.id);
    if (it == refs.end()) throw InvalidInput("id '" + p.id + "' has no references in " + references_path);
    p.references = it->second;
  }
  return out;
}

}  // namespace aigen::eval
