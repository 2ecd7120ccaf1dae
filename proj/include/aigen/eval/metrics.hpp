#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "aigen/core/error.hpp"
#include "aigen/text/vocab.hpp"

namespace aigen::eval {

using Sentence = std::vector<std::string>;
using ReferenceSet = std::vector<Sentence>;

inline constexpr std::size_t kMaxOrder = 4;

inline Sentence tokens(std::string_view text) { return text::tokenize(text); }

inline std::vector<ReferenceSet> tokenize_references(const std::vector<std::vector<std::string>>& refs) {
  std::vector<ReferenceSet> out;
  out.reserve(refs.size());
  for (const auto& set : refs) {
    ReferenceSet s;
    for (const auto& r : set) s.push_back(tokens(r));
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<Sentence> tokenize_all(const std::vector<std::string>& texts) {
  std::vector<Sentence> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(tokens(t));
  return out;
}

/// Counts of the order-n n-grams of one sentence, keyed by the space-joined
/// tokens.
using NGramCounts = std::map<std::string, std::size_t>;

inline NGramCounts ngrams(const Sentence& s, std::size_t n) {
  NGramCounts out;
  if (n == 0 || s.size() < n) return out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    std::string key = s[i];
    for (std::size_t k = 1; k < n; ++k) key += ' ' + s[i + k];
    ++out[key];
  }
  return out;
}

/// Per-sentence n-gram multisets for orders 1..4 plus document frequencies.
struct NGramIndex {
  std::vector<std::array<NGramCounts, kMaxOrder>> sentences;
  std::array<std::map<std::string, std::size_t>, kMaxOrder> document_frequency;

  static NGramIndex build(const std::vector<Sentence>& corpus) {
    NGramIndex idx;
    for (const auto& s : corpus) {
      auto& entry = idx.sentences.emplace_back();
      for (std::size_t n = 1; n <= kMaxOrder; ++n) {
        entry[n - 1] = ngrams(s, n);
        for (const auto& [g, c] : entry[n - 1]) ++idx.document_frequency[n - 1][g];
      }
    }
    return idx;
  }
};

namespace detail {

inline void check_corpus(std::size_t candidates, const std::vector<ReferenceSet>& refs) {
  aigen::detail::require(candidates >= 1, "metric: empty candidate list");
  aigen::detail::require(candidates == refs.size(), "metric: candidate and reference counts differ");
  for (const auto& r : refs) aigen::detail::require(!r.empty(), "metric: empty reference set");
}

}  // namespace detail

/// Corpus BLEU-1..max_order: clipped n-gram precision against the union of
/// references, brevity penalty from the closest reference length (ties go to
/// the shorter one), geometric mean over orders.
inline std::vector<double> bleu_all(const std::vector<Sentence>& cands, const std::vector<ReferenceSet>& refs,
                                    std::size_t max_order = kMaxOrder) {
  detail::check_corpus(cands.size(), refs);
  aigen::detail::require(max_order >= 1 && max_order <= kMaxOrder, "bleu: order must be 1..4");
  std::vector<double> matched(max_order, 0.0), total(max_order, 0.0);
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const auto& c = cands[i];
    cand_len += static_cast<double>(c.size());
    std::size_t best = refs[i][0].size();
    for (const auto& r : refs[i]) {
      const auto d = [&](std::size_t len) { return len > c.size() ? len - c.size() : c.size() - len; };
      if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
    }
    ref_len += static_cast<double>(best);
    for (std::size_t n = 1; n <= max_order; ++n) {
      NGramCounts max_ref;
      for (const auto& r : refs[i])
        for (const auto& [g, k] : ngrams(r, n)) max_ref[g] = std::max(max_ref[g], k);
      for (const auto& [g, k] : ngrams(c, n)) {
        total[n - 1] += static_cast<double>(k);
        const auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[n - 1] += static_cast<double>(std::min(k, it->second));
      }
    }
  }
  const double bp = cand_len == 0.0 ? 0.0 : (cand_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len));
  std::vector<double> out(max_order, 0.0);
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 1; n <= max_order; ++n) {
    if (matched[n - 1] == 0.0 || total[n - 1] == 0.0) zero = true;
    if (!zero) log_sum += std::log(matched[n - 1] / total[n - 1]);
    out[n - 1] = zero ? 0.0 : bp * std::exp(log_sum / static_cast<double>(n));
  }
  return out;
}

inline double bleu(const std::vector<Sentence>& cands, const std::vector<ReferenceSet>& refs, std::size_t n) {
  return bleu_all(cands, refs, n).back();
}

inline std::size_t lcs_length(const Sentence& a, const Sentence& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double rouge_l_pair(const Sentence& cand, const Sentence& ref, double beta = 1.2) {
  const auto lcs = static_cast<double>(lcs_length(cand, ref));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(cand.size());
  const double r = lcs / static_cast<double>(ref.size());
  return (1.0 + beta * beta) * p * r / (r + beta * beta * p);
}

/// Mean over the corpus of the best LCS F-measure among the references.
inline double rouge_l(const std::vector<Sentence>& cands, const std::vector<ReferenceSet>& refs) {
  detail::check_corpus(cands.size(), refs);
  double sum = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    double best = 0.0;
    for (const auto& r : refs[i]) best = std::max(best, rouge_l_pair(cands[i], r));
    sum += best;
  }
  return sum / static_cast<double>(cands.size());
}

/// Suffix-stripping stemmer: removes the first matching suffix from a fixed
/// list when at least three characters remain.
inline std::string stem(std::string w) {
  static constexpr std::array<std::string_view, 7> suffixes{"ingly", "edly", "ing", "ed", "es", "ly", "s"};
  for (auto suf : suffixes) {
    if (w.size() < suf.size() + 3 || w.compare(w.size() - suf.size(), suf.size(), suf) != 0) continue;
    if (suf == "s" && w[w.size() - 2] == 's') continue;
    w.resize(w.size() - suf.size());
    return w;
  }
  return w;
}

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
  double precision = 0.0;
  double recall = 0.0;
  double score = 0.0;
};

/// Exact-match stage then stem stage. Each candidate token, left to right,
/// takes the reference position right after its predecessor's when that
/// position is free and matches, otherwise the leftmost free match.
inline MeteorAlignment meteor_align(const Sentence& cand, const Sentence& ref) {
  constexpr std::size_t none = static_cast<std::size_t>(-1);
  std::vector<std::size_t> to_ref(cand.size(), none);
  std::vector<bool> used(ref.size(), false);
  std::vector<std::string> cand_stem(cand.size()), ref_stem(ref.size());
  for (std::size_t i = 0; i < cand.size(); ++i) cand_stem[i] = stem(cand[i]);
  for (std::size_t j = 0; j < ref.size(); ++j) ref_stem[j] = stem(ref[j]);

  for (int stage = 0; stage < 2; ++stage) {
    const auto& a = stage == 0 ? cand : cand_stem;
    const auto& b = stage == 0 ? ref : ref_stem;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (to_ref[i] != none) continue;
      std::size_t pick = none;
      if (i > 0 && to_ref[i - 1] != none) {
        const std::size_t next = to_ref[i - 1] + 1;
        if (next < ref.size() && !used[next] && a[i] == b[next]) pick = next;
      }
      for (std::size_t j = 0; j < ref.size() && pick == none; ++j)
        if (!used[j] && a[i] == b[j]) pick = j;
      if (pick != none) {
        to_ref[i] = pick;
        used[pick] = true;
      }
    }
  }

  MeteorAlignment out;
  std::size_t prev = none;
  bool prev_matched = false;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    if (to_ref[i] == none) {
      prev_matched = false;
      continue;
    }
    ++out.matches;
    if (!(prev_matched && to_ref[i] == prev + 1)) ++out.chunks;
    prev = to_ref[i];
    prev_matched = true;
  }
  if (out.matches == 0) return out;
  const auto m = static_cast<double>(out.matches);
  out.precision = m / static_cast<double>(cand.size());
  out.recall = m / static_cast<double>(ref.size());
  const double fmean = 10.0 * out.precision * out.recall / (out.recall + 9.0 * out.precision);
  const double frag = static_cast<double>(out.chunks) / m;
  out.score = fmean * (1.0 - 0.5 * frag * frag * frag);
  return out;
}

inline double meteor_lite(const std::vector<Sentence>& cands, const std::vector<ReferenceSet>& refs) {
  detail::check_corpus(cands.size(), refs);
  double sum = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    double best = 0.0;
    for (const auto& r : refs[i]) best = std::max(best, meteor_align(cands[i], r).score);
    sum += best;
  }
  return sum / static_cast<double>(cands.size());
}

namespace detail {

struct TfIdf {
  std::array<std::map<std::string, double>, kMaxOrder> vec;
  std::array<double, kMaxOrder> norm{};
  double length = 0.0;
};

inline TfIdf tfidf(const Sentence& s, const NGramIndex& idx, double log_docs) {
  TfIdf out;
  out.length = static_cast<double>(s.size());
  for (std::size_t n = 1; n <= kMaxOrder; ++n) {
    for (const auto& [g, tf] : ngrams(s, n)) {
      const auto it = idx.document_frequency[n - 1].find(g);
      const double df = it == idx.document_frequency[n - 1].end() ? 0.0 : static_cast<double>(it->second);
      const double w = static_cast<double>(tf) * (log_docs - std::log(std::max(1.0, df)));
      out.vec[n - 1][g] = w;
      out.norm[n - 1] += w * w;
    }
    out.norm[n - 1] = std::sqrt(out.norm[n - 1]);
  }
  return out;
}

inline std::array<double, kMaxOrder> cider_sim(const TfIdf& hyp, const TfIdf& ref, double sigma) {
  std::array<double, kMaxOrder> val{};
  const double delta = hyp.length - ref.length;
  for (std::size_t n = 0; n < kMaxOrder; ++n) {
    for (const auto& [g, w] : hyp.vec[n]) {
      const auto it = ref.vec[n].find(g);
      if (it != ref.vec[n].end()) val[n] += std::min(w, it->second) * it->second;
    }
    if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) val[n] /= hyp.norm[n] * ref.norm[n];
    val[n] *= std::exp(-(delta * delta) / (2.0 * sigma * sigma));
  }
  return val;
}

}  // namespace detail

/// Per-candidate CIDEr-D scores. Document frequencies count the reference
/// sets containing an n-gram; weights are tf·(ln N − ln max(1, df)).
inline std::vector<double> cider_d_each(const std::vector<Sentence>& cands, const std::vector<ReferenceSet>& refs,
                                        double sigma = 6.0) {
  detail::check_corpus(cands.size(), refs);
  NGramIndex idx;
  for (const auto& set : refs) {
    std::array<std::set<std::string>, kMaxOrder> seen;
    for (const auto& r : set)
      for (std::size_t n = 1; n <= kMaxOrder; ++n)
        for (const auto& [g, c] : ngrams(r, n)) seen[n - 1].insert(g);
    for (std::size_t n = 0; n < kMaxOrder; ++n)
      for (const auto& g : seen[n]) ++idx.document_frequency[n][g];
  }
  const double log_docs = std::log(static_cast<double>(refs.size()));
  std::vector<double> out;
  out.reserve(cands.size());
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const auto hyp = detail::tfidf(cands[i], idx, log_docs);
    std::array<double, kMaxOrder> acc{};
    for (const auto& r : refs[i]) {
      const auto v = detail::cider_sim(hyp, detail::tfidf(r, idx, log_docs), sigma);
      for (std::size_t n = 0; n < kMaxOrder; ++n) acc[n] += v[n];
    }
    double mean = 0.0;
    for (double v : acc) mean += v;
    mean /= static_cast<double>(kMaxOrder);
    out.push_back(mean / static_cast<double>(refs[i].size()) * 10.0);
  }
  return out;
}

inline double cider_d(const std::vector<Sentence>& cands, const std::vector<ReferenceSet>& refs,
                      double sigma = 6.0) {
  const auto each = cider_d_each(cands, refs, sigma);
  double sum = 0.0;
  for (double v : each) sum += v;
  return sum / static_cast<double>(each.size());
}

enum class Div2Denominator { unigram_tokens, bigram_tokens };

struct DiversityBlock {
  double novel = 0.0;
  std::size_t unigrams = 0;
  std::size_t bigrams = 0;
  double div1 = 0.0;
  double div2 = 0.0;
  std::size_t unigram_tokens = 0;
  std::size_t bigram_tokens = 0;
  std::size_t sentences = 0;
};

/// Novelty against the reference corpus plus unique-type counts over the
/// generated corpus. Div-2 divides by unigram tokens unless told otherwise.
inline DiversityBlock diversity_report(const std::vector<Sentence>& generated, const std::vector<Sentence>& reference,
                                       Div2Denominator denom = Div2Denominator::unigram_tokens) {
  aigen::detail::require(!generated.empty(), "diversity: empty generated corpus");
  aigen::detail::require(!reference.empty(), "diversity: empty reference corpus");
  std::set<Sentence> known(reference.begin(), reference.end());
  std::set<std::string> uni, bi;
  DiversityBlock d;
  d.sentences = generated.size();
  std::size_t novel = 0;
  for (const auto& s : generated) {
    novel += known.count(s) == 0;
    d.unigram_tokens += s.size();
    for (std::size_t i = 0; i < s.size(); ++i) {
      uni.insert(s[i]);
      if (i + 1 < s.size()) {
        bi.insert(s[i] + ' ' + s[i + 1]);
        ++d.bigram_tokens;
      }
    }
  }
  aigen::detail::require(d.unigram_tokens > 0, "diversity: generated corpus has no tokens");
  d.novel = static_cast<double>(novel) / static_cast<double>(generated.size());
  d.unigrams = uni.size();
  d.bigrams = bi.size();
  d.div1 = static_cast<double>(d.unigrams) / static_cast<double>(d.unigram_tokens);
  const std::size_t bottom = denom == Div2Denominator::unigram_tokens ? d.unigram_tokens : d.bigram_tokens;
  d.div2 = bottom == 0 ? 0.0 : static_cast<double>(d.bigrams) / static_cast<double>(bottom);
  return d;
}

/// Total unigram tokens implied by a unique-unigram count and Div-1, and the
/// Div-2 that follows from it.
struct ImpliedDiversity {
  double tokens = 0.0;
  double div2 = 0.0;
};

inline ImpliedDiversity implied_div2(double unigrams, double bigrams, double div1) {
  const double tokens = unigrams / div1;
  return {tokens, bigrams / tokens};
}

}  // namespace aigen::eval
