#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aigen/train/config.hpp"
#include "aigen/version.hpp"

namespace aigen {

enum class Phase { ce, gan };

inline const char* to_string(Phase p) { return p == Phase::ce ? "CE" : "GAN"; }

/// Everything needed to continue training: both models, both optimizers,
/// the vocabulary, and how far each phase has progressed.
template <class T>
struct TrainingState {
  TrainConfig config;
  text::Vocab vocab;
  std::size_t feature_dim = 0;
  DecoderModel<T> generator;
  EncoderModel<T> discriminator;
  Adam<T> generator_opt;
  Adam<T> discriminator_opt;
  std::size_t ce_step = 0;
  std::size_t gan_step = 0;
  /// Set once CE pretraining has hit its step budget or stop loss.
  bool ce_complete = false;

  Phase phase() const { return ce_complete ? Phase::gan : Phase::ce; }
};

template <class T>
TrainingState<T> make_training_state(const TrainConfig& config, text::Vocab vocab, std::size_t feature_dim) {
  config.validate();
  TrainingState<T> s;
  s.config = config;
  s.feature_dim = feature_dim;
  const RandomStream root(config.seed);
  RandomStream g_rng = root.substream("init-generator");
  RandomStream d_rng = root.substream("init-discriminator");
  s.generator = DecoderModel<T>::init(config.generator_dims(vocab.size(), feature_dim), g_rng, config.init_std);
  s.discriminator = EncoderModel<T>::init(config.discriminator_dims(vocab.size(), feature_dim), d_rng,
                                          config.init_std, parse_pooling(config.pooling));
  s.generator_opt = Adam<T>(s.generator.parameters().size(), config.adam());
  s.discriminator_opt = Adam<T>(s.discriminator.parameters().size(), config.adam());
  s.vocab = std::move(vocab);
  return s;
}

namespace detail {

inline constexpr char kCheckpointMagic[5] = {'A', 'I', 'G', 'N', '1'};

class ByteWriter {
 public:
  explicit ByteWriter(std::ostream& out) : out_(out) {}
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const std::string& s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }

 private:
  void le(std::uint64_t v, int n) {
    char buf[8];
    for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out_.write(buf, n);
  }
  std::ostream& out_;
};

class ByteReader {
 public:
  ByteReader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::uint64_t n) {
    require(n < (1ull << 32), path_ + ": corrupt checkpoint (block too large)");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    check();
    return s;
  }

 private:
  std::uint64_t le(int n) {
    unsigned char buf[8];
    in_.read(reinterpret_cast<char*>(buf), n);
    check();
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  }
  void check() { require(static_cast<bool>(in_), path_ + ": truncated checkpoint"); }
  std::istream& in_;
  std::string path_;
};

struct NamedArray {
  std::string name;
  std::vector<double> values;
};

template <class T>
std::vector<double> widen(const std::vector<T>& v) {
  return {v.begin(), v.end()};
}

template <class T>
void append_model(std::vector<NamedArray>& out, const std::string& prefix,
                  const std::vector<const Parameter<T>*>& params) {
  for (const auto* p : params) out.push_back({prefix + p->name, widen(p->value.data)});
}

template <class T>
void append_adam(std::vector<NamedArray>& out, const std::string& prefix,
                 const std::vector<const Parameter<T>*>& params, const Adam<T>& opt) {
  for (std::size_t i = 0; i < params.size(); ++i)
    out.push_back({prefix + "m/" + params[i]->name, widen(opt.states()[i].first_moment)});
  for (std::size_t i = 0; i < params.size(); ++i)
    out.push_back({prefix + "v/" + params[i]->name, widen(opt.states()[i].second_moment)});
}

inline nlohmann::ordered_json dims_to_json(const ModelDims& d) {
  return {{"vocab_size", d.vocab_size}, {"feature_dim", d.feature_dim}, {"d_model", d.d_model},
          {"layers", d.layers},         {"heads", d.heads},             {"ff_width", d.ff_width},
          {"max_seq_len", d.max_seq_len}};
}

template <class T>
std::vector<std::uint64_t> adam_steps(const Adam<T>& opt) {
  std::vector<std::uint64_t> out;
  for (const auto& s : opt.states()) out.push_back(s.step);
  return out;
}

}  // namespace detail

/// Binary layout: "AIGN1", u64 metadata length, metadata JSON, u64 array
/// count, then per array u32 name length, name, u64 count, count × f64.
/// All integers and doubles little-endian. Arrays in order: generator
/// parameters, discriminator parameters, generator Adam m then v,
/// discriminator Adam m then v.
template <class T>
void save_checkpoint(const std::string& path, const TrainingState<T>& s) {
  const auto& g = s.generator;
  const auto& d = s.discriminator;
  nlohmann::ordered_json meta;
  meta["version"] = kVersion;
  meta["config"] = config_to_json(s.config);
  meta["vocab_hash"] = text::hex64(s.vocab.hash());
  meta["vocab"] = {{"min_frequency", s.vocab.min_frequency()},
                   {"corpus_hash", text::hex64(s.vocab.corpus_hash())},
                   {"words", s.vocab.words()}};
  meta["feature_dim"] = s.feature_dim;
  meta["generator_dims"] = detail::dims_to_json(g.dims);
  meta["discriminator_dims"] = detail::dims_to_json(d.dims);
  meta["ce_step"] = s.ce_step;
  meta["gan_step"] = s.gan_step;
  meta["ce_complete"] = s.ce_complete;
  meta["phase"] = to_string(s.phase());
  meta["generator_adam_steps"] = detail::adam_steps(s.generator_opt);
  meta["discriminator_adam_steps"] = detail::adam_steps(s.discriminator_opt);

  std::vector<detail::NamedArray> arrays;
  detail::append_model<T>(arrays, "generator/", g.parameters());
  detail::append_model<T>(arrays, "discriminator/", d.parameters());
  detail::append_adam<T>(arrays, "generator_adam/", g.parameters(), s.generator_opt);
  detail::append_adam<T>(arrays, "discriminator_adam/", d.parameters(), s.discriminator_opt);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    detail::require(static_cast<bool>(out), "cannot write checkpoint " + path);
    out.write(detail::kCheckpointMagic, 5);
    detail::ByteWriter w(out);
    const std::string meta_text = meta.dump();
    w.u64(meta_text.size());
    w.bytes(meta_text);
    w.u64(arrays.size());
    for (const auto& a : arrays) {
      w.u32(static_cast<std::uint32_t>(a.name.size()));
      w.bytes(a.name);
      w.u64(a.values.size());
      for (double v : a.values) w.f64(v);
    }
    out.flush();
    detail::require(static_cast<bool>(out), "failed writing checkpoint " + path);
  }
  std::filesystem::rename(tmp, path);
}

namespace detail {

inline ModelDims dims_from_json(const nlohmann::json& j) {
  ModelDims d;
  d.vocab_size = j.at("vocab_size");
  d.feature_dim = j.at("feature_dim");
  d.d_model = j.at("d_model");
  d.layers = j.at("layers");
  d.heads = j.at("heads");
  d.ff_width = j.at("ff_width");
  d.max_seq_len = j.at("max_seq_len");
  return d;
}

template <class T>
void restore(std::vector<T>& dst, const NamedArray& a, const std::string& expected, std::size_t size,
             const std::string& path) {
  require(a.name == expected, path + ": expected array '" + expected + "', found '" + a.name + "'");
  require(a.values.size() == size, path + ": array '" + a.name + "' has " + std::to_string(a.values.size()) +
                                       " values, expected " + std::to_string(size));
  dst.assign(a.values.begin(), a.values.end());
}

}  // namespace detail

/// Reads a checkpoint. When expected_vocab_hash is given, a checkpoint built
/// over a different vocabulary is rejected.
template <class T>
TrainingState<T> load_checkpoint(const std::string& path,
                                 std::optional<std::uint64_t> expected_vocab_hash = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  detail::require(static_cast<bool>(in), "cannot read checkpoint " + path);
  char magic[5] = {};
  in.read(magic, 5);
  detail::require(in && std::memcmp(magic, detail::kCheckpointMagic, 5) == 0,
                  path + ": not a checkpoint (bad magic)");
  detail::ByteReader r(in, path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.bytes(r.u64()));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(path + ": corrupt checkpoint metadata: " + e.what());
  }

  TrainingState<T> s;
  try {
    s.config = config_from_json(meta.at("config"));
    const auto& v = meta.at("vocab");
    s.vocab = text::Vocab::from_words(v.at("words").get<std::vector<std::string>>(), v.at("min_frequency"),
                                      std::stoull(v.at("corpus_hash").get<std::string>(), nullptr, 16));
    detail::require(text::hex64(s.vocab.hash()) == meta.at("vocab_hash").get<std::string>(),
                    path + ": vocabulary hash does not match stored words");
    s.feature_dim = meta.at("feature_dim");
    s.ce_step = meta.at("ce_step");
    s.gan_step = meta.at("gan_step");
    s.ce_complete = meta.at("ce_complete");
    s.generator.dims = detail::dims_from_json(meta.at("generator_dims"));
    s.discriminator.dims = detail::dims_from_json(meta.at("discriminator_dims"));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(path + ": incomplete checkpoint metadata: " + e.what());
  }
  if (expected_vocab_hash)
    detail::require(*expected_vocab_hash == s.vocab.hash(),
                    path + ": checkpoint vocabulary hash " + text::hex64(s.vocab.hash()) +
                        " does not match expected " + text::hex64(*expected_vocab_hash));

  // Rebuild structure, then overwrite every array from the file.
  RandomStream scratch(0);
  s.generator = DecoderModel<T>::init(s.generator.dims, scratch, s.config.init_std);
  s.discriminator = EncoderModel<T>::init(s.discriminator.dims, scratch, s.config.init_std,
                                          parse_pooling(s.config.pooling));
  auto g = s.generator.parameters();
  auto d = s.discriminator.parameters();
  s.generator_opt = Adam<T>(g.size(), s.config.adam());
  s.discriminator_opt = Adam<T>(d.size(), s.config.adam());

  const std::uint64_t count = r.u64();
  detail::require(count == 3 * (g.size() + d.size()), path + ": unexpected array count");
  std::vector<detail::NamedArray> arrays(count);
  for (auto& a : arrays) {
    a.name = r.bytes(r.u32());
    const std::uint64_t n = r.u64();
    detail::require(n < (1ull << 32), path + ": corrupt array length");
    a.values.resize(n);
    for (auto& v : a.values) v = r.f64();
  }

  std::size_t k = 0;
  for (auto* p : g) detail::restore(p->value.data, arrays[k++], "generator/" + p->name, p->value.size(), path);
  for (auto* p : d)
    detail::restore(p->value.data, arrays[k++], "discriminator/" + p->name, p->value.size(), path);
  auto restore_adam = [&](const std::string& prefix, const std::vector<Parameter<T>*>& params, Adam<T>& opt,
                          const nlohmann::json& steps) {
    detail::require(steps.size() == params.size(), path + ": optimizer step count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::size_t n = arrays[k].values.empty() ? 0 : params[i]->value.size();
      detail::restore(opt.states()[i].first_moment, arrays[k++], prefix + "m/" + params[i]->name, n, path);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::size_t n = arrays[k].values.empty() ? 0 : params[i]->value.size();
      detail::restore(opt.states()[i].second_moment, arrays[k++], prefix + "v/" + params[i]->name, n, path);
      opt.states()[i].step = steps[i].get<std::uint64_t>();
    }
  };
  restore_adam("generator_adam/", g, s.generator_opt, meta.at("generator_adam_steps"));
  restore_adam("discriminator_adam/", d, s.discriminator_opt, meta.at("discriminator_adam_steps"));
  return s;
}

}  // namespace aigen
