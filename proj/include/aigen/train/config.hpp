#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "aigen/core/adam.hpp"
#include "aigen/model/discriminator.hpp"
#include "aigen/model/generator.hpp"

namespace aigen {

struct TrainConfig {
  std::uint64_t seed = 1;
  double learning_rate = 2e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 6;

  std::size_t ce_steps = 3000;
  /// Stop CE pretraining once a batch loss falls below this (0 disables).
  double ce_stop_loss = 0.0;
  std::size_t gan_steps = 300;

  double ce_weight = 1.0;
  double lambda_adv = 1.0;
  double tau_start = 1.0;
  double tau_end = 0.1;
  std::size_t d_steps = 1;
  double clip_norm = 1.0;
  double init_std = 0.02;

  std::size_t g_layers = 2, g_d_model = 64, g_heads = 4, g_ff_width = 256;
  std::size_t d_layers = 2, d_d_model = 64, d_heads = 4, d_ff_width = 256;
  std::size_t max_seq_len = 64;
  std::size_t max_instruction_len = 24;
  std::size_t min_frequency = 1;

  std::string pooling = "cls";
  bool use_objects = true;
  bool straight_through = true;
  bool prefix_visible = false;
  /// Write a checkpoint every this many steps (0 = only at the end).
  std::size_t checkpoint_every = 0;

  void validate() const;

  AdamHyper adam() const { return {learning_rate, adam_beta1, adam_beta2, adam_epsilon}; }
  AssemblyOptions assembly() const { return {use_objects, prefix_visible, max_seq_len}; }
  GeneratorOptions generator_options() const { return {assembly(), straight_through}; }

  ModelDims generator_dims(std::size_t vocab_size, std::size_t feature_dim) const {
    return {vocab_size, feature_dim, g_d_model, g_layers, g_heads, g_ff_width, max_seq_len};
  }
  ModelDims discriminator_dims(std::size_t vocab_size, std::size_t feature_dim) const {
    return {vocab_size, feature_dim, d_d_model, d_layers, d_heads, d_ff_width, max_seq_len};
  }

  /// τ at GAN step s of S: start·(end/start)^(s/S).
  double temperature(std::size_t step) const {
    if (gan_steps == 0) return tau_start;
    const double frac = static_cast<double>(std::min(step, gan_steps)) / static_cast<double>(gan_steps);
    return tau_start * std::pow(tau_end / tau_start, frac);
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

namespace detail {

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "config fields assume a 64-bit size_t");

using ConfigField =
    std::variant<std::size_t TrainConfig::*, double TrainConfig::*, bool TrainConfig::*, std::string TrainConfig::*>;

struct ConfigKey {
  const char* name;
  ConfigField field;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"seed", &TrainConfig::seed},
      {"learning_rate", &TrainConfig::learning_rate},
      {"adam_beta1", &TrainConfig::adam_beta1},
      {"adam_beta2", &TrainConfig::adam_beta2},
      {"adam_epsilon", &TrainConfig::adam_epsilon},
      {"batch_size", &TrainConfig::batch_size},
      {"ce_steps", &TrainConfig::ce_steps},
      {"ce_stop_loss", &TrainConfig::ce_stop_loss},
      {"gan_steps", &TrainConfig::gan_steps},
      {"ce_weight", &TrainConfig::ce_weight},
      {"lambda_adv", &TrainConfig::lambda_adv},
      {"tau_start", &TrainConfig::tau_start},
      {"tau_end", &TrainConfig::tau_end},
      {"d_steps", &TrainConfig::d_steps},
      {"clip_norm", &TrainConfig::clip_norm},
      {"init_std", &TrainConfig::init_std},
      {"g_layers", &TrainConfig::g_layers},
      {"g_d_model", &TrainConfig::g_d_model},
      {"g_heads", &TrainConfig::g_heads},
      {"g_ff_width", &TrainConfig::g_ff_width},
      {"d_layers", &TrainConfig::d_layers},
      {"d_d_model", &TrainConfig::d_d_model},
      {"d_heads", &TrainConfig::d_heads},
      {"d_ff_width", &TrainConfig::d_ff_width},
      {"max_seq_len", &TrainConfig::max_seq_len},
      {"max_instruction_len", &TrainConfig::max_instruction_len},
      {"min_frequency", &TrainConfig::min_frequency},
      {"pooling", &TrainConfig::pooling},
      {"use_objects", &TrainConfig::use_objects},
      {"straight_through", &TrainConfig::straight_through},
      {"prefix_visible", &TrainConfig::prefix_visible},
      {"checkpoint_every", &TrainConfig::checkpoint_every},
  };
  return keys;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <class N>
N parse_number(std::string_view key, std::string_view text) {
  N value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  require(ec == std::errc{} && ptr == end,
          "config key '" + std::string(key) + "': cannot parse '" + std::string(text) + "'");
  return value;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw InvalidInput("config key '" + std::string(key) + "': expected a boolean, got '" + std::string(text) +
                     "'");
}

}  // namespace detail

inline void TrainConfig::validate() const {
  using detail::require;
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(tau_start > 0.0 && tau_end > 0.0, "temperatures must be positive");
  require(tau_end <= tau_start, "tau_end must not exceed tau_start");
  require(d_steps >= 1, "d_steps must be >= 1");
  require(clip_norm >= 0.0, "clip_norm must be non-negative");
  require(ce_weight >= 0.0 && lambda_adv >= 0.0, "loss weights must be non-negative");
  require(init_std > 0.0, "init_std must be positive");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
          "Adam betas must lie in [0, 1)");
  require(adam_epsilon > 0.0, "adam_epsilon must be positive");
  require(max_instruction_len >= 1, "max_instruction_len must be >= 1");
  require(min_frequency >= 1, "min_frequency must be >= 1");
  require(g_d_model % g_heads == 0 && d_d_model % d_heads == 0, "d_model must be divisible by heads");
  parse_pooling(pooling);
}

/// Sets one key from its text form; unknown keys are rejected.
inline void set_config_value(TrainConfig& cfg, std::string_view key, std::string_view value) {
  value = detail::trim(value);
  for (const auto& k : detail::config_keys()) {
    if (key != k.name) continue;
    std::visit(
        [&](auto member) {
          using M = std::remove_reference_t<decltype(cfg.*member)>;
          if constexpr (std::is_same_v<M, bool>) {
            cfg.*member = detail::parse_bool(key, value);
          } else if constexpr (std::is_same_v<M, std::string>) {
            cfg.*member = std::string(value);
          } else {
            cfg.*member = detail::parse_number<M>(key, value);
          }
        },
        k.field);
    return;
  }
  throw InvalidInput("unknown config key '" + std::string(key) + "'");
}

/// Applies a "key=value" override.
inline void apply_override(TrainConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  detail::require(eq != std::string_view::npos, "override '" + std::string(assignment) + "' is not key=value");
  set_config_value(cfg, detail::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

/// Flat key=value text; '#' starts a comment, blank lines are skipped.
inline TrainConfig parse_config(std::string_view text, TrainConfig base = {}) {
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view l = line;
    if (const auto hash = l.find('#'); hash != std::string_view::npos) l = l.substr(0, hash);
    l = detail::trim(l);
    if (l.empty()) continue;
    try {
      apply_override(base, l);
    } catch (const InvalidInput& e) {
      throw InvalidInput("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

inline TrainConfig load_config(const std::string& path, TrainConfig base = {}) {
  std::ifstream in(path);
  detail::require(static_cast<bool>(in), "cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str(), base);
  } catch (const InvalidInput& e) {
    throw InvalidInput(path + ": " + e.what());
  }
}

inline nlohmann::ordered_json config_to_json(const TrainConfig& cfg) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& k : detail::config_keys())
    std::visit([&](auto member) { j[k.name] = cfg.*member; }, k.field);
  return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  detail::require(j.is_object(), "config must be a JSON object");
  TrainConfig cfg;
  for (const auto& k : detail::config_keys()) {
    if (!j.contains(k.name)) continue;
    std::visit(
        [&](auto member) {
          using M = std::remove_reference_t<decltype(cfg.*member)>;
          cfg.*member = j.at(k.name).template get<M>();
        },
        k.field);
  }
  return cfg;
}

/// Emits every key as key=value, one per line, in declaration order.
inline std::string format_config(const TrainConfig& cfg) {
  std::string out;
  const auto j = config_to_json(cfg);
  for (const auto& [key, value] : j.items()) {
    out += key;
    out += '=';
    out += value.is_string() ? value.get<std::string>() : value.dump();
    out += '\n';
  }
  return out;
}

}  // namespace aigen
