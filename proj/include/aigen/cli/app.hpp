#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aigen/eval/report.hpp"
#include "aigen/synth/world.hpp"
#include "aigen/train/checkpoint.hpp"
#include "aigen/train/trainer.hpp"
#include "aigen/version.hpp"

namespace aigen::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;

using Json = nlohmann::ordered_json;

inline void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  detail::require(static_cast<bool>(out), "cannot write " + path);
  out << j.dump(2) << '\n';
}

inline Json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  detail::require(static_cast<bool>(in), "cannot read " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(path + ": " + e.what());
  }
}

inline std::string meta_path(const std::string& artifact) { return artifact + ".meta.json"; }

inline Json header(const char* command) {
  Json j;
  j["tool"] = "aigen";
  j["version"] = kVersion;
  j["command"] = command;
  return j;
}

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool no_objects = false;

  void attach(CLI::App& sub) {
    sub.add_option("--config", file, "key=value config file")->check(CLI::ExistingFile);
    sub.add_option("--set", overrides, "override one config key (key=value), repeatable");
    sub.add_option("--seed", seed, "random seed");
    sub.add_flag("--no-objects", no_objects, "drop the object-label block from every input");
  }

  /// Defaults, then the file, then --set, then dedicated flags.
  TrainConfig apply(TrainConfig base) const {
    if (!file.empty()) base = load_config(file, base);
    for (const auto& o : overrides) apply_override(base, o);
    if (seed) base.seed = *seed;
    if (no_objects) base.use_objects = false;
    base.validate();
    return base;
  }
};

struct SynthArgs {
  std::uint64_t seed = 1;
  std::size_t count = 1000;
  std::string out;
  std::string part = "all";
  synth::WorldOptions world;
};

inline Json world_to_json(const synth::WorldOptions& o) {
  Json j;
  j["rooms"] = o.rooms;
  j["objects"] = o.objects;
  j["verbs"] = o.verbs;
  j["templates"] = o.templates;
  j["feature_dim"] = o.feature_dim;
  j["noise"] = o.noise;
  j["min_steps"] = o.min_steps;
  j["max_steps"] = o.max_steps;
  j["objects_per_room"] = o.objects_per_room;
  j["distractors"] = o.distractors;
  j["max_references"] = o.max_references;
  return j;
}

inline int run_synth(const SynthArgs& a, std::ostream& out) {
  detail::require(a.part == "all" || a.part == "train" || a.part == "val", "--part must be all, train or val");
  const auto world = synth::build_world(a.seed, a.world);
  std::vector<synth::Episode> episodes;
  for (std::size_t i = 0; i < a.count; ++i) {
    auto ep = synth::dataset_episode(world, a.seed, i);
    const bool val = synth::is_validation(ep.trajectory.id);
    if (a.part == "all" || (a.part == "val") == val) episodes.push_back(std::move(ep));
  }
  synth::export_jsonl(episodes, a.out);
  Json manifest = header("synth");
  manifest["feature_dim"] = a.world.feature_dim;
  manifest["episodes"] = episodes.size();
  manifest["config"] = {{"seed", a.seed}, {"count", a.count}, {"part", a.part}, {"world", world_to_json(a.world)}};
  write_json(manifest_path(a.out), manifest);
  out << "wrote " << episodes.size() << " episodes to " << a.out << '\n';
  return kExitOk;
}

struct TrainArgs {
  ConfigArgs config;
  std::string data;
  std::string out;
  std::string resume;
  std::string log;
  std::string phase = "all";
  std::optional<std::size_t> max_steps;
  std::size_t progress = 100;
};

inline Json state_summary(const TrainingState<float>& s, bool complete) {
  Json j = header("train");
  j["config"] = config_to_json(s.config);
  j["vocab_hash"] = text::hex64(s.vocab.hash());
  j["vocab_size"] = s.vocab.size();
  j["feature_dim"] = s.feature_dim;
  j["phase"] = to_string(s.phase());
  j["ce_step"] = s.ce_step;
  j["gan_step"] = s.gan_step;
  j["complete"] = complete;
  return j;
}

inline int run_train(const TrainArgs& a, std::ostream& out) {
  detail::require(a.phase == "all" || a.phase == "ce" || a.phase == "gan", "--phase must be all, ce or gan");
  const auto episodes = read_trajectories(a.data);
  detail::require(!episodes.empty(), a.data + ": no episodes");

  TrainingState<float> state;
  if (!a.resume.empty()) {
    state = load_checkpoint<float>(a.resume);
    const TrainConfig saved = state.config;
    TrainConfig merged = saved;
    for (const auto& o : a.config.overrides) apply_override(merged, o);
    detail::require(a.config.file.empty(), "--config cannot be combined with --resume; use --set");
    detail::require(!a.config.seed && !a.config.no_objects, "--seed/--no-objects cannot change a resumed run");
    merged.validate();
    detail::require(merged.generator_dims(1, 1) == saved.generator_dims(1, 1) &&
                        merged.discriminator_dims(1, 1) == saved.discriminator_dims(1, 1) &&
                        merged.pooling == saved.pooling && merged.min_frequency == saved.min_frequency,
                    "overrides cannot change model shape or vocabulary of a resumed run");
    state.config = merged;
    const auto vocab = build_training_vocab(episodes, state.config.min_frequency);
    detail::require(vocab.hash() == state.vocab.hash(),
                    a.resume + ": checkpoint vocabulary does not match the vocabulary of " + a.data);
  } else {
    const TrainConfig cfg = a.config.apply({});
    auto vocab = build_training_vocab(episodes, cfg.min_frequency);
    state = make_training_state<float>(cfg, std::move(vocab), episodes.front().feature_dim());
  }
  detail::require(episodes.front().feature_dim() == state.feature_dim,
                  a.data + ": feature dimension " + std::to_string(episodes.front().feature_dim()) +
                      " does not match the checkpoint's " + std::to_string(state.feature_dim));
  const auto corpus = make_corpus(episodes, state.vocab, state.config.max_instruction_len);

  const std::string log_path = a.log.empty() ? a.out + ".log.jsonl" : a.log;
  std::ofstream log(log_path, std::ios::binary | (a.resume.empty() ? std::ios::trunc : std::ios::app));
  detail::require(static_cast<bool>(log), "cannot write " + log_path);
  if (a.resume.empty()) {
    Json h = header("train");
    h["config"] = config_to_json(state.config);
    log << h.dump() << '\n';
  }

  const std::size_t saved_gan_steps = state.config.gan_steps;
  if (a.phase == "ce") state.config.gan_steps = state.gan_step;
  if (a.phase == "gan") state.ce_complete = true;

  auto save = [&] {
    TrainConfig live = state.config;
    state.config.gan_steps = saved_gan_steps;
    save_checkpoint(a.out, state);
    write_json(meta_path(a.out), state_summary(state, state.ce_complete && state.gan_step >= saved_gan_steps));
    state.config = live;
  };

  TrainHooks hooks;
  std::optional<Phase> last_phase;
  hooks.on_record = [&](const TrainLogRecord& r) {
    log << record_to_json(r).dump() << '\n';
    if (last_phase && *last_phase != r.phase) out << "phase transition " << to_string(*last_phase) << " -> "
                                                  << to_string(r.phase) << " at step " << r.step << '\n';
    last_phase = r.phase;
    if (a.progress > 0 && (r.step + 1) % a.progress == 0) {
      out << "step " << r.step + 1 << " " << to_string(r.phase) << " l_ce=" << r.l_ce;
      if (r.l_d) out << " l_d=" << *r.l_d << " l_g=" << *r.l_g << " tau=" << *r.tau;
      out << '\n';
    }
  };
  hooks.on_checkpoint = save;
  hooks.halt_after = a.max_steps;

  if (a.max_steps && *a.max_steps == 0) {
    save();
  } else {
    train(state, corpus, hooks);
  }
  out << "checkpoint " << a.out << " (" << to_string(state.phase()) << ", ce_step " << state.ce_step
      << ", gan_step " << state.gan_step << ")\n";
  return kExitOk;
}

struct GenerateArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string decode = "greedy";
  double temperature = 1.0;
  std::uint64_t seed = 1;
  std::optional<std::size_t> max_len;
};

inline int run_generate(const GenerateArgs& a, std::ostream& out) {
  detail::require(a.decode == "greedy" || a.decode == "sample", "--decode must be greedy or sample");
  const auto state = load_checkpoint<float>(a.checkpoint);
  const auto trajectories = read_trajectories(a.data);
  const std::size_t max_len = a.max_len.value_or(state.config.max_instruction_len + 1);
  const auto opts = state.config.generator_options();
  std::ofstream file(a.out, std::ios::binary | std::ios::trunc);
  detail::require(static_cast<bool>(file), "cannot write " + a.out);
  const RandomStream root = RandomStream(a.seed).substream("generate");
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& t = trajectories[i];
    detail::require(t.feature_dim() == state.feature_dim,
                    "trajectory '" + t.id + "' has feature dimension " + std::to_string(t.feature_dim()) +
                        ", checkpoint expects " + std::to_string(state.feature_dim));
    GenerationResult g;
    if (a.decode == "greedy") {
      g = decode_greedy(state.generator, t, state.vocab, max_len, opts);
    } else {
      RandomStream rng = root.substream(i);
      g = sample_decode(state.generator, t, state.vocab, a.temperature, rng, max_len, opts);
    }
    Json line;
    line["id"] = t.id;
    line["text"] = text::decode(g.body(), state.vocab);
    file << line.dump() << '\n';
  }
  file.flush();
  detail::require(static_cast<bool>(file), "failed writing " + a.out);
  Json meta = header("generate");
  meta["checkpoint"] = a.checkpoint;
  meta["train_config"] = config_to_json(state.config);
  meta["config"] = {{"decode", a.decode}, {"temperature", a.temperature}, {"seed", a.seed}, {"max_len", max_len}};
  meta["instructions"] = trajectories.size();
  write_json(meta_path(a.out), meta);
  out << "wrote " << trajectories.size() << " instructions to " << a.out << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string generated;
  std::string references;
  std::string out;
  std::string div2 = "unigram";
};

/// References come from {"id", "texts"} lines or from episode lines, whose
/// "references" and optional "truth" are used.
struct ReferenceEntry {
  std::vector<std::string> texts;
  std::optional<synth::Truth> truth;
};

inline std::map<std::string, ReferenceEntry> load_reference_entries(const std::string& path) {
  std::map<std::string, ReferenceEntry> out;
  for_each_jsonl(path, [&](const nlohmann::json& j) {
    const auto id = j.at("id").get<std::string>();
    ReferenceEntry e;
    e.texts = j.contains("texts") ? j["texts"].get<std::vector<std::string>>()
                                  : j.at("references").get<std::vector<std::string>>();
    detail::require(!e.texts.empty(), "reference '" + id + "' has no texts");
    if (j.contains("truth"))
      e.truth = synth::Truth{j["truth"].at("room").get<std::string>(), j["truth"].at("object").get<std::string>()};
    detail::require(out.emplace(id, std::move(e)).second, "duplicate reference id '" + id + "'");
  });
  return out;
}

inline int run_eval(const EvalArgs& a, std::ostream& out) {
  detail::require(a.div2 == "unigram" || a.div2 == "bigram", "--div2 must be unigram or bigram");
  const auto refs = load_reference_entries(a.references);
  std::vector<eval::EvalPair> pairs;
  std::set<std::string> seen;
  std::size_t with_truth = 0, both = 0, object = 0;
  for_each_jsonl(a.generated, [&](const nlohmann::json& j) {
    eval::EvalPair p;
    p.id = j.at("id").get<std::string>();
    p.generated = j.at("text").get<std::string>();
    detail::require(seen.insert(p.id).second, "duplicate generated id '" + p.id + "'");
    pairs.push_back(std::move(p));
  });
  detail::require(!pairs.empty(), a.generated + ": no generated instructions");
  for (auto& p : pairs) {
    const auto it = refs.find(p.id);
    if (it == refs.end()) throw InvalidInput("id '" + p.id + "' has no references in " + a.references);
    p.references = it->second.texts;
    if (it->second.truth) {
      ++with_truth;
      both += synth::mentions_truth(p.generated, *it->second.truth);
      object += synth::mentions_object(p.generated, *it->second.truth);
    }
  }
  const auto denom = a.div2 == "unigram" ? eval::Div2Denominator::unigram_tokens : eval::Div2Denominator::bigram_tokens;
  const auto report = eval::compute_report(pairs, denom);
  Json j = header("eval");
  j["config"] = {{"generated", a.generated}, {"references", a.references}, {"div2", a.div2}};
  if (std::filesystem::exists(meta_path(a.generated))) j["source"] = read_json(meta_path(a.generated));
  j["metrics"] = eval::report_to_json(report);
  if (with_truth > 0) {
    const auto n = static_cast<double>(with_truth);
    j["closed_loop"] = {{"episodes", with_truth},
                        {"room_and_object_rate", static_cast<double>(both) / n},
                        {"object_rate", static_cast<double>(object) / n}};
  }
  if (!a.out.empty()) write_json(a.out, j);
  out << eval::format_report_table(report, std::filesystem::path(a.generated).stem().string());
  if (with_truth > 0)
    out << "\nclosed loop: room+object " << j["closed_loop"]["room_and_object_rate"].get<double>() << ", object "
        << j["closed_loop"]["object_rate"].get<double>() << " over " << with_truth << " episodes\n";
  return kExitOk;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::vector<std::string> labels;
  std::string out;
};

inline int run_report(const ReportArgs& a, std::ostream& out) {
  detail::require(a.labels.empty() || a.labels.size() == a.inputs.size(), "give one --label per --input");
  std::vector<std::pair<std::string, eval::MetricReport>> rows;
  for (std::size_t i = 0; i < a.inputs.size(); ++i) {
    const auto j = read_json(a.inputs[i]);
    detail::require(j.contains("metrics"), a.inputs[i] + ": not an eval report");
    const auto label = a.labels.empty() ? std::filesystem::path(a.inputs[i]).stem().string() : a.labels[i];
    rows.emplace_back(label, eval::report_from_json(j["metrics"]));
  }
  const auto table = eval::format_report_table(rows);
  if (!a.out.empty()) {
    std::ofstream f(a.out, std::ios::binary | std::ios::trunc);
    detail::require(static_cast<bool>(f), "cannot write " + a.out);
    f << "# aigen " << kVersion << " report\n" << table;
  }
  out << table;
  return kExitOk;
}

/// Parses and dispatches one command line. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Adversarial instruction generation for navigation trajectories", "aigen"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic episode file");
  synth_cmd->add_option("--seed", synth_args.seed, "world and episode seed");
  synth_cmd->add_option("--count", synth_args.count, "episodes to sample before splitting")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--out", synth_args.out, "output JSON-lines path")->required();
  synth_cmd->add_option("--part", synth_args.part, "all, train or val");
  synth_cmd->add_option("--feature-dim", synth_args.world.feature_dim, "visual feature width");
  synth_cmd->add_option("--noise", synth_args.world.noise, "observation noise sigma");
  synth_cmd->add_option("--distractors", synth_args.world.distractors, "extra object labels per episode");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "CE pretraining then adversarial fine-tuning");
  train_args.config.attach(*train_cmd);
  train_cmd->add_option("--data", train_args.data, "training episodes (JSON lines)")->required();
  train_cmd->add_option("--out", train_args.out, "checkpoint path")->required();
  train_cmd->add_option("--resume", train_args.resume, "continue from this checkpoint")->check(CLI::ExistingFile);
  train_cmd->add_option("--log", train_args.log, "log path (default <out>.log.jsonl)");
  train_cmd->add_option("--phase", train_args.phase, "all, ce or gan");
  train_cmd->add_option("--max-steps", train_args.max_steps, "stop after this many steps in this invocation");
  train_cmd->add_option("--progress", train_args.progress, "print every N steps (0 = quiet)");

  GenerateArgs gen_args;
  auto* gen_cmd = app.add_subcommand("generate", "one instruction per trajectory");
  gen_cmd->add_option("--checkpoint", gen_args.checkpoint, "trained checkpoint")->required()->check(CLI::ExistingFile);
  gen_cmd->add_option("--data", gen_args.data, "trajectories (JSON lines)")->required();
  gen_cmd->add_option("--out", gen_args.out, "output JSON-lines path")->required();
  gen_cmd->add_option("--decode", gen_args.decode, "greedy or sample");
  gen_cmd->add_option("--temperature", gen_args.temperature, "sampling temperature");
  gen_cmd->add_option("--seed", gen_args.seed, "sampling seed");
  gen_cmd->add_option("--max-len", gen_args.max_len, "token budget including EOS");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "score generated instructions against references");
  eval_cmd->add_option("--generated", eval_args.generated, "{\"id\", \"text\"} lines")->required();
  eval_cmd->add_option("--references", eval_args.references, "{\"id\", \"texts\"} or episode lines")->required();
  eval_cmd->add_option("--out", eval_args.out, "metric report JSON");
  eval_cmd->add_option("--div2", eval_args.div2, "Div-2 denominator: unigram or bigram");

  ReportArgs report_args;
  auto* report_cmd = app.add_subcommand("report", "render eval reports as tables");
  report_cmd->add_option("--input", report_args.inputs, "eval report JSON, repeatable")->required();
  report_cmd->add_option("--label", report_args.labels, "row label per input");
  report_cmd->add_option("--out", report_args.out, "also write the table here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kExitOk;
    const auto parsed = app.get_subcommands();
    err << (parsed.empty() ? app.help() : parsed.front()->help());
    return kExitUsage;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth_args, out);
    if (train_cmd->parsed()) return run_train(train_args, out);
    if (gen_cmd->parsed()) return run_generate(gen_args, out);
    if (eval_cmd->parsed()) return run_eval(eval_args, out);
    if (report_cmd->parsed()) return run_report(report_args, out);
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitInternal;
}

}  // namespace aigen::cli
