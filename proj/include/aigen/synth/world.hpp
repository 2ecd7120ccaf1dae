#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aigen/core/random.hpp"
#include "aigen/multimodal/trajectory.hpp"
#include "aigen/text/vocab.hpp"

namespace aigen::synth {

struct WorldOptions {
  std::vector<std::string> rooms{"bathroom", "kitchen", "bedroom", "office",
                                 "garage",   "hallway", "lounge",  "pantry"};
  std::vector<std::string> objects{"sink",   "lamp", "chair", "drawer", "towel", "mirror",
                                   "fridge", "sofa", "bed",   "desk",   "shelf", "plant"};
  std::vector<std::string> verbs{"open", "clean", "check", "touch", "move", "inspect"};
  /// {room}, {object} and {verb} are substituted.
  std::vector<std::string> templates{
      "go to the {room} and {verb} the {object}",
      "walk into the {room} then {verb} the {object}",
      "enter the {room} and {verb} the {object} there",
      "find the {object} in the {room} and {verb} it",
      "in the {room} , {verb} the {object}",
  };
  std::size_t feature_dim = 32;
  double noise = 0.1;
  std::size_t min_steps = 3;
  std::size_t max_steps = 8;
  std::size_t objects_per_room = 3;
  /// Extra object labels from the target room's other objects.
  std::size_t distractors = 0;
  std::size_t max_references = 3;
  double max_anchor_cosine = 0.5;
  std::size_t anchor_attempts = 10000;

  void validate() const;
};

struct World {
  std::uint64_t seed = 0;
  WorldOptions options;
  /// One unit vector per room type (rows).
  Tensor<double> anchors;
  /// Object indices that can be the target in each room.
  std::vector<std::vector<std::size_t>> room_objects;
};

/// Hidden labels of one episode.
struct Truth {
  std::string room;
  std::string object;
  friend bool operator==(const Truth&, const Truth&) = default;
};

struct Episode {
  Trajectory trajectory;
  Truth truth;
};

inline void WorldOptions::validate() const {
  using aigen::detail::require;
  require(!rooms.empty() && !objects.empty() && !verbs.empty() && !templates.empty(),
          "world lists must be non-empty");
  std::set<std::string> seen;
  for (const auto* list : {&rooms, &objects, &verbs})
    for (const auto& entry : *list) {
      const auto toks = text::tokenize(entry);
      require(toks.size() == 1, "world entries must be single tokens: '" + entry + "'");
      require(seen.insert(toks[0]).second, "world token '" + toks[0] + "' appears in more than one list");
    }
  for (const auto& t : templates)
    require(t.find("{room}") != std::string::npos && t.find("{object}") != std::string::npos &&
                t.find("{verb}") != std::string::npos,
            "template must mention {room}, {object} and {verb}: '" + t + "'");
  require(feature_dim >= 1, "feature_dim must be >= 1");
  require(noise >= 0.0 && std::isfinite(noise), "noise must be a finite non-negative value");
  require(min_steps >= 1 && min_steps <= max_steps, "need 1 <= min_steps <= max_steps");
  require(objects_per_room >= 1 && objects_per_room <= objects.size(),
          "objects_per_room must be between 1 and the object count");
  require(distractors < objects_per_room, "distractors must be fewer than objects_per_room");
  require(max_references >= 1 && max_references <= kMaxReferences, "max_references must be 1..3");
  require(max_references <= templates.size(), "max_references exceeds the template count");
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

/// Deterministic in (seed, options). Each anchor is redrawn until its cosine
/// with every earlier anchor is below max_anchor_cosine.
inline World build_world(std::uint64_t seed, WorldOptions options = {}) {
  options.validate();
  World w;
  w.seed = seed;
  const RandomStream root(seed);
  RandomStream anchor_rng = root.substream("anchors");
  const std::size_t n = options.rooms.size(), d = options.feature_dim;
  w.anchors = Tensor<double>(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < options.anchor_attempts && !placed; ++attempt) {
      auto row = w.anchors.row(r);
      double norm = 0.0;
      for (auto& v : row) norm += (v = anchor_rng.normal()) * v;
      norm = std::sqrt(norm);
      for (auto& v : row) v /= norm;
      placed = true;
      for (std::size_t q = 0; q < r && placed; ++q)
        placed = cosine(row, w.anchors.row(q)) < options.max_anchor_cosine;
    }
    aigen::detail::require(placed, "cannot place " + std::to_string(n) + " room anchors in " + std::to_string(d) +
                                       " dimensions with pairwise cosine below " +
                                       std::to_string(options.max_anchor_cosine));
  }
  RandomStream object_rng = root.substream("room-objects");
  std::vector<std::size_t> all(options.objects.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  for (std::size_t r = 0; r < n; ++r) {
    object_rng.shuffle(all.begin(), all.end());
    std::vector<std::size_t> assigned(all.begin(), all.begin() + static_cast<long>(options.objects_per_room));
    std::sort(assigned.begin(), assigned.end());
    w.room_objects.push_back(std::move(assigned));
  }
  w.options = std::move(options);
  return w;
}

inline std::string instantiate(std::string tmpl, const std::string& room, const std::string& verb,
                               const std::string& object) {
  for (const auto& [key, value] : {std::pair<std::string, std::string>{"{room}", room}, {"{verb}", verb},
                                   {"{object}", object}})
    for (auto pos = tmpl.find(key); pos != std::string::npos; pos = tmpl.find(key, pos + value.size()))
      tmpl.replace(pos, key.size(), value);
  return tmpl;
}

/// One episode: a room path ending at the target, anchor-plus-noise
/// features, the detected object labels, and 1..max_references templated
/// references.
inline Episode sample_episode(const World& world, RandomStream& rng, std::string id = "episode") {
  const auto& o = world.options;
  Episode ep;
  const std::size_t steps = o.min_steps + rng.below(o.max_steps - o.min_steps + 1);
  const std::size_t target = rng.below(o.rooms.size());
  const auto& candidates = world.room_objects[target];
  const std::size_t object = candidates[rng.below(candidates.size())];
  ep.truth = {o.rooms[target], o.objects[object]};

  Trajectory& t = ep.trajectory;
  t.id = std::move(id);
  t.features = Tensor<double>(steps, o.feature_dim);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t room = s + 1 == steps ? target : rng.below(o.rooms.size());
    const auto anchor = world.anchors.row(room);
    auto row = t.features.row(s);
    for (std::size_t k = 0; k < o.feature_dim; ++k)
      row[k] = o.noise == 0.0 ? anchor[k] : anchor[k] + o.noise * rng.normal();
  }

  t.objects = {o.objects[object]};
  if (o.distractors > 0) {
    std::vector<std::size_t> others;
    for (auto c : candidates)
      if (c != object) others.push_back(c);
    rng.shuffle(others.begin(), others.end());
    for (std::size_t k = 0; k < o.distractors; ++k) t.objects.push_back(o.objects[others[k]]);
    rng.shuffle(t.objects.begin(), t.objects.end());
  }

  std::vector<std::size_t> tmpl(o.templates.size());
  for (std::size_t i = 0; i < tmpl.size(); ++i) tmpl[i] = i;
  rng.shuffle(tmpl.begin(), tmpl.end());
  const std::size_t refs = 1 + rng.below(o.max_references);
  for (std::size_t r = 0; r < refs; ++r)
    t.references.push_back(
        instantiate(o.templates[tmpl[r]], ep.truth.room, o.verbs[rng.below(o.verbs.size())], ep.truth.object));
  return ep;
}

/// Episode i of a seeded dataset; each episode has its own substream.
inline Episode dataset_episode(const World& world, std::uint64_t seed, std::size_t index) {
  RandomStream rng = RandomStream(seed).substream("episodes").substream(index);
  return sample_episode(world, rng, "ep" + std::to_string(index));
}

inline std::vector<Episode> sample_dataset(const World& world, std::uint64_t seed, std::size_t count) {
  std::vector<Episode> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(dataset_episode(world, seed, i));
  return out;
}

/// Room index whose anchor has the largest cosine with the feature vector.
inline std::size_t nearest_room(const World& world, std::span<const double> feature) {
  std::size_t best = 0;
  double best_cos = -2.0;
  for (std::size_t r = 0; r < world.anchors.rows(); ++r) {
    const double c = cosine(feature, world.anchors.row(r));
    if (c > best_cos) {
      best_cos = c;
      best = r;
    }
  }
  return best;
}

/// True when the instruction names both the true room and the true object.
inline bool mentions_truth(const std::string& instruction, const Truth& truth) {
  const auto toks = text::tokenize(instruction);
  auto has = [&](const std::string& w) { return std::find(toks.begin(), toks.end(), w) != toks.end(); };
  return has(truth.room) && has(truth.object);
}

inline bool mentions_object(const std::string& instruction, const Truth& truth) {
  const auto toks = text::tokenize(instruction);
  return std::find(toks.begin(), toks.end(), truth.object) != toks.end();
}

/// Validation membership by FNV-1a hash of the id (one in five).
inline bool is_validation(const std::string& id) { return aigen::detail::fnv1a(id) % 5 == 0; }

inline std::pair<std::vector<Episode>, std::vector<Episode>> split(std::vector<Episode> episodes) {
  std::pair<std::vector<Episode>, std::vector<Episode>> out;
  for (auto& e : episodes) (is_validation(e.trajectory.id) ? out.second : out.first).push_back(std::move(e));
  return out;
}

inline std::vector<Trajectory> trajectories(const std::vector<Episode>& episodes) {
  std::vector<Trajectory> out;
  out.reserve(episodes.size());
  for (const auto& e : episodes) out.push_back(e.trajectory);
  return out;
}

inline nlohmann::ordered_json episode_to_json(const Episode& e) {
  auto j = trajectory_to_json(e.trajectory);
  j["truth"] = {{"room", e.truth.room}, {"object", e.truth.object}};
  return j;
}

inline void export_jsonl(const std::vector<Episode>& episodes, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  aigen::detail::require(static_cast<bool>(out), "cannot write " + path);
  for (const auto& e : episodes) out << episode_to_json(e).dump() << '\n';
  out.flush();
  aigen::detail::require(static_cast<bool>(out), "failed writing " + path);
}

inline std::vector<Episode> import_jsonl(const std::string& path) {
  std::vector<Episode> out;
  for_each_jsonl(path, [&](const nlohmann::json& j) {
    Episode e;
    e.trajectory = trajectory_from_json(j);
    aigen::detail::require(j.contains("truth") && j["truth"].is_object(), "missing \"truth\" object");
    e.truth = {j["truth"].at("room").get<std::string>(), j["truth"].at("object").get<std::string>()};
    out.push_back(std::move(e));
  });
  return out;
}

/// A trajectory paired with an instruction, labelled real (1) when the
/// instruction was written for it and fake (0) when borrowed from an episode
/// with a different room or object.
struct Pairing {
  std::size_t trajectory = 0;
  std::string instruction;
  int label = 1;
};

inline std::vector<Pairing> discrimination_pairs(const std::vector<Episode>& episodes, RandomStream& rng) {
  aigen::detail::require(episodes.size() >= 2, "need at least two episodes to build mismatched pairs");
  std::vector<Pairing> out;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& refs = episodes[i].trajectory.references;
    aigen::detail::require(!refs.empty(), "episode '" + episodes[i].trajectory.id + "' has no reference");
    out.push_back({i, refs[rng.below(refs.size())], 1});
    std::size_t j = i;
    for (std::size_t attempt = 0; attempt < 1000 && (j == i || episodes[j].truth == episodes[i].truth); ++attempt)
      j = rng.below(episodes.size());
    aigen::detail::require(!(episodes[j].truth == episodes[i].truth), "no episode with a different room/object");
    const auto& other = episodes[j].trajectory.references;
    out.push_back({i, other[rng.below(other.size())], 0});
  }
  return out;
}

}  // namespace aigen::synth
