#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aigen/core/error.hpp"
#include "aigen/core/tensor.hpp"

namespace aigen {

inline constexpr std::size_t kMaxReferences = 3;

/// One episode: per-step visual features (T × D_img), object labels from the
/// final observation, and up to three reference instructions.
struct Trajectory {
  std::string id;
  Tensor<double> features;
  std::vector<std::string> objects;
  std::vector<std::string> references;

  std::size_t steps() const { return features.rows(); }
  std::size_t feature_dim() const { return features.cols(); }

  void validate() const {
    detail::require(!features.empty() && features.rows() >= 1,
                    "trajectory '" + id + "' has no visual steps");
    detail::require(references.size() <= kMaxReferences,
                    "trajectory '" + id + "' has more than 3 references");
    detail::require(all_finite(features), "trajectory '" + id + "' has non-finite features");
  }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

inline nlohmann::ordered_json trajectory_to_json(const Trajectory& t) {
  nlohmann::ordered_json j;
  j["id"] = t.id;
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < t.features.rows(); ++r) {
    const auto row = t.features.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  j["features"] = std::move(rows);
  j["objects"] = t.objects;
  j["references"] = t.references;
  return j;
}

/// Parses the ingestion schema; unknown keys (e.g. "truth") are ignored here.
inline Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory t;
  if (!j.is_object()) throw InvalidInput("expected a JSON object");
  t.id = j.at("id").get<std::string>();
  const auto& feats = j.at("features");
  if (!feats.is_array() || feats.empty()) throw InvalidInput("'features' must be a non-empty array");
  const std::size_t dim = feats.at(0).size();
  if (dim == 0) throw InvalidInput("feature vectors must be non-empty");
  std::vector<double> data;
  data.reserve(feats.size() * dim);
  for (const auto& row : feats) {
    if (!row.is_array() || row.size() != dim)
      throw InvalidInput("feature vectors in '" + t.id + "' have inconsistent dimension");
    for (const auto& v : row) data.push_back(v.get<double>());
  }
  t.features = Tensor<double>({feats.size(), dim}, std::move(data));
  t.objects = j.value("objects", std::vector<std::string>{});
  t.references = j.value("references", std::vector<std::string>{});
  t.validate();
  return t;
}

/// Sidecar manifest path for a JSON-lines trajectory file.
inline std::string manifest_path(const std::string& data_path) { return data_path + ".manifest.json"; }

/// Reads the declared feature dimension from the sidecar manifest, if any.
inline std::optional<std::size_t> read_manifest_dim(const std::string& data_path) {
  const auto path = manifest_path(data_path);
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::ifstream in(path);
  try {
    const auto j = nlohmann::json::parse(in);
    return j.at("feature_dim").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(path + ": malformed manifest: " + e.what());
  }
}

/// Visits every non-empty line of a JSON-lines file; errors name the line.
template <class Fn>
void for_each_jsonl(const std::string& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      fn(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput(path + ":" + std::to_string(number) + ": " + e.what());
    } catch (const InvalidInput& e) {
      throw InvalidInput(path + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

/// Loads trajectories, validating every feature width against the manifest
/// (when present) and against each other.
inline std::vector<Trajectory> read_trajectories(const std::string& path) {
  std::optional<std::size_t> dim = read_manifest_dim(path);
  std::vector<Trajectory> out;
  for_each_jsonl(path, [&](const nlohmann::json& j) {
    Trajectory t = trajectory_from_json(j);
    if (dim && t.feature_dim() != *dim)
      throw InvalidInput("feature dimension " + std::to_string(t.feature_dim()) +
                         " does not match declared " + std::to_string(*dim));
    dim = t.feature_dim();
    out.push_back(std::move(t));
  });
  return out;
}

}  // namespace aigen
