#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sid/image.hpp"

namespace sid::corpus {

/// Identifier placeholder kept in manifests; mapped to a backend rare token
/// only when tuning.
inline constexpr std::string_view kIdentifierPlaceholder = "[v]";

struct ReferenceSet {
  std::string subject_id;
  std::string class_name;
  std::string identifier_token{kIdentifierPlaceholder};
  std::vector<Image8> images;
  std::vector<std::string> filenames;
  std::string source;

  std::size_t size() const { return images.size(); }
  /// Order-sensitive digest over metadata and pixels.
  std::string hash() const;
};

struct GeneratedSet {
  std::vector<Image8> images;
  std::string generation_prompt;
  std::string run_id;
  std::vector<std::int64_t> seeds;
};

struct SubjectEntry {
  std::string id;
  std::string class_name;
  std::string identifier_token{kIdentifierPlaceholder};
  std::filesystem::path image_dir;
  std::vector<std::string> prompts;
};

struct RunManifest {
  std::vector<SubjectEntry> subjects;
  int images_per_prompt = 0;
  std::string backend;
  std::filesystem::path output_dir;
  std::optional<std::int64_t> declared_total;

  /// Sum over subjects of prompt count times images per prompt.
  std::int64_t total_images() const;
  const SubjectEntry& subject(std::string_view id) const;
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

/// Non-overlapping occurrences of `token` in `text`.
int count_occurrences(std::string_view text, std::string_view token);

/// Checks the class-name / identifier pair shared by every subject record.
void check_subject_names(std::string_view class_name, std::string_view identifier_token);

RunManifest manifest_from_json(const nlohmann::json& doc,
                               const std::filesystem::path& base_dir = {});
nlohmann::json manifest_to_json(const RunManifest& manifest);
RunManifest load_manifest(const std::filesystem::path& path);

ValidationReport validate_manifest(const RunManifest& manifest);

/// Images are taken in lexicographic filename order.
ReferenceSet load_reference_set(const std::filesystem::path& dir, const SubjectEntry& meta);

/// Writes `NNN.png` files plus `generated.json`.
void save_generated_set(const GeneratedSet& set, const std::filesystem::path& dir);
GeneratedSet load_generated_set(const std::filesystem::path& dir);

}  // namespace sid::corpus

namespace sid::corpus {

/// Throws unless `prompt` contains `identifier_token` exactly once.
void check_generation_prompt(std::string_view prompt, std::string_view identifier_token);

}  // namespace sid::corpus
