#include "sid/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "sid/hash.hpp"
#include "sid/image_io.hpp"

namespace sid::corpus {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::string frame_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%03zu.png", i);
  return buf;
}

}  // namespace

std::string ReferenceSet::hash() const {
  Sha256 h;
  h.update_field(subject_id).update_field(class_name).update_field(identifier_token);
  for (std::size_t i = 0; i < images.size(); ++i) {
    h.update_field(i < filenames.size() ? filenames[i] : std::string{});
    h.update(images[i]);
  }
  return h.hex_digest();
}

std::int64_t RunManifest::total_images() const {
  std::int64_t total = 0;
  for (const auto& s : subjects) {
    total += static_cast<std::int64_t>(s.prompts.size()) * images_per_prompt;
  }
  return total;
}

const SubjectEntry& RunManifest::subject(std::string_view id) const {
  for (const auto& s : subjects) {
    if (s.id == id) return s;
  }
  throw InvalidArgument("unknown subject: " + std::string(id));
}

int count_occurrences(std::string_view text, std::string_view token) {
  if (token.empty()) return 0;
  int n = 0;
  for (std::size_t pos = text.find(token); pos != std::string_view::npos;
       pos = text.find(token, pos + token.size())) {
    ++n;
  }
  return n;
}

void check_subject_names(std::string_view class_name, std::string_view identifier_token) {
  if (split_words(class_name).empty()) throw InvalidArgument("empty class_name");
  const auto id_words = split_words(identifier_token);
  if (id_words.empty()) throw InvalidArgument("empty identifier_token");
  if (id_words.size() != 1) throw InvalidArgument("identifier_token contains whitespace");
  for (const auto& w : split_words(class_name)) {
    if (w == id_words.front()) throw InvalidArgument("identifier_token equals a class_name word");
  }
}

RunManifest manifest_from_json(const json& doc, const fs::path& base_dir) {
  RunManifest m;
  try {
    m.images_per_prompt = doc.at("images_per_prompt").get<int>();
    m.backend = doc.value("backend", std::string{});
    if (doc.contains("output_dir")) m.output_dir = doc.at("output_dir").get<std::string>();
    if (doc.contains("total_images")) m.declared_total = doc.at("total_images").get<std::int64_t>();
    for (const auto& s : doc.at("subjects")) {
      SubjectEntry e;
      e.id = s.at("id").get<std::string>();
      e.class_name = s.at("class_name").get<std::string>();
      e.identifier_token = s.value("identifier_token", std::string(kIdentifierPlaceholder));
      fs::path dir = s.value("image_dir", std::string{});
      e.image_dir = (dir.is_relative() && !base_dir.empty()) ? base_dir / dir : dir;
      e.prompts = s.value("prompts", std::vector<std::string>{});
      m.subjects.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed manifest: ") + e.what());
  }
  if (!m.output_dir.empty() && m.output_dir.is_relative() && !base_dir.empty()) {
    m.output_dir = base_dir / m.output_dir;
  }
  return m;
}

json manifest_to_json(const RunManifest& m) {
  json subjects = json::array();
  for (const auto& s : m.subjects) {
    subjects.push_back({{"id", s.id},
                        {"class_name", s.class_name},
                        {"identifier_token", s.identifier_token},
                        {"image_dir", s.image_dir.string()},
                        {"prompts", s.prompts}});
  }
  json doc = {{"subjects", subjects}, {"images_per_prompt", m.images_per_prompt}};
  if (!m.backend.empty()) doc["backend"] = m.backend;
  if (!m.output_dir.empty()) doc["output_dir"] = m.output_dir.string();
  if (m.declared_total) doc["total_images"] = *m.declared_total;
  return doc;
}

RunManifest load_manifest(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
  return manifest_from_json(doc, path.parent_path());
}

ValidationReport validate_manifest(const RunManifest& m) {
  ValidationReport report;
  auto add = [&](std::string v) { report.violations.push_back(std::move(v)); };
  if (m.subjects.empty()) add("no subjects");
  if (m.images_per_prompt < 1) add("images_per_prompt must be >= 1");
  std::set<std::string> seen;
  for (const auto& s : m.subjects) {
    if (!seen.insert(s.id).second) add("duplicate subject_id: " + s.id);
    if (s.id.empty()) add("empty subject_id");
    try {
      check_subject_names(s.class_name, s.identifier_token);
    } catch (const InvalidArgument& e) {
      add("subject " + s.id + ": " + e.what());
    }
    if (s.prompts.empty()) add("subject " + s.id + ": no prompts");
    for (std::size_t i = 0; i < s.prompts.size(); ++i) {
      if (count_occurrences(s.prompts[i], s.identifier_token) != 1) {
        add("subject " + s.id + ": prompt " + std::to_string(i) +
            " must contain the identifier exactly once");
      }
    }
  }
  if (m.declared_total && *m.declared_total != m.total_images()) {
    add("total mismatch: declared " + std::to_string(*m.declared_total) + ", computed " +
        std::to_string(m.total_images()));
  }
  return report;
}

ReferenceSet load_reference_set(const fs::path& dir, const SubjectEntry& meta) {
  check_subject_names(meta.class_name, meta.identifier_token);
  if (!fs::is_directory(dir)) throw IoError("missing directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  if (files.empty()) throw InvalidArgument("empty reference set: " + dir.string());
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  ReferenceSet set;
  set.subject_id = meta.id;
  set.class_name = meta.class_name;
  set.identifier_token = meta.identifier_token;
  set.source = dir.string();
  for (const auto& f : files) {
    set.images.push_back(read_image(f));
    set.filenames.push_back(f.filename().string());
  }
  return set;
}

void save_generated_set(const GeneratedSet& set, const fs::path& dir) {
  if (set.images.empty()) throw InvalidArgument("generated set has no images");
  fs::create_directories(dir);
  json files = json::array();
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    write_png(dir / frame_name(i), set.images[i]);
    files.push_back(frame_name(i));
  }
  json doc = {{"run_id", set.run_id},
              {"generation_prompt", set.generation_prompt},
              {"seeds", set.seeds},
              {"files", files}};
  write_text_file(dir / "generated.json", doc.dump(2) + "\n");
}

GeneratedSet load_generated_set(const fs::path& dir) {
  const fs::path meta = dir / "generated.json";
  json doc;
  try {
    doc = json::parse(read_text_file(meta));
  } catch (const json::parse_error& e) {
    throw IoError(meta.string() + ": " + e.what());
  }
  GeneratedSet set;
  set.run_id = doc.value("run_id", std::string{});
  set.generation_prompt = doc.at("generation_prompt").get<std::string>();
  set.seeds = doc.value("seeds", std::vector<std::int64_t>{});
  for (const auto& f : doc.at("files")) set.images.push_back(read_image(dir / f.get<std::string>()));
  if (set.images.empty()) throw InvalidArgument("generated set has no images: " + dir.string());
  return set;
}

}  // namespace sid::corpus

namespace sid::corpus {

void check_generation_prompt(std::string_view prompt, std::string_view identifier_token) {
  if (identifier_token.empty()) throw InvalidArgument("empty identifier_token");
  const int n = count_occurrences(prompt, identifier_token);
  if (n == 0) throw InvalidArgument("identifier absent from prompt: " + std::string(prompt));
  if (n > 1) throw InvalidArgument("multiple identifiers in prompt: " + std::string(prompt));
}

}  // namespace sid::corpus
