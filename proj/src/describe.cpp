#include "sid/describe.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "sid/corpus.hpp"
#include "sid/image_io.hpp"

namespace sid::describe {
using nlohmann::json;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

// Strips quotes and sentence punctuation, keeping brackets so "[v]" survives.
std::string bare(std::string_view word) {
  static constexpr std::string_view kPunct = ",.;:!?\"'()";
  std::size_t b = 0;
  std::size_t e = word.size();
  while (b < e && kPunct.find(word[b]) != std::string_view::npos) ++b;
  while (e > b && kPunct.find(word[e - 1]) != std::string_view::npos) --e;
  return std::string(word.substr(b, e - b));
}

bool is_article(std::string_view word) {
  const std::string w = lower(bare(word));
  return w == "a" || w == "an" || w == "the";
}

bool word_boundary_after(std::string_view text, std::size_t pos) {
  return pos >= text.size() || !std::isalnum(static_cast<unsigned char>(text[pos]));
}

bool contains_word_sequence(std::string_view text, std::string_view phrase) {
  const auto hay = words_of(lower(text));
  const auto needle = words_of(lower(phrase));
  if (needle.empty() || needle.size() > hay.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
    bool match = true;
    for (std::size_t k = 0; k < needle.size() && match; ++k) match = bare(hay[i + k]) == needle[k];
    if (match) return true;
  }
  return false;
}

std::string replace_all(std::string text, std::string_view key, std::string_view value) {
  for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size())) {
    text.replace(pos, key.size(), value);
  }
  return text;
}

void require_non_empty(std::string_view value, const char* what) {
  if (trim(value).empty()) throw InvalidArgument(std::string("empty ") + what);
}

}  // namespace

std::string_view to_string(DescriptionCase c) {
  switch (c) {
    case DescriptionCase::kBaseline: return "CASE1_BASELINE";
    case DescriptionCase::kNonSubjectClasses: return "CASE2_NONSUBJECT_CLASSES";
    case DescriptionCase::kSelectivelyInformative: return "CASE3_SID";
    case DescriptionCase::kSubjectSpecs: return "CASE4_SUBJECT_SPECS";
  }
  return "?";
}

std::string_view case_tag(DescriptionCase c) {
  switch (c) {
    case DescriptionCase::kBaseline: return "case1";
    case DescriptionCase::kNonSubjectClasses: return "case2";
    case DescriptionCase::kSelectivelyInformative: return "case3";
    case DescriptionCase::kSubjectSpecs: return "case4";
  }
  return "?";
}

DescriptionCase parse_case(std::string_view text) {
  const std::string t = lower(text);
  if (t == "case1" || t == "1" || t == "baseline" || t == "case1_baseline") return DescriptionCase::kBaseline;
  if (t == "case2" || t == "2" || t == "case2_nonsubject_classes") return DescriptionCase::kNonSubjectClasses;
  if (t == "case3" || t == "3" || t == "sid" || t == "case3_sid") return DescriptionCase::kSelectivelyInformative;
  if (t == "case4" || t == "4" || t == "case4_subject_specs") return DescriptionCase::kSubjectSpecs;
  throw InvalidArgument("unknown description case: " + std::string(text));
}

std::string_view to_string(StyleMedium m) {
  return m == StyleMedium::kPainting ? "painting" : "cartoon";
}

StyleMedium parse_medium(std::string_view text) {
  const std::string t = lower(text);
  if (t == "painting") return StyleMedium::kPainting;
  if (t == "cartoon") return StyleMedium::kCartoon;
  throw InvalidArgument("unknown style medium: " + std::string(text));
}

Target Target::object(std::string class_name, std::string identifier_token) {
  require_non_empty(class_name, "class_name");
  require_non_empty(identifier_token, "identifier_token");
  return Target{std::move(class_name), std::move(identifier_token), std::nullopt};
}

Target Target::style(std::string identifier_token, StyleMedium medium) {
  require_non_empty(identifier_token, "identifier_token");
  return Target{std::string(to_string(medium)), std::move(identifier_token), medium};
}

std::string Target::baseline() const {
  if (is_style()) return "A " + class_name + " in the style of " + identifier_token + " art";
  return "a " + identifier_token + " " + class_name;
}

std::string Target::vlm_prefix() const {
  if (is_style()) return "A " + class_name + " in the style of art";
  return "a " + class_name;
}

TrainDescription baseline_description(std::string_view class_name, std::string_view identifier_token) {
  const Target t = Target::object(std::string(class_name), std::string(identifier_token));
  return TrainDescription{t.baseline(), DescriptionCase::kBaseline, 0, std::nullopt, std::nullopt};
}

TrainDescription style_baseline_description(std::string_view identifier_token, StyleMedium medium) {
  const Target t = Target::style(std::string(identifier_token), medium);
  return TrainDescription{t.baseline(), DescriptionCase::kBaseline, 0, std::nullopt, std::nullopt};
}

// ---------------------------------------------------------------------------

InstructionTemplates InstructionTemplates::defaults() {
  InstructionTemplates t;
  t.non_subject_classes =
      "Describe the image in one sentence. Please start the sentence with \"a {class_name}.\". "
      "Only name the other objects in the image without describing them. "
      "You should not describe the {class_name} itself.";
  t.selectively_informative =
      "Describe the image in one sentence in detail. Please start the sentence with "
      "\"a {class_name}.\". You should not describe the {class_name} itself.";
  t.subject_specs =
      "Describe the image in one sentence in detail. Please start the sentence with "
      "\"a {class_name}.\". Describe the {class_name} itself in detail after naming it, "
      "then describe the other objects.";
  t.style =
      "Describe the image in one sentence in detail. Please start the sentence with "
      "\"A {medium} in the style of art.\". You should not describe the style of the {medium} itself.";
  t.expression_suffix = " Also describe the facial expression of the {class_name}.";
  return t;
}

InstructionTemplates InstructionTemplates::from_json(const json& doc) {
  InstructionTemplates t = defaults();
  t.non_subject_classes = doc.value("case2", t.non_subject_classes);
  t.selectively_informative = doc.value("case3", t.selectively_informative);
  t.subject_specs = doc.value("case4", t.subject_specs);
  t.style = doc.value("style", t.style);
  t.expression_suffix = doc.value("expression_suffix", t.expression_suffix);
  return t;
}

VlmInstruction render_instruction(const Target& target, DescriptionCase c,
                                  const InstructionTemplates& templates, bool with_expression) {
  VlmInstruction instr;
  instr.subject_class = target.class_name;
  instr.case_tag = std::string(case_tag(c));
  std::string text;
  if (target.is_style()) {
    instr.template_id = TemplateId::kStyle;
    text = templates.style;
  } else {
    instr.template_id = with_expression ? TemplateId::kObjectWithExpression : TemplateId::kObject;
    switch (c) {
      case DescriptionCase::kNonSubjectClasses: text = templates.non_subject_classes; break;
      case DescriptionCase::kSubjectSpecs: text = templates.subject_specs; break;
      case DescriptionCase::kSelectivelyInformative: text = templates.selectively_informative; break;
      case DescriptionCase::kBaseline:
        throw InvalidArgument("the baseline case does not use a VLM instruction");
    }
    if (with_expression) text += templates.expression_suffix;
  }
  text = replace_all(std::move(text), "{class_name}", target.class_name);
  if (target.medium) text = replace_all(std::move(text), "{medium}", to_string(*target.medium));
  instr.rendered_text = std::move(text);
  return instr;
}

// ---------------------------------------------------------------------------

std::vector<std::string> DescriptionChecks::failures() const {
  std::vector<std::string> out;
  if (!identifier_once) out.emplace_back("identifier must appear exactly once");
  if (!begins_with_baseline) out.emplace_back("must begin with the baseline description");
  if (!subject_undescribed) out.emplace_back("subject mention carries a descriptor");
  if (!has_continuation) out.emplace_back("continuation does not match the description case");
  if (!mentions_class) out.emplace_back("class name missing");
  return out;
}

bool subject_has_descriptor(std::string_view text, const Target& target) {
  const auto words = words_of(text);
  std::size_t id = words.size();
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (bare(words[i]) == target.identifier_token) {
      id = i;
      break;
    }
  }
  if (id == words.size()) return true;

  if (target.is_style()) {
    return id == 0 || lower(bare(words[id - 1])) != "of" || id + 1 >= words.size() ||
           lower(bare(words[id + 1])) != "art";
  }

  if (id > 0) {
    std::size_t article = id;
    for (std::size_t j = id; j-- > 0;) {
      if (is_article(words[j])) {
        article = j;
        break;
      }
    }
    if (article == id || article + 1 != id) return true;
  }
  const auto cls = words_of(lower(target.class_name));
  for (std::size_t k = 0; k < cls.size(); ++k) {
    if (id + 1 + k >= words.size() || lower(bare(words[id + 1 + k])) != cls[k]) return true;
  }
  return false;
}

DescriptionChecks validate_description(const TrainDescription& d, const Target& target) {
  DescriptionChecks checks;
  const std::string baseline = target.baseline();
  checks.identifier_once = corpus::count_occurrences(d.text, target.identifier_token) == 1;
  checks.begins_with_baseline =
      d.text.compare(0, baseline.size(), baseline) == 0 && word_boundary_after(d.text, baseline.size());
  checks.mentions_class = contains_word_sequence(d.text, target.class_name);
  checks.subject_undescribed = d.description_case != DescriptionCase::kSelectivelyInformative ||
                               !subject_has_descriptor(d.text, target);
  if (d.description_case == DescriptionCase::kBaseline) {
    checks.has_continuation = d.text == baseline;
  } else {
    const std::string_view rest =
        checks.begins_with_baseline ? std::string_view(d.text).substr(baseline.size()) : std::string_view{};
    checks.has_continuation = std::any_of(rest.begin(), rest.end(), [](char ch) {
      return std::isalnum(static_cast<unsigned char>(ch)) != 0;
    });
  }
  return checks;
}

DescriptionChecks validate_description(const TrainDescription& d, std::string_view class_name,
                                       std::string_view identifier_token) {
  return validate_description(d, Target::object(std::string(class_name), std::string(identifier_token)));
}

std::optional<std::string> insert_identifier(std::string_view vlm_output, const Target& target) {
  std::string text = trim(vlm_output);
  if (text.size() >= 2 && text.front() == '"' && text.back() == '"') text = trim(text.substr(1, text.size() - 2));
  const std::string prefix = target.vlm_prefix();
  if (text.size() < prefix.size() || lower(text.substr(0, prefix.size())) != lower(prefix) ||
      !word_boundary_after(text, prefix.size())) {
    return std::nullopt;
  }
  return target.baseline() + text.substr(prefix.size());
}

TrainDescription generate_description(const Image8& image, const Target& target, DescriptionCase c,
                                      VlmClient* client, int image_index, const GenerateOptions& options) {
  if (c == DescriptionCase::kBaseline) {
    return TrainDescription{target.baseline(), c, image_index, std::nullopt, std::nullopt};
  }
  if (client == nullptr) throw InvalidArgument("a VLM client is required for " + std::string(to_string(c)));
  if (options.max_retries < 1) throw InvalidArgument("max_retries must be >= 1");

  const VlmInstruction instruction = render_instruction(target, c, options.templates, options.with_expression);
  std::vector<std::string> raw_outputs;
  std::string last_failure;
  for (int attempt = 0; attempt < options.max_retries; ++attempt) {
    std::string raw = client->send(image, instruction);
    TrainDescription d;
    d.text = insert_identifier(raw, target).value_or(trim(raw));
    d.description_case = c;
    d.image_index = image_index;
    d.vlm_name = client->name();
    d.raw_vlm_output = raw;
    const auto checks = validate_description(d, target);
    if (checks.ok()) return d;
    raw_outputs.push_back(std::move(raw));
    last_failure = checks.failures().front();
  }
  throw DescriptionError("image " + std::to_string(image_index) + ": VLM output failed validation after " +
                             std::to_string(options.max_retries) + " attempts (" + last_failure + ")",
                         std::move(raw_outputs));
}

TrainDescription augment_with_expression(const TrainDescription& d, std::string_view expression,
                                         const Target& target) {
  const std::string expr = trim(expression);
  if (!validate_description(d, target).ok()) throw InvalidArgument("description is not valid for its case");
  if (expr.empty()) return d;
  if (expr.find(target.identifier_token) != std::string::npos) {
    throw InvalidArgument("expression must not contain the identifier");
  }
  TrainDescription out = d;
  const std::string mention = target.identifier_token + " " + target.class_name;
  const auto pos = target.is_style() ? std::string::npos : d.text.find(mention);
  if (pos != std::string::npos) {
    out.text.insert(pos + mention.size(), " " + expr);
  } else {
    out.text += " " + expr;
  }
  const auto checks = validate_description(out, target);
  if (!checks.ok()) {
    throw InvalidArgument("augmented description failed validation: " + checks.failures().front());
  }
  return out;
}

// ---------------------------------------------------------------------------

json to_json(const TrainDescription& d) {
  json j = {{"image_index", d.image_index}, {"case", to_string(d.description_case)}, {"text", d.text}};
  j["vlm_name"] = d.vlm_name ? json(*d.vlm_name) : json(nullptr);
  j["raw_vlm_output"] = d.raw_vlm_output ? json(*d.raw_vlm_output) : json(nullptr);
  return j;
}

TrainDescription description_from_json(const json& doc) {
  TrainDescription d;
  d.image_index = doc.at("image_index").get<int>();
  d.description_case = parse_case(doc.at("case").get<std::string>());
  d.text = doc.at("text").get<std::string>();
  if (doc.contains("vlm_name") && !doc.at("vlm_name").is_null()) d.vlm_name = doc.at("vlm_name").get<std::string>();
  if (doc.contains("raw_vlm_output") && !doc.at("raw_vlm_output").is_null()) {
    d.raw_vlm_output = doc.at("raw_vlm_output").get<std::string>();
  }
  return d;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<TrainDescription>& items) {
  std::string out;
  for (const auto& d : items) out += to_json(d).dump() + "\n";
  write_text_file(path, out);
}

std::vector<TrainDescription> read_jsonl(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<TrainDescription> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    try {
      out.push_back(description_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw IoError(path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace sid::describe
