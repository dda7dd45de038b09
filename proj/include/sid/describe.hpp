#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sid/error.hpp"
#include "sid/image.hpp"
#include "sid/vlm.hpp"

namespace sid::describe {

/// Train-description cases, ordered by how much they say about the image.
///  - kBaseline: "a [v] <class>" only.
///  - kNonSubjectClasses: adds the classes of the other objects.
///  - kSelectivelyInformative: adds classes and attributes of the other
///    objects while the subject keeps only its class name (SID).
///  - kSubjectSpecs: additionally specifies the subject itself.
enum class DescriptionCase { kBaseline, kNonSubjectClasses, kSelectivelyInformative, kSubjectSpecs };

std::string_view to_string(DescriptionCase c);
/// Accepts "case1".."case4", "sid", "baseline" and the enum spellings.
DescriptionCase parse_case(std::string_view text);
std::string_view case_tag(DescriptionCase c);

enum class StyleMedium { kPainting, kCartoon };
std::string_view to_string(StyleMedium m);
StyleMedium parse_medium(std::string_view text);

/// What the descriptions are about: an object of some class, or a style.
struct Target {
  std::string class_name;
  std::string identifier_token{"[v]"};
  std::optional<StyleMedium> medium;

  static Target object(std::string class_name, std::string identifier_token);
  static Target style(std::string identifier_token, StyleMedium medium);

  bool is_style() const { return medium.has_value(); }
  /// "a [v] dog" or "A painting in the style of [v] art".
  std::string baseline() const;
  /// The baseline as the VLM is asked to write it, without the identifier.
  std::string vlm_prefix() const;
};

struct TrainDescription {
  std::string text;
  DescriptionCase description_case = DescriptionCase::kBaseline;
  int image_index = 0;
  std::optional<std::string> vlm_name;
  std::optional<std::string> raw_vlm_output;

  friend bool operator==(const TrainDescription&, const TrainDescription&) = default;
};

TrainDescription baseline_description(std::string_view class_name, std::string_view identifier_token);
TrainDescription style_baseline_description(std::string_view identifier_token, StyleMedium medium);

/// Configurable instruction texts. `{class_name}` and `{medium}` are substituted.
struct InstructionTemplates {
  std::string non_subject_classes;
  std::string selectively_informative;
  std::string subject_specs;
  std::string style;
  std::string expression_suffix;

  static InstructionTemplates defaults();
  static InstructionTemplates from_json(const nlohmann::json& doc);
};

VlmInstruction render_instruction(const Target& target, DescriptionCase c,
                                  const InstructionTemplates& templates = InstructionTemplates::defaults(),
                                  bool with_expression = false);

struct DescriptionChecks {
  bool identifier_once = false;        // (a)
  bool begins_with_baseline = false;   // (b)
  bool subject_undescribed = false;    // (c), only enforced for SID
  bool has_continuation = false;       // (d), Cases 2-4; Case 1 must equal the baseline
  bool mentions_class = false;

  bool ok() const {
    return identifier_once && begins_with_baseline && subject_undescribed && has_continuation &&
           mentions_class;
  }
  std::vector<std::string> failures() const;
};

DescriptionChecks validate_description(const TrainDescription& d, const Target& target);
DescriptionChecks validate_description(const TrainDescription& d, std::string_view class_name,
                                       std::string_view identifier_token);

/// True if some token sits between the article and the identifier, or between
/// the identifier and the class noun.
bool subject_has_descriptor(std::string_view text, const Target& target);

/// Rewrites a VLM reply that starts with the identifier-free prefix into one
/// that starts with the baseline. Returns nullopt if the prefix is missing.
std::optional<std::string> insert_identifier(std::string_view vlm_output, const Target& target);

class DescriptionError : public Error {
 public:
  DescriptionError(const std::string& what, std::vector<std::string> raw_outputs)
      : Error(what), raw_outputs_(std::move(raw_outputs)) {}
  const std::vector<std::string>& raw_outputs() const { return raw_outputs_; }

 private:
  std::vector<std::string> raw_outputs_;
};

struct GenerateOptions {
  int max_retries = 3;
  InstructionTemplates templates = InstructionTemplates::defaults();
  bool with_expression = false;
};

/// Case 1 never touches the client; Cases 2-4 call it up to max_retries
/// times, validating each reply.
TrainDescription generate_description(const Image8& image, const Target& target, DescriptionCase c,
                                      VlmClient* client, int image_index = 0,
                                      const GenerateOptions& options = {});

/// Inserts the expression clause right after the subject mention
/// ("a [v] man in a park" -> "a [v] man with a wide smile in a park"), or
/// appends it when no mention is found, then re-validates.
TrainDescription augment_with_expression(const TrainDescription& d, std::string_view expression,
                                         const Target& target);

nlohmann::json to_json(const TrainDescription& d);
TrainDescription description_from_json(const nlohmann::json& doc);
void write_jsonl(const std::filesystem::path& path, const std::vector<TrainDescription>& items);
std::vector<TrainDescription> read_jsonl(const std::filesystem::path& path);

}  // namespace sid::describe
