#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sid/corpus.hpp"
#include "sid/describe.hpp"
#include "sid/error.hpp"
#include "sid/tune.hpp"

namespace sid::pipeline {

/// Bad flags or config values, detected before any work starts.
class UsageError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// The run configuration: one JSON document.
///
///   manifest      path to the run manifest
///   output_dir    defaults to the manifest's output_dir, then "out"
///   case          train-description case ("case1".."case4", "sid")
///   run           run label; defaults to "<tune.method>-<case tag>"
///   runs          labels to evaluate/report; defaults to every run found
///   vlm           VLM config (provider, model, api_key_env, options)
///   templates     instruction template overrides
///   style         {"<subject id>": "painting" | "cartoon"} for style subjects
///   segmenter     segmenter config ({"kind": ...})
///   encoder       {"id": ..., adapter options}
///   backend       backend adapter config ({"adapter": "tiny"} or command)
///   tune          tuning config
///   sample        sampling config
///   metrics       {"subject_resolution", "batch_size"}
///   attn          {"token", "resolution", "alpha", "prompts", "images_per_prompt",
///                  "handle", "prompt"}
///   jobs          parallel subjects
struct Config {
  nlohmann::json doc = nlohmann::json::object();
  std::filesystem::path base_dir;

  static Config load(const std::filesystem::path& path);
  /// Sets a dotted key ("sample.images_per_prompt") from a flag value; the
  /// value is parsed as JSON when possible and kept as a string otherwise.
  void set(std::string_view dotted_key, std::string_view value);

  corpus::RunManifest manifest() const;
  std::filesystem::path output_dir() const;
  describe::DescriptionCase description_case() const;
  std::string run_label() const;
  int jobs() const;
  std::filesystem::path resolve(const std::filesystem::path& p) const;
};

/// Per-unit bookkeeping for one command.
struct Outcome {
  int succeeded = 0;
  int failed = 0;
  std::vector<std::string> errors;
  /// Inputs that were expected but absent (evaluate lists them in missing.json).
  nlohmann::json missing = nlohmann::json::array();

  /// 0 when nothing failed, 3 when nothing succeeded, otherwise 2.
  int exit_code() const;
  void merge(const Outcome& other);
};

/// Output layout under the output directory.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path descriptions(const std::string& subject, describe::DescriptionCase c) const;
  std::filesystem::path description_summary(const std::string& subject, describe::DescriptionCase c) const;
  std::filesystem::path masks(const std::string& subject) const;
  std::filesystem::path mask_stem(const std::string& subject, int index) const;
  std::filesystem::path handle(const std::string& run, const std::string& subject) const;
  std::filesystem::path call_log(const std::string& run, const std::string& subject) const;
  std::filesystem::path generated(const std::string& run, const std::string& subject, int prompt_index) const;
  std::filesystem::path report_stem(const std::string& run, const std::string& subject, int prompt_index) const;
  std::filesystem::path reports() const;
  std::filesystem::path attn(const std::string& run, const std::string& subject, int prompt_index) const;
  std::filesystem::path cache() const;
};

/// Runs `fn(i)` for i in [0, count) on up to `jobs` threads; exceptions are
/// recorded per index instead of propagating.
std::vector<std::string> parallel_for(int count, int jobs, const std::function<void(int)>& fn);

Outcome run_describe(const Config& cfg);
Outcome run_segment(const Config& cfg);
Outcome run_tune(const Config& cfg);
Outcome run_sample(const Config& cfg);
Outcome run_evaluate(const Config& cfg);
Outcome run_attn(const Config& cfg);
/// Rebuilds aggregate.csv and the plots from the per-report JSON files.
Outcome run_report(const Config& cfg);

struct AggregateRow {
  std::string method;
  int reports = 0;
  double sa = 0.0;
  double nsd = 0.0;
  double ta = 0.0;
};

/// Mean of SA, NSD and TA over the reports of each run label.
std::vector<AggregateRow> aggregate_reports(const std::filesystem::path& reports_dir);
std::string aggregate_to_csv(const std::vector<AggregateRow>& rows);

}  // namespace sid::pipeline
