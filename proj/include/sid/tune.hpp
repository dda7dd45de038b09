#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sid/attnmap.hpp"
#include "sid/corpus.hpp"
#include "sid/describe.hpp"

namespace sid::tune {

/// Optimization-based personalization methods the harness can drive.
enum class Method { kDreambooth, kCustomDiffusion, kSvdiff, kTextualInversion };

std::string_view to_string(Method m);
Method parse_method(std::string_view text);

struct TuneConfig {
  Method method = Method::kDreambooth;
  std::string base_model_id = "stabilityai/stable-diffusion-2-1-base";
  /// Unset means "the backend's own default", which the backend records.
  std::optional<double> learning_rate;
  int iterations = 1000;
  int batch_size = 1;
  bool train_text_encoder = false;
  bool prior_preservation = false;
  std::string class_prompt;
  std::int64_t seed = 0;
  /// Rare token that replaces the identifier placeholder before training.
  std::string rare_token = "sks";
  /// Extra backend settings, passed through untouched.
  nlohmann::json extra = nlohmann::json::object();

  /// Published settings: DreamBooth trains with batch 1, lr 1e-6 for 1000
  /// iterations with the text encoder; SVDiff runs 1000 iterations; the
  /// other methods keep their backend defaults.
  static TuneConfig defaults_for(Method method);
  void validate() const;
};

nlohmann::json to_json(const TuneConfig& cfg);
TuneConfig tune_config_from_json(const nlohmann::json& doc);

struct SampleConfig {
  std::string sampler = "ddim";
  int steps = 50;
  double guidance_scale = 7.5;
  int images_per_prompt = 20;
  /// One per image; when empty, seeds are base_seed, base_seed + 1, ...
  std::vector<std::int64_t> seeds;
  std::int64_t base_seed = 0;
  int height = 512;
  int width = 512;

  std::vector<std::int64_t> resolved_seeds() const;
  void validate() const;
};

nlohmann::json to_json(const SampleConfig& cfg);
SampleConfig sample_config_from_json(const nlohmann::json& doc);

/// Directory with `metadata.json` {backend, base_model_id, cfg, seed, ...}.
struct ModelHandle {
  std::filesystem::path dir;
  nlohmann::json metadata;

  static ModelHandle load(const std::filesystem::path& dir);
};

struct FineTuneRequest {
  std::span<const Image8> images;
  /// Training captions after rare-token substitution, one per image.
  std::vector<std::string> texts;
  TuneConfig config;
  std::filesystem::path handle_dir;
};

struct SampleRequest {
  std::string prompt;  // after rare-token substitution
  SampleConfig config;
  bool capture_attention = false;
};

struct SampleOutput {
  std::vector<Image8> images;
  std::vector<std::int64_t> seeds;
  /// Tokens of the prompt as the backend sees them (attention is indexed by these).
  std::vector<std::string> tokens;
  /// One capture per image when requested and supported.
  std::vector<std::shared_ptr<attn::AttentionSource>> attention;
};

/// A personalization backend. Implementations must write `metadata.json`
/// extras through the returned JSON; the harness owns the file itself.
class BackendAdapter {
 public:
  virtual ~BackendAdapter() = default;
  virtual std::string name() const = 0;
  /// Trains and stores weights under request.handle_dir; returns backend
  /// metadata (effective hyperparameters and the like).
  virtual nlohmann::json fine_tune(const FineTuneRequest& request) = 0;
  virtual SampleOutput sample(const ModelHandle& handle, const SampleRequest& request) = 0;
  virtual bool supports_attention() const { return false; }
};

/// Deterministic stand-in for a diffusion backend. "Training" fits subject
/// and background colours of the references by gradient descent; sampling
/// paints a procedural scene keyed by a hash of prompt and seed, and emits
/// post-softmax attention maps for every prompt token.
class TinyBackend : public BackendAdapter {
 public:
  std::string name() const override { return "tiny"; }
  nlohmann::json fine_tune(const FineTuneRequest& request) override;
  SampleOutput sample(const ModelHandle& handle, const SampleRequest& request) override;
  bool supports_attention() const override { return true; }

  /// Attention layers: (resolution divisor, heads) pairs.
  static constexpr int kLayers = 2;
  static constexpr int kHeads = 2;
};

/// Runs an external program: `argv... <request.json>`. The request carries
/// {"op": "fine_tune" | "sample", ...}; the program writes its outputs under
/// the directories named in the request and a `result.json` next to them.
class CommandBackend : public BackendAdapter {
 public:
  CommandBackend(std::string name, std::vector<std::string> argv, int timeout_s = 0)
      : name_(std::move(name)), argv_(std::move(argv)), timeout_s_(timeout_s) {}
  std::string name() const override { return name_; }
  nlohmann::json fine_tune(const FineTuneRequest& request) override;
  SampleOutput sample(const ModelHandle& handle, const SampleRequest& request) override;

 private:
  nlohmann::json run(const nlohmann::json& request, const std::filesystem::path& work_dir);

  std::string name_;
  std::vector<std::string> argv_;
  int timeout_s_;
};

/// {"adapter": "tiny"} or {"adapter": "command", "argv": [...], "name": ...}.
std::unique_ptr<BackendAdapter> make_backend(const nlohmann::json& config);

/// Replaces the identifier placeholder with the rare token (exactly once).
std::string substitute_identifier(std::string_view text, std::string_view identifier_token,
                                  std::string_view rare_token);

struct AttentionRun {
  corpus::GeneratedSet generated;
  std::vector<std::vector<attn::AttentionRecord>> records;  // per image
  int token_index = 0;
  std::string token;
};

/// Front end over a backend: validates inputs, performs the rare-token
/// substitution, writes handle metadata, and appends every backend call to
/// a JSON Lines log {timestamp, op, args_hash, description_texts}.
class Harness {
 public:
  Harness(BackendAdapter& backend, std::filesystem::path call_log);

  /// `descriptions` holds one entry per reference image or a single shared one.
  ModelHandle fine_tune(const corpus::ReferenceSet& refs, std::span<const describe::TrainDescription> descriptions,
                        const TuneConfig& cfg, const std::filesystem::path& handle_dir,
                        const std::optional<describe::Target>& target = std::nullopt);

  corpus::GeneratedSet sample(const ModelHandle& handle, std::string_view generation_prompt,
                              const SampleConfig& cfg);

  /// Samples with attention capture and records the maps of `token`
  /// (the identifier placeholder is accepted and mapped to the rare token).
  AttentionRun sample_with_attention(const ModelHandle& handle, std::string_view generation_prompt,
                                     const SampleConfig& cfg, std::string_view token);

 private:
  void log_call(std::string_view op, const std::string& args_hash, const std::vector<std::string>& texts);
  std::string prepare_prompt(const ModelHandle& handle, std::string_view generation_prompt) const;

  BackendAdapter& backend_;
  std::filesystem::path call_log_;
  std::mutex mutex_;
};

}  // namespace sid::tune
