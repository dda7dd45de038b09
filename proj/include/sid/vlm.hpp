#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include <json.hpp>

#include "sid/image.hpp"

namespace sid::describe {

enum class TemplateId { kObject, kStyle, kObjectWithExpression };

/// Rendered request sent to a vision-language model.
struct VlmInstruction {
  TemplateId template_id = TemplateId::kObject;
  std::string rendered_text;
  std::string subject_class;
  /// Short case tag ("case2", "case3", "case4"); lets scripted clients answer per case.
  std::string case_tag;
};

/// Instruction-following VLM: send(image, instruction) -> text.
class VlmClient {
 public:
  virtual ~VlmClient() = default;
  virtual std::string name() const = 0;
  virtual std::string send(const Image8& image, const VlmInstruction& instruction) = 0;
};

struct VlmConfig {
  std::string provider;
  std::string model;
  std::string api_key_env;
  int max_retries = 3;
  int timeout_s = 60;
  /// Provider-specific settings (base_url, script path, command argv, min_interval_ms).
  nlohmann::json options = nlohmann::json::object();
};

VlmConfig vlm_config_from_json(const nlohmann::json& doc);

using VlmFactory = std::function<std::unique_ptr<VlmClient>(const VlmConfig&)>;

/// Built-in providers: "scripted", "openai", "command".
void register_vlm_provider(const std::string& provider, VlmFactory factory);
std::unique_ptr<VlmClient> make_vlm_client(const VlmConfig& config);

/// Canned responses for tests and offline runs.
///
/// Responses are looked up by case tag (falling back to "default"); the k-th
/// request for the same (image, instruction) pair returns entry k of the list,
/// clamped to the last one. `{class_name}` is substituted with the subject class.
class ScriptedVlmClient : public VlmClient {
 public:
  ScriptedVlmClient(std::string name, std::map<std::string, std::vector<std::string>> responses);
  static std::unique_ptr<ScriptedVlmClient> from_json(const nlohmann::json& script,
                                                       std::string name = "scripted");

  std::string name() const override { return name_; }
  std::string send(const Image8& image, const VlmInstruction& instruction) override;
  int calls() const;

 private:
  std::string name_;
  std::map<std::string, std::vector<std::string>> responses_;
  std::map<std::string, int> attempts_;
  int calls_ = 0;
  mutable std::mutex mutex_;
};

/// OpenAI-compatible chat-completions endpoint with an inline PNG data URL.
/// The API key is read from the environment variable named in the config.
class OpenAiVlmClient : public VlmClient {
 public:
  explicit OpenAiVlmClient(VlmConfig config);
  std::string name() const override { return config_.provider + ":" + config_.model; }
  std::string send(const Image8& image, const VlmInstruction& instruction) override;

  /// Request body, exposed for tests.
  nlohmann::json build_request(const Image8& image, const VlmInstruction& instruction) const;
  static std::string parse_response(const std::string& body);

 private:
  VlmConfig config_;
  std::mutex mutex_;
  std::chrono::steady_clock::time_point last_call_{};
};

/// Runs an external command per request. stdin receives
/// {"instruction", "subject_class", "image_png_base64"}; stdout is the reply text.
class CommandVlmClient : public VlmClient {
 public:
  explicit CommandVlmClient(VlmConfig config);
  std::string name() const override { return config_.provider + ":" + config_.model; }
  std::string send(const Image8& image, const VlmInstruction& instruction) override;

 private:
  VlmConfig config_;
  std::mutex mutex_;
};

/// Persists replies under `dir`, keyed by client name, image, instruction and
/// attempt number, so reruns reproduce the same retry sequence.
class CachingVlmClient : public VlmClient {
 public:
  CachingVlmClient(std::unique_ptr<VlmClient> inner, std::filesystem::path dir);
  std::string name() const override { return inner_->name(); }
  std::string send(const Image8& image, const VlmInstruction& instruction) override;

 private:
  std::unique_ptr<VlmClient> inner_;
  std::filesystem::path dir_;
  std::map<std::string, int> attempts_;
  std::mutex mutex_;
};

}  // namespace sid::describe
