#include "sid/vlm.hpp"

#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "sid/error.hpp"
#include "sid/hash.hpp"
#include "sid/image_io.hpp"
#include "sid/process.hpp"

namespace sid::describe {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::map<std::string, VlmFactory>& registry() {
  static std::map<std::string, VlmFactory> providers = {
      {"scripted",
       [](const VlmConfig& cfg) -> std::unique_ptr<VlmClient> {
         json script;
         if (cfg.options.contains("script")) {
           script = json::parse(read_text_file(cfg.options.at("script").get<std::string>()));
         } else if (cfg.options.contains("responses")) {
           script = cfg.options;
         } else {
           throw InvalidArgument("scripted VLM needs options.script or options.responses");
         }
         return ScriptedVlmClient::from_json(script, cfg.model.empty() ? "scripted" : cfg.model);
       }},
      {"openai", [](const VlmConfig& cfg) { return std::make_unique<OpenAiVlmClient>(cfg); }},
      {"command", [](const VlmConfig& cfg) { return std::make_unique<CommandVlmClient>(cfg); }},
  };
  return providers;
}

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

std::string substitute_class(std::string text, const std::string& class_name) {
  static const std::string kKey = "{class_name}";
  for (auto pos = text.find(kKey); pos != std::string::npos; pos = text.find(kKey, pos)) {
    text.replace(pos, kKey.size(), class_name);
    pos += class_name.size();
  }
  return text;
}

std::string request_key(const Image8& image, const VlmInstruction& instruction) {
  return Sha256().update(image).update_field(instruction.rendered_text).hex_digest();
}

}  // namespace

VlmConfig vlm_config_from_json(const json& doc) {
  VlmConfig cfg;
  cfg.provider = doc.value("provider", std::string{});
  cfg.model = doc.value("model", std::string{});
  cfg.api_key_env = doc.value("api_key_env", std::string{});
  cfg.max_retries = doc.value("max_retries", 3);
  cfg.timeout_s = doc.value("timeout_s", 60);
  if (doc.contains("options")) cfg.options = doc.at("options");
  if (doc.contains("api_key")) {
    throw InvalidArgument("API keys must come from the environment (api_key_env), not config");
  }
  return cfg;
}

void register_vlm_provider(const std::string& provider, VlmFactory factory) {
  std::lock_guard lock(registry_mutex());
  registry()[provider] = std::move(factory);
}

std::unique_ptr<VlmClient> make_vlm_client(const VlmConfig& config) {
  VlmFactory factory;
  {
    std::lock_guard lock(registry_mutex());
    auto it = registry().find(config.provider);
    if (it == registry().end()) throw InvalidArgument("unknown VLM provider: " + config.provider);
    factory = it->second;
  }
  return factory(config);
}

// ---------------------------------------------------------------------------

ScriptedVlmClient::ScriptedVlmClient(std::string name,
                                     std::map<std::string, std::vector<std::string>> responses)
    : name_(std::move(name)), responses_(std::move(responses)) {}

std::unique_ptr<ScriptedVlmClient> ScriptedVlmClient::from_json(const json& script, std::string name) {
  std::map<std::string, std::vector<std::string>> responses;
  for (const auto& [key, value] : script.at("responses").items()) {
    responses[key] = value.is_array() ? value.get<std::vector<std::string>>()
                                      : std::vector<std::string>{value.get<std::string>()};
  }
  return std::make_unique<ScriptedVlmClient>(std::move(name), std::move(responses));
}

std::string ScriptedVlmClient::send(const Image8& image, const VlmInstruction& instruction) {
  const std::string key = request_key(image, instruction);
  std::lock_guard lock(mutex_);
  ++calls_;
  auto it = responses_.find(instruction.case_tag);
  if (it == responses_.end()) it = responses_.find("default");
  if (it == responses_.end() || it->second.empty()) {
    throw AdapterError("scripted VLM has no response for " + instruction.case_tag);
  }
  const int attempt = attempts_[key]++;
  const auto& list = it->second;
  const auto& reply = list[std::min<std::size_t>(static_cast<std::size_t>(attempt), list.size() - 1)];
  return substitute_class(reply, instruction.subject_class);
}

int ScriptedVlmClient::calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

// ---------------------------------------------------------------------------

OpenAiVlmClient::OpenAiVlmClient(VlmConfig config) : config_(std::move(config)) {
  if (config_.model.empty()) throw InvalidArgument("openai VLM: model is required");
}

json OpenAiVlmClient::build_request(const Image8& image, const VlmInstruction& instruction) const {
  const std::string url = "data:image/png;base64," + base64_encode(encode_png(to_rgb(image)));
  json content = json::array({
      {{"type", "text"}, {"text", instruction.rendered_text}},
      {{"type", "image_url"}, {"image_url", {{"url", url}}}},
  });
  return {{"model", config_.model},
          {"temperature", config_.options.value("temperature", 0.0)},
          {"messages", json::array({{{"role", "user"}, {"content", content}}})}};
}

std::string OpenAiVlmClient::parse_response(const std::string& body) {
  json doc;
  try {
    doc = json::parse(body);
    return doc.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw AdapterError(std::string("malformed VLM response: ") + e.what());
  }
}

std::string OpenAiVlmClient::send(const Image8& image, const VlmInstruction& instruction) {
  std::lock_guard lock(mutex_);
  const auto min_interval = std::chrono::milliseconds(config_.options.value("min_interval_ms", 0));
  const auto next = last_call_ + min_interval;
  if (std::chrono::steady_clock::now() < next) std::this_thread::sleep_until(next);

  const std::string base_url = config_.options.value("base_url", std::string("https://api.openai.com"));
  const std::string path = config_.options.value("path", std::string("/v1/chat/completions"));
  httplib::Client client(base_url);
  client.set_connection_timeout(config_.timeout_s);
  client.set_read_timeout(config_.timeout_s);
  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr) throw AdapterError("environment variable " + config_.api_key_env + " is not set");
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const auto res = client.Post(path, headers, build_request(image, instruction).dump(), "application/json");
  last_call_ = std::chrono::steady_clock::now();
  if (!res) throw AdapterError("VLM transport failure: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw AdapterError("VLM HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  }
  return parse_response(res->body);
}

// ---------------------------------------------------------------------------

CommandVlmClient::CommandVlmClient(VlmConfig config) : config_(std::move(config)) {
  if (!config_.options.contains("argv")) throw InvalidArgument("command VLM: options.argv is required");
}

std::string CommandVlmClient::send(const Image8& image, const VlmInstruction& instruction) {
  std::lock_guard lock(mutex_);
  const auto argv = config_.options.at("argv").get<std::vector<std::string>>();
  const json request = {{"instruction", instruction.rendered_text},
                        {"subject_class", instruction.subject_class},
                        {"model", config_.model},
                        {"image_png_base64", base64_encode(encode_png(to_rgb(image)))}};
  const auto result = run_process(argv, request.dump(), std::chrono::seconds(config_.timeout_s));
  if (result.timed_out) throw AdapterError("VLM command timed out");
  if (result.exit_code != 0) {
    throw AdapterError("VLM command exited " + std::to_string(result.exit_code) + ": " + result.err);
  }
  std::string text = result.out;
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  return text;
}

// ---------------------------------------------------------------------------

CachingVlmClient::CachingVlmClient(std::unique_ptr<VlmClient> inner, fs::path dir)
    : inner_(std::move(inner)), dir_(std::move(dir)) {}

std::string CachingVlmClient::send(const Image8& image, const VlmInstruction& instruction) {
  std::string key;
  {
    std::lock_guard lock(mutex_);
    const std::string base = Sha256()
                                 .update_field(inner_->name())
                                 .update_field(request_key(image, instruction))
                                 .hex_digest();
    const int attempt = attempts_[base]++;
    key = sha256_hex(base + "#" + std::to_string(attempt));
  }
  const fs::path file = dir_ / (key + ".txt");
  if (fs::exists(file)) return read_text_file(file);
  std::string reply = inner_->send(image, instruction);
  write_text_file(file, reply);
  return reply;
}

}  // namespace sid::describe
