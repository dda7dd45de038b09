#include "sid/tune.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>

#include "sid/error.hpp"
#include "sid/hash.hpp"
#include "sid/image_io.hpp"
#include "sid/process.hpp"

namespace sid::tune {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::pair<Method, std::string_view> kMethodNames[] = {
    {Method::kDreambooth, "dreambooth"},
    {Method::kCustomDiffusion, "custom_diffusion"},
    {Method::kSvdiff, "svdiff"},
    {Method::kTextualInversion, "textual_inversion"},
};

json read_json_file(const fs::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

std::string_view to_string(Method m) {
  for (const auto& [method, name] : kMethodNames) {
    if (method == m) return name;
  }
  return "unknown";
}

Method parse_method(std::string_view text) {
  for (const auto& [method, name] : kMethodNames) {
    if (name == text) return method;
  }
  throw InvalidArgument("unknown tuning method: " + std::string(text));
}

TuneConfig TuneConfig::defaults_for(Method method) {
  TuneConfig cfg;
  cfg.method = method;
  if (method == Method::kDreambooth) {
    cfg.learning_rate = 1e-6;
    cfg.iterations = 1000;
    cfg.batch_size = 1;
    cfg.train_text_encoder = true;
  }
  return cfg;
}

void TuneConfig::validate() const {
  if (iterations < 1) throw InvalidArgument("iterations must be >= 1");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (learning_rate && !(*learning_rate > 0.0)) throw InvalidArgument("learning_rate must be > 0");
  if (base_model_id.empty()) throw InvalidArgument("base_model_id is empty");
  if (rare_token.empty() || rare_token.find(' ') != std::string::npos) {
    throw InvalidArgument("rare_token must be a single non-empty word");
  }
  if (prior_preservation && class_prompt.empty()) {
    throw InvalidArgument("prior_preservation requires class_prompt");
  }
}

json to_json(const TuneConfig& cfg) {
  json doc = {{"method", to_string(cfg.method)},
              {"base_model_id", cfg.base_model_id},
              {"learning_rate", cfg.learning_rate ? json(*cfg.learning_rate) : json(nullptr)},
              {"iterations", cfg.iterations},
              {"batch_size", cfg.batch_size},
              {"train_text_encoder", cfg.train_text_encoder},
              {"prior_preservation", cfg.prior_preservation},
              {"class_prompt", cfg.class_prompt},
              {"seed", cfg.seed},
              {"rare_token", cfg.rare_token},
              {"extra", cfg.extra}};
  return doc;
}

TuneConfig tune_config_from_json(const json& doc) {
  const Method method = parse_method(doc.value("method", std::string("dreambooth")));
  TuneConfig cfg = TuneConfig::defaults_for(method);
  cfg.base_model_id = doc.value("base_model_id", cfg.base_model_id);
  if (doc.contains("learning_rate")) {
    if (doc["learning_rate"].is_null()) {
      cfg.learning_rate.reset();
    } else {
      cfg.learning_rate = doc["learning_rate"].get<double>();
    }
  }
  cfg.iterations = doc.value("iterations", cfg.iterations);
  cfg.batch_size = doc.value("batch_size", cfg.batch_size);
  cfg.train_text_encoder = doc.value("train_text_encoder", cfg.train_text_encoder);
  cfg.prior_preservation = doc.value("prior_preservation", cfg.prior_preservation);
  cfg.class_prompt = doc.value("class_prompt", cfg.class_prompt);
  cfg.seed = doc.value("seed", cfg.seed);
  cfg.rare_token = doc.value("rare_token", cfg.rare_token);
  if (doc.contains("extra")) cfg.extra = doc["extra"];
  cfg.validate();
  return cfg;
}

std::vector<std::int64_t> SampleConfig::resolved_seeds() const {
  if (!seeds.empty()) return seeds;
  std::vector<std::int64_t> out(static_cast<std::size_t>(std::max(images_per_prompt, 0)));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = base_seed + static_cast<std::int64_t>(i);
  return out;
}

void SampleConfig::validate() const {
  if (steps < 1) throw InvalidArgument("steps must be >= 1");
  if (images_per_prompt < 1) throw InvalidArgument("images_per_prompt must be >= 1");
  if (!seeds.empty() && static_cast<int>(seeds.size()) != images_per_prompt) {
    throw InvalidArgument("seeds must list one seed per image");
  }
  if (height < 8 || width < 8) throw InvalidArgument("image size must be at least 8x8");
  if (!(guidance_scale >= 0.0)) throw InvalidArgument("guidance_scale must be >= 0");
}

json to_json(const SampleConfig& cfg) {
  return {{"sampler", cfg.sampler},
          {"steps", cfg.steps},
          {"guidance_scale", cfg.guidance_scale},
          {"images_per_prompt", cfg.images_per_prompt},
          {"seeds", cfg.resolved_seeds()},
          {"height", cfg.height},
          {"width", cfg.width}};
}

SampleConfig sample_config_from_json(const json& doc) {
  SampleConfig cfg;
  cfg.sampler = doc.value("sampler", cfg.sampler);
  cfg.steps = doc.value("steps", cfg.steps);
  cfg.guidance_scale = doc.value("guidance_scale", cfg.guidance_scale);
  cfg.images_per_prompt = doc.value("images_per_prompt", cfg.images_per_prompt);
  cfg.base_seed = doc.value("base_seed", cfg.base_seed);
  if (doc.contains("seeds")) cfg.seeds = doc["seeds"].get<std::vector<std::int64_t>>();
  cfg.height = doc.value("height", cfg.height);
  cfg.width = doc.value("width", cfg.width);
  cfg.validate();
  return cfg;
}

ModelHandle ModelHandle::load(const fs::path& dir) {
  const fs::path meta = dir / "metadata.json";
  if (!fs::exists(meta)) throw IoError("not a model handle: " + dir.string());
  return {dir, read_json_file(meta)};
}

std::string substitute_identifier(std::string_view text, std::string_view identifier_token,
                                  std::string_view rare_token) {
  corpus::check_generation_prompt(text, identifier_token);
  const std::size_t pos = text.find(identifier_token);
  std::string out(text.substr(0, pos));
  out += rare_token;
  out += text.substr(pos + identifier_token.size());
  return out;
}

// CommandBackend -----------------------------------------------------------

json CommandBackend::run(const json& request, const fs::path& work_dir) {
  if (argv_.empty()) throw AdapterError(name_ + ": empty argv");
  fs::create_directories(work_dir);
  const fs::path request_path = work_dir / "request.json";
  const fs::path result_path = work_dir / "result.json";
  fs::remove(result_path);
  write_text_file(request_path, request.dump(2) + "\n");
  auto argv = argv_;
  argv.push_back(request_path.string());
  const auto res = run_process(argv, {}, std::chrono::seconds{timeout_s_});
  if (res.timed_out) throw AdapterError(name_ + ": timed out");
  if (res.exit_code != 0) {
    throw AdapterError(name_ + ": exit code " + std::to_string(res.exit_code) + ": " + res.err);
  }
  if (!fs::exists(result_path)) throw AdapterError(name_ + ": no result.json written");
  return read_json_file(result_path);
}

json CommandBackend::fine_tune(const FineTuneRequest& request) {
  const fs::path inputs = request.handle_dir / "inputs";
  json images = json::array();
  for (std::size_t i = 0; i < request.images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%03zu.png", i);
    write_png(inputs / name, request.images[i]);
    images.push_back((inputs / name).string());
  }
  const json req = {{"op", "fine_tune"},
                    {"handle_dir", request.handle_dir.string()},
                    {"images", images},
                    {"texts", request.texts},
                    {"config", to_json(request.config)}};
  return run(req, request.handle_dir);
}

SampleOutput CommandBackend::sample(const ModelHandle& handle, const SampleRequest& request) {
  const std::string key = sha256_hex(request.prompt + "\n" + to_json(request.config).dump()).substr(0, 16);
  const fs::path work = handle.dir / "samples" / key;
  const json req = {{"op", "sample"},
                    {"handle_dir", handle.dir.string()},
                    {"metadata", handle.metadata},
                    {"prompt", request.prompt},
                    {"config", to_json(request.config)},
                    {"output_dir", work.string()}};
  const json result = run(req, work);
  SampleOutput out;
  for (const auto& file : result.at("files")) {
    fs::path p = file.get<std::string>();
    if (p.is_relative()) p = work / p;
    out.images.push_back(read_image(p));
  }
  out.seeds = result.value("seeds", request.config.resolved_seeds());
  out.tokens = result.value("tokens", whitespace_tokens(request.prompt));
  if (out.images.size() != out.seeds.size()) throw AdapterError(name_ + ": image/seed count mismatch");
  return out;
}

std::unique_ptr<BackendAdapter> make_backend(const json& config) {
  const std::string adapter = config.value("adapter", std::string("tiny"));
  if (adapter == "tiny") return std::make_unique<TinyBackend>();
  if (adapter == "command") {
    if (!config.contains("argv")) throw InvalidArgument("command backend needs argv");
    return std::make_unique<CommandBackend>(config.value("name", std::string("command")),
                                            config.at("argv").get<std::vector<std::string>>(),
                                            config.value("timeout_s", 0));
  }
  throw InvalidArgument("unknown backend adapter: " + adapter);
}

// Harness ------------------------------------------------------------------

Harness::Harness(BackendAdapter& backend, fs::path call_log) : backend_(backend), call_log_(std::move(call_log)) {}

void Harness::log_call(std::string_view op, const std::string& args_hash, const std::vector<std::string>& texts) {
  if (call_log_.empty()) return;
  const json line = {{"timestamp", utc_timestamp()},
                     {"op", op},
                     {"backend", backend_.name()},
                     {"args_hash", args_hash},
                     {"description_texts", texts}};
  if (call_log_.has_parent_path()) fs::create_directories(call_log_.parent_path());
  std::ofstream out(call_log_, std::ios::app);
  if (!out) throw IoError("cannot append to " + call_log_.string());
  out << line.dump() << "\n";
}

ModelHandle Harness::fine_tune(const corpus::ReferenceSet& refs,
                               std::span<const describe::TrainDescription> descriptions, const TuneConfig& cfg,
                               const fs::path& handle_dir, const std::optional<describe::Target>& target) {
  cfg.validate();
  if (refs.size() == 0) throw InvalidArgument("empty reference set");
  if (descriptions.size() != refs.size() && descriptions.size() != 1) {
    throw InvalidArgument("count mismatch: " + std::to_string(refs.size()) + " references, " +
                          std::to_string(descriptions.size()) + " descriptions");
  }
  const describe::Target tgt = target ? *target : describe::Target::object(refs.class_name, refs.identifier_token);
  std::vector<std::string> texts;
  texts.reserve(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& d = descriptions.size() == 1 ? descriptions[0] : descriptions[i];
    const auto checks = describe::validate_description(d, tgt);
    if (!checks.ok()) {
      std::string why;
      for (const auto& f : checks.failures()) why += (why.empty() ? "" : ", ") + f;
      throw InvalidArgument("invalid description for image " + std::to_string(i) + ": " + why);
    }
    texts.push_back(substitute_identifier(d.text, tgt.identifier_token, cfg.rare_token));
  }

  Sha256 args;
  args.update_field("fine_tune");
  args.update_field(to_json(cfg).dump());
  for (const auto& img : refs.images) args.update(img);
  for (const auto& t : texts) args.update_field(t);
  const std::string args_hash = args.hex_digest();

  std::lock_guard lock(mutex_);
  fs::create_directories(handle_dir);
  FineTuneRequest request{refs.images, texts, cfg, handle_dir};
  json backend_meta;
  try {
    backend_meta = backend_.fine_tune(request);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw AdapterError(backend_.name() + ": " + e.what());
  }
  log_call("fine_tune", args_hash, texts);

  json cfg_json = to_json(cfg);
  cfg_json.erase("seed");
  const json metadata = {{"backend", backend_.name()},
                         {"base_model_id", cfg.base_model_id},
                         {"cfg", cfg_json},
                         {"seed", cfg.seed},
                         {"subject_id", refs.subject_id},
                         {"class_name", refs.class_name},
                         {"identifier_token", tgt.identifier_token},
                         {"rare_token", cfg.rare_token},
                         {"references_hash", refs.hash()},
                         {"args_hash", args_hash},
                         {"backend_metadata", backend_meta.is_null() ? json::object() : backend_meta}};
  write_text_file(handle_dir / "metadata.json", metadata.dump(2) + "\n");
  return {handle_dir, metadata};
}

std::string Harness::prepare_prompt(const ModelHandle& handle, std::string_view generation_prompt) const {
  const std::string identifier =
      handle.metadata.value("identifier_token", std::string(corpus::kIdentifierPlaceholder));
  const std::string rare = handle.metadata.value("rare_token", std::string("sks"));
  return substitute_identifier(generation_prompt, identifier, rare);
}

corpus::GeneratedSet Harness::sample(const ModelHandle& handle, std::string_view generation_prompt,
                                     const SampleConfig& cfg) {
  cfg.validate();
  const std::string prompt = prepare_prompt(handle, generation_prompt);
  const std::string args_hash =
      sha256_hex(std::string("sample\n") + handle.metadata.value("args_hash", std::string()) + "\n" + prompt +
                 "\n" + to_json(cfg).dump());
  std::lock_guard lock(mutex_);
  SampleOutput out = backend_.sample(handle, {prompt, cfg, false});
  log_call("sample", args_hash, {prompt});
  if (static_cast<int>(out.images.size()) != cfg.images_per_prompt) {
    throw AdapterError(backend_.name() + ": expected " + std::to_string(cfg.images_per_prompt) + " images, got " +
                       std::to_string(out.images.size()));
  }
  corpus::GeneratedSet set;
  set.images = std::move(out.images);
  set.seeds = std::move(out.seeds);
  set.generation_prompt = std::string(generation_prompt);
  set.run_id = args_hash.substr(0, 16);
  return set;
}

AttentionRun Harness::sample_with_attention(const ModelHandle& handle, std::string_view generation_prompt,
                                            const SampleConfig& cfg, std::string_view token) {
  cfg.validate();
  if (!backend_.supports_attention()) throw AdapterError(backend_.name() + ": backend does not expose attention hooks");
  const std::string prompt = prepare_prompt(handle, generation_prompt);
  const std::string identifier =
      handle.metadata.value("identifier_token", std::string(corpus::kIdentifierPlaceholder));
  const std::string wanted = token == identifier ? handle.metadata.value("rare_token", std::string("sks"))
                                                 : std::string(token);
  const std::string args_hash =
      sha256_hex(std::string("sample_attention\n") + handle.metadata.value("args_hash", std::string()) + "\n" +
                 prompt + "\n" + to_json(cfg).dump());

  std::lock_guard lock(mutex_);
  SampleOutput out = backend_.sample(handle, {prompt, cfg, true});
  log_call("sample_attention", args_hash, {prompt});

  AttentionRun run;
  run.token = std::string(token);
  const auto it = std::find(out.tokens.begin(), out.tokens.end(), wanted);
  if (it == out.tokens.end()) throw InvalidArgument("token not in prompt: " + std::string(token));
  run.token_index = static_cast<int>(it - out.tokens.begin());
  if (out.attention.size() != out.images.size()) throw AdapterError(backend_.name() + ": attention capture missing");
  for (const auto& source : out.attention) run.records.push_back(attn::record_attention(*source, run.token_index));
  run.generated.images = std::move(out.images);
  run.generated.seeds = std::move(out.seeds);
  run.generated.generation_prompt = std::string(generation_prompt);
  run.generated.run_id = args_hash.substr(0, 16);
  return run;
}

}  // namespace sid::tune
