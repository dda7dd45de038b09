#include "sid/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "sid/attnmap.hpp"
#include "sid/embed.hpp"
#include "sid/hash.hpp"
#include "sid/image_io.hpp"
#include "sid/metrics.hpp"
#include "sid/plot.hpp"
#include "sid/segment.hpp"
#include "sid/vlm.hpp"

namespace sid::pipeline {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string indexed(std::string_view prefix, int index, std::string_view suffix = {}) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%s%0*d", std::string(prefix).c_str(), prefix.empty() ? 3 : 2, index);
  return std::string(buf) + std::string(suffix);
}

json section(const json& doc, const char* key) {
  if (!doc.contains(key) || doc[key].is_null()) return json::object();
  if (!doc[key].is_object()) throw UsageError(std::string("config key '") + key + "' must be an object");
  return doc[key];
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

class LockedVlm : public describe::VlmClient {
 public:
  explicit LockedVlm(std::unique_ptr<describe::VlmClient> inner) : inner_(std::move(inner)) {}
  std::string name() const override { return inner_->name(); }
  std::string send(const Image8& image, const describe::VlmInstruction& instruction) override {
    std::lock_guard lock(mutex_);
    return inner_->send(image, instruction);
  }

 private:
  std::unique_ptr<describe::VlmClient> inner_;
  std::mutex mutex_;
};

class LockedEncoder : public embed::Encoder {
 public:
  explicit LockedEncoder(std::unique_ptr<embed::Encoder> inner) : inner_(std::move(inner)) {}
  std::string id() const override { return inner_->id(); }
  embed::RawVector encode_image(const Image8& image) override {
    std::lock_guard lock(mutex_);
    return inner_->encode_image(image);
  }
  embed::RawVector encode_text(std::string_view text) override {
    std::lock_guard lock(mutex_);
    return inner_->encode_text(text);
  }
  std::vector<embed::RawVector> encode_images(std::span<const Image8> images) override {
    std::lock_guard lock(mutex_);
    return inner_->encode_images(images);
  }
  std::vector<embed::RawVector> encode_texts(std::span<const std::string> texts) override {
    std::lock_guard lock(mutex_);
    return inner_->encode_texts(texts);
  }

 private:
  std::unique_ptr<embed::Encoder> inner_;
  std::mutex mutex_;
};

struct Shared {
  std::mutex mutex;
  Outcome outcome;

  void ok(int n = 1) {
    std::lock_guard lock(mutex);
    outcome.succeeded += n;
  }
  void fail(const std::string& what, int n = 1) {
    std::lock_guard lock(mutex);
    outcome.failed += n;
    outcome.errors.push_back(what);
  }
  void missing(json entry) {
    std::lock_guard lock(mutex);
    outcome.missing.push_back(std::move(entry));
  }
  Outcome finish() {
    std::sort(outcome.errors.begin(), outcome.errors.end());
    std::vector<json> items(outcome.missing.begin(), outcome.missing.end());
    std::sort(items.begin(), items.end(), [](const json& a, const json& b) { return a.dump() < b.dump(); });
    outcome.missing = items;
    return std::move(outcome);
  }
};

corpus::RunManifest checked_manifest(const Config& cfg) {
  auto manifest = cfg.manifest();
  const auto report = corpus::validate_manifest(manifest);
  if (!report.ok()) {
    std::string what = "invalid manifest:";
    for (const auto& v : report.violations) what += " " + v + ";";
    throw UsageError(what);
  }
  return manifest;
}

describe::Target target_for(const Config& cfg, const corpus::SubjectEntry& subject) {
  const json style = section(cfg.doc, "style");
  if (style.contains(subject.id)) {
    return describe::Target::style(subject.identifier_token,
                                   describe::parse_medium(style[subject.id].get<std::string>()));
  }
  return describe::Target::object(subject.class_name, subject.identifier_token);
}

tune::SampleConfig sample_config(const Config& cfg) { return tune::sample_config_from_json(section(cfg.doc, "sample")); }

std::vector<std::string> list_runs(const Config& cfg, const fs::path& dir) {
  if (cfg.doc.contains("runs")) return cfg.doc["runs"].get<std::vector<std::string>>();
  std::vector<std::string> runs;
  if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_directory()) runs.push_back(e.path().filename().string());
    }
  }
  std::sort(runs.begin(), runs.end());
  return runs;
}

void write_aggregate(const fs::path& reports_dir, const std::vector<AggregateRow>& rows) {
  write_text_file(reports_dir / "aggregate.csv", aggregate_to_csv(rows));

  // Per-report points, one series per method.
  std::vector<std::string> methods;
  std::map<std::string, std::vector<std::array<double, 3>>> points;
  for (const auto& row : rows) methods.push_back(row.method);
  for (const auto& method : methods) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(reports_dir / method)) {
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const json doc = json::parse(read_text_file(f));
      points[method].push_back({doc.at("sa").get<double>(), doc.at("nsd").get<double>(), doc.at("ta").get<double>()});
    }
  }

  constexpr std::array<const char*, 3> kNames = {"sa", "nsd", "ta"};
  constexpr std::array<std::pair<int, int>, 3> kPairs = {{{0, 1}, {0, 2}, {1, 2}}};
  json legend = {{"series", json::array()}, {"plots", json::array()}};
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const auto color = plot::series_color(i);
    legend["series"].push_back({{"method", methods[i]}, {"rgb", {color[0], color[1], color[2]}}});
  }
  for (const auto& [xi, yi] : kPairs) {
    std::vector<plot::Series> series;
    for (const auto& method : methods) {
      plot::Series s{method, {}};
      for (const auto& p : points[method]) s.points.emplace_back(p[xi], p[yi]);
      series.push_back(std::move(s));
    }
    const std::string file = std::string(kNames[xi]) + "_vs_" + kNames[yi] + ".png";
    write_png(reports_dir / "plots" / file, plot::scatter(series));
    legend["plots"].push_back({{"file", file}, {"x", kNames[xi]}, {"y", kNames[yi]}});
  }
  write_text_file(reports_dir / "plots" / "legend.json", legend.dump(2) + "\n");
}

}  // namespace

// Config -------------------------------------------------------------------

Config Config::load(const fs::path& path) {
  Config cfg;
  try {
    cfg.doc = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw UsageError(e.what());
  }
  if (!cfg.doc.is_object()) throw UsageError(path.string() + ": config must be a JSON object");
  if (cfg.doc.contains("api_key")) throw UsageError("API keys belong in environment variables, not the config");
  cfg.base_dir = path.parent_path();
  return cfg;
}

void Config::set(std::string_view dotted_key, std::string_view value) {
  if (dotted_key.empty()) throw UsageError("empty config key");
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted_key.find('.', start);
    const std::string part(dotted_key.substr(start, dot == std::string_view::npos ? dotted_key.npos : dot - start));
    if (part.empty()) throw UsageError("bad config key: " + std::string(dotted_key));
    if (!node->is_object()) *node = json::object();
    node = &(*node)[part];
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  try {
    *node = json::parse(value);
  } catch (const json::exception&) {
    *node = std::string(value);
  }
}

fs::path Config::resolve(const fs::path& p) const {
  if (p.empty() || p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

corpus::RunManifest Config::manifest() const {
  if (!doc.contains("manifest")) throw UsageError("config has no 'manifest'");
  try {
    return corpus::load_manifest(resolve(doc["manifest"].get<std::string>()));
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

fs::path Config::output_dir() const {
  if (doc.contains("output_dir")) return resolve(doc["output_dir"].get<std::string>());
  const auto m = manifest();
  if (!m.output_dir.empty()) return m.output_dir;
  return resolve("out");
}

describe::DescriptionCase Config::description_case() const {
  try {
    return describe::parse_case(doc.value("case", std::string("case3")));
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
}

std::string Config::run_label() const {
  if (doc.contains("run")) return doc["run"].get<std::string>();
  const json t = section(doc, "tune");
  return t.value("method", std::string("dreambooth")) + "-" + std::string(describe::case_tag(description_case()));
}

int Config::jobs() const {
  const int j = doc.value("jobs", 1);
  if (j < 1) throw UsageError("jobs must be >= 1");
  return j;
}

// Outcome / Layout -----------------------------------------------------------

int Outcome::exit_code() const {
  if (failed == 0) return 0;
  if (succeeded == 0) return 3;
  return 2;
}

void Outcome::merge(const Outcome& other) {
  succeeded += other.succeeded;
  failed += other.failed;
  errors.insert(errors.end(), other.errors.begin(), other.errors.end());
  for (const auto& m : other.missing) missing.push_back(m);
}

fs::path Layout::descriptions(const std::string& subject, describe::DescriptionCase c) const {
  return root / "descriptions" / subject / (std::string(describe::case_tag(c)) + ".jsonl");
}
fs::path Layout::description_summary(const std::string& subject, describe::DescriptionCase c) const {
  return root / "descriptions" / subject / (std::string(describe::case_tag(c)) + ".summary.json");
}
fs::path Layout::masks(const std::string& subject) const { return root / "masks" / subject; }
fs::path Layout::mask_stem(const std::string& subject, int index) const { return masks(subject) / indexed("", index); }
fs::path Layout::handle(const std::string& run, const std::string& subject) const {
  return root / "handles" / run / subject;
}
fs::path Layout::call_log(const std::string& run, const std::string& subject) const {
  return root / "logs" / run / (subject + ".calls.jsonl");
}
fs::path Layout::generated(const std::string& run, const std::string& subject, int prompt_index) const {
  return root / "generated" / run / subject / indexed("p", prompt_index);
}
fs::path Layout::report_stem(const std::string& run, const std::string& subject, int prompt_index) const {
  return reports() / run / subject / indexed("p", prompt_index);
}
fs::path Layout::reports() const { return root / "reports"; }
fs::path Layout::attn(const std::string& run, const std::string& subject, int prompt_index) const {
  return root / "attn" / run / subject / indexed("p", prompt_index);
}
fs::path Layout::cache() const { return root / "cache"; }

std::vector<std::string> parallel_for(int count, int jobs, const std::function<void(int)>& fn) {
  std::vector<std::string> errors(static_cast<std::size_t>(std::max(count, 0)));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(i)] = e.what();
        if (errors[static_cast<std::size_t>(i)].empty()) errors[static_cast<std::size_t>(i)] = "unknown error";
      }
    }
  };
  const int threads = std::clamp(jobs, 1, std::max(count, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return errors;
}

// Commands -------------------------------------------------------------------

Outcome run_describe(const Config& cfg) {
  const auto manifest = checked_manifest(cfg);
  const auto c = cfg.description_case();
  const Layout layout{cfg.output_dir()};

  describe::GenerateOptions options;
  options.templates = describe::InstructionTemplates::from_json(section(cfg.doc, "templates"));
  options.with_expression = cfg.doc.value("with_expression", false);
  std::unique_ptr<describe::VlmClient> client;
  if (c != describe::DescriptionCase::kBaseline) {
    json vlm_doc = section(cfg.doc, "vlm");
    if (vlm_doc.contains("options") && vlm_doc["options"].contains("script")) {
      vlm_doc["options"]["script"] = cfg.resolve(vlm_doc["options"]["script"].get<std::string>()).string();
    }
    describe::VlmConfig vlm_cfg;
    try {
      vlm_cfg = describe::vlm_config_from_json(vlm_doc);
    } catch (const InvalidArgument& e) {
      throw UsageError(e.what());
    }
    options.max_retries = vlm_cfg.max_retries;
    std::unique_ptr<describe::VlmClient> inner = describe::make_vlm_client(vlm_cfg);
    if (vlm_doc.value("cache", true)) {
      inner = std::make_unique<describe::CachingVlmClient>(std::move(inner), layout.cache() / "vlm");
    }
    client = std::make_unique<LockedVlm>(std::move(inner));
  }

  Shared shared;
  const auto errors = parallel_for(static_cast<int>(manifest.subjects.size()), cfg.jobs(), [&](int si) {
    const auto& subject = manifest.subjects[static_cast<std::size_t>(si)];
    const auto refs = corpus::load_reference_set(subject.image_dir, subject);
    const auto target = target_for(cfg, subject);
    std::vector<describe::TrainDescription> out;
    json failures = json::array();
    for (int i = 0; i < static_cast<int>(refs.size()); ++i) {
      try {
        out.push_back(describe::generate_description(refs.images[static_cast<std::size_t>(i)], target, c,
                                                     client.get(), i, options));
        shared.ok();
      } catch (const describe::DescriptionError& e) {
        failures.push_back({{"image_index", i}, {"error", e.what()}, {"raw_outputs", e.raw_outputs()}});
        shared.fail(subject.id + "/" + std::to_string(i) + ": " + e.what());
      } catch (const Error& e) {
        failures.push_back({{"image_index", i}, {"error", e.what()}, {"raw_outputs", json::array()}});
        shared.fail(subject.id + "/" + std::to_string(i) + ": " + e.what());
      }
    }
    const json summary = {{"subject_id", subject.id},
                          {"case", describe::to_string(c)},
                          {"images", refs.size()},
                          {"described", out.size()},
                          {"failures", failures}};
    write_text_file(layout.description_summary(subject.id, c), summary.dump(2) + "\n");
    const fs::path path = layout.descriptions(subject.id, c);
    if (failures.empty()) {
      describe::write_jsonl(path, out);
    } else if (fs::exists(path)) {
      fs::remove(path);
    }
  });
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) shared.fail(manifest.subjects[i].id + ": " + errors[i]);
  }
  return shared.finish();
}

Outcome run_segment(const Config& cfg) {
  const auto manifest = checked_manifest(cfg);
  const Layout layout{cfg.output_dir()};
  json seg_doc = section(cfg.doc, "segmenter");
  if (seg_doc.contains("dir")) seg_doc["dir"] = cfg.resolve(seg_doc["dir"].get<std::string>()).string();
  std::unique_ptr<segment::Segmenter> segmenter;
  try {
    segmenter = segment::make_segmenter(seg_doc);
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }

  Shared shared;
  const auto errors = parallel_for(static_cast<int>(manifest.subjects.size()), cfg.jobs(), [&](int si) {
    const auto& subject = manifest.subjects[static_cast<std::size_t>(si)];
    const auto refs = corpus::load_reference_set(subject.image_dir, subject);
    fs::remove_all(layout.masks(subject.id));
    for (int i = 0; i < static_cast<int>(refs.size()); ++i) {
      try {
        const auto mask =
            segment::segment_subject(refs.images[static_cast<std::size_t>(i)], subject.class_name, *segmenter, i);
        segment::save_mask(layout.mask_stem(subject.id, i), mask);
        shared.ok();
      } catch (const Error& e) {
        shared.fail(subject.id + "/" + std::to_string(i) + ": " + e.what());
      }
    }
  });
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) shared.fail(manifest.subjects[i].id + ": " + errors[i]);
  }
  return shared.finish();
}

Outcome run_tune(const Config& cfg) {
  const auto manifest = checked_manifest(cfg);
  const Layout layout{cfg.output_dir()};
  const auto c = cfg.description_case();
  const std::string run = cfg.run_label();
  tune::TuneConfig tune_cfg;
  std::unique_ptr<tune::BackendAdapter> backend;
  try {
    tune_cfg = tune::tune_config_from_json(section(cfg.doc, "tune"));
    backend = tune::make_backend(section(cfg.doc, "backend"));
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }

  Shared shared;
  const auto errors = parallel_for(static_cast<int>(manifest.subjects.size()), cfg.jobs(), [&](int si) {
    const auto& subject = manifest.subjects[static_cast<std::size_t>(si)];
    const auto refs = corpus::load_reference_set(subject.image_dir, subject);
    const fs::path desc_path = layout.descriptions(subject.id, c);
    if (!fs::exists(desc_path)) throw IoError("missing descriptions: " + desc_path.string());
    const auto descriptions = describe::read_jsonl(desc_path);
    const fs::path handle_dir = layout.handle(run, subject.id);
    fs::remove_all(handle_dir);
    tune::Harness harness(*backend, layout.call_log(run, subject.id));
    harness.fine_tune(refs, descriptions, tune_cfg, handle_dir, target_for(cfg, subject));
    shared.ok();
  });
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) shared.fail(manifest.subjects[i].id + ": " + errors[i]);
  }
  return shared.finish();
}

Outcome run_sample(const Config& cfg) {
  const auto manifest = checked_manifest(cfg);
  const Layout layout{cfg.output_dir()};
  const std::string run = cfg.run_label();
  tune::SampleConfig sample_cfg;
  std::unique_ptr<tune::BackendAdapter> backend;
  try {
    sample_cfg = sample_config(cfg);
    backend = tune::make_backend(section(cfg.doc, "backend"));
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }

  Shared shared;
  const auto errors = parallel_for(static_cast<int>(manifest.subjects.size()), cfg.jobs(), [&](int si) {
    const auto& subject = manifest.subjects[static_cast<std::size_t>(si)];
    const auto handle = tune::ModelHandle::load(layout.handle(run, subject.id));
    tune::Harness harness(*backend, layout.call_log(run, subject.id));
    for (int p = 0; p < static_cast<int>(subject.prompts.size()); ++p) {
      try {
        const auto set = harness.sample(handle, subject.prompts[static_cast<std::size_t>(p)], sample_cfg);
        const fs::path dir = layout.generated(run, subject.id, p);
        fs::remove_all(dir);
        corpus::save_generated_set(set, dir);
        shared.ok();
      } catch (const Error& e) {
        shared.fail(subject.id + "/" + indexed("p", p) + ": " + e.what());
      }
    }
  });
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) {
      shared.fail(manifest.subjects[i].id + ": " + errors[i], static_cast<int>(manifest.subjects[i].prompts.size()));
    }
  }
  return shared.finish();
}

Outcome run_evaluate(const Config& cfg) {
  const auto manifest = checked_manifest(cfg);
  const Layout layout{cfg.output_dir()};
  const json enc_doc = section(cfg.doc, "encoder");
  json enc_options = enc_doc;
  enc_options.erase("id");
  if (!enc_options.contains("cache_dir")) enc_options["cache_dir"] = (layout.cache() / "embed").string();
  std::unique_ptr<embed::Encoder> inner;
  try {
    inner = embed::load_encoder(enc_doc.value("id", std::string(embed::kDefaultEncoderId)), enc_options);
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  LockedEncoder encoder(std::move(inner));
  const json m = section(cfg.doc, "metrics");
  metrics::MetricOptions options;
  options.subject_resolution = m.value("subject_resolution", options.subject_resolution);
  options.batch_size = m.value("batch_size", options.batch_size);

  const auto runs = list_runs(cfg, layout.root / "generated");
  std::vector<std::pair<std::string, const corpus::SubjectEntry*>> units;
  for (const auto& run : runs) {
    for (const auto& s : manifest.subjects) units.emplace_back(run, &s);
  }

  Shared shared;
  if (units.empty()) shared.fail("no generated runs under " + (layout.root / "generated").string());
  const auto errors = parallel_for(static_cast<int>(units.size()), cfg.jobs(), [&](int ui) {
    const auto& [run, subject] = units[static_cast<std::size_t>(ui)];
    const int num_prompts = static_cast<int>(subject->prompts.size());
    const auto refs = corpus::load_reference_set(subject->image_dir, *subject);
    std::vector<segment::SubjectMask> masks;
    bool masks_ok = true;
    for (int i = 0; i < static_cast<int>(refs.size()); ++i) {
      const fs::path stem = layout.mask_stem(subject->id, i);
      if (!fs::exists(fs::path(stem).concat(".png"))) {
        shared.missing({{"kind", "mask"}, {"subject_id", subject->id}, {"image_index", i}});
        masks_ok = false;
        continue;
      }
      masks.push_back(segment::load_mask(stem));
    }
    if (!masks_ok) {
      shared.fail(run + "/" + subject->id + ": missing masks", num_prompts);
      return;
    }
    for (int p = 0; p < num_prompts; ++p) {
      const fs::path gen_dir = layout.generated(run, subject->id, p);
      if (!fs::exists(gen_dir / "generated.json")) {
        shared.missing({{"kind", "generated"}, {"run", run}, {"subject_id", subject->id}, {"prompt_index", p}});
        shared.fail(run + "/" + subject->id + "/" + indexed("p", p) + ": missing generated set");
        continue;
      }
      try {
        const auto gen = corpus::load_generated_set(gen_dir);
        auto report = metrics::evaluate(refs, masks, gen, encoder, options);
        metrics::write_report(layout.report_stem(run, subject->id, p), report);
        shared.ok();
      } catch (const Error& e) {
        shared.fail(run + "/" + subject->id + "/" + indexed("p", p) + ": " + e.what());
      }
    }
  });
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) {
      shared.fail(units[i].first + "/" + units[i].second->id + ": " + errors[i],
                  static_cast<int>(units[i].second->prompts.size()));
    }
  }
  Outcome out = shared.finish();
  write_text_file(layout.reports() / "missing.json", out.missing.dump(2) + "\n");
  if (out.succeeded > 0) write_aggregate(layout.reports(), aggregate_reports(layout.reports()));
  return out;
}

Outcome run_report(const Config& cfg) {
  const Layout layout{cfg.output_dir()};
  Outcome out;
  if (!fs::is_directory(layout.reports())) {
    out.failed = 1;
    out.errors.push_back("no reports under " + layout.reports().string());
    return out;
  }
  const auto rows = aggregate_reports(layout.reports());
  for (const auto& row : rows) out.succeeded += row.reports;
  if (rows.empty()) {
    out.failed = 1;
    out.errors.push_back("no reports under " + layout.reports().string());
    return out;
  }
  write_aggregate(layout.reports(), rows);
  return out;
}

Outcome run_attn(const Config& cfg) {
  const Layout layout{cfg.output_dir()};
  const json a = section(cfg.doc, "attn");
  const std::string token = a.value("token", std::string(corpus::kIdentifierPlaceholder));
  const int resolution = a.value("resolution", 64);
  const double alpha = a.value("alpha", 0.5);
  if (resolution < 1) throw UsageError("attn.resolution must be >= 1");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("attn.alpha must be in [0, 1]");
  tune::SampleConfig sample_cfg;
  std::unique_ptr<tune::BackendAdapter> backend;
  try {
    sample_cfg = sample_config(cfg);
    if (a.contains("images_per_prompt")) {
      sample_cfg.images_per_prompt = a["images_per_prompt"].get<int>();
      sample_cfg.seeds.clear();
    }
    sample_cfg.validate();
    backend = tune::make_backend(section(cfg.doc, "backend"));
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }

  struct Job {
    fs::path handle;
    std::string prompt;
    fs::path out_dir;
    fs::path log;
    std::string label;
  };
  std::vector<Job> jobs;
  if (a.contains("handle") && a.contains("prompt")) {
    const fs::path handle = cfg.resolve(a["handle"].get<std::string>());
    const std::string prompt = a["prompt"].get<std::string>();
    const std::string key = sha256_hex(handle.string() + "\n" + prompt).substr(0, 12);
    jobs.push_back({handle, prompt, layout.root / "attn" / "single" / key, layout.root / "logs" / "single.calls.jsonl",
                    "single/" + key});
  } else {
    const auto manifest = checked_manifest(cfg);
    const std::string run = cfg.run_label();
    std::vector<int> prompt_indices{0};
    if (a.contains("prompts")) prompt_indices = a["prompts"].get<std::vector<int>>();
    for (const auto& s : manifest.subjects) {
      for (int p : prompt_indices) {
        if (p < 0 || p >= static_cast<int>(s.prompts.size())) {
          throw UsageError("attn.prompts index " + std::to_string(p) + " out of range for " + s.id);
        }
        jobs.push_back({layout.handle(run, s.id), s.prompts[static_cast<std::size_t>(p)], layout.attn(run, s.id, p),
                        layout.call_log(run, s.id), run + "/" + s.id + "/" + indexed("p", p)});
      }
    }
  }
  for (const auto& job : jobs) {
    const auto words = split_words(job.prompt);
    if (token != corpus::kIdentifierPlaceholder && std::find(words.begin(), words.end(), token) == words.end()) {
      throw UsageError("token '" + token + "' does not occur in prompt: " + job.prompt);
    }
  }

  Shared shared;
  std::mutex handle_mutex;
  const auto errors = parallel_for(static_cast<int>(jobs.size()), cfg.jobs(), [&](int ji) {
    const auto& job = jobs[static_cast<std::size_t>(ji)];
    const auto handle = tune::ModelHandle::load(job.handle);
    tune::AttentionRun result;
    {
      std::lock_guard lock(handle_mutex);
      tune::Harness harness(*backend, job.log);
      result = harness.sample_with_attention(handle, job.prompt, sample_cfg, token);
    }
    fs::remove_all(job.out_dir);
    json index = {{"token", token},
                  {"token_index", result.token_index},
                  {"generation_prompt", job.prompt},
                  {"resolution", resolution},
                  {"alpha", alpha},
                  {"images", json::array()}};
    for (std::size_t k = 0; k < result.generated.images.size(); ++k) {
      const std::string name = indexed("", static_cast<int>(k));
      const auto& image = result.generated.images[k];
      attn::save_records(job.out_dir / name, result.records[k], token);
      const auto avg = attn::average_maps(result.records[k], resolution, resolution, token);
      write_png(job.out_dir / (name + ".png"), image);
      write_png(job.out_dir / (name + ".overlay.png"), attn::overlay(avg, image, alpha));
      write_text_file(job.out_dir / (name + ".raw.csv"), metrics::matrix_to_csv(avg.raw.matrix()));
      index["images"].push_back({{"file", name + ".png"},
                                 {"overlay", name + ".overlay.png"},
                                 {"seed", result.generated.seeds[k]},
                                 {"records", avg.num_records},
                                 {"normalization", avg.normalization == attn::Normalization::kMinMax ? "min-max" : "none"},
                                 {"constant", avg.constant}});
    }
    write_text_file(job.out_dir / "attn.json", index.dump(2) + "\n");
    shared.ok();
  });
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) shared.fail(jobs[i].label + ": " + errors[i]);
  }
  return shared.finish();
}

// Aggregation ----------------------------------------------------------------

std::vector<AggregateRow> aggregate_reports(const fs::path& reports_dir) {
  std::vector<AggregateRow> rows;
  if (!fs::is_directory(reports_dir)) return rows;
  std::vector<fs::path> run_dirs;
  for (const auto& e : fs::directory_iterator(reports_dir)) {
    if (e.is_directory() && e.path().filename() != "plots") run_dirs.push_back(e.path());
  }
  std::sort(run_dirs.begin(), run_dirs.end());
  for (const auto& dir : run_dirs) {
    AggregateRow row{dir.filename().string()};
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      json doc;
      try {
        doc = json::parse(read_text_file(file));
      } catch (const json::exception& ex) {
        throw IoError(file.string() + ": " + ex.what());
      }
      row.sa += doc.at("sa").get<double>();
      row.nsd += doc.at("nsd").get<double>();
      row.ta += doc.at("ta").get<double>();
      ++row.reports;
    }
    if (row.reports == 0) continue;
    row.sa /= row.reports;
    row.nsd /= row.reports;
    row.ta /= row.reports;
    rows.push_back(row);
  }
  return rows;
}

std::string aggregate_to_csv(const std::vector<AggregateRow>& rows) {
  std::string out = "method,reports,sa,nsd,ta\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%d,%.9g,%.9g,%.9g\n", r.reports, r.sa, r.nsd, r.ta);
    out += r.method + buf;
  }
  return out;
}

}  // namespace sid::pipeline
