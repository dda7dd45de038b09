#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sid/pipeline.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitTotal = 3;

using Runner = sid::pipeline::Outcome (*)(const sid::pipeline::Config&);

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Selectively informative description toolkit: describe, segment, tune, sample, evaluate, attn, report"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string manifest;
  std::string out_dir;
  std::string description_case;
  std::string run;
  std::string encoder;
  std::string token;
  std::string handle;
  std::string prompt;
  std::string method;
  int jobs = 0;
  std::vector<std::string> overrides;

  app.add_option("-c,--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--manifest", manifest, "Run manifest (overrides config 'manifest')");
  app.add_option("-o,--out", out_dir, "Output directory (overrides config 'output_dir')");
  app.add_option("-j,--jobs", jobs, "Subjects processed in parallel")->check(CLI::PositiveNumber);
  app.add_option("--set", overrides, "Override a config key: dotted.key=value (value parsed as JSON if possible)");
  app.add_option("--run", run, "Run label (default <method>-<case>)");

  std::map<std::string, Runner> runners = {
      {"describe", sid::pipeline::run_describe}, {"segment", sid::pipeline::run_segment},
      {"tune", sid::pipeline::run_tune},         {"sample", sid::pipeline::run_sample},
      {"evaluate", sid::pipeline::run_evaluate}, {"attn", sid::pipeline::run_attn},
      {"report", sid::pipeline::run_report},
  };
  auto* describe = app.add_subcommand("describe", "Write train descriptions for every subject");
  auto* segment = app.add_subcommand("segment", "Segment the subject in every reference image");
  auto* tune = app.add_subcommand("tune", "Fine-tune one personalized model per subject");
  auto* sample = app.add_subcommand("sample", "Sample every generation prompt of every subject");
  auto* evaluate = app.add_subcommand("evaluate", "Compute SA, NSD and TA reports plus the aggregate table");
  auto* attn = app.add_subcommand("attn", "Record and overlay cross-attention maps");
  app.add_subcommand("report", "Rebuild the aggregate table and plots from existing reports");

  for (auto* sub : {describe, tune}) sub->add_option("--case", description_case, "case1..case4 or sid");
  tune->add_option("--method", method, "dreambooth, custom_diffusion, svdiff or textual_inversion");
  evaluate->add_option("--encoder", encoder, "Encoder id, e.g. clip-vit-b-32 or pixel-8");
  attn->add_option("--token", token, "Prompt token whose maps are averaged (default [v])");
  attn->add_option("--handle", handle, "Model handle directory (single-prompt mode)");
  attn->add_option("--prompt", prompt, "Generation prompt (single-prompt mode)");
  (void)segment;
  (void)sample;

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  sid::pipeline::Outcome outcome;
  try {
    sid::pipeline::Config cfg;
    if (!config_path.empty()) {
      cfg = sid::pipeline::Config::load(config_path);
    } else {
      cfg.base_dir = std::filesystem::current_path();
    }
    if (!manifest.empty()) cfg.doc["manifest"] = std::filesystem::absolute(manifest).string();
    if (!out_dir.empty()) cfg.doc["output_dir"] = std::filesystem::absolute(out_dir).string();
    if (jobs > 0) cfg.doc["jobs"] = jobs;
    if (!run.empty()) cfg.doc["run"] = run;
    if (!description_case.empty()) cfg.doc["case"] = description_case;
    if (!method.empty()) cfg.set("tune.method", method);
    if (!encoder.empty()) cfg.set("encoder.id", encoder);
    if (!token.empty()) cfg.doc["attn"]["token"] = token;
    if (!handle.empty()) cfg.doc["attn"]["handle"] = std::filesystem::absolute(handle).string();
    if (!prompt.empty()) cfg.doc["attn"]["prompt"] = prompt;
    if (handle.empty() != prompt.empty()) throw sid::pipeline::UsageError("--handle and --prompt go together");
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw sid::pipeline::UsageError("--set expects key=value, got: " + kv);
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    outcome = runners.at(command)(cfg);
  } catch (const sid::pipeline::UsageError& e) {
    std::cerr << "sid " << command << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "sid " << command << ": " << e.what() << "\n";
    return kExitTotal;
  }

  for (const auto& err : outcome.errors) std::cerr << "sid " << command << ": " << err << "\n";
  std::cout << command << ": " << outcome.succeeded << " ok, " << outcome.failed << " failed\n";
  return outcome.exit_code();
}
