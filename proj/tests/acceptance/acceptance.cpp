// Acceptance checks. One line per criterion: PASS, FAIL or SKIP.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sid/attnmap.hpp"
#include "sid/corpus.hpp"
#include "sid/describe.hpp"
#include "sid/embed.hpp"
#include "sid/image_io.hpp"
#include "sid/metrics.hpp"
#include "sid/process.hpp"
#include "sid/segment.hpp"
#include "support.hpp"

using namespace sid;
using embed::EmbeddingVector;
using embed::Modality;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum class Verdict { kPass, kFail, kSkip };

struct Result {
  Verdict verdict = Verdict::kPass;
  std::string detail;
};

Result pass(std::string d) { return {Verdict::kPass, std::move(d)}; }
Result fail(std::string d) { return {Verdict::kFail, std::move(d)}; }
Result skip(std::string d) { return {Verdict::kSkip, std::move(d)}; }

EmbeddingVector emb(const Eigen::VectorXd& v, Modality m = Modality::kImage) { return {v, m, "acceptance"}; }

double naive_dot(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double s = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) s += a(i) * b(i);
  return s;
}

Result metric_oracle() {
  std::mt19937 rng(1);
  const auto start = std::chrono::steady_clock::now();
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 4);
    const int m = 1 + static_cast<int>(rng() % 5);
    std::vector<Eigen::VectorXd> v, w;
    std::vector<std::optional<Eigen::VectorXd>> u;
    for (int i = 0; i < n; ++i) v.push_back(testkit::random_unit(rng, 8));
    for (int j = 0; j < m; ++j) w.push_back(testkit::random_unit(rng, 8));
    for (int i = 0; i < n; ++i) {
      if (i > 0 && rng() % 3 == 0) {
        u.emplace_back();
      } else {
        u.emplace_back(testkit::random_unit(rng, 8));
      }
    }
    const Eigen::VectorXd t = testkit::random_unit(rng, 8);

    double sa = 0, nsd = 0, ta = 0;
    int nsd_n = 0;
    for (const auto& a : v)
      for (const auto& b : w) sa += naive_dot(a, b);
    sa /= n * m;
    for (const auto& a : u) {
      if (!a) continue;
      for (const auto& b : w) {
        nsd += naive_dot(*a, b);
        ++nsd_n;
      }
    }
    nsd = 1.0 - nsd / nsd_n;
    for (const auto& b : w) ta += naive_dot(t, b);
    ta /= m;

    std::vector<EmbeddingVector> ev, ew;
    std::vector<std::optional<EmbeddingVector>> eu;
    for (const auto& x : v) ev.push_back(emb(x));
    for (const auto& x : w) ew.push_back(emb(x));
    for (const auto& x : u) eu.push_back(x ? std::optional(emb(*x)) : std::nullopt);
    worst = std::max(worst, std::abs(metrics::subject_alignment(ev, ew).value - sa));
    worst = std::max(worst, std::abs(metrics::non_subject_disentanglement(eu, ew).value - nsd));
    worst = std::max(worst, std::abs(metrics::text_alignment(emb(t, Modality::kText), ew).value - ta));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ostringstream d;
  d << "100 instances, max |diff| " << worst << ", " << secs << " s";
  return worst <= 1e-9 && secs < 5.0 ? pass(d.str()) : fail(d.str());
}

Result bound_suite() {
  std::mt19937 rng(2);
  int violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int dim = 2 + static_cast<int>(rng() % 31);
    const int n = 1 + static_cast<int>(rng() % 5);
    const int m = 1 + static_cast<int>(rng() % 6);
    std::vector<EmbeddingVector> v, w;
    std::vector<std::optional<EmbeddingVector>> u;
    for (int i = 0; i < n; ++i) {
      v.push_back(emb(testkit::random_unit(rng, dim)));
      u.emplace_back(emb(testkit::random_unit(rng, dim)));
    }
    for (int j = 0; j < m; ++j) w.push_back(emb(testkit::random_unit(rng, dim)));
    const double sa = metrics::subject_alignment(v, w).value;
    const double nsd = metrics::non_subject_disentanglement(u, w).value;
    const double ta = metrics::text_alignment(emb(testkit::random_unit(rng, dim), Modality::kText), w).value;
    if (!(sa >= -1 && sa <= 1) || !(ta >= -1 && ta <= 1) || !(nsd >= 0 && nsd <= 2)) ++violations;
  }
  const Eigen::VectorXd x = testkit::random_unit(rng, 8);
  std::vector<EmbeddingVector> gen = {emb(x), emb(x)};
  std::vector<std::optional<EmbeddingVector>> same = {emb(x), emb(x), emb(x)};
  std::vector<std::optional<EmbeddingVector>> opposite = {emb(-x), emb(-x)};
  const double nsd_same = metrics::non_subject_disentanglement(same, gen).value;
  const double nsd_opposite = metrics::non_subject_disentanglement(opposite, gen).value;
  std::ostringstream d;
  d << violations << " violations in 1000; identical NSD " << nsd_same << ", antipodal NSD " << nsd_opposite;
  return violations == 0 && std::abs(nsd_same) <= 1e-6 && std::abs(nsd_opposite - 2.0) <= 1e-6 ? pass(d.str())
                                                                                                   : fail(d.str());
}

// Flattens the pixels: distinct images map to distinct directions.
embed::MockEncoder identity_encoder() {
  auto flatten = [](const Image8& img) {
    embed::RawVector v(static_cast<Eigen::Index>(img.height()) * img.width() * img.channels());
    Eigen::Index k = 0;
    for (int c = 0; c < img.channels(); ++c)
      for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) v(k++) = static_cast<float>(img(y, x, c)) + 1.0f;
    return v;
  };
  return embed::MockEncoder("identity", flatten, [](std::string_view) { return embed::RawVector::Ones(3); });
}

Result self_alignment() {
  auto enc = identity_encoder();
  metrics::MetricOptions opt;
  opt.subject_resolution = 48;
  std::mt19937 rng(3);
  double worst_sa = 0;
  double worst_nsd = 0;
  for (int trial = 0; trial < 10; ++trial) {
    // Subject path: the same disc at several positions.
    corpus::ReferenceSet refs;
    std::vector<segment::SubjectMask> masks;
    const testkit::Rgb disc{static_cast<std::uint8_t>(rng() % 256), static_cast<std::uint8_t>(rng() % 256), 40};
    for (int i = 0; i < 3; ++i) {
      const int cy = 14 + static_cast<int>(rng() % 20);
      const int cx = 14 + static_cast<int>(rng() % 20);
      refs.images.push_back(testkit::disc_image(48, 48, {static_cast<std::uint8_t>(rng() % 256), 90, 9}, disc, cy, cx, 9));
      masks.push_back({testkit::disc_mask(48, 48, cy, cx, 9), i, "disc", std::nullopt});
    }
    corpus::GeneratedSet gen;
    for (std::size_t i = 0; i < refs.size(); ++i) {
      gen.images.push_back(metrics::subject_segment(refs.images[i], masks[i], opt.subject_resolution));
    }
    worst_sa = std::max(worst_sa, std::abs(metrics::subject_alignment(refs, masks, gen, enc, opt).value - 1.0));

    // Non-subject path: one reference, its own complement segment as every output.
    corpus::ReferenceSet one;
    one.images.push_back(testkit::random_image(rng, 40, 40));
    std::vector<segment::SubjectMask> one_mask = {{testkit::random_mask(rng, 40, 40, 0.4), 0, "x", std::nullopt}};
    corpus::GeneratedSet bg;
    for (int j = 0; j < 3; ++j) bg.images.push_back(metrics::non_subject_segment(one.images[0], one_mask[0]));
    worst_nsd = std::max(worst_nsd, std::abs(metrics::non_subject_disentanglement(one, one_mask, bg, enc, opt).value));
  }
  std::ostringstream d;
  d << "max |SA - 1| " << worst_sa << ", max |NSD| " << worst_nsd;
  return worst_sa <= 1e-6 && worst_nsd <= 1e-6 ? pass(d.str()) : fail(d.str());
}

Result mask_algebra() {
  std::mt19937 rng(4);
  int bad = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int h = 4 + static_cast<int>(rng() % 60);
    const int w = 4 + static_cast<int>(rng() % 60);
    const Image8 x = testkit::random_image(rng, h, w);
    const MaskGrid m = testkit::random_mask(rng, h, w, 0.1 + 0.8 * (rng() % 100) / 100.0);
    const Image8 a = segment::apply_mask(x, m);
    const Image8 b = segment::apply_mask(x, segment::complement(m));
    bool ok = (segment::complement(segment::complement(m)) == m).all();
    for (int y = 0; y < h && ok; ++y)
      for (int xx = 0; xx < w && ok; ++xx)
        for (int c = 0; c < 3 && ok; ++c) ok = a(y, xx, c) + b(y, xx, c) == x(y, xx, c);
    if (!ok) ++bad;
  }
  return bad == 0 ? pass("50 images, pixel-exact, complement involution") : fail(std::to_string(bad) + " of 50 failed");
}

int count_tokens(std::string_view s) {
  int n = 0;
  bool in_word = false;
  for (char c : s) {
    if (c != ' ' && !in_word) ++n;
    in_word = c != ' ';
  }
  return n;
}

Result strip_identifier_check() {
  const std::pair<const char*, const char*> table[] = {
      {"a [v] dog swimming", "a dog swimming"},
      {"a [v] dog in the jungle", "a dog in the jungle"},
      {"a [v] dog in the snow", "a dog in the snow"},
      {"a [v] dog on the beach", "a dog on the beach"},
      {"a [v] dog on a cobblestone street", "a dog on a cobblestone street"},
      {"a [v] dog on top of pink fabric", "a dog on top of pink fabric"},
      {"a [v] dog on top of a wooden floor", "a dog on top of a wooden floor"},
      {"a [v] dog with a city in the background", "a dog with a city in the background"},
      {"a [v] dog with a mountain in the background", "a dog with a mountain in the background"},
      {"a [v] dog with a blue house in the background", "a dog with a blue house in the background"},
      {"a [v] dog on top of a purple rug in a forest", "a dog on top of a purple rug in a forest"},
      {"a [v] dog with a wheat field in the background", "a dog with a wheat field in the background"},
      {"a [v] dog with a tree and autumn leaves in the background", "a dog with a tree and autumn leaves in the background"},
      {"a [v] dog with the Eiffel Tower in the background", "a dog with the Eiffel Tower in the background"},
      {"a [v] dog floating on top of water", "a dog floating on top of water"},
      {"a [v] dog floating in an ocean of milk", "a dog floating in an ocean of milk"},
      {"a [v] dog on top of green grass with sunflowers around it", "a dog on top of green grass with sunflowers around it"},
      {"a [v] dog on top of a mirror", "a dog on top of a mirror"},
      {"a [v] dog on top of the sidewalk in a crowded street", "a dog on top of the sidewalk in a crowded street"},
      {"[v] dog on top of a white rug ", "dog on top of a white rug"},
  };
  int bad = 0;
  for (const auto& [in, want] : table) {
    const std::string got = metrics::strip_identifier(in, "[v]");
    if (got != want || got.find("[v]") != std::string::npos || count_tokens(got) != count_tokens(in) - 1) ++bad;
  }
  int accepted_multi = 0;
  for (const char* multi : {"a [v] dog and a [v] cat", "[v] [v] dog"}) {
    try {
      metrics::strip_identifier(multi, "[v]");
      ++accepted_multi;
    } catch (const InvalidArgument&) {
    }
  }
  std::ostringstream d;
  d << (20 - bad) << "/20 prompts, " << accepted_multi << " multi-identifier prompts accepted";
  return bad == 0 && accepted_multi == 0 ? pass(d.str()) : fail(d.str());
}

json ablation_fixture() {
  return json::parse(read_text_file(fs::path(SID_TEST_FIXTURES) / "prompt_ablation.json"));
}

Result description_cases() {
  const json doc = ablation_fixture();
  const auto target = describe::Target::object(doc["class_name"], doc["identifier_token"]);
  int passed = 0;
  for (const auto& item : doc["cases"]) {
    const describe::TrainDescription d{item["text"], describe::parse_case(item["case"].get<std::string>()), 0,
                                       std::nullopt, std::nullopt};
    if (describe::validate_description(d, target).ok()) ++passed;
  }
  bool rejected = false;
  for (const auto& item : doc["violations"]) {
    if (item["failed_check"] != "subject_undescribed") continue;
    const describe::TrainDescription d{item["text"], describe::DescriptionCase::kSelectivelyInformative, 0,
                                       std::nullopt, std::nullopt};
    const auto checks = describe::validate_description(d, item["class_name"].get<std::string>(), "[v]");
    rejected = !checks.ok() && !checks.subject_undescribed;
  }
  std::ostringstream d;
  d << passed << "/4 canonical pass, subject-descriptor violation " << (rejected ? "rejected" : "accepted");
  return passed == 4 && rejected ? pass(d.str()) : fail(d.str());
}

Result verbatim_templates() {
  const bool ok = describe::baseline_description("dog", "[v]").text == "a [v] dog" &&
                  describe::baseline_description("backpack", "[v]").text == "a [v] backpack" &&
                  describe::style_baseline_description("[v]", describe::StyleMedium::kPainting).text ==
                      "A painting in the style of [v] art" &&
                  describe::style_baseline_description("[v]", describe::StyleMedium::kCartoon).text ==
                      "A cartoon in the style of [v] art";
  return ok ? pass("object and style baselines byte-exact") : fail("baseline text differs");
}

double bilinear_sample(const Plane<double>& src, int out, int y, int x) {
  auto axis = [&](int i, int in, int& lo, int& hi, double& f) {
    const double s = std::clamp((i + 0.5) * in / out - 0.5, 0.0, static_cast<double>(in - 1));
    lo = static_cast<int>(std::floor(s));
    hi = std::min(lo + 1, in - 1);
    f = s - lo;
  };
  int y0, y1, x0, x1;
  double fy, fx;
  axis(y, static_cast<int>(src.rows()), y0, y1, fy);
  axis(x, static_cast<int>(src.cols()), x0, x1, fx);
  return (1 - fy) * ((1 - fx) * src(y0, x0) + fx * src(y0, x1)) + fy * ((1 - fx) * src(y1, x0) + fx * src(y1, x1));
}

Result attention_averaging() {
  std::vector<attn::AttentionRecord> records;
  for (int step = 0; step < 2; ++step)
    for (int layer = 0; layer < 2; ++layer)
      for (int head = 0; head < 2; ++head) {
        const int side = layer == 0 ? 2 : 4;
        Plane<double> m(side, side);
        for (int y = 0; y < side; ++y)
          for (int x = 0; x < side; ++x) m(y, x) = ((step + 1) * (y + 1) + (head + 2) * x) / 32.0;
        records.push_back({step, layer, head, 1, m});
      }
  const int target = 8;
  Plane<double> want(target, target);
  for (int y = 0; y < target; ++y)
    for (int x = 0; x < target; ++x) {
      double s = 0;
      for (const auto& r : records) s += bilinear_sample(r.map, target, y, x);
      want(y, x) = s / static_cast<double>(records.size());
    }
  const auto avg = attn::average_maps(records, target, target);
  const double err = (avg.raw - want).abs().maxCoeff();
  std::mt19937 rng(5);
  double perm_err = 0;
  for (int k = 0; k < 10; ++k) {
    std::shuffle(records.begin(), records.end(), rng);
    perm_err = std::max(perm_err, (attn::average_maps(records, target, target).raw - avg.raw).abs().maxCoeff());
  }
  std::ostringstream d;
  d << "8 records, max |diff| " << err << ", permutation diff " << perm_err;
  return err <= 1e-12 && perm_err <= 1e-12 ? pass(d.str()) : fail(d.str());
}

Result end_to_end() {
  testkit::TempDir dir;
  const std::string config = testkit::write_demo_project(dir.path()).string();
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::map<std::string, std::string>> trees;
  for (const char* out : {"run_a", "run_b"}) {
    for (const char* cmd : {"describe", "tune", "sample", "segment", "evaluate", "attn"}) {
      const auto r = run_process({SID_CLI_PATH, cmd, "-c", config, "-o", (dir / out).string(), "--set",
                                  "tune.iterations=10", "--set", "sample.images_per_prompt=2"},
                                 {}, std::chrono::seconds{240});
      if (r.exit_code != 0) return fail(std::string(cmd) + " exited " + std::to_string(r.exit_code) + ": " + r.err);
    }
    trees.push_back(testkit::tree_hashes(dir / out, {"logs/"}));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool reports = trees[0].count("reports/dreambooth-case3/perfume/p00.json") == 1 &&
                       trees[0].count("attn/dreambooth-case3/perfume/p00/000.overlay.png") == 1;
  std::ostringstream d;
  d << trees[0].size() << " files, " << (trees[0] == trees[1] ? "identical" : "DIFFERENT") << " across runs, " << secs
    << " s";
  return reports && trees[0] == trees[1] && secs < 300 ? pass(d.str()) : fail(d.str());
}

Result clip_directional() {
  const char* model = std::getenv("SID_CLIP_MODEL");
  const char* photos = std::getenv("SID_CLIP_DOG_PHOTOS");
  if (!model || !fs::exists(model)) return skip("encoder weights unavailable (set SID_CLIP_MODEL to a local model dir)");
  if (!photos || !fs::is_directory(photos)) return skip("no dog photos (set SID_CLIP_DOG_PHOTOS)");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(photos)) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.size() < 5) return skip("fewer than 5 dog photos");
  files.resize(5);
  auto enc = embed::load_encoder("clip-vit-b-32", {{"model", model}});
  const auto dog = embed::embed_text("a photo of a dog", *enc);
  const auto cat = embed::embed_text("a photo of a cat", *enc);
  int wins = 0;
  for (const auto& f : files) {
    const auto img = embed::embed_image(read_image(f), *enc);
    if (img.values.dot(dog.values) > img.values.dot(cat.values)) ++wins;
  }
  return wins == 5 ? pass("5/5 pairs") : fail(std::to_string(wins) + "/5 pairs");
}

Result manifest_scale() {
  const auto manifest = corpus::load_manifest(fs::path(SID_TEST_FIXTURES) / "evaluation_manifest.json");
  const auto report = corpus::validate_manifest(manifest);
  bool shape = manifest.subjects.size() == 15;
  for (const auto& s : manifest.subjects) shape = shape && s.prompts.size() == 25;
  std::ostringstream d;
  d << manifest.subjects.size() << " subjects, total " << manifest.total_images()
    << (report.ok() ? ", valid" : ", invalid");
  return report.ok() && shape && manifest.total_images() == 7500 ? pass(d.str()) : fail(d.str());
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Result()>>> checks = {
      {"metric oracle equivalence", metric_oracle},
      {"bound suite", bound_suite},
      {"self-alignment", self_alignment},
      {"mask algebra", mask_algebra},
      {"strip_identifier", strip_identifier_check},
      {"description cases", description_cases},
      {"verbatim templates", verbatim_templates},
      {"attention averaging", attention_averaging},
      {"end-to-end smoke", end_to_end},
      {"directional sanity (clip-vit-b-32)", clip_directional},
      {"manifest scale", manifest_scale},
  };
  int failures = 0;
  for (const auto& [name, fn] : checks) {
    Result r;
    try {
      r = fn();
    } catch (const std::exception& e) {
      r = fail(std::string("exception: ") + e.what());
    }
    const char* tag = r.verdict == Verdict::kPass ? "PASS" : r.verdict == Verdict::kFail ? "FAIL" : "SKIP";
    if (r.verdict == Verdict::kFail) ++failures;
    std::cout << "[" << tag << "] " << name << ": " << r.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
