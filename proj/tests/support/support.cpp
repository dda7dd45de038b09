#include "support.hpp"

#include <cstdlib>

#include <json.hpp>

#include "sid/hash.hpp"
#include "sid/image_io.hpp"

namespace sid::testkit {
namespace fs = std::filesystem;
using nlohmann::json;

TempDir::TempDir() {
  std::string tmpl = (fs::temp_directory_path() / "sid-test-XXXXXX").string();
  if (mkdtemp(tmpl.data()) == nullptr) throw IoError("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

Eigen::VectorXd random_unit(std::mt19937& rng, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(dim);
  do {
    for (int i = 0; i < dim; ++i) v(i) = normal(rng);
  } while (v.norm() < 1e-6);
  return v.normalized();
}

Image8 random_image(std::mt19937& rng, int height, int width, int channels) {
  std::uniform_int_distribution<int> byte(0, 255);
  Image8 img(height, width, channels);
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) img(y, x, c) = static_cast<std::uint8_t>(byte(rng));
    }
  }
  return img;
}

MaskGrid random_mask(std::mt19937& rng, int height, int width, double density) {
  std::bernoulli_distribution on(density);
  MaskGrid m(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) m(y, x) = on(rng) ? 1 : 0;
  }
  return m;
}

MaskGrid disc_mask(int height, int width, int cy, int cx, int radius) {
  MaskGrid m = MaskGrid::Zero(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= radius * radius) m(y, x) = 1;
    }
  }
  return m;
}

Image8 disc_image(int height, int width, Rgb background, Rgb disc, int cy, int cx, int radius) {
  const MaskGrid m = disc_mask(height, width, cy, cx, radius);
  Image8 img(height, width, 3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) img(y, x, c) = m(y, x) ? disc[c] : background[c];
    }
  }
  return img;
}

fs::path write_demo_project(const fs::path& dir) {
  fs::create_directories(dir / "refs" / "perfume");
  fs::create_directories(dir / "masks");
  const Rgb perfume{200, 40, 60};
  const Rgb purse{30, 60, 200};
  const Rgb backgrounds[] = {{230, 220, 190}, {150, 200, 150}, {120, 120, 140}};
  const int centres[][2] = {{30, 28}, {34, 36}, {28, 34}};
  for (int i = 0; i < 3; ++i) {
    Image8 img = disc_image(64, 64, backgrounds[i], perfume, centres[i][0], centres[i][1], 12);
    // The nearby purse: a square in a corner, never part of the subject mask.
    for (int y = 48; y < 60; ++y) {
      for (int x = 4; x < 16; ++x) {
        for (int c = 0; c < 3; ++c) img(y, x, c) = purse[c];
      }
    }
    char name[16];
    std::snprintf(name, sizeof name, "%02d.png", i);
    write_png(dir / "refs" / "perfume" / name, img);
    write_mask_png(dir / "masks" / (image_hash(img) + ".png"), disc_mask(64, 64, centres[i][0], centres[i][1], 12));
  }

  const json manifest = {{"subjects",
                          {{{"id", "perfume"},
                            {"class_name", "perfume"},
                            {"identifier_token", "[v]"},
                            {"image_dir", "refs/perfume"},
                            {"prompts", {"a [v] perfume on a beach", "a [v] perfume in the snow"}}}}},
                         {"images_per_prompt", 2},
                         {"backend", "tiny"},
                         {"total_images", 4}};
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");

  const json script = {
      {"responses",
       {{"case2", {"a {class_name} next to a purse on a table"}},
        {"case3", {"a {class_name} next to a small blue leather purse on a wooden table"}},
        {"case4", {"a red glass {class_name} bottle next to a small blue leather purse on a wooden table"}}}}};
  write_text_file(dir / "vlm_script.json", script.dump(2) + "\n");

  const json config = {{"manifest", "manifest.json"},
                       {"output_dir", "out"},
                       {"case", "case3"},
                       {"vlm", {{"provider", "scripted"}, {"model", "scripted"}, {"options", {{"script", "vlm_script.json"}}}}},
                       {"segmenter", {{"kind", "fixture"}, {"dir", "masks"}}},
                       {"encoder", {{"id", "pixel-8"}}},
                       {"backend", {{"adapter", "tiny"}}},
                       {"tune", {{"method", "dreambooth"}, {"iterations", 10}, {"seed", 7}}},
                       {"sample", {{"images_per_prompt", 2}, {"height", 64}, {"width", 64}}},
                       {"metrics", {{"subject_resolution", 64}}},
                       {"attn", {{"token", "[v]"}, {"resolution", 64}}},
                       {"jobs", 1}};
  write_text_file(dir / "config.json", config.dump(2) + "\n");
  return dir / "config.json";
}

std::map<std::string, std::string> tree_hashes(const fs::path& root, const std::vector<std::string>& skip) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), root).generic_string();
    bool skipped = false;
    for (const auto& s : skip) skipped = skipped || rel.rfind(s, 0) == 0;
    if (skipped) continue;
    const auto bytes = read_file_bytes(e.path());
    out[rel] = sha256_hex(std::span<const std::uint8_t>(bytes.data(), bytes.size()));
  }
  return out;
}

}  // namespace sid::testkit
