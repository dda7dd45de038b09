#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sid/image.hpp"

namespace sid::testkit {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

using Rgb = std::array<std::uint8_t, 3>;

Eigen::VectorXd random_unit(std::mt19937& rng, int dim);
Image8 random_image(std::mt19937& rng, int height, int width, int channels = 3);
MaskGrid random_mask(std::mt19937& rng, int height, int width, double density = 0.5);

/// Filled disc on a flat background.
Image8 disc_image(int height, int width, Rgb background, Rgb disc, int cy, int cx, int radius);
MaskGrid disc_mask(int height, int width, int cy, int cx, int radius);

/// Writes a small self-contained project (one "perfume" subject with three
/// references, a nearby "purse", two prompts, scripted VLM replies, oracle
/// masks and a config using the tiny backend). Returns the config path.
std::filesystem::path write_demo_project(const std::filesystem::path& dir);

/// sha256 of every regular file under `root`, keyed by relative path.
/// Paths starting with any of `skip` prefixes are left out.
std::map<std::string, std::string> tree_hashes(const std::filesystem::path& root,
                                               const std::vector<std::string>& skip = {});

}  // namespace sid::testkit
