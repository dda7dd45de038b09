#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sid/image.hpp"

namespace sid::segment {

/// Binary subject mask: 1 = subject pixel, 0 = everything else.
struct SubjectMask {
  MaskGrid mask;
  int source_image_index = 0;
  std::string class_name;
  std::optional<double> confidence;
};

/// One candidate instance returned by a segmenter backend.
struct InstanceProposal {
  MaskGrid mask;
  double score = 1.0;
};

/// Text-conditioned instance segmenter (e.g. a grounded detector + SAM).
///
/// Calls go through segment_subject(), which serializes them on call_mutex()
/// unless the backend reports itself thread-safe.
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual std::string name() const = 0;
  virtual std::vector<InstanceProposal> propose(const Image8& image, std::string_view class_name) = 0;
  /// Instances scoring below this are dropped before the union.
  virtual double score_threshold() const { return 0.0; }
  virtual bool thread_safe() const { return false; }

  std::mutex& call_mutex() { return mutex_; }

 private:
  std::mutex mutex_;
};

/// Union of all proposals above the backend threshold. Throws
/// InvalidArgument("subject not found") when the union is empty.
SubjectMask segment_subject(const Image8& image, std::string_view class_name, Segmenter& segmenter,
                            int image_index = 0);

/// Elementwise product; unselected pixels become 0.
Image8 apply_mask(const Image8& image, const MaskGrid& mask);

MaskGrid complement(const MaskGrid& mask);

bool is_empty(const MaskGrid& mask);

struct Box {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;
};

/// Tight bounding box of the nonzero pixels, or nullopt for an empty mask.
std::optional<Box> bounding_box(const MaskGrid& mask);

/// Crops the mask's bounding box, pads it with black to a square whose
/// centre is the mask centroid, and resamples to target x target (bilinear).
/// A symmetric subject gets symmetric padding.
Image8 center_align_resize(const Image8& masked_image, const MaskGrid& mask, int target_resolution);

// Segmenter backends -------------------------------------------------------

/// Wraps a callable; used as the oracle in tests.
class OracleSegmenter : public Segmenter {
 public:
  using Fn = std::function<std::vector<InstanceProposal>(const Image8&, std::string_view)>;
  explicit OracleSegmenter(Fn fn, std::string name = "oracle") : fn_(std::move(fn)), name_(std::move(name)) {}

  /// Returns an all-ones mask the size of the input.
  static std::unique_ptr<OracleSegmenter> full_frame();

  std::string name() const override { return name_; }
  std::vector<InstanceProposal> propose(const Image8& image, std::string_view class_name) override {
    return fn_(image, class_name);
  }
  bool thread_safe() const override { return true; }

 private:
  Fn fn_;
  std::string name_;
};

/// Marks as subject every pixel that differs from the border's dominant
/// colour by more than `tolerance` in some channel. Suited to synthetic
/// scenes with a flat background.
class ChromaKeySegmenter : public Segmenter {
 public:
  explicit ChromaKeySegmenter(int tolerance = 24) : tolerance_(tolerance) {}
  std::string name() const override { return "chroma-key"; }
  std::vector<InstanceProposal> propose(const Image8& image, std::string_view class_name) override;
  bool thread_safe() const override { return true; }

 private:
  int tolerance_;
};

/// Looks up `<dir>/<image sha256>.png` masks prepared ahead of time.
class FixtureSegmenter : public Segmenter {
 public:
  explicit FixtureSegmenter(std::filesystem::path dir) : dir_(std::move(dir)) {}
  std::string name() const override { return "fixture"; }
  std::vector<InstanceProposal> propose(const Image8& image, std::string_view class_name) override;
  bool thread_safe() const override { return true; }

 private:
  std::filesystem::path dir_;
};

/// Out-of-process segmenter. stdin: {"class_name", "image_png_base64"};
/// stdout: {"instances": [{"mask_png_base64", "score"}]}.
class CommandSegmenter : public Segmenter {
 public:
  CommandSegmenter(std::vector<std::string> argv, double threshold, int timeout_s = 300)
      : argv_(std::move(argv)), threshold_(threshold), timeout_s_(timeout_s) {}
  std::string name() const override { return "command"; }
  std::vector<InstanceProposal> propose(const Image8& image, std::string_view class_name) override;
  double score_threshold() const override { return threshold_; }

 private:
  std::vector<std::string> argv_;
  double threshold_;
  int timeout_s_;
};

/// {"kind": "full" | "chroma" | "fixture" | "command", ...}
std::unique_ptr<Segmenter> make_segmenter(const nlohmann::json& config);

/// `<stem>.png` (1-bit) plus `<stem>.json` {image_index, class_name, confidence}.
void save_mask(const std::filesystem::path& stem, const SubjectMask& mask);
SubjectMask load_mask(const std::filesystem::path& stem);

}  // namespace sid::segment
