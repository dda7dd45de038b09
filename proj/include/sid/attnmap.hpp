#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sid/image.hpp"

namespace sid::attn {

/// Post-softmax cross-attention probabilities of one token, for one
/// (step, layer, head), at the layer's native resolution.
struct AttentionRecord {
  int step = 0;
  int layer = 0;
  int head = 0;
  int token_index = 0;
  Plane<double> map;
};

enum class Normalization { kNone, kMinMax };

struct AveragedMap {
  Plane<double> map;  // display map (min-max normalized unless constant)
  Plane<double> raw;  // unweighted mean before normalization
  std::string token;
  int num_records = 0;
  Normalization normalization = Normalization::kNone;
  bool constant = false;
};

/// A sampler run that exposes per-layer cross-attention probabilities.
class AttentionSource {
 public:
  virtual ~AttentionSource() = default;
  virtual bool has_attention_hooks() const = 0;
  virtual int num_tokens() const = 0;
  /// Visits every (step, layer, head) map of `token_index`.
  virtual void visit(int token_index,
                     const std::function<void(int step, int layer, int head, const Plane<double>& map)>& fn) const = 0;
};

/// In-memory capture filled by a backend while sampling. Each entry holds the
/// maps for every token at one (step, layer, head).
class AttentionCapture : public AttentionSource {
 public:
  explicit AttentionCapture(int num_tokens) : num_tokens_(num_tokens) {}

  void add(int step, int layer, int head, std::vector<Plane<double>> per_token);

  bool has_attention_hooks() const override { return true; }
  int num_tokens() const override { return num_tokens_; }
  void visit(int token_index,
             const std::function<void(int, int, int, const Plane<double>&)>& fn) const override;

 private:
  struct Entry {
    int step;
    int layer;
    int head;
    std::vector<Plane<double>> per_token;
  };
  int num_tokens_;
  std::vector<Entry> entries_;
};

/// One record per (step, layer, head). Throws on a source without hooks, an
/// out-of-range token, or probabilities outside [0, 1].
std::vector<AttentionRecord> record_attention(const AttentionSource& source, int token_index);

/// Bilinear resample of every record to the target grid, unweighted mean,
/// then min-max normalization (a constant mean is left as is and flagged).
AveragedMap average_maps(std::span<const AttentionRecord> records, int target_height, int target_width,
                         std::string token = {});

/// Jet colormap, channels in [0, 255] as reals: 0 -> dark blue, 1 -> dark red.
std::array<double, 3> jet_color(double value);

/// Colorizes the map (resampled to the image size) and blends:
/// out = round((1 - alpha) * image + alpha * color).
Image8 overlay(const AveragedMap& map, const Image8& image, double alpha = 0.5);

/// `<dir>/records.bin` (float32 little-endian, records back to back) and
/// `<dir>/index.json` {token, token_index, steps, layers, heads, resolutions, records}.
void save_records(const std::filesystem::path& dir, std::span<const AttentionRecord> records,
                  const std::string& token);
std::vector<AttentionRecord> load_records(const std::filesystem::path& dir);

}  // namespace sid::attn
