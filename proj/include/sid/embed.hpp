#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "sid/image.hpp"

namespace sid::embed {

enum class Modality { kImage, kText };

/// Raw encoder output before normalization.
using RawVector = Eigen::VectorXf;

/// Unit-norm vector in the joint image-text space.
struct EmbeddingVector {
  Eigen::VectorXd values;
  Modality modality = Modality::kImage;
  std::string encoder_id;

  Eigen::Index dim() const { return values.size(); }
};

/// Joint image/text encoder adapter. Adapters return raw vectors; the
/// toolkit owns normalization.
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual std::string id() const = 0;
  virtual RawVector encode_image(const Image8& image) = 0;
  virtual RawVector encode_text(std::string_view text) = 0;

  virtual std::vector<RawVector> encode_images(std::span<const Image8> images);
  virtual std::vector<RawVector> encode_texts(std::span<const std::string> texts);
};

/// Throws InvalidArgument("degenerate embedding") for a zero or non-finite vector.
EmbeddingVector normalize(const RawVector& raw, Modality modality, std::string encoder_id);

EmbeddingVector embed_image(const Image8& image, Encoder& encoder);
EmbeddingVector embed_text(std::string_view text, Encoder& encoder);

/// Order-preserving; errors are rethrown with the failing item's index.
std::vector<EmbeddingVector> batch_embed(std::span<const Image8> images, Encoder& encoder, int batch_size);
std::vector<EmbeddingVector> batch_embed(std::span<const std::string> texts, Encoder& encoder, int batch_size);

/// One embedding per row.
Eigen::MatrixXd stack_rows(std::span<const EmbeddingVector> vectors);

// Adapters ---------------------------------------------------------------

/// Callable-backed encoder for tests.
class MockEncoder : public Encoder {
 public:
  using ImageFn = std::function<RawVector(const Image8&)>;
  using TextFn = std::function<RawVector(std::string_view)>;
  MockEncoder(std::string id, ImageFn image_fn, TextFn text_fn)
      : id_(std::move(id)), image_fn_(std::move(image_fn)), text_fn_(std::move(text_fn)) {}

  std::string id() const override { return id_; }
  RawVector encode_image(const Image8& image) override { return image_fn_(image); }
  RawVector encode_text(std::string_view text) override { return text_fn_(text); }

 private:
  std::string id_;
  ImageFn image_fn_;
  TextFn text_fn_;
};

/// Identity-like encoder: the image resampled to side x side RGB, centred
/// around mid-gray and flattened. Identical inputs give identical vectors.
/// Text is a signed hashed bag of words in the same space.
class PixelEncoder : public Encoder {
 public:
  explicit PixelEncoder(int side = 8) : side_(side) {}
  std::string id() const override { return "pixel-" + std::to_string(side_); }
  RawVector encode_image(const Image8& image) override;
  RawVector encode_text(std::string_view text) override;

 private:
  int side_;
};

/// Out-of-process encoder (e.g. a CLIP model served by a Python script).
/// stdin: {"model", "kind": "image"|"text", "items": [...]} with images as
/// base64 PNG; stdout: {"embeddings": [[...], ...]}.
class CommandEncoder : public Encoder {
 public:
  CommandEncoder(std::string id, std::vector<std::string> argv, std::string model, int timeout_s = 600);
  std::string id() const override { return id_; }
  RawVector encode_image(const Image8& image) override;
  RawVector encode_text(std::string_view text) override;
  std::vector<RawVector> encode_images(std::span<const Image8> images) override;
  std::vector<RawVector> encode_texts(std::span<const std::string> texts) override;

 private:
  std::vector<RawVector> call(const nlohmann::json& request, std::size_t expected);

  std::string id_;
  std::vector<std::string> argv_;
  std::string model_;
  int timeout_s_;
};

/// Content-addressed store: `<dir>/<encoder id>/<sha256(modality, input)>.f32`
/// holding the raw float32 vector (little-endian). Reloads are bit-exact.
class CachedEncoder : public Encoder {
 public:
  CachedEncoder(std::unique_ptr<Encoder> inner, std::filesystem::path dir);
  std::string id() const override { return inner_->id(); }
  RawVector encode_image(const Image8& image) override;
  RawVector encode_text(std::string_view text) override;
  std::vector<RawVector> encode_images(std::span<const Image8> images) override;
  std::vector<RawVector> encode_texts(std::span<const std::string> texts) override;

  std::filesystem::path entry_path(std::string_view key) const;
  static std::string image_key(const Image8& image);
  static std::string text_key(std::string_view text);

 private:
  std::unique_ptr<Encoder> inner_;
  std::filesystem::path dir_;
};

void write_raw_vector(const std::filesystem::path& path, const RawVector& v);
RawVector read_raw_vector(const std::filesystem::path& path);

inline constexpr std::string_view kDefaultEncoderId = "clip-vit-b-32";

/// Known ids: "clip-vit-b-32" (command adapter around tools/clip_embed.py),
/// "pixel-<n>". options: {"argv": [...], "model": ..., "cache_dir": ...}.
std::unique_ptr<Encoder> load_encoder(std::string_view id, const nlohmann::json& options = nlohmann::json::object());

}  // namespace sid::embed
