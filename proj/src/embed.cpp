#include "sid/embed.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <sstream>

#include "sid/error.hpp"
#include "sid/hash.hpp"
#include "sid/image_io.hpp"
#include "sid/process.hpp"

#ifndef SID_SOURCE_DIR
#define SID_SOURCE_DIR "."
#endif

namespace sid::embed {
namespace fs = std::filesystem;
using nlohmann::json;

std::vector<RawVector> Encoder::encode_images(std::span<const Image8> images) {
  std::vector<RawVector> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(encode_image(img));
  return out;
}

std::vector<RawVector> Encoder::encode_texts(std::span<const std::string> texts) {
  std::vector<RawVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(encode_text(t));
  return out;
}

EmbeddingVector normalize(const RawVector& raw, Modality modality, std::string encoder_id) {
  const Eigen::VectorXd v = raw.cast<double>();
  const double norm = v.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw InvalidArgument("degenerate embedding");
  return EmbeddingVector{v / norm, modality, std::move(encoder_id)};
}

EmbeddingVector embed_image(const Image8& image, Encoder& encoder) {
  if (image.empty()) throw InvalidArgument("empty image");
  return normalize(encoder.encode_image(image), Modality::kImage, encoder.id());
}

EmbeddingVector embed_text(std::string_view text, Encoder& encoder) {
  if (text.find_first_not_of(" \t\n\r") == std::string_view::npos) throw InvalidArgument("empty text");
  return normalize(encoder.encode_text(text), Modality::kText, encoder.id());
}

namespace {

template <typename Item, typename EncodeBatch>
std::vector<EmbeddingVector> batched(std::span<const Item> items, Encoder& encoder, int batch_size,
                                     Modality modality, EncodeBatch encode) {
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  std::vector<EmbeddingVector> out;
  out.reserve(items.size());
  for (std::size_t start = 0; start < items.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min(items.size() - start, static_cast<std::size_t>(batch_size));
    std::vector<RawVector> raw;
    try {
      raw = encode(items.subspan(start, n));
    } catch (const Error& e) {
      throw AdapterError("batch starting at item " + std::to_string(start) + ": " + e.what());
    }
    if (raw.size() != n) throw AdapterError("encoder returned the wrong number of vectors");
    for (std::size_t i = 0; i < n; ++i) {
      try {
        out.push_back(normalize(raw[i], modality, encoder.id()));
      } catch (const Error& e) {
        throw InvalidArgument("item " + std::to_string(start + i) + ": " + e.what());
      }
    }
  }
  return out;
}

}  // namespace

std::vector<EmbeddingVector> batch_embed(std::span<const Image8> images, Encoder& encoder, int batch_size) {
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].empty()) throw InvalidArgument("item " + std::to_string(i) + ": empty image");
  }
  return batched(images, encoder, batch_size, Modality::kImage,
                 [&](std::span<const Image8> chunk) { return encoder.encode_images(chunk); });
}

std::vector<EmbeddingVector> batch_embed(std::span<const std::string> texts, Encoder& encoder, int batch_size) {
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (texts[i].find_first_not_of(" \t\n\r") == std::string::npos) {
      throw InvalidArgument("item " + std::to_string(i) + ": empty text");
    }
  }
  return batched(texts, encoder, batch_size, Modality::kText,
                 [&](std::span<const std::string> chunk) { return encoder.encode_texts(chunk); });
}

Eigen::MatrixXd stack_rows(std::span<const EmbeddingVector> vectors) {
  if (vectors.empty()) return Eigen::MatrixXd(0, 0);
  const Eigen::Index d = vectors.front().dim();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(vectors.size()), d);
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].dim() != d) throw InvalidArgument("embedding dimensions differ");
    m.row(static_cast<Eigen::Index>(i)) = vectors[i].values.transpose();
  }
  return m;
}

// ---------------------------------------------------------------------------

RawVector PixelEncoder::encode_image(const Image8& image) {
  const Image8 small = resize_bilinear(to_rgb(image), side_, side_);
  RawVector v(3 * side_ * side_);
  Eigen::Index k = 0;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < side_; ++y) {
      for (int x = 0; x < side_; ++x) v[k++] = static_cast<float>(small(y, x, c)) - 127.5f;
    }
  }
  return v;
}

RawVector PixelEncoder::encode_text(std::string_view text) {
  RawVector v = RawVector::Zero(3 * side_ * side_);
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) {
    for (auto& ch : word) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    const std::uint64_t h = hash_to_u64(word);
    const auto idx = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(v.size()));
    v[idx] += ((h >> 32) & 1U) ? 1.0f : -1.0f;
  }
  return v;
}

// ---------------------------------------------------------------------------

CommandEncoder::CommandEncoder(std::string id, std::vector<std::string> argv, std::string model, int timeout_s)
    : id_(std::move(id)), argv_(std::move(argv)), model_(std::move(model)), timeout_s_(timeout_s) {
  if (argv_.empty()) throw InvalidArgument("command encoder: empty argv");
}

std::vector<RawVector> CommandEncoder::call(const json& request, std::size_t expected) {
  const auto result = run_process(argv_, request.dump(), std::chrono::seconds(timeout_s_));
  if (result.timed_out) throw AdapterError("encoder command timed out");
  if (result.exit_code != 0) {
    throw AdapterError("encoder command exited " + std::to_string(result.exit_code) + ": " + result.err);
  }
  std::vector<RawVector> out;
  try {
    const json reply = json::parse(result.out);
    for (const auto& row : reply.at("embeddings")) {
      const auto values = row.get<std::vector<float>>();
      out.push_back(Eigen::Map<const RawVector>(values.data(), static_cast<Eigen::Index>(values.size())));
    }
  } catch (const json::exception& e) {
    throw AdapterError(std::string("malformed encoder reply: ") + e.what());
  }
  if (out.size() != expected) throw AdapterError("encoder returned the wrong number of vectors");
  return out;
}

RawVector CommandEncoder::encode_image(const Image8& image) {
  return encode_images(std::span<const Image8>(&image, 1)).front();
}

RawVector CommandEncoder::encode_text(std::string_view text) {
  const std::string t(text);
  return encode_texts(std::span<const std::string>(&t, 1)).front();
}

std::vector<RawVector> CommandEncoder::encode_images(std::span<const Image8> images) {
  json items = json::array();
  for (const auto& img : images) items.push_back(base64_encode(encode_png(to_rgb(img))));
  return call({{"model", model_}, {"kind", "image"}, {"items", items}}, images.size());
}

std::vector<RawVector> CommandEncoder::encode_texts(std::span<const std::string> texts) {
  return call({{"model", model_}, {"kind", "text"}, {"items", texts}}, texts.size());
}

// ---------------------------------------------------------------------------

void write_raw_vector(const fs::path& path, const RawVector& v) {
  std::vector<unsigned char> bytes(static_cast<std::size_t>(v.size()) * 4);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(v[i]);
    for (int b = 0; b < 4; ++b) bytes[static_cast<std::size_t>(i) * 4 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  write_file_bytes(path, bytes);
}

RawVector read_raw_vector(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() % 4 != 0) throw IoError(path.string() + ": truncated vector file");
  RawVector v(static_cast<Eigen::Index>(bytes.size() / 4));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[static_cast<std::size_t>(i) * 4 + b]) << (8 * b);
    v[i] = std::bit_cast<float>(bits);
  }
  return v;
}

CachedEncoder::CachedEncoder(std::unique_ptr<Encoder> inner, fs::path dir)
    : inner_(std::move(inner)), dir_(std::move(dir)) {}

fs::path CachedEncoder::entry_path(std::string_view key) const {
  return dir_ / inner_->id() / (std::string(key) + ".f32");
}

std::string CachedEncoder::image_key(const Image8& image) {
  return Sha256().update_field("image").update(image).hex_digest();
}

std::string CachedEncoder::text_key(std::string_view text) {
  return Sha256().update_field("text").update_field(text).hex_digest();
}

RawVector CachedEncoder::encode_image(const Image8& image) {
  return encode_images(std::span<const Image8>(&image, 1)).front();
}

RawVector CachedEncoder::encode_text(std::string_view text) {
  const std::string t(text);
  return encode_texts(std::span<const std::string>(&t, 1)).front();
}

namespace {

template <typename Item, typename KeyFn, typename EncodeFn>
std::vector<RawVector> cached_batch(const CachedEncoder& cache, std::span<const Item> items, KeyFn key_of,
                                    EncodeFn encode) {
  std::vector<RawVector> out(items.size());
  std::vector<Item> missing;
  std::vector<std::size_t> missing_index;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const fs::path p = cache.entry_path(key_of(items[i]));
    if (fs::exists(p)) {
      out[i] = read_raw_vector(p);
    } else {
      missing.push_back(items[i]);
      missing_index.push_back(i);
    }
  }
  if (!missing.empty()) {
    const auto fresh = encode(std::span<const Item>(missing));
    for (std::size_t k = 0; k < fresh.size() && k < missing.size(); ++k) {
      write_raw_vector(cache.entry_path(key_of(missing[k])), fresh[k]);
      out[missing_index[k]] = fresh[k];
    }
  }
  return out;
}

}  // namespace

std::vector<RawVector> CachedEncoder::encode_images(std::span<const Image8> images) {
  return cached_batch(*this, images, image_key,
                      [&](std::span<const Image8> chunk) { return inner_->encode_images(chunk); });
}

std::vector<RawVector> CachedEncoder::encode_texts(std::span<const std::string> texts) {
  return cached_batch(*this, texts, [](const std::string& t) { return text_key(t); },
                      [&](std::span<const std::string> chunk) { return inner_->encode_texts(chunk); });
}

// ---------------------------------------------------------------------------

std::unique_ptr<Encoder> load_encoder(std::string_view id, const json& options) {
  std::unique_ptr<Encoder> encoder;
  const std::string name(id);
  if (name.rfind("pixel-", 0) == 0) {
    encoder = std::make_unique<PixelEncoder>(std::stoi(name.substr(6)));
  } else if (name == kDefaultEncoderId || options.contains("argv")) {
    std::vector<std::string> argv = {"python3", std::string(SID_SOURCE_DIR) + "/tools/clip_embed.py"};
    if (options.contains("argv")) argv = options.at("argv").get<std::vector<std::string>>();
    const std::string model = options.value("model", std::string("openai/clip-vit-base-patch32"));
    encoder = std::make_unique<CommandEncoder>(name, std::move(argv), model, options.value("timeout_s", 600));
  } else {
    throw InvalidArgument("unknown encoder id: " + name);
  }
  if (options.contains("cache_dir")) {
    encoder = std::make_unique<CachedEncoder>(std::move(encoder), options.at("cache_dir").get<std::string>());
  }
  return encoder;
}

}  // namespace sid::embed
