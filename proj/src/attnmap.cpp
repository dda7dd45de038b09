#include "sid/attnmap.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <set>

#include <json.hpp>

#include "sid/error.hpp"
#include "sid/image_io.hpp"

namespace sid::attn {
namespace fs = std::filesystem;
using nlohmann::json;

void AttentionCapture::add(int step, int layer, int head, std::vector<Plane<double>> per_token) {
  if (static_cast<int>(per_token.size()) != num_tokens_) {
    throw InvalidArgument("attention capture: expected one map per token");
  }
  entries_.push_back({step, layer, head, std::move(per_token)});
}

void AttentionCapture::visit(int token_index,
                             const std::function<void(int, int, int, const Plane<double>&)>& fn) const {
  for (const auto& e : entries_) fn(e.step, e.layer, e.head, e.per_token.at(static_cast<std::size_t>(token_index)));
}

std::vector<AttentionRecord> record_attention(const AttentionSource& source, int token_index) {
  if (!source.has_attention_hooks()) throw AdapterError("backend does not expose attention hooks");
  if (token_index < 0 || token_index >= source.num_tokens()) {
    throw InvalidArgument("token_index " + std::to_string(token_index) + " out of range [0, " +
                          std::to_string(source.num_tokens()) + ")");
  }
  std::vector<AttentionRecord> out;
  source.visit(token_index, [&](int step, int layer, int head, const Plane<double>& map) {
    if (map.size() == 0) throw AdapterError("empty attention map");
    if ((map < 0.0).any() || (map > 1.0).any() || !map.allFinite()) {
      throw AdapterError("attention probabilities outside [0, 1]");
    }
    out.push_back({step, layer, head, token_index, map});
  });
  return out;
}

AveragedMap average_maps(std::span<const AttentionRecord> records, int target_height, int target_width,
                         std::string token) {
  if (records.empty()) throw InvalidArgument("no attention records to average");
  Plane<double> sum = Plane<double>::Zero(target_height, target_width);
  for (const auto& r : records) sum += resize_bilinear(r.map, target_height, target_width);

  AveragedMap out;
  out.raw = sum / static_cast<double>(records.size());
  out.token = std::move(token);
  out.num_records = static_cast<int>(records.size());
  const double lo = out.raw.minCoeff();
  const double hi = out.raw.maxCoeff();
  if (hi - lo > 0.0) {
    out.map = (out.raw - lo) / (hi - lo);
    out.normalization = Normalization::kMinMax;
  } else {
    out.map = out.raw;
    out.normalization = Normalization::kNone;
    out.constant = true;
  }
  return out;
}

std::array<double, 3> jet_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  auto channel = [&](double center) { return 255.0 * std::clamp(1.5 - std::abs(4.0 * v - center), 0.0, 1.0); };
  return {channel(3.0), channel(2.0), channel(1.0)};
}

Image8 overlay(const AveragedMap& map, const Image8& image, double alpha) {
  if (image.empty()) throw InvalidArgument("overlay: empty image");
  const Image8 rgb = to_rgb(image);
  const Plane<double> heat = resize_bilinear(map.map, rgb.height(), rgb.width());
  Image8 out(rgb.height(), rgb.width(), 3);
  for (int y = 0; y < rgb.height(); ++y) {
    for (int x = 0; x < rgb.width(); ++x) {
      const auto color = jet_color(heat(y, x));
      for (int c = 0; c < 3; ++c) {
        const double blended = (1.0 - alpha) * rgb(y, x, c) + alpha * color[static_cast<std::size_t>(c)];
        out(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::floor(blended + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

void save_records(const fs::path& dir, std::span<const AttentionRecord> records, const std::string& token) {
  std::vector<unsigned char> bytes;
  json index_records = json::array();
  std::set<int> steps;
  std::set<int> layers;
  std::set<int> heads;
  std::set<std::pair<int, int>> resolutions;
  for (const auto& r : records) {
    index_records.push_back({{"step", r.step},
                             {"layer", r.layer},
                             {"head", r.head},
                             {"height", r.map.rows()},
                             {"width", r.map.cols()},
                             {"offset", bytes.size() / 4}});
    steps.insert(r.step);
    layers.insert(r.layer);
    heads.insert(r.head);
    resolutions.insert({static_cast<int>(r.map.rows()), static_cast<int>(r.map.cols())});
    for (Eigen::Index i = 0; i < r.map.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(r.map.data()[i]));
      for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<unsigned char>(bits >> (8 * b)));
    }
  }
  json res = json::array();
  for (const auto& [h, w] : resolutions) res.push_back({h, w});
  const json index = {{"token", token},
                      {"token_index", records.empty() ? -1 : records.front().token_index},
                      {"steps", steps.size()},
                      {"layers", layers.size()},
                      {"heads", heads.size()},
                      {"resolutions", res},
                      {"dtype", "float32-le"},
                      {"records", index_records}};
  write_file_bytes(dir / "records.bin", bytes);
  write_text_file(dir / "index.json", index.dump(2) + "\n");
}

std::vector<AttentionRecord> load_records(const fs::path& dir) {
  const auto bytes = read_file_bytes(dir / "records.bin");
  json index;
  try {
    index = json::parse(read_text_file(dir / "index.json"));
  } catch (const json::exception& e) {
    throw IoError((dir / "index.json").string() + ": " + e.what());
  }
  std::vector<AttentionRecord> out;
  const int token_index = index.value("token_index", 0);
  for (const auto& entry : index.at("records")) {
    AttentionRecord r;
    r.step = entry.at("step").get<int>();
    r.layer = entry.at("layer").get<int>();
    r.head = entry.at("head").get<int>();
    r.token_index = token_index;
    const int h = entry.at("height").get<int>();
    const int w = entry.at("width").get<int>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    if ((offset + static_cast<std::size_t>(h) * w) * 4 > bytes.size()) throw IoError("records.bin truncated");
    r.map.resize(h, w);
    for (Eigen::Index i = 0; i < r.map.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(bytes[(offset + static_cast<std::size_t>(i)) * 4 + b]) << (8 * b);
      }
      r.map.data()[i] = std::bit_cast<float>(bits);
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace sid::attn
