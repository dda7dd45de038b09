#include "sid/segment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "sid/error.hpp"
#include "sid/hash.hpp"
#include "sid/image_io.hpp"
#include "sid/process.hpp"

namespace sid::segment {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require_same_dims(const Image8& image, const MaskGrid& mask) {
  if (image.height() != mask.rows() || image.width() != mask.cols()) {
    throw InvalidArgument("mask/image shape mismatch: " + std::to_string(mask.rows()) + "x" +
                          std::to_string(mask.cols()) + " vs " + std::to_string(image.height()) + "x" +
                          std::to_string(image.width()));
  }
}

double sample_zero_padded(const Plane<std::uint8_t>& p, double y, double x) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0;
  const double fx = x - x0;
  auto at = [&](int yy, int xx) -> double {
    if (yy < 0 || xx < 0 || yy >= p.rows() || xx >= p.cols()) return 0.0;
    return p(yy, xx);
  };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
         fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
}

}  // namespace

SubjectMask segment_subject(const Image8& image, std::string_view class_name, Segmenter& segmenter,
                            int image_index) {
  if (class_name.empty()) throw InvalidArgument("empty class_name");
  if (image.empty()) throw InvalidArgument("empty image");
  std::vector<InstanceProposal> proposals;
  if (segmenter.thread_safe()) {
    proposals = segmenter.propose(image, class_name);
  } else {
    std::lock_guard lock(segmenter.call_mutex());
    proposals = segmenter.propose(image, class_name);
  }
  SubjectMask out;
  out.mask = MaskGrid::Zero(image.height(), image.width());
  out.source_image_index = image_index;
  out.class_name = std::string(class_name);
  for (const auto& p : proposals) {
    if (p.score < segmenter.score_threshold()) continue;
    require_same_dims(image, p.mask);
    out.mask = (out.mask != 0 || p.mask != 0).cast<std::uint8_t>();
    out.confidence = std::max(out.confidence.value_or(0.0), p.score);
  }
  if (is_empty(out.mask)) throw InvalidArgument("subject not found: " + out.class_name);
  return out;
}

Image8 apply_mask(const Image8& image, const MaskGrid& mask) {
  require_same_dims(image, mask);
  Image8 out = image;
  for (int c = 0; c < out.channels(); ++c) {
    out.channel(c) = (mask != 0).select(image.channel(c), std::uint8_t{0});
  }
  return out;
}

MaskGrid complement(const MaskGrid& mask) { return (mask == 0).cast<std::uint8_t>(); }

bool is_empty(const MaskGrid& mask) { return mask.size() == 0 || !(mask != 0).any(); }

std::optional<Box> bounding_box(const MaskGrid& mask) {
  int top = static_cast<int>(mask.rows());
  int left = static_cast<int>(mask.cols());
  int bottom = -1;
  int right = -1;
  for (int y = 0; y < mask.rows(); ++y) {
    for (int x = 0; x < mask.cols(); ++x) {
      if (mask(y, x) == 0) continue;
      top = std::min(top, y);
      bottom = std::max(bottom, y);
      left = std::min(left, x);
      right = std::max(right, x);
    }
  }
  if (bottom < 0) return std::nullopt;
  return Box{top, left, bottom - top + 1, right - left + 1};
}

Image8 center_align_resize(const Image8& masked_image, const MaskGrid& mask, int target) {
  require_same_dims(masked_image, mask);
  if (target < 1) throw InvalidArgument("target resolution must be >= 1");
  const auto box = bounding_box(mask);
  if (!box) throw InvalidArgument("empty mask");

  double cy = 0;
  double cx = 0;
  long count = 0;
  for (int y = 0; y < box->height; ++y) {
    for (int x = 0; x < box->width; ++x) {
      if (mask(box->top + y, box->left + x) == 0) continue;
      cy += y;
      cx += x;
      ++count;
    }
  }
  cy /= static_cast<double>(count);
  cx /= static_cast<double>(count);

  const double need = std::max({static_cast<double>(box->height), static_cast<double>(box->width),
                                2 * cy + 1, 2 * (box->height - 1 - cy) + 1, 2 * cx + 1,
                                2 * (box->width - 1 - cx) + 1});
  const int side = static_cast<int>(std::ceil(need - 1e-9));
  const double off_y = (side - 1) / 2.0 - cy;
  const double off_x = (side - 1) / 2.0 - cx;
  const double scale = static_cast<double>(side) / target;

  Image8 out(target, target, masked_image.channels());
  for (int c = 0; c < masked_image.channels(); ++c) {
    const Plane<std::uint8_t> crop =
        masked_image.channel(c).block(box->top, box->left, box->height, box->width);
    for (int v = 0; v < target; ++v) {
      const double sy = std::clamp((v + 0.5) * scale - 0.5, 0.0, side - 1.0) - off_y;
      for (int u = 0; u < target; ++u) {
        const double sx = std::clamp((u + 0.5) * scale - 0.5, 0.0, side - 1.0) - off_x;
        const double value = sample_zero_padded(crop, sy, sx);
        out(v, u, c) = static_cast<std::uint8_t>(std::clamp(std::floor(value + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::unique_ptr<OracleSegmenter> OracleSegmenter::full_frame() {
  return std::make_unique<OracleSegmenter>(
      [](const Image8& image, std::string_view) {
        return std::vector<InstanceProposal>{{MaskGrid::Ones(image.height(), image.width()), 1.0}};
      },
      "full-frame");
}

std::vector<InstanceProposal> ChromaKeySegmenter::propose(const Image8& image, std::string_view) {
  const Image8 rgb = to_rgb(image);
  std::map<std::array<int, 3>, int> votes;
  const int h = rgb.height();
  const int w = rgb.width();
  auto vote = [&](int y, int x) { ++votes[{rgb(y, x, 0), rgb(y, x, 1), rgb(y, x, 2)}]; };
  for (int x = 0; x < w; ++x) {
    vote(0, x);
    vote(h - 1, x);
  }
  for (int y = 0; y < h; ++y) {
    vote(y, 0);
    vote(y, w - 1);
  }
  const auto bg = std::max_element(votes.begin(), votes.end(), [](const auto& a, const auto& b) {
                    return a.second < b.second;
                  })->first;
  MaskGrid mask = MaskGrid::Zero(h, w);
  for (int c = 0; c < 3; ++c) {
    const auto diff = (rgb.channel(c).cast<int>() - bg[static_cast<std::size_t>(c)]).abs();
    mask = (mask != 0 || diff > tolerance_).cast<std::uint8_t>();
  }
  if (is_empty(mask)) return {};
  return {{std::move(mask), 1.0}};
}

std::vector<InstanceProposal> FixtureSegmenter::propose(const Image8& image, std::string_view) {
  const fs::path file = dir_ / (image_hash(image) + ".png");
  if (!fs::exists(file)) return {};
  return {{read_mask_png(file), 1.0}};
}

std::vector<InstanceProposal> CommandSegmenter::propose(const Image8& image, std::string_view class_name) {
  const json request = {{"class_name", class_name},
                        {"image_png_base64", base64_encode(encode_png(to_rgb(image)))}};
  const auto result = run_process(argv_, request.dump(), std::chrono::seconds(timeout_s_));
  if (result.timed_out) throw AdapterError("segmenter command timed out");
  if (result.exit_code != 0) {
    throw AdapterError("segmenter command exited " + std::to_string(result.exit_code) + ": " + result.err);
  }
  std::vector<InstanceProposal> out;
  try {
    const json reply = json::parse(result.out);
    for (const auto& inst : reply.at("instances")) {
      const auto png = base64_decode(inst.at("mask_png_base64").get<std::string>());
      const Image8 decoded = decode_image(png);
      out.push_back({(decoded.channel(0) >= 128).cast<std::uint8_t>(), inst.value("score", 1.0)});
    }
  } catch (const json::exception& e) {
    throw AdapterError(std::string("malformed segmenter reply: ") + e.what());
  }
  return out;
}

std::unique_ptr<Segmenter> make_segmenter(const json& config) {
  const std::string kind = config.value("kind", std::string("chroma"));
  if (kind == "full") return OracleSegmenter::full_frame();
  if (kind == "chroma") return std::make_unique<ChromaKeySegmenter>(config.value("tolerance", 24));
  if (kind == "fixture") return std::make_unique<FixtureSegmenter>(config.at("dir").get<std::string>());
  if (kind == "command") {
    return std::make_unique<CommandSegmenter>(config.at("argv").get<std::vector<std::string>>(),
                                              config.value("threshold", 0.3), config.value("timeout_s", 300));
  }
  throw InvalidArgument("unknown segmenter kind: " + kind);
}

void save_mask(const fs::path& stem, const SubjectMask& mask) {
  write_mask_png(fs::path(stem).concat(".png"), mask.mask);
  json meta = {{"image_index", mask.source_image_index}, {"class_name", mask.class_name}};
  meta["confidence"] = mask.confidence ? json(*mask.confidence) : json(nullptr);
  write_text_file(fs::path(stem).concat(".json"), meta.dump(2) + "\n");
}

SubjectMask load_mask(const fs::path& stem) {
  SubjectMask out;
  out.mask = read_mask_png(fs::path(stem).concat(".png"));
  const fs::path meta_path = fs::path(stem).concat(".json");
  try {
    const json meta = json::parse(read_text_file(meta_path));
    out.source_image_index = meta.at("image_index").get<int>();
    out.class_name = meta.at("class_name").get<std::string>();
    if (!meta.at("confidence").is_null()) out.confidence = meta.at("confidence").get<double>();
  } catch (const json::exception& e) {
    throw IoError(meta_path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace sid::segment
