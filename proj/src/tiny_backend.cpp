#include <algorithm>
#include <cmath>
#include <cstdio>

#include "sid/error.hpp"
#include "sid/hash.hpp"
#include "sid/image_io.hpp"
#include "sid/tune.hpp"

namespace sid::tune {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kStep = 0.05;

// splitmix64: portable, unlike the standard distributions.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

using Rgb = std::array<double, 3>;

Rgb to_rgb_array(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

int word_count(std::string_view text) {
  int n = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = c == ' ';
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace

json TinyBackend::fine_tune(const FineTuneRequest& request) {
  if (request.images.empty()) throw InvalidArgument("tiny: no training images");
  Rgb subject_target{};
  Rgb background_target{};
  for (const auto& raw : request.images) {
    const Image8 img = to_rgb(raw);
    const int h = img.height();
    const int w = img.width();
    for (int c = 0; c < 3; ++c) {
      const auto plane = img.channel(c).cast<double>();
      const double total = plane.sum();
      const double inner = plane.block(h / 4, w / 4, h - 2 * (h / 4), w - 2 * (w / 4)).sum();
      const double inner_n = static_cast<double>((h - 2 * (h / 4)) * (w - 2 * (w / 4)));
      const double outer_n = static_cast<double>(h * w) - inner_n;
      subject_target[c] += inner / inner_n;
      background_target[c] += outer_n > 0 ? (total - inner) / outer_n : inner / inner_n;
    }
  }
  const double n = static_cast<double>(request.images.size());
  for (int c = 0; c < 3; ++c) {
    subject_target[c] /= n;
    background_target[c] /= n;
  }

  // Gradient descent on the squared colour error, one step per iteration.
  Rgb subject{127.5, 127.5, 127.5};
  Rgb background{127.5, 127.5, 127.5};
  for (int it = 0; it < request.config.iterations; ++it) {
    for (int c = 0; c < 3; ++c) {
      subject[c] -= kStep * (subject[c] - subject_target[c]);
      background[c] -= kStep * (background[c] - background_target[c]);
    }
  }

  double mean_words = 0.0;
  for (const auto& t : request.texts) mean_words += word_count(t);
  mean_words /= static_cast<double>(request.texts.size());
  const double leak = 1.0 / (1.0 + std::max(0.0, mean_words - 3.0) / 4.0);

  const json weights = {{"subject_rgb", subject},
                        {"background_rgb", background},
                        {"leak", leak},
                        {"mean_words", mean_words},
                        {"iterations", request.config.iterations},
                        {"step", kStep}};
  write_text_file(request.handle_dir / "weights.json", weights.dump(2) + "\n");
  return {{"effective_learning_rate", kStep}, {"weights", "weights.json"}};
}

SampleOutput TinyBackend::sample(const ModelHandle& handle, const SampleRequest& request) {
  const fs::path weights_path = handle.dir / "weights.json";
  if (!fs::exists(weights_path)) throw AdapterError("tiny: handle has no weights.json");
  json weights;
  try {
    weights = json::parse(read_text_file(weights_path));
  } catch (const json::exception& e) {
    throw AdapterError(std::string("tiny: bad weights: ") + e.what());
  }
  const Rgb subject = to_rgb_array(weights.at("subject_rgb"));
  const Rgb learned_bg = to_rgb_array(weights.at("background_rgb"));
  const double leak = weights.at("leak").get<double>();
  const std::string rare = handle.metadata.value("rare_token", std::string("sks"));
  const std::string model_key = handle.metadata.value("args_hash", std::string());

  const auto& cfg = request.config;
  const int h = cfg.height;
  const int w = cfg.width;
  SampleOutput out;
  out.seeds = cfg.resolved_seeds();
  out.tokens = split_words(request.prompt);
  const int num_tokens = static_cast<int>(out.tokens.size());
  const auto rare_it = std::find(out.tokens.begin(), out.tokens.end(), rare);
  const int rare_index = rare_it == out.tokens.end() ? -1 : static_cast<int>(rare_it - out.tokens.begin());

  Stream context(hash_to_u64("context|" + request.prompt));
  const Rgb scene{40 + 175 * context.uniform(), 40 + 175 * context.uniform(), 40 + 175 * context.uniform()};

  for (const std::int64_t seed : out.seeds) {
    Stream rng(hash_to_u64(model_key + "|" + request.prompt + "|" + std::to_string(seed)));
    const double cy = (0.3 + 0.4 * rng.uniform()) * h;
    const double cx = (0.3 + 0.4 * rng.uniform()) * w;
    const double radius = (0.15 + 0.1 * rng.uniform()) * std::min(h, w);
    Rgb bg;
    for (int c = 0; c < 3; ++c) bg[c] = leak * learned_bg[c] + (1.0 - leak) * scene[c];

    Image8 img(h, w, 3);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double dy = y + 0.5 - cy;
        const double dx = x + 0.5 - cx;
        const bool inside = dy * dy + dx * dx <= radius * radius;
        for (int c = 0; c < 3; ++c) {
          const double base = inside ? subject[c] : bg[c];
          const double v = base + 16.0 * (rng.uniform() - 0.5);
          img(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
        }
      }
    }
    out.images.push_back(std::move(img));

    if (!request.capture_attention) continue;
    auto capture = std::make_shared<attn::AttentionCapture>(num_tokens);
    for (int step = 0; step < cfg.steps; ++step) {
      for (int layer = 0; layer < kLayers; ++layer) {
        const int res_h = std::max(2, h / (8 >> layer));
        const int res_w = std::max(2, w / (8 >> layer));
        for (int head = 0; head < kHeads; ++head) {
          std::vector<Plane<double>> maps(static_cast<std::size_t>(num_tokens), Plane<double>(res_h, res_w));
          std::vector<double> logits(static_cast<std::size_t>(num_tokens));
          for (int y = 0; y < res_h; ++y) {
            for (int x = 0; x < res_w; ++x) {
              const double py = (y + 0.5) * h / res_h - cy;
              const double px = (x + 0.5) * w / res_w - cx;
              const double near = std::exp(-(py * py + px * px) / (2.0 * radius * radius));
              for (int t = 0; t < num_tokens; ++t) {
                double l = 0.5 * rng.uniform();
                if (t == rare_index) l += 3.0 * near;
                if (rare_index >= 0 && t == rare_index + 1) l += 2.0 * near;
                if (t != rare_index && t != rare_index + 1) l += 1.0 * (1.0 - near);
                logits[static_cast<std::size_t>(t)] = l;
              }
              const double peak = *std::max_element(logits.begin(), logits.end());
              double z = 0.0;
              for (auto& l : logits) z += (l = std::exp(l - peak));
              for (int t = 0; t < num_tokens; ++t) {
                maps[static_cast<std::size_t>(t)](y, x) = logits[static_cast<std::size_t>(t)] / z;
              }
            }
          }
          capture->add(step, layer, head, std::move(maps));
        }
      }
    }
    out.attention.push_back(std::move(capture));
  }
  return out;
}

}  // namespace sid::tune
