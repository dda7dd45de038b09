#include <gtest/gtest.h>

#include <cstring>
#include <limits>
#include <random>

#include "sid/embed.hpp"
#include "support.hpp"

using namespace sid;
using namespace sid::embed;

namespace {

class CountingEncoder : public Encoder {
 public:
  std::string id() const override { return "counting"; }
  RawVector encode_image(const Image8& image) override {
    ++image_calls;
    RawVector v(3);
    v << image(0, 0, 0) + 1.0f, 2.0f, 0.5f;
    return v;
  }
  RawVector encode_text(std::string_view text) override {
    ++text_calls;
    RawVector v(3);
    v << static_cast<float>(text.size()), 1.0f, 0.0f;
    return v;
  }
  int image_calls = 0;
  int text_calls = 0;
};

}  // namespace

TEST(Normalize, UnitNormAndDegenerateInputs) {
  RawVector v(2);
  v << 3.0f, 4.0f;
  const auto e = normalize(v, Modality::kImage, "x");
  EXPECT_NEAR(e.values.norm(), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(e.values(0), 0.6);
  EXPECT_THROW(normalize(RawVector::Zero(4), Modality::kImage, "x"), InvalidArgument);
  RawVector bad(2);
  bad << std::numeric_limits<float>::infinity(), 1.0f;
  EXPECT_THROW(normalize(bad, Modality::kText, "x"), InvalidArgument);
}

TEST(EmbedText, EmptyTextIsRejected) {
  CountingEncoder enc;
  EXPECT_THROW(embed_text("   ", enc), InvalidArgument);
  EXPECT_EQ(embed_text("ab", enc).modality, Modality::kText);
}

TEST(BatchEmbed, PreservesOrderAcrossBatchSizes) {
  CountingEncoder enc;
  std::vector<Image8> images;
  for (int i = 0; i < 7; ++i) images.emplace_back(2, 2, 3, static_cast<std::uint8_t>(10 * i));
  const auto one = batch_embed(std::span<const Image8>(images), enc, 1);
  const auto three = batch_embed(std::span<const Image8>(images), enc, 3);
  ASSERT_EQ(one.size(), 7u);
  for (std::size_t i = 0; i < images.size(); ++i) {
    EXPECT_EQ(one[i].values, three[i].values);
    EXPECT_EQ(one[i].values, embed_image(images[i], enc).values);
  }
  EXPECT_THROW(batch_embed(std::span<const Image8>(images), enc, 0), InvalidArgument);
}

TEST(BatchEmbed, ErrorNamesTheItem) {
  MockEncoder enc(
      "m",
      [](const Image8& img) { return img(0, 0, 0) == 0 ? RawVector(RawVector::Zero(2)) : RawVector(RawVector::Ones(2)); },
      [](std::string_view) { return RawVector(RawVector::Ones(2)); });
  std::vector<Image8> images = {Image8(1, 1, 3, 5), Image8(1, 1, 3, 0)};
  try {
    batch_embed(std::span<const Image8>(images), enc, 4);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("item 1"), std::string::npos) << e.what();
  }
}

TEST(PixelEncoder, SelfSimilarityAndDimension) {
  PixelEncoder enc(8);
  std::mt19937 rng(9);
  const Image8 img = testkit::random_image(rng, 30, 20);
  const auto e = embed_image(img, enc);
  EXPECT_EQ(e.dim(), 192);
  EXPECT_NEAR(e.values.dot(embed_image(img, enc).values), 1.0, 1e-12);
  EXPECT_EQ(enc.id(), "pixel-8");
  EXPECT_EQ(embed_text("a dog", enc).dim(), 192);
}

TEST(CachedEncoder, ReloadIsBitExactAndSkipsInner) {
  testkit::TempDir dir;
  std::mt19937 rng(10);
  const Image8 img = testkit::random_image(rng, 12, 12);
  RawVector first;
  {
    CachedEncoder cache(std::make_unique<PixelEncoder>(4), dir.path());
    first = cache.encode_image(img);
  }
  auto inner = std::make_unique<CountingEncoder>();
  auto* counter = inner.get();
  CachedEncoder other(std::move(inner), dir.path());
  other.encode_text("fresh");
  EXPECT_EQ(counter->text_calls, 1);
  other.encode_text("fresh");
  EXPECT_EQ(counter->text_calls, 1);

  CachedEncoder again(std::make_unique<PixelEncoder>(4), dir.path());
  const RawVector second = again.encode_image(img);
  ASSERT_EQ(first.size(), second.size());
  EXPECT_EQ(std::memcmp(first.data(), second.data(), sizeof(float) * static_cast<std::size_t>(first.size())), 0);
}

TEST(RawVector, FileRoundTrip) {
  testkit::TempDir dir;
  RawVector v(4);
  v << 1.5f, -0.0f, 3.25e-8f, -7.0f;
  write_raw_vector(dir / "v.f32", v);
  const RawVector back = read_raw_vector(dir / "v.f32");
  EXPECT_EQ(std::memcmp(v.data(), back.data(), 16), 0);
}

TEST(CommandEncoder, SpeaksTheProtocol) {
  const char* script =
      "import json,sys\n"
      "r=json.load(sys.stdin)\n"
      "out=[[float(len(x)), 1.0] for x in r['items']]\n"
      "print(json.dumps({'embeddings': out}))\n";
  CommandEncoder enc("fake", {"python3", "-c", script}, "m", 60);
  const std::vector<std::string> texts = {"a", "abc"};
  const auto v = enc.encode_texts(texts);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_FLOAT_EQ(v[1][0], 3.0f);
}

TEST(LoadEncoder, KnownIds) {
  EXPECT_EQ(load_encoder("pixel-4")->id(), "pixel-4");
  EXPECT_EQ(load_encoder("clip-vit-b-32")->id(), "clip-vit-b-32");
  EXPECT_THROW(load_encoder("no-such-encoder"), InvalidArgument);
}

TEST(StackRows, DimensionMismatch) {
  std::vector<EmbeddingVector> v = {{Eigen::VectorXd::Ones(2), Modality::kImage, "x"},
                                    {Eigen::VectorXd::Ones(3), Modality::kImage, "x"}};
  EXPECT_THROW(stack_rows(v), InvalidArgument);
}
