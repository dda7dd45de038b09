#include <gtest/gtest.h>

#include <random>

#include "sid/hash.hpp"
#include "support.hpp"

using namespace sid;

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Sha256, IncrementalEqualsOneShot) {
  Sha256 h;
  h.update("ab").update("c");
  EXPECT_EQ(h.hex_digest(), sha256_hex("abc"));
}

TEST(Sha256, FieldsAreLengthPrefixed) {
  Sha256 a;
  a.update_field("ab").update_field("c");
  Sha256 b;
  b.update_field("a").update_field("bc");
  EXPECT_NE(a.hex_digest(), b.hex_digest());
}

TEST(Sha256, ImageHashSeesShape) {
  const Image8 a(2, 3, 1, 7);
  const Image8 b(3, 2, 1, 7);
  EXPECT_NE(image_hash(a), image_hash(b));
  EXPECT_EQ(image_hash(a), image_hash(Image8(2, 3, 1, 7)));
}

TEST(Base64, KnownVectors) {
  const std::string text = "foobar";
  const std::vector<std::uint8_t> bytes(text.begin(), text.end());
  EXPECT_EQ(base64_encode(std::span(bytes).first(0)), "");
  EXPECT_EQ(base64_encode(std::span(bytes).first(1)), "Zg==");
  EXPECT_EQ(base64_encode(std::span(bytes).first(2)), "Zm8=");
  EXPECT_EQ(base64_encode(bytes), "Zm9vYmFy");
}

TEST(Base64, RandomRoundTrip) {
  std::mt19937 rng(5);
  std::uniform_int_distribution<int> byte(0, 255);
  for (int n = 0; n < 40; ++n) {
    std::vector<std::uint8_t> data(static_cast<std::size_t>(n));
    for (auto& b : data) b = static_cast<std::uint8_t>(byte(rng));
    EXPECT_EQ(base64_decode(base64_encode(data)), data) << n;
  }
}
