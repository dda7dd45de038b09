#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sid/image.hpp"

namespace sid {

/// Incremental SHA-256.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::span<const std::uint8_t> bytes);
  Sha256& update(std::string_view text);
  /// Length-prefixed update, so that ("ab","c") and ("a","bc") differ.
  Sha256& update_field(std::string_view text);
  Sha256& update(const Image8& image);
  std::string hex_digest();

 private:
  struct State;
  std::unique_ptr<State> state_;
};

std::string sha256_hex(std::string_view text);
std::string sha256_hex(std::span<const std::uint8_t> bytes);

/// Digest over dimensions and raw pixel bytes.
std::string image_hash(const Image8& image);

/// First 8 bytes of a SHA-256 digest as an integer, for seeding generators.
std::uint64_t hash_to_u64(std::string_view text);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace sid
