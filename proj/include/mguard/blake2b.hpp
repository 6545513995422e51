#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mguard {

// Unkeyed BLAKE2b with a configurable digest length (1..64 bytes).
// The digest length is part of the parameter block, so an 8-byte digest
// is not a truncation of the 64-byte one.
class Blake2b {
 public:
  explicit Blake2b(std::size_t digest_size = 64);

  void update(std::span<const std::uint8_t> data);
  void update(std::string_view data);
  std::vector<std::uint8_t> finalize();

  static std::vector<std::uint8_t> hash(std::string_view data, std::size_t digest_size);

 private:
  void compress(bool last);

  std::array<std::uint64_t, 8> h_{};
  std::array<std::uint8_t, 128> buf_{};
  std::size_t buf_len_ = 0;
  std::uint64_t t0_ = 0;
  std::uint64_t t1_ = 0;
  std::size_t digest_size_;
  bool finalized_ = false;
};

using Fingerprint = std::uint64_t;

// 8-byte BLAKE2b digest of the UTF-8 bytes, read as a little-endian integer.
Fingerprint fingerprint(std::string_view normalized_text);

std::string to_hex(std::span<const std::uint8_t> bytes);
std::string fingerprint_hex(Fingerprint fp);

}  // namespace mguard
