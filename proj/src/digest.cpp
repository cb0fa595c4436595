#include "mtkd/digest.hpp"

#include <openssl/evp.h>

#include <stdexcept>

namespace mtkd {

std::array<std::uint8_t, 32> sha256_bytes(std::string_view data) {
  std::array<std::uint8_t, 32> out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(),
                 nullptr) != 1 ||
      len != out.size()) {
    throw std::runtime_error("sha256_bytes: digest computation failed");
  }
  return out;
}

std::string hex_string(const std::array<std::uint8_t, 32>& bytes) {
  static const char* kHex = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (std::uint8_t b : bytes) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0x0f]);
  }
  return out;
}

}  // namespace mtkd
