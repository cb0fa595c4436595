#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace mtkd {

std::array<std::uint8_t, 32> sha256_bytes(std::string_view data);

std::string hex_string(const std::array<std::uint8_t, 32>& bytes);

}  // namespace mtkd
