#pragma once

#include <cstdint>
#include <string>

namespace ksl {

std::string sha256_hex(const void* data, std::size_t n);
std::string sha256_hex(const std::string& s);
std::uint64_t sha256_u64(const std::string& s);

}  // namespace ksl
