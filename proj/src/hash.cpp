#include "ksl/hash.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <stdexcept>

namespace ksl {

namespace {

void digest(const void* data, std::size_t n, unsigned char* out, unsigned int* len) {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) throw std::runtime_error("sha256: context allocation failed");
    bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
              EVP_DigestUpdate(ctx, data, n) == 1 && EVP_DigestFinal_ex(ctx, out, len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) throw std::runtime_error("sha256: digest failed");
}

}  // namespace

std::string sha256_hex(const void* data, std::size_t n) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    digest(data, n, md, &len);
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        hex += buf;
    }
    return hex;
}

std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

std::uint64_t sha256_u64(const std::string& s) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    digest(s.data(), s.size(), md, &len);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | md[i];
    return v;
}

}  // namespace ksl
