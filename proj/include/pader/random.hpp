#pragma once

#include <sodium.h>

#include <array>
#include <cstdint>
#include <span>
#include <string_view>

#include "pader/bigint.hpp"

namespace pader {

inline void ensure_sodium() {
  static const bool ok = sodium_init() >= 0;
  if (!ok) throw Error("libsodium initialization failed");
}

// ChaCha20 keystream generator. Deterministic for a given seed so protocol
// runs and transcripts can be replayed; from_entropy() keys it from the OS.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    ensure_sodium();
    std::array<std::uint8_t, 8> s{};
    for (int i = 0; i < 8; ++i) s[i] = static_cast<std::uint8_t>(seed >> (8 * i));
    crypto_generichash(key_.data(), key_.size(), s.data(), s.size(), nullptr, 0);
  }

  static Rng from_entropy() {
    ensure_sodium();
    Rng r;
    randombytes_buf(r.key_.data(), r.key_.size());
    return r;
  }

  // Independent stream bound to `label`; the parent stream is not advanced.
  Rng fork(std::string_view label) const {
    Rng r;
    crypto_generichash(r.key_.data(), r.key_.size(),
                       reinterpret_cast<const unsigned char*>(label.data()), label.size(),
                       key_.data(), key_.size());
    return r;
  }

  void fill(std::span<std::uint8_t> out) {
    for (auto& b : out) {
      if (pos_ == buf_.size()) refill();
      b = buf_[pos_++];
    }
  }

  std::uint64_t next_u64() {
    std::array<std::uint8_t, 8> b{};
    fill(b);
    std::uint64_t v = 0;
    for (auto x : b) v = (v << 8) | x;
    return v;
  }

  // Uniform on [0, bound) by rejection sampling.
  std::uint64_t below(std::uint64_t bound) {
    if (bound == 0) throw ParameterError("empty sampling range");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    for (;;) {
      std::uint64_t v = next_u64();
      if (v < limit) return v % bound;
    }
  }

  BigInt bits(std::size_t nbits) {
    std::vector<std::uint8_t> b((nbits + 7) / 8);
    fill(b);
    if (nbits % 8 != 0 && !b.empty()) b[0] &= static_cast<std::uint8_t>((1u << (nbits % 8)) - 1);
    return from_bytes(b);
  }

  // Uniform on [0, bound) by rejection sampling.
  BigInt below(const BigInt& bound) {
    if (bound <= 0) throw ParameterError("empty sampling range");
    const std::size_t nb = bit_length(bound);
    for (;;) {
      BigInt v = bits(nb);
      if (v < bound) return v;
    }
  }

  // Uniform on Z*_n.
  BigInt unit_mod(const BigInt& n) {
    for (;;) {
      BigInt r = below(n);
      if (r == 0) continue;
      BigInt g;
      mpz_gcd(g.get_mpz_t(), r.get_mpz_t(), n.get_mpz_t());
      if (g == 1) return r;
    }
  }

 private:
  Rng() = default;

  void refill() {
    std::array<std::uint8_t, crypto_stream_chacha20_NONCEBYTES> nonce{};
    for (std::size_t i = 0; i < nonce.size(); ++i) {
      nonce[i] = static_cast<std::uint8_t>(counter_ >> (8 * i));
    }
    ++counter_;
    crypto_stream_chacha20(buf_.data(), buf_.size(), nonce.data(), key_.data());
    pos_ = 0;
  }

  std::array<std::uint8_t, crypto_stream_chacha20_KEYBYTES> key_{};
  std::array<std::uint8_t, 1024> buf_{};
  std::size_t pos_ = buf_.size();
  std::uint64_t counter_ = 0;
};

}  // namespace pader
