#pragma once

#include <cmath>
#include <string>

#include "pader/bigint.hpp"

namespace pader {

// Scale factor S = 2^scale_bits and per-slot modulus Q = 2^slot_modulus_bits.
struct EncodingParams {
  unsigned scale_bits = 23;
  unsigned slot_modulus_bits = 80;

  EncodingParams() = default;
  EncodingParams(unsigned scale, unsigned slot_mod) : scale_bits(scale), slot_modulus_bits(slot_mod) {
    validate();
  }

  void validate() const {
    if (scale_bits < 1) throw ParameterError("scale factor must be at least 2");
    if (slot_modulus_bits < scale_bits + 1) throw ParameterError("slot modulus must be at least 2S");
  }

  BigInt S() const { return pow2(scale_bits); }
  BigInt Q() const { return pow2(slot_modulus_bits); }
  BigInt S_pow(unsigned level) const { return pow2(static_cast<std::size_t>(scale_bits) * level); }
};

// round-half-even(x * S), negatives as modulus - |.|.
inline BigInt encode(double x, const EncodingParams& params, const BigInt& modulus) {
  if (!std::isfinite(x)) throw OverflowError("cannot encode a non-finite value");
  // |x| < modulus / (2S), boundary rejected.
  if (mpz_cmp_d(modulus.get_mpz_t(), std::ldexp(std::fabs(x), static_cast<int>(params.scale_bits) + 1)) <= 0) {
    throw OverflowError("value " + std::to_string(x) + " exceeds the encodable range");
  }
  const double scaled = std::nearbyint(std::ldexp(x, static_cast<int>(params.scale_bits)));
  BigInt v(scaled);
  if (2 * abs(v) >= modulus) throw OverflowError("value " + std::to_string(x) + " rounds onto the sign boundary");
  if (v < 0) v += modulus;
  return v;
}

inline double decode(const BigInt& v_in, const EncodingParams& params, const BigInt& modulus, unsigned level) {
  BigInt v = mod_floor(v_in, modulus);
  const long shift = static_cast<long>(params.scale_bits) * level;
  if (2 * v < modulus) return ldexp_big(v, shift);
  return -ldexp_big(BigInt(modulus - v), shift);
}

// Moves a level-`from` value to level `to` by multiplying with S^(to-from).
inline BigInt align_level(const BigInt& v, const EncodingParams& params, const BigInt& modulus, unsigned from,
                          unsigned to) {
  if (to < from) throw LevelError("cannot lower the level of a fixed-point value");
  return mod_floor(v * params.S_pow(to - from), modulus);
}

}  // namespace pader
