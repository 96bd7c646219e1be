#pragma once

#include <gmpxx.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pader/errors.hpp"

namespace pader {

using BigInt = mpz_class;

inline std::size_t bit_length(const BigInt& v) {
  return mpz_sgn(v.get_mpz_t()) == 0 ? 0 : mpz_sizeinbase(v.get_mpz_t(), 2);
}

inline BigInt pow2(std::size_t e) {
  BigInt r;
  mpz_setbit(r.get_mpz_t(), e);
  return r;
}

// Exact log2 of a positive power of two; throws otherwise.
inline std::size_t log2_exact(const BigInt& v) {
  if (v <= 0 || mpz_popcount(v.get_mpz_t()) != 1) {
    throw ParameterError("value is not a power of two");
  }
  return bit_length(v) - 1;
}

inline BigInt mod_floor(const BigInt& a, const BigInt& m) {
  BigInt r;
  mpz_fdiv_r(r.get_mpz_t(), a.get_mpz_t(), m.get_mpz_t());
  return r;
}

inline BigInt powm(const BigInt& base, const BigInt& exp, const BigInt& mod) {
  BigInt r;
  mpz_powm(r.get_mpz_t(), base.get_mpz_t(), exp.get_mpz_t(), mod.get_mpz_t());
  return r;
}

inline BigInt invert(const BigInt& a, const BigInt& m) {
  BigInt r;
  if (mpz_invert(r.get_mpz_t(), a.get_mpz_t(), m.get_mpz_t()) == 0) {
    throw RangeError("value is not invertible");
  }
  return r;
}

// Big-endian, left-padded to exactly `width` bytes.
inline void write_fixed(const BigInt& v, std::span<std::uint8_t> out) {
  if (v < 0 || (bit_length(v) + 7) / 8 > out.size()) {
    throw RangeError("integer does not fit fixed-width field");
  }
  std::fill(out.begin(), out.end(), std::uint8_t{0});
  std::size_t count = 0;
  std::vector<std::uint8_t> tmp((bit_length(v) + 7) / 8 + 1);
  mpz_export(tmp.data(), &count, 1, 1, 1, 0, v.get_mpz_t());
  std::copy(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(count),
            out.end() - static_cast<std::ptrdiff_t>(count));
}

inline std::vector<std::uint8_t> to_bytes_fixed(const BigInt& v, std::size_t width) {
  std::vector<std::uint8_t> out(width);
  write_fixed(v, out);
  return out;
}

// Minimal big-endian; zero encodes as the empty string.
inline std::vector<std::uint8_t> to_bytes_minimal(const BigInt& v) {
  if (v < 0) throw RangeError("negative integer cannot be serialized");
  std::vector<std::uint8_t> out((bit_length(v) + 7) / 8);
  std::size_t count = 0;
  if (!out.empty()) mpz_export(out.data(), &count, 1, 1, 1, 0, v.get_mpz_t());
  out.resize(count);
  return out;
}

inline BigInt from_bytes(std::span<const std::uint8_t> in) {
  BigInt r;
  if (!in.empty()) mpz_import(r.get_mpz_t(), in.size(), 1, 1, 1, 0, in.data());
  return r;
}

inline std::string to_hex(const BigInt& v) { return v.get_str(16); }

inline BigInt from_hex(const std::string& s) {
  BigInt r;
  if (s.empty() || r.set_str(s, 16) != 0 || r < 0) {
    throw RangeError("invalid hex integer");
  }
  return r;
}

// v / 2^shift as a double, without overflowing intermediate conversions.
inline double ldexp_big(const BigInt& v, long shift) {
  long e = 0;
  double m = mpz_get_d_2exp(&e, v.get_mpz_t());
  return std::ldexp(m, static_cast<int>(e - shift));
}

}  // namespace pader
