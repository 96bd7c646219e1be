#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "pader/fixed_point.hpp"

namespace pader {

enum class PackingMode { Exact, Approximate };

inline const char* to_string(PackingMode m) { return m == PackingMode::Exact ? "exact" : "approximate"; }

// One term coefficient * Q^q_degree * S^s_degree of a closed-form bound on the
// fixed-point value of a polynomial whose inputs are residues mod Q.
struct MonomialBound {
  BigInt coefficient;
  unsigned q_degree = 0;
  unsigned s_degree = 0;
};

struct PolynomialBound {
  std::vector<MonomialBound> terms;

  // Inputs are residues in [0, Q), so Q is evaluated at its supremum Q - 1.
  BigInt sup(const EncodingParams& params) const {
    if (terms.empty()) throw ParameterError("empty polynomial bound");
    const BigInt q_max = params.Q() - 1;
    BigInt total = 0;
    for (const auto& t : terms) {
      if (t.coefficient <= 0) throw ParameterError("bound coefficients must be positive");
      BigInt qpow;
      mpz_pow_ui(qpow.get_mpz_t(), q_max.get_mpz_t(), t.q_degree);
      total += t.coefficient * qpow * params.S_pow(t.s_degree);
    }
    return total;
  }
};

struct PackingLayout {
  std::size_t slot_bits = 0;          // P = 2^slot_bits
  std::size_t slot_modulus_bits = 0;  // Q = 2^slot_modulus_bits
  std::size_t scale_bits = 0;         // S = 2^scale_bits
  std::size_t slot_count = 0;
  PackingMode mode = PackingMode::Exact;
  unsigned level = 1;

  BigInt P() const { return pow2(slot_bits); }
  BigInt Q() const { return pow2(slot_modulus_bits); }

  // Bits at the bottom of each slot that approximate packing leaves unreliable.
  std::size_t noise_bits() const {
    return mode == PackingMode::Approximate ? (level - 1) * scale_bits : 0;
  }

  std::size_t chunks_for(std::size_t values) const { return (values + slot_count - 1) / slot_count; }

  PackingLayout with_slot_count(std::size_t n) const {
    PackingLayout l = *this;
    l.slot_count = n;
    return l;
  }

  std::string to_record() const {
    std::ostringstream os;
    os << "P=2^" << slot_bits << " Q=2^" << slot_modulus_bits << " S=2^" << scale_bits << " slots=" << slot_count
       << " mode=" << to_string(mode) << " level=" << level;
    return os.str();
  }

  bool operator==(const PackingLayout&) const = default;
};

inline PackingLayout parse_layout_record(const std::string& record) {
  PackingLayout l;
  std::istringstream is(record);
  std::string tok;
  int seen = 0;
  auto pow_field = [](const std::string& v) {
    if (v.rfind("2^", 0) != 0) throw ParseError("layout", 1, "expected 2^k, got '" + v + "'");
    return static_cast<std::size_t>(std::stoul(v.substr(2)));
  };
  while (is >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) throw ParseError("layout", 1, "malformed token '" + tok + "'");
    std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
    if (k == "P") l.slot_bits = pow_field(v);
    else if (k == "Q") l.slot_modulus_bits = pow_field(v);
    else if (k == "S") l.scale_bits = pow_field(v);
    else if (k == "slots") l.slot_count = std::stoul(v);
    else if (k == "mode") l.mode = v == "exact" ? PackingMode::Exact : PackingMode::Approximate;
    else if (k == "level") l.level = static_cast<unsigned>(std::stoul(v));
    else throw ParseError("layout", 1, "unknown field '" + k + "'");
    ++seen;
  }
  if (seen != 6) throw ParseError("layout", 1, "incomplete layout record");
  return l;
}

// Slot count treats the plaintext space as 2^plaintext_bits; the per-value
// checks below compare actual packed values against the real modulus N.
inline PackingLayout make_layout(std::size_t plaintext_bits, std::size_t slot_bits, const EncodingParams& params,
                                 PackingMode mode = PackingMode::Exact, unsigned level = 1) {
  params.validate();
  if (level < 1) throw ParameterError("level must be at least 1");
  if (slot_bits < params.slot_modulus_bits) throw ParameterError("Q must divide P");
  PackingLayout l;
  l.slot_bits = slot_bits;
  l.slot_modulus_bits = params.slot_modulus_bits;
  l.scale_bits = params.scale_bits;
  l.mode = mode;
  l.level = level;
  const std::size_t noise = l.noise_bits();
  l.slot_count = plaintext_bits > noise ? (plaintext_bits - noise) / slot_bits : 0;
  if (l.slot_count == 0) throw CannotPack("slot size 2^" + std::to_string(slot_bits) + " leaves no slots");
  return l;
}

// Rounds a slot width up to a multiple of `limb_bits` (32 for 2048-bit keys).
inline std::size_t align_slot_bits(std::size_t slot_bits, std::size_t limb_bits = 32) {
  return (slot_bits + limb_bits - 1) / limb_bits * limb_bits;
}

inline BigInt exact_slot_size(const PolynomialBound& bound, const EncodingParams& params,
                              std::size_t plaintext_bits) {
  const std::size_t bits = std::max<std::size_t>(bit_length(bound.sup(params)), params.slot_modulus_bits);
  if (bits > plaintext_bits) throw CannotPack("bound exceeds the plaintext modulus");
  return pow2(bits);
}

inline BigInt approx_slot_size(const PolynomialBound& bound, const EncodingParams& params, unsigned level,
                               std::size_t plaintext_bits) {
  if (level < 1) throw ParameterError("level must be at least 1");
  const std::size_t need = bit_length(bound.sup(params));
  const std::size_t noise = static_cast<std::size_t>(level - 1) * params.scale_bits;
  std::size_t bits = need > noise ? need - noise : 0;
  bits = std::max<std::size_t>(bits, params.slot_modulus_bits);
  if (bits + noise > plaintext_bits) throw CannotPack("bound exceeds the plaintext modulus");
  return pow2(bits);
}

// Smallest power of two Q with Q >= 2 * S^d * B, never below 2S.
inline BigInt slot_modulus(unsigned scale_bits, unsigned degree, double value_bound) {
  if (degree < 1) throw ParameterError("degree must be at least 1");
  if (!(value_bound > 0) || !std::isfinite(value_bound)) throw ParameterError("value bound must be positive");
  int e = 0;
  const double m = std::frexp(value_bound, &e);  // value_bound = m * 2^e, m in [0.5, 1)
  const long ceil_log2_b = m == 0.5 ? e - 1 : e;
  const long bits = std::max<long>(1 + static_cast<long>(degree) * scale_bits + ceil_log2_b,
                                   static_cast<long>(scale_bits) + 1);
  return pow2(static_cast<std::size_t>(bits));
}

inline BigInt pack(std::span<const BigInt> xs, const PackingLayout& layout) {
  if (xs.size() > layout.slot_count) throw CannotPack("more values than slots");
  const BigInt P = layout.P();
  BigInt out = 0;
  for (std::size_t i = xs.size(); i-- > 0;) {
    if (xs[i] < 0 || xs[i] >= P) throw SlotOverflow("slot value outside [0, P)");
    out <<= layout.slot_bits;
    out += xs[i];
  }
  return out;
}

// Raw slot contents floor(X / P^i) mod P.
inline std::vector<BigInt> unpack(const BigInt& X, const PackingLayout& layout, std::size_t count) {
  if (count > layout.slot_count) throw CannotPack("more values than slots");
  std::vector<BigInt> out(count);
  BigInt rest = X;
  for (std::size_t i = 0; i < count; ++i) {
    mpz_fdiv_r_2exp(out[i].get_mpz_t(), rest.get_mpz_t(), layout.slot_bits);
    mpz_fdiv_q_2exp(rest.get_mpz_t(), rest.get_mpz_t(), layout.slot_bits);
  }
  if (layout.mode == PackingMode::Approximate) {
    for (auto& v : out) {
      mpz_fdiv_r_2exp(v.get_mpz_t(), v.get_mpz_t(), layout.slot_modulus_bits);
      mpz_fdiv_q_2exp(v.get_mpz_t(), v.get_mpz_t(), layout.noise_bits());
      mpz_mul_2exp(v.get_mpz_t(), v.get_mpz_t(), layout.noise_bits());
    }
  }
  return out;
}

inline std::vector<BigInt> unpack(const BigInt& X, const PackingLayout& layout) {
  return unpack(X, layout, layout.slot_count);
}

// Slot contents reduced to residues mod Q, ready for decode.
inline std::vector<BigInt> unpack_residues(const BigInt& X, const PackingLayout& layout, std::size_t count) {
  auto out = unpack(X, layout, count);
  for (auto& v : out) mpz_fdiv_r_2exp(v.get_mpz_t(), v.get_mpz_t(), layout.slot_modulus_bits);
  return out;
}

// Largest integer a packed value can reach when every slot is <= slot_bound.
inline BigInt max_packed_value(const BigInt& slot_bound, const PackingLayout& layout, std::size_t count) {
  BigInt total = 0;
  for (std::size_t i = count; i-- > 0;) {
    total <<= layout.slot_bits;
    total += slot_bound;
  }
  return total;
}

inline void require_fits(const BigInt& slot_bound, const PackingLayout& layout, std::size_t count,
                         const BigInt& modulus) {
  if (layout.mode == PackingMode::Exact && slot_bound >= layout.P()) {
    throw CannotPack("slot bound 2^" + std::to_string(bit_length(slot_bound)) + " reaches P = 2^" +
                     std::to_string(layout.slot_bits));
  }
  if (max_packed_value(slot_bound, layout, count) >= modulus) {
    throw CannotPack("packed value could wrap the plaintext modulus");
  }
}

}  // namespace pader
