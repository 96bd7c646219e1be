#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "pader/bigint.hpp"
#include "pader/parallel.hpp"
#include "pader/random.hpp"

namespace pader::paillier {

inline constexpr unsigned kDefaultThreads = 8;

struct PublicKey {
  BigInt n;
  BigInt n_squared;
  BigInt g;
  std::size_t key_bits = 0;
  std::uint64_t id = 0;  // fingerprint of n, used to reject cross-key operations

  static PublicKey from_modulus(const BigInt& n, std::size_t key_bits) {
    if (bit_length(n) != key_bits) throw ParameterError("modulus bit length does not match key_bits");
    PublicKey pk;
    pk.n = n;
    pk.n_squared = n * n;
    pk.g = n + 1;
    pk.key_bits = key_bits;
    ensure_sodium();
    auto bytes = to_bytes_minimal(n);
    std::array<std::uint8_t, 8> h{};
    crypto_generichash(h.data(), h.size(), bytes.data(), bytes.size(), nullptr, 0);
    for (auto b : h) pk.id = (pk.id << 8) | b;
    return pk;
  }

  std::size_t ciphertext_bytes() const { return 2 * key_bits / 8; }

  bool operator==(const PublicKey& o) const { return n == o.n && key_bits == o.key_bits; }
};

struct SecretKey {
  PublicKey pub;
  BigInt p, q;
  BigInt lambda;  // lcm(p-1, q-1)
  BigInt mu;      // lambda^-1 mod n (g = n+1)

  // CRT material.
  BigInt p_squared, q_squared;
  BigInt hp, hq;          // inverses of L_p(g^(p-1)), L_q(g^(q-1))
  BigInt q_inv_p;         // q^-1 mod p
  BigInt q2_inv_p2;       // (q^2)^-1 mod p^2
  BigInt q_mod_pm1;       // q mod (p-1)
  BigInt p_mod_qm1;       // p mod (q-1)

  static SecretKey from_primes(const BigInt& p_in, const BigInt& q_in, std::size_t key_bits) {
    if (p_in == q_in) throw ParameterError("p and q must differ");
    SecretKey sk;
    sk.p = p_in;
    sk.q = q_in;
    sk.pub = PublicKey::from_modulus(p_in * q_in, key_bits);
    BigInt pm1 = sk.p - 1, qm1 = sk.q - 1;
    mpz_lcm(sk.lambda.get_mpz_t(), pm1.get_mpz_t(), qm1.get_mpz_t());
    sk.mu = invert(sk.lambda, sk.pub.n);
    sk.p_squared = sk.p * sk.p;
    sk.q_squared = sk.q * sk.q;
    sk.hp = invert(l_fn(powm(sk.pub.g, pm1, sk.p_squared), sk.p), sk.p);
    sk.hq = invert(l_fn(powm(sk.pub.g, qm1, sk.q_squared), sk.q), sk.q);
    sk.q_inv_p = invert(sk.q, sk.p);
    sk.q2_inv_p2 = invert(sk.q_squared, sk.p_squared);
    sk.q_mod_pm1 = mod_floor(sk.q, pm1);
    sk.p_mod_qm1 = mod_floor(sk.p, qm1);
    return sk;
  }

  static BigInt l_fn(const BigInt& x, const BigInt& d) { return (x - 1) / d; }
};

struct KeyPair {
  PublicKey pub;
  SecretKey sec;
};

struct Ciphertext {
  BigInt value;
  std::uint64_t key_id = 0;

  bool operator==(const Ciphertext& o) const { return key_id == o.key_id && value == o.value; }
};

namespace detail {

inline BigInt random_prime(std::size_t bits, Rng& rng) {
  for (;;) {
    BigInt c = rng.bits(bits);
    mpz_setbit(c.get_mpz_t(), bits - 1);
    mpz_setbit(c.get_mpz_t(), bits - 2);
    mpz_setbit(c.get_mpz_t(), 0);
    // 40 Miller-Rabin rounds bound the error by 4^-40 = 2^-80.
    if (mpz_probab_prime_p(c.get_mpz_t(), 40) != 0) return c;
  }
}

inline void check_key(const PublicKey& pk, const Ciphertext& c) {
  if (c.key_id != pk.id) throw KeyMismatch("ciphertext belongs to a different key");
}

// r^n mod n^2 using the factorization. Mod p^2, r^n depends only on r mod p
// and equals the p-th power of r^q mod p, so both exponents are half size.
inline BigInt crt_nth_power(const SecretKey& sk, const BigInt& r) {
  BigInt a = powm(powm(mod_floor(r, sk.p), sk.q_mod_pm1, sk.p), sk.p, sk.p_squared);
  BigInt b = powm(powm(mod_floor(r, sk.q), sk.p_mod_qm1, sk.q), sk.q, sk.q_squared);
  BigInt t = mod_floor((a - b) * sk.q2_inv_p2, sk.p_squared);
  return b + sk.q_squared * t;
}

inline void check_plaintext(const PublicKey& pk, const BigInt& x) {
  if (x < 0 || x >= pk.n) throw RangeError("plaintext outside [0, n)");
}

}  // namespace detail

inline KeyPair keygen(std::size_t key_bits, Rng& rng) {
  if (key_bits < 512 || key_bits % 2 != 0) {
    throw ParameterError("key_bits must be even and at least 512");
  }
  const std::size_t half = key_bits / 2;
  BigInt p = detail::random_prime(half, rng);
  BigInt q;
  do {
    q = detail::random_prime(half, rng);
  } while (q == p);
  SecretKey sk = SecretKey::from_primes(p, q, key_bits);
  return KeyPair{sk.pub, sk};
}

inline Ciphertext encrypt_with_factor(const PublicKey& pk, const BigInt& x, const BigInt& r) {
  detail::check_plaintext(pk, x);
  BigInt c = mod_floor((1 + x * pk.n) * powm(r, pk.n, pk.n_squared), pk.n_squared);
  return Ciphertext{c, pk.id};
}

inline Ciphertext encrypt(const PublicKey& pk, const BigInt& x, Rng& rng) {
  return encrypt_with_factor(pk, x, rng.unit_mod(pk.n));
}

// Same ciphertexts as the public-key path for the same r, several times faster.
inline Ciphertext encrypt(const SecretKey& sk, const BigInt& x, Rng& rng) {
  const PublicKey& pk = sk.pub;
  detail::check_plaintext(pk, x);
  BigInt rn = detail::crt_nth_power(sk, rng.unit_mod(pk.n));
  return Ciphertext{mod_floor((1 + x * pk.n) * rn, pk.n_squared), pk.id};
}

inline BigInt decrypt(const SecretKey& sk, const Ciphertext& c) {
  const PublicKey& pk = sk.pub;
  detail::check_key(pk, c);
  if (c.value <= 0 || c.value >= pk.n_squared) throw MalformedCiphertext("ciphertext outside (0, n^2)");
  BigInt g;
  mpz_gcd(g.get_mpz_t(), c.value.get_mpz_t(), pk.n.get_mpz_t());
  if (g != 1) throw MalformedCiphertext("ciphertext not coprime to n^2");
  BigInt mp = mod_floor(SecretKey::l_fn(powm(c.value, sk.p - 1, sk.p_squared), sk.p) * sk.hp, sk.p);
  BigInt mq = mod_floor(SecretKey::l_fn(powm(c.value, sk.q - 1, sk.q_squared), sk.q) * sk.hq, sk.q);
  return mq + sk.q * mod_floor((mp - mq) * sk.q_inv_p, sk.p);
}

inline Ciphertext hom_add(const PublicKey& pk, const Ciphertext& a, const Ciphertext& b) {
  detail::check_key(pk, a);
  detail::check_key(pk, b);
  return Ciphertext{mod_floor(a.value * b.value, pk.n_squared), pk.id};
}

inline Ciphertext ct_pt_mul(const PublicKey& pk, const Ciphertext& c, const BigInt& k) {
  detail::check_key(pk, c);
  detail::check_plaintext(pk, k);
  return Ciphertext{powm(c.value, k, pk.n_squared), pk.id};
}

// Enc(-x) for a ciphertext of x.
inline Ciphertext negate(const PublicKey& pk, const Ciphertext& c) {
  detail::check_key(pk, c);
  return Ciphertext{invert(c.value, pk.n_squared), pk.id};
}

inline Ciphertext rerandomize(const PublicKey& pk, const Ciphertext& c, Rng& rng) {
  detail::check_key(pk, c);
  BigInt rn = powm(rng.unit_mod(pk.n), pk.n, pk.n_squared);
  return Ciphertext{mod_floor(c.value * rn, pk.n_squared), pk.id};
}

inline Ciphertext rerandomize(const SecretKey& sk, const Ciphertext& c, Rng& rng) {
  detail::check_key(sk.pub, c);
  BigInt rn = detail::crt_nth_power(sk, rng.unit_mod(sk.pub.n));
  return Ciphertext{mod_floor(c.value * rn, sk.pub.n_squared), sk.pub.id};
}

// Random factors are drawn sequentially so output is independent of `threads`.
template <typename Key>
std::vector<Ciphertext> encrypt_batch(const Key& key, std::span<const BigInt> xs, Rng& rng,
                                      unsigned threads = kDefaultThreads) {
  const PublicKey& pk = [&]() -> const PublicKey& {
    if constexpr (std::is_same_v<Key, SecretKey>) return key.pub;
    else return key;
  }();
  std::vector<BigInt> factors;
  factors.reserve(xs.size());
  for (const auto& x : xs) {
    detail::check_plaintext(pk, x);
    factors.push_back(rng.unit_mod(pk.n));
  }
  std::vector<Ciphertext> out(xs.size());
  parallel_for(xs.size(), threads, [&](std::size_t i) {
    BigInt rn;
    if constexpr (std::is_same_v<Key, SecretKey>) rn = detail::crt_nth_power(key, factors[i]);
    else rn = powm(factors[i], pk.n, pk.n_squared);
    out[i] = Ciphertext{mod_floor((1 + xs[i] * pk.n) * rn, pk.n_squared), pk.id};
  });
  return out;
}

inline std::vector<BigInt> decrypt_batch(const SecretKey& sk, std::span<const Ciphertext> cs,
                                         unsigned threads = kDefaultThreads) {
  std::vector<BigInt> out(cs.size());
  parallel_for(cs.size(), threads, [&](std::size_t i) { out[i] = decrypt(sk, cs[i]); });
  return out;
}

inline std::vector<std::uint8_t> serialize(const PublicKey& pk, const Ciphertext& c) {
  detail::check_key(pk, c);
  return to_bytes_fixed(c.value, pk.ciphertext_bytes());
}

inline Ciphertext deserialize(const PublicKey& pk, std::span<const std::uint8_t> bytes) {
  if (bytes.size() != pk.ciphertext_bytes()) throw MalformedCiphertext("ciphertext has wrong width");
  BigInt v = from_bytes(bytes);
  if (v <= 0 || v >= pk.n_squared) throw MalformedCiphertext("ciphertext outside (0, n^2)");
  return Ciphertext{v, pk.id};
}

// Key files are line-oriented text:
//   pader-paillier-key v1
//   kind public|secret
//   key_bits <decimal>
//   n <hex>
//   p <hex>        (secret only)
//   q <hex>        (secret only)
namespace detail {

inline constexpr const char* kKeyMagic = "pader-paillier-key v1";

inline std::map<std::string, std::string> read_key_fields(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kKeyMagic) throw ParseError("key", 1, "missing key file header");
  std::map<std::string, std::string> fields;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto sp = line.find(' ');
    if (sp == std::string::npos) throw ParseError("key", lineno, "expected '<field> <value>'");
    if (!fields.emplace(line.substr(0, sp), line.substr(sp + 1)).second) {
      throw ParseError("key", lineno, "duplicate field");
    }
  }
  return fields;
}

inline const std::string& field(const std::map<std::string, std::string>& f, const std::string& name) {
  auto it = f.find(name);
  if (it == f.end()) throw ParseError("key", 0, "missing field '" + name + "'");
  return it->second;
}

inline std::size_t key_bits_field(const std::map<std::string, std::string>& f) {
  const std::string& v = field(f, "key_bits");
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ParseError("key", 0, "key_bits is not a decimal integer");
  }
  return std::stoul(v);
}

}  // namespace detail

inline void write_public_key(std::ostream& out, const PublicKey& pk) {
  out << detail::kKeyMagic << "\nkind public\nkey_bits " << pk.key_bits << "\nn " << to_hex(pk.n) << "\n";
}

inline void write_secret_key(std::ostream& out, const SecretKey& sk) {
  out << detail::kKeyMagic << "\nkind secret\nkey_bits " << sk.pub.key_bits << "\nn " << to_hex(sk.pub.n)
      << "\np " << to_hex(sk.p) << "\nq " << to_hex(sk.q) << "\n";
}

inline PublicKey read_public_key(std::istream& in) {
  auto f = detail::read_key_fields(in);
  std::size_t bits = detail::key_bits_field(f);
  return PublicKey::from_modulus(from_hex(detail::field(f, "n")), bits);
}

inline SecretKey read_secret_key(std::istream& in) {
  auto f = detail::read_key_fields(in);
  if (detail::field(f, "kind") != "secret") throw ParseError("key", 2, "not a secret key");
  std::size_t bits = detail::key_bits_field(f);
  SecretKey sk = SecretKey::from_primes(from_hex(detail::field(f, "p")), from_hex(detail::field(f, "q")), bits);
  if (sk.pub.n != from_hex(detail::field(f, "n"))) throw ParseError("key", 0, "n does not equal p*q");
  return sk;
}

inline void save_key_files(const KeyPair& kp, const std::string& prefix) {
  std::ofstream pub(prefix + ".pub"), sec(prefix + ".sec");
  if (!pub || !sec) throw Error("cannot open key files for writing at " + prefix);
  write_public_key(pub, kp.pub);
  write_secret_key(sec, kp.sec);
  if (!pub.flush() || !sec.flush()) throw Error("failed writing key files at " + prefix);
}

inline PublicKey load_public_key(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_public_key(in);
}

inline SecretKey load_secret_key(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_secret_key(in);
}

}  // namespace pader::paillier
