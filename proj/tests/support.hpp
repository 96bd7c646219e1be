#pragma once

#include <map>
#include <memory>

#include "pader/paillier.hpp"

namespace pader::testing {

// Keys are expensive at 2048 bits, so each binary generates them once.
inline const paillier::KeyPair& cached_keys(std::size_t bits, std::uint64_t seed = 7) {
  static std::map<std::pair<std::size_t, std::uint64_t>, std::unique_ptr<paillier::KeyPair>> cache;
  auto& slot = cache[{bits, seed}];
  if (!slot) {
    Rng rng(seed * 1000003 + bits);
    slot = std::make_unique<paillier::KeyPair>(paillier::keygen(bits, rng));
  }
  return *slot;
}

}  // namespace pader::testing

#include <random>

#include "pader/circuit.hpp"

namespace pader::testing {

struct RandomCircuit {
  Circuit circuit;
  Assignments values;
};

// Expression tree of depth <= max_depth over variables a0..a2 (A) and b0..b2
// (B), with occasional constants. Values lie on the 2^-scale_bits grid so the
// fixed-point encoding is exact.
inline RandomCircuit random_circuit(std::mt19937_64& gen, unsigned max_depth, double range = 8.0,
                                    unsigned scale_bits = 23, bool on_grid = true) {
  RandomCircuit rc;
  std::uniform_real_distribution<double> val(-range, range);
  auto draw = [&] {
    double x = val(gen);
    if (on_grid) x = std::ldexp(std::nearbyint(std::ldexp(x, scale_bits)), -static_cast<int>(scale_bits));
    if (std::fabs(x) >= range) x = 0.0;
    return x;
  };
  for (int i = 0; i < 3; ++i) {
    rc.values["a" + std::to_string(i)] = draw();
    rc.values["b" + std::to_string(i)] = draw();
  }
  auto build = [&](auto&& self, unsigned depth) -> std::size_t {
    if (depth == 0 || gen() % 4 == 0) {
      Party owner = gen() % 2 ? Party::A : Party::B;
      if (gen() % 10 == 0) return rc.circuit.constant(owner, draw());
      std::string var = std::string(owner == Party::A ? "a" : "b") + std::to_string(gen() % 3);
      return rc.circuit.input(owner, var);
    }
    std::size_t l = self(self, depth - 1);
    std::size_t r = self(self, depth - 1);
    return gen() % 2 ? rc.circuit.add(l, r) : rc.circuit.mul(l, r);
  };
  build(build, max_depth);
  return rc;
}

}  // namespace pader::testing

#include <set>

#include "pader/secure_ops.hpp"

namespace pader::testing {

inline std::unique_ptr<Session> make_session(std::size_t key_bits = 512, std::uint64_t seed = 1,
                                             EncodingParams params = {23, 80}, bool audit = true) {
  SessionOptions opts;
  opts.params = params;
  opts.seed = seed;
  opts.audit = audit;
  opts.threads = 2;
  auto s = std::make_unique<Session>(cached_keys(key_bits), std::make_unique<LoopbackChannel>(), opts);
  s->channel().record_transcript(true);
  return s;
}

// Walks the audit log and transcript; returns a description of every
// violation found (empty when the run was clean).
//  - every masked decryption at A matches exactly one mask B recorded, and
//    equals Dec(original) + mask (slot-wise for packed masks);
//  - masks are inside their declared ranges;
//  - no ciphertext A sends repeats one it received or sent before.
inline std::vector<std::string> hygiene_violations(Session& s, const paillier::SecretKey& sk) {
  std::vector<std::string> bad;
  Audit* audit = s.audit();
  if (!audit) return {"session was not audited"};
  std::map<std::string, std::size_t> by_ct;
  for (std::size_t i = 0; i < audit->masks.size(); ++i) {
    const auto& m = audit->masks[i];
    by_ct[to_hex(m.masked.value)] = i;
    if (m.masks.size() != m.moduli.size()) bad.push_back("mask record without moduli");
    for (std::size_t j = 0; j < m.masks.size(); ++j) {
      if (m.masks[j] < 0 || m.masks[j] >= m.moduli[j]) bad.push_back("mask outside its range");
    }
  }
  std::set<std::size_t> used;
  for (const auto& d : audit->decryptions) {
    if (d.purpose != DecryptPurpose::MaskedIntermediate) continue;
    auto it = by_ct.find(to_hex(d.ct.value));
    if (it == by_ct.end()) {
      bad.push_back("A decrypted an intermediate that B never masked");
      continue;
    }
    if (!used.insert(it->second).second) bad.push_back("mask used for two decryptions");
    const auto& m = audit->masks[it->second];
    BigInt orig = paillier::decrypt(sk, m.original);
    if (!m.layout) {
      if (d.plaintext != mod_floor(orig + m.masks[0], sk.pub.n)) bad.push_back("scalar masked value mismatch");
    } else {
      auto got = unpack(d.plaintext, *m.layout, m.masks.size());
      auto raw = unpack(orig, *m.layout, m.masks.size());
      for (std::size_t j = 0; j < got.size(); ++j) {
        if (got[j] != raw[j] + m.masks[j]) bad.push_back("packed masked value mismatch");
      }
    }
  }
  std::set<std::string> received, sent;
  for (const auto& e : s.channel().transcript()) {
    if (e.frame.type != MessageType::Cipher && e.frame.type != MessageType::CipherBatch) continue;
    for (const auto& c : wire::read_ciphers(s.pk(), e.frame)) {
      const std::string h = to_hex(c.value);
      if (e.direction == Direction::BtoA) {
        received.insert(h);
      } else {
        if (received.count(h)) bad.push_back("A echoed a ciphertext it received");
        if (!sent.insert(h).second) bad.push_back("A sent the same ciphertext twice");
      }
    }
  }
  return bad;
}

}  // namespace pader::testing
