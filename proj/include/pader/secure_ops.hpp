#pragma once

#include "pader/circuit.hpp"
#include "pader/session.hpp"

namespace pader {

// Where the two operands of a gate live: A- or B-local plaintext, or an
// intermediate ciphertext held by B (I).
enum class OperandCase { AB, IA, IB, II };

struct GateOperands {
  VarKey i1 = 0;  // first operand (A-local in AB, intermediate otherwise)
  VarKey i2 = 0;  // second operand
  VarKey j = 0;   // result key in B's store
  unsigned level1 = 1;
  unsigned level2 = 1;
  unsigned op_level = 1;
};

namespace detail {

inline BigInt aligned(const BigInt& v, const Session& s, unsigned from, unsigned to) {
  return align_level(v, s.params(), s.N(), from, to);
}

inline paillier::Ciphertext aligned(Session& s, const paillier::Ciphertext& c, unsigned from, unsigned to) {
  if (to < from) throw LevelError("cannot lower the level of a ciphertext");
  if (to == from) return c;
  return s.b().mul(c, s.params().S_pow(to - from));
}

// A encrypts and ships one plaintext it owns; B receives it.
inline paillier::Ciphertext a_sends(Session& s, const BigInt& v) {
  paillier::Ciphertext c = s.a().encrypt(v);
  s.send_ciphers(Party::A, std::span(&c, 1));
  return s.recv_ciphers(Party::B, 1)[0];
}

}  // namespace detail

inline void secure_add(Session& s, OperandCase kase, const GateOperands& g) {
  if (g.op_level < std::max(g.level1, g.level2)) throw LevelError("addition level below operand level");
  auto& B = s.b();
  paillier::Ciphertext out;
  switch (kase) {
    case OperandCase::AB: {
      BigInt v1 = detail::aligned(s.a().store().get<PlainFixed>(g.i1).value, s, g.level1, g.op_level);
      BigInt v2 = detail::aligned(B.store().get<PlainFixed>(g.i2).value, s, g.level2, g.op_level);
      out = B.add(detail::a_sends(s, v1), B.encrypt(v2));
      break;
    }
    case OperandCase::IA: {
      const auto& c1 = B.store().get<CipherVar>(g.i1).ct;
      BigInt v2 = detail::aligned(s.a().store().get<PlainFixed>(g.i2).value, s, g.level2, g.op_level);
      out = B.add(detail::aligned(s, c1, g.level1, g.op_level), detail::a_sends(s, v2));
      break;
    }
    case OperandCase::IB: {
      const auto& c1 = B.store().get<CipherVar>(g.i1).ct;
      BigInt v2 = detail::aligned(B.store().get<PlainFixed>(g.i2).value, s, g.level2, g.op_level);
      out = B.add(detail::aligned(s, c1, g.level1, g.op_level), B.encrypt(v2));
      break;
    }
    case OperandCase::II: {
      const auto& c1 = B.store().get<CipherVar>(g.i1).ct;
      const auto& c2 = B.store().get<CipherVar>(g.i2).ct;
      out = B.add(detail::aligned(s, c1, g.level1, g.op_level), detail::aligned(s, c2, g.level2, g.op_level));
      break;
    }
  }
  B.store().put(g.j, CipherVar{out, g.op_level});
}

inline void secure_mul(Session& s, OperandCase kase, const GateOperands& g) {
  if (g.op_level != g.level1 + g.level2) throw LevelError("product level must be the sum of operand levels");
  auto& A = s.a();
  auto& B = s.b();
  const BigInt& N = s.N();
  paillier::Ciphertext out;
  switch (kase) {
    case OperandCase::AB: {
      const BigInt& v1 = A.store().get<PlainFixed>(g.i1).value;
      const BigInt& v2 = B.store().get<PlainFixed>(g.i2).value;
      out = B.mul(detail::a_sends(s, v1), v2);
      break;
    }
    case OperandCase::IA: {
      const auto& c1 = B.store().get<CipherVar>(g.i1).ct;
      const BigInt& v2 = A.store().get<PlainFixed>(g.i2).value;
      // B: c1' = c1 (+) Enc(-r)
      BigInt r = B.scalar_mask();
      paillier::Ciphertext c1m = B.add(c1, B.encrypt(N - r));
      B.record_mask({N - r}, {N}, std::nullopt, c1, c1m);
      s.send_ciphers(Party::B, std::span(&c1m, 1));
      // A: t = v1 - r, replies Enc(v2) and Enc(t * v2)
      paillier::Ciphertext got = s.recv_ciphers(Party::A, 1)[0];
      BigInt t = A.decrypt(got, DecryptPurpose::MaskedIntermediate);
      std::vector<paillier::Ciphertext> reply{A.encrypt(v2), A.rerandomize(A.encrypt(mod_floor(t * v2, N)))};
      s.send_ciphers(Party::A, reply);
      auto cs = s.recv_ciphers(Party::B, 2);
      // B: c3' (+) (c2 (x) r)
      out = B.add(cs[1], B.mul(cs[0], r));
      break;
    }
    case OperandCase::IB: {
      const auto& c1 = B.store().get<CipherVar>(g.i1).ct;
      out = B.mul(c1, B.store().get<PlainFixed>(g.i2).value);
      break;
    }
    case OperandCase::II: {
      const auto& c1 = B.store().get<CipherVar>(g.i1).ct;
      const auto& c2 = B.store().get<CipherVar>(g.i2).ct;
      BigInt r1 = B.scalar_mask(), r2 = B.scalar_mask();
      std::vector<paillier::Ciphertext> masked{B.add(c1, B.encrypt(r1)), B.add(c2, B.encrypt(r2))};
      B.record_mask({r1}, {N}, std::nullopt, c1, masked[0]);
      B.record_mask({r2}, {N}, std::nullopt, c2, masked[1]);
      s.send_ciphers(Party::B, masked);
      auto got = s.recv_ciphers(Party::A, 2);
      auto t = A.decrypt_all(got, DecryptPurpose::MaskedIntermediate);
      paillier::Ciphertext prod = A.rerandomize(A.encrypt(mod_floor(t[0] * t[1], N)));
      s.send_ciphers(Party::A, std::span(&prod, 1));
      paillier::Ciphertext c3 = s.recv_ciphers(Party::B, 1)[0];
      // Enc(t1 t2) (+) Enc(-r1 r2) (+) c1 (x) (-r2) (+) c2 (x) (-r1)
      out = B.add(B.add(c3, B.encrypt(mod_floor(-r1 * r2, N))),
                  B.add(B.mul(c1, N - r2), B.mul(c2, N - r1)));
      break;
    }
  }
  B.store().put(g.j, CipherVar{out, g.op_level});
}

struct PartyInputs {
  Assignments a;  // known to A only
  Assignments b;  // known to B only
};

struct RevealResult {
  std::optional<double> at_a;
  std::optional<double> at_b;
};

struct PolyOptions {
  double value_bound = 1e6;  // sup |f| admitted by the level guard
  VarKey key_base = 0;       // gate i lives at key_base + i in both stores
};

// Reveals a level-`level` ciphertext held by B.
inline RevealResult reveal(Session& s, const paillier::Ciphertext& c, unsigned level, RevealMode mode,
                           double value_bound) {
  auto& A = s.a();
  auto& B = s.b();
  const BigInt& N = s.N();
  RevealResult out;
  auto check = [&](double v) {
    if (!(std::fabs(v) <= value_bound)) throw OverflowError("revealed value exceeds the admitted bound");
    return v;
  };
  if (mode == RevealMode::ToB) {
    BigInt r = B.scalar_mask();
    paillier::Ciphertext masked = B.add(c, B.encrypt(r));
    B.record_mask({r}, {N}, std::nullopt, c, masked);
    s.send_ciphers(Party::B, std::span(&masked, 1));
    BigInt t = A.decrypt(s.recv_ciphers(Party::A, 1)[0], DecryptPurpose::MaskedIntermediate);
    s.send_plain(Party::A, std::span(&t, 1));
    BigInt back = s.recv_plain(Party::B, 1)[0];
    out.at_b = check(decode(mod_floor(back - r, N), s.params(), N, level));
    return out;
  }
  paillier::Ciphertext fresh = B.rerandomize(c);
  s.send_ciphers(Party::B, std::span(&fresh, 1));
  BigInt v = A.decrypt(s.recv_ciphers(Party::A, 1)[0], DecryptPurpose::FinalOutput);
  out.at_a = check(decode(v, s.params(), N, level));
  if (mode == RevealMode::ToBoth) {
    s.send_plain(Party::A, std::span(&v, 1));
    out.at_b = check(decode(s.recv_plain(Party::B, 1)[0], s.params(), N, level));
  }
  return out;
}

// Output level l is admitted only if N > 2 S^l sup|f|.
inline void level_guard(const Session& s, unsigned level, double value_bound) {
  BigInt need = 2 * s.params().S_pow(level) * BigInt(std::ceil(value_bound));
  if (need >= s.N()) {
    throw LevelError("output level " + std::to_string(level) + " does not fit the plaintext modulus");
  }
}

// Gate-by-gate secure evaluation of a compacted circuit.
inline RevealResult secure_poly(Session& s, const Circuit& c, const LevelMap& levels, const PartyInputs& inputs,
                                RevealMode mode, const PolyOptions& opts = {}) {
  c.validate();
  if (levels.size() != c.size() || levels != compute_levels(c)) throw LevelError("level map does not match circuit");
  level_guard(s, levels.back(), opts.value_bound);
  const BigInt& N = s.N();

  // Which party holds each gate's value in plaintext; nullopt = ciphertext at B.
  std::vector<std::optional<Party>> holder(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& g = c.gate(i);
    const VarKey key = opts.key_base + i;
    if (auto owner = owner_of(g)) {
      holder[i] = owner;
      VarStore& store = *owner == Party::A ? s.a().store() : s.b().store();
      const Assignments& mine = *owner == Party::A ? inputs.a : inputs.b;
      if (auto* in = std::get_if<InputGate>(&g)) {
        store.put(key, PlainFixed{encode(input_value(*in, mine), s.params(), N), 1});
      } else {
        auto fx = eval_fixed(*std::get<LocalExprGate>(g).expr, mine, s.params(), N);
        store.put(key, PlainFixed{fx.value, fx.level});
      }
      continue;
    }
    const auto& w = c.wires(i);
    std::size_t x = w[0], y = w[1];
    auto hx = holder[x], hy = holder[y];
    if (hx && hy && *hx == *hy) throw StructuralError("gate " + std::to_string(i) + " is local; compact the circuit first");
    OperandCase kase;
    if (hx && hy) {
      kase = OperandCase::AB;
      if (*hx == Party::B) std::swap(x, y);
    } else if (hx || hy) {
      if (hx) std::swap(x, y);
      kase = *holder[y] == Party::A ? OperandCase::IA : OperandCase::IB;
    } else {
      kase = OperandCase::II;
    }
    GateOperands ops{opts.key_base + x, opts.key_base + y, key, levels[x], levels[y], levels[i]};
    if (std::holds_alternative<AddGate>(g)) secure_add(s, kase, ops);
    else secure_mul(s, kase, ops);
  }

  const std::size_t sink = c.sink();
  const unsigned level = levels.back();
  if (!holder[sink]) return reveal(s, s.b().store().get<CipherVar>(opts.key_base + sink).ct, level, mode, opts.value_bound);

  // Fully local result: the owner decodes, and hands it over if asked to.
  const Party owner = *holder[sink];
  const BigInt v = (owner == Party::A ? s.a().store() : s.b().store()).get<PlainFixed>(opts.key_base + sink).value;
  const double value = decode(v, s.params(), N, level);
  if (!(std::fabs(value) <= opts.value_bound)) throw OverflowError("result exceeds the admitted bound");
  RevealResult out;
  const bool to_a = mode != RevealMode::ToB, to_b = mode != RevealMode::ToA;
  if ((owner == Party::A && to_b) || (owner == Party::B && to_a)) {
    s.send_plain(owner, std::span(&v, 1));
    s.recv_plain(other(owner), 1);
  }
  if (to_a) out.at_a = value;
  if (to_b) out.at_b = value;
  return out;
}

// local_compute + compute_levels + secure_poly.
inline RevealResult evaluate_securely(Session& s, const Circuit& c, const PartyInputs& inputs, RevealMode mode,
                                      const PolyOptions& opts = {}) {
  Circuit compact = local_compute(c);
  return secure_poly(s, compact, compute_levels(compact), inputs, mode, opts);
}

// f = sum_i h_A,i * h_B,i + g_A + g_B, each factor local to one party.
struct BipartiteDecomposition {
  std::vector<Circuit> h_a;
  std::vector<Circuit> h_b;
  std::optional<Circuit> g_a;
  std::optional<Circuit> g_b;
};

inline RevealResult bipartite_compute(Session& s, const BipartiteDecomposition& d, const PartyInputs& inputs,
                                      RevealMode mode, double value_bound = 1e6) {
  if (d.h_a.size() != d.h_b.size()) throw StructuralError("unpaired decomposition terms");
  level_guard(s, 2, value_bound);
  const BigInt& N = s.N();
  const auto& params = s.params();
  auto& A = s.a();
  auto& B = s.b();

  // A: Enc(H_A,i) and Enc(G_A * S).
  std::vector<BigInt> a_vals;
  for (const auto& h : d.h_a) a_vals.push_back(encode(eval_plaintext(h, inputs.a), params, N));
  if (d.g_a) a_vals.push_back(align_level(encode(eval_plaintext(*d.g_a, inputs.a), params, N), params, N, 1, 2));
  if (a_vals.empty()) throw StructuralError("decomposition has no A-side terms");
  auto sent = A.encrypt_all(a_vals);
  s.send_ciphers(Party::A, sent);
  auto cs = s.recv_ciphers(Party::B, a_vals.size());

  // B: (+)_i Enc(H_A,i) (x) H_B,i (+) Enc(G_A S) (+) Enc(G_B S).
  std::optional<paillier::Ciphertext> acc;
  auto fold = [&](const paillier::Ciphertext& c) { acc = acc ? B.add(*acc, c) : c; };
  for (std::size_t i = 0; i < d.h_b.size(); ++i) fold(B.mul(cs[i], encode(eval_plaintext(d.h_b[i], inputs.b), params, N)));
  if (d.g_a) fold(cs.back());
  if (d.g_b) fold(B.encrypt(align_level(encode(eval_plaintext(*d.g_b, inputs.b), params, N), params, N, 1, 2)));
  return reveal(s, *acc, 2, mode, value_bound);
}

}  // namespace pader
