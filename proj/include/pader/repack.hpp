#pragma once

#include <map>

#include "pader/session.hpp"

namespace pader {

inline constexpr std::size_t kMinMaskMarginBits = 40;

struct RepackTarget {
  VarKey row_key = 0;
  std::vector<VarKey> elements;
};

// B's side of an open repack: the per-element masks it must later remove.
struct RepackMasks {
  std::map<VarKey, BigInt> mask_of;
  BigInt slot_bound;  // X: every unmasked slot value is < X
  BigInt M;           // masks uniform on [0, M), M = P - X
};

// Per-slot mask modulus M = P - X, refusing margins under 2^40.
inline BigInt repack_mask_modulus(const PackingLayout& layout, const BigInt& slot_bound) {
  const BigInt P = layout.P();
  if (slot_bound <= 0 || slot_bound >= P || bit_length(slot_bound) + kMinMaskMarginBits > layout.slot_bits) {
    throw ProtocolError("slot bound 2^" + std::to_string(bit_length(slot_bound)) + " leaves under 2^" +
                        std::to_string(kMinMaskMarginBits) + " of mask room in P = 2^" +
                        std::to_string(layout.slot_bits));
  }
  return P - slot_bound;
}

// Mask moduli for one row: M = P - X per slot, except that the highest slot
// is narrowed so the masked packed value stays below N.
inline std::vector<BigInt> row_mask_moduli(const PackingLayout& layout, std::size_t count, const BigInt& slot_bound,
                                           const BigInt& N) {
  const BigInt M = repack_mask_modulus(layout, slot_bound);
  std::vector<BigInt> moduli(count, M);
  if (count == 0) return moduli;
  BigInt top;
  mpz_fdiv_q_2exp(top.get_mpz_t(), N.get_mpz_t(), layout.slot_bits * (count - 1));
  if (top < layout.P()) {
    if (top <= slot_bound || bit_length(top - slot_bound) < bit_length(slot_bound) + kMinMaskMarginBits) {
      throw ProtocolError("row of " + std::to_string(count) + " slots leaves no mask room below N");
    }
    moduli.back() = top - slot_bound;
  }
  return moduli;
}

// B masks every slot of the source rows individually and sends them to A.
inline RepackMasks repack_mask_and_send(Session& s, std::span<const VarKey> source_rows) {
  auto& B = s.b();
  RepackMasks st;
  st.slot_bound = 0;
  for (auto k : source_rows) st.slot_bound = std::max(st.slot_bound, B.store().get<PackedCipherVar>(k).slot_bound);
  std::vector<paillier::Ciphertext> out;
  for (auto k : source_rows) {
    const auto& row = B.store().get<PackedCipherVar>(k);
    st.M = repack_mask_modulus(row.layout, st.slot_bound);
    auto moduli = row_mask_moduli(row.layout, row.elements.size(), st.slot_bound, s.N());
    std::vector<BigInt> masks;
    for (const auto& m : moduli) masks.push_back(B.rng().below(m));
    BigInt packed_mask = pack(masks, row.layout);
    B.use_mask(packed_mask);
    for (std::size_t i = 0; i < masks.size(); ++i) st.mask_of.emplace(row.elements[i], masks[i]);
    out.push_back(B.add(row.ct, B.encrypt(packed_mask)));
    B.record_mask(masks, moduli, row.layout, row.ct, out.back());
  }
  s.send_ciphers(Party::B, out);
  return st;
}

// A decrypts the masked rows and unpacks them per element. The row structure
// (element keys, layout) is public to both parties.
inline std::map<VarKey, BigInt> repack_open(Session& s, std::span<const std::vector<VarKey>> row_elements,
                                            const PackingLayout& source_layout) {
  auto cts = s.recv_ciphers(Party::A, row_elements.size());
  auto plain = s.a().decrypt_all(cts, DecryptPurpose::MaskedIntermediate);
  std::map<VarKey, BigInt> masked;
  for (std::size_t r = 0; r < row_elements.size(); ++r) {
    auto slots = unpack(plain[r], source_layout, row_elements[r].size());
    for (std::size_t i = 0; i < slots.size(); ++i) masked.emplace(row_elements[r][i], slots[i]);
  }
  return masked;
}

inline void repack_send_targets(Session& s, const std::map<VarKey, BigInt>& masked,
                                std::span<const RepackTarget> targets, const PackingLayout& target_layout) {
  std::vector<BigInt> packed;
  for (const auto& t : targets) {
    std::vector<BigInt> vals;
    for (auto e : t.elements) {
      auto it = masked.find(e);
      if (it == masked.end()) throw ProtocolError("element " + std::to_string(e) + " missing from the source rows");
      vals.push_back(it->second);
    }
    packed.push_back(pack(vals, target_layout));
  }
  auto cts = s.a().encrypt_all(packed);
  s.send_ciphers(Party::A, cts);
}

inline void repack_receive_targets(Session& s, const RepackMasks& st, std::span<const RepackTarget> targets,
                                   const PackingLayout& target_layout) {
  auto& B = s.b();
  auto cts = s.recv_ciphers(Party::B, targets.size());
  for (std::size_t t = 0; t < targets.size(); ++t) {
    std::vector<BigInt> masks;
    for (auto e : targets[t].elements) masks.push_back(st.mask_of.at(e));
    BigInt packed_mask = pack(masks, target_layout);
    paillier::Ciphertext ct = B.add(cts[t], B.encrypt(s.N() - packed_mask));
    B.store().put(targets[t].row_key, PackedCipherVar{ct, target_layout, targets[t].elements, st.slot_bound});
  }
}

// Re-arranges packed ciphertexts held by B into the target rows. A only
// ever sees slot values x + r with r uniform on Z_M.
inline void secure_repack(Session& s, std::span<const VarKey> source_rows, std::span<const RepackTarget> targets,
                          const PackingLayout& target_layout) {
  if (source_rows.empty()) throw ProtocolError("nothing to repack");
  std::map<VarKey, int> available;
  std::vector<std::vector<VarKey>> row_elements;
  const PackingLayout source_layout = s.b().store().get<PackedCipherVar>(source_rows[0]).layout;
  for (auto k : source_rows) {
    const auto& row = s.b().store().get<PackedCipherVar>(k);
    if (row.layout != source_layout) throw ProtocolError("source rows use different layouts");
    row_elements.push_back(row.elements);
    for (auto e : row.elements) ++available[e];
  }
  for (const auto& t : targets) {
    if (t.elements.size() > target_layout.slot_count) throw CannotPack("target row longer than the slot count");
    for (auto e : t.elements) {
      if (--available[e] < 0) throw ProtocolError("element " + std::to_string(e) + " missing from the source rows");
    }
  }
  BigInt bound = 0;
  for (auto k : source_rows) bound = std::max(bound, s.b().store().get<PackedCipherVar>(k).slot_bound);
  if (bound > target_layout.P()) throw ProtocolError("slot bound exceeds the target slot size");
  repack_mask_modulus(source_layout, bound);
  std::size_t widest = 0;
  for (const auto& t : targets) widest = std::max(widest, t.elements.size());
  require_fits(target_layout.P() - 1, target_layout, widest, s.N());
  for (const auto& elems : row_elements) row_mask_moduli(source_layout, elems.size(), bound, s.N());
  RepackMasks st = repack_mask_and_send(s, source_rows);
  auto masked = repack_open(s, row_elements, source_layout);
  repack_send_targets(s, masked, targets, target_layout);
  repack_receive_targets(s, st, targets, target_layout);
}

}  // namespace pader
