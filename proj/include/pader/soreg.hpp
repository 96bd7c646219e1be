#pragma once

#include <fstream>
#include <iomanip>
#include <mutex>
#include <random>
#include <sstream>

#include "pader/parallel.hpp"
#include "pader/repack.hpp"
#include "pader/secure_ops.hpp"

namespace pader::soreg {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

struct Gradients {
  Vec du;
  Mat dv;
};

namespace detail {

inline void require_finite(const Vec& x, const char* what) {
  for (double d : x) {
    if (!std::isfinite(d)) throw ParameterError(std::string(what) + " contains a non-finite value");
  }
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

// Full gradient (factor 2 included) of one user's loss on n items and m
// friends. Items: v[i], r[i], w[i]. The social term pulls u towards its
// friends; with no friends it is dropped.
inline Gradients plaintext_sgd_step(const Vec& u, const Mat& v, const Vec& r, const Vec& w, const Mat& friends,
                                    double lambda_s) {
  const std::size_t k = u.size(), n = v.size();
  if (k == 0) throw ParameterError("embedding dimension must be at least 1");
  if (r.size() != n || w.size() != n) throw ParameterError("ratings and weights must match the item count");
  detail::require_finite(u, "user embedding");
  detail::require_finite(r, "ratings");
  detail::require_finite(w, "weights");
  if (!std::isfinite(lambda_s) || lambda_s < 0) throw ParameterError("social weight must be finite and >= 0");
  Gradients g{Vec(k, 0.0), Mat(n, Vec(k, 0.0))};
  for (std::size_t i = 0; i < n; ++i) {
    if (v[i].size() != k) throw ParameterError("item embedding has the wrong dimension");
    detail::require_finite(v[i], "item embedding");
    const double e = w[i] * (detail::dot(u, v[i]) - r[i]);
    for (std::size_t p = 0; p < k; ++p) {
      g.du[p] += 2 * e * v[i][p];
      g.dv[i][p] = 2 * e * u[p];
    }
  }
  if (!friends.empty()) {
    const double c = 2 * lambda_s / static_cast<double>(friends.size());
    for (const auto& f : friends) {
      if (f.size() != k) throw ParameterError("friend embedding has the wrong dimension");
      detail::require_finite(f, "friend embedding");
      for (std::size_t p = 0; p < k; ++p) g.du[p] += c * (u[p] - f[p]);
    }
  }
  return g;
}

// Packing along the embedding axis p and, for the natural-order step, along
// the item axis i. A single-slot layout means "unpacked".
struct StepLayouts {
  PackingLayout embedding;
  PackingLayout item;

  bool packed() const { return embedding.slot_count > 1 || item.slot_count > 1; }
};

inline StepLayouts make_step_layouts(std::size_t key_bits, std::size_t slot_bits, const EncodingParams& params,
                                     bool packed) {
  PackingLayout l = make_layout(key_bits, slot_bits, params);
  if (!packed) l = l.with_slot_count(1);
  return {l, l};
}

inline StepLayouts bipartite_layouts(std::size_t key_bits, bool packed = true) {
  return make_step_layouts(key_bits, 128, EncodingParams(23, 56), packed);
}

inline StepLayouts natural_layouts(std::size_t key_bits, bool packed = true) {
  return make_step_layouts(key_bits, 256, EncodingParams(23, 80), packed);
}

// A friend's embedding, packed along p and encrypted under the seller's key.
struct FriendEmbedding {
  std::vector<paillier::Ciphertext> chunks;
  PackingLayout layout;
  std::size_t dim = 0;
};

// B's private inputs to one step with one seller.
struct UserBatch {
  Vec u;
  Vec r;
  Vec w;
  std::vector<FriendEmbedding> friends;
  double lambda_s = 0;
};

struct StepResult {
  Vec du;  // revealed to B only
  // Held by A: per item, one ciphertext per embedding chunk, full gradient.
  std::vector<std::vector<paillier::Ciphertext>> item_gradients;
  PackingLayout layout;
  unsigned level = 0;
  BigInt slot_bound;  // every slot of an item gradient is < slot_bound
};

namespace detail {

inline EncodingParams params_of(const PackingLayout& l) {
  return EncodingParams(static_cast<unsigned>(l.scale_bits), static_cast<unsigned>(l.slot_modulus_bits));
}

// Fixed-point encoding of x at `level`, mod Q of the layout.
inline BigInt enc(double x, const PackingLayout& l, unsigned level = 1) {
  return encode(std::ldexp(x, static_cast<int>(l.scale_bits * (level - 1))), params_of(l), l.Q());
}

inline double dec(const BigInt& v, const PackingLayout& l, unsigned level) {
  return decode(v, params_of(l), l.Q(), level);
}

struct Chunk {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

inline std::vector<Chunk> chunks(std::size_t count, const PackingLayout& l) {
  std::vector<Chunk> out;
  for (std::size_t b = 0; b < count; b += l.slot_count) out.push_back({b, std::min(count, b + l.slot_count)});
  return out;
}

template <typename F>
BigInt pack_chunk(const Chunk& c, const PackingLayout& l, F&& f) {
  std::vector<BigInt> xs;
  xs.reserve(c.size());
  for (std::size_t i = c.begin; i < c.end; ++i) xs.push_back(f(i));
  return pack(xs, l);
}

struct Term {
  const paillier::Ciphertext* ct;
  BigInt k;
};

// out[o] = start[o] (+) sum_t terms[o][t].ct (x) terms[o][t].k, with the
// exponentiations spread over `threads` workers.
inline std::vector<paillier::Ciphertext> combine(const paillier::PublicKey& pk,
                                                 std::vector<paillier::Ciphertext> start,
                                                 const std::vector<std::vector<Term>>& terms, unsigned threads) {
  std::vector<std::pair<std::size_t, std::size_t>> flat;
  for (std::size_t o = 0; o < terms.size(); ++o) {
    for (std::size_t t = 0; t < terms[o].size(); ++t) flat.emplace_back(o, t);
  }
  std::vector<paillier::Ciphertext> prod(flat.size());
  parallel_for(flat.size(), threads, [&](std::size_t x) {
    const Term& t = terms[flat[x].first][flat[x].second];
    prod[x] = paillier::ct_pt_mul(pk, *t.ct, mod_floor(t.k, pk.n));
  });
  for (std::size_t x = 0; x < flat.size(); ++x) {
    start[flat[x].first] = paillier::hom_add(pk, start[flat[x].first], prod[x]);
  }
  return start;
}

inline void check_step(const Mat& v, const UserBatch& b, const StepLayouts& layouts) {
  const std::size_t k = b.u.size();
  if (k == 0) throw ParameterError("embedding dimension must be at least 1");
  if (b.r.size() != v.size() || b.w.size() != v.size()) {
    throw ParameterError("ratings and weights must match the item count");
  }
  for (const auto& row : v) {
    if (row.size() != k) throw ParameterError("item embedding has the wrong dimension");
    require_finite(row, "item embedding");
  }
  require_finite(b.u, "user embedding");
  require_finite(b.r, "ratings");
  require_finite(b.w, "weights");
  if (!std::isfinite(b.lambda_s) || b.lambda_s < 0) throw ParameterError("social weight must be finite and >= 0");
  if (layouts.embedding.mode != PackingMode::Exact || layouts.item.mode != PackingMode::Exact) {
    throw ParameterError("SGD steps need exact packing layouts");
  }
}

// B masks each packed user-gradient chunk with a fresh Z_N mask.
inline std::vector<paillier::Ciphertext> mask_chunks(Session& s, const std::vector<paillier::Ciphertext>& acc,
                                                     std::vector<BigInt>& masks) {
  auto& B = s.b();
  masks.clear();
  for (std::size_t c = 0; c < acc.size(); ++c) masks.push_back(B.scalar_mask());
  auto enc_masks = B.encrypt_all(masks);
  std::vector<paillier::Ciphertext> out;
  for (std::size_t c = 0; c < acc.size(); ++c) {
    out.push_back(B.add(acc[c], enc_masks[c]));
    B.record_mask({masks[c]}, {s.N()}, std::nullopt, acc[c], out.back());
  }
  return out;
}

// A decrypts the masked chunks and returns them; B strips the masks and
// decodes the user gradient.
inline Vec reveal_user_gradient(Session& s, std::span<const paillier::Ciphertext> masked_at_a,
                                const std::vector<BigInt>& masks, const std::vector<Chunk>& ch,
                                const PackingLayout& L, unsigned level, std::size_t k) {
  auto t = s.a().decrypt_all(masked_at_a, DecryptPurpose::MaskedIntermediate);
  s.send_plain(Party::A, t);
  auto back = s.recv_plain(Party::B, ch.size());
  Vec du(k);
  for (std::size_t c = 0; c < ch.size(); ++c) {
    auto res = unpack_residues(mod_floor(back[c] - masks[c], s.N()), L, ch[c].size());
    for (std::size_t p = ch[c].begin; p < ch[c].end; ++p) du[p] = 2 * dec(res[p - ch[c].begin], L, level);
  }
  return du;
}

inline constexpr VarKey kFriendKeyBase = VarKey{1} << 48;

}  // namespace detail

inline FriendEmbedding encrypt_friend_embedding(const paillier::PublicKey& pk, const Vec& f,
                                                const PackingLayout& layout, Rng& rng) {
  detail::require_finite(f, "friend embedding");
  FriendEmbedding out{{}, layout, f.size()};
  for (const auto& c : detail::chunks(f.size(), layout)) {
    BigInt x = detail::pack_chunk(c, layout, [&](std::size_t p) { return detail::enc(f[p], layout); });
    out.chunks.push_back(paillier::encrypt(pk, x, rng));
  }
  return out;
}

// Registers friend ciphertexts in B's store, chunk c of friend j at
// key_base + j * chunks + c.
inline std::vector<VarKey> inject_friend_embeddings(Session& s, const std::vector<FriendEmbedding>& friends,
                                                    const PackingLayout& layout, std::size_t dim,
                                                    VarKey key_base = detail::kFriendKeyBase) {
  const auto ch = detail::chunks(dim, layout);
  for (const auto& f : friends) {
    if (f.layout != layout || f.dim != dim || f.chunks.size() != ch.size()) {
      throw ProtocolError("friend embedding does not match the step layout");
    }
    for (const auto& c : f.chunks) paillier::detail::check_key(s.pk(), c);
  }
  std::vector<VarKey> keys;
  for (std::size_t j = 0; j < friends.size(); ++j) {
    for (std::size_t c = 0; c < ch.size(); ++c) {
      const VarKey key = key_base + j * ch.size() + c;
      std::vector<VarKey> elems;
      for (std::size_t p = ch[c].begin; p < ch[c].end; ++p) elems.push_back(p);
      s.b().store().put(key, PackedCipherVar{friends[j].chunks[c], layout, elems, layout.Q()});
      keys.push_back(key);
    }
  }
  return keys;
}

// Expanded form: A ships every product v_iq v_ip, B never sees an error term.
// Legs: A->B nk' + nkk' + nk ciphertexts, B->A nk' + k', A->B k' plaintexts.
// With a single-slot layout the scalar Enc(v_iq) set coincides with the
// packed one and is sent once.
inline StepResult secure_sgd_bipartite(Session& s, const Mat& v, const UserBatch& b, const StepLayouts& layouts) {
  using detail::enc;
  detail::check_step(v, b, layouts);
  const PackingLayout& L = layouts.embedding;
  auto& A = s.a();
  auto& B = s.b();
  const std::size_t n = v.size(), k = b.u.size(), m = b.friends.size();
  const auto ch = detail::chunks(k, L);
  const std::size_t kc = ch.size();
  const bool shared_scalars = L.slot_count == 1;
  const BigInt Q1 = L.Q() - 1;
  const BigInt user_bound = BigInt(n * k + n + m) * Q1 * Q1 + L.Q();
  const BigInt item_bound = BigInt(k) * Q1 * Q1 + L.Q();
  const std::size_t width = std::min(k, L.slot_count);
  require_fits(user_bound, L, width, s.N());
  require_fits(item_bound, L, width, s.N());
  auto fkeys = inject_friend_embeddings(s, b.friends, L, k);

  // B's encodings first, so range errors surface before any traffic.
  const double ls = m ? b.lambda_s : 0.0;
  std::vector<BigInt> wu(n * k), wr(n), b_start(kc), social(m ? 1 : 0);
  Mat wuu(n * k, Vec());
  for (std::size_t i = 0; i < n; ++i) {
    wr[i] = enc(-b.w[i] * b.r[i], L);
    for (std::size_t q = 0; q < k; ++q) wu[i * k + q] = enc(b.w[i] * b.u[q], L);
  }
  for (std::size_t c = 0; c < kc; ++c) {
    b_start[c] = detail::pack_chunk(ch[c], L, [&](std::size_t p) { return enc(ls * b.u[p], L, 2); });
  }
  if (m) social[0] = enc(-ls / static_cast<double>(m), L);
  std::vector<BigInt> item_start(n * kc), item_k(n * k * kc);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < kc; ++c) {
      item_start[i * kc + c] = detail::pack_chunk(
          ch[c], L, [&](std::size_t p) { return enc(-2 * b.w[i] * b.r[i] * b.u[p], L, 2); });
      for (std::size_t q = 0; q < k; ++q) {
        item_k[(i * k + q) * kc + c] = detail::pack_chunk(
            ch[c], L, [&](std::size_t p) { return enc(2 * b.w[i] * b.u[q] * b.u[p], L); });
      }
    }
  }

  // Leg 1, A -> B.
  {
    std::vector<BigInt> out;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < kc; ++c) {
        out.push_back(detail::pack_chunk(ch[c], L, [&](std::size_t p) { return enc(v[i][p], L); }));
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t q = 0; q < k; ++q) {
        for (std::size_t c = 0; c < kc; ++c) {
          out.push_back(
              detail::pack_chunk(ch[c], L, [&](std::size_t p) { return enc(v[i][q] * v[i][p], L); }));
        }
      }
    }
    if (!shared_scalars) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t q = 0; q < k; ++q) out.push_back(enc(v[i][q], L));
      }
    }
    s.send_ciphers(Party::A, A.encrypt_all(out));
  }

  // B: user gradient (halved, level 2) and item gradients (full, level 2).
  const auto in = s.recv_ciphers(Party::B, n * kc + n * k * kc + (shared_scalars ? 0 : n * k));
  auto VP = [&](std::size_t i, std::size_t c) -> const paillier::Ciphertext& { return in[i * kc + c]; };
  auto VV = [&](std::size_t i, std::size_t q, std::size_t c) -> const paillier::Ciphertext& {
    return in[n * kc + (i * k + q) * kc + c];
  };
  auto Vs = [&](std::size_t i, std::size_t q) -> const paillier::Ciphertext& {
    return shared_scalars ? VP(i, q) : in[n * kc + n * k * kc + i * k + q];
  };
  std::vector<BigInt> fresh = b_start;
  fresh.insert(fresh.end(), item_start.begin(), item_start.end());
  auto fresh_ct = B.encrypt_all(fresh);
  std::vector<std::vector<detail::Term>> terms(kc + n * kc);
  for (std::size_t c = 0; c < kc; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t q = 0; q < k; ++q) terms[c].push_back({&VV(i, q, c), wu[i * k + q]});
      terms[c].push_back({&VP(i, c), wr[i]});
    }
    for (std::size_t j = 0; j < m; ++j) {
      terms[c].push_back({&B.store().get<PackedCipherVar>(fkeys[j * kc + c]).ct, social[0]});
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < kc; ++c) {
      for (std::size_t q = 0; q < k; ++q) terms[kc + i * kc + c].push_back({&Vs(i, q), item_k[(i * k + q) * kc + c]});
    }
  }
  auto acc = detail::combine(s.pk(), fresh_ct, terms, s.options().threads);
  for (auto key : fkeys) B.store().erase(key);
  std::vector<paillier::Ciphertext> user_acc(acc.begin(), acc.begin() + static_cast<std::ptrdiff_t>(kc));
  std::vector<BigInt> masks;
  auto masked = detail::mask_chunks(s, user_acc, masks);

  // Leg 2, B -> A: item gradients, then the masked user gradient.
  {
    std::vector<paillier::Ciphertext> out(acc.begin() + static_cast<std::ptrdiff_t>(kc), acc.end());
    out.insert(out.end(), masked.begin(), masked.end());
    s.send_ciphers(Party::B, out);
  }
  auto at_a = s.recv_ciphers(Party::A, n * kc + kc);

  StepResult res;
  res.layout = L;
  res.level = 2;
  res.slot_bound = item_bound;
  for (std::size_t i = 0; i < n; ++i) {
    res.item_gradients.emplace_back(at_a.begin() + static_cast<std::ptrdiff_t>(i * kc),
                                    at_a.begin() + static_cast<std::ptrdiff_t>((i + 1) * kc));
  }
  // Leg 3, A -> B plaintexts.
  res.du = detail::reveal_user_gradient(s, std::span(at_a).subspan(n * kc), masks, ch, L, 2, k);
  return res;
}

// Natural order: B computes the error terms once on the item axis, A helps
// move them to the embedding axis. Legs: n'k; n'; k' + n + nk'; nk' + k';
// k' plaintexts. With a single-slot item layout B already holds each
// Enc(e_i) and the n re-packed values are not sent. Weights must be 1.
inline StepResult secure_sgd_natural(Session& s, const Mat& v, const UserBatch& b, const StepLayouts& layouts) {
  using detail::enc;
  detail::check_step(v, b, layouts);
  const PackingLayout& L = layouts.embedding;
  const PackingLayout& I = layouts.item;
  if (L.slot_modulus_bits != I.slot_modulus_bits || L.scale_bits != I.scale_bits) {
    throw ParameterError("item and embedding layouts must share S and Q");
  }
  for (double w : b.w) {
    if (w != 1.0) throw ParameterError("natural-order step supports unit weights only");
  }
  auto& A = s.a();
  auto& B = s.b();
  const BigInt& N = s.N();
  const std::size_t n = v.size(), k = b.u.size(), m = b.friends.size();
  const auto ich = detail::chunks(n, I);
  const auto ech = detail::chunks(k, L);
  const std::size_t nc = ich.size(), kc = ech.size();
  const bool repack = I.slot_count > 1;
  const BigInt Q = L.Q(), Q1 = Q - 1;
  const BigInt err_bound = BigInt(k) * Q1 * Q1 + Q;
  const BigInt user_bound = BigInt(n + m) * Q1 * Q1 + 2 * Q;
  const BigInt item_bound = err_bound * Q;
  const std::size_t width = std::min(k, L.slot_count);
  std::vector<std::vector<BigInt>> moduli;
  for (const auto& c : ich) moduli.push_back(row_mask_moduli(I, c.size(), err_bound, N));
  require_fits(user_bound, L, width, N);
  require_fits(item_bound, L, width, N);
  auto fkeys = inject_friend_embeddings(s, b.friends, L, k);

  const double ls = m ? b.lambda_s : 0.0;
  std::vector<BigInt> eu(k), neg_r(n), eps_start(nc), user_start(m ? kc : 0), item_k(kc);
  for (std::size_t q = 0; q < k; ++q) eu[q] = enc(b.u[q], L);
  for (std::size_t c = 0; c < nc; ++c) {
    eps_start[c] = detail::pack_chunk(ich[c], I, [&](std::size_t i) { return enc(-b.r[i], I, 2); });
  }
  for (std::size_t c = 0; c < user_start.size(); ++c) {
    user_start[c] = detail::pack_chunk(ech[c], L, [&](std::size_t p) { return enc(ls * b.u[p], L, 3); });
  }
  const BigInt social = m ? enc(-ls / static_cast<double>(m), L, 2) : BigInt(0);
  for (std::size_t c = 0; c < kc; ++c) {
    item_k[c] = detail::pack_chunk(ech[c], L, [&](std::size_t p) { return enc(2 * b.u[p], L); });
  }

  // Leg 1, A -> B: item-axis packs of column q.
  {
    std::vector<BigInt> out;
    for (std::size_t q = 0; q < k; ++q) {
      for (std::size_t c = 0; c < nc; ++c) {
        out.push_back(detail::pack_chunk(ich[c], I, [&](std::size_t i) { return enc(v[i][q], I); }));
      }
    }
    s.send_ciphers(Party::A, A.encrypt_all(out));
  }

  // Leg 2, B -> A: error terms e_i S^2, each slot masked on Z_M.
  std::vector<paillier::Ciphertext> eps;
  std::vector<BigInt> item_mask(n);
  {
    const auto cols = s.recv_ciphers(Party::B, k * nc);
    std::vector<std::vector<detail::Term>> terms(nc);
    for (std::size_t c = 0; c < nc; ++c) {
      for (std::size_t q = 0; q < k; ++q) terms[c].push_back({&cols[q * nc + c], eu[q]});
    }
    std::vector<BigInt> packed_masks(nc);
    for (std::size_t c = 0; c < nc; ++c) {
      std::vector<BigInt> ms;
      for (const auto& mod : moduli[c]) ms.push_back(B.rng().below(mod));
      for (std::size_t i = ich[c].begin; i < ich[c].end; ++i) item_mask[i] = ms[i - ich[c].begin];
      packed_masks[c] = pack(ms, I);
      B.use_mask(packed_masks[c]);
    }
    std::vector<BigInt> fresh = eps_start;
    fresh.insert(fresh.end(), packed_masks.begin(), packed_masks.end());
    auto fresh_ct = B.encrypt_all(fresh);
    eps = detail::combine(s.pk(), std::vector(fresh_ct.begin(), fresh_ct.begin() + static_cast<std::ptrdiff_t>(nc)),
                          terms, s.options().threads);
    std::vector<paillier::Ciphertext> out;
    for (std::size_t c = 0; c < nc; ++c) {
      out.push_back(B.add(eps[c], fresh_ct[nc + c]));
      std::vector<BigInt> ms(item_mask.begin() + static_cast<std::ptrdiff_t>(ich[c].begin),
                             item_mask.begin() + static_cast<std::ptrdiff_t>(ich[c].end));
      B.record_mask(ms, moduli[c], I, eps[c], out.back());
    }
    s.send_ciphers(Party::B, out);
  }

  // Leg 3, A -> B: sum_i a_i v_i on the embedding axis, the re-packed
  // masked errors, and the embedding-axis item packs.
  {
    auto masked = A.decrypt_all(s.recv_ciphers(Party::A, nc), DecryptPurpose::MaskedIntermediate);
    std::vector<BigInt> t(n);
    for (std::size_t c = 0; c < nc; ++c) {
      auto slots = unpack(masked[c], I, ich[c].size());
      for (std::size_t i = ich[c].begin; i < ich[c].end; ++i) t[i] = slots[i - ich[c].begin];
    }
    std::vector<BigInt> out;
    for (std::size_t c = 0; c < kc; ++c) {
      out.push_back(detail::pack_chunk(ech[c], L, [&](std::size_t p) {
        BigInt sum = 0;
        for (std::size_t i = 0; i < n; ++i) sum += mod_floor(t[i], Q) * enc(v[i][p], L);
        return mod_floor(sum, Q);
      }));
    }
    if (repack) out.insert(out.end(), t.begin(), t.end());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < kc; ++c) {
        out.push_back(detail::pack_chunk(ech[c], L, [&](std::size_t p) { return enc(v[i][p], L); }));
      }
    }
    s.send_ciphers(Party::A, A.encrypt_all(out));
  }

  // Leg 4, B -> A: item gradients (full, level 3), masked user gradient
  // (halved, level 3).
  std::vector<BigInt> masks;
  {
    const auto in = s.recv_ciphers(Party::B, kc + (repack ? n : 0) + n * kc);
    std::vector<paillier::Ciphertext> e(n);
    for (std::size_t i = 0; i < n; ++i) {
      e[i] = repack ? B.add(in[kc + i], paillier::encrypt_with_factor(s.pk(), N - item_mask[i], 1)) : eps[i];
    }
    const std::size_t vp0 = kc + (repack ? n : 0);
    std::vector<BigInt> fresh_plain = user_start;
    auto fresh = B.encrypt_all(fresh_plain);
    std::vector<paillier::Ciphertext> start(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(kc));
    for (std::size_t c = 0; c < fresh.size(); ++c) start[c] = B.add(start[c], fresh[c]);
    std::vector<BigInt> corr(n);
    for (std::size_t i = 0; i < n; ++i) corr[i] = mod_floor(-item_mask[i], Q);
    std::vector<std::vector<detail::Term>> terms(kc + n * kc);
    for (std::size_t c = 0; c < kc; ++c) {
      for (std::size_t i = 0; i < n; ++i) terms[c].push_back({&in[vp0 + i * kc + c], corr[i]});
      for (std::size_t j = 0; j < m; ++j) {
        terms[c].push_back({&B.store().get<PackedCipherVar>(fkeys[j * kc + c]).ct, social});
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < kc; ++c) {
        start.push_back(paillier::Ciphertext{1, s.pk().id});
        terms[kc + i * kc + c].push_back({&e[i], item_k[c]});
      }
    }
    auto acc = detail::combine(s.pk(), start, terms, s.options().threads);
    for (auto key : fkeys) B.store().erase(key);
    std::vector<paillier::Ciphertext> user_acc(acc.begin(), acc.begin() + static_cast<std::ptrdiff_t>(kc));
    auto masked = detail::mask_chunks(s, user_acc, masks);
    std::vector<paillier::Ciphertext> out(acc.begin() + static_cast<std::ptrdiff_t>(kc), acc.end());
    out.insert(out.end(), masked.begin(), masked.end());
    s.send_ciphers(Party::B, out);
  }

  auto at_a = s.recv_ciphers(Party::A, n * kc + kc);
  StepResult res;
  res.layout = L;
  res.level = 3;
  res.slot_bound = item_bound;
  for (std::size_t i = 0; i < n; ++i) {
    res.item_gradients.emplace_back(at_a.begin() + static_cast<std::ptrdiff_t>(i * kc),
                                    at_a.begin() + static_cast<std::ptrdiff_t>((i + 1) * kc));
  }
  // Leg 5, A -> B plaintexts.
  res.du = detail::reveal_user_gradient(s, std::span(at_a).subspan(n * kc), masks, ech, L, 3, k);
  return res;
}

// Seller-side accumulator. Item gradients are summed homomorphically per
// item and decrypted only once `threshold` users contributed to that item.
class GradientAggregator {
 public:
  GradientAggregator(PackingLayout layout, unsigned level, std::size_t dim, std::size_t threshold = 2)
      : layout_(std::move(layout)), level_(level), dim_(dim), threshold_(threshold) {
    if (threshold_ < 2) throw ParameterError("aggregation threshold must be at least 2");
    if (dim_ == 0) throw ParameterError("gradient dimension must be at least 1");
  }

  std::size_t threshold() const { return threshold_; }

  // One user's encrypted gradients, keyed by item id.
  void submit(const paillier::PublicKey& pk, const std::map<std::size_t, std::vector<paillier::Ciphertext>>& items,
              const BigInt& slot_bound) {
    const std::size_t chunks = layout_.chunks_for(dim_);
    const std::size_t width = std::min(dim_, layout_.slot_count);
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& [id, cts] : items) {
      if (cts.size() != chunks) throw AggregationError("gradient for item " + std::to_string(id) + " has the wrong shape");
      for (const auto& c : cts) paillier::detail::check_key(pk, c);
      const auto it = pending_.find(id);
      const BigInt bound = (it == pending_.end() ? BigInt(0) : it->second.bound) + slot_bound;
      try {
        require_fits(bound, layout_, width, pk.n);
      } catch (const CannotPack&) {
        throw AggregationError("aggregated gradient for item " + std::to_string(id) + " would overflow its slots");
      }
    }
    for (const auto& [id, cts] : items) {
      auto [it, fresh] = pending_.try_emplace(id, Pending{cts, 0, 0});
      if (!fresh) {
        for (std::size_t c = 0; c < cts.size(); ++c) it->second.sum[c] = paillier::hom_add(pk, it->second.sum[c], cts[c]);
      }
      it->second.count += 1;
      it->second.bound += slot_bound;
    }
  }

  std::size_t pending(std::size_t id) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = pending_.find(id);
    return it == pending_.end() ? 0 : it->second.count;
  }

  // Decrypts and removes every item with at least `threshold` contributions.
  std::map<std::size_t, Vec> release(KeyHolder& a) {
    std::vector<std::size_t> ids;
    std::vector<paillier::Ciphertext> cts;
    {
      std::lock_guard<std::mutex> lock(mu_);
      for (auto it = pending_.begin(); it != pending_.end();) {
        if (it->second.count >= threshold_) {
          ids.push_back(it->first);
          cts.insert(cts.end(), it->second.sum.begin(), it->second.sum.end());
          it = pending_.erase(it);
        } else {
          ++it;
        }
      }
    }
    auto plain = a.decrypt_all(cts, DecryptPurpose::AggregatedGradient);
    const auto ch = detail::chunks(dim_, layout_);
    std::map<std::size_t, Vec> out;
    for (std::size_t x = 0; x < ids.size(); ++x) {
      Vec g(dim_);
      for (std::size_t c = 0; c < ch.size(); ++c) {
        auto res = unpack_residues(plain[x * ch.size() + c], layout_, ch[c].size());
        for (std::size_t p = ch[c].begin; p < ch[c].end; ++p) g[p] = detail::dec(res[p - ch[c].begin], layout_, level_);
      }
      out.emplace(ids[x], std::move(g));
    }
    return out;
  }

 private:
  struct Pending {
    std::vector<paillier::Ciphertext> sum;
    std::size_t count = 0;
    BigInt bound;
  };

  PackingLayout layout_;
  unsigned level_;
  std::size_t dim_;
  std::size_t threshold_;
  mutable std::mutex mu_;
  std::map<std::size_t, Pending> pending_;
};

struct Contribution {
  std::map<std::size_t, std::vector<paillier::Ciphertext>> items;
  BigInt slot_bound;
};

// Contributions must cover the same items; returns whatever the threshold
// lets through.
inline std::map<std::size_t, Vec> aggregate_item_gradients(GradientAggregator& agg, KeyHolder& a,
                                                           const std::vector<Contribution>& contributions) {
  for (const auto& c : contributions) {
    if (c.items.size() != contributions.front().items.size() ||
        !std::equal(c.items.begin(), c.items.end(), contributions.front().items.begin(),
                    [](const auto& x, const auto& y) { return x.first == y.first; })) {
      throw AggregationError("contributions cover different item sets");
    }
  }
  for (const auto& c : contributions) agg.submit(a.pk(), c.items, c.slot_bound);
  return agg.release(a);
}

struct Predictions {
  std::optional<Vec> at_a;
  std::optional<Vec> at_b;
};

// Dot products u . v_i for u held by B and v_i held by A. A single-slot
// item layout runs one secure_poly per item; otherwise v is packed on the
// item axis and the n results come back in n' ciphertexts.
inline Predictions secure_infer(Session& s, const Vec& u, const Mat& v, RevealMode mode, const PackingLayout& item) {
  using detail::enc;
  const std::size_t n = v.size(), k = u.size();
  if (k == 0) throw ParameterError("embedding dimension must be at least 1");
  for (const auto& row : v) {
    if (row.size() != k) throw ParameterError("item embedding has the wrong dimension");
  }
  Predictions out;
  if (mode != RevealMode::ToA) out.at_b = Vec(n);
  if (mode != RevealMode::ToB) out.at_a = Vec(n);
  if (item.slot_count == 1) {
    Circuit c;
    std::vector<std::size_t> prods;
    for (std::size_t q = 0; q < k; ++q) {
      auto x = c.input(Party::B, "u" + std::to_string(q));
      prods.push_back(c.mul(x, c.input(Party::A, "v" + std::to_string(q))));
    }
    c.sum(prods);
    const Circuit compact = local_compute(c);
    const LevelMap levels = compute_levels(compact);
    PartyInputs in;
    for (std::size_t q = 0; q < k; ++q) in.b["u" + std::to_string(q)] = u[q];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t q = 0; q < k; ++q) in.a["v" + std::to_string(q)] = v[i][q];
      PolyOptions opts;
      opts.key_base = static_cast<VarKey>(i) * (compact.size() + 1);
      auto r = secure_poly(s, compact, levels, in, mode, opts);
      if (out.at_a) (*out.at_a)[i] = *r.at_a;
      if (out.at_b) (*out.at_b)[i] = *r.at_b;
      for (std::size_t g = 0; g < compact.size(); ++g) {
        s.a().store().erase(opts.key_base + g);
        s.b().store().erase(opts.key_base + g);
      }
    }
    return out;
  }
  if (item.mode != PackingMode::Exact) throw ParameterError("inference needs an exact packing layout");
  auto& A = s.a();
  auto& B = s.b();
  const BigInt& N = s.N();
  const auto ich = detail::chunks(n, item);
  const std::size_t nc = ich.size();
  const BigInt Q = item.Q(), Q1 = Q - 1;
  const BigInt bound = BigInt(k) * Q1 * Q1 + 1;
  std::vector<std::vector<BigInt>> moduli;
  for (const auto& c : ich) moduli.push_back(row_mask_moduli(item, c.size(), bound, N));
  std::vector<BigInt> eu(k);
  for (std::size_t q = 0; q < k; ++q) eu[q] = enc(u[q], item);

  std::vector<BigInt> cols;
  for (std::size_t q = 0; q < k; ++q) {
    for (const auto& c : ich) cols.push_back(detail::pack_chunk(c, item, [&](std::size_t i) { return enc(v[i][q], item); }));
  }
  s.send_ciphers(Party::A, A.encrypt_all(cols));
  const auto in = s.recv_ciphers(Party::B, k * nc);
  std::vector<std::vector<detail::Term>> terms(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    for (std::size_t q = 0; q < k; ++q) terms[c].push_back({&in[q * nc + c], eu[q]});
  }
  // Revealing to A: masks are multiples of Q, so only residues mod Q open.
  const bool to_a = mode != RevealMode::ToB;
  std::vector<std::vector<BigInt>> masks(nc), ranges(nc);
  std::vector<BigInt> packed(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    for (const auto& mod : moduli[c]) {
      BigInt range = to_a ? BigInt(mod / Q) : mod;
      BigInt r = B.rng().below(range);
      masks[c].push_back(to_a ? BigInt(r * Q) : r);
      ranges[c].push_back(to_a ? BigInt(range * Q) : range);
    }
    packed[c] = pack(masks[c], item);
    B.use_mask(packed[c]);
  }
  auto enc_masks = B.encrypt_all(packed);
  auto y = detail::combine(s.pk(), std::vector<paillier::Ciphertext>(nc, paillier::Ciphertext{1, s.pk().id}), terms,
                           s.options().threads);
  std::vector<paillier::Ciphertext> masked;
  for (std::size_t c = 0; c < nc; ++c) {
    masked.push_back(B.add(y[c], enc_masks[c]));
    B.record_mask(masks[c], ranges[c], item, y[c], masked.back());
  }
  s.send_ciphers(Party::B, masked);
  auto opened = A.decrypt_all(s.recv_ciphers(Party::A, nc), DecryptPurpose::MaskedIntermediate);
  if (to_a) {
    std::vector<BigInt> residues(nc);
    for (std::size_t c = 0; c < nc; ++c) {
      auto res = unpack_residues(opened[c], item, ich[c].size());
      for (std::size_t i = ich[c].begin; i < ich[c].end; ++i) (*out.at_a)[i] = detail::dec(res[i - ich[c].begin], item, 2);
      residues[c] = pack(res, item);
    }
    if (mode == RevealMode::ToBoth) {
      s.send_plain(Party::A, residues);
      auto back = s.recv_plain(Party::B, nc);
      for (std::size_t c = 0; c < nc; ++c) {
        auto res = unpack(back[c], item, ich[c].size());
        for (std::size_t i = ich[c].begin; i < ich[c].end; ++i) (*out.at_b)[i] = detail::dec(res[i - ich[c].begin], item, 2);
      }
    }
    return out;
  }
  s.send_plain(Party::A, opened);
  auto back = s.recv_plain(Party::B, nc);
  for (std::size_t c = 0; c < nc; ++c) {
    auto raw = unpack(back[c], item, ich[c].size());
    for (std::size_t i = ich[c].begin; i < ich[c].end; ++i) {
      (*out.at_b)[i] = detail::dec(mod_floor(raw[i - ich[c].begin] - masks[c][i - ich[c].begin], Q), item, 2);
    }
  }
  return out;
}

struct Hyper {
  double lambda_u = 0;
  double lambda_v = 0;
  double lambda_s = 0;
  double lr = 0.003;
};

// User rows are [latent..., 1, b_U], item rows [latent..., b_I, 1], so
// u . v = latent dot + b_I + b_U. Predictions add the training mean.
struct SoRegModel {
  std::size_t k = 0;
  Mat U;
  Mat V;
  Hyper hyper;
  double mean = 0;

  std::size_t dim() const { return k + 2; }
  std::size_t user_const() const { return k; }
  std::size_t item_const() const { return k + 1; }

  static SoRegModel init(std::size_t n_users, std::size_t n_items, std::size_t k, Hyper hyper, double init_sd,
                         std::uint64_t seed) {
    if (k == 0) throw ParameterError("latent dimension must be at least 1");
    if (!(hyper.lr > 0)) throw ParameterError("learning rate must be positive");
    if (hyper.lambda_u < 0 || hyper.lambda_v < 0 || hyper.lambda_s < 0) {
      throw ParameterError("regularization weights must be non-negative");
    }
    if (!(init_sd >= 0) || !std::isfinite(init_sd)) throw ParameterError("init sd must be finite and non-negative");
    SoRegModel m;
    m.k = k;
    m.hyper = hyper;
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> d(0.0, init_sd > 0 ? init_sd : 1.0);
    auto draw = [&] { return init_sd > 0 ? d(gen) : 0.0; };
    m.U.assign(n_users, Vec(k + 2, 0.0));
    m.V.assign(n_items, Vec(k + 2, 0.0));
    for (auto& row : m.U) {
      for (std::size_t p = 0; p < k; ++p) row[p] = draw();
      row[k] = 1.0;
    }
    for (auto& row : m.V) {
      for (std::size_t p = 0; p < k; ++p) row[p] = draw();
      row[k + 1] = 1.0;
    }
    return m;
  }

  double predict(std::size_t user, std::size_t item) const { return mean + detail::dot(U.at(user), V.at(item)); }

  // x <- (1 - 2 lr lambda) x - lr g on every coordinate except the constant one.
  void update_user(std::size_t user, const Vec& g) { update(U.at(user), g, hyper.lambda_u, user_const()); }
  void update_item(std::size_t item, const Vec& g) { update(V.at(item), g, hyper.lambda_v, item_const()); }

  bool finite() const {
    for (const auto* M : {&U, &V}) {
      for (const auto& row : *M) {
        for (double x : row) {
          if (!std::isfinite(x)) return false;
        }
      }
    }
    return std::isfinite(mean);
  }

  void save(std::ostream& out) const {
    out << "pader-soreg-checkpoint v1\n"
        << "k " << k << "\nusers " << U.size() << "\nitems " << V.size() << std::setprecision(17)
        << "\nlambda_u " << hyper.lambda_u << "\nlambda_v " << hyper.lambda_v << "\nlambda_s " << hyper.lambda_s
        << "\nlr " << hyper.lr << "\nmean " << mean << "\n";
    for (const auto* M : {&U, &V}) {
      out << (M == &U ? "U\n" : "V\n");
      for (const auto& row : *M) {
        for (std::size_t p = 0; p < row.size(); ++p) out << (p ? " " : "") << row[p];
        out << "\n";
      }
    }
  }

  static SoRegModel load(std::istream& in) {
    std::string line;
    std::size_t lineno = 0;
    auto next = [&]() -> std::string {
      if (!std::getline(in, line)) throw ParseError("checkpoint", lineno, "unexpected end of file");
      ++lineno;
      return line;
    };
    if (next() != "pader-soreg-checkpoint v1") throw ParseError("checkpoint", lineno, "bad header");
    auto field = [&](const std::string& name) {
      std::istringstream is(next());
      std::string key;
      double value = 0;
      if (!(is >> key >> value) || key != name) throw ParseError("checkpoint", lineno, "expected " + name);
      return value;
    };
    SoRegModel m;
    m.k = static_cast<std::size_t>(field("k"));
    const auto users = static_cast<std::size_t>(field("users"));
    const auto items = static_cast<std::size_t>(field("items"));
    m.hyper.lambda_u = field("lambda_u");
    m.hyper.lambda_v = field("lambda_v");
    m.hyper.lambda_s = field("lambda_s");
    m.hyper.lr = field("lr");
    m.mean = field("mean");
    auto rows = [&](const char* tag, std::size_t count) {
      if (next() != tag) throw ParseError("checkpoint", lineno, std::string("expected ") + tag);
      Mat M(count, Vec(m.k + 2));
      for (auto& row : M) {
        std::istringstream is(next());
        for (auto& x : row) {
          if (!(is >> x)) throw ParseError("checkpoint", lineno, "short embedding row");
        }
      }
      return M;
    };
    m.U = rows("U", users);
    m.V = rows("V", items);
    return m;
  }

 private:
  void update(Vec& x, const Vec& g, double lambda, std::size_t fixed) const {
    if (g.size() != x.size()) throw ParameterError("gradient has the wrong dimension");
    const double shrink = 1 - 2 * hyper.lr * lambda;
    for (std::size_t p = 0; p < x.size(); ++p) {
      if (p != fixed) x[p] = shrink * x[p] - hyper.lr * g[p];
    }
  }
};

}  // namespace pader::soreg
