#include <gtest/gtest.h>

#include <random>

#include "pader/repack.hpp"
#include "pader/secure_ops.hpp"
#include "support.hpp"

namespace pader {
namespace {

using pader::testing::cached_keys;
using pader::testing::hygiene_violations;
using pader::testing::make_session;

const double kUlp = std::ldexp(1.0, -23);

class ProtocolTest : public ::testing::Test {
 protected:
  std::unique_ptr<Session> s = make_session();
  const paillier::SecretKey& sk = cached_keys(512).sec;

  BigInt dec(VarKey k) { return paillier::decrypt(sk, s->b().store().get<CipherVar>(k).ct); }
  void put_a(VarKey k, BigInt v, unsigned level = 1) { s->a().store().put(k, PlainFixed{v, level}); }
  void put_b(VarKey k, BigInt v, unsigned level = 1) { s->b().store().put(k, PlainFixed{v, level}); }
  void put_i(VarKey k, BigInt v, unsigned level = 1) {
    s->b().store().put(k, CipherVar{paillier::encrypt(sk.pub, mod_floor(v, s->N()), s->b().rng()), level});
  }
};

TEST_F(ProtocolTest, AddAllCases) {
  const BigInt S = pow2(23);
  put_a(1, 3);
  put_b(2, 4);
  secure_add(*s, OperandCase::AB, {1, 2, 10, 1, 1, 1});
  EXPECT_EQ(dec(10), 7);

  put_i(3, 5, 2);
  put_a(4, 6, 1);
  secure_add(*s, OperandCase::IA, {3, 4, 11, 2, 1, 2});
  EXPECT_EQ(dec(11), 5 + 6 * S);

  put_b(5, 9, 1);
  secure_add(*s, OperandCase::IB, {3, 5, 12, 2, 1, 3});
  EXPECT_EQ(dec(12), 5 * S + 9 * S * S);

  put_i(6, 0, 1);
  secure_add(*s, OperandCase::II, {3, 6, 13, 2, 1, 2});
  EXPECT_EQ(dec(13), 5);
  EXPECT_TRUE(hygiene_violations(*s, sk).empty());
}

TEST_F(ProtocolTest, AddRejectsBadLevelsAndMissingKeys) {
  put_a(1, 3);
  put_b(2, 4);
  EXPECT_THROW(secure_add(*s, OperandCase::AB, {1, 2, 10, 2, 1, 1}), LevelError);
  EXPECT_THROW(secure_add(*s, OperandCase::AB, {1, 99, 10, 1, 1, 1}), ProtocolError);
  EXPECT_THROW(secure_add(*s, OperandCase::II, {1, 2, 10, 1, 1, 1}), ProtocolError);
  EXPECT_EQ(s->channel().meters().total().messages, 0u);
}

TEST_F(ProtocolTest, MulReferenceCases) {
  put_a(1, 5);
  put_b(2, 7);
  secure_mul(*s, OperandCase::AB, {1, 2, 10, 1, 1, 2});
  EXPECT_EQ(dec(10), 35);

  put_i(3, 123456);
  put_a(4, 1);
  secure_mul(*s, OperandCase::IA, {3, 4, 11, 1, 1, 2});
  EXPECT_EQ(dec(11), 123456);

  put_b(5, 11);
  secure_mul(*s, OperandCase::IB, {3, 5, 12, 1, 1, 2});
  EXPECT_EQ(dec(12), 123456 * 11);

  EXPECT_THROW(secure_mul(*s, OperandCase::AB, {1, 2, 13, 1, 1, 3}), LevelError);
  EXPECT_TRUE(hygiene_violations(*s, sk).empty());
}

TEST_F(ProtocolTest, MulRandomOperandsAllCases) {
  Rng rng(3);
  const BigInt& N = s->N();
  for (int t = 0; t < 1000; ++t) {
    BigInt v1 = rng.below(N), v2 = rng.below(N);
    put_i(1, v1);
    put_i(2, v2);
    secure_mul(*s, OperandCase::II, {1, 2, 3, 1, 1, 2});
    ASSERT_EQ(dec(3), mod_floor(v1 * v2, N));
    if (t % 10 == 0) {
      put_a(4, v2);
      secure_mul(*s, OperandCase::IA, {1, 4, 5, 1, 1, 2});
      ASSERT_EQ(dec(5), mod_floor(v1 * v2, N));
    }
  }
  EXPECT_TRUE(hygiene_violations(*s, sk).empty());
}

TEST_F(ProtocolTest, MaskReuseIsRefused) {
  s->b().use_mask(12345);
  EXPECT_THROW(s->b().use_mask(12345), ProtocolError);
}

TEST_F(ProtocolTest, ScalarMasksLookUniform) {
  // Chi-square on the low byte of 10^5 masks; 255 degrees of freedom, the
  // 1e-4 upper quantile is about 341.
  std::vector<long> hist(256, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) hist[mpz_get_ui(s->b().scalar_mask().get_mpz_t()) & 0xff]++;
  double chi = 0, expect = draws / 256.0;
  for (long h : hist) chi += (h - expect) * (h - expect) / expect;
  EXPECT_LT(chi, 341.0);
}

Circuit x1_times_sum() {
  Circuit c;
  auto x1 = c.input(Party::A, "x1");
  auto x2 = c.input(Party::B, "x2");
  auto x3 = c.input(Party::B, "x3");
  c.mul(x1, c.add(x2, x3));
  return c;
}

TEST_F(ProtocolTest, PolyReferenceExampleAllRevealModes) {
  PartyInputs in{{{"x1", 2.0}}, {{"x2", 3.0}, {"x3", 4.0}}};
  auto ra = evaluate_securely(*s, x1_times_sum(), in, RevealMode::ToA);
  ASSERT_TRUE(ra.at_a && !ra.at_b);
  EXPECT_NEAR(*ra.at_a, 14.0, kUlp);
  auto rb = evaluate_securely(*s, x1_times_sum(), in, RevealMode::ToB);
  ASSERT_TRUE(rb.at_b && !rb.at_a);
  EXPECT_NEAR(*rb.at_b, 14.0, kUlp);
  auto both = evaluate_securely(*s, x1_times_sum(), in, RevealMode::ToBoth);
  EXPECT_NEAR(*both.at_a, 14.0, kUlp);
  EXPECT_NEAR(*both.at_b, 14.0, kUlp);
  PartyInputs zero{{{"x1", 0.0}}, {{"x2", 0.0}, {"x3", 0.0}}};
  EXPECT_EQ(*evaluate_securely(*s, x1_times_sum(), zero, RevealMode::ToA).at_a, 0.0);
  EXPECT_TRUE(hygiene_violations(*s, sk).empty());
}

TEST_F(ProtocolTest, PolyFullyLocalCircuits) {
  Circuit c;
  auto a = c.input(Party::A, "a");
  c.mul(a, c.input(Party::A, "b"));
  PartyInputs in{{{"a", 1.5}, {"b", -2.0}}, {}};
  EXPECT_NEAR(*evaluate_securely(*s, c, in, RevealMode::ToB).at_b, -3.0, kUlp);
  EXPECT_NEAR(*evaluate_securely(*s, c, in, RevealMode::ToA).at_a, -3.0, kUlp);
}

TEST_F(ProtocolTest, PolyRejectsUncompactedOrMismatchedInput) {
  Circuit c;
  auto a = c.input(Party::A, "a");
  auto b = c.input(Party::A, "b");
  c.add(c.mul(a, b), c.input(Party::B, "x"));
  PartyInputs in{{{"a", 1}, {"b", 1}}, {{"x", 1}}};
  EXPECT_THROW(secure_poly(*s, c, compute_levels(c), in, RevealMode::ToA), StructuralError);
  Circuit compact = local_compute(c);
  LevelMap wrong(compact.size(), 1);
  EXPECT_THROW(secure_poly(*s, compact, wrong, in, RevealMode::ToA), LevelError);
}

TEST_F(ProtocolTest, LevelGuardRunsBeforeAnyTraffic) {
  Circuit c;
  auto p = c.input(Party::A, "a0");
  for (int i = 0; i < 22; ++i) p = c.mul(p, c.input(i % 2 ? Party::A : Party::B, "v" + std::to_string(i)));
  PartyInputs in;
  EXPECT_THROW(evaluate_securely(*s, c, in, RevealMode::ToA), LevelError);
  EXPECT_EQ(s->channel().meters().total().messages, 0u);
}

TEST_F(ProtocolTest, DecodeOverflowDetected) {
  PartyInputs in{{{"x1", 100.0}}, {{"x2", 3.0}, {"x3", 4.0}}};
  PolyOptions opts;
  opts.value_bound = 10.0;
  EXPECT_THROW(evaluate_securely(*s, x1_times_sum(), in, RevealMode::ToA, opts), OverflowError);
}

TEST_F(ProtocolTest, RandomCircuitsMatchPlaintextOracle) {
  std::mt19937_64 gen(21);
  for (int t = 0; t < 150; ++t) {
    auto rc = pader::testing::random_circuit(gen, 3);
    PartyInputs in{rc.values, rc.values};
    Circuit compact = local_compute(rc.circuit);
    auto levels = compute_levels(compact);
    auto mode = static_cast<RevealMode>(t % 3);
    PolyOptions opts;
    opts.value_bound = 1e9;
    opts.key_base = static_cast<VarKey>(t) * 1000;
    auto r = secure_poly(*s, compact, levels, in, mode, opts);
    double want = eval_plaintext(rc.circuit, rc.values);
    double tol = levels.back() * kUlp;
    if (r.at_a) ASSERT_NEAR(*r.at_a, want, tol) << dump(compact, &levels);
    if (r.at_b) ASSERT_NEAR(*r.at_b, want, tol) << dump(compact, &levels);
  }
  EXPECT_TRUE(hygiene_violations(*s, sk).empty());
}

// Off-grid inputs: the only error source is input rounding, so the result is
// within a first-order sensitivity bound of the real-valued answer.
TEST_F(ProtocolTest, OffGridInputsWithinSensitivityBound) {
  std::mt19937_64 gen(22);
  for (int t = 0; t < 100; ++t) {
    auto rc = pader::testing::random_circuit(gen, 3, 4.0, 23, false);
    PartyInputs in{rc.values, rc.values};
    PolyOptions opts;
    opts.value_bound = 1e9;
    opts.key_base = static_cast<VarKey>(t) * 1000;
    double got = *evaluate_securely(*s, rc.circuit, in, RevealMode::ToA, opts).at_a;
    double want = eval_plaintext(rc.circuit, rc.values);
    double sens = 0;
    for (auto& [name, x] : rc.values) {
      Assignments up = rc.values, down = rc.values;
      up[name] = x + 1e-3;
      down[name] = x - 1e-3;
      sens += std::fabs(eval_plaintext(rc.circuit, up) - eval_plaintext(rc.circuit, down)) / 2e-3;
    }
    double bound = 2 * sens * kUlp / 2 + 8 * kUlp + 1e-12 * std::fabs(want);
    ASSERT_NEAR(got, want, bound) << dump(rc.circuit);
  }
}

TEST_F(ProtocolTest, StoresHoldOnlyWhatEachPartyMaySee) {
  std::mt19937_64 gen(23);
  for (int t = 0; t < 30; ++t) {
    auto rc = pader::testing::random_circuit(gen, 3);
    Circuit compact = local_compute(rc.circuit);
    PolyOptions opts;
    opts.value_bound = 1e9;
    opts.key_base = static_cast<VarKey>(t) * 1000;
    secure_poly(*s, compact, compute_levels(compact), {rc.values, rc.values}, RevealMode::ToB, opts);
    for (std::size_t i = 0; i < compact.size(); ++i) {
      const VarKey k = opts.key_base + i;
      auto owner = owner_of(compact.gate(i));
      if (!owner) {
        ASSERT_FALSE(s->a().store().contains(k));
        ASSERT_TRUE(std::holds_alternative<CipherVar>(s->b().store().at(k)));
      } else {
        VarStore& mine = *owner == Party::A ? s->a().store() : s->b().store();
        VarStore& theirs = *owner == Party::A ? s->b().store() : s->a().store();
        ASSERT_TRUE(std::holds_alternative<PlainFixed>(mine.at(k)));
        ASSERT_FALSE(theirs.contains(k));
      }
    }
  }
  EXPECT_TRUE(hygiene_violations(*s, sk).empty());
}

TEST(ProtocolTransport, LoopbackAndSocketTranscriptsAgree) {
  auto run = [](std::unique_ptr<Channel> ch) {
    SessionOptions opts;
    opts.seed = 77;
    opts.threads = 1;
    Session s(cached_keys(512), std::move(ch), opts);
    s.channel().record_transcript(true);
    std::mt19937_64 gen(5);
    for (int t = 0; t < 10; ++t) {
      auto rc = pader::testing::random_circuit(gen, 3);
      PolyOptions po;
      po.value_bound = 1e9;
      po.key_base = static_cast<VarKey>(t) * 1000;
      evaluate_securely(s, rc.circuit, {rc.values, rc.values}, static_cast<RevealMode>(t % 3), po);
    }
    return s.channel().transcript();
  };
  auto loop = run(std::make_unique<LoopbackChannel>());
  auto sock = run(SocketChannel::unix_pair());
  ASSERT_EQ(loop.size(), sock.size());
  for (std::size_t i = 0; i < loop.size(); ++i) {
    EXPECT_EQ(loop[i].direction, sock[i].direction);
    EXPECT_EQ(loop[i].frame, sock[i].frame);
  }
}

// f = (sum a_i x_i)(sum b_i y_i) with a, b at A and x, y at B.
struct InnerProductPair {
  BipartiteDecomposition bipartite;
  Circuit natural;
  PartyInputs inputs;
};

InnerProductPair inner_products(std::size_t n, std::mt19937_64& gen, bool ones) {
  InnerProductPair p;
  std::uniform_real_distribution<double> val(-2, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string k = std::to_string(i);
    p.inputs.a["a" + k] = ones ? 1.0 : val(gen);
    p.inputs.a["b" + k] = ones ? 1.0 : val(gen);
    p.inputs.b["x" + k] = ones ? 1.0 : val(gen);
    p.inputs.b["y" + k] = ones ? 1.0 : val(gen);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Circuit ha, hb;
      auto ai = ha.input(Party::A, "a" + std::to_string(i));
      ha.mul(ai, ha.input(Party::A, "b" + std::to_string(j)));
      auto xi = hb.input(Party::B, "x" + std::to_string(i));
      hb.mul(xi, hb.input(Party::B, "y" + std::to_string(j)));
      p.bipartite.h_a.push_back(ha);
      p.bipartite.h_b.push_back(hb);
    }
  }
  std::vector<std::size_t> left, right;
  for (std::size_t i = 0; i < n; ++i) {
    auto a = p.natural.input(Party::A, "a" + std::to_string(i));
    left.push_back(p.natural.mul(a, p.natural.input(Party::B, "x" + std::to_string(i))));
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto b = p.natural.input(Party::A, "b" + std::to_string(i));
    right.push_back(p.natural.mul(b, p.natural.input(Party::B, "y" + std::to_string(i))));
  }
  auto l = p.natural.sum(left);
  auto r = p.natural.sum(right);
  p.natural.mul(l, r);
  return p;
}

TEST_F(ProtocolTest, BipartiteInnerProductExample) {
  std::mt19937_64 gen(1);
  auto p = inner_products(2, gen, true);
  auto r = bipartite_compute(*s, p.bipartite, p.inputs, RevealMode::ToBoth);
  EXPECT_NEAR(*r.at_a, 4.0, 4 * kUlp);
  EXPECT_NEAR(*r.at_b, 4.0, 4 * kUlp);
  EXPECT_TRUE(hygiene_violations(*s, sk).empty());
}

TEST_F(ProtocolTest, BipartiteNeedsQuadraticTermsWhereNaturalOrderIsLinear) {
  std::mt19937_64 gen(2);
  auto p = inner_products(8, gen, false);
  Assignments all = p.inputs.a;
  all.insert(p.inputs.b.begin(), p.inputs.b.end());
  const double want = eval_plaintext(p.natural, all);

  s->channel().reset_meters();
  double bip = *bipartite_compute(*s, p.bipartite, p.inputs, RevealMode::ToA).at_a;
  auto bip_units = s->channel().meters().a_to_b.cipher_units;
  s->channel().reset_meters();
  double nat = *evaluate_securely(*s, p.natural, p.inputs, RevealMode::ToA).at_a;
  auto nat_units = s->channel().meters().total().cipher_units;

  EXPECT_EQ(p.bipartite.h_a.size(), 64u);
  EXPECT_EQ(bip_units, 64u);
  EXPECT_LE(nat_units, 2 * 8u + 4u);
  EXPECT_NEAR(bip, want, 1e-5);
  EXPECT_NEAR(nat, want, 1e-5);
}

TEST_F(ProtocolTest, RandomDecompositionsMatchOracle) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> val(-3, 3);
  for (int t = 0; t < 40; ++t) {
    BipartiteDecomposition d;
    PartyInputs in;
    Assignments all;
    for (int i = 0; i < 3; ++i) {
      in.a["a" + std::to_string(i)] = all["a" + std::to_string(i)] = val(gen);
      in.b["b" + std::to_string(i)] = all["b" + std::to_string(i)] = val(gen);
    }
    double want = 0;
    const std::size_t terms = 1 + gen() % 4;
    for (std::size_t i = 0; i < terms; ++i) {
      Circuit ha, hb;
      auto x = ha.input(Party::A, "a" + std::to_string(gen() % 3));
      if (gen() % 2) ha.add(x, ha.input(Party::A, "a" + std::to_string(gen() % 3)));
      auto y = hb.input(Party::B, "b" + std::to_string(gen() % 3));
      if (gen() % 2) hb.mul(y, hb.input(Party::B, "b" + std::to_string(gen() % 3)));
      want += eval_plaintext(ha, all) * eval_plaintext(hb, all);
      d.h_a.push_back(ha);
      d.h_b.push_back(hb);
    }
    if (gen() % 2) {
      Circuit g;
      g.input(Party::A, "a0");
      want += eval_plaintext(g, all);
      d.g_a = g;
    }
    if (gen() % 2) {
      Circuit g;
      auto b1 = g.input(Party::B, "b1");
      g.mul(b1, g.input(Party::B, "b2"));
      want += eval_plaintext(g, all);
      d.g_b = g;
    }
    auto r = bipartite_compute(*s, d, in, static_cast<RevealMode>(t % 3));
    double got = r.at_a ? *r.at_a : *r.at_b;
    ASSERT_NEAR(got, want, 1e-5);
  }
}

// Packs `values` (< bound) into rows of `width` on B's side.
std::vector<VarKey> stage_rows(Session& s, const std::vector<BigInt>& values, std::size_t width,
                               const PackingLayout& layout, const BigInt& bound, VarKey base) {
  std::vector<VarKey> rows;
  for (std::size_t r = 0; r * width < values.size(); ++r) {
    std::vector<BigInt> slot;
    std::vector<VarKey> elems;
    for (std::size_t i = r * width; i < std::min(values.size(), (r + 1) * width); ++i) {
      slot.push_back(values[i]);
      elems.push_back(base + i);
    }
    const VarKey key = base + 10000 + r;
    s.b().store().put(key, PackedCipherVar{s.b().encrypt(pack(slot, layout)), layout, elems, bound});
    rows.push_back(key);
  }
  return rows;
}

std::vector<BigInt> open_row(Session& s, const paillier::SecretKey& sk, VarKey row) {
  const auto& v = s.b().store().get<PackedCipherVar>(row);
  return unpack(paillier::decrypt(sk, v.ct), v.layout, v.elements.size());
}

TEST_F(ProtocolTest, RepackTwoByFourIntoFourByTwo) {
  const auto layout = make_layout(512, 100, EncodingParams(23, 56));
  ASSERT_EQ(layout.slot_count, 5u);
  const BigInt bound = pow2(56);
  Rng rng(9);
  std::vector<BigInt> values(8);
  for (auto& v : values) v = rng.below(bound);
  auto rows = stage_rows(*s, values, 4, layout, bound, 0);
  std::vector<RepackTarget> targets;
  for (std::size_t r = 0; r < 4; ++r) targets.push_back({500 + r, {2 * r, 2 * r + 1}});
  secure_repack(*s, rows, targets, layout);
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_EQ(open_row(*s, sk, 500 + r), (std::vector<BigInt>{values[2 * r], values[2 * r + 1]}));
  }
  EXPECT_TRUE(hygiene_violations(*s, sk).empty());
}

TEST_F(ProtocolTest, RepackIdentityAndTranspose) {
  const auto layout = make_layout(512, 100, EncodingParams(23, 56));
  const BigInt bound = pow2(50);
  Rng rng(10);
  std::vector<BigInt> values(6);
  for (auto& v : values) v = rng.below(bound);
  auto rows = stage_rows(*s, values, 3, layout, bound, 0);
  std::vector<RepackTarget> same{{700, {0, 1, 2}}, {701, {3, 4, 5}}};
  secure_repack(*s, rows, same, layout);
  EXPECT_EQ(open_row(*s, sk, 700), (std::vector<BigInt>{values[0], values[1], values[2]}));
  EXPECT_EQ(open_row(*s, sk, 701), (std::vector<BigInt>{values[3], values[4], values[5]}));
  std::vector<RepackTarget> cols{{800, {0, 3}}, {801, {1, 4}}, {802, {2, 5}}};
  secure_repack(*s, rows, cols, layout);
  EXPECT_EQ(open_row(*s, sk, 801), (std::vector<BigInt>{values[1], values[4]}));
  EXPECT_TRUE(hygiene_violations(*s, sk).empty());
}

TEST_F(ProtocolTest, RepackFullWidthRowsStayBelowN) {
  // 2 slots of 2^256 in a 512-bit N: the top slot's mask range is narrowed.
  const auto layout = make_layout(512, 256, EncodingParams(23, 80));
  const BigInt bound = pow2(200);
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    std::vector<BigInt> values{rng.below(bound), rng.below(bound)};
    auto rows = stage_rows(*s, values, 2, layout, bound, static_cast<VarKey>(t) * 100000);
    std::vector<RepackTarget> singles{{900, {static_cast<VarKey>(t) * 100000}}, {901, {static_cast<VarKey>(t) * 100000 + 1}}};
    secure_repack(*s, rows, singles, layout);
    EXPECT_EQ(open_row(*s, sk, 900)[0], values[0]);
    EXPECT_EQ(open_row(*s, sk, 901)[0], values[1]);
  }
  EXPECT_TRUE(hygiene_violations(*s, sk).empty());
}

TEST_F(ProtocolTest, RepackRejectsMissingKeysAndThinMargins) {
  const auto layout = make_layout(512, 100, EncodingParams(23, 56));
  auto rows = stage_rows(*s, {1, 2, 3}, 3, layout, pow2(56), 0);
  std::vector<RepackTarget> bad{{1, {0, 7}}};
  EXPECT_THROW(secure_repack(*s, rows, bad, layout), ProtocolError);
  std::vector<RepackTarget> twice{{1, {0, 0}}};
  EXPECT_THROW(secure_repack(*s, rows, twice, layout), ProtocolError);
  auto thin = stage_rows(*s, {1, 2}, 2, layout, pow2(61), 50);
  std::vector<RepackTarget> ok{{2, {50, 51}}};
  EXPECT_THROW(secure_repack(*s, thin, ok, layout), ProtocolError);
  EXPECT_EQ(s->channel().meters().total().messages, 0u);
}

TEST_F(ProtocolTest, RepackMasksLookUniformOnTheirRange) {
  const auto layout = make_layout(512, 100, EncodingParams(23, 56));
  Rng rng(12);
  for (int t = 0; t < 200; ++t) {
    auto rows = stage_rows(*s, {1, 2, 3, 4}, 4, layout, pow2(56), static_cast<VarKey>(t) * 100);
    std::vector<RepackTarget> tg{{static_cast<VarKey>(t) * 100 + 50, {static_cast<VarKey>(t) * 100}}};
    secure_repack(*s, rows, tg, layout);
  }
  std::vector<long> hist(16, 0);
  long total = 0;
  for (const auto& m : s->audit()->masks) {
    ASSERT_TRUE(m.layout.has_value());
    for (std::size_t i = 0; i < m.masks.size(); ++i) {
      ASSERT_EQ(m.moduli[i], layout.P() - pow2(56));
      hist[mpz_get_ui(m.masks[i].get_mpz_t()) & 0xf]++;
      ++total;
    }
  }
  double chi = 0, expect = total / 16.0;
  for (long h : hist) chi += (h - expect) * (h - expect) / expect;
  EXPECT_LT(chi, 45.0);  // 15 dof, p ~ 1e-4
  EXPECT_TRUE(hygiene_violations(*s, sk).empty());
}

}  // namespace
}  // namespace pader
