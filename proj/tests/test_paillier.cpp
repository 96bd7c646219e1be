#include <gtest/gtest.h>

#include <set>
#include <sstream>
#include <thread>

#include "pader/paillier.hpp"
#include "support.hpp"

namespace pader::paillier {
namespace {

using pader::testing::cached_keys;

class PaillierTest : public ::testing::Test {
 protected:
  const KeyPair& kp = cached_keys(512);
  const PublicKey& pk = kp.pub;
  const SecretKey& sk = kp.sec;
  Rng rng{42};
};

TEST(Keygen, ModulusHasRequestedBitLength2048) {
  const auto& kp = cached_keys(2048);
  EXPECT_EQ(bit_length(kp.pub.n), 2048u);
  EXPECT_EQ(kp.pub.g, kp.pub.n + 1);
  EXPECT_EQ(kp.sec.p * kp.sec.q, kp.pub.n);
  EXPECT_NE(kp.sec.p, kp.sec.q);
  EXPECT_EQ(bit_length(kp.sec.p), 1024u);
  EXPECT_EQ(bit_length(kp.sec.q), 1024u);
}

TEST(Keygen, RejectsSmallOrOddSizes) {
  Rng rng(1);
  EXPECT_THROW(keygen(256, rng), ParameterError);
  EXPECT_THROW(keygen(510, rng), ParameterError);
  EXPECT_THROW(keygen(513, rng), ParameterError);
}

TEST(Keygen, SeedDeterminesKeys) {
  Rng a(99), b(99);
  EXPECT_EQ(keygen(512, a).pub.n, keygen(512, b).pub.n);
}

TEST_F(PaillierTest, PlaintextRingBoundaries) {
  EXPECT_EQ(decrypt(sk, encrypt(pk, 0, rng)), 0);
  EXPECT_EQ(decrypt(sk, encrypt(pk, pk.n - 1, rng)), pk.n - 1);
  EXPECT_EQ(decrypt(sk, encrypt(pk, 123456789, rng)), 123456789);
  EXPECT_EQ(decrypt(sk, encrypt(pk, 7, rng)), 7);
}

TEST_F(PaillierTest, EncryptionIsProbabilistic) {
  Ciphertext a = encrypt(pk, 5, rng);
  Ciphertext b = encrypt(pk, 5, rng);
  EXPECT_NE(a.value, b.value);
  EXPECT_EQ(decrypt(sk, a), 5);
  EXPECT_EQ(decrypt(sk, b), 5);

  std::set<std::string> seen;
  for (int i = 0; i < 100; ++i) seen.insert(to_hex(encrypt(pk, 5, rng).value));
  EXPECT_EQ(seen.size(), 100u);
}

TEST_F(PaillierTest, OutOfRangePlaintextsRejected) {
  EXPECT_THROW(encrypt(pk, pk.n, rng), RangeError);
  EXPECT_THROW(encrypt(pk, -1, rng), RangeError);
  Ciphertext c = encrypt(pk, 6, rng);
  EXPECT_THROW(ct_pt_mul(pk, c, pk.n), RangeError);
  EXPECT_THROW(ct_pt_mul(pk, c, -1), RangeError);
}

TEST_F(PaillierTest, SmallHomomorphismCases) {
  auto enc = [&](long x) { return encrypt(pk, x, rng); };
  EXPECT_EQ(decrypt(sk, hom_add(pk, enc(5), enc(7))), 12);
  EXPECT_EQ(decrypt(sk, hom_add(pk, enc(3), enc(4))), 7);
  EXPECT_EQ(decrypt(sk, ct_pt_mul(pk, enc(5), 7)), 35);
  EXPECT_EQ(decrypt(sk, ct_pt_mul(pk, enc(6), 7)), 42);
  EXPECT_EQ(decrypt(sk, ct_pt_mul(pk, enc(6), 1)), 6);
  EXPECT_EQ(decrypt(sk, ct_pt_mul(pk, enc(6), 0)), 0);
  EXPECT_EQ(decrypt(sk, hom_add(pk, encrypt(pk, pk.n - 1, rng), enc(2))), 1);
  EXPECT_EQ(decrypt(sk, negate(pk, enc(9))), pk.n - 9);
}

TEST_F(PaillierTest, MalformedCiphertextsRejected) {
  EXPECT_THROW(decrypt(sk, Ciphertext{pk.n, pk.id}), MalformedCiphertext);
  EXPECT_THROW(decrypt(sk, Ciphertext{sk.p * 5, pk.id}), MalformedCiphertext);
  EXPECT_THROW(decrypt(sk, Ciphertext{0, pk.id}), MalformedCiphertext);
  EXPECT_THROW(decrypt(sk, Ciphertext{pk.n_squared, pk.id}), MalformedCiphertext);
}

TEST_F(PaillierTest, MismatchedKeysRejected) {
  const KeyPair& other = cached_keys(512, 8);
  Ciphertext a = encrypt(pk, 1, rng);
  Ciphertext b = encrypt(other.pub, 1, rng);
  EXPECT_THROW(hom_add(pk, a, b), KeyMismatch);
  EXPECT_THROW(decrypt(sk, b), KeyMismatch);
  EXPECT_THROW(ct_pt_mul(pk, b, 2), KeyMismatch);
}

TEST_F(PaillierTest, RerandomizationKeepsPlaintext) {
  Ciphertext c = encrypt(pk, 9, rng);
  Ciphertext r1 = rerandomize(pk, c, rng);
  Ciphertext r2 = rerandomize(pk, r1, rng);
  EXPECT_NE(r1.value, c.value);
  EXPECT_NE(r2.value, r1.value);
  EXPECT_EQ(decrypt(sk, r1), 9);
  EXPECT_EQ(decrypt(sk, r2), 9);
  Ciphertext r3 = rerandomize(sk, c, rng);
  EXPECT_NE(r3.value, c.value);
  EXPECT_EQ(decrypt(sk, r3), 9);
}

TEST_F(PaillierTest, RandomizedLaws) {
  for (int t = 0; t < 1000; ++t) {
    BigInt x = rng.below(pk.n), y = rng.below(pk.n);
    Ciphertext cx = encrypt(pk, x, rng), cy = encrypt(pk, y, rng);
    ASSERT_EQ(decrypt(sk, cx), x);
    ASSERT_EQ(decrypt(sk, hom_add(pk, cx, cy)), mod_floor(x + y, pk.n));
    ASSERT_EQ(decrypt(sk, ct_pt_mul(pk, cx, y)), mod_floor(x * y, pk.n));
    Ciphertext rr = rerandomize(pk, cx, rng);
    ASSERT_NE(rr.value, cx.value);
    ASSERT_EQ(decrypt(sk, rr), x);
  }
}

TEST_F(PaillierTest, ScalarMultiplicationMatchesRepeatedAddition) {
  BigInt x = rng.below(pk.n);
  Ciphertext cx = encrypt(pk, x, rng);
  Ciphertext acc = encrypt(pk, 0, rng);
  for (int k = 0; k <= 16; ++k) {
    ASSERT_EQ(decrypt(sk, ct_pt_mul(pk, cx, k)), decrypt(sk, acc)) << "k=" << k;
    acc = hom_add(pk, acc, cx);
  }
}

TEST_F(PaillierTest, CrtPathsAgreeWithTextbookFormulas) {
  for (int t = 0; t < 50; ++t) {
    BigInt x = rng.below(pk.n);
    Ciphertext c = encrypt(sk, x, rng);
    // L(c^lambda mod n^2) * mu mod n
    BigInt u = powm(c.value, sk.lambda, pk.n_squared);
    BigInt textbook = mod_floor((u - 1) / pk.n * sk.mu, pk.n);
    ASSERT_EQ(textbook, x);
    ASSERT_EQ(decrypt(sk, c), x);
  }
}

TEST_F(PaillierTest, SerializationIsFixedWidth) {
  EXPECT_EQ(pk.ciphertext_bytes(), 128u);
  for (int t = 0; t < 100; ++t) {
    Ciphertext c = encrypt(pk, rng.below(pk.n), rng);
    auto bytes = serialize(pk, c);
    ASSERT_EQ(bytes.size(), 128u);
    ASSERT_EQ(deserialize(pk, bytes), c);
  }
  Ciphertext small{BigInt(3), pk.id};
  EXPECT_EQ(serialize(pk, small).size(), 128u);
  std::vector<std::uint8_t> wrong(127, 1);
  EXPECT_THROW(deserialize(pk, wrong), MalformedCiphertext);
  std::vector<std::uint8_t> too_big(128, 0xff);
  EXPECT_THROW(deserialize(pk, too_big), MalformedCiphertext);
}

TEST_F(PaillierTest, BatchEncryptionIsOrderStableAcrossThreadCounts) {
  std::vector<BigInt> xs;
  for (int i = 0; i < 24; ++i) xs.push_back(i * 1000 + 1);
  Rng a(5), b(5), c(5);
  auto one = encrypt_batch(pk, xs, a, 1);
  auto four = encrypt_batch(pk, xs, b, 4);
  auto crt = encrypt_batch(sk, xs, c, 3);
  ASSERT_EQ(one, four);
  auto dec = decrypt_batch(sk, crt, 4);
  for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_EQ(dec[i], xs[i]);
}

TEST_F(PaillierTest, ConcurrentDecryption) {
  std::vector<Ciphertext> cs;
  for (int i = 0; i < 64; ++i) cs.push_back(encrypt(pk, i, rng));
  std::vector<std::thread> pool;
  std::atomic<int> bad{0};
  for (int t = 0; t < 4; ++t) {
    pool.emplace_back([&] {
      for (int i = 0; i < 64; ++i) {
        if (decrypt(sk, cs[i]) != i) ++bad;
      }
    });
  }
  for (auto& t : pool) t.join();
  EXPECT_EQ(bad.load(), 0);
}

TEST_F(PaillierTest, KeyFilesRoundTrip) {
  Ciphertext before = encrypt(pk, 31337, rng);
  std::stringstream pub, sec;
  write_public_key(pub, pk);
  write_secret_key(sec, sk);
  PublicKey pk2 = read_public_key(pub);
  SecretKey sk2 = read_secret_key(sec);
  EXPECT_EQ(pk2, pk);
  EXPECT_EQ(pk2.id, pk.id);
  EXPECT_EQ(decrypt(sk2, before), 31337);
  EXPECT_EQ(decrypt(sk, encrypt(pk2, 4, rng)), 4);
}

TEST(KeyFiles, RejectsCorruptInput) {
  std::stringstream bad_magic("not a key\n");
  EXPECT_THROW(read_public_key(bad_magic), ParseError);
  std::stringstream missing("pader-paillier-key v1\nkind public\nkey_bits 512\n");
  EXPECT_THROW(read_public_key(missing), ParseError);
  std::stringstream mismatch("pader-paillier-key v1\nkind secret\nkey_bits 4\nn e\np 3\nq 5\n");
  EXPECT_THROW(read_secret_key(mismatch), ParseError);
  std::stringstream garbage("pader-paillier-key v1\nkind public\nkey_bits lots\nn f\n");
  EXPECT_THROW(read_public_key(garbage), ParseError);
}

}  // namespace
}  // namespace pader::paillier
