#pragma once

#include <map>
#include <memory>
#include <unordered_set>
#include <variant>

#include "pader/packing.hpp"
#include "pader/transport.hpp"

namespace pader {

using VarKey = std::uint64_t;

struct PlainFixed {
  BigInt value;  // owner-local fixed-point integer
  unsigned level = 1;
};

struct CipherVar {
  paillier::Ciphertext ct;
  unsigned level = 1;
};

struct PackedCipherVar {
  paillier::Ciphertext ct;
  PackingLayout layout;
  std::vector<VarKey> elements;  // element key held in each slot, slot 0 first
  BigInt slot_bound;             // every slot value is < slot_bound
};

using StoredValue = std::variant<PlainFixed, CipherVar, PackedCipherVar>;

class VarStore {
 public:
  void put(VarKey k, StoredValue v) { values_[k] = std::move(v); }
  bool contains(VarKey k) const { return values_.count(k) != 0; }
  void erase(VarKey k) { values_.erase(k); }
  void clear() { values_.clear(); }
  std::size_t size() const { return values_.size(); }

  const StoredValue& at(VarKey k) const {
    auto it = values_.find(k);
    if (it == values_.end()) throw ProtocolError("no variable stored at key " + std::to_string(k));
    return it->second;
  }

  template <typename T>
  const T& get(VarKey k) const {
    const auto* v = std::get_if<T>(&at(k));
    if (!v) throw ProtocolError("variable at key " + std::to_string(k) + " has the wrong kind");
    return *v;
  }

  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

 private:
  std::map<VarKey, StoredValue> values_;
};

enum class RevealMode { ToA, ToB, ToBoth };

enum class DecryptPurpose { MaskedIntermediate, FinalOutput, AggregatedGradient };

// Instrumentation for hygiene tests; populated only when auditing is enabled.
struct MaskRecord {
  std::vector<BigInt> masks;       // one per slot, or a single scalar mask
  std::vector<BigInt> moduli;      // masks[i] is uniform on [0, moduli[i])
  std::optional<PackingLayout> layout;
  paillier::Ciphertext original;   // ciphertext before masking
  paillier::Ciphertext masked;     // ciphertext sent to A
};

struct DecryptionRecord {
  DecryptPurpose purpose;
  paillier::Ciphertext ct;
  BigInt plaintext;
};

struct Audit {
  std::vector<MaskRecord> masks;
  std::vector<DecryptionRecord> decryptions;
};

struct SessionOptions {
  EncodingParams params{23, 80};
  std::uint64_t seed = 1;
  unsigned threads = paillier::kDefaultThreads;
  bool audit = false;
};

class Session;

// Party A: holds the secret key.
class KeyHolder {
 public:
  KeyHolder(const paillier::SecretKey& sk, Rng rng, unsigned threads, Audit* audit)
      : sk_(sk), rng_(std::move(rng)), threads_(threads), audit_(audit) {}

  const paillier::SecretKey& sk() const { return sk_; }
  const paillier::PublicKey& pk() const { return sk_.pub; }
  VarStore& store() { return store_; }
  const VarStore& store() const { return store_; }
  Rng& rng() { return rng_; }

  paillier::Ciphertext encrypt(const BigInt& x) { return paillier::encrypt(sk_, mod_floor(x, pk().n), rng_); }

  std::vector<paillier::Ciphertext> encrypt_all(std::span<const BigInt> xs) {
    std::vector<BigInt> reduced;
    reduced.reserve(xs.size());
    for (const auto& x : xs) reduced.push_back(mod_floor(x, pk().n));
    return paillier::encrypt_batch(sk_, std::span<const BigInt>(reduced), rng_, threads_);
  }

  paillier::Ciphertext rerandomize(const paillier::Ciphertext& c) { return paillier::rerandomize(sk_, c, rng_); }

  BigInt decrypt(const paillier::Ciphertext& c, DecryptPurpose purpose) {
    BigInt m = paillier::decrypt(sk_, c);
    if (audit_) audit_->decryptions.push_back({purpose, c, m});
    return m;
  }

  std::vector<BigInt> decrypt_all(std::span<const paillier::Ciphertext> cs, DecryptPurpose purpose) {
    auto out = paillier::decrypt_batch(sk_, cs, threads_);
    if (audit_) {
      for (std::size_t i = 0; i < cs.size(); ++i) audit_->decryptions.push_back({purpose, cs[i], out[i]});
    }
    return out;
  }

 private:
  paillier::SecretKey sk_;
  VarStore store_;
  Rng rng_;
  unsigned threads_;
  Audit* audit_;
};

// Party B: public key only.
class Evaluator {
 public:
  Evaluator(const paillier::PublicKey& pk, Rng rng, unsigned threads, Audit* audit)
      : pk_(pk), rng_(std::move(rng)), threads_(threads), audit_(audit) {}

  const paillier::PublicKey& pk() const { return pk_; }
  VarStore& store() { return store_; }
  const VarStore& store() const { return store_; }
  Rng& rng() { return rng_; }

  paillier::Ciphertext encrypt(const BigInt& x) { return paillier::encrypt(pk_, mod_floor(x, pk_.n), rng_); }

  std::vector<paillier::Ciphertext> encrypt_all(std::span<const BigInt> xs) {
    std::vector<BigInt> reduced;
    reduced.reserve(xs.size());
    for (const auto& x : xs) reduced.push_back(mod_floor(x, pk_.n));
    return paillier::encrypt_batch(pk_, std::span<const BigInt>(reduced), rng_, threads_);
  }

  paillier::Ciphertext add(const paillier::Ciphertext& a, const paillier::Ciphertext& b) const {
    return paillier::hom_add(pk_, a, b);
  }

  // c (x) k for any integer k, reduced mod n.
  paillier::Ciphertext mul(const paillier::Ciphertext& c, const BigInt& k) const {
    return paillier::ct_pt_mul(pk_, c, mod_floor(k, pk_.n));
  }

  paillier::Ciphertext rerandomize(const paillier::Ciphertext& c) { return paillier::rerandomize(pk_, c, rng_); }

  // Uniform on Z_N; a repeated value is refused.
  BigInt scalar_mask() {
    BigInt r = rng_.below(pk_.n);
    use_mask(r);
    return r;
  }

  void use_mask(const BigInt& r) {
    if (!used_masks_.insert(to_hex(r)).second) throw ProtocolError("mask reuse detected");
  }

  void record_mask(std::vector<BigInt> masks, std::vector<BigInt> moduli, std::optional<PackingLayout> layout,
                   const paillier::Ciphertext& original, const paillier::Ciphertext& masked) {
    if (audit_) audit_->masks.push_back({std::move(masks), std::move(moduli), std::move(layout), original, masked});
  }

 private:
  paillier::PublicKey pk_;
  VarStore store_;
  Rng rng_;
  unsigned threads_;
  Audit* audit_;
  std::unordered_set<std::string> used_masks_;
};

// Two-party state: A (seller, key holder) and B (user, evaluator) joined by a
// channel. Both parties run in the caller's thread; they interact only
// through frames on the channel.
class Session {
 public:
  Session(const paillier::KeyPair& keys, std::unique_ptr<Channel> channel, SessionOptions opts = {})
      : opts_(opts),
        channel_(std::move(channel)),
        audit_(opts.audit ? std::make_unique<Audit>() : nullptr),
        a_(keys.sec, Rng(opts.seed).fork("party-A"), opts.threads, audit_.get()),
        b_(keys.pub, Rng(opts.seed).fork("party-B"), opts.threads, audit_.get()) {
    opts_.params.validate();
    if (!channel_) throw ParameterError("session needs a channel");
  }

  KeyHolder& a() { return a_; }
  Evaluator& b() { return b_; }
  Channel& channel() { return *channel_; }
  const EncodingParams& params() const { return opts_.params; }
  const paillier::PublicKey& pk() const { return b_.pk(); }
  const BigInt& N() const { return b_.pk().n; }
  const SessionOptions& options() const { return opts_; }
  Audit* audit() { return audit_.get(); }

  void send_ciphers(Party from, std::span<const paillier::Ciphertext> cs) {
    channel_->send(from, cs.size() == 1 ? wire::cipher(pk(), cs[0]) : wire::cipher_batch(pk(), cs));
  }

  std::vector<paillier::Ciphertext> recv_ciphers(Party at, std::size_t expected) {
    auto cs = wire::read_ciphers(pk(), channel_->recv(at));
    if (cs.size() != expected) {
      throw ProtocolError("expected " + std::to_string(expected) + " ciphertexts, got " + std::to_string(cs.size()));
    }
    return cs;
  }

  void send_plain(Party from, std::span<const BigInt> xs) { channel_->send(from, wire::plain(xs)); }

  std::vector<BigInt> recv_plain(Party at, std::size_t expected) {
    auto xs = wire::read_plain(channel_->recv(at));
    if (xs.size() != expected) {
      throw ProtocolError("expected " + std::to_string(expected) + " plaintexts, got " + std::to_string(xs.size()));
    }
    return xs;
  }

 private:
  SessionOptions opts_;
  std::unique_ptr<Channel> channel_;
  std::unique_ptr<Audit> audit_;
  KeyHolder a_;
  Evaluator b_;
};

}  // namespace pader
