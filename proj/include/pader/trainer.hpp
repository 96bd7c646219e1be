#pragma once

#include <chrono>
#include <functional>

#include "pader/data.hpp"

namespace pader::train {

enum class Method { Plain, Bipartite, BipartitePacked, Pader, PaderPacked };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::Plain: return "plain";
    case Method::Bipartite: return "bipartite";
    case Method::BipartitePacked: return "bipartite-packed";
    case Method::Pader: return "pader";
    case Method::PaderPacked: return "pader-packed";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (auto m : {Method::Plain, Method::Bipartite, Method::BipartitePacked, Method::Pader, Method::PaderPacked}) {
    if (s == to_string(m)) return m;
  }
  throw ParameterError("unknown method '" + s + "'");
}

inline bool is_bipartite(Method m) { return m == Method::Bipartite || m == Method::BipartitePacked; }
inline bool is_packed(Method m) { return m == Method::BipartitePacked || m == Method::PaderPacked; }

// Unset fields take the method's defaults: Q = 2^56, P = 2^128 for the
// bipartite step, Q = 2^80, P = 2^256 for the natural-order step, S = 2^23.
struct LayoutOverrides {
  std::optional<unsigned> scale_bits;
  std::optional<unsigned> slot_modulus_bits;
  std::optional<std::size_t> slot_bits;
};

inline soreg::StepLayouts layouts_for(Method m, std::size_t key_bits, const LayoutOverrides& o = {}) {
  if (m == Method::Plain) throw ParameterError("the plaintext method has no packing layout");
  const bool bip = is_bipartite(m);
  const EncodingParams params(o.scale_bits.value_or(23), o.slot_modulus_bits.value_or(bip ? 56 : 80));
  return soreg::make_step_layouts(key_bits, o.slot_bits.value_or(bip ? 128 : 256), params, is_packed(m));
}

inline soreg::StepResult run_secure_step(Session& s, Method m, const soreg::Mat& v, const soreg::UserBatch& b,
                                         const soreg::StepLayouts& l) {
  return is_bipartite(m) ? soreg::secure_sgd_bipartite(s, v, b, l) : soreg::secure_sgd_natural(s, v, b, l);
}

struct TrainConfig {
  Method method = Method::Plain;
  std::size_t k = 8;  // latent dimension; steps run on k + 2 coordinates
  soreg::Hyper hyper;
  std::size_t epochs = 5;
  std::size_t max_items = 8;
  std::size_t max_friends = 10;
  std::size_t key_bits = 512;
  std::size_t threshold = 2;
  double init_sd = 0.1;
  std::uint64_t seed = 1;
  unsigned threads = paillier::kDefaultThreads;
  LayoutOverrides layout;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_rmse = 0;
  double val_rmse = 0;
  std::size_t steps = 0;
  std::uint64_t bytes = 0;
  double seconds = 0;
};

// One user at a time, one step per (user, seller, batch of <= max_items).
// The user embedding moves after every step; item embeddings move when the
// seller's aggregator has `threshold` contributions for that item. The
// plaintext method follows the same schedule and aggregation rule.
class Trainer {
 public:
  Trainer(const data::RatingDataset& ds, data::Split split, TrainConfig cfg)
      : ds_(ds), split_(std::move(split)), cfg_(cfg), friends_(data::friends_of(ds)),
        schedule_(cfg.seed),
        friend_schedule_(cfg.seed + 1) {
    if (cfg_.max_items == 0) throw ParameterError("need at least one item per step");
    if (cfg_.threshold < 2) throw ParameterError("aggregation threshold must be at least 2");
    if (split_.train.empty()) throw ParameterError("empty training set");
    if (ds_.item_seller.size() != ds_.n_items()) throw ParameterError("item-seller map does not cover every item");
    model_ = soreg::SoRegModel::init(ds_.n_users(), ds_.n_items(), cfg_.k, cfg_.hyper, cfg_.init_sd,
                                     cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
    model_.mean = data::mean_rating(split_.train);
    std::size_t n_sellers = 0;
    for (auto s : ds_.item_seller) n_sellers = std::max(n_sellers, s + 1);
    by_user_.assign(ds_.n_users(), std::vector<std::vector<std::size_t>>(n_sellers));
    for (std::size_t x = 0; x < split_.train.size(); ++x) {
      const auto& r = split_.train[x];
      by_user_[r.user][ds_.item_seller[r.item]].push_back(x);
    }
    if (cfg_.method != Method::Plain) {
      layouts_ = layouts_for(cfg_.method, cfg_.key_bits, cfg_.layout);
      const Rng root(cfg_.seed);
      for (std::size_t s = 0; s < n_sellers; ++s) {
        Rng key_rng = root.fork("seller-key-" + std::to_string(s));
        auto keys = paillier::keygen(cfg_.key_bits, key_rng);
        SessionOptions opts;
        opts.params = EncodingParams(static_cast<unsigned>(layouts_.embedding.scale_bits),
                                     static_cast<unsigned>(layouts_.embedding.slot_modulus_bits));
        opts.seed = cfg_.seed + 1000003 * (s + 1);
        opts.threads = cfg_.threads;
        Seller seller;
        seller.session = std::make_unique<Session>(keys, std::make_unique<LoopbackChannel>(), opts);
        seller.aggregator = std::make_unique<soreg::GradientAggregator>(
            layouts_.embedding, is_bipartite(cfg_.method) ? 2 : 3, model_.dim(), cfg_.threshold);
        sellers_.push_back(std::move(seller));
      }
      friend_rng_ = std::make_unique<Rng>(root.fork("friends"));
    }
  }

  const soreg::SoRegModel& model() const { return model_; }
  std::size_t epochs_done() const { return epoch_; }

  std::uint64_t bytes() const {
    std::uint64_t b = 0;
    for (const auto& s : sellers_) b += s.session->channel().meters().total().bytes;
    return b;
  }

  EpochStats evaluate() const {
    EpochStats st;
    st.epoch = epoch_;
    st.train_rmse = data::rmse(model_, split_.train);
    st.val_rmse = split_.test.empty() ? std::nan("") : data::rmse(model_, split_.test);
    return st;
  }

  EpochStats run_epoch() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t bytes0 = bytes();
    std::size_t steps = 0;
    std::vector<std::size_t> users(ds_.n_users());
    std::iota(users.begin(), users.end(), 0);
    std::shuffle(users.begin(), users.end(), schedule_);
    try {
      for (auto u : users) {
        for (std::size_t s = 0; s < by_user_[u].size(); ++s) {
          auto rows = by_user_[u][s];
          if (rows.empty()) continue;
          std::shuffle(rows.begin(), rows.end(), schedule_);
          for (std::size_t b = 0; b < rows.size(); b += cfg_.max_items) {
            std::vector<std::size_t> batch(rows.begin() + static_cast<std::ptrdiff_t>(b),
                                           rows.begin() + static_cast<std::ptrdiff_t>(std::min(rows.size(), b + cfg_.max_items)));
            step(u, s, batch);
            ++steps;
          }
        }
      }
    } catch (const OverflowError& e) {
      throw TrainingDiverged("epoch " + std::to_string(epoch_ + 1) + ": fixed-point range exceeded (" + e.what() + ")");
    }
    ++epoch_;
    EpochStats st = evaluate();
    st.steps = steps;
    st.bytes = bytes() - bytes0;
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!model_.finite() || !std::isfinite(st.train_rmse)) {
      throw TrainingDiverged("epoch " + std::to_string(epoch_) + ": non-finite model or loss");
    }
    return st;
  }

  std::vector<EpochStats> train(const std::function<void(const EpochStats&)>& on_epoch = {}) {
    std::vector<EpochStats> out;
    for (std::size_t e = 0; e < cfg_.epochs; ++e) {
      out.push_back(run_epoch());
      if (on_epoch) on_epoch(out.back());
    }
    return out;
  }

 private:
  struct Seller {
    std::unique_ptr<Session> session;
    std::unique_ptr<soreg::GradientAggregator> aggregator;
  };

  void step(std::size_t user, std::size_t seller, const std::vector<std::size_t>& rows) {
    soreg::Mat v;
    soreg::Vec r, w;
    std::vector<std::size_t> items;
    for (auto x : rows) {
      const auto& rating = split_.train[x];
      items.push_back(rating.item);
      v.push_back(model_.V[rating.item]);
      r.push_back(rating.value - model_.mean);
      w.push_back(1.0);
    }
    auto fr = friends_[user];
    std::shuffle(fr.begin(), fr.end(), friend_schedule_);
    if (fr.size() > cfg_.max_friends) fr.resize(cfg_.max_friends);

    if (cfg_.method == Method::Plain) {
      soreg::Mat f;
      for (auto j : fr) f.push_back(model_.U[j]);
      auto g = soreg::plaintext_sgd_step(model_.U[user], v, r, w, f, cfg_.hyper.lambda_s);
      model_.update_user(user, g.du);
      require_finite(model_.U[user]);
      for (std::size_t i = 0; i < items.size(); ++i) {
        auto& [sum, count] = pending_[items[i]];
        if (sum.empty()) sum.assign(model_.dim(), 0.0);
        for (std::size_t p = 0; p < sum.size(); ++p) sum[p] += g.dv[i][p];
        if (++count >= cfg_.threshold) {
          model_.update_item(items[i], sum);
          require_finite(model_.V[items[i]]);
          pending_.erase(items[i]);
        }
      }
      return;
    }

    auto& S = sellers_[seller];
    soreg::UserBatch b{model_.U[user], r, w, {}, cfg_.hyper.lambda_s};
    for (auto j : fr) {
      b.friends.push_back(soreg::encrypt_friend_embedding(S.session->pk(), model_.U[j], layouts_.embedding, *friend_rng_));
    }
    auto res = run_secure_step(*S.session, cfg_.method, v, b, layouts_);
    model_.update_user(user, res.du);
    require_finite(model_.U[user]);
    std::map<std::size_t, std::vector<paillier::Ciphertext>> contrib;
    for (std::size_t i = 0; i < items.size(); ++i) contrib[items[i]] = res.item_gradients[i];
    S.aggregator->submit(S.session->pk(), contrib, res.slot_bound);
    for (const auto& [item, g] : S.aggregator->release(S.session->a())) {
      model_.update_item(item, g);
      require_finite(model_.V[item]);
    }
  }

  void require_finite(const soreg::Vec& row) const {
    for (double x : row) {
      if (!std::isfinite(x)) throw TrainingDiverged("epoch " + std::to_string(epoch_ + 1) + ": non-finite embedding");
    }
  }

  data::RatingDataset ds_;
  data::Split split_;
  TrainConfig cfg_;
  std::vector<std::vector<std::size_t>> friends_;
  std::mt19937_64 schedule_;
  std::mt19937_64 friend_schedule_;
  soreg::SoRegModel model_;
  std::vector<std::vector<std::vector<std::size_t>>> by_user_;  // user -> seller -> train rows
  soreg::StepLayouts layouts_;
  std::vector<Seller> sellers_;
  std::unique_ptr<Rng> friend_rng_;
  std::map<std::size_t, std::pair<soreg::Vec, std::size_t>> pending_;
  std::size_t epoch_ = 0;
};

}  // namespace pader::train
