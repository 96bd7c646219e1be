#pragma once

#include <algorithm>
#include <chrono>
#include <ostream>
#include <random>
#include <sstream>

#include "pader/trainer.hpp"

namespace pader::bench {

struct BenchConfig {
  train::Method method = train::Method::PaderPacked;
  std::vector<std::size_t> items{8};
  std::vector<std::size_t> dims{8};
  std::vector<std::size_t> friends{10};
  std::size_t key_bits = 2048;
  train::LayoutOverrides layout;
  std::vector<double> bandwidth_mbps{10, 100};
  std::uint64_t seed = 1;
  std::size_t reps = 5;
  unsigned threads = paillier::kDefaultThreads;
  RevealMode reveal = RevealMode::ToB;
};

// One maximal run of frames in a single direction.
struct Leg {
  Direction direction = Direction::AtoB;
  std::uint64_t bytes = 0;
  std::uint64_t units = 0;
};

struct BenchRow {
  std::string method;
  std::size_t n = 0, k = 0, m = 0;
  double pure_time_s = std::nan("");
  std::uint64_t bytes = 0;
  std::vector<double> est_s;
  std::string status = "ok";
  std::string detail;
  Meters meters;
  std::vector<Leg> legs;
};

inline double median(std::vector<double> xs) {
  if (xs.empty()) throw ParameterError("median of an empty sample");
  std::sort(xs.begin(), xs.end());
  const std::size_t h = xs.size() / 2;
  return xs.size() % 2 ? xs[h] : 0.5 * (xs[h - 1] + xs[h]);
}

inline std::vector<Leg> legs_of(const std::vector<TranscriptEntry>& transcript) {
  std::vector<Leg> out;
  for (const auto& e : transcript) {
    if (out.empty() || out.back().direction != e.direction) out.push_back({e.direction, 0, 0});
    out.back().bytes += wire::encode_frame(e.frame).size();
    out.back().units += wire::units(e.frame);
  }
  return out;
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline soreg::Vec random_vec(std::mt19937_64& gen, std::size_t k, double range) {
  std::uniform_real_distribution<double> d(-range, range);
  soreg::Vec v(k);
  for (auto& x : v) x = d(gen);
  return v;
}

inline std::unique_ptr<Session> make_session(const paillier::KeyPair& keys, const soreg::StepLayouts& l,
                                             std::uint64_t seed, unsigned threads) {
  SessionOptions opts;
  opts.params = EncodingParams(static_cast<unsigned>(l.embedding.scale_bits),
                               static_cast<unsigned>(l.embedding.slot_modulus_bits));
  opts.seed = seed;
  opts.threads = threads;
  auto s = std::make_unique<Session>(keys, std::make_unique<LoopbackChannel>(), opts);
  s->channel().record_transcript(true);
  return s;
}

inline void finish(BenchRow& row, const std::vector<double>& times, const std::vector<double>& bandwidth_mbps) {
  row.pure_time_s = median(times);
  row.bytes = row.meters.total().bytes;
  for (double b : bandwidth_mbps) row.est_s.push_back(estimate_wallclock(row.bytes, row.pure_time_s, {b * 1e6}));
}

inline void flag(BenchRow& row, const std::exception& e, std::size_t bandwidths) {
  row.status = "infeasible";
  row.detail = e.what();
  row.est_s.assign(bandwidths, std::nan(""));
}

}  // namespace detail

// One metered SGD step per repetition on random inputs; bytes come from the
// channel meters, time is the median wall clock.
inline BenchRow bench_train_point(const paillier::KeyPair& keys, const BenchConfig& cfg, std::size_t n, std::size_t k,
                                  std::size_t m) {
  if (cfg.reps == 0) throw ParameterError("need at least one repetition");
  BenchRow row;
  row.method = to_string(cfg.method);
  row.n = n;
  row.k = k;
  row.m = m;
  std::mt19937_64 gen(cfg.seed ^ (n * 1000003 + k * 1009 + m));
  const auto u = detail::random_vec(gen, k, 1.0);
  soreg::Mat v(n), f(m);
  for (auto& x : v) x = detail::random_vec(gen, k, 1.0);
  for (auto& x : f) x = detail::random_vec(gen, k, 1.0);
  const auto r = detail::random_vec(gen, n, 2.0);
  const soreg::Vec w(n, 1.0);
  const double lambda_s = 0.5;
  std::vector<double> times;
  try {
    if (cfg.method == train::Method::Plain) {
      for (std::size_t rep = 0; rep < cfg.reps; ++rep) {
        const auto t0 = std::chrono::steady_clock::now();
        auto g = soreg::plaintext_sgd_step(u, v, r, w, f, lambda_s);
        times.push_back(detail::seconds_since(t0));
        if (g.du.empty()) throw Error("empty gradient");
      }
      detail::finish(row, times, cfg.bandwidth_mbps);
      return row;
    }
    const auto layouts = train::layouts_for(cfg.method, keys.pub.key_bits, cfg.layout);
    Rng friend_rng(cfg.seed);
    soreg::UserBatch batch{u, r, w, {}, lambda_s};
    for (const auto& x : f) {
      batch.friends.push_back(soreg::encrypt_friend_embedding(keys.pub, x, layouts.embedding, friend_rng));
    }
    for (std::size_t rep = 0; rep < cfg.reps; ++rep) {
      auto s = detail::make_session(keys, layouts, cfg.seed + rep, cfg.threads);
      const auto t0 = std::chrono::steady_clock::now();
      train::run_secure_step(*s, cfg.method, v, batch, layouts);
      times.push_back(detail::seconds_since(t0));
      const auto meters = s->channel().meters();
      if (rep == 0) {
        row.meters = meters;
        row.legs = legs_of(s->channel().transcript());
      } else if (meters.total().bytes != row.meters.total().bytes) {
        throw Error("byte count changed between repetitions");
      }
    }
    detail::finish(row, times, cfg.bandwidth_mbps);
  } catch (const CannotPack& e) {
    detail::flag(row, e, cfg.bandwidth_mbps.size());
  } catch (const OverflowError& e) {
    detail::flag(row, e, cfg.bandwidth_mbps.size());
  } catch (const ProtocolError& e) {
    detail::flag(row, e, cfg.bandwidth_mbps.size());
  }
  return row;
}

// Secure dot products of one user embedding against n item embeddings; m is
// unused and reported as 0.
inline BenchRow bench_infer_point(const paillier::KeyPair& keys, const BenchConfig& cfg, std::size_t n,
                                  std::size_t k) {
  if (cfg.reps == 0) throw ParameterError("need at least one repetition");
  BenchRow row;
  row.method = to_string(cfg.method);
  row.n = n;
  row.k = k;
  std::mt19937_64 gen(cfg.seed ^ (n * 1000003 + k * 1009));
  const auto u = detail::random_vec(gen, k, 1.0);
  soreg::Mat v(n);
  for (auto& x : v) x = detail::random_vec(gen, k, 1.0);
  std::vector<double> times;
  try {
    if (cfg.method == train::Method::Plain) {
      for (std::size_t rep = 0; rep < cfg.reps; ++rep) {
        const auto t0 = std::chrono::steady_clock::now();
        double sink = 0;
        for (const auto& row_v : v) sink += soreg::detail::dot(u, row_v);
        times.push_back(detail::seconds_since(t0));
        if (!std::isfinite(sink)) throw Error("non-finite prediction");
      }
      detail::finish(row, times, cfg.bandwidth_mbps);
      return row;
    }
    const auto layouts = train::layouts_for(cfg.method, keys.pub.key_bits, cfg.layout);
    for (std::size_t rep = 0; rep < cfg.reps; ++rep) {
      auto s = detail::make_session(keys, layouts, cfg.seed + rep, cfg.threads);
      const auto t0 = std::chrono::steady_clock::now();
      soreg::secure_infer(*s, u, v, cfg.reveal, layouts.item);
      times.push_back(detail::seconds_since(t0));
      const auto meters = s->channel().meters();
      if (rep == 0) {
        row.meters = meters;
        row.legs = legs_of(s->channel().transcript());
      } else if (meters.total().bytes != row.meters.total().bytes) {
        throw Error("byte count changed between repetitions");
      }
    }
    detail::finish(row, times, cfg.bandwidth_mbps);
  } catch (const CannotPack& e) {
    detail::flag(row, e, cfg.bandwidth_mbps.size());
  } catch (const OverflowError& e) {
    detail::flag(row, e, cfg.bandwidth_mbps.size());
  } catch (const ProtocolError& e) {
    detail::flag(row, e, cfg.bandwidth_mbps.size());
  }
  return row;
}

inline std::string bandwidth_label(double mbps) {
  std::ostringstream os;
  os << mbps;
  std::string s = os.str();
  std::replace(s.begin(), s.end(), '.', 'p');
  return "est_" + s + "mbps_s";
}

inline void write_csv_header(std::ostream& out, const std::vector<double>& bandwidth_mbps) {
  out << "method,n,k,m,pure_time_s,bytes";
  for (double b : bandwidth_mbps) out << ',' << bandwidth_label(b);
  out << ",status\n";
}

inline void write_csv_row(std::ostream& out, const BenchRow& row) {
  out << row.method << ',' << row.n << ',' << row.k << ',' << row.m << ',';
  const bool ok = row.status == "ok";
  if (ok) {
    out << std::setprecision(6) << row.pure_time_s << ',' << row.bytes;
  } else {
    out << ',';
  }
  for (double e : row.est_s) {
    out << ',';
    if (ok) out << e;
  }
  out << ',' << row.status << '\n';
}

// Rows in grid order n, then k, then m; infeasible points are kept and flagged.
inline std::vector<BenchRow> bench_train(const paillier::KeyPair& keys, const BenchConfig& cfg,
                                         const std::function<void(const BenchRow&)>& on_row = {}) {
  std::vector<BenchRow> rows;
  for (auto n : cfg.items) {
    for (auto k : cfg.dims) {
      for (auto m : cfg.friends) {
        rows.push_back(bench_train_point(keys, cfg, n, k, m));
        if (on_row) on_row(rows.back());
      }
    }
  }
  return rows;
}

inline std::vector<BenchRow> bench_infer(const paillier::KeyPair& keys, const BenchConfig& cfg,
                                         const std::function<void(const BenchRow&)>& on_row = {}) {
  std::vector<BenchRow> rows;
  for (auto n : cfg.items) {
    for (auto k : cfg.dims) {
      rows.push_back(bench_infer_point(keys, cfg, n, k));
      if (on_row) on_row(rows.back());
    }
  }
  return rows;
}

}  // namespace pader::bench
