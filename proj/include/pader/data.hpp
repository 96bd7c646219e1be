#pragma once

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pader/soreg.hpp"

namespace pader::data {

struct Rating {
  std::size_t user = 0;
  std::size_t item = 0;
  double value = 0;

  bool operator==(const Rating&) const = default;
};

// Dense ids after remapping; the original ids are kept in first-seen order.
struct RatingDataset {
  std::vector<std::string> user_names;
  std::vector<std::string> item_names;
  std::vector<Rating> ratings;
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // undirected, smaller id first
  std::vector<std::size_t> item_seller;

  std::size_t n_users() const { return user_names.size(); }
  std::size_t n_items() const { return item_names.size(); }

  bool operator==(const RatingDataset&) const = default;
};

enum class DataFormat { RatingsTsv, EdgesTsv };

inline DataFormat parse_format(const std::string& s) {
  if (s == "ratings-tsv") return DataFormat::RatingsTsv;
  if (s == "edges-tsv") return DataFormat::EdgesTsv;
  throw ParameterError("unknown data format '" + s + "'");
}

struct RatingRange {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
};

namespace detail {

inline std::size_t intern(std::map<std::string, std::size_t>& ids, std::vector<std::string>& names,
                          const std::string& key) {
  auto [it, fresh] = ids.try_emplace(key, names.size());
  if (fresh) names.push_back(key);
  return it->second;
}

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) return out;
    start = tab + 1;
  }
}

template <typename Fn>
void for_each_record(std::istream& in, const std::string& where, std::size_t fields, Fn&& fn) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') throw ParseError(where, lineno, "CRLF line ending");
    if (line.empty() || line[0] == '#') continue;
    auto f = split_tabs(line);
    if (f.size() != fields) {
      throw ParseError(where, lineno, "expected " + std::to_string(fields) + " tab-separated fields, got " +
                                          std::to_string(f.size()));
    }
    for (const auto& x : f) {
      if (x.empty()) throw ParseError(where, lineno, "empty field");
    }
    fn(f, lineno);
  }
}

struct Index {
  std::map<std::string, std::size_t> users;
  std::map<std::string, std::size_t> items;

  explicit Index(const RatingDataset& ds) {
    for (std::size_t i = 0; i < ds.user_names.size(); ++i) users.emplace(ds.user_names[i], i);
    for (std::size_t i = 0; i < ds.item_names.size(); ++i) items.emplace(ds.item_names[i], i);
  }
};

}  // namespace detail

// `user<TAB>item<TAB>rating` per line; '#' lines and blank lines skipped.
inline void read_ratings(std::istream& in, RatingDataset& ds, const std::string& where = "ratings",
                         RatingRange range = {}) {
  detail::Index idx(ds);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& r : ds.ratings) seen.emplace(r.user, r.item);
  detail::for_each_record(in, where, 3, [&](const std::vector<std::string>& f, std::size_t lineno) {
    double value = 0;
    std::size_t used = 0;
    try {
      value = std::stod(f[2], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != f[2].size() || !std::isfinite(value)) throw ParseError(where, lineno, "bad rating '" + f[2] + "'");
    if (value < range.lo || value > range.hi) throw ParseError(where, lineno, "rating outside the declared range");
    const std::size_t u = detail::intern(idx.users, ds.user_names, f[0]);
    const std::size_t i = detail::intern(idx.items, ds.item_names, f[1]);
    if (!seen.emplace(u, i).second) {
      throw ParseError(where, lineno, "duplicate rating for user '" + f[0] + "' and item '" + f[1] + "'");
    }
    ds.ratings.push_back({u, i, value});
  });
  ds.item_seller.resize(ds.n_items(), 0);
}

// `user<TAB>user` per line; repeated edges are merged, self-loops rejected.
inline void read_edges(std::istream& in, RatingDataset& ds, const std::string& where = "edges") {
  detail::Index idx(ds);
  std::set<std::pair<std::size_t, std::size_t>> seen(ds.edges.begin(), ds.edges.end());
  detail::for_each_record(in, where, 2, [&](const std::vector<std::string>& f, std::size_t lineno) {
    if (f[0] == f[1]) throw ParseError(where, lineno, "self-loop on user '" + f[0] + "'");
    std::size_t a = detail::intern(idx.users, ds.user_names, f[0]);
    std::size_t b = detail::intern(idx.users, ds.user_names, f[1]);
    if (a > b) std::swap(a, b);
    if (seen.emplace(a, b).second) ds.edges.emplace_back(a, b);
  });
}

inline void load_dataset(const std::string& path, DataFormat format, RatingDataset& ds, RatingRange range = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  if (format == DataFormat::RatingsTsv) {
    read_ratings(in, ds, path, range);
  } else {
    read_edges(in, ds, path);
  }
}

inline RatingDataset load_dataset(const std::string& ratings_path, const std::string& edges_path = "",
                                  RatingRange range = {}) {
  RatingDataset ds;
  load_dataset(ratings_path, DataFormat::RatingsTsv, ds, range);
  if (!edges_path.empty()) load_dataset(edges_path, DataFormat::EdgesTsv, ds);
  ds.item_seller.resize(ds.n_items(), 0);
  return ds;
}

inline void write_ratings(std::ostream& out, const RatingDataset& ds) {
  out << std::setprecision(17);
  for (const auto& r : ds.ratings) {
    out << ds.user_names[r.user] << '\t' << ds.item_names[r.item] << '\t' << r.value << '\n';
  }
}

inline void write_edges(std::ostream& out, const RatingDataset& ds) {
  for (const auto& [a, b] : ds.edges) out << ds.user_names[a] << '\t' << ds.user_names[b] << '\n';
}

// Items go to sellers in contiguous id blocks of near-equal size.
inline void assign_sellers(RatingDataset& ds, std::size_t sellers) {
  if (sellers == 0) throw ParameterError("need at least one seller");
  ds.item_seller.resize(ds.n_items());
  for (std::size_t i = 0; i < ds.n_items(); ++i) ds.item_seller[i] = i * sellers / ds.n_items();
}

inline std::vector<std::vector<std::size_t>> friends_of(const RatingDataset& ds) {
  std::vector<std::vector<std::size_t>> out(ds.n_users());
  for (const auto& [a, b] : ds.edges) {
    out[a].push_back(b);
    out[b].push_back(a);
  }
  return out;
}

struct Split {
  std::vector<Rating> train;
  std::vector<Rating> test;
};

// round(train_fraction * N) ratings go to train, chosen by a seeded shuffle.
inline Split split(const RatingDataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0 && train_fraction < 1)) throw ParameterError("train fraction must lie in (0, 1)");
  std::vector<std::size_t> order(ds.ratings.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 gen(seed);
  std::shuffle(order.begin(), order.end(), gen);
  const auto cut = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(order.size())));
  Split s;
  for (std::size_t x = 0; x < order.size(); ++x) (x < cut ? s.train : s.test).push_back(ds.ratings[order[x]]);
  return s;
}

struct SynthConfig {
  std::size_t n_users = 200;
  std::size_t n_items = 500;
  std::size_t k_true = 4;
  double noise_sd = 0.5;
  double social_density = 0.2;  // edge probability between users of one community
  std::uint64_t seed = 1;
  std::size_t communities = 20;
  double user_spread = 0.0;   // sd of a user around its community centroid
  double density = 0.05;      // fraction of (user, item) pairs rated
  double offset = 3.0;
  double user_bias_sd = 0.0;  // per-community user bias
  bool clip = true;
  double lo = 1.0;
  double hi = 5.0;
};

struct Synthetic {
  RatingDataset data;
  soreg::Mat user_factors;
  soreg::Mat item_factors;
  std::vector<std::size_t> community;
};

// Ratings offset + bias + u.v + noise from rank-k_true factors; users share
// their community's factors up to `user_spread`, and social edges only join
// users of the same community.
inline Synthetic synth_lowrank(const SynthConfig& cfg) {
  if (cfg.n_users == 0 || cfg.n_items == 0 || cfg.k_true == 0 || cfg.communities == 0) {
    throw ParameterError("synthetic sizes must be positive");
  }
  if (!(cfg.density > 0 && cfg.density <= 1) || cfg.social_density < 0 || cfg.social_density > 1) {
    throw ParameterError("densities must lie in [0, 1]");
  }
  std::mt19937_64 gen(cfg.seed);
  const double sd = std::pow(static_cast<double>(cfg.k_true), -0.25);
  std::normal_distribution<double> factor(0.0, sd), noise(0.0, 1.0), unit(0.0, 1.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  Synthetic out;
  soreg::Mat centroids(cfg.communities, soreg::Vec(cfg.k_true));
  std::vector<double> bias(cfg.communities);
  for (std::size_t c = 0; c < cfg.communities; ++c) {
    for (auto& x : centroids[c]) x = factor(gen);
    bias[c] = cfg.user_bias_sd * unit(gen);
  }
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    const std::size_t c = u % cfg.communities;
    out.community.push_back(c);
    soreg::Vec f = centroids[c];
    for (auto& x : f) x += cfg.user_spread * unit(gen);
    out.user_factors.push_back(f);
    out.data.user_names.push_back(std::to_string(u));
  }
  for (std::size_t i = 0; i < cfg.n_items; ++i) {
    soreg::Vec f(cfg.k_true);
    for (auto& x : f) x = factor(gen);
    out.item_factors.push_back(f);
    out.data.item_names.push_back(std::to_string(i));
  }
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    for (std::size_t i = 0; i < cfg.n_items; ++i) {
      if (coin(gen) >= cfg.density) continue;
      double r = cfg.offset + bias[out.community[u]] + soreg::detail::dot(out.user_factors[u], out.item_factors[i]) +
                 cfg.noise_sd * noise(gen);
      if (cfg.clip) r = std::clamp(r, cfg.lo, cfg.hi);
      out.data.ratings.push_back({u, i, r});
    }
  }
  for (std::size_t a = 0; a < cfg.n_users; ++a) {
    for (std::size_t b = a + 1; b < cfg.n_users; ++b) {
      if (out.community[a] == out.community[b] && coin(gen) < cfg.social_density) out.data.edges.emplace_back(a, b);
    }
  }
  out.data.item_seller.assign(cfg.n_items, 0);
  return out;
}

inline RatingDataset synth_lowrank(std::size_t n_users, std::size_t n_items, std::size_t k_true, double noise_sd,
                                   double social_density, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.n_users = n_users;
  cfg.n_items = n_items;
  cfg.k_true = k_true;
  cfg.noise_sd = noise_sd;
  cfg.social_density = social_density;
  cfg.seed = seed;
  cfg.communities = std::max<std::size_t>(1, n_users / 10);
  return synth_lowrank(cfg).data;
}

inline double rmse(std::span<const double> predicted, std::span<const double> actual) {
  if (predicted.size() != actual.size()) throw ParameterError("prediction and target counts differ");
  if (predicted.empty()) throw ParameterError("RMSE of an empty set");
  double sum = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double d = predicted[i] - actual[i];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(predicted.size()));
}

inline double rmse(const soreg::SoRegModel& model, std::span<const Rating> test) {
  std::vector<double> p, a;
  p.reserve(test.size());
  a.reserve(test.size());
  for (const auto& r : test) {
    p.push_back(model.predict(r.user, r.item));
    a.push_back(r.value);
  }
  return rmse(p, a);
}

inline double mean_rating(std::span<const Rating> rs) {
  if (rs.empty()) throw ParameterError("mean of an empty rating set");
  double s = 0;
  for (const auto& r : rs) s += r.value;
  return s / static_cast<double>(rs.size());
}

}  // namespace pader::data
