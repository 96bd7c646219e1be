#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>

#include "pader/pader.hpp"

using namespace pader;

namespace {

struct Common {
  std::string method = "pader-packed";
  std::size_t key_bits = 2048;
  std::optional<unsigned> scale_bits, slot_mod_bits;
  std::optional<std::size_t> slot_bits;
  std::uint64_t seed = 1;
  unsigned threads = paillier::kDefaultThreads;
  std::string key_prefix;
  std::string out;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--method", c.method, "plain, bipartite, bipartite-packed, pader or pader-packed")
      ->capture_default_str();
  app->add_option("--key-bits", c.key_bits, "Paillier modulus size")->capture_default_str();
  app->add_option("--scale-bits", c.scale_bits, "fixed-point scale S = 2^bits");
  app->add_option("--slot-mod-bits", c.slot_mod_bits, "slot modulus Q = 2^bits");
  app->add_option("--slot-bits", c.slot_bits, "slot size P = 2^bits");
  app->add_option("--seed", c.seed)->capture_default_str();
  app->add_option("--threads", c.threads, "threads for batch crypto")->capture_default_str();
  app->add_option("--key", c.key_prefix, "load PREFIX.pub and PREFIX.sec instead of generating keys");
}

train::LayoutOverrides overrides(const Common& c) { return {c.scale_bits, c.slot_mod_bits, c.slot_bits}; }

paillier::KeyPair obtain_keys(const Common& c) {
  if (!c.key_prefix.empty()) {
    paillier::KeyPair kp;
    kp.sec = paillier::load_secret_key(c.key_prefix + ".sec");
    kp.pub = paillier::load_public_key(c.key_prefix + ".pub");
    if (kp.pub.n != kp.sec.pub.n) throw Error("public and secret key files do not match");
    return kp;
  }
  Rng rng = Rng(c.seed).fork("bench-key");
  return paillier::keygen(c.key_bits, rng);
}

class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty() && path != "-") {
      file_.open(path);
      if (!file_) throw Error("cannot open " + path);
    }
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

int run_keygen(const Common& c) {
  if (c.out.empty()) throw ParameterError("keygen needs --out PREFIX");
  Rng rng = c.seed ? Rng(c.seed).fork("keygen") : Rng::from_entropy();
  const auto kp = paillier::keygen(c.key_bits, rng);
  paillier::save_key_files(kp, c.out);
  std::cerr << "wrote " << c.out << ".pub and " << c.out << ".sec (" << c.key_bits << " bits)\n";
  return 0;
}

struct TrainArgs {
  std::string ratings, edges, checkpoint;
  bool synthetic = false;
  std::size_t synth_users = 200, synth_items = 500;
  double train_frac = 0.8;
  std::uint64_t split_seed = 3;
  std::size_t sellers = 1;
  std::size_t dim = 8, epochs = 5, items = 8, friends = 10, threshold = 2;
  double lr = 0.003, lambda_u = 0, lambda_v = 0, lambda_s = 0.5, init_sd = 0.1;
  std::optional<double> rating_min, rating_max;
};

data::RatingDataset training_data(const TrainArgs& t, std::uint64_t seed) {
  if (t.synthetic) {
    data::SynthConfig cfg;
    cfg.n_users = t.synth_users;
    cfg.n_items = t.synth_items;
    cfg.noise_sd = 0.3;
    cfg.social_density = 1.0;
    cfg.communities = std::max<std::size_t>(1, t.synth_users / 20);
    cfg.density = 0.1;
    cfg.user_bias_sd = 1.0;
    cfg.seed = seed;
    return data::synth_lowrank(cfg).data;
  }
  if (t.ratings.empty()) throw ParameterError("train needs --ratings or --synthetic");
  data::RatingRange range;
  if (t.rating_min) range.lo = *t.rating_min;
  if (t.rating_max) range.hi = *t.rating_max;
  return data::load_dataset(t.ratings, t.edges, range);
}

int run_train(const Common& c, const TrainArgs& t) {
  auto ds = training_data(t, c.seed);
  data::assign_sellers(ds, t.sellers);
  const auto sp = data::split(ds, t.train_frac, t.split_seed);
  train::TrainConfig cfg;
  cfg.method = train::parse_method(c.method);
  cfg.k = t.dim;
  cfg.hyper = {t.lambda_u, t.lambda_v, t.lambda_s, t.lr};
  cfg.epochs = t.epochs;
  cfg.max_items = t.items;
  cfg.max_friends = t.friends;
  cfg.key_bits = c.key_bits;
  cfg.threshold = t.threshold;
  cfg.init_sd = t.init_sd;
  cfg.seed = c.seed;
  cfg.threads = c.threads;
  cfg.layout = overrides(c);
  std::cerr << ds.n_users() << " users, " << ds.n_items() << " items, " << ds.ratings.size() << " ratings, "
            << ds.edges.size() << " edges; " << sp.train.size() << " train / " << sp.test.size() << " validation\n";
  train::Trainer trainer(ds, sp, cfg);
  Output out(c.out);
  auto& os = out.stream();
  os << "method,epoch,train_rmse,val_rmse,steps,bytes,seconds\n" << std::setprecision(10);
  const auto init = trainer.evaluate();
  os << c.method << ",0," << init.train_rmse << ',' << init.val_rmse << ",0,0,0\n";
  trainer.train([&](const train::EpochStats& st) {
    os << c.method << ',' << st.epoch << ',' << st.train_rmse << ',' << st.val_rmse << ',' << st.steps << ','
       << st.bytes << ',' << st.seconds << '\n'
       << std::flush;
  });
  if (!t.checkpoint.empty()) {
    std::ofstream ck(t.checkpoint);
    if (!ck) throw Error("cannot open " + t.checkpoint);
    trainer.model().save(ck);
  }
  return 0;
}

struct BenchArgs {
  std::vector<std::size_t> items{1, 2, 4, 8, 16, 32};
  std::vector<std::size_t> dims{8};
  std::vector<std::size_t> friends{10};
  std::vector<double> bandwidth{10, 100};
  std::size_t reps = 5;
  std::string reveal = "b";
};

bench::BenchConfig bench_config(const Common& c, const BenchArgs& b) {
  bench::BenchConfig cfg;
  cfg.method = train::parse_method(c.method);
  cfg.items = b.items;
  cfg.dims = b.dims;
  cfg.friends = b.friends;
  cfg.key_bits = c.key_bits;
  cfg.layout = overrides(c);
  cfg.bandwidth_mbps = b.bandwidth;
  cfg.seed = c.seed;
  cfg.reps = b.reps;
  cfg.threads = c.threads;
  if (b.reveal == "a") cfg.reveal = RevealMode::ToA;
  else if (b.reveal == "b") cfg.reveal = RevealMode::ToB;
  else if (b.reveal == "both") cfg.reveal = RevealMode::ToBoth;
  else throw ParameterError("--reveal must be a, b or both");
  return cfg;
}

int run_bench(const Common& c, const BenchArgs& b, bool infer) {
  const auto cfg = bench_config(c, b);
  const auto keys = obtain_keys(c);
  Output out(c.out);
  bench::write_csv_header(out.stream(), cfg.bandwidth_mbps);
  auto emit = [&](const bench::BenchRow& row) {
    bench::write_csv_row(out.stream(), row);
    out.stream() << std::flush;
    if (row.status != "ok") std::cerr << "n=" << row.n << " k=" << row.k << " m=" << row.m << ": " << row.detail << '\n';
  };
  if (infer) {
    bench::bench_infer(keys, cfg, emit);
  } else {
    bench::bench_train(keys, cfg, emit);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-party secure social recommendation: keys, training and benchmarks"};
  app.set_config("--config", "", "key=value file mirroring the flags; subcommand keys go under [keygen], [train], ...");
  app.require_subcommand(1);
  Common c;

  auto* keygen = app.add_subcommand("keygen", "generate a Paillier key pair");
  keygen->add_option("--key-bits", c.key_bits)->capture_default_str();
  keygen->add_option("--seed", c.seed, "0 draws from system entropy")->capture_default_str();
  keygen->add_option("--out", c.out, "write PREFIX.pub and PREFIX.sec")->required();

  TrainArgs t;
  auto* tr = app.add_subcommand("train", "train SoReg and log per-epoch RMSE as CSV");
  add_common(tr, c);
  tr->add_option("--out", c.out, "CSV path, '-' for stdout")->capture_default_str();
  tr->add_option("--ratings", t.ratings, "user<TAB>item<TAB>rating file");
  tr->add_option("--edges", t.edges, "user<TAB>user social edges");
  tr->add_flag("--synthetic", t.synthetic, "use a generated social low-rank dataset");
  tr->add_option("--synth-users", t.synth_users)->capture_default_str();
  tr->add_option("--synth-items", t.synth_items)->capture_default_str();
  tr->add_option("--train-frac", t.train_frac, "fraction of ratings used for training")->capture_default_str();
  tr->add_option("--split-seed", t.split_seed)->capture_default_str();
  tr->add_option("--sellers", t.sellers, "items are split into this many seller blocks")->capture_default_str();
  tr->add_option("--dim", t.dim, "latent dimension")->capture_default_str();
  tr->add_option("--epochs", t.epochs)->capture_default_str();
  tr->add_option("--items", t.items, "items per step")->capture_default_str();
  tr->add_option("--friends", t.friends, "friends sampled per step")->capture_default_str();
  tr->add_option("--threshold", t.threshold, "contributions per item before an update")->capture_default_str();
  tr->add_option("--lr", t.lr)->capture_default_str();
  tr->add_option("--lambda-u", t.lambda_u)->capture_default_str();
  tr->add_option("--lambda-v", t.lambda_v)->capture_default_str();
  tr->add_option("--lambda-s", t.lambda_s)->capture_default_str();
  tr->add_option("--init-sd", t.init_sd)->capture_default_str();
  tr->add_option("--rating-min", t.rating_min);
  tr->add_option("--rating-max", t.rating_max);
  tr->add_option("--checkpoint", t.checkpoint, "write the trained model here");

  BenchArgs b;
  auto add_bench = [&](CLI::App* sub, bool with_friends) {
    add_common(sub, c);
    sub->add_option("--out", c.out, "CSV path, '-' for stdout")->capture_default_str();
    sub->add_option("--items", b.items, "item counts n")->delimiter(',')->capture_default_str();
    sub->add_option("--dim", b.dims, "embedding dimensions k")->delimiter(',')->capture_default_str();
    if (with_friends) sub->add_option("--friends", b.friends, "friend counts m")->delimiter(',')->capture_default_str();
    sub->add_option("--bandwidth", b.bandwidth, "bandwidths in Mbit/s for the estimate columns")
        ->delimiter(',')
        ->capture_default_str();
    sub->add_option("--reps", b.reps, "repetitions per point; time is the median")->capture_default_str();
  };
  auto* bt = app.add_subcommand("bench-train", "per-step cost of one secure SGD step over an (n, k, m) grid");
  add_bench(bt, true);
  auto* bi = app.add_subcommand("bench-infer", "cost of secure dot-product inference over an (n, k) grid");
  add_bench(bi, false);
  bi->add_option("--reveal", b.reveal, "who learns the scores: a, b or both")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*keygen) return run_keygen(c);
    if (*tr) return run_train(c, t);
    if (*bt) return run_bench(c, b, false);
    if (*bi) return run_bench(c, b, true);
  } catch (const TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
