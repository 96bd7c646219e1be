#include <iomanip>
#include <iostream>

#include "pader/pader.hpp"

using namespace pader;

// Trains one epoch in plaintext and with the packed secure protocol on a small
// synthetic social dataset, then scores a few items for one user securely.
int main() {
  data::SynthConfig sc;
  sc.n_users = 24;
  sc.n_items = 40;
  sc.k_true = 2;
  sc.noise_sd = 0.3;
  sc.social_density = 0.8;
  sc.communities = 4;
  sc.density = 0.25;
  auto syn = data::synth_lowrank(sc);
  data::assign_sellers(syn.data, 2);
  const auto sp = data::split(syn.data, 0.8, 1);
  std::cout << syn.data.n_users() << " users, " << syn.data.n_items() << " items, " << syn.data.ratings.size()
            << " ratings, " << syn.data.edges.size() << " friendships\n";

  train::TrainConfig cfg;
  cfg.k = 4;
  cfg.epochs = 1;
  cfg.key_bits = 512;
  cfg.hyper.lambda_s = 0.5;
  cfg.hyper.lr = 0.01;
  std::cout << std::setprecision(9);
  for (auto m : {train::Method::Plain, train::Method::PaderPacked}) {
    cfg.method = m;
    train::Trainer t(syn.data, sp, cfg);
    const auto st = t.train().back();
    std::cout << std::left << std::setw(14) << train::to_string(m) << " val RMSE " << st.val_rmse << "  steps "
              << st.steps << "  bytes " << st.bytes << "  " << std::setprecision(3) << st.seconds << " s\n"
              << std::setprecision(9);
  }

  Rng rng(7);
  const auto keys = paillier::keygen(512, rng);
  const auto layouts = train::layouts_for(train::Method::PaderPacked, 512);
  Session s(keys, std::make_unique<LoopbackChannel>());
  const soreg::Vec u{0.5, -0.25, 1.0, 0.125};
  const soreg::Mat v{{1, 0, 0, 0}, {0.5, 0.5, 0.5, 0.5}, {-1, 2, 0.25, 0}};
  const auto pred = soreg::secure_infer(s, u, v, RevealMode::ToB, layouts.item);
  std::cout << "secure scores at B:";
  for (double x : *pred.at_b) std::cout << ' ' << x;
  std::cout << "\nplain scores:      ";
  for (const auto& row : v) std::cout << ' ' << soreg::detail::dot(u, row);
  std::cout << "\ninference traffic: " << s.channel().meters().total().bytes << " bytes\n";
}
