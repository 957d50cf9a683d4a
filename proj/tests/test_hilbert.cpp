#include <gtest/gtest.h>

#include <sstream>

#include "support/oracles.hpp"

using namespace hilp;

TEST(Expectile, MirrorIdentity) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> x(-5.0, 5.0);
  std::uniform_int_distribution<int> k(1, 63);
  for (int i = 0; i < 10000; ++i) {
    // Dyadic tau keeps 1 - tau exact.
    const double v = x(rng), t = k(rng) / 64.0;
    EXPECT_EQ(expectile_loss(v, t), expectile_loss(-v, 1.0 - t));
  }
}

TEST(Expectile, HalfIsHalfSquare) {
  for (double v : {-3.0, -0.25, 0.0, 1e-9, 2.5, 7.0}) EXPECT_DOUBLE_EQ(expectile_loss(v, 0.5), 0.5 * v * v);
}

TEST(Expectile, AsymmetricWeights) {
  EXPECT_DOUBLE_EQ(expectile_loss(2.0, 0.9), 0.9 * 4.0);
  EXPECT_DOUBLE_EQ(expectile_loss(-2.0, 0.9), 0.1 * 4.0);
}

TEST(Distance, SmoothedAndExact) {
  const auto e = Embedding::from_rows({{0.0, 0.0}, {3.0, 4.0}});
  EXPECT_DOUBLE_EQ(exact_latent_distance(e, 0, 1), 5.0);
  EXPECT_NEAR(latent_distance(e, 0, 1), 5.0, 1e-12);
  EXPECT_DOUBLE_EQ(latent_distance(e, 0, 0), e.norm_epsilon());
}

namespace {

std::vector<RelabeledTuple> random_batch(std::mt19937_64& rng, std::size_t n_states, std::size_t size) {
  std::uniform_int_distribution<State> any(0, n_states - 1);
  std::vector<RelabeledTuple> batch(size);
  for (auto& b : batch) {
    b.s = any(rng);
    b.next = any(rng);
    b.goal = any(rng);
  }
  batch[0].next = batch[0].goal;  // exercise the cut bootstrap
  batch[1].goal = batch[1].s;
  return batch;
}

}  // namespace

TEST(TdStep, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 7, dim = 1 + trial % 4;
    auto emb = hilp::testing::random_embedding(rng, n, dim, 2.0);
    // Target table distinct from phi.
    auto other = hilp::testing::random_embedding(rng, n, dim, 2.0);
    for (State s = 0; s < n; ++s)
      for (std::size_t k = 0; k < dim; ++k) emb.target(s)[k] = other.phi(s)[k];
    const auto batch = random_batch(rng, n, 32);
    ReprConfig cfg;
    cfg.dim = dim;
    cfg.gamma = trial % 2 ? 0.99 : 1.0;
    cfg.expectile = 0.9;
    const auto grad = batch_td_gradient(emb, batch, cfg);
    std::vector<double> fd(grad.size());
    const double h = 1e-6;
    for (State s = 0; s < n; ++s)
      for (std::size_t k = 0; k < dim; ++k) {
        const double keep = emb.phi(s)[k];
        emb.phi(s)[k] = keep + h;
        const double up = batch_td_loss(emb, batch, cfg);
        emb.phi(s)[k] = keep - h;
        const double down = batch_td_loss(emb, batch, cfg);
        emb.phi(s)[k] = keep;
        fd[s * dim + k] = (up - down) / (2.0 * h);
      }
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
      diff += (grad[i] - fd[i]) * (grad[i] - fd[i]);
      scale += grad[i] * grad[i];
      EXPECT_LE(std::abs(grad[i] - fd[i]), 1e-5 * std::max(1.0, std::abs(grad[i])));
    }
    EXPECT_LE(std::sqrt(diff), 1e-5 * std::sqrt(scale)) << "trial " << trial;
  }
}

TEST(TdStep, DescendsAndUpdatesTarget) {
  std::mt19937_64 rng(5);
  auto emb = hilp::testing::random_embedding(rng, 6, 2, 1.0);
  const auto batch = random_batch(rng, 6, 64);
  ReprConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.target_rate = 0.5;
  const auto before_phi = emb.phi_table();
  const auto before_target = emb.target_table();
  const double loss0 = td_step(emb, batch, cfg);
  // Target is the Polyak average of the old target and the new phi.
  for (std::size_t i = 0; i < before_target.size(); ++i)
    EXPECT_NEAR(emb.target_table()[i], 0.5 * before_target[i] + 0.5 * emb.phi_table()[i], 1e-15);
  Embedding probe = emb;
  for (std::size_t s = 0; s < 6; ++s)
    for (std::size_t k = 0; k < 2; ++k) probe.target(s)[k] = before_target[s * 2 + k];
  EXPECT_LT(batch_td_loss(probe, batch, cfg), loss0);
  EXPECT_NE(before_phi, emb.phi_table());
}

TEST(TdStep, RejectsEmptyBatch) {
  Embedding e(3, 2);
  ReprConfig cfg;
  EXPECT_THROW(td_step(e, std::vector<RelabeledTuple>{}, cfg), InvalidArgument);
}

TEST(Relabel, GoalsDifferFromStartAndTransitionsAreObserved) {
  const auto m = build_gridworld(open_grid_map(5, 5));
  const auto data = hilp::testing::uniform_dataset(m, 10, 40, 3);
  const auto observed = observed_transitions(data);
  RelabelSampler sampler(data);
  ReprConfig cfg;
  cfg.gamma = 0.99;
  std::mt19937_64 rng(9);
  std::size_t future = 0;
  for (int i = 0; i < 5000; ++i) {
    const auto t = sampler.sample(cfg, rng);
    EXPECT_NE(t.goal, t.s);
    const bool seen = std::any_of(observed.begin(), observed.end(),
                                  [&](const Transition& o) { return o.s == t.s && o.next == t.next; });
    EXPECT_TRUE(seen);
    future += t.future_branch;
  }
  // Rejections only remove goal = s draws, so the future share stays near 0.625.
  EXPECT_NEAR(static_cast<double>(future) / 5000.0, 0.625, 0.05);
}

TEST(Relabel, FutureGoalsLieAheadOnMonotoneTrajectory) {
  Dataset data;
  Trajectory t;
  for (State s = 0; s < 20; ++s) t.states.push_back(s);
  t.actions.assign(19, chain_action::kRight);
  data.trajectories.push_back(t);
  RelabelSampler sampler(data);
  ReprConfig cfg;
  cfg.future_goal_prob = 1.0;
  cfg.geometric_p = 0.2;
  std::mt19937_64 rng(2);
  for (int i = 0; i < 2000; ++i) {
    const auto r = sampler.sample(cfg, rng);
    EXPECT_EQ(r.next, r.s + 1);
    EXPECT_GT(r.goal, r.s);
    EXPECT_TRUE(r.future_branch);
  }
}

TEST(ReprConfig, ValidationNamesTheField) {
  auto expect_field = [](ReprConfig c, const std::string& field) {
    try {
      c.validate();
      ADD_FAILURE() << "no error for " << field;
    } catch (const ValidationError& e) {
      EXPECT_EQ(e.field(), field);
    }
  };
  ReprConfig base;
  base.geometric_p = 0.3;
  EXPECT_NO_THROW(base.validate());
  ReprConfig c = base;
  c.expectile = 0.5;
  expect_field(c, "expectile");
  c = base;
  c.dim = 0;
  expect_field(c, "dim");
  c = base;
  c.gamma = 1.5;
  expect_field(c, "gamma");
  c = base;
  c.geometric_p = 0.0;  // gamma = 1 needs an explicit p
  expect_field(c, "geometric_p");
  c = base;
  c.batch_size = 0;
  expect_field(c, "batch_size");
}

TEST(TrainRepr, DeterministicAndReducesEmbeddingError) {
  const auto m = build_chain(6);
  const auto data = hilp::testing::uniform_dataset(m, 20, 100, 1);
  ReprConfig cfg;
  cfg.dim = 1;
  cfg.geometric_p = 0.3;
  cfg.steps = 20000;
  cfg.batch_size = 64;
  cfg.seed = 4;
  const auto [a, log_a] = train_repr(data, m, cfg);
  const auto [b, log_b] = train_repr(data, m, cfg);
  EXPECT_EQ(a.phi_table(), b.phi_table());
  EXPECT_EQ(log_a.checkpoints.size(), 20u);
  EXPECT_TRUE(a.all_finite());
  const auto dist = temporal_distances(m);
  const double before = embedding_error(initial_embedding(6, cfg), dist).mean_error;
  const double after = embedding_error(a, dist).mean_error;
  EXPECT_LT(after, 0.5 * before);
}

TEST(EmbeddingError, ZeroForExactChainEmbedding) {
  const auto m = build_chain(9);
  const auto emb = exact_chain_embedding(9, 3);
  const auto err = embedding_error(emb, temporal_distances(m));
  EXPECT_DOUBLE_EQ(err.eps_e, 0.0);
  EXPECT_EQ(err.included, 81u);
  const auto disc = embedding_error(emb, temporal_distances(m), 0.9);
  EXPECT_NEAR(disc.eps_e, 8.0 - discounted_distance(8, 0.9), 1e-12);
}

TEST(Embedding, RoundTripIsExact) {
  std::mt19937_64 rng(8);
  const auto emb = hilp::testing::random_embedding(rng, 11, 3, 10.0);
  std::stringstream buf;
  write_embedding(emb, buf);
  const auto back = read_embedding(buf);
  EXPECT_EQ(back.phi_table(), emb.phi_table());
  EXPECT_EQ(back.dim(), 3u);
  std::istringstream bad("#hilp-embedding v1 states=2 D=2\n0:1,2\n");
  EXPECT_THROW(read_embedding(bad), Error);
}

TEST(Embedding, MeanOverOccurrences) {
  const auto emb = Embedding::from_rows({{0.0}, {2.0}, {10.0}});
  Dataset d;
  d.trajectories.push_back({{0, 1, 1}, {1, 2}});
  EXPECT_NEAR(mean_embedding(emb, d).mean[0], 4.0 / 3.0, 1e-15);
}
