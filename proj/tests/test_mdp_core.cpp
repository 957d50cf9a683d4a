#include <gtest/gtest.h>

#include <sstream>

#include "support/oracles.hpp"

using namespace hilp;
using hilp::testing::floyd_warshall;
using hilp::testing::kInf;

namespace {

void expect_bfs_matches_floyd_warshall(const Mdp& mdp) {
  const auto bfs = temporal_distances(mdp);
  const auto fw = floyd_warshall(mdp);
  const std::size_t n = mdp.n_states();
  for (State s = 0; s < n; ++s)
    for (State g = 0; g < n; ++g) {
      const auto want = fw[s * n + g];
      if (want >= kInf) {
        EXPECT_FALSE(bfs.reachable(s, g)) << mdp.name() << " " << s << "->" << g;
      } else {
        ASSERT_TRUE(bfs.reachable(s, g)) << mdp.name() << " " << s << "->" << g;
        EXPECT_EQ(bfs(s, g), want) << mdp.name() << " " << s << "->" << g;
      }
    }
}

}  // namespace

TEST(Chain, TransitionsAndClamping) {
  const auto m = build_chain(5);
  EXPECT_EQ(m.n_states(), 5u);
  EXPECT_EQ(m.n_actions(), 3u);
  EXPECT_EQ(m.step(0, chain_action::kLeft), 0u);
  EXPECT_EQ(m.step(4, chain_action::kRight), 4u);
  EXPECT_EQ(m.step(2, chain_action::kStay), 2u);
  EXPECT_EQ(m.step(2, chain_action::kRight), 3u);
}

TEST(Chain, DistancesAreIndexDifferences) {
  const auto m = build_chain(16);
  const auto d = temporal_distances(m);
  for (State s = 0; s < 16; ++s)
    for (State g = 0; g < 16; ++g) EXPECT_EQ(d(s, g), s > g ? s - g : g - s);
}

TEST(Grid, OpenGridDistancesAreManhattan) {
  const auto m = build_gridworld(open_grid_map(8, 8));
  ASSERT_EQ(m.n_states(), 64u);
  const auto d = temporal_distances(m);
  for (State s = 0; s < 64; ++s)
    for (State g = 0; g < 64; ++g) {
      const int dr = std::abs(m.cells[s].first - m.cells[g].first);
      const int dc = std::abs(m.cells[s].second - m.cells[g].second);
      EXPECT_EQ(d(s, g), dr + dc);
    }
}

TEST(Grid, FourRoomsOppositeCorners) {
  const auto m = build_gridworld(four_rooms_map(), "fourrooms");
  const auto d = temporal_distances(m);
  EXPECT_EQ(d(0, m.n_states() - 1), 28);
  EXPECT_EQ(d.unreachable_pairs(), 0u);
}

TEST(Grid, CorridorHas64CellsInOneLine) {
  const auto m = build_gridworld(corridor_map(12, 4), "corridor");
  ASSERT_EQ(m.n_states(), 64u);
  const auto d = temporal_distances(m);
  EXPECT_EQ(d(0, 63), 63);
  EXPECT_EQ(m.initial_support(), std::vector<State>{0});
}

TEST(Grid, RejectsBadMaps) {
  EXPECT_THROW(build_gridworld("..\n.\n"), InvalidMap);
  EXPECT_THROW(build_gridworld("##\n##\n"), InvalidMap);
  EXPECT_THROW(build_gridworld(".#.\n"), InvalidMap);
  EXPECT_THROW(build_gridworld(".x\n"), InvalidMap);
}

TEST(Oracle, BfsEqualsFloydWarshallOnFixedMdps) {
  expect_bfs_matches_floyd_warshall(build_chain(2));
  expect_bfs_matches_floyd_warshall(build_chain(16));
  expect_bfs_matches_floyd_warshall(build_gridworld(open_grid_map(8, 8)));
  expect_bfs_matches_floyd_warshall(build_gridworld(four_rooms_map()));
  expect_bfs_matches_floyd_warshall(build_gridworld(corridor_map(12, 4)));
  expect_bfs_matches_floyd_warshall(build_chain(6).with_absorbing(3));
}

TEST(Oracle, BfsEqualsFloydWarshallOnRandomMdps) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) expect_bfs_matches_floyd_warshall(hilp::testing::random_mdp(rng));
  for (int i = 0; i < 30; ++i) expect_bfs_matches_floyd_warshall(hilp::testing::random_grid(rng, 5, 6, 0.25));
}

TEST(Oracle, DistanceIsAQuasimetric) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = hilp::testing::random_mdp(rng);
    const auto d = temporal_distances(m);
    const std::size_t n = m.n_states();
    for (State a = 0; a < n; ++a) {
      EXPECT_EQ(d(a, a), 0);
      for (State b = 0; b < n; ++b)
        for (State c = 0; c < n; ++c)
          if (d.reachable(a, b) && d.reachable(b, c)) {
            ASSERT_TRUE(d.reachable(a, c));
            EXPECT_LE(d(a, c), d(a, b) + d(b, c));
          }
    }
  }
}

TEST(Oracle, OptimalGoalPolicyDecrementsDistance) {
  const auto m = build_gridworld(four_rooms_map());
  const auto d = temporal_distances(m);
  const State g = 37;
  const auto pol = optimal_goal_policy(m, d, g);
  for (State s = 0; s < m.n_states(); ++s) {
    if (s == g) continue;
    ASSERT_FALSE(pol.optimal[s].empty());
    for (Action a : pol.optimal[s]) EXPECT_EQ(d(m.step(s, a), g), d(s, g) - 1);
  }
}

TEST(Oracle, DiscountedDistance) {
  EXPECT_DOUBLE_EQ(discounted_distance(0, 0.9), 0.0);
  EXPECT_DOUBLE_EQ(discounted_distance(3, 1.0), 3.0);
  EXPECT_NEAR(discounted_distance(3, 0.5), 1.0 + 0.5 + 0.25, 1e-15);
}

TEST(Oracle, ValueIterationMatchesPolicyEnumeration) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = hilp::testing::random_mdp(rng, 4, 3);
    auto r = RewardFn::zero(m);
    for (State s = 0; s < m.n_states(); ++s)
      for (Action a = 0; a < m.n_actions(); ++a) r.set(s, a, m.step(s, a), u(rng));
    const auto q = value_iteration(m, r, 0.8);
    const auto brute = hilp::testing::brute_force_values(m, r, 0.8);
    for (State s = 0; s < m.n_states(); ++s) EXPECT_NEAR(q.value(s), brute[s], 1e-8);
  }
}

TEST(Oracle, GoalIndicatorReturnOnChain) {
  // Arrival reward at the right end of a 5-chain: first reward after 4 steps from 0.
  const auto m = build_chain(5);
  std::vector<double> ind(5, 0.0);
  ind[4] = 1.0;
  const auto r = RewardFn::from_arrival(m, ind);
  const auto q = value_iteration(m, r, 0.5);
  EXPECT_NEAR(optimal_return(m, r, q, 0, 5), 0.125 + 0.0625, 1e-12);
}

TEST(Mdp, AbsorbingCopy) {
  const auto m = build_chain(5).with_absorbing(2);
  for (Action a = 0; a < 3; ++a) EXPECT_EQ(m.step(2, a), 2u);
  EXPECT_EQ(m.step(1, chain_action::kRight), 2u);
  EXPECT_THROW(build_chain(5).with_absorbing(5), InvalidArgument);
}

TEST(Mdp, RewardFactories) {
  const auto m = build_chain(4);
  const auto st = RewardFn::from_state(m, {0, 1, 2, 3});
  const auto ar = RewardFn::from_arrival(m, {0, 1, 2, 3});
  EXPECT_EQ(st(1, chain_action::kRight, 2), 1.0);
  EXPECT_EQ(ar(1, chain_action::kRight, 2), 2.0);
  const auto ga = RewardFn::goal_arrival(m, 3);
  EXPECT_EQ(ga(2, chain_action::kRight, 3), 1.0);
  EXPECT_EQ(ga(3, chain_action::kStay, 3), 0.0);
}

TEST(Dataset, GenerationIsDeterministicAndConsistent) {
  const auto m = build_gridworld(four_rooms_map());
  const auto a = generate_dataset(m, Behavior::mixture(), 10, 30, 5);
  const auto b = generate_dataset(m, Behavior::mixture(), 10, 30, 5);
  const auto c = generate_dataset(m, Behavior::mixture(), 10, 30, 6);
  std::ostringstream sa, sb, sc;
  write_dataset(a, sa);
  write_dataset(b, sb);
  write_dataset(c, sc);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_NE(sa.str(), sc.str());
  for (const auto& t : a.trajectories) {
    EXPECT_EQ(t.length(), 30u);
    EXPECT_TRUE(consistent_with(t, m));
  }
  EXPECT_NO_THROW(validate_dataset(a, m));
}

TEST(Dataset, GreedyBehaviorReachesFixedGoal) {
  const auto m = build_chain(10);
  const auto data = generate_dataset(m, Behavior::epsilon_goal(0.0, 9), 3, 20, 1);
  for (const auto& t : data.trajectories) EXPECT_EQ(t.states.back(), 9u);
}

TEST(Dataset, UniformCoverageOnChain) {
  const auto m = build_chain(16);
  const auto data = hilp::testing::uniform_dataset(m, 50, 100, 0);
  const auto cov = dataset_coverage(data, m);
  EXPECT_DOUBLE_EQ(cov.fraction, 1.0);
}

TEST(Dataset, RoundTrip) {
  const auto m = build_gridworld(open_grid_map(4, 4));
  const auto data = generate_dataset(m, Behavior::epsilon_goal(0.3), 7, 12, 9);
  std::stringstream buf;
  write_dataset(data, buf);
  const auto back = read_dataset(buf);
  std::ostringstream again;
  write_dataset(back, again);
  EXPECT_EQ(buf.str(), again.str());
  ASSERT_EQ(back.trajectories.size(), data.trajectories.size());
  for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
    EXPECT_EQ(back.trajectories[i].states, data.trajectories[i].states);
    EXPECT_EQ(back.trajectories[i].actions, data.trajectories[i].actions);
  }
}

TEST(Dataset, ParseErrorsCarryLineNumbers) {
  std::istringstream bad("garbage\n");
  EXPECT_THROW(read_dataset(bad), ParseError);
  const auto m = build_chain(3);
  Dataset d;
  d.trajectories.push_back({{0, 2}, {chain_action::kRight}});
  EXPECT_THROW(validate_dataset(d, m), InvalidDataset);
}

TEST(Behavior, Parsing) {
  EXPECT_EQ(parse_behavior("uniform-random").kind, BehaviorKind::kUniformRandom);
  EXPECT_EQ(parse_behavior("mixture").kind, BehaviorKind::kMixture);
  EXPECT_THROW(parse_behavior("greedy"), InvalidArgument);
}
