#include <gtest/gtest.h>

#include "support/oracles.hpp"

using namespace hilp;

namespace {

struct GridFixture {
  Mdp mdp = build_gridworld(open_grid_map(6, 6));
  Dataset data = hilp::testing::uniform_dataset(mdp, 30, 60, 2);
  Embedding emb;
  SkillPolicy policy;

  explicit GridFixture(std::uint64_t seed, std::size_t dim = 2, std::size_t m = 16) {
    std::mt19937_64 rng(seed);
    emb = hilp::testing::random_embedding(rng, mdp.n_states(), dim, 3.0);
    policy = train_skills(data, mdp.n_actions(), emb, mean_embedding(emb, data), build_codebook(dim, m, seed));
  }
};

RewardFn linear_reward(const Mdp& m, const Embedding& emb, std::span<const double> w) {
  auto r = RewardFn::zero(m);
  for (State s = 0; s < m.n_states(); ++s)
    for (Action a = 0; a < m.n_actions(); ++a) {
      const State t = m.step(s, a);
      r.set(s, a, t, dot(difference(emb.phi(t), emb.phi(s)), w));
    }
  return r;
}

}  // namespace

TEST(Regression, ExactlyLinearRewardRecoversCodebookSkill) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    GridFixture f(seed);
    const auto& cb = f.policy.codebook();
    const std::size_t i = (3 * seed + 1) % cb.size();
    const auto reward = linear_reward(f.mdp, f.emb, scaled(cb[i], 2.5));
    const auto prompt = infer_latent_regression(f.data, f.emb, reward, {0, 0.0, seed});
    EXPECT_LE(prompt.residual, 1e-12);
    EXPECT_FALSE(prompt.degenerate);
    EXPECT_EQ(cb.project(prompt.latent), i);
    for (State start : {0u, 14u, 35u}) {
      const auto zs = rollout_zeroshot_rl(f.mdp, f.policy, reward, prompt, 0.99, start, 40);
      // Same episode driven by the codebook index directly.
      double ret = 0.0, discount = 1.0;
      State s = start;
      for (int t = 0; t < 40; ++t) {
        const Action a = f.policy.act_index(i, s);
        const State next = f.mdp.step(s, a);
        ret += discount * reward(s, a, next);
        discount *= 0.99;
        s = next;
      }
      EXPECT_EQ(zs.ret, ret);
    }
  }
}

TEST(Regression, PromptLatentsAreUnitNorm) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  GridFixture f(1, 3);
  for (int trial = 0; trial < 50; ++trial) {
    auto r = RewardFn::zero(f.mdp);
    for (State s = 0; s < f.mdp.n_states(); ++s)
      for (Action a = 0; a < f.mdp.n_actions(); ++a) r.set(s, a, f.mdp.step(s, a), u(rng));
    const auto p = infer_latent_regression(f.data, f.emb, r, {0, 1e-6, 0});
    ASSERT_FALSE(p.degenerate);
    EXPECT_NEAR(norm(p.latent), 1.0, 1e-12);
  }
}

TEST(Regression, RidgeSolvesNormalEquations) {
  GridFixture f(4, 2);
  std::vector<double> ind(f.mdp.n_states(), 0.0);
  ind[35] = 1.0;
  const auto r = RewardFn::from_arrival(f.mdp, ind);
  const double lambda = 0.3;
  const auto p = infer_latent_regression(f.data, f.emb, r, {0, lambda, 0});
  // Gradient of mean squared error + lambda |z|^2 vanishes at the solution.
  Vec grad = scaled(p.raw, lambda);
  std::size_t n = 0;
  for (const auto& traj : f.data.trajectories) n += traj.length();
  for (const auto& traj : f.data.trajectories)
    for (std::size_t t = 0; t < traj.length(); ++t) {
      const auto feat = difference(f.emb.phi(traj.states[t + 1]), f.emb.phi(traj.states[t]));
      const double e = dot(feat, p.raw) - r(traj.states[t], traj.actions[t], traj.states[t + 1]);
      for (std::size_t k = 0; k < 2; ++k) grad[k] += e * feat[k] / static_cast<double>(n);
    }
  EXPECT_NEAR(grad[0], 0.0, 1e-12);
  EXPECT_NEAR(grad[1], 0.0, 1e-12);
}

TEST(Regression, SingularSystemNeedsRidge) {
  const auto m = build_chain(4);
  Dataset d;
  d.trajectories.push_back({{1, 1, 1}, {chain_action::kStay, chain_action::kStay}});
  const auto emb = exact_chain_embedding(4, 2);
  EXPECT_THROW(infer_latent_regression(d, emb, RewardFn::zero(m), {0, 0.0, 0}), InvalidArgument);
  const auto p = infer_latent_regression(d, emb, RewardFn::zero(m), {0, 1e-3, 0});
  EXPECT_TRUE(p.degenerate);
}

TEST(GoalPrompt, UnitNormOrFlaggedAtGoal) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto emb = hilp::testing::random_embedding(rng, 12, 1 + trial % 4, 2.0);
    for (State s = 0; s < 12; ++s)
      for (State g = 0; g < 12; ++g) {
        const auto p = gc_latent(emb, s, g);
        if (s == g) {
          EXPECT_TRUE(p.at_goal);
        } else {
          ASSERT_FALSE(p.at_goal);
          EXPECT_NEAR(norm(p.latent), 1.0, 1e-12);
        }
      }
  }
}

TEST(GoalPrompt, ExactChainReachesEveryGoalInDistanceSteps) {
  const auto m = build_chain(12);
  const auto data = hilp::testing::uniform_dataset(m, 20, 100, 0);
  const auto emb = exact_chain_embedding(12, 2);
  const auto policy = train_skills(data, 3, emb, mean_embedding(emb, data), build_codebook(2, 8, 0));
  const auto d = temporal_distances(m);
  for (State s = 0; s < 12; ++s)
    for (State g = 0; g < 12; ++g) {
      const auto r = rollout_gcrl(m, policy, emb, g, s, static_cast<std::size_t>(d(s, g)));
      EXPECT_TRUE(r.success) << s << "->" << g;
      EXPECT_EQ(r.steps, static_cast<std::size_t>(d(s, g)));
    }
}

TEST(GoalFromReward, PicksRewardingState) {
  const auto m = build_chain(6);
  const auto data = hilp::testing::uniform_dataset(m, 10, 40, 1);
  std::vector<double> ind(6, 0.0);
  ind[4] = 1.0;
  EXPECT_EQ(goal_from_reward(data, RewardFn::from_state(m, ind)), 4u);
  // Arrival rewards are credited to the state the transition leaves.
  const State g = goal_from_reward(data, RewardFn::from_arrival(m, ind));
  EXPECT_TRUE(g == 3u || g == 4u || g == 5u);
}

TEST(Midpoint, MatchesBruteForceMinimax) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 25;
    const auto emb = hilp::testing::random_embedding(rng, n, 2, 4.0);
    std::vector<State> cands;
    for (State w = 0; w < n; w += 1 + trial % 3) cands.push_back(w);
    for (State s = 0; s < n; s += 4)
      for (State u = 0; u < n; u += 3) {
        State best = cands.front();
        double best_v = std::numeric_limits<double>::infinity();
        for (State w : cands) {
          const double v =
              std::max(exact_latent_distance(emb, s, w), exact_latent_distance(emb, w, u));
          if (v < best_v) {
            best_v = v;
            best = w;
          }
        }
        EXPECT_EQ(plan_midpoint(emb, cands, s, u), best);
      }
  }
}

TEST(Midpoint, RecursionHalvesTheChain) {
  const auto emb = exact_chain_embedding(17, 1);
  std::vector<State> all(17);
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(recursive_plan(emb, all, 0, 16, 0), 16u);
  EXPECT_EQ(recursive_plan(emb, all, 0, 16, 1), 8u);
  EXPECT_EQ(recursive_plan(emb, all, 0, 16, 2), 4u);
  EXPECT_EQ(recursive_plan(emb, all, 0, 16, 3), 2u);
  // Ties (7 and 8 from 0 to 15) go to the lower id.
  EXPECT_EQ(plan_midpoint(emb, all, 0, 15), 7u);
}

TEST(Midpoint, SingleTopKMatchesRecursivePlan) {
  std::mt19937_64 rng(10);
  const auto emb = hilp::testing::random_embedding(rng, 40, 3, 5.0);
  std::vector<State> all(40);
  std::iota(all.begin(), all.end(), 0);
  for (State s = 0; s < 40; s += 3)
    for (State g = 0; g < 40; g += 7)
      for (std::size_t rec = 0; rec <= 3; ++rec) {
        const auto wp = recursive_plan_point(emb, all, s, g, rec, 1);
        const State u = recursive_plan(emb, all, s, g, rec);
        ASSERT_EQ(wp.chosen, std::vector<State>{u});
        const auto pu = emb.phi(u);
        EXPECT_EQ(wp.point, Vec(pu.begin(), pu.end()));
      }
}

TEST(Midpoint, TopKAveragesWaypoints) {
  const auto emb = exact_chain_embedding(9, 1);
  std::vector<State> all(9);
  std::iota(all.begin(), all.end(), 0);
  const auto wp = recursive_plan_point(emb, all, 0, 8, 1, 3);
  ASSERT_EQ(wp.chosen.size(), 3u);
  EXPECT_EQ(wp.chosen.front(), 4u);
  EXPECT_DOUBLE_EQ(wp.point[0], 4.0);  // 3, 4, 5 averaged
}

TEST(PlanLatent, FallsBackToGoalDirection) {
  const auto emb = exact_chain_embedding(5, 1);
  const auto p = plan_latent(emb, 2, emb.phi(2), 4);
  EXPECT_TRUE(p.fallback);
  EXPECT_EQ(p.latent, Vec{1.0});
  const auto q = plan_latent(emb, 2, emb.phi(0), 4);
  EXPECT_FALSE(q.fallback);
  EXPECT_EQ(q.latent, Vec{-1.0});
}

TEST(Planner, CandidatesAreDistinctSortedSubsample) {
  const auto m = build_gridworld(open_grid_map(8, 8));
  const auto data = hilp::testing::uniform_dataset(m, 20, 100, 4);
  const auto full = make_planner(data, {50000, 2, 1, 0});
  EXPECT_EQ(full.candidates.size(), 64u);
  const auto sub = make_planner(data, {10, 2, 1, 3});
  EXPECT_EQ(sub.candidates.size(), 10u);
  EXPECT_TRUE(std::is_sorted(sub.candidates.begin(), sub.candidates.end()));
  EXPECT_EQ(std::adjacent_find(sub.candidates.begin(), sub.candidates.end()), sub.candidates.end());
}

TEST(TaskReturn, HoldsGoalAfterArrival) {
  const auto m = build_chain(6);
  const auto data = hilp::testing::uniform_dataset(m, 20, 60, 0);
  const auto emb = exact_chain_embedding(6, 1);
  const auto policy = train_skills(data, 3, emb, mean_embedding(emb, data), build_codebook(1, 2, 0));
  std::vector<double> ind(6, 0.0);
  ind[5] = 1.0;
  const auto r = RewardFn::from_state(m, ind);
  // Arrive after 3 steps from 2, then collect 1 per step for the remaining 7.
  double want = 0.0;
  for (int t = 3; t < 10; ++t) want += std::pow(0.5, t);
  EXPECT_NEAR(gcrl_task_return(m, policy, emb, r, 0.5, 5, 2, 10), want, 1e-15);
}
