#include <catch2/catch_amalgamated.hpp>

#include "mecsim/agent.hpp"

using namespace mecsim;

namespace {

Observation obs_with_mask(std::vector<bool> mask, int slots) {
  Observation o;
  o.features.assign(static_cast<std::size_t>(slots) * kFeaturesPerSlot, 0.0);
  o.valid_mask = std::move(mask);
  return o;
}

UserFeatures features(int id, std::int64_t qlen, double energy, double wait,
                      double snr) {
  UserFeatures f;
  f.user_id = id;
  f.queue_length = qlen;
  f.energy = energy;
  f.mean_wait = wait;
  f.uplink_snr_db = snr;
  return f;
}

}  // namespace

TEST_CASE("observation normalization") {
  std::vector<UserFeatures> raw{features(2, 40, 0.5, 20.0, 60.0),
                                features(4, 250, 2.0, 500.0, -10.0)};
  const Observation obs = make_observation(raw, 4);
  REQUIRE(obs.features.size() == 16u);
  CHECK(obs.features[0] == Catch::Approx(0.4));
  // Energy is log-compressed: 1 J maps to 1, 1e-8 J maps to 0.
  CHECK(obs.features[1] == Catch::Approx(1.0 + std::log10(0.5) / 8.0));
  CHECK(obs.features[2] == Catch::Approx(0.2));
  CHECK(obs.features[3] == Catch::Approx(0.6));
  // Out-of-range values are clipped into [0, 1].
  CHECK(obs.features[4] == 1.0);
  CHECK(obs.features[5] == 1.0);
  CHECK(obs.features[6] == 1.0);
  CHECK(obs.features[7] == 0.0);
  // Absent slots zero-filled with mask false.
  CHECK(obs.valid_mask == std::vector<bool>{true, true, false, false});
  for (std::size_t i = 8; i < 16; ++i) CHECK(obs.features[i] == 0.0);

  CHECK_THROWS_AS(make_observation(raw, 1), std::invalid_argument);
}

TEST_CASE("epsilon schedule") {
  EpsilonSchedule s;
  CHECK(epsilon_value(s, 50, 0) == 1.0);
  CHECK(epsilon_value(s, 99, 123456) == 1.0);
  CHECK(epsilon_value(s, 100, 0) == 1.0);
  CHECK(epsilon_value(s, 500, 5000) == Catch::Approx(0.505));
  CHECK(epsilon_value(s, 500, 10000) == 0.01);
  CHECK(epsilon_value(s, 500, 999999) == 0.01);

  SECTION("monotone non-increasing in the step counter") {
    double prev = 1.0;
    for (std::int64_t step = 0; step <= 12000; step += 37) {
      const double e = epsilon_value(s, 200, step);
      CHECK(e <= prev + 1e-15);
      CHECK(e >= s.end);
      CHECK(e <= s.start);
      prev = e;
    }
  }
}

TEST_CASE("replay buffer evicts oldest first") {
  ReplayBuffer buf(10);
  for (int i = 0; i < 25; ++i) {
    Experience e;
    e.reward = static_cast<double>(i);
    buf.push(e);
  }
  CHECK(buf.size() == 10u);
  CHECK(buf.insertions() == 25u);
  std::vector<double> held;
  for (std::size_t i = 0; i < buf.size(); ++i) held.push_back(buf.at(i).reward);
  std::sort(held.begin(), held.end());
  for (int i = 0; i < 10; ++i) CHECK(held[static_cast<std::size_t>(i)] == 15.0 + i);
}

TEST_CASE("action selection") {
  DqnAgentConfig cfg;
  cfg.num_slots = 3;
  cfg.hidden_size = 8;
  DqnAgent agent(cfg, 5);

  SECTION("pure exploration is uniform over valid slots") {
    Observation obs = obs_with_mask({true, true, false}, 3);
    int counts[3] = {0, 0, 0};
    for (int i = 0; i < 100000; ++i) counts[agent.select_action(obs, 1.0)]++;
    CHECK(counts[2] == 0);
    CHECK(counts[0] > 49000);
    CHECK(counts[0] < 51000);
    CHECK(counts[1] > 49000);
    CHECK(counts[1] < 51000);
  }

  SECTION("masked argmax ignores invalid slots") {
    CHECK(DqnAgent::greedy_action({0.2, 0.9, 0.4}, {true, false, true}) == 2);
  }

  SECTION("greedy ties break to the lowest slot") {
    CHECK(DqnAgent::greedy_action({0.7, 0.7}, {true, true}) == 0);
  }

  SECTION("positive scaling never changes the greedy choice") {
    Rng rng(33);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> q;
      std::vector<bool> mask;
      bool any = false;
      for (int i = 0; i < 5; ++i) {
        q.push_back(rng.uniform(-3, 3));
        const bool v = rng.uniform() < 0.7;
        mask.push_back(v);
        any = any || v;
      }
      if (!any) mask[0] = true;
      const double scale = rng.uniform(0.01, 50.0);
      std::vector<double> scaled = q;
      for (auto& x : scaled) x *= scale;
      CHECK(DqnAgent::greedy_action(q, mask) ==
            DqnAgent::greedy_action(scaled, mask));
    }
  }

  SECTION("empty mask rejected") {
    Observation obs = obs_with_mask({false, false, false}, 3);
    CHECK_THROWS_AS(agent.select_action(obs, 0.0), std::invalid_argument);
  }
}

TEST_CASE("slot permutation keeps features, mask, and action together") {
  Experience e;
  e.observation = obs_with_mask({true, true, false}, 3);
  for (int k = 0; k < kFeaturesPerSlot; ++k) {
    e.observation.features[static_cast<std::size_t>(k)] = 0.1 * (k + 1);
    e.observation.features[kFeaturesPerSlot + static_cast<std::size_t>(k)] =
        0.5 + 0.1 * k;
  }
  e.next_observation = e.observation;
  e.action = 1;
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    Experience p = e;
    DqnAgent::permute_experience(p, rng);
    // The action follows the slot that held the original action's features.
    const std::size_t a = static_cast<std::size_t>(p.action);
    CHECK(p.observation.valid_mask[a]);
    CHECK(p.observation.features[a * kFeaturesPerSlot] == Catch::Approx(0.5));
    // Exactly one slot is invalid and it carries zero features.
    int invalid = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      if (p.observation.valid_mask[s]) continue;
      ++invalid;
      for (int k = 0; k < kFeaturesPerSlot; ++k) {
        CHECK(p.observation.features[s * kFeaturesPerSlot +
                                     static_cast<std::size_t>(k)] == 0.0);
      }
    }
    CHECK(invalid == 1);
    // Both observations move under the same permutation.
    CHECK(p.next_observation.features == p.observation.features);
  }
}

TEST_CASE("bellman targets") {
  const Mlp net = mlp_init({8, 8, 2}, 3);
  Experience e;
  e.observation = obs_with_mask({true, true}, 2);
  e.next_observation = obs_with_mask({true, true}, 2);
  e.reward = 2.0;

  const auto q_next = mlp_forward(net, {e.next_observation.features})[0];
  const double max_q = std::max(q_next[0], q_next[1]);

  SECTION("non-terminal bootstraps from the masked max") {
    CHECK(DqnAgent::bellman_target(e, net, 0.9) ==
          Catch::Approx(2.0 + 0.9 * max_q));
  }
  SECTION("terminal returns the raw reward") {
    e.terminal = true;
    CHECK(DqnAgent::bellman_target(e, net, 0.9) == 2.0);
  }
  SECTION("gamma zero is myopic") {
    CHECK(DqnAgent::bellman_target(e, net, 0.0) == 2.0);
  }
  SECTION("log1p compression applies to the reward term only") {
    CHECK(DqnAgent::bellman_target(e, net, 0.9, true) ==
          Catch::Approx(std::log1p(2.0) + 0.9 * max_q));
    e.terminal = true;
    CHECK(DqnAgent::bellman_target(e, net, 0.9, true) ==
          Catch::Approx(std::log1p(2.0)));
    e.reward = -0.5;  // negative rewards clamp to zero before compression
    CHECK(DqnAgent::bellman_target(e, net, 0.9, true) == 0.0);
  }
  SECTION("max respects the next valid mask") {
    e.next_observation.valid_mask = {q_next[0] >= q_next[1],
                                     q_next[0] < q_next[1]};
    const double worse = std::min(q_next[0], q_next[1]);
    Experience masked = e;
    masked.next_observation.valid_mask = {false, true};
    if (q_next[1] < q_next[0]) {
      CHECK(DqnAgent::bellman_target(masked, net, 1.0) ==
            Catch::Approx(2.0 + worse));
    } else {
      CHECK(DqnAgent::bellman_target(masked, net, 1.0) ==
            Catch::Approx(2.0 + max_q));
    }
  }
}

TEST_CASE("agent update") {
  DqnAgentConfig cfg;
  cfg.num_slots = 2;
  cfg.hidden_size = 16;
  cfg.gamma = 0.0;
  cfg.batch_size = 64;

  SECTION("underfull buffer is a no-op") {
    DqnAgent agent(cfg, 7);
    Experience e;
    e.observation = obs_with_mask({true, true}, 2);
    e.next_observation = e.observation;
    for (int i = 0; i < 63; ++i) agent.remember(e);
    CHECK_FALSE(agent.update(1e-3).has_value());
  }

  SECTION("TD-error clipping bounds the step but not the reported loss") {
    auto make = [&cfg](double clip) {
      DqnAgentConfig c = cfg;
      c.td_error_clip = clip;
      DqnAgent agent(c, 7);
      Experience e;
      e.observation = obs_with_mask({true, true}, 2);
      e.next_observation = e.observation;
      e.action = 0;
      e.reward = 100.0;
      for (int i = 0; i < 64; ++i) agent.remember(e);
      return agent;
    };
    Observation obs = obs_with_mask({true, true}, 2);

    DqnAgent clipped = make(1.0);
    DqnAgent plain = make(0.0);
    const double q0 = clipped.q_values(obs)[0];
    const double loss_clipped = *clipped.update(1e-2);
    const double loss_plain = *plain.update(1e-2);
    // Both report the raw MSE against the uncompressed target.
    CHECK(loss_clipped == Catch::Approx(loss_plain));
    CHECK(loss_clipped == Catch::Approx((q0 - 100.0) * (q0 - 100.0)));
    // The clipped network moves toward the target by a bounded amount.
    const double dq_clipped = clipped.q_values(obs)[0] - q0;
    CHECK(dq_clipped > 0.0);
    CHECK(dq_clipped < 1.0);
  }

  SECTION("one repeated experience regresses to its reward") {
    DqnAgent agent(cfg, 7);
    Experience e;
    e.observation = obs_with_mask({true, true}, 2);
    e.observation.features[0] = 0.4;
    e.next_observation = e.observation;
    e.action = 1;
    e.reward = 0.8;
    for (int i = 0; i < 64; ++i) agent.remember(e);
    double loss = 1.0;
    for (int i = 0; i < 500; ++i) loss = *agent.update(1e-3);
    CHECK(loss < 1e-4);
    CHECK(agent.q_values(e.observation)[1] == Catch::Approx(0.8).margin(0.02));
  }

  SECTION("identical state produces identical losses") {
    auto run = [&cfg] {
      DqnAgent agent(cfg, 9);
      Experience e;
      e.observation = obs_with_mask({true, true}, 2);
      e.next_observation = e.observation;
      e.reward = 0.3;
      for (int i = 0; i < 80; ++i) {
        e.action = i % 2;
        agent.remember(e);
      }
      std::vector<double> losses;
      for (int i = 0; i < 10; ++i) losses.push_back(*agent.update(1e-3));
      return losses;
    };
    CHECK(run() == run());
  }
}

TEST_CASE("greedy baselines") {
  SECTION("time-greedy picks the longest mean wait") {
    std::vector<UserFeatures> raw{features(0, 1, 0.5, 2.5, 0),
                                  features(1, 1, 0.5, 7.0, 0),
                                  features(2, 1, 0.5, 3.0, 0)};
    CHECK(time_greedy_select(raw) == 1);
  }
  SECTION("time-greedy ties break to the lowest slot") {
    std::vector<UserFeatures> raw{features(0, 1, 0.5, 7.0, 0),
                                  features(1, 1, 0.5, 7.0, 0)};
    CHECK(time_greedy_select(raw) == 0);
    std::vector<UserFeatures> empties{features(0, 0, 0.5, 0.0, 0),
                                      features(1, 0, 0.5, 0.0, 0)};
    CHECK(time_greedy_select(empties) == 0);
  }
  SECTION("energy-greedy picks the lowest energy") {
    std::vector<UserFeatures> raw{features(0, 1, 0.3, 0, 0),
                                  features(1, 1, 0.1, 0, 0),
                                  features(2, 1, 0.7, 0, 0)};
    CHECK(energy_greedy_select(raw) == 1);
    std::vector<UserFeatures> equal{features(0, 1, 0.4, 0, 0),
                                    features(1, 1, 0.4, 0, 0)};
    CHECK(energy_greedy_select(equal) == 0);
    std::vector<UserFeatures> single{features(0, 1, 0.4, 0, 0)};
    CHECK(energy_greedy_select(single) == 0);
  }
  SECTION("scaling waits or energies preserves the choice") {
    Rng rng(41);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<UserFeatures> raw;
      for (int i = 0; i < 4; ++i) {
        raw.push_back(features(i, 1, rng.uniform(0.01, 1.0),
                               rng.uniform(0.0, 50.0), 0));
      }
      const double scale = rng.uniform(0.1, 20.0);
      std::vector<UserFeatures> scaled = raw;
      for (auto& f : scaled) {
        f.mean_wait *= scale;
        f.energy *= scale;
      }
      CHECK(time_greedy_select(raw) == time_greedy_select(scaled));
      CHECK(energy_greedy_select(raw) == energy_greedy_select(scaled));
    }
  }
}

TEST_CASE("random_select") {
  Rng rng(11);
  SECTION("single valid slot always chosen") {
    CHECK(random_select({false, true, false}, rng) == 1);
  }
  SECTION("uniform over valid slots, invalid never chosen") {
    int counts[3] = {0, 0, 0};
    for (int i = 0; i < 100000; ++i) counts[random_select({true, true, false}, rng)]++;
    CHECK(counts[2] == 0);
    CHECK(counts[0] > 49000);
    CHECK(counts[0] < 51000);
  }
  SECTION("empty mask rejected") {
    CHECK_THROWS_AS(random_select({false, false}, rng), std::invalid_argument);
  }
}

TEST_CASE("agent checkpoint round-trips") {
  DqnAgentConfig cfg;
  cfg.num_slots = 3;
  cfg.hidden_size = 12;
  DqnAgent agent(cfg, 15);
  Experience e;
  e.observation = obs_with_mask({true, true, true}, 3);
  e.next_observation = e.observation;
  e.reward = 0.5;
  for (int i = 0; i < 70; ++i) agent.remember(e);
  agent.update(1e-3);

  const nlohmann::json j = nlohmann::json::parse(agent.to_json().dump());
  DqnAgent back = DqnAgent::from_json(j, 15);
  CHECK(back.network().weights == agent.network().weights);
  CHECK(back.network().biases == agent.network().biases);
  CHECK(back.optimizer().step == agent.optimizer().step);
  // Replay contents are deliberately not checkpointed.
  CHECK(back.buffer().size() == 0u);

  nlohmann::json bad = agent.to_json();
  bad["format"] = "other";
  CHECK_THROWS_AS(DqnAgent::from_json(bad, 15), std::runtime_error);
}
