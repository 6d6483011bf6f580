#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mecsim/harness.hpp"

using namespace mecsim;

namespace {

SimConfig quick_config() {
  SimConfig cfg;
  cfg.num_servers = 2;
  cfg.num_users = 4;
  cfg.emax_high = 0.2;  // shorter episodes
  cfg.max_intervals = 2000;
  return cfg;
}

TrainOptions quick_options(std::int64_t episodes) {
  TrainOptions opts;
  opts.episodes = episodes;
  opts.hidden_size = 16;
  opts.schedule.pretrain_episodes = 2;
  opts.schedule.decay_steps = 100;
  return opts;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("learning rate halves every 100 episodes") {
  TrainOptions opts;
  CHECK(learning_rate_at(opts, 0) == Catch::Approx(5e-3));
  CHECK(learning_rate_at(opts, 99) == Catch::Approx(5e-3));
  CHECK(learning_rate_at(opts, 100) == Catch::Approx(2.5e-3));
  CHECK(learning_rate_at(opts, 250) == Catch::Approx(1.25e-3));

  SECTION("optional floor caps the decay") {
    opts.lr_floor = 2e-3;
    CHECK(learning_rate_at(opts, 0) == Catch::Approx(5e-3));
    CHECK(learning_rate_at(opts, 100) == Catch::Approx(2.5e-3));
    CHECK(learning_rate_at(opts, 250) == Catch::Approx(2e-3));
    CHECK(learning_rate_at(opts, 5000) == Catch::Approx(2e-3));
  }
}

TEST_CASE("train with zero episodes returns an empty summary") {
  const TrainResult r = train(quick_config(), quick_options(0), 1);
  CHECK(r.summary.records.empty());
  CHECK(r.agents.size() == 2u);
  for (const auto& a : r.agents) {
    CHECK(a.buffer().size() == 0u);
    CHECK(a.optimizer().step == 0);
  }
}

TEST_CASE("training is deterministic and logs byte-identical CSVs") {
  const SimConfig cfg = quick_config();
  const TrainOptions opts = quick_options(6);
  const std::string path_a = temp_path("mecsim_train_a.csv");
  const std::string path_b = temp_path("mecsim_train_b.csv");

  const TrainResult a = train(cfg, opts, 42);
  write_training_csv(a.summary, cfg.num_servers, path_a);
  const TrainResult b = train(cfg, opts, 42);
  write_training_csv(b.summary, cfg.num_servers, path_b);

  CHECK(slurp(path_a) == slurp(path_b));
  CHECK(!slurp(path_a).empty());

  REQUIRE(a.summary.records.size() == 6u);
  for (const auto& rec : a.summary.records) {
    CHECK(rec.lifetime >= 1);
    CHECK(rec.epsilon >= 0.01);
    CHECK(rec.epsilon <= 1.0);
    CHECK(rec.agent_returns.size() == 2u);
  }
  std::remove(path_a.c_str());
  std::remove(path_b.c_str());
}

TEST_CASE("experiences accumulate one per agent per interval") {
  const SimConfig cfg = quick_config();
  const TrainResult r = train(cfg, quick_options(3), 7);
  std::int64_t total_intervals = 0;
  for (const auto& rec : r.summary.records) total_intervals += rec.lifetime;
  for (const auto& agent : r.agents) {
    CHECK(agent.buffer().insertions() == static_cast<std::uint64_t>(total_intervals));
  }
}

TEST_CASE("evaluation") {
  const SimConfig cfg = quick_config();

  SECTION("paired seeds: identical env seeds across policies") {
    const auto records = evaluate(
        {PolicyKind::time_greedy, PolicyKind::energy_greedy, PolicyKind::random},
        cfg, 5, 3, nullptr);
    REQUIRE(records.size() == 15u);
    for (std::size_t e = 0; e < 5; ++e) {
      const auto seed0 = records[e * 3].env_seed;
      CHECK(records[e * 3 + 1].env_seed == seed0);
      CHECK(records[e * 3 + 2].env_seed == seed0);
    }
  }

  SECTION("a single greedy episode equals a direct sim replay") {
    const auto records =
        evaluate({PolicyKind::energy_greedy}, cfg, 1, 9, nullptr);
    REQUIRE(records.size() == 1u);
    EnvState env = init_episode(cfg, records[0].env_seed);
    while (!env.crashed) {
      std::vector<int> actions;
      for (int i = 0; i < cfg.num_servers; ++i) {
        const auto raw = observe(env, i);
        actions.push_back(raw[static_cast<std::size_t>(energy_greedy_select(raw))].user_id);
      }
      step(env, actions);
    }
    const Metrics m = finalize_metrics(env);
    CHECK(records[0].lifetime == m.lifetime);
    CHECK(records[0].mean_tct == m.mean_tct);
  }

  SECTION("greedy baselines dominate random on their own metric") {
    const auto records = evaluate(
        {PolicyKind::time_greedy, PolicyKind::energy_greedy, PolicyKind::random},
        cfg, 25, 2026, nullptr);
    const PolicyStats tg = summarize(records, PolicyKind::time_greedy);
    const PolicyStats eg = summarize(records, PolicyKind::energy_greedy);
    const PolicyStats rnd = summarize(records, PolicyKind::random);
    CHECK(eg.mean_lifetime >= rnd.mean_lifetime);
    CHECK(tg.mean_tct <= rnd.mean_tct);
  }

  SECTION("dqn policy without agents rejected") {
    CHECK_THROWS_AS(evaluate({PolicyKind::dqn}, cfg, 1, 1, nullptr),
                    std::invalid_argument);
  }
}

TEST_CASE("sweep emits one row per count and seed, deterministically") {
  SimConfig cfg = quick_config();
  TrainOptions opts = quick_options(2);
  const auto a = sweep_servers(cfg, {1, 2}, opts, 3, 5);
  const auto b = sweep_servers(cfg, {1, 2}, opts, 3, 5);
  REQUIRE(a.size() == 6u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].num_servers == b[i].num_servers);
    CHECK(a[i].lifetime == b[i].lifetime);
    CHECK(a[i].mean_tct == b[i].mean_tct);
  }
  CHECK(a[0].num_servers == 1);
  CHECK(a[3].num_servers == 2);
}

TEST_CASE("csv io") {
  const std::string path = temp_path("mecsim_csv_test.csv");

  SECTION("empty records produce a header-only file") {
    write_csv({"a", "b"}, {}, path);
    const auto rows = read_csv(path);
    REQUIRE(rows.size() == 1u);
    CHECK(rows[0] == std::vector<std::string>{"a", "b"});
  }

  SECTION("values round-trip, including quoting and the NA sentinel") {
    write_csv({"x", "y", "z"},
              {{format_double(0.1), "NA", "has,comma"},
               {format_double(1e-7), "plain", "quote\"inside"},
               {"3", "4", "5"}},
              path);
    const auto rows = read_csv(path);
    REQUIRE(rows.size() == 4u);
    CHECK(std::stod(rows[1][0]) == 0.1);
    CHECK(rows[1][1] == "NA");
    CHECK(rows[1][2] == "has,comma");
    CHECK(rows[2][2] == "quote\"inside");
    CHECK(std::stod(rows[2][0]) == 1e-7);
  }
  std::remove(path.c_str());
}
