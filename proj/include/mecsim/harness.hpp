#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mecsim/agent.hpp"
#include "mecsim/config.hpp"
#include "mecsim/rng.hpp"
#include "mecsim/sim.hpp"

namespace mecsim {

// ---------------------------------------------------------------------------
// CSV plumbing. Shortest round-trip formatting keeps outputs byte-stable.
// ---------------------------------------------------------------------------

inline std::string format_double(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline void write_csv(const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows,
                      const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_csv: cannot open " + path);
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) f << ',';
    f << csv_field(header[i]);
  }
  f << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) f << ',';
      f << csv_field(row[i]);
    }
    f << '\n';
  }
  if (!f) throw std::runtime_error("write_csv: write failed for " + path);
}

// Minimal parser for our own outputs (no embedded newlines).
inline std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_csv: cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(f, line)) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          cur += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        fields.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    fields.push_back(cur);
    rows.push_back(std::move(fields));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainOptions {
  std::int64_t episodes = 2000;
  double lr_initial = 5e-3;
  std::int64_t lr_halve_every = 100;  // episodes
  double lr_floor = 0.0;              // halving never goes below this
  int updates_per_episode = 8;
  EpsilonSchedule schedule;
  int hidden_size = 200;
  double gamma = 0.9;
  int batch_size = 64;
  std::size_t buffer_capacity = 100000;
  bool use_target_network = true;
  double td_error_clip = 1.0;  // <= 0 disables clipping
  bool log1p_rewards = true;   // compress rewards inside Q-targets
  bool double_dqn = false;     // decoupled action selection in targets
  int target_sync_every = 100;  // updates between target-network syncs
  bool permute_slots = false;   // augment minibatches with slot permutations
};

struct EpisodeRecord {
  std::int64_t episode = 0;
  std::int64_t lifetime = 0;
  std::optional<double> mean_tct;
  bool censored = false;
  double epsilon = 0;
  double learning_rate = 0;
  std::vector<double> agent_returns;
  std::vector<std::optional<double>> agent_losses;
};

struct RunSummary {
  std::vector<EpisodeRecord> records;

  // Moving average of the mean per-agent return over a trailing window.
  double mean_return(std::int64_t first, std::int64_t count) const {
    double total = 0;
    std::int64_t n = 0;
    for (const auto& r : records) {
      if (r.episode < first || r.episode >= first + count) continue;
      double ep_total = 0;
      for (double x : r.agent_returns) ep_total += x;
      total += ep_total / static_cast<double>(r.agent_returns.size());
      ++n;
    }
    return n > 0 ? total / static_cast<double>(n) : 0.0;
  }
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::int64_t episode, const std::string& what)
      : std::runtime_error("divergence at episode " + std::to_string(episode) +
                           ": " + what),
        episode(episode) {}
  std::int64_t episode;
};

struct TrainResult {
  RunSummary summary;
  std::vector<DqnAgent> agents;
};

inline double learning_rate_at(const TrainOptions& opts, std::int64_t episode) {
  const auto halvings = episode / opts.lr_halve_every;
  return std::max(opts.lr_initial * std::pow(0.5, static_cast<double>(halvings)),
                  opts.lr_floor);
}

namespace detail {

inline std::vector<Observation> normalize_all(
    const std::vector<std::vector<UserFeatures>>& raw, int max_slots) {
  std::vector<Observation> out;
  out.reserve(raw.size());
  for (const auto& r : raw) out.push_back(make_observation(r, max_slots));
  return out;
}

}  // namespace detail

// Episodic training loop: one experience per agent per interval, exactly
// `updates_per_episode` gradient steps per agent at episode end, learning
// rate halved every lr_halve_every episodes.
inline TrainResult train(const SimConfig& config, const TrainOptions& opts,
                         std::uint64_t master_seed) {
  config.validate();
  const int n = config.num_servers;
  const int slots = config.max_pool_size();

  DqnAgentConfig acfg;
  acfg.num_slots = slots;
  acfg.hidden_size = opts.hidden_size;
  acfg.gamma = opts.gamma;
  acfg.batch_size = opts.batch_size;
  acfg.buffer_capacity = opts.buffer_capacity;
  acfg.use_target_network = opts.use_target_network;
  acfg.td_error_clip = opts.td_error_clip;
  acfg.log1p_rewards = opts.log1p_rewards;
  acfg.double_dqn = opts.double_dqn;
  acfg.target_sync_every = opts.target_sync_every;
  acfg.permute_slots = opts.permute_slots;

  TrainResult result;
  result.agents.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    result.agents.emplace_back(
        acfg, derive_seed(master_seed, 0xA6E500000ULL + static_cast<std::uint64_t>(i)));
  }

  std::int64_t post_pretrain_steps = 0;
  for (std::int64_t ep = 0; ep < opts.episodes; ++ep) {
    EnvState env = init_episode(config, derive_seed(master_seed, static_cast<std::uint64_t>(ep)));
    EpisodeRecord rec;
    rec.episode = ep;
    rec.epsilon = epsilon_value(opts.schedule, ep, post_pretrain_steps);
    rec.learning_rate = learning_rate_at(opts, ep);
    rec.agent_returns.assign(static_cast<std::size_t>(n), 0.0);

    std::vector<Observation> obs(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      obs[static_cast<std::size_t>(i)] = make_observation(observe(env, i), slots);
    }

    while (!env.crashed) {
      const double eps = epsilon_value(opts.schedule, ep, post_pretrain_steps);
      std::vector<int> slot_actions(static_cast<std::size_t>(n));
      std::vector<int> user_actions(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        const int slot = result.agents[static_cast<std::size_t>(i)].select_action(
            obs[static_cast<std::size_t>(i)], eps);
        slot_actions[static_cast<std::size_t>(i)] = slot;
        user_actions[static_cast<std::size_t>(i)] =
            env.servers[static_cast<std::size_t>(i)].pool[static_cast<std::size_t>(slot)];
      }
      StepOutcome out = step(env, user_actions);
      auto next_obs = detail::normalize_all(out.next_observations, slots);
      for (int i = 0; i < n; ++i) {
        Experience e;
        e.observation = obs[static_cast<std::size_t>(i)];
        e.action = slot_actions[static_cast<std::size_t>(i)];
        e.reward = out.rewards[static_cast<std::size_t>(i)];
        e.next_observation = next_obs[static_cast<std::size_t>(i)];
        e.terminal = out.terminal;
        result.agents[static_cast<std::size_t>(i)].remember(std::move(e));
        rec.agent_returns[static_cast<std::size_t>(i)] +=
            out.rewards[static_cast<std::size_t>(i)];
      }
      obs = std::move(next_obs);
      if (ep >= opts.schedule.pretrain_episodes) ++post_pretrain_steps;
    }

    const Metrics m = finalize_metrics(env);
    rec.lifetime = m.lifetime;
    rec.mean_tct = m.mean_tct;
    rec.censored = m.censored;

    rec.agent_losses.assign(static_cast<std::size_t>(n), std::nullopt);
    for (int i = 0; i < n; ++i) {
      for (int u = 0; u < opts.updates_per_episode; ++u) {
        std::optional<double> loss;
        try {
          loss = result.agents[static_cast<std::size_t>(i)].update(rec.learning_rate);
        } catch (const std::runtime_error& e) {
          throw DivergenceError(ep, e.what());
        }
        if (loss && !std::isfinite(*loss)) {
          throw DivergenceError(ep, "non-finite loss");
        }
        if (loss) rec.agent_losses[static_cast<std::size_t>(i)] = *loss;
      }
    }
    result.summary.records.push_back(std::move(rec));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

enum class PolicyKind { dqn, time_greedy, energy_greedy, random };

inline const char* policy_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::dqn: return "dqn";
    case PolicyKind::time_greedy: return "time_greedy";
    case PolicyKind::energy_greedy: return "energy_greedy";
    case PolicyKind::random: return "random";
  }
  return "?";
}

struct EvalRecord {
  PolicyKind policy;
  std::int64_t seed_index = 0;
  std::uint64_t env_seed = 0;
  std::int64_t lifetime = 0;
  std::optional<double> mean_tct;
  bool censored = false;
};

// Runs one greedy (epsilon = 0) episode under the given policy.
inline EvalRecord run_episode(PolicyKind kind, const SimConfig& config,
                              std::uint64_t env_seed,
                              std::vector<DqnAgent>* agents, Rng* random_rng) {
  const int n = config.num_servers;
  const int slots = config.max_pool_size();
  EnvState env = init_episode(config, env_seed);
  while (!env.crashed) {
    std::vector<int> user_actions(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const auto raw = observe(env, i);
      int slot = 0;
      switch (kind) {
        case PolicyKind::dqn: {
          const Observation obs = make_observation(raw, slots);
          slot = DqnAgent::greedy_action(
              (*agents)[static_cast<std::size_t>(i)].q_values(obs), obs.valid_mask);
          break;
        }
        case PolicyKind::time_greedy:
          slot = time_greedy_select(raw);
          break;
        case PolicyKind::energy_greedy:
          slot = energy_greedy_select(raw);
          break;
        case PolicyKind::random: {
          std::vector<bool> mask(raw.size(), true);
          slot = random_select(mask, *random_rng);
          break;
        }
      }
      user_actions[static_cast<std::size_t>(i)] =
          env.servers[static_cast<std::size_t>(i)].pool[static_cast<std::size_t>(slot)];
    }
    step(env, user_actions);
  }
  const Metrics m = finalize_metrics(env);
  EvalRecord rec;
  rec.policy = kind;
  rec.env_seed = env_seed;
  rec.lifetime = m.lifetime;
  rec.mean_tct = m.mean_tct;
  rec.censored = m.censored;
  return rec;
}

// Paired evaluation: every policy sees the identical environment seed list.
inline std::vector<EvalRecord> evaluate(const std::vector<PolicyKind>& policies,
                                        const SimConfig& config,
                                        std::int64_t num_episodes,
                                        std::uint64_t eval_seed,
                                        std::vector<DqnAgent>* agents) {
  config.validate();
  std::vector<EvalRecord> out;
  for (std::int64_t e = 0; e < num_episodes; ++e) {
    const std::uint64_t env_seed =
        derive_seed(eval_seed, 0xE7A1000000ULL + static_cast<std::uint64_t>(e));
    for (PolicyKind kind : policies) {
      if (kind == PolicyKind::dqn && agents == nullptr) {
        throw std::invalid_argument("evaluate: dqn policy requires agents");
      }
      Rng random_rng(derive_seed(eval_seed, 0x4A4D000000ULL + static_cast<std::uint64_t>(e)));
      EvalRecord rec = run_episode(kind, config, env_seed, agents, &random_rng);
      rec.seed_index = e;
      out.push_back(rec);
    }
  }
  return out;
}

struct PolicyStats {
  double mean_lifetime = 0, std_lifetime = 0;
  double mean_tct = 0, std_tct = 0;
  std::int64_t episodes = 0, episodes_with_tct = 0;
};

inline PolicyStats summarize(const std::vector<EvalRecord>& records,
                             PolicyKind kind) {
  PolicyStats s;
  std::vector<double> lts, tcts;
  for (const auto& r : records) {
    if (r.policy != kind) continue;
    lts.push_back(static_cast<double>(r.lifetime));
    if (r.mean_tct) tcts.push_back(*r.mean_tct);
  }
  auto mean_std = [](const std::vector<double>& xs, double& mean, double& sd) {
    if (xs.empty()) return;
    double total = 0;
    for (double x : xs) total += x;
    mean = total / static_cast<double>(xs.size());
    double var = 0;
    for (double x : xs) var += (x - mean) * (x - mean);
    sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
  };
  mean_std(lts, s.mean_lifetime, s.std_lifetime);
  mean_std(tcts, s.mean_tct, s.std_tct);
  s.episodes = static_cast<std::int64_t>(lts.size());
  s.episodes_with_tct = static_cast<std::int64_t>(tcts.size());
  return s;
}

// ---------------------------------------------------------------------------
// Server-count sweep
// ---------------------------------------------------------------------------

struct SweepRecord {
  int num_servers = 0;
  std::int64_t seed_index = 0;
  std::int64_t lifetime = 0;
  std::optional<double> mean_tct;
};

// Trains a fresh set of agents per server count, then evaluates the trained
// policy over a shared seed list.
inline std::vector<SweepRecord> sweep_servers(const SimConfig& base,
                                              const std::vector<int>& counts,
                                              const TrainOptions& opts,
                                              std::int64_t eval_episodes,
                                              std::uint64_t master_seed) {
  std::vector<SweepRecord> out;
  for (int n : counts) {
    SimConfig cfg = base;
    cfg.num_servers = n;
    cfg.validate();
    TrainResult tr = train(cfg, opts, derive_seed(master_seed, static_cast<std::uint64_t>(n)));
    auto evals = evaluate({PolicyKind::dqn}, cfg, eval_episodes,
                          derive_seed(master_seed, 0x57EE0000ULL), &tr.agents);
    for (const auto& r : evals) {
      SweepRecord s;
      s.num_servers = n;
      s.seed_index = r.seed_index;
      s.lifetime = r.lifetime;
      s.mean_tct = r.mean_tct;
      out.push_back(s);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV table builders (the file formats are the external contract)
// ---------------------------------------------------------------------------

inline std::string tct_field(const std::optional<double>& tct) {
  return tct ? format_double(*tct) : std::string("NA");
}

inline void write_training_csv(const RunSummary& summary, int num_agents,
                               const std::string& path) {
  std::vector<std::string> header = {"episode",  "lifetime",     "mean_tct",
                                     "censored", "epsilon",      "learning_rate"};
  for (int i = 0; i < num_agents; ++i) {
    header.push_back("agent" + std::to_string(i) + "_return");
    header.push_back("agent" + std::to_string(i) + "_loss");
  }
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : summary.records) {
    std::vector<std::string> row = {std::to_string(r.episode),
                                    std::to_string(r.lifetime),
                                    tct_field(r.mean_tct),
                                    r.censored ? "1" : "0",
                                    format_double(r.epsilon),
                                    format_double(r.learning_rate)};
    for (int i = 0; i < num_agents; ++i) {
      row.push_back(format_double(r.agent_returns[static_cast<std::size_t>(i)]));
      const auto& loss = r.agent_losses[static_cast<std::size_t>(i)];
      row.push_back(loss ? format_double(*loss) : std::string("NA"));
    }
    rows.push_back(std::move(row));
  }
  write_csv(header, rows, path);
}

inline void write_eval_csv(const std::vector<EvalRecord>& records,
                           const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : records) {
    rows.push_back({policy_name(r.policy), std::to_string(r.seed_index),
                    std::to_string(r.env_seed), std::to_string(r.lifetime),
                    tct_field(r.mean_tct), r.censored ? "1" : "0"});
  }
  write_csv({"policy", "seed_index", "env_seed", "lifetime", "mean_tct",
             "censored"},
            rows, path);
}

inline void write_sweep_csv(const std::vector<SweepRecord>& records,
                            const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : records) {
    rows.push_back({std::to_string(r.num_servers), std::to_string(r.seed_index),
                    std::to_string(r.lifetime), tct_field(r.mean_tct)});
  }
  write_csv({"num_servers", "seed_index", "lifetime", "mean_tct"}, rows, path);
}

}  // namespace mecsim
