#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <stdexcept>
#include <vector>

#include "mecsim/channel.hpp"
#include "mecsim/config.hpp"
#include "mecsim/rng.hpp"

#include "json.hpp"

namespace mecsim {

struct Task {
  std::int64_t id = 0;
  int owner = 0;
  std::int64_t size_bits = 0;
  std::int64_t arrival_interval = 0;
  std::optional<std::int64_t> completion_interval;
  std::int64_t remaining_server_bits = 0;  // server-side progress carry-over
  bool offloaded = false;
};

struct UserState {
  int id = 0;
  double x = 0, y = 0;
  double energy = 0;  // E_j(t), joules
  std::deque<Task> queue;
  int server = -1;
  bool alive = true;
  std::int64_t tasks_arrived = 0;
};

struct ServerState {
  int id = 0;
  double x = 0, y = 0;
  std::vector<int> pool;  // associated user ids, ascending
  std::deque<Task> queue;
  double bandwidth_hz = 0;  // static FDMA share
};

struct EnvState {
  SimConfig config;
  std::vector<UserState> users;
  std::vector<ServerState> servers;
  std::int64_t t = 1;  // current interval index
  Rng arrivals_rng;
  Rng fading_rng;
  std::vector<Task> completed_tasks;  // in completion order
  bool crashed = false;
  bool energy_depleted = false;  // crash cause: energy vs interval cap
  std::vector<double> fading_gains;  // per-user link multiplier, interval t
  std::int64_t next_task_id = 0;
};

// Raw per-user features a server observes at the start of an interval.
struct UserFeatures {
  int user_id = 0;
  std::int64_t queue_length = 0;
  double energy = 0;
  double mean_wait = 0;  // intervals
  double uplink_snr_db = 0;
};

// Per-interval accounting, exposed so tests can audit budgets and energy
// deltas against the model formulas.
struct UserStepStats {
  double standby = 0;
  double local_energy = 0;
  double offload_energy = 0;
  std::int64_t local_bits = 0;
  std::int64_t offload_bits = 0;
  std::int64_t local_budget_bits = 0;
  std::int64_t offload_budget_bits = 0;
};

struct ServerStepStats {
  std::int64_t processed_bits = 0;
  std::int64_t budget_bits = 0;
};

struct StepOutcome {
  std::vector<double> rewards;  // one per server
  std::vector<std::vector<UserFeatures>> next_observations;  // one per server
  bool terminal = false;
  std::vector<UserStepStats> user_stats;
  std::vector<ServerStepStats> server_stats;
};

struct Metrics {
  std::int64_t lifetime = 0;  // LT, intervals
  std::optional<double> mean_tct;  // undefined when no task completed before LT
  std::int64_t num_completed = 0;
  bool censored = false;
};

inline std::uint64_t sample_arrivals(double rate, Rng& rng) {
  return rng.poisson(rate);
}

namespace detail {

inline double distance(double ax, double ay, double bx, double by) {
  return std::hypot(ax - bx, ay - by);
}

inline void regenerate_fading(EnvState& env) {
  env.fading_gains.assign(env.users.size(), 1.0);
  if (env.config.fading_enabled) {
    for (auto& g : env.fading_gains) g = env.fading_rng.exponential();
  }
}

// Fading-free link gain between a user and its associated server.
inline double long_term_gain(const EnvState& env, const UserState& u) {
  const auto& s = env.servers[static_cast<std::size_t>(u.server)];
  return path_gain(distance(u.x, u.y, s.x, s.y), env.config);
}

}  // namespace detail

// Places users and servers uniformly in the arena, associates each user with
// the server of strongest long-term gain (nearest; ties to lowest server id),
// and draws initial energies. Placement is redrawn until every server has a
// nonempty pool, up to 100 attempts.
inline EnvState init_episode(const SimConfig& config, std::uint64_t seed) {
  config.validate();

  EnvState env;
  env.config = config;
  env.arrivals_rng = Rng(seed, StreamId::arrivals);
  env.fading_rng = Rng(seed, StreamId::fading);

  Rng topo(seed, StreamId::topology);
  const int n = config.num_servers;
  const int k = config.num_users;

  bool placed = false;
  for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
    env.servers.assign(static_cast<std::size_t>(n), {});
    env.users.assign(static_cast<std::size_t>(k), {});
    for (int i = 0; i < n; ++i) {
      auto& s = env.servers[static_cast<std::size_t>(i)];
      s.id = i;
      s.x = topo.uniform(0, config.area_side);
      s.y = topo.uniform(0, config.area_side);
      s.bandwidth_hz = config.server_bandwidth_hz();
    }
    for (int j = 0; j < k; ++j) {
      auto& u = env.users[static_cast<std::size_t>(j)];
      u.id = j;
      u.x = topo.uniform(0, config.area_side);
      u.y = topo.uniform(0, config.area_side);
      double best_gain = -1.0;
      for (int i = 0; i < n; ++i) {
        const auto& s = env.servers[static_cast<std::size_t>(i)];
        const double g = path_gain(detail::distance(u.x, u.y, s.x, s.y), config);
        if (g > best_gain) {  // strict: ties keep the lowest server id
          best_gain = g;
          u.server = i;
        }
      }
      env.servers[static_cast<std::size_t>(u.server)].pool.push_back(j);
    }
    placed = true;
    for (const auto& s : env.servers) {
      if (s.pool.empty()) placed = false;
    }
  }
  if (!placed) {
    throw std::runtime_error(
        "init_episode: no placement with all server pools nonempty after 100 "
        "attempts; adjust num_users/num_servers");
  }

  for (auto& u : env.users) {
    u.energy = config.emax_low +
               topo.uniform_open() * (config.emax_high - config.emax_low);
  }

  env.t = 1;
  detail::regenerate_fading(env);
  return env;
}

// Raw observation for one server: one record per pool user, ascending id.
// SNR is evaluated at the absolute maximum transmit power over the server's
// static bandwidth share, including the current interval's fading.
inline std::vector<UserFeatures> observe(const EnvState& env, int server_id) {
  const auto& server = env.servers.at(static_cast<std::size_t>(server_id));
  std::vector<UserFeatures> out;
  out.reserve(server.pool.size());
  for (int uid : server.pool) {
    const auto& u = env.users[static_cast<std::size_t>(uid)];
    UserFeatures f;
    f.user_id = uid;
    f.queue_length = static_cast<std::int64_t>(u.queue.size());
    f.energy = u.energy;
    if (!u.queue.empty()) {
      double total = 0;
      for (const auto& task : u.queue) {
        total += static_cast<double>(env.t - task.arrival_interval);
      }
      f.mean_wait = total / static_cast<double>(u.queue.size());
    }
    const double gain = detail::long_term_gain(env, u) *
                        env.fading_gains[static_cast<std::size_t>(uid)];
    const double snr =
        uplink_snr(gain, env.config.max_tx_power_watts,
                   env.config.noise_psd_watts_hz(), server.bandwidth_hz);
    f.uplink_snr_db = 10.0 * std::log10(snr);
    out.push_back(f);
  }
  return out;
}

// Advances the environment by one interval. `actions[i]` is the user id
// selected by server i for offloading; it must belong to server i's pool.
inline StepOutcome step(EnvState& env, const std::vector<int>& actions) {
  if (env.crashed) throw std::logic_error("step: environment already crashed");
  const auto& cfg = env.config;
  const int n = cfg.num_servers;
  if (static_cast<int>(actions.size()) != n) {
    throw std::invalid_argument("step: one action per server required");
  }
  for (int i = 0; i < n; ++i) {
    const auto& pool = env.servers[static_cast<std::size_t>(i)].pool;
    if (std::find(pool.begin(), pool.end(), actions[i]) == pool.end()) {
      throw std::invalid_argument("step: selected user not in server pool");
    }
  }

  StepOutcome out;
  out.rewards.assign(static_cast<std::size_t>(n), 0.0);
  out.user_stats.assign(env.users.size(), {});
  out.server_stats.assign(env.servers.size(), {});
  const double tau = cfg.interval_duration;

  // (1) Task arrivals, every user, ascending id.
  for (auto& u : env.users) {
    const std::uint64_t count = sample_arrivals(cfg.arrival_rate, env.arrivals_rng);
    for (std::uint64_t c = 0; c < count; ++c) {
      Task task;
      task.id = env.next_task_id++;
      task.owner = u.id;
      task.size_bits = cfg.task_size_bits;
      task.arrival_interval = env.t;
      task.remaining_server_bits = task.size_bits;
      u.queue.push_back(task);
    }
    u.tasks_arrived += static_cast<std::int64_t>(count);
  }

  std::vector<bool> selected(env.users.size(), false);

  // (2) Selected users offload whole head-of-queue tasks within the uplink
  // bit budget, paying transmit power for the actual airtime used.
  for (int i = 0; i < n; ++i) {
    auto& server = env.servers[static_cast<std::size_t>(i)];
    auto& u = env.users[static_cast<std::size_t>(actions[i])];
    selected[static_cast<std::size_t>(u.id)] = true;
    auto& stats = out.user_stats[static_cast<std::size_t>(u.id)];

    const double gain = detail::long_term_gain(env, u) *
                        env.fading_gains[static_cast<std::size_t>(u.id)];
    const double p = std::min(max_feasible_power(u.energy, tau),
                              cfg.max_tx_power_watts);
    const double rate = uplink_rate(server.bandwidth_hz, gain, p,
                                    cfg.noise_psd_watts_hz());
    const std::int64_t budget =
        rate > 0 ? static_cast<std::int64_t>(std::floor(tau * rate)) : 0;
    stats.offload_budget_bits = budget;

    std::int64_t bits = 0;
    while (!u.queue.empty() && bits + u.queue.front().size_bits <= budget) {
      bits += u.queue.front().size_bits;
      u.queue.front().offloaded = true;
      server.queue.push_back(u.queue.front());
      u.queue.pop_front();
    }
    double e_offload = 0;
    if (bits > 0 && rate > 0) {
      e_offload = p * static_cast<double>(bits) / rate;
      u.energy -= e_offload;
      // Reward: bits per joule, scaled to keep Q-targets O(1).
      out.rewards[static_cast<std::size_t>(i)] =
          static_cast<double>(bits) / e_offload * 1e-9;
    }
    stats.offload_bits = bits;
    stats.offload_energy = e_offload;
  }

  // (3) Non-selected users compute whole head-of-queue tasks locally within
  // the CPU bit budget; a head task larger than the budget means idling.
  for (auto& u : env.users) {
    if (selected[static_cast<std::size_t>(u.id)] || u.queue.empty()) continue;
    auto& stats = out.user_stats[static_cast<std::size_t>(u.id)];

    const double p_max = max_feasible_power(u.energy, tau);
    const double f = feasible_cpu_hz(p_max, cfg.user_cpu_hz, cfg.kappa);
    const std::int64_t budget =
        local_compute_budget(p_max, cfg.user_cpu_hz, cfg.kappa, tau,
                             cfg.user_cycles_per_bit);
    stats.local_budget_bits = budget;

    std::int64_t bits = 0;
    while (!u.queue.empty() && bits + u.queue.front().size_bits <= budget) {
      Task task = u.queue.front();
      u.queue.pop_front();
      bits += task.size_bits;
      task.completion_interval = env.t;
      task.remaining_server_bits = 0;
      env.completed_tasks.push_back(task);
    }
    if (bits > 0) {
      const double e_local =
          local_compute_energy(cfg.kappa, f, cfg.user_cycles_per_bit, bits);
      u.energy -= e_local;
      stats.local_energy = e_local;
    }
    stats.local_bits = bits;
  }

  // (4) Standby drain, every user.
  for (auto& u : env.users) {
    u.energy -= cfg.standby_energy;
    out.user_stats[static_cast<std::size_t>(u.id)].standby = cfg.standby_energy;
  }

  // (5) Server-side FIFO processing with partial progress carry-over.
  for (auto& server : env.servers) {
    std::int64_t budget = static_cast<std::int64_t>(
        std::floor(tau * cfg.server_cpu_hz / cfg.server_cycles_per_bit));
    auto& stats = out.server_stats[static_cast<std::size_t>(server.id)];
    stats.budget_bits = budget;
    while (budget > 0 && !server.queue.empty()) {
      Task& head = server.queue.front();
      const std::int64_t chunk = std::min(budget, head.remaining_server_bits);
      head.remaining_server_bits -= chunk;
      budget -= chunk;
      stats.processed_bits += chunk;
      if (head.remaining_server_bits == 0) {
        head.completion_interval = env.t;
        env.completed_tasks.push_back(head);
        server.queue.pop_front();
      }
    }
  }

  // (7) Clock, termination, fresh fading for the next interval.
  env.t += 1;
  for (auto& u : env.users) {
    if (u.energy <= 0.0) {
      env.crashed = true;
      env.energy_depleted = true;
      u.alive = false;
    }
  }
  if (!env.crashed && env.t > cfg.max_intervals) env.crashed = true;
  detail::regenerate_fading(env);

  out.terminal = env.crashed;
  out.next_observations.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.next_observations.push_back(observe(env, i));
  return out;
}

// Lifetime and mean task completion time. Only tasks finished strictly
// before LT count toward the mean.
inline Metrics finalize_metrics(const EnvState& env) {
  if (!env.crashed) {
    throw std::logic_error("finalize_metrics: episode still running");
  }
  Metrics m;
  m.lifetime = env.t - 1;
  m.censored = !env.energy_depleted;
  double total = 0;
  for (const auto& task : env.completed_tasks) {
    if (task.completion_interval && *task.completion_interval < m.lifetime) {
      total += static_cast<double>(*task.completion_interval -
                                   task.arrival_interval);
      ++m.num_completed;
    }
  }
  if (m.num_completed > 0) {
    m.mean_tct = total / static_cast<double>(m.num_completed);
  }
  return m;
}

// Structural audit used by tests: task conservation per user and globally,
// pool partition, queue ordering, progress bounds.
inline void validate_state(const EnvState& env) {
  std::vector<std::int64_t> in_server(env.users.size(), 0);
  std::vector<std::int64_t> completed(env.users.size(), 0);
  for (const auto& s : env.servers) {
    for (const auto& task : s.queue) {
      in_server[static_cast<std::size_t>(task.owner)]++;
      if (task.remaining_server_bits < 0 ||
          task.remaining_server_bits > task.size_bits) {
        throw std::logic_error("validate_state: server progress out of range");
      }
    }
  }
  for (const auto& task : env.completed_tasks) {
    completed[static_cast<std::size_t>(task.owner)]++;
    if (!task.completion_interval ||
        *task.completion_interval < task.arrival_interval) {
      throw std::logic_error("validate_state: completion before arrival");
    }
  }
  std::vector<bool> pooled(env.users.size(), false);
  for (const auto& s : env.servers) {
    for (int uid : s.pool) {
      if (pooled[static_cast<std::size_t>(uid)]) {
        throw std::logic_error("validate_state: pools not disjoint");
      }
      pooled[static_cast<std::size_t>(uid)] = true;
    }
  }
  for (bool p : pooled) {
    if (!p) throw std::logic_error("validate_state: user in no pool");
  }
  for (const auto& u : env.users) {
    const auto in_queue = static_cast<std::int64_t>(u.queue.size());
    if (u.tasks_arrived !=
        in_queue + in_server[static_cast<std::size_t>(u.id)] +
            completed[static_cast<std::size_t>(u.id)]) {
      throw std::logic_error("validate_state: task conservation violated");
    }
    for (std::size_t q = 1; q < u.queue.size(); ++q) {
      if (u.queue[q].arrival_interval < u.queue[q - 1].arrival_interval) {
        throw std::logic_error("validate_state: user queue not FIFO");
      }
    }
  }
}

// Versioned trace-dump record of the full simulator state.
inline nlohmann::json env_to_json(const EnvState& env) {
  nlohmann::json j;
  j["format"] = "mecsim-envstate";
  j["version"] = 1;
  j["t"] = env.t;
  j["crashed"] = env.crashed;
  j["energy_depleted"] = env.energy_depleted;
  j["fading_gains"] = env.fading_gains;
  auto task_json = [](const Task& task) {
    nlohmann::json tj{{"id", task.id},
                      {"owner", task.owner},
                      {"size_bits", task.size_bits},
                      {"arrival_interval", task.arrival_interval},
                      {"remaining_server_bits", task.remaining_server_bits}};
    if (task.completion_interval) {
      tj["completion_interval"] = *task.completion_interval;
    }
    return tj;
  };
  for (const auto& u : env.users) {
    nlohmann::json uj{{"id", u.id},          {"x", u.x},
                      {"y", u.y},            {"energy", u.energy},
                      {"server", u.server},  {"alive", u.alive},
                      {"tasks_arrived", u.tasks_arrived}};
    for (const auto& task : u.queue) uj["queue"].push_back(task_json(task));
    j["users"].push_back(uj);
  }
  for (const auto& s : env.servers) {
    nlohmann::json sj{{"id", s.id},
                      {"x", s.x},
                      {"y", s.y},
                      {"pool", s.pool},
                      {"bandwidth_hz", s.bandwidth_hz}};
    for (const auto& task : s.queue) sj["queue"].push_back(task_json(task));
    j["servers"].push_back(sj);
  }
  j["completed"] = env.completed_tasks.size();
  return j;
}

}  // namespace mecsim
