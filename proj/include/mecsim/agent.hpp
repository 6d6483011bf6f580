#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "mecsim/mlp.hpp"
#include "mecsim/rng.hpp"
#include "mecsim/sim.hpp"

namespace mecsim {

inline constexpr int kFeaturesPerSlot = 4;

// Normalized per-slot features flattened over a fixed number of pool slots.
// Slots beyond the actual pool are zero-filled with mask false.
struct Observation {
  std::vector<double> features;  // 4 per slot: queue, energy, wait, snr
  std::vector<bool> valid_mask;  // one per slot
};

// Maps raw per-user features into [0, 1] slot features. Normalization
// constants cover the typical operating ranges: 100 queued tasks, 1 J,
// 100 intervals of waiting, 100 dB of SNR.
inline Observation make_observation(const std::vector<UserFeatures>& raw,
                                    int max_slots) {
  if (static_cast<int>(raw.size()) > max_slots) {
    throw std::invalid_argument("make_observation: pool exceeds slot count");
  }
  auto clip01 = [](double x) { return std::clamp(x, 0.0, 1.0); };
  Observation obs;
  obs.features.assign(static_cast<std::size_t>(max_slots) * kFeaturesPerSlot, 0.0);
  obs.valid_mask.assign(static_cast<std::size_t>(max_slots), false);
  for (std::size_t s = 0; s < raw.size(); ++s) {
    double* f = obs.features.data() + s * kFeaturesPerSlot;
    f[0] = clip01(static_cast<double>(raw[s].queue_length) / 100.0);
    f[1] = clip01(1.0 + std::log10(std::max(raw[s].energy, 1e-8)) / 8.0);
    f[2] = clip01(raw[s].mean_wait / 100.0);
    f[3] = clip01(raw[s].uplink_snr_db / 100.0);
    obs.valid_mask[s] = true;
  }
  return obs;
}

struct Experience {
  Observation observation;
  int action = 0;  // slot index, valid under observation.valid_mask
  double reward = 0;
  Observation next_observation;
  bool terminal = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100000) : capacity_(capacity) {}

  void push(Experience e) {
    if (storage_.size() < capacity_) {
      storage_.push_back(std::move(e));
    } else {
      storage_[insertions_ % capacity_] = std::move(e);
    }
    ++insertions_;
  }

  std::size_t size() const { return storage_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t insertions() const { return insertions_; }
  const Experience& at(std::size_t i) const { return storage_[i]; }

  const Experience& sample(Rng& rng) const {
    return storage_[rng.uniform_int(storage_.size())];
  }

 private:
  std::size_t capacity_;
  std::vector<Experience> storage_;
  std::uint64_t insertions_ = 0;
};

// Fully random for a pretraining phase, then linear decay to the floor over
// a fixed number of post-pretraining environment steps.
struct EpsilonSchedule {
  std::int64_t pretrain_episodes = 100;
  std::int64_t decay_steps = 10000;
  double start = 1.0;
  double end = 0.01;
};

inline double epsilon_value(const EpsilonSchedule& s, std::int64_t episode,
                            std::int64_t post_pretrain_step) {
  if (episode < s.pretrain_episodes) return s.start;
  if (post_pretrain_step >= s.decay_steps) return s.end;
  const double frac =
      static_cast<double>(post_pretrain_step) / static_cast<double>(s.decay_steps);
  return s.start - (s.start - s.end) * frac;
}

inline int random_select(const std::vector<bool>& mask, Rng& rng) {
  std::vector<int> valid;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) valid.push_back(static_cast<int>(i));
  }
  if (valid.empty()) throw std::invalid_argument("random_select: empty mask");
  return valid[rng.uniform_int(valid.size())];
}

// Largest mean queue waiting time wins; ties to the lowest slot.
inline int time_greedy_select(const std::vector<UserFeatures>& raw) {
  if (raw.empty()) throw std::invalid_argument("time_greedy_select: empty pool");
  int best = 0;
  for (std::size_t i = 1; i < raw.size(); ++i) {
    if (raw[i].mean_wait > raw[best].mean_wait) best = static_cast<int>(i);
  }
  return best;
}

// Lowest energy level wins; ties to the lowest slot.
inline int energy_greedy_select(const std::vector<UserFeatures>& raw) {
  if (raw.empty()) throw std::invalid_argument("energy_greedy_select: empty pool");
  int best = 0;
  for (std::size_t i = 1; i < raw.size(); ++i) {
    if (raw[i].energy < raw[best].energy) best = static_cast<int>(i);
  }
  return best;
}

struct DqnAgentConfig {
  int num_slots = 0;
  int hidden_size = 200;
  double gamma = 0.9;
  int batch_size = 64;
  std::size_t buffer_capacity = 100000;
  bool use_target_network = false;
  int target_sync_every = 100;  // updates, when the target network is on
  double td_error_clip = 0.0;   // > 0 clips the TD error per sample
  bool log1p_rewards = false;   // compress rewards inside Q-targets
  bool double_dqn = false;      // online argmax, target-net evaluation
  bool permute_slots = false;   // augment minibatches with slot permutations
};

// One independent learner per server: a Q-network over fixed observation
// slots, a replay buffer, and an owned exploration substream.
class DqnAgent {
 public:
  DqnAgent(const DqnAgentConfig& cfg, std::uint64_t seed)
      : cfg_(cfg),
        net_(mlp_init({cfg.num_slots * kFeaturesPerSlot, cfg.hidden_size,
                       cfg.hidden_size, cfg.num_slots},
                      seed)),
        opt_(optimizer_init(net_)),
        buffer_(cfg.buffer_capacity),
        rng_(seed, StreamId::exploration) {
    if (cfg.num_slots < 1) throw std::invalid_argument("DqnAgent: num_slots");
    if (cfg_.use_target_network) target_ = net_;
  }

  const DqnAgentConfig& config() const { return cfg_; }
  const Mlp& network() const { return net_; }
  Mlp& network() { return net_; }
  const OptimizerState& optimizer() const { return opt_; }
  ReplayBuffer& buffer() { return buffer_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  Rng& rng() { return rng_; }

  std::vector<double> q_values(const Observation& obs) const {
    return mlp_forward(net_, {obs.features})[0];
  }

  // Epsilon-greedy over valid slots; greedy ties break to the lowest slot.
  int select_action(const Observation& obs, double epsilon) {
    bool any_valid = false;
    for (bool v : obs.valid_mask) any_valid = any_valid || v;
    if (!any_valid) throw std::invalid_argument("select_action: empty mask");
    if (rng_.uniform() < epsilon) return random_select(obs.valid_mask, rng_);
    return greedy_action(q_values(obs), obs.valid_mask);
  }

  static int greedy_action(const std::vector<double>& q,
                           const std::vector<bool>& mask) {
    int best = -1;
    for (std::size_t i = 0; i < q.size(); ++i) {
      if (!mask[i]) continue;
      if (best < 0 || q[i] > q[static_cast<std::size_t>(best)]) {
        best = static_cast<int>(i);
      }
    }
    if (best < 0) throw std::invalid_argument("greedy_action: empty mask");
    return best;
  }

  void remember(Experience e) { buffer_.push(std::move(e)); }

  // One minibatch update; returns the batch MSE, or nullopt while the buffer
  // holds fewer than batch_size experiences.
  std::optional<double> update(double learning_rate) {
    if (buffer_.size() < static_cast<std::size_t>(cfg_.batch_size)) {
      return std::nullopt;
    }
    std::vector<std::vector<double>> inputs;
    std::vector<int> actions;
    std::vector<double> targets;
    inputs.reserve(static_cast<std::size_t>(cfg_.batch_size));
    const Mlp& bootstrap_net = cfg_.use_target_network ? target_ : net_;
    for (int b = 0; b < cfg_.batch_size; ++b) {
      Experience e = buffer_.sample(rng_);
      if (cfg_.permute_slots) permute_experience(e, rng_);
      inputs.push_back(e.observation.features);
      actions.push_back(e.action);
      if (cfg_.double_dqn && cfg_.use_target_network) {
        targets.push_back(double_dqn_target(e, net_, target_, cfg_.gamma,
                                            cfg_.log1p_rewards));
      } else {
        targets.push_back(
            bellman_target(e, bootstrap_net, cfg_.gamma, cfg_.log1p_rewards));
      }
    }
    const auto q = mlp_forward(net_, inputs);
    double loss = 0;
    for (int b = 0; b < cfg_.batch_size; ++b) {
      const std::size_t bb = static_cast<std::size_t>(b);
      const double qa = q[bb][static_cast<std::size_t>(actions[bb])];
      const double diff = qa - targets[bb];
      loss += diff * diff;
      // Clip the TD error so heavy-tailed targets cannot dominate the batch.
      if (cfg_.td_error_clip > 0) {
        targets[bb] = qa - std::clamp(diff, -cfg_.td_error_clip, cfg_.td_error_clip);
      }
    }
    loss /= static_cast<double>(cfg_.batch_size);
    auto grads = mlp_backward(net_, inputs, actions, targets);
    apply_update(net_, opt_, grads, learning_rate);
    ++updates_done_;
    if (cfg_.use_target_network && updates_done_ % cfg_.target_sync_every == 0) {
      target_ = net_;
    }
    return loss;
  }

  static double bellman_target(const Experience& e, const Mlp& net, double gamma,
                               bool log1p_rewards = false) {
    const double r = log1p_rewards ? std::log1p(std::max(e.reward, 0.0)) : e.reward;
    if (e.terminal) return r;
    const auto q_next = mlp_forward(net, {e.next_observation.features})[0];
    double best = 0;
    bool any = false;
    for (std::size_t i = 0; i < q_next.size(); ++i) {
      if (!e.next_observation.valid_mask[i]) continue;
      if (!any || q_next[i] > best) {
        best = q_next[i];
        any = true;
      }
    }
    return r + (any ? gamma * best : 0.0);
  }

  // Applies one random slot permutation to an experience. Slot ordering is an
  // arbitrary labeling, so Q-values must be equivariant under it; permuting
  // replayed samples exposes the network to every labeling.
  static void permute_experience(Experience& e, Rng& rng) {
    const std::size_t slots = e.observation.valid_mask.size();
    std::vector<std::size_t> perm(slots);
    for (std::size_t i = 0; i < slots; ++i) perm[i] = i;
    for (std::size_t i = slots; i > 1; --i) {
      std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
    }
    auto apply = [&perm, slots](Observation& o) {
      Observation out;
      out.features.assign(slots * kFeaturesPerSlot, 0.0);
      out.valid_mask.assign(slots, false);
      for (std::size_t s = 0; s < slots; ++s) {
        for (int k = 0; k < kFeaturesPerSlot; ++k) {
          out.features[perm[s] * kFeaturesPerSlot + static_cast<std::size_t>(k)] =
              o.features[s * kFeaturesPerSlot + static_cast<std::size_t>(k)];
        }
        out.valid_mask[perm[s]] = o.valid_mask[s];
      }
      o = std::move(out);
    };
    apply(e.observation);
    apply(e.next_observation);
    e.action = static_cast<int>(perm[static_cast<std::size_t>(e.action)]);
  }

  // Decoupled selection/evaluation: the online network picks the next action,
  // the target network scores it.
  static double double_dqn_target(const Experience& e, const Mlp& online,
                                  const Mlp& target, double gamma,
                                  bool log1p_rewards) {
    const double r = log1p_rewards ? std::log1p(std::max(e.reward, 0.0)) : e.reward;
    if (e.terminal) return r;
    const auto q_sel = mlp_forward(online, {e.next_observation.features})[0];
    int best = -1;
    for (std::size_t i = 0; i < q_sel.size(); ++i) {
      if (!e.next_observation.valid_mask[i]) continue;
      if (best < 0 || q_sel[i] > q_sel[static_cast<std::size_t>(best)]) {
        best = static_cast<int>(i);
      }
    }
    if (best < 0) return r;
    const auto q_eval = mlp_forward(target, {e.next_observation.features})[0];
    return r + gamma * q_eval[static_cast<std::size_t>(best)];
  }

  // Neural checkpoint plus schedule counters; the replay buffer is excluded.
  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = "mecsim-agent";
    j["version"] = 1;
    j["network"] = mlp_to_json(net_);
    j["optimizer"] = optimizer_to_json(opt_);
    j["updates_done"] = updates_done_;
    j["num_slots"] = cfg_.num_slots;
    j["gamma"] = cfg_.gamma;
    return j;
  }

  static DqnAgent from_json(const nlohmann::json& j, std::uint64_t seed) {
    if (j.value("format", "") != "mecsim-agent" || j.value("version", 0) != 1) {
      throw std::runtime_error("DqnAgent: unrecognized checkpoint format");
    }
    Mlp net = mlp_from_json(j.at("network"));
    DqnAgentConfig cfg;
    cfg.num_slots = j.at("num_slots").get<int>();
    cfg.hidden_size = net.dims.size() > 2 ? net.dims[1] : 1;
    cfg.gamma = j.at("gamma").get<double>();
    DqnAgent agent(cfg, seed);
    agent.net_ = std::move(net);
    agent.opt_ = optimizer_from_json(j.at("optimizer"));
    agent.updates_done_ = j.at("updates_done").get<std::int64_t>();
    if (agent.cfg_.use_target_network) agent.target_ = agent.net_;
    return agent;
  }

 private:
  DqnAgentConfig cfg_;
  Mlp net_;
  Mlp target_;
  OptimizerState opt_;
  ReplayBuffer buffer_;
  Rng rng_;
  std::int64_t updates_done_ = 0;
};

}  // namespace mecsim
