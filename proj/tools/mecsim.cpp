// mecsim: train, compare, and sweep commands for the edge-offloading
// simulator. All outputs are deterministic functions of (config, seed).

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mecsim/harness.hpp"

namespace fs = std::filesystem;
using namespace mecsim;

namespace {

struct CliConfig {
  SimConfig sim;
  TrainOptions train;
  std::uint64_t seed = 1;
  std::int64_t eval_episodes = 50;
};

struct KeyBinding {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

class ConfigTable {
 public:
  explicit ConfigTable(CliConfig& c) {
    bind_int("num_servers", c.sim.num_servers);
    bind_int("num_users", c.sim.num_users);
    bind_double("area_side", c.sim.area_side);
    bind_double("interval_duration", c.sim.interval_duration);
    bind_double("emax_low", c.sim.emax_low);
    bind_double("emax_high", c.sim.emax_high);
    bind_double("standby_energy", c.sim.standby_energy);
    bind_double("arrival_rate", c.sim.arrival_rate);
    bind_i64("task_size_bits", c.sim.task_size_bits);
    bind_double("user_cpu_hz", c.sim.user_cpu_hz);
    bind_double("server_cpu_hz", c.sim.server_cpu_hz);
    bind_double("user_cycles_per_bit", c.sim.user_cycles_per_bit);
    bind_double("server_cycles_per_bit", c.sim.server_cycles_per_bit);
    bind_double("kappa", c.sim.kappa);
    bind_double("max_tx_power_watts", c.sim.max_tx_power_watts);
    bind_double("total_bandwidth_hz", c.sim.total_bandwidth_hz);
    bind_double("noise_psd_dbm_hz", c.sim.noise_psd_dbm_hz);
    bind_double("pathloss_exponent", c.sim.pathloss_exponent);
    bind_double("ref_gain_db_at_1m", c.sim.ref_gain_db_at_1m);
    bind_bool("fading_enabled", c.sim.fading_enabled);
    bind_i64("max_intervals", c.sim.max_intervals);
    bind_i64("episodes", c.train.episodes);
    bind_double("lr_initial", c.train.lr_initial);
    bind_i64("lr_halve_every", c.train.lr_halve_every);
    bind_int("updates_per_episode", c.train.updates_per_episode);
    bind_i64("pretrain_episodes", c.train.schedule.pretrain_episodes);
    bind_i64("epsilon_decay_steps", c.train.schedule.decay_steps);
    bind_double("epsilon_start", c.train.schedule.start);
    bind_double("epsilon_end", c.train.schedule.end);
    bind_int("hidden_size", c.train.hidden_size);
    bind_double("gamma", c.train.gamma);
    bind_int("batch_size", c.train.batch_size);
    bind_size("buffer_capacity", c.train.buffer_capacity);
    bind_bool("use_target_network", c.train.use_target_network);
    bind_double("td_error_clip", c.train.td_error_clip);
    bind_bool("log1p_rewards", c.train.log1p_rewards);
    bind_bool("double_dqn", c.train.double_dqn);
    bind_bool("permute_slots", c.train.permute_slots);
    bind_int("target_sync_every", c.train.target_sync_every);
    bind_double("lr_floor", c.train.lr_floor);
    bind_u64("seed", c.seed);
    bind_i64("eval_episodes", c.eval_episodes);
  }

  // Returns false (with message) on unknown key or unparsable value.
  bool apply(const std::string& key, const std::string& value, std::string& err) {
    auto it = table_.find(key);
    if (it == table_.end()) {
      err = "unknown configuration key: " + key;
      return false;
    }
    try {
      it->second.set(value);
    } catch (const std::exception&) {
      err = "bad value for key " + key + ": " + value;
      return false;
    }
    return true;
  }

  std::string echo() const {
    std::ostringstream out;
    for (const auto& [key, binding] : table_) {
      out << key << " = " << binding.get() << "\n";
    }
    return out.str();
  }

 private:
  void bind_int(const std::string& k, int& ref) {
    table_[k] = {[&ref](const std::string& v) { ref = std::stoi(v); },
                 [&ref] { return std::to_string(ref); }};
  }
  void bind_i64(const std::string& k, std::int64_t& ref) {
    table_[k] = {[&ref](const std::string& v) { ref = std::stoll(v); },
                 [&ref] { return std::to_string(ref); }};
  }
  void bind_u64(const std::string& k, std::uint64_t& ref) {
    table_[k] = {[&ref](const std::string& v) { ref = std::stoull(v); },
                 [&ref] { return std::to_string(ref); }};
  }
  void bind_size(const std::string& k, std::size_t& ref) {
    table_[k] = {[&ref](const std::string& v) { ref = std::stoull(v); },
                 [&ref] { return std::to_string(ref); }};
  }
  void bind_double(const std::string& k, double& ref) {
    table_[k] = {[&ref](const std::string& v) { ref = std::stod(v); },
                 [&ref] { return format_double(ref); }};
  }
  void bind_bool(const std::string& k, bool& ref) {
    table_[k] = {[&ref](const std::string& v) {
                   if (v == "true" || v == "1" || v == "on") ref = true;
                   else if (v == "false" || v == "0" || v == "off") ref = false;
                   else throw std::invalid_argument(v);
                 },
                 [&ref] { return std::string(ref ? "true" : "false"); }};
  }

  std::map<std::string, KeyBinding> table_;
};

// Flat `key = value` file, '#' starts a comment. Unknown keys are fatal.
bool load_config_file(const std::string& path, ConfigTable& table,
                      std::string& err) {
  std::ifstream f(path);
  if (!f) {
    err = "cannot read config file: " + path;
    return false;
  }
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string trimmed = trim(line);
    if (trimmed.empty()) continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string::npos) {
      err = path + ":" + std::to_string(lineno) + ": expected key = value";
      return false;
    }
    if (!table.apply(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)), err)) {
      err = path + ":" + std::to_string(lineno) + ": " + err;
      return false;
    }
  }
  return true;
}

std::string default_out_dir(const std::string& command, std::uint64_t seed) {
  const char* root = std::getenv("MECSIM_RUN_ROOT");
  return std::string(root ? root : "run") + "/" + command + "-seed" +
         std::to_string(seed);
}

void prepare_out_dir(const fs::path& dir, const ConfigTable& table) {
  fs::create_directories(dir);
  std::ofstream echo(dir / "config.echo", std::ios::binary);
  echo << table.echo();
}

void save_checkpoints(const std::vector<DqnAgent>& agents, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < agents.size(); ++i) {
    std::ofstream f(dir / ("agent_" + std::to_string(i) + ".json"),
                    std::ios::binary);
    f << agents[i].to_json().dump(2) << "\n";
  }
}

bool load_checkpoints(const fs::path& dir, int num_servers, std::uint64_t seed,
                      std::vector<DqnAgent>& agents, std::string& err) {
  for (int i = 0; i < num_servers; ++i) {
    const fs::path path = dir / ("agent_" + std::to_string(i) + ".json");
    std::ifstream f(path);
    if (!f) {
      err = "missing checkpoint: " + path.string();
      return false;
    }
    try {
      nlohmann::json j = nlohmann::json::parse(f);
      agents.push_back(DqnAgent::from_json(
          j, derive_seed(seed, 0xC4EC000000ULL + static_cast<std::uint64_t>(i))));
    } catch (const std::exception& e) {
      err = "corrupt checkpoint " + path.string() + ": " + e.what();
      return false;
    }
  }
  return true;
}

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Energy-aware multi-server edge offloading simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_dir, fading_flag, servers_list;
  std::vector<std::string> overrides;
  bool no_dqn = false;
  std::uint64_t seed_flag = 0;
  std::int64_t episodes_flag = -1;
  int servers_flag = -1, users_flag = -1;
  bool have_seed = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Key-value configuration file");
    cmd->add_option("--seed", seed_flag, "Master seed")->each([&](const std::string&) {
      have_seed = true;
    });
    cmd->add_option("--episodes", episodes_flag, "Training episode count");
    cmd->add_option("--users", users_flag, "Number of users");
    cmd->add_option("--out", out_dir, "Output directory");
    cmd->add_option("--fading", fading_flag, "Block fading: on|off")
        ->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--set", overrides, "Extra key=value overrides");
  };

  auto* train_cmd = app.add_subcommand("train", "Train DQN agents");
  add_common(train_cmd);
  train_cmd->add_option("--servers", servers_flag, "Number of servers");

  auto* compare_cmd =
      app.add_subcommand("compare", "Evaluate DQN vs greedy/random baselines");
  add_common(compare_cmd);
  compare_cmd->add_option("--servers", servers_flag, "Number of servers");
  compare_cmd->add_option("--checkpoint", checkpoint_dir,
                          "Directory holding agent_<i>.json checkpoints");
  compare_cmd->add_flag("--no-dqn", no_dqn, "Baselines only");

  auto* sweep_cmd =
      app.add_subcommand("sweep", "Train and evaluate across server counts");
  add_common(sweep_cmd);
  sweep_cmd->add_option("--servers", servers_list,
                        "Comma-separated server counts, e.g. 1,2,3");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  CliConfig cfg;
  ConfigTable table(cfg);
  std::string err;
  if (!config_path.empty() && !load_config_file(config_path, table, err)) {
    std::cerr << "error: " << err << "\n";
    return kExitConfig;
  }
  // Flag overrides take precedence over file values.
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos ||
        !table.apply(kv.substr(0, eq), kv.substr(eq + 1), err)) {
      std::cerr << "error: " << (eq == std::string::npos
                                     ? "--set expects key=value: " + kv
                                     : err)
                << "\n";
      return kExitConfig;
    }
  }
  if (have_seed) cfg.seed = seed_flag;
  if (episodes_flag >= 0) cfg.train.episodes = episodes_flag;
  if (servers_flag >= 0) cfg.sim.num_servers = servers_flag;
  if (users_flag >= 0) cfg.sim.num_users = users_flag;
  if (!fading_flag.empty()) cfg.sim.fading_enabled = fading_flag == "on";

  const std::string command = app.get_subcommands().front()->get_name();
  const fs::path out =
      out_dir.empty() ? fs::path(default_out_dir(command, cfg.seed)) : fs::path(out_dir);

  try {
    cfg.sim.validate();
  } catch (const ConfigError& e) {
    std::cerr << "error: invalid configuration: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (train_cmd->parsed()) {
      prepare_out_dir(out, table);
      TrainResult result = train(cfg.sim, cfg.train, cfg.seed);
      write_training_csv(result.summary, cfg.sim.num_servers,
                         (out / "train.csv").string());
      save_checkpoints(result.agents, out / "checkpoints");
      std::cout << "train: " << result.summary.records.size()
                << " episodes -> " << (out / "train.csv").string() << "\n";
    } else if (compare_cmd->parsed()) {
      std::vector<PolicyKind> policies;
      std::vector<DqnAgent> agents;
      if (!no_dqn) {
        const fs::path ckpt = checkpoint_dir.empty()
                                  ? out / "checkpoints"
                                  : fs::path(checkpoint_dir);
        if (!load_checkpoints(ckpt, cfg.sim.num_servers, cfg.seed, agents, err)) {
          std::cerr << "error: " << err << "\n";
          return kExitConfig;
        }
        policies.push_back(PolicyKind::dqn);
      }
      policies.push_back(PolicyKind::time_greedy);
      policies.push_back(PolicyKind::energy_greedy);
      policies.push_back(PolicyKind::random);
      prepare_out_dir(out, table);
      auto records = evaluate(policies, cfg.sim, cfg.eval_episodes, cfg.seed,
                              no_dqn ? nullptr : &agents);
      write_eval_csv(records, (out / "eval.csv").string());
      for (PolicyKind kind : policies) {
        const PolicyStats s = summarize(records, kind);
        std::cout << policy_name(kind) << ": lifetime " << s.mean_lifetime
                  << " +/- " << s.std_lifetime << ", tct " << s.mean_tct
                  << " +/- " << s.std_tct << "\n";
      }
    } else {
      std::vector<int> counts;
      std::stringstream ss(servers_list.empty() ? "1,2,3" : servers_list);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        try {
          counts.push_back(std::stoi(tok));
        } catch (const std::exception&) {
          std::cerr << "error: bad --servers entry: " << tok << "\n";
          return kExitConfig;
        }
      }
      for (int n : counts) {
        if (n < 1 || n > cfg.sim.num_users) {
          std::cerr << "error: server count " << n
                    << " outside [1, num_users=" << cfg.sim.num_users << "]\n";
          return kExitConfig;
        }
      }
      prepare_out_dir(out, table);
      auto records =
          sweep_servers(cfg.sim, counts, cfg.train, cfg.eval_episodes, cfg.seed);
      write_sweep_csv(records, (out / "sweep.csv").string());
      std::cout << "sweep: " << records.size() << " rows -> "
                << (out / "sweep.csv").string() << "\n";
    }
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const ConfigError& e) {
    std::cerr << "error: invalid configuration: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
