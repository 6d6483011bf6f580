#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mecsim {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// All physical, traffic, and episode parameters of one simulated system.
// Defaults reproduce the reference setup: 10m x 10m arena, 100 ms intervals,
// 1 KB tasks arriving at rate 10, 27 dBm max transmit power, 20 MHz FDMA.
struct SimConfig {
  int num_servers = 3;
  int num_users = 5;
  double area_side = 10.0;            // meters
  double interval_duration = 0.1;     // seconds
  double emax_low = 0.01;             // joules, initial energy draw lower bound
  double emax_high = 1.0;             // joules, upper bound
  double standby_energy = 1e-7;       // joules per interval
  double arrival_rate = 10.0;         // tasks per interval per user
  std::int64_t task_size_bits = 8000;
  double user_cpu_hz = 1e9;
  double server_cpu_hz = 3e9;
  double user_cycles_per_bit = 500.0;
  double server_cycles_per_bit = 1000.0;
  double kappa = 1e-27;               // effective switched capacitance
  double max_tx_power_watts = 0.5012; // ~27 dBm
  double total_bandwidth_hz = 20e6;
  double noise_psd_dbm_hz = -174.0;
  double pathloss_exponent = 3.0;
  double ref_gain_db_at_1m = -30.0;
  bool fading_enabled = true;
  std::int64_t max_intervals = 10000;

  double noise_psd_watts_hz() const {
    return std::pow(10.0, noise_psd_dbm_hz / 10.0) * 1e-3;
  }

  double ref_gain_linear() const {
    return std::pow(10.0, ref_gain_db_at_1m / 10.0);
  }

  // Equal static FDMA split of the uplink spectrum across servers.
  double server_bandwidth_hz() const {
    return total_bandwidth_hz / static_cast<double>(num_servers);
  }

  // Largest pool any server can hold when every server keeps at least one user.
  int max_pool_size() const { return num_users - num_servers + 1; }

  void validate() const {
    auto require = [](bool ok, const char* msg) {
      if (!ok) throw ConfigError(msg);
    };
    require(num_servers >= 1, "num_servers must be >= 1");
    require(num_users >= 1, "num_users must be >= 1");
    require(num_servers <= num_users, "num_servers must not exceed num_users");
    require(area_side > 0, "area_side must be positive");
    require(interval_duration > 0, "interval_duration must be positive");
    require(emax_low > 0 && emax_high > 0, "energy bounds must be positive");
    require(emax_low <= emax_high, "emax_low must not exceed emax_high");
    require(standby_energy > 0, "standby_energy must be positive");
    require(emax_low > standby_energy, "emax_low must exceed standby_energy");
    require(arrival_rate >= 0, "arrival_rate must be non-negative");
    require(task_size_bits >= 1, "task_size_bits must be >= 1");
    require(user_cpu_hz > 0, "user_cpu_hz must be positive");
    require(server_cpu_hz > 0, "server_cpu_hz must be positive");
    require(user_cycles_per_bit >= 1, "user_cycles_per_bit must be >= 1");
    require(server_cycles_per_bit >= 1, "server_cycles_per_bit must be >= 1");
    require(kappa > 0, "kappa must be positive");
    require(max_tx_power_watts > 0, "max_tx_power_watts must be positive");
    require(total_bandwidth_hz > 0, "total_bandwidth_hz must be positive");
    require(pathloss_exponent > 0, "pathloss_exponent must be positive");
    require(max_intervals >= 1, "max_intervals must be >= 1");
  }
};

}  // namespace mecsim
