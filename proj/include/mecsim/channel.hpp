#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "mecsim/config.hpp"

namespace mecsim {

// Maximum feasible power a user can spend in one interval given its
// remaining energy: P_max = E / tau, zero once the battery is empty.
inline double max_feasible_power(double energy_joules, double tau_seconds) {
  if (energy_joules <= 0.0) return 0.0;
  return energy_joules / tau_seconds;
}

// CPU frequency reachable under a power budget, capped at the hardware
// maximum: f = min(f_cap, cbrt(p_max / kappa)).
inline double feasible_cpu_hz(double p_max_watts, double f_cap_hz, double kappa) {
  if (p_max_watts <= 0.0) return 0.0;
  return std::min(f_cap_hz, std::cbrt(p_max_watts / kappa));
}

// Bits computable locally in one interval: floor(tau * f / cycles_per_bit).
inline std::int64_t local_compute_budget(double p_max_watts, double f_cap_hz,
                                         double kappa, double tau_seconds,
                                         double cycles_per_bit) {
  const double f = feasible_cpu_hz(p_max_watts, f_cap_hz, kappa);
  return static_cast<std::int64_t>(std::floor(tau_seconds * f / cycles_per_bit));
}

// Energy to compute `bits` at frequency f: kappa * f^2 * cycles_per_bit * bits
// (energy per cycle kappa*f^2 times cycles executed).
inline double local_compute_energy(double kappa, double freq_hz,
                                   double cycles_per_bit, std::int64_t bits) {
  return kappa * freq_hz * freq_hz * cycles_per_bit * static_cast<double>(bits);
}

// Log-distance path gain with a 1 m near-field clamp. Fading-free;
// block-fading multipliers are applied by the caller.
inline double path_gain(double distance_m, const SimConfig& cfg) {
  const double d = std::max(distance_m, 1.0);
  return cfg.ref_gain_linear() * std::pow(d, -cfg.pathloss_exponent);
}

// Uplink SNR (linear) at the given transmit power over the given bandwidth.
inline double uplink_snr(double gain_linear, double tx_power_watts,
                         double noise_psd_watts_hz, double bandwidth_hz) {
  return gain_linear * tx_power_watts / (noise_psd_watts_hz * bandwidth_hz);
}

// Shannon uplink rate in bits/s.
inline double uplink_rate(double bandwidth_hz, double gain_linear,
                          double tx_power_watts, double noise_psd_watts_hz) {
  const double snr = uplink_snr(gain_linear, tx_power_watts, noise_psd_watts_hz,
                                bandwidth_hz);
  if (snr <= 0.0) return 0.0;
  return bandwidth_hz * std::log2(1.0 + snr);
}

}  // namespace mecsim
