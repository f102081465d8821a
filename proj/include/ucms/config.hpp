#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>

namespace ucms {

struct Range {
    double lo = 0.0;
    double hi = 0.0;

    double width() const { return hi - lo; }
    bool contains(double v) const { return v >= lo && v <= hi; }
};

// Environment parameters in canonical units: bits, seconds, joules, hertz.
// Transmit power stays in dBm and channel gain in dB; conversion to watts and
// linear gain happens inside the physics functions.
struct EnvConfig {
    int num_users = 48;
    int num_servers = 3;
    int slots = 10;

    Range deadline_s{0.1, 1.0};
    Range task_size_bits{1.0 * 8e6, 50.0 * 8e6};
    Range cycles_per_bit{300.0, 700.0};
    Range local_freq_hz{0.4e9, 1.5e9};
    Range tx_power_dbm{1.0, 24.0};
    Range battery_j{0.5e6, 3.2e6};
    Range gain_db{5.0, 14.0};

    int z_max = 16;
    int cpus_per_server = 8;
    double storage_bits = 400.0 * 8e6;
    double server_freq_hz = 4e9;
    double kappa = 5e-27;
    double bandwidth_hz = 40e6;
    int subchannels = 10;
    double harvested_j = 1e-3;

    double rho1 = 0.5;
    double rho2 = 0.5;

    std::uint64_t seed = 1;

    // Throws ValidationError on degenerate or non-positive parameters.
    void validate() const;

    double max_deadline_s() const { return deadline_s.hi; }
};

// Human-unit keys ("task_size_mb", "local_freq_ghz", "battery_mj", ...)
// are converted to canonical units. Canonical keys ("task_size_bits",
// "local_freq_hz", "battery_j", ...) are accepted verbatim so a manifest can
// reproduce a configuration exactly. Keys absent from `doc` keep the value in
// `base`; unknown keys are rejected.
EnvConfig env_config_from_json(const nlohmann::json& doc, EnvConfig base = {});

// Canonical-unit dump, suitable for manifests.
nlohmann::json to_json(const EnvConfig& cfg);

// Applies one "key=value" override, where value is a number or "lo,hi".
void apply_override(EnvConfig& cfg, const std::string& key, const std::string& value);

} // namespace ucms
