#include "ucms/config.hpp"

#include "ucms/errors.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <sstream>

namespace ucms {

namespace {

constexpr double kBitsPerMegabyte = 8e6;
constexpr double kHzPerGhz = 1e9;
constexpr double kHzPerMhz = 1e6;
constexpr double kJoulesPerMegajoule = 1e6;

Range read_range(const nlohmann::json& v, const std::string& key, double scale) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
        throw ValidationError("config key '" + key + "' must be a [lo, hi] pair");
    }
    return Range{v[0].get<double>() * scale, v[1].get<double>() * scale};
}

double read_number(const nlohmann::json& v, const std::string& key) {
    if (!v.is_number()) {
        throw ValidationError("config key '" + key + "' must be a number");
    }
    return v.get<double>();
}

int read_int(const nlohmann::json& v, const std::string& key) {
    if (!v.is_number_integer()) {
        throw ValidationError("config key '" + key + "' must be an integer");
    }
    return v.get<int>();
}

using Setter = std::function<void(EnvConfig&, const nlohmann::json&, const std::string&)>;

Setter range_setter(Range EnvConfig::*field, double scale) {
    return [field, scale](EnvConfig& c, const nlohmann::json& v, const std::string& k) {
        c.*field = read_range(v, k, scale);
    };
}

Setter number_setter(double EnvConfig::*field, double scale) {
    return [field, scale](EnvConfig& c, const nlohmann::json& v, const std::string& k) {
        c.*field = read_number(v, k) * scale;
    };
}

Setter int_setter(int EnvConfig::*field) {
    return [field](EnvConfig& c, const nlohmann::json& v, const std::string& k) {
        c.*field = read_int(v, k);
    };
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"num_users", int_setter(&EnvConfig::num_users)},
        {"num_servers", int_setter(&EnvConfig::num_servers)},
        {"slots", int_setter(&EnvConfig::slots)},
        {"z_max", int_setter(&EnvConfig::z_max)},
        {"cpus_per_server", int_setter(&EnvConfig::cpus_per_server)},
        {"subchannels", int_setter(&EnvConfig::subchannels)},

        {"deadline_s", range_setter(&EnvConfig::deadline_s, 1.0)},
        {"task_size_mb", range_setter(&EnvConfig::task_size_bits, kBitsPerMegabyte)},
        {"task_size_bits", range_setter(&EnvConfig::task_size_bits, 1.0)},
        {"cycles_per_bit", range_setter(&EnvConfig::cycles_per_bit, 1.0)},
        {"local_freq_ghz", range_setter(&EnvConfig::local_freq_hz, kHzPerGhz)},
        {"local_freq_hz", range_setter(&EnvConfig::local_freq_hz, 1.0)},
        {"tx_power_dbm", range_setter(&EnvConfig::tx_power_dbm, 1.0)},
        {"battery_mj", range_setter(&EnvConfig::battery_j, kJoulesPerMegajoule)},
        {"battery_j", range_setter(&EnvConfig::battery_j, 1.0)},
        {"gain_db", range_setter(&EnvConfig::gain_db, 1.0)},

        {"server_storage_mb", number_setter(&EnvConfig::storage_bits, kBitsPerMegabyte)},
        {"server_storage_bits", number_setter(&EnvConfig::storage_bits, 1.0)},
        {"server_freq_ghz", number_setter(&EnvConfig::server_freq_hz, kHzPerGhz)},
        {"server_freq_hz", number_setter(&EnvConfig::server_freq_hz, 1.0)},
        {"kappa", number_setter(&EnvConfig::kappa, 1.0)},
        {"bandwidth_mhz", number_setter(&EnvConfig::bandwidth_hz, kHzPerMhz)},
        {"bandwidth_hz", number_setter(&EnvConfig::bandwidth_hz, 1.0)},
        {"harvested_j", number_setter(&EnvConfig::harvested_j, 1.0)},
        {"rho1", number_setter(&EnvConfig::rho1, 1.0)},
        {"rho2", number_setter(&EnvConfig::rho2, 1.0)},

        {"seed",
         [](EnvConfig& c, const nlohmann::json& v, const std::string& k) {
             if (!v.is_number_unsigned() && !v.is_number_integer()) {
                 throw ValidationError("config key '" + k + "' must be an integer");
             }
             c.seed = v.get<std::uint64_t>();
         }},
    };
    return table;
}

void require_range(const Range& r, const char* name, bool strictly_positive) {
    if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi) {
        throw ValidationError(std::string("degenerate range for ") + name);
    }
    if (strictly_positive && r.lo <= 0.0) {
        throw ValidationError(std::string(name) + " must be positive");
    }
}

} // namespace

void EnvConfig::validate() const {
    if (num_users <= 0 || num_servers <= 0 || subchannels <= 0 || cpus_per_server <= 0 ||
        z_max <= 0 || slots <= 0) {
        throw ValidationError("N, M, K, U_m, z_max and T must be positive");
    }
    require_range(deadline_s, "deadline_s", true);
    require_range(task_size_bits, "task_size", true);
    require_range(cycles_per_bit, "cycles_per_bit", true);
    require_range(local_freq_hz, "local_freq", true);
    require_range(tx_power_dbm, "tx_power_dbm", false);
    require_range(battery_j, "battery", false);
    require_range(gain_db, "gain_db", false);
    if (battery_j.lo < 0.0) {
        throw ValidationError("battery thresholds must be non-negative");
    }
    if (storage_bits < 0.0 || server_freq_hz <= 0.0 || kappa < 0.0 || bandwidth_hz <= 0.0 ||
        harvested_j < 0.0) {
        throw ValidationError("server storage/frequency, kappa, bandwidth or harvest out of range");
    }
    if (rho1 < 0.0 || rho2 < 0.0) {
        throw ValidationError("cost weights must be non-negative");
    }
}

EnvConfig env_config_from_json(const nlohmann::json& doc, EnvConfig base) {
    if (!doc.is_object()) {
        throw ValidationError("environment config must be a JSON object");
    }
    const auto& table = setters();
    for (const auto& [key, value] : doc.items()) {
        auto it = table.find(key);
        if (it == table.end()) {
            throw ValidationError("unknown config key '" + key + "'");
        }
        it->second(base, value, key);
    }
    base.validate();
    return base;
}

nlohmann::json to_json(const EnvConfig& c) {
    auto range = [](const Range& r) { return nlohmann::json::array({r.lo, r.hi}); };
    return {
        {"num_users", c.num_users},
        {"num_servers", c.num_servers},
        {"slots", c.slots},
        {"deadline_s", range(c.deadline_s)},
        {"task_size_bits", range(c.task_size_bits)},
        {"cycles_per_bit", range(c.cycles_per_bit)},
        {"local_freq_hz", range(c.local_freq_hz)},
        {"tx_power_dbm", range(c.tx_power_dbm)},
        {"battery_j", range(c.battery_j)},
        {"gain_db", range(c.gain_db)},
        {"z_max", c.z_max},
        {"cpus_per_server", c.cpus_per_server},
        {"server_storage_bits", c.storage_bits},
        {"server_freq_hz", c.server_freq_hz},
        {"kappa", c.kappa},
        {"bandwidth_hz", c.bandwidth_hz},
        {"subchannels", c.subchannels},
        {"harvested_j", c.harvested_j},
        {"rho1", c.rho1},
        {"rho2", c.rho2},
        {"seed", c.seed},
    };
}

void apply_override(EnvConfig& cfg, const std::string& key, const std::string& value) {
    nlohmann::json v;
    try {
        if (value.find(',') != std::string::npos) {
            v = nlohmann::json::parse("[" + value + "]");
        } else {
            v = nlohmann::json::parse(value);
        }
    } catch (const nlohmann::json::parse_error&) {
        throw ValidationError("cannot parse override value for '" + key + "': " + value);
    }
    cfg = env_config_from_json(nlohmann::json{{key, v}}, cfg);
}

} // namespace ucms
