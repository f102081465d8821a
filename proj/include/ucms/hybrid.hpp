#pragma once

#include "ucms/simcore.hpp"

#include <array>
#include <map>
#include <span>
#include <utility>
#include <vector>

namespace ucms::hybrid {

inline constexpr int kActionDim = 3;

// Task (3) + local frequency + transmit power + battery + one gain per server.
constexpr int state_dim(int num_servers) { return 6 + num_servers; }

// Normalized per-user observation. Layout:
//   [size, cycles_per_bit, deadline, local_freq, tx_power, battery, gain_0..gain_{M-1}]
struct AgentState {
    std::vector<double> values;
};

// Raw actor output, each component in [0, 1].
struct UserAction {
    double offload = 0.0;
    double freq = 0.0;
    double power = 0.0;

    std::array<double, kActionDim> as_array() const { return {offload, freq, power}; }
};

struct MappedAction {
    bool offload_request = false;
    double local_freq_hz = 0.0;
    double tx_power_dbm = 0.0;
};

struct ServerAction {
    std::map<int, bool> approvals; // user id -> approved
};

struct Candidate {
    int user = 0;
    double size_bits = 0.0;
};

struct ServerLimits {
    int subchannels = 0;
    double storage_bits = 0.0;
    std::vector<int> roster;
};

AgentState encode_state(const sim::DeviceState& device, const sim::TaskSpec& task,
                        const EnvConfig& cfg);

// Inverse of encode_state (kappa is taken from cfg).
std::pair<sim::DeviceState, sim::TaskSpec> decode_state(const AgentState& state,
                                                        const EnvConfig& cfg);

// Offload request when offload >= 0.5; frequency and power are scaled by
// their maxima and floored at their minima (power in dBm).
MappedAction map_user_action(const UserAction& action, const EnvConfig& cfg);

// Server-side approval. Everything is approved when neither the subchannel
// count nor the storage budget binds; otherwise candidates are taken in
// descending score order (ties by id), skipping any that would break either
// limit.
ServerAction refine(const ServerLimits& server, std::span<const Candidate> candidates,
                    const std::map<int, double>& scores);

struct ViewEntry {
    int user = 0;
    std::span<const double> state;
    UserAction action;
};

// Concatenates (state, action) of every roster member in ascending id order,
// zero-padded to z_max entries.
std::vector<double> build_global_view(int z_max, int state_size, std::vector<ViewEntry> entries);

} // namespace ucms::hybrid
