#include "ucms/hybrid.hpp"

#include "ucms/errors.hpp"

#include <algorithm>
#include <string>

namespace ucms::hybrid {

namespace {

double normalize(double v, const Range& r, const char* name) {
    if (!r.contains(v)) {
        throw ValidationError(std::string("encode_state: ") + name + " outside configured range");
    }
    return r.width() > 0.0 ? (v - r.lo) / r.width() : 0.0;
}

double denormalize(double v, const Range& r) { return r.lo + v * r.width(); }

void require_unit(double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) {
        throw ValidationError(std::string("user action component ") + name + " outside [0, 1]");
    }
}

} // namespace

AgentState encode_state(const sim::DeviceState& device, const sim::TaskSpec& task,
                        const EnvConfig& cfg) {
    if (static_cast<int>(device.gains_db.size()) != cfg.num_servers) {
        throw StructuralError("encode_state: gain vector length differs from server count");
    }
    AgentState s;
    s.values.reserve(static_cast<std::size_t>(state_dim(cfg.num_servers)));
    s.values.push_back(normalize(task.size_bits, cfg.task_size_bits, "task size"));
    s.values.push_back(normalize(task.cycles_per_bit, cfg.cycles_per_bit, "cycles per bit"));
    s.values.push_back(normalize(task.deadline_s, cfg.deadline_s, "deadline"));
    s.values.push_back(normalize(device.local_freq_hz, cfg.local_freq_hz, "local frequency"));
    s.values.push_back(normalize(device.tx_power_dbm, cfg.tx_power_dbm, "transmit power"));
    s.values.push_back(normalize(device.battery_j, Range{0.0, cfg.battery_j.hi}, "battery"));
    for (double g : device.gains_db) {
        s.values.push_back(normalize(g, cfg.gain_db, "channel gain"));
    }
    return s;
}

std::pair<sim::DeviceState, sim::TaskSpec> decode_state(const AgentState& state,
                                                        const EnvConfig& cfg) {
    if (static_cast<int>(state.values.size()) != state_dim(cfg.num_servers)) {
        throw StructuralError("decode_state: wrong state dimension");
    }
    const auto& v = state.values;
    sim::TaskSpec task{denormalize(v[0], cfg.task_size_bits), denormalize(v[1], cfg.cycles_per_bit),
                       denormalize(v[2], cfg.deadline_s)};
    sim::DeviceState dev;
    dev.local_freq_hz = denormalize(v[3], cfg.local_freq_hz);
    dev.tx_power_dbm = denormalize(v[4], cfg.tx_power_dbm);
    dev.battery_j = v[5] * cfg.battery_j.hi;
    dev.kappa = cfg.kappa;
    for (std::size_t i = 6; i < v.size(); ++i) {
        dev.gains_db.push_back(denormalize(v[i], cfg.gain_db));
    }
    return {dev, task};
}

MappedAction map_user_action(const UserAction& a, const EnvConfig& cfg) {
    require_unit(a.offload, "offload");
    require_unit(a.freq, "freq");
    require_unit(a.power, "power");
    MappedAction m;
    m.offload_request = a.offload >= 0.5;
    m.local_freq_hz = std::max(cfg.local_freq_hz.lo, a.freq * cfg.local_freq_hz.hi);
    m.tx_power_dbm = std::max(cfg.tx_power_dbm.lo, a.power * cfg.tx_power_dbm.hi);
    return m;
}

ServerAction refine(const ServerLimits& server, std::span<const Candidate> candidates,
                    const std::map<int, double>& scores) {
    ServerAction out;
    double total_bits = 0.0;
    for (const auto& c : candidates) {
        if (std::find(server.roster.begin(), server.roster.end(), c.user) == server.roster.end()) {
            throw StructuralError("refine: candidate " + std::to_string(c.user) +
                                  " is not on the server roster");
        }
        total_bits += c.size_bits;
        out.approvals[c.user] = false;
    }

    if (static_cast<int>(candidates.size()) <= server.subchannels &&
        total_bits <= server.storage_bits) {
        for (const auto& c : candidates) {
            out.approvals[c.user] = true;
        }
        return out;
    }

    std::vector<Candidate> order(candidates.begin(), candidates.end());
    auto score_of = [&](int user) {
        auto it = scores.find(user);
        if (it == scores.end()) {
            throw StructuralError("refine: no score for candidate " + std::to_string(user));
        }
        return it->second;
    };
    for (const auto& c : order) {
        score_of(c.user);
    }
    std::sort(order.begin(), order.end(), [&](const Candidate& a, const Candidate& b) {
        const double sa = score_of(a.user);
        const double sb = score_of(b.user);
        if (sa != sb) {
            return sa > sb;
        }
        return a.user < b.user;
    });

    int used_channels = 0;
    double used_bits = 0.0;
    for (const auto& c : order) {
        if (used_channels + 1 > server.subchannels || used_bits + c.size_bits > server.storage_bits) {
            continue;
        }
        ++used_channels;
        used_bits += c.size_bits;
        out.approvals[c.user] = true;
    }
    return out;
}

std::vector<double> build_global_view(int z_max, int state_size, std::vector<ViewEntry> entries) {
    if (static_cast<int>(entries.size()) > z_max) {
        throw StructuralError("build_global_view: roster exceeds z_max");
    }
    std::sort(entries.begin(), entries.end(),
              [](const ViewEntry& a, const ViewEntry& b) { return a.user < b.user; });
    const int stride = state_size + kActionDim;
    std::vector<double> view(static_cast<std::size_t>(z_max * stride), 0.0);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        if (static_cast<int>(e.state.size()) != state_size) {
            throw StructuralError("build_global_view: state has wrong dimension");
        }
        auto* slot = view.data() + i * static_cast<std::size_t>(stride);
        std::copy(e.state.begin(), e.state.end(), slot);
        const auto a = e.action.as_array();
        std::copy(a.begin(), a.end(), slot + state_size);
    }
    return view;
}

} // namespace ucms::hybrid
