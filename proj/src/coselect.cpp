#include "ucms/coselect.hpp"

#include "ucms/errors.hpp"

#include <algorithm>
#include <string>

namespace ucms::coselect {

const PairEstimate& SelectionInstance::at(int user, int server) const {
    if (user < 0 || user >= num_users || server < 0 || server >= num_servers) {
        throw StructuralError("selection instance: pair (" + std::to_string(user) + ", " +
                              std::to_string(server) + ") out of range");
    }
    const auto& e = estimates.at(static_cast<std::size_t>(user)).at(static_cast<std::size_t>(server));
    if (!e) {
        throw StructuralError("selection instance: missing estimate for pair (" +
                              std::to_string(user) + ", " + std::to_string(server) + ")");
    }
    return *e;
}

std::vector<int> Matching::local_only() const {
    std::vector<int> out;
    for (std::size_t u = 0; u < assignment.size(); ++u) {
        if (!assignment[u]) {
            out.push_back(static_cast<int>(u));
        }
    }
    return out;
}

double user_selection_value(const SelectionInstance& inst, int user, int server) {
    const auto& e = inst.at(user, server);
    return inst.weights.rho1 * e.delay_s + inst.weights.rho2 * e.energy_j;
}

double server_selection_value(const SelectionInstance& inst, int user, int server) {
    return inst.at(user, server).delay_s;
}

CoSelectResult co_select(const SelectionInstance& inst, bool allow_local_fallback) {
    if (inst.num_users < 0 || inst.num_servers <= 0 || inst.z_max <= 0) {
        throw StructuralError("co_select: instance needs servers and a positive z_max");
    }
    if (static_cast<int>(inst.estimates.size()) != inst.num_users) {
        throw StructuralError("co_select: estimate table has wrong number of users");
    }

    CoSelectResult result;
    auto& matching = result.matching;
    matching.assignment.assign(static_cast<std::size_t>(inst.num_users), std::nullopt);
    matching.rosters.assign(static_cast<std::size_t>(inst.num_servers), {});

    std::vector<int> capacity(static_cast<std::size_t>(inst.num_servers), inst.z_max);
    std::vector<int> rejected(static_cast<std::size_t>(inst.num_users));
    for (int u = 0; u < inst.num_users; ++u) {
        rejected[static_cast<std::size_t>(u)] = u;
    }

    const int round_limit = std::max(1, inst.num_users * inst.num_servers);
    while (!rejected.empty()) {
        const bool any_open = std::any_of(capacity.begin(), capacity.end(),
                                          [](int c) { return c > 0; });
        if (!any_open) {
            if (!allow_local_fallback) {
                throw InfeasibleError("co_select: " + std::to_string(rejected.size()) +
                                      " users remain but every server is full");
            }
            break; // leftover users stay local-only
        }
        if (static_cast<int>(result.rounds.size()) >= round_limit) {
            throw StructuralError("co_select: exceeded round bound");
        }

        RoundLog log;
        std::vector<std::vector<int>> applicants(static_cast<std::size_t>(inst.num_servers));
        for (int u : rejected) {
            int best = -1;
            double best_value = 0.0;
            for (int m = 0; m < inst.num_servers; ++m) {
                if (capacity[static_cast<std::size_t>(m)] <= 0) {
                    continue;
                }
                const double v = user_selection_value(inst, u, m);
                if (best < 0 || v < best_value) {
                    best = m;
                    best_value = v;
                }
            }
            applicants[static_cast<std::size_t>(best)].push_back(u);
            log.applications.push_back({u, best});
        }

        std::vector<int> next_rejected;
        for (int m = 0; m < inst.num_servers; ++m) {
            auto& apps = applicants[static_cast<std::size_t>(m)];
            std::stable_sort(apps.begin(), apps.end(), [&](int a, int b) {
                const double va = server_selection_value(inst, a, m);
                const double vb = server_selection_value(inst, b, m);
                if (va != vb) {
                    return va < vb;
                }
                return a < b;
            });
            auto& cap = capacity[static_cast<std::size_t>(m)];
            for (int u : apps) {
                if (cap > 0) {
                    --cap;
                    matching.assignment[static_cast<std::size_t>(u)] = m;
                    matching.rosters[static_cast<std::size_t>(m)].push_back(u);
                    log.accepted.push_back({u, m});
                } else {
                    next_rejected.push_back(u);
                    log.rejected.push_back({u, m});
                }
            }
        }
        std::sort(next_rejected.begin(), next_rejected.end());
        rejected = std::move(next_rejected);
        result.rounds.push_back(std::move(log));
    }

    for (auto& roster : matching.rosters) {
        std::sort(roster.begin(), roster.end());
    }
    return result;
}

SelectionInstance make_instance(const std::vector<sim::TaskSpec>& tasks,
                                const std::vector<sim::DeviceState>& devices,
                                const EnvConfig& cfg) {
    if (tasks.size() != devices.size()) {
        throw StructuralError("make_instance: tasks and devices differ in length");
    }
    SelectionInstance inst;
    inst.num_users = static_cast<int>(tasks.size());
    inst.num_servers = cfg.num_servers;
    inst.z_max = cfg.z_max;
    inst.weights = {cfg.rho1, cfg.rho2};
    inst.estimates.resize(tasks.size());
    for (std::size_t u = 0; u < tasks.size(); ++u) {
        auto& row = inst.estimates[u];
        row.resize(static_cast<std::size_t>(cfg.num_servers));
        for (int m = 0; m < cfg.num_servers; ++m) {
            const auto est = sim::estimate_offload(tasks[u], devices[u].tx_power_dbm,
                                                   devices[u].gains_db.at(static_cast<std::size_t>(m)), cfg);
            row[static_cast<std::size_t>(m)] = PairEstimate{est.total_delay_s, est.energy_j};
        }
    }
    return inst;
}

Matching matching_from_assignment(std::vector<std::optional<int>> assignment, int num_servers) {
    Matching m;
    m.rosters.assign(static_cast<std::size_t>(num_servers), {});
    for (std::size_t u = 0; u < assignment.size(); ++u) {
        if (!assignment[u]) {
            continue;
        }
        const int s = *assignment[u];
        if (s < 0 || s >= num_servers) {
            throw StructuralError("matching: unknown server " + std::to_string(s));
        }
        m.rosters[static_cast<std::size_t>(s)].push_back(static_cast<int>(u));
    }
    m.assignment = std::move(assignment);
    return m;
}

SelectionInstance instance_from_json(const nlohmann::json& doc) {
    try {
        SelectionInstance inst;
        inst.z_max = doc.at("z_max").get<int>();
        if (doc.contains("rho1")) {
            inst.weights.rho1 = doc.at("rho1").get<double>();
        }
        if (doc.contains("rho2")) {
            inst.weights.rho2 = doc.at("rho2").get<double>();
        }
        const auto& rows = doc.at("estimates");
        inst.num_users = static_cast<int>(rows.size());
        inst.num_servers = rows.empty() ? doc.at("num_servers").get<int>()
                                        : static_cast<int>(rows.at(0).size());
        for (const auto& row : rows) {
            if (static_cast<int>(row.size()) != inst.num_servers) {
                throw StructuralError("matching instance: ragged estimate table");
            }
            std::vector<std::optional<PairEstimate>> parsed;
            for (const auto& cell : row) {
                if (cell.is_null()) {
                    parsed.emplace_back(std::nullopt);
                } else {
                    parsed.emplace_back(PairEstimate{cell.at("delay_s").get<double>(),
                                                     cell.at("energy_j").get<double>()});
                }
            }
            inst.estimates.push_back(std::move(parsed));
        }
        return inst;
    } catch (const nlohmann::json::exception& e) {
        throw StructuralError(std::string("matching instance: ") + e.what());
    }
}

nlohmann::json to_json(const SelectionInstance& inst) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : inst.estimates) {
        nlohmann::json r = nlohmann::json::array();
        for (const auto& cell : row) {
            if (cell) {
                r.push_back({{"delay_s", cell->delay_s}, {"energy_j", cell->energy_j}});
            } else {
                r.push_back(nullptr);
            }
        }
        rows.push_back(std::move(r));
    }
    return {{"z_max", inst.z_max},
            {"num_servers", inst.num_servers},
            {"rho1", inst.weights.rho1},
            {"rho2", inst.weights.rho2},
            {"estimates", std::move(rows)}};
}

nlohmann::json to_json(const Matching& m) {
    nlohmann::json assignment = nlohmann::json::array();
    for (const auto& a : m.assignment) {
        assignment.push_back(a ? nlohmann::json(*a) : nlohmann::json(nullptr));
    }
    return {{"assignment", std::move(assignment)}, {"rosters", m.rosters}};
}

nlohmann::json to_json(const RoundLog& log) {
    auto pairs = [](const std::vector<Application>& v) {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& a : v) {
            out.push_back({{"user", a.user}, {"server", a.server}});
        }
        return out;
    };
    return {{"applications", pairs(log.applications)},
            {"accepted", pairs(log.accepted)},
            {"rejected", pairs(log.rejected)}};
}

} // namespace ucms::coselect
