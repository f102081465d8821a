#pragma once

#include "ucms/simcore.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <vector>

namespace ucms::coselect {

// Estimated offload delay and energy for one (user, server) pair.
struct PairEstimate {
    double delay_s = 0.0;
    double energy_j = 0.0;
};

struct Weights {
    double rho1 = 0.5;
    double rho2 = 0.5;
};

// Dense estimate table indexed [user][server]; users and servers are numbered
// 0..N-1 and 0..M-1. A missing entry means the pair cannot be evaluated.
struct SelectionInstance {
    int num_users = 0;
    int num_servers = 0;
    int z_max = 0;
    Weights weights;
    std::vector<std::vector<std::optional<PairEstimate>>> estimates;

    const PairEstimate& at(int user, int server) const;
};

struct Matching {
    // assignment[u] is the server of user u, or nullopt for local-only users
    // left over when every server is full.
    std::vector<std::optional<int>> assignment;
    std::vector<std::vector<int>> rosters; // ascending user ids

    std::vector<int> local_only() const;
};

struct Application {
    int user = 0;
    int server = 0;
};

struct RoundLog {
    std::vector<Application> applications;
    std::vector<Application> accepted;
    std::vector<Application> rejected;
};

struct CoSelectResult {
    Matching matching;
    std::vector<RoundLog> rounds;
};

// I_m for one candidate pair: rho1 * delay + rho2 * energy.
double user_selection_value(const SelectionInstance& inst, int user, int server);

// I_n: the estimated offload delay of the candidate user.
double server_selection_value(const SelectionInstance& inst, int user, int server);

// Iterative co-selection. Each round every unmatched user applies to the
// server with the lowest I_m among servers with remaining capacity; each
// server admits applicants by ascending I_n until full and rejects the rest.
// When all servers are full the remaining users become local-only, unless
// `allow_local_fallback` is false, in which case InfeasibleError is thrown.
CoSelectResult co_select(const SelectionInstance& inst, bool allow_local_fallback = true);

// Builds the instance for the current slot from each device's present
// transmit power and channel gains, assuming idle servers.
SelectionInstance make_instance(const std::vector<sim::TaskSpec>& tasks,
                                const std::vector<sim::DeviceState>& devices,
                                const EnvConfig& cfg);

// Builds rosters from an assignment vector. Throws StructuralError on
// out-of-range server ids.
Matching matching_from_assignment(std::vector<std::optional<int>> assignment, int num_servers);

SelectionInstance instance_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const SelectionInstance& inst);
nlohmann::json to_json(const Matching& m);
nlohmann::json to_json(const RoundLog& log);

} // namespace ucms::coselect
