#pragma once

#include "ucms/config.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace ucms::sim {

using Rng = std::mt19937_64;

// One slot's task for one user device.
struct TaskSpec {
    double size_bits = 0.0;
    double cycles_per_bit = 0.0;
    double deadline_s = 0.0;

    double cycles() const { return size_bits * cycles_per_bit; }
};

struct DeviceState {
    double local_freq_hz = 0.0;
    double tx_power_dbm = 0.0;
    double battery_j = 0.0;
    std::vector<double> gains_db; // one entry per server
    double kappa = 0.0;
};

struct ServerState {
    std::vector<double> cpu_free_times_s;
    double storage_budget_bits = 0.0;
    int subchannels = 0;
    double cpu_freq_hz = 0.0;
    std::vector<int> roster;
};

struct SlotDecision {
    bool offload = false;
    std::optional<int> server; // associated server; required when offloading
    double local_freq_hz = 0.0;
    double tx_power_dbm = 0.0;
};

struct SlotOutcome {
    double delay_s = 0.0;
    double energy_j = 0.0;
    double cost = 0.0;
    double penalty = 0.0;
    double reward = 0.0;
    bool timed_out = false;
    bool offloaded = false;
    double battery_after_j = 0.0;
};

struct DelayEnergy {
    double delay_s = 0.0;
    double energy_j = 0.0;
};

// Task waiting for a server CPU: arrival is its transmission delay.
struct OffloadJob {
    int user = 0;
    double arrival_s = 0.0;
    double processing_s = 0.0;
};

struct ScheduledJob {
    int user = 0;
    double arrival_s = 0.0;
    double processing_s = 0.0;
    double cpu_free_s = 0.0; // free-time of the CPU the job was placed on
    double start_s = 0.0;
    double finish_s = 0.0;   // total offload delay
};

// --- unit conversions -------------------------------------------------------

double dbm_to_watts(double dbm);
double db_to_linear(double db);

// --- physics ----------------------------------------------------------------

TaskSpec generate_task(Rng& rng, const EnvConfig& cfg);

double local_delay(const TaskSpec& task, double freq_hz);
double local_energy(const TaskSpec& task, double freq_hz, double kappa);

// Shannon rate of one subchannel (W/K wide).
double uplink_rate(double tx_power_dbm, double gain_db, const EnvConfig& cfg);

double transmission_delay(const TaskSpec& task, double rate_bps);
double processing_delay(const TaskSpec& task, double server_freq_hz);
double offload_energy(double tx_power_dbm, double tx_delay_s);

// Multi-CPU FIFO service. Jobs are served in ascending arrival order (ties by
// user id); each takes the CPU with the smallest free-time. `cpu_free_times`
// is updated in place; results are returned in service order.
std::vector<ScheduledJob> schedule_server(std::span<const OffloadJob> jobs,
                                          std::vector<double>& cpu_free_times);
std::vector<ScheduledJob> schedule_server(std::span<const OffloadJob> jobs, int cpus);

DelayEnergy slot_totals(bool offload, DelayEnergy local, DelayEnergy offloaded);

double cost(double delay_s, double energy_j, double rho1, double rho2);
double penalty(double delay_s, double deadline_s, double battery_j, double battery_min_j,
               double rho1, double rho2);
double reward(double mean_cost, double penalty_value);
double battery_step(double battery_j, double consumed_j, double harvested_j,
                    double battery_max_j);

// Offload delay/energy estimate against an idle server (no queueing).
struct OffloadEstimate {
    double transmission_s = 0.0;
    double total_delay_s = 0.0;
    double energy_j = 0.0;
};
OffloadEstimate estimate_offload(const TaskSpec& task, double tx_power_dbm, double gain_db,
                                 const EnvConfig& cfg);

// --- environment ------------------------------------------------------------

struct SlotResult {
    std::vector<SlotOutcome> outcomes;
    std::vector<ServerState> servers; // server state after the slot's scheduling
    double mean_cost = 0.0;
    bool terminal = false;
    // Observation for the next slot.
    std::vector<TaskSpec> next_tasks;
    std::vector<DeviceState> next_devices;
};

// Slot-advance state machine. All randomness comes from one seeded stream, so
// identical seeds and decisions produce identical trajectories.
class Environment {
public:
    explicit Environment(EnvConfig cfg);

    // Full batteries, initial allocations, fresh tasks and gains, slot 0.
    void reset();

    SlotResult advance_slot(std::span<const SlotDecision> decisions);

    const EnvConfig& config() const { return cfg_; }
    const std::vector<TaskSpec>& tasks() const { return tasks_; }
    const std::vector<DeviceState>& devices() const { return devices_; }
    // Fresh per-slot server state (empty CPUs, full storage, no roster).
    std::vector<ServerState> idle_servers() const;

    int slot() const { return slot_; }
    bool done() const { return slot_ >= cfg_.slots; }

private:
    void draw_observation();

    EnvConfig cfg_;
    Rng rng_;
    std::vector<TaskSpec> tasks_;
    std::vector<DeviceState> devices_;
    int slot_ = 0;
};

} // namespace ucms::sim
