#include "ucms/simcore.hpp"

#include "ucms/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <queue>
#include <string>

namespace ucms::sim {

namespace {

constexpr std::uint64_t kEnvStream = 0x656e76; // "env"

double uniform(Rng& rng, const Range& r) {
    return r.lo + r.width() * std::generate_canonical<double, 53>(rng);
}

Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    return Rng(seq);
}

} // namespace

double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

TaskSpec generate_task(Rng& rng, const EnvConfig& cfg) {
    TaskSpec t;
    t.size_bits = uniform(rng, cfg.task_size_bits);
    t.cycles_per_bit = uniform(rng, cfg.cycles_per_bit);
    t.deadline_s = uniform(rng, cfg.deadline_s);
    return t;
}

double local_delay(const TaskSpec& task, double freq_hz) {
    if (!(freq_hz > 0.0)) {
        throw DomainError("local_delay: frequency must be positive");
    }
    return task.size_bits * task.cycles_per_bit / freq_hz;
}

double local_energy(const TaskSpec& task, double freq_hz, double kappa) {
    if (!(freq_hz > 0.0)) {
        throw DomainError("local_energy: frequency must be positive");
    }
    return kappa * task.size_bits * task.cycles_per_bit * freq_hz * freq_hz;
}

double uplink_rate(double tx_power_dbm, double gain_db, const EnvConfig& cfg) {
    const double snr = dbm_to_watts(tx_power_dbm) * db_to_linear(gain_db);
    return cfg.bandwidth_hz / cfg.subchannels * std::log2(1.0 + snr);
}

double transmission_delay(const TaskSpec& task, double rate_bps) {
    if (task.size_bits == 0.0) {
        return 0.0;
    }
    if (!(rate_bps > 0.0)) {
        throw DomainError("transmission_delay: rate must be positive");
    }
    return task.size_bits / rate_bps;
}

double processing_delay(const TaskSpec& task, double server_freq_hz) {
    if (!(server_freq_hz > 0.0)) {
        throw DomainError("processing_delay: server frequency must be positive");
    }
    return task.cycles() / server_freq_hz;
}

double offload_energy(double tx_power_dbm, double tx_delay_s) {
    return dbm_to_watts(tx_power_dbm) * tx_delay_s;
}

std::vector<ScheduledJob> schedule_server(std::span<const OffloadJob> jobs,
                                          std::vector<double>& cpu_free_times) {
    if (cpu_free_times.empty()) {
        throw StructuralError("schedule_server: server has no CPUs");
    }
    std::vector<OffloadJob> order(jobs.begin(), jobs.end());
    std::sort(order.begin(), order.end(), [](const OffloadJob& a, const OffloadJob& b) {
        if (a.arrival_s != b.arrival_s) {
            return a.arrival_s < b.arrival_s;
        }
        return a.user < b.user;
    });

    std::priority_queue<double, std::vector<double>, std::greater<>> free_times(
        std::greater<>{}, cpu_free_times);

    std::vector<ScheduledJob> out;
    out.reserve(order.size());
    for (const auto& job : order) {
        const double q = free_times.top();
        free_times.pop();
        ScheduledJob s;
        s.user = job.user;
        s.arrival_s = job.arrival_s;
        s.processing_s = job.processing_s;
        s.cpu_free_s = q;
        s.start_s = std::max(job.arrival_s, q);
        s.finish_s = s.start_s + job.processing_s;
        free_times.push(s.finish_s);
        out.push_back(s);
    }

    cpu_free_times.clear();
    while (!free_times.empty()) {
        cpu_free_times.push_back(free_times.top());
        free_times.pop();
    }
    return out;
}

std::vector<ScheduledJob> schedule_server(std::span<const OffloadJob> jobs, int cpus) {
    if (cpus < 1) {
        throw StructuralError("schedule_server: server has no CPUs");
    }
    std::vector<double> free_times(static_cast<std::size_t>(cpus), 0.0);
    return schedule_server(jobs, free_times);
}

DelayEnergy slot_totals(bool offload, DelayEnergy local, DelayEnergy offloaded) {
    return offload ? offloaded : local;
}

double cost(double delay_s, double energy_j, double rho1, double rho2) {
    return rho1 * delay_s + rho2 * energy_j;
}

double penalty(double delay_s, double deadline_s, double battery_j, double battery_min_j,
               double rho1, double rho2) {
    return rho1 * std::min(deadline_s - delay_s, 0.0) +
           rho2 * std::min(battery_j - battery_min_j, 0.0);
}

double reward(double mean_cost, double penalty_value) { return -mean_cost + penalty_value; }

double battery_step(double battery_j, double consumed_j, double harvested_j,
                    double battery_max_j) {
    return std::min(std::max(battery_j - consumed_j + harvested_j, 0.0), battery_max_j);
}

OffloadEstimate estimate_offload(const TaskSpec& task, double tx_power_dbm, double gain_db,
                                 const EnvConfig& cfg) {
    OffloadEstimate e;
    e.transmission_s = transmission_delay(task, uplink_rate(tx_power_dbm, gain_db, cfg));
    e.total_delay_s = e.transmission_s + processing_delay(task, cfg.server_freq_hz);
    e.energy_j = offload_energy(tx_power_dbm, e.transmission_s);
    return e;
}

// --- Environment --------------------------------------------------------------

Environment::Environment(EnvConfig cfg) : cfg_(std::move(cfg)), rng_(make_stream(cfg_.seed, kEnvStream)) {
    cfg_.validate();
    reset();
}

void Environment::reset() {
    const auto n = static_cast<std::size_t>(cfg_.num_users);
    devices_.assign(n, DeviceState{});
    for (auto& d : devices_) {
        d.local_freq_hz = cfg_.local_freq_hz.hi;
        d.tx_power_dbm = cfg_.tx_power_dbm.hi;
        d.battery_j = cfg_.battery_j.hi;
        d.kappa = cfg_.kappa;
        d.gains_db.assign(static_cast<std::size_t>(cfg_.num_servers), 0.0);
    }
    tasks_.assign(n, TaskSpec{});
    slot_ = 0;
    draw_observation();
}

void Environment::draw_observation() {
    for (auto& t : tasks_) {
        t = generate_task(rng_, cfg_);
    }
    for (auto& d : devices_) {
        for (auto& g : d.gains_db) {
            g = uniform(rng_, cfg_.gain_db);
        }
    }
}

std::vector<ServerState> Environment::idle_servers() const {
    std::vector<ServerState> servers(static_cast<std::size_t>(cfg_.num_servers));
    for (auto& s : servers) {
        s.cpu_free_times_s.assign(static_cast<std::size_t>(cfg_.cpus_per_server), 0.0);
        s.storage_budget_bits = cfg_.storage_bits;
        s.subchannels = cfg_.subchannels;
        s.cpu_freq_hz = cfg_.server_freq_hz;
    }
    return servers;
}

SlotResult Environment::advance_slot(std::span<const SlotDecision> decisions) {
    const int n_users = cfg_.num_users;
    const int n_servers = cfg_.num_servers;
    if (static_cast<int>(decisions.size()) != n_users) {
        throw StructuralError("advance_slot: expected one decision per user");
    }
    if (done()) {
        throw StructuralError("advance_slot: episode already finished");
    }

    SlotResult result;
    result.servers = idle_servers();

    // Rosters and per-server offload sets.
    std::vector<std::vector<OffloadJob>> jobs(static_cast<std::size_t>(n_servers));
    std::vector<double> tx_delay(static_cast<std::size_t>(n_users), 0.0);
    for (int u = 0; u < n_users; ++u) {
        const auto& d = decisions[static_cast<std::size_t>(u)];
        if (d.server) {
            if (*d.server < 0 || *d.server >= n_servers) {
                throw StructuralError("advance_slot: unknown server " + std::to_string(*d.server));
            }
            result.servers[static_cast<std::size_t>(*d.server)].roster.push_back(u);
        } else if (d.offload) {
            throw StructuralError("advance_slot: offloading user " + std::to_string(u) +
                                  " has no server");
        }
        if (!cfg_.local_freq_hz.contains(d.local_freq_hz) ||
            !cfg_.tx_power_dbm.contains(d.tx_power_dbm)) {
            throw ValidationError("advance_slot: allocation outside budget for user " +
                                  std::to_string(u));
        }
        if (d.offload) {
            const auto& task = tasks_[static_cast<std::size_t>(u)];
            const auto& dev = devices_[static_cast<std::size_t>(u)];
            const int m = *d.server;
            const double rate =
                uplink_rate(d.tx_power_dbm, dev.gains_db[static_cast<std::size_t>(m)], cfg_);
            tx_delay[static_cast<std::size_t>(u)] = transmission_delay(task, rate);
            jobs[static_cast<std::size_t>(m)].push_back(
                OffloadJob{u, tx_delay[static_cast<std::size_t>(u)],
                           processing_delay(task, cfg_.server_freq_hz)});
            auto& srv = result.servers[static_cast<std::size_t>(m)];
            srv.storage_budget_bits -= task.size_bits;
        }
    }

    std::vector<double> offload_delay(static_cast<std::size_t>(n_users), 0.0);
    for (int m = 0; m < n_servers; ++m) {
        auto& srv = result.servers[static_cast<std::size_t>(m)];
        const auto& server_jobs = jobs[static_cast<std::size_t>(m)];
        if (static_cast<int>(srv.roster.size()) > cfg_.z_max) {
            throw ValidationError("advance_slot: roster of server " + std::to_string(m) +
                                  " exceeds z_max");
        }
        if (static_cast<int>(server_jobs.size()) > srv.subchannels) {
            throw ValidationError("advance_slot: server " + std::to_string(m) +
                                  " has more offloads than subchannels");
        }
        if (srv.storage_budget_bits < 0.0) {
            throw ValidationError("advance_slot: server " + std::to_string(m) +
                                  " storage exceeded");
        }
        for (const auto& s : schedule_server(server_jobs, srv.cpu_free_times_s)) {
            offload_delay[static_cast<std::size_t>(s.user)] = s.finish_s;
        }
    }

    result.outcomes.resize(static_cast<std::size_t>(n_users));
    double total_cost = 0.0;
    for (int u = 0; u < n_users; ++u) {
        const auto idx = static_cast<std::size_t>(u);
        const auto& d = decisions[idx];
        const auto& task = tasks_[idx];
        auto& out = result.outcomes[idx];
        DelayEnergy local{};
        DelayEnergy remote{};
        if (d.offload) {
            remote = {offload_delay[idx], offload_energy(d.tx_power_dbm, tx_delay[idx])};
        } else {
            local = {local_delay(task, d.local_freq_hz),
                     local_energy(task, d.local_freq_hz, devices_[idx].kappa)};
        }
        const auto total = slot_totals(d.offload, local, remote);
        out.offloaded = d.offload;
        out.delay_s = total.delay_s;
        out.energy_j = total.energy_j;
        out.timed_out = total.delay_s > task.deadline_s;
        out.cost = cost(total.delay_s, total.energy_j, cfg_.rho1, cfg_.rho2);
        total_cost += out.cost;
    }
    result.mean_cost = total_cost / n_users;

    for (int u = 0; u < n_users; ++u) {
        const auto idx = static_cast<std::size_t>(u);
        auto& out = result.outcomes[idx];
        auto& dev = devices_[idx];
        out.battery_after_j =
            battery_step(dev.battery_j, out.energy_j, cfg_.harvested_j, cfg_.battery_j.hi);
        out.penalty = penalty(out.delay_s, tasks_[idx].deadline_s, out.battery_after_j,
                              cfg_.battery_j.lo, cfg_.rho1, cfg_.rho2);
        out.reward = reward(result.mean_cost, out.penalty);

        dev.battery_j = out.battery_after_j;
        dev.local_freq_hz = decisions[idx].local_freq_hz;
        dev.tx_power_dbm = decisions[idx].tx_power_dbm;
    }

    ++slot_;
    result.terminal = done();
    draw_observation();
    result.next_tasks = tasks_;
    result.next_devices = devices_;
    return result;
}

} // namespace ucms::sim
