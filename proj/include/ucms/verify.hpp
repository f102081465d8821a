#pragma once

// Independent oracles and invariant sweeps shared by the test suites and the
// CLI `check` command.

#include "ucms/coselect.hpp"
#include "ucms/config.hpp"
#include "ucms/simcore.hpp"
#include "ucms/tinynet.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ucms::verify {

// Event-driven multi-CPU FIFO simulation. Advances time from event to event
// (arrivals and completions), scanning every job and CPU at each step.
// Quadratic, but shares no code with sim::schedule_server.
std::vector<sim::ScheduledJob> naive_schedule(const std::vector<sim::OffloadJob>& jobs,
                                              const std::vector<double>& cpu_free_times);

struct Report {
    std::string name;
    bool passed = true;
    std::size_t cases = 0;
    double seconds = 0.0;
    std::vector<std::string> failures; // first few violations
    std::string detail;

    void fail(std::string what);
};

Report queue_oracle(std::size_t instances, std::uint64_t seed, int max_tasks = 64, int max_cpus = 8);

// Random instances at the given scale; checks the round bound (<= N),
// capacity, exactly-once assignment and per-round acceptance order.
Report matching_invariants(std::size_t instances, std::uint64_t seed, const EnvConfig& cfg);

struct GradCheckOptions {
    int nets = 10;
    int batch = 4;
    std::size_t sampled_params = 2000;
    double step = 1e-5;
    double tolerance = 1e-4;
};

// Relative error ||g_analytic - g_numeric|| / (||g_analytic|| + ||g_numeric||)
// over sampled parameters and all input entries, for random nets of one
// shape and a random linear loss on a random batch.
Report gradient_check(const std::vector<int>& widths, nn::Activation hidden, nn::Activation output,
                      std::uint64_t seed, const GradCheckOptions& opts = {});

// Actor and critic shapes deployed for an environment config.
struct NetShape {
    std::string name;
    std::vector<int> widths;
    nn::Activation hidden;
    nn::Activation output;
};
std::vector<NetShape> deployed_shapes(const EnvConfig& cfg, const std::vector<int>& hidden);

// Pearson chi-square goodness of fit of PriorityBuffer::sample frequencies
// against priority_i / sum for `vectors` random priority vectors with
// `draws` draws each. The family-wise level `alpha` is split evenly across
// the vectors.
Report sampling_law(int vectors, std::size_t draws, double alpha, std::uint64_t seed);

// Random slots driven through co-selection, action mapping and refinement:
// battery within [0, b_max], penalties <= 0, frequency and power within
// their ranges, per-server offloads <= K and stored bits <= D.
Report environment_invariants(std::size_t slots, std::uint64_t seed, const EnvConfig& cfg);

} // namespace ucms::verify
