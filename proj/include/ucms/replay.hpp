#pragma once

#include "ucms/hybrid.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace ucms::replay {

using Rng = std::mt19937_64;

// One slot of interaction for every user: states, raw actions, server
// approvals, rewards and next states.
struct Experience {
    int num_users = 0;
    int state_dim = 0;
    std::vector<double> states;      // num_users x state_dim, user-major
    std::vector<hybrid::UserAction> actions;
    std::vector<std::uint8_t> approved; // server approval of the offload request
    std::vector<int> assignment;     // associated server, -1 for local-only users
    std::vector<double> rewards;
    std::vector<double> next_states;
    bool terminal = false;

    std::span<const double> state(int user) const;
    std::span<const double> next_state(int user) const;
    double mean_reward() const;

    // Throws StructuralError when field lengths disagree.
    void validate() const;
};

// nu_r * (|reward| + eps) + nu_delta * (|td_error| + eps)
double priority(double reward, double td_error, double nu_r, double nu_delta, double eps);

struct SampleRef {
    std::size_t slot = 0;
    std::uint64_t serial = 0; // identifies the stored experience; changes on eviction
};

struct Batch {
    std::vector<SampleRef> refs;
    std::vector<const Experience*> items;
    std::vector<double> priorities;
    std::vector<double> probabilities;

    std::size_t size() const { return refs.size(); }
};

// Fixed-capacity ring buffer sampled proportionally to a composite
// reward/TD-error priority.
class PriorityBuffer {
public:
    PriorityBuffer(std::size_t capacity, double nu_r, double nu_delta, double eps);

    // New entries take the current maximum priority (eps when empty).
    void push(Experience exp);

    // n independent draws with replacement, P(i) = priority_i / sum.
    // Throws NotReadyError when fewer than n experiences are stored.
    Batch sample(std::size_t n, Rng& rng) const;

    // Recomputes each referenced priority from (reward, fresh TD error).
    // References to evicted experiences are skipped and counted.
    void update_priorities(std::span<const SampleRef> refs, std::span<const double> rewards,
                           std::span<const double> td_errors);

    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool ready(std::size_t n) const { return size() >= n && n > 0; }

    const Experience& at(std::size_t slot) const { return entries_.at(slot).exp; }
    double priority_at(std::size_t slot) const { return entries_.at(slot).priority; }
    std::uint64_t serial_at(std::size_t slot) const { return entries_.at(slot).serial; }
    std::vector<double> priorities() const;
    std::vector<double> probabilities() const;
    double max_priority() const;

    std::uint64_t stale_updates() const { return stale_updates_; }
    double nu_r() const { return nu_r_; }
    double nu_delta() const { return nu_delta_; }
    double epsilon() const { return eps_; }

    // Counts of priorities in `bins` equal-width bins over [min, max].
    std::vector<std::size_t> priority_histogram(std::size_t bins) const;

private:
    struct Entry {
        Experience exp;
        double priority = 0.0;
        std::uint64_t serial = 0;
    };

    std::size_t capacity_;
    double nu_r_;
    double nu_delta_;
    double eps_;
    std::vector<Entry> entries_;
    std::size_t next_slot_ = 0;
    std::uint64_t next_serial_ = 0;
    std::uint64_t stale_updates_ = 0;
};

} // namespace ucms::replay
