#include "ucms/replay.hpp"

#include "ucms/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace ucms::replay {

std::span<const double> Experience::state(int user) const {
    return std::span<const double>(states).subspan(static_cast<std::size_t>(user * state_dim),
                                                   static_cast<std::size_t>(state_dim));
}

std::span<const double> Experience::next_state(int user) const {
    return std::span<const double>(next_states)
        .subspan(static_cast<std::size_t>(user * state_dim), static_cast<std::size_t>(state_dim));
}

double Experience::mean_reward() const {
    if (rewards.empty()) {
        return 0.0;
    }
    return std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(rewards.size());
}

void Experience::validate() const {
    const auto n = static_cast<std::size_t>(num_users);
    const auto s = static_cast<std::size_t>(num_users * state_dim);
    if (num_users <= 0 || state_dim <= 0 || states.size() != s || next_states.size() != s ||
        actions.size() != n || approved.size() != n || assignment.size() != n ||
        rewards.size() != n) {
        throw StructuralError("experience: inconsistent field lengths");
    }
    for (std::size_t u = 0; u < n; ++u) {
        if (approved[u] && assignment[u] < 0) {
            throw StructuralError("experience: approved user " + std::to_string(u) +
                                  " has no server");
        }
    }
}

double priority(double reward, double td_error, double nu_r, double nu_delta, double eps) {
    return nu_r * (std::abs(reward) + eps) + nu_delta * (std::abs(td_error) + eps);
}

PriorityBuffer::PriorityBuffer(std::size_t capacity, double nu_r, double nu_delta, double eps)
    : capacity_(capacity), nu_r_(nu_r), nu_delta_(nu_delta), eps_(eps) {
    if (capacity_ == 0) {
        throw StructuralError("PriorityBuffer: capacity must be positive");
    }
    if (nu_r < 0.0 || nu_delta < 0.0 || std::abs(nu_r + nu_delta - 1.0) > 1e-12) {
        throw StructuralError("PriorityBuffer: trade-off factors must be non-negative and sum to 1");
    }
    if (!(eps > 0.0)) {
        throw StructuralError("PriorityBuffer: epsilon must be positive");
    }
    entries_.reserve(std::min<std::size_t>(capacity_, 1 << 16));
}

double PriorityBuffer::max_priority() const {
    double m = 0.0;
    for (const auto& e : entries_) {
        m = std::max(m, e.priority);
    }
    return m;
}

void PriorityBuffer::push(Experience exp) {
    exp.validate();
    const double p = entries_.empty() ? eps_ : max_priority();
    Entry entry{std::move(exp), p, next_serial_++};
    if (entries_.size() < capacity_) {
        entries_.push_back(std::move(entry));
    } else {
        entries_[next_slot_] = std::move(entry);
    }
    next_slot_ = (next_slot_ + 1) % capacity_;
}

Batch PriorityBuffer::sample(std::size_t n, Rng& rng) const {
    if (!ready(n)) {
        throw NotReadyError("PriorityBuffer::sample: " + std::to_string(size()) +
                            " experiences stored, " + std::to_string(n) + " requested");
    }
    std::vector<double> cumulative(entries_.size());
    double total = 0.0;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        total += entries_[i].priority;
        cumulative[i] = total;
    }
    std::uniform_real_distribution<double> dist(0.0, total);
    Batch batch;
    batch.refs.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double u = dist(rng);
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        const auto slot = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()),
                                                entries_.size() - 1);
        const auto& e = entries_[slot];
        batch.refs.push_back({slot, e.serial});
        batch.items.push_back(&e.exp);
        batch.priorities.push_back(e.priority);
        batch.probabilities.push_back(e.priority / total);
    }
    return batch;
}

void PriorityBuffer::update_priorities(std::span<const SampleRef> refs,
                                       std::span<const double> rewards,
                                       std::span<const double> td_errors) {
    if (refs.size() != rewards.size() || refs.size() != td_errors.size()) {
        throw StructuralError("update_priorities: argument lengths differ");
    }
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const auto& ref = refs[i];
        if (ref.slot >= entries_.size() || entries_[ref.slot].serial != ref.serial) {
            ++stale_updates_;
            continue;
        }
        entries_[ref.slot].priority = priority(rewards[i], td_errors[i], nu_r_, nu_delta_, eps_);
    }
}

std::vector<double> PriorityBuffer::priorities() const {
    std::vector<double> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) {
        out.push_back(e.priority);
    }
    return out;
}

std::vector<double> PriorityBuffer::probabilities() const {
    auto p = priorities();
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    for (auto& v : p) {
        v /= total;
    }
    return p;
}

std::vector<std::size_t> PriorityBuffer::priority_histogram(std::size_t bins) const {
    std::vector<std::size_t> counts(bins, 0);
    if (entries_.empty() || bins == 0) {
        return counts;
    }
    const auto p = priorities();
    const auto [lo_it, hi_it] = std::minmax_element(p.begin(), p.end());
    const double lo = *lo_it;
    const double width = *hi_it - lo;
    for (double v : p) {
        std::size_t b = width > 0.0 ? static_cast<std::size_t>((v - lo) / width * static_cast<double>(bins)) : 0;
        counts[std::min(b, bins - 1)]++;
    }
    return counts;
}

} // namespace ucms::replay
