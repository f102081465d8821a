#include "ucms/verify.hpp"

#include "ucms/errors.hpp"
#include "ucms/hybrid.hpp"
#include "ucms/replay.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace ucms::verify {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

} // namespace

void Report::fail(std::string what) {
    passed = false;
    if (failures.size() < 10) {
        failures.push_back(std::move(what));
    }
}

std::vector<sim::ScheduledJob> naive_schedule(const std::vector<sim::OffloadJob>& jobs,
                                              const std::vector<double>& cpu_free_times) {
    std::vector<double> free = cpu_free_times;
    std::vector<bool> started(jobs.size(), false);
    std::vector<sim::ScheduledJob> out;
    double now = -std::numeric_limits<double>::infinity();

    while (out.size() < jobs.size()) {
        // Head of the FIFO queue: earliest unstarted arrival, ties by user.
        std::size_t head = jobs.size();
        for (std::size_t j = 0; j < jobs.size(); ++j) {
            if (started[j]) {
                continue;
            }
            if (head == jobs.size() || jobs[j].arrival_s < jobs[head].arrival_s ||
                (jobs[j].arrival_s == jobs[head].arrival_s && jobs[j].user < jobs[head].user)) {
                head = j;
            }
        }
        std::size_t idle = free.size();
        for (std::size_t c = 0; c < free.size(); ++c) {
            if (free[c] <= now) {
                idle = c;
                break;
            }
        }
        if (jobs[head].arrival_s <= now && idle < free.size()) {
            sim::ScheduledJob s;
            s.user = jobs[head].user;
            s.arrival_s = jobs[head].arrival_s;
            s.processing_s = jobs[head].processing_s;
            s.cpu_free_s = free[idle];
            s.start_s = now;
            s.finish_s = now + jobs[head].processing_s;
            free[idle] = s.finish_s;
            started[head] = true;
            out.push_back(s);
            continue;
        }
        // Advance to the next arrival or completion.
        double next = std::numeric_limits<double>::infinity();
        if (jobs[head].arrival_s > now) {
            next = jobs[head].arrival_s;
        }
        for (double f : free) {
            if (f > now) {
                next = std::min(next, f);
            }
        }
        if (!std::isfinite(next)) {
            throw StructuralError("naive_schedule: no CPUs");
        }
        now = next;
    }
    return out;
}

Report queue_oracle(std::size_t instances, std::uint64_t seed, int max_tasks, int max_cpus) {
    Report r;
    r.name = "queue_oracle";
    const auto start = Clock::now();
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < instances; ++i) {
        const int n = uniform_int(rng, 0, max_tasks);
        const int cpus = uniform_int(rng, 1, max_cpus);
        std::vector<sim::OffloadJob> jobs;
        // Some instances use coarse arrival grids so ties actually occur.
        const bool coarse = uniform_int(rng, 0, 1) == 1;
        for (int u = 0; u < n; ++u) {
            double a = uniform(rng, 0.0, 2.0);
            double p = uniform(rng, 0.01, 1.0);
            if (coarse) {
                a = std::floor(a * 4.0) / 4.0;
                p = std::floor(p * 8.0 + 1.0) / 8.0;
            }
            jobs.push_back({u, a, p});
        }
        std::shuffle(jobs.begin(), jobs.end(), rng);

        std::vector<double> free(static_cast<std::size_t>(cpus), 0.0);
        const auto fast = sim::schedule_server(jobs, free);
        const auto slow = naive_schedule(jobs, std::vector<double>(static_cast<std::size_t>(cpus), 0.0));
        ++r.cases;
        if (fast.size() != slow.size()) {
            r.fail("instance " + std::to_string(i) + ": job counts differ");
            continue;
        }
        for (std::size_t k = 0; k < fast.size(); ++k) {
            if (fast[k].user != slow[k].user || fast[k].start_s != slow[k].start_s ||
                fast[k].finish_s != slow[k].finish_s) {
                std::ostringstream os;
                os.precision(17);
                os << "instance " << i << " position " << k << ": user " << fast[k].user << " finish "
                   << fast[k].finish_s << " vs oracle user " << slow[k].user << " finish "
                   << slow[k].finish_s;
                r.fail(os.str());
                break;
            }
        }
    }
    r.seconds = elapsed(start);
    return r;
}

Report matching_invariants(std::size_t instances, std::uint64_t seed, const EnvConfig& cfg) {
    Report r;
    r.name = "matching_invariants";
    const auto start = Clock::now();
    std::mt19937_64 rng(seed);
    std::size_t max_rounds = 0;
    const int n = cfg.num_users;
    const int m = cfg.num_servers;

    for (std::size_t i = 0; i < instances; ++i) {
        std::vector<sim::TaskSpec> tasks;
        std::vector<sim::DeviceState> devices;
        for (int u = 0; u < n; ++u) {
            tasks.push_back(sim::generate_task(rng, cfg));
            sim::DeviceState d;
            d.local_freq_hz = uniform(rng, cfg.local_freq_hz.lo, cfg.local_freq_hz.hi);
            d.tx_power_dbm = uniform(rng, cfg.tx_power_dbm.lo, cfg.tx_power_dbm.hi);
            d.battery_j = cfg.battery_j.hi;
            d.kappa = cfg.kappa;
            for (int s = 0; s < m; ++s) {
                d.gains_db.push_back(uniform(rng, cfg.gain_db.lo, cfg.gain_db.hi));
            }
            devices.push_back(std::move(d));
        }
        const auto inst = coselect::make_instance(tasks, devices, cfg);
        const auto res = coselect::co_select(inst);
        const auto& mt = res.matching;
        ++r.cases;
        const std::string tag = "instance " + std::to_string(i) + ": ";
        max_rounds = std::max(max_rounds, res.rounds.size());

        if (res.rounds.size() > static_cast<std::size_t>(n)) {
            r.fail(tag + std::to_string(res.rounds.size()) + " rounds exceed N");
        }
        std::vector<int> seen(static_cast<std::size_t>(n), 0);
        for (int s = 0; s < m; ++s) {
            const auto& roster = mt.rosters[static_cast<std::size_t>(s)];
            if (static_cast<int>(roster.size()) > cfg.z_max) {
                r.fail(tag + "roster of server " + std::to_string(s) + " exceeds z_max");
            }
            for (int u : roster) {
                ++seen[static_cast<std::size_t>(u)];
                if (mt.assignment[static_cast<std::size_t>(u)] != s) {
                    r.fail(tag + "roster and assignment disagree for user " + std::to_string(u));
                }
            }
        }
        for (int u : mt.local_only()) {
            ++seen[static_cast<std::size_t>(u)];
        }
        for (int u = 0; u < n; ++u) {
            if (seen[static_cast<std::size_t>(u)] != 1) {
                r.fail(tag + "user " + std::to_string(u) + " placed " +
                       std::to_string(seen[static_cast<std::size_t>(u)]) + " times");
            }
        }
        if (n <= m * cfg.z_max && !mt.local_only().empty()) {
            r.fail(tag + "users left local-only while capacity remained");
        }
        for (std::size_t k = 0; k < res.rounds.size(); ++k) {
            const auto& log = res.rounds[k];
            for (int s = 0; s < m; ++s) {
                double worst_accepted = -std::numeric_limits<double>::infinity();
                double best_rejected = std::numeric_limits<double>::infinity();
                for (const auto& a : log.accepted) {
                    if (a.server == s) {
                        worst_accepted = std::max(worst_accepted, coselect::server_selection_value(inst, a.user, s));
                    }
                }
                for (const auto& a : log.rejected) {
                    if (a.server == s) {
                        best_rejected = std::min(best_rejected, coselect::server_selection_value(inst, a.user, s));
                    }
                }
                if (worst_accepted > best_rejected) {
                    r.fail(tag + "round " + std::to_string(k) + " server " + std::to_string(s) +
                           " accepted a worse applicant than it rejected");
                }
            }
        }
    }
    r.seconds = elapsed(start);
    r.detail = "max rounds " + std::to_string(max_rounds);
    return r;
}

Report gradient_check(const std::vector<int>& widths, nn::Activation hidden, nn::Activation output,
                      std::uint64_t seed, const GradCheckOptions& opts) {
    Report r;
    r.name = "gradient_check";
    const auto start = Clock::now();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    double worst = 0.0;
    std::size_t skipped = 0;
    std::size_t probes = 0;

    for (int k = 0; k < opts.nets; ++k) {
        nn::Mlp net(widths, hidden, output, rng);
        nn::Matrix x(widths.front(), opts.batch);
        nn::Matrix c(widths.back(), opts.batch);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
        for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = normal(rng);

        const nn::Tape tape = net.forward_tape(x);
        // Central differences are meaningless across a ReLU kink, so a probe
        // that flips any hidden activation pattern is reported as skipped.
        auto same_pattern = [&](const nn::Tape& t) {
            if (hidden != nn::Activation::Relu) {
                return true;
            }
            for (std::size_t l = 1; l + 1 < t.values.size(); ++l) {
                if (((t.values[l].array() > 0.0) != (tape.values[l].array() > 0.0)).any()) {
                    return false;
                }
            }
            return true;
        };
        bool kink = false;
        auto loss = [&](const nn::Matrix& input) {
            const nn::Tape t = net.forward_tape(input);
            kink = kink || !same_pattern(t);
            return c.cwiseProduct(t.output()).sum();
        };
        nn::Matrix input_grad;
        const nn::Params grads = net.backward(tape, c, &input_grad);

        // Flat views of every parameter and its analytic gradient.
        std::vector<double*> slots;
        std::vector<double> analytic;
        for (std::size_t l = 0; l < grads.size(); ++l) {
            auto& layer = net.params()[l];
            for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
                slots.push_back(layer.weight.data() + i);
                analytic.push_back(grads[l].weight.data()[i]);
            }
            for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
                slots.push_back(layer.bias.data() + i);
                analytic.push_back(grads[l].bias.data()[i]);
            }
        }
        std::vector<std::size_t> picks(slots.size());
        probes += std::min(slots.size(), opts.sampled_params) + static_cast<std::size_t>(x.size());
        std::iota(picks.begin(), picks.end(), std::size_t{0});
        if (picks.size() > opts.sampled_params) {
            std::vector<std::size_t> chosen;
            std::sample(picks.begin(), picks.end(), std::back_inserter(chosen), opts.sampled_params, rng);
            picks = std::move(chosen);
        }

        double diff2 = 0.0;
        double a2 = 0.0;
        double n2 = 0.0;
        auto accumulate = [&](double a, double num) {
            diff2 += (a - num) * (a - num);
            a2 += a * a;
            n2 += num * num;
        };
        for (std::size_t idx : picks) {
            double* p = slots[idx];
            const double saved = *p;
            kink = false;
            *p = saved + opts.step;
            const double plus = loss(x);
            *p = saved - opts.step;
            const double minus = loss(x);
            *p = saved;
            if (kink) {
                ++skipped;
                continue;
            }
            accumulate(analytic[idx], (plus - minus) / (2.0 * opts.step));
        }
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            nn::Matrix xp = x;
            nn::Matrix xm = x;
            xp.data()[i] += opts.step;
            xm.data()[i] -= opts.step;
            kink = false;
            const double numeric = (loss(xp) - loss(xm)) / (2.0 * opts.step);
            if (kink) {
                ++skipped;
                continue;
            }
            accumulate(input_grad.data()[i], numeric);
        }
        const double denom = std::sqrt(a2) + std::sqrt(n2);
        const double rel = denom > 0.0 ? std::sqrt(diff2) / denom : 0.0;
        worst = std::max(worst, std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity());
        ++r.cases;
        if (!(rel < opts.tolerance)) {
            std::ostringstream os;
            os << "net " << k << ": relative error " << rel;
            r.fail(os.str());
        }
    }
    std::ostringstream os;
    os << "max relative error " << worst << ", " << skipped << " of " << probes
       << " probes skipped at ReLU kinks";
    r.detail = os.str();
    r.seconds = elapsed(start);
    return r;
}

std::vector<NetShape> deployed_shapes(const EnvConfig& cfg, const std::vector<int>& hidden) {
    const int s = hybrid::state_dim(cfg.num_servers);
    const int stride = s + hybrid::kActionDim;
    const int critic_in = cfg.z_max * stride + stride;
    auto widths = [&](int in, int out) {
        std::vector<int> w{in};
        w.insert(w.end(), hidden.begin(), hidden.end());
        w.push_back(out);
        return w;
    };
    return {{"actor", widths(s, hybrid::kActionDim), nn::Activation::Relu, nn::Activation::Sigmoid},
            {"critic", widths(critic_in, 1), nn::Activation::Relu, nn::Activation::Identity}};
}

Report sampling_law(int vectors, std::size_t draws, double alpha, std::uint64_t seed) {
    Report r;
    r.name = "sampling_law";
    const auto start = Clock::now();
    std::mt19937_64 rng(seed);
    const double per_test = alpha / vectors;
    double worst_p = 1.0;

    for (int v = 0; v < vectors; ++v) {
        const int k = uniform_int(rng, 2, 40);
        const double nu_r = uniform(rng, 0.0, 1.0);
        const double eps = 1e-6;
        replay::PriorityBuffer buffer(static_cast<std::size_t>(k), nu_r, 1.0 - nu_r, eps);
        for (int i = 0; i < k; ++i) {
            replay::Experience e;
            e.num_users = 1;
            e.state_dim = 1;
            e.states = {0.0};
            e.next_states = {0.0};
            e.actions = {hybrid::UserAction{}};
            e.approved = {0};
            e.assignment = {-1};
            e.rewards = {0.0};
            buffer.push(std::move(e));
        }
        std::vector<replay::SampleRef> refs;
        std::vector<double> rewards;
        std::vector<double> tds;
        for (int i = 0; i < k; ++i) {
            refs.push_back({static_cast<std::size_t>(i), buffer.serial_at(static_cast<std::size_t>(i))});
            rewards.push_back(-uniform(rng, 0.2, 5.0));
            tds.push_back(uniform(rng, 0.0, 5.0));
        }
        buffer.update_priorities(refs, rewards, tds);

        // Expected law recomputed from the composite priority formula.
        std::vector<double> expected(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) {
            const auto u = static_cast<std::size_t>(i);
            expected[u] = nu_r * (std::abs(rewards[u]) + eps) + (1.0 - nu_r) * (std::abs(tds[u]) + eps);
        }
        const double total = std::accumulate(expected.begin(), expected.end(), 0.0);

        std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
        std::size_t remaining = draws;
        while (remaining > 0) {
            const std::size_t n = std::min<std::size_t>(remaining, buffer.size());
            const auto batch = buffer.sample(n, rng);
            for (const auto& ref : batch.refs) {
                counts[ref.slot] += 1.0;
            }
            remaining -= n;
        }
        double stat = 0.0;
        for (std::size_t i = 0; i < counts.size(); ++i) {
            const double e = static_cast<double>(draws) * expected[i] / total;
            stat += (counts[i] - e) * (counts[i] - e) / e;
        }
        boost::math::chi_squared dist(k - 1);
        const double p = boost::math::cdf(boost::math::complement(dist, stat));
        worst_p = std::min(worst_p, p);
        ++r.cases;
        if (p < per_test) {
            std::ostringstream os;
            os << "vector " << v << " (k=" << k << "): chi2 " << stat << " p " << p;
            r.fail(os.str());
        }
    }
    std::ostringstream os;
    os << "min p-value " << worst_p << " vs per-test level " << per_test;
    r.detail = os.str();
    r.seconds = elapsed(start);
    return r;
}

Report environment_invariants(std::size_t slots, std::uint64_t seed, const EnvConfig& base) {
    Report r;
    r.name = "environment_invariants";
    const auto start = Clock::now();
    EnvConfig cfg = base;
    cfg.seed = seed;
    sim::Environment env(cfg);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const auto n = static_cast<std::size_t>(cfg.num_users);
    const double b_max = cfg.battery_j.hi;

    env.reset();
    for (std::size_t t = 0; t < slots; ++t) {
        if (env.done()) {
            env.reset();
        }
        const std::string tag = "slot " + std::to_string(t) + ": ";
        const auto matching = coselect::co_select(coselect::make_instance(env.tasks(), env.devices(), cfg)).matching;

        std::vector<hybrid::MappedAction> mapped;
        for (std::size_t u = 0; u < n; ++u) {
            hybrid::UserAction a{uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0)};
            mapped.push_back(hybrid::map_user_action(a, cfg));
        }
        std::vector<sim::SlotDecision> decisions(n);
        for (int s = 0; s < cfg.num_servers; ++s) {
            const auto& roster = matching.rosters[static_cast<std::size_t>(s)];
            std::vector<hybrid::Candidate> cands;
            std::map<int, double> scores;
            for (int u : roster) {
                if (mapped[static_cast<std::size_t>(u)].offload_request) {
                    cands.push_back({u, env.tasks()[static_cast<std::size_t>(u)].size_bits});
                    scores[u] = uniform(rng, 0.0, 1.0);
                }
            }
            const auto approvals =
                hybrid::refine({cfg.subchannels, cfg.storage_bits, roster}, cands, scores).approvals;
            int offloads = 0;
            double stored = 0.0;
            for (const auto& [u, ok] : approvals) {
                if (ok) {
                    decisions[static_cast<std::size_t>(u)].offload = true;
                    ++offloads;
                    stored += env.tasks()[static_cast<std::size_t>(u)].size_bits;
                }
            }
            if (offloads > cfg.subchannels) {
                r.fail(tag + "server " + std::to_string(s) + " approved more offloads than subchannels");
            }
            if (stored > cfg.storage_bits) {
                r.fail(tag + "server " + std::to_string(s) + " storage exceeded");
            }
            if (static_cast<int>(roster.size()) > cfg.z_max) {
                r.fail(tag + "server " + std::to_string(s) + " roster exceeds z_max");
            }
        }
        for (std::size_t u = 0; u < n; ++u) {
            auto& d = decisions[u];
            d.server = matching.assignment[u];
            d.local_freq_hz = mapped[u].local_freq_hz;
            d.tx_power_dbm = mapped[u].tx_power_dbm;
            if (!cfg.local_freq_hz.contains(d.local_freq_hz)) {
                r.fail(tag + "frequency outside its range for user " + std::to_string(u));
            }
            if (!cfg.tx_power_dbm.contains(d.tx_power_dbm)) {
                r.fail(tag + "power outside its range for user " + std::to_string(u));
            }
        }

        sim::SlotResult res;
        try {
            res = env.advance_slot(decisions);
        } catch (const std::exception& e) {
            r.fail(tag + "environment rejected decisions: " + e.what());
            env.reset();
            continue;
        }
        ++r.cases;
        for (std::size_t u = 0; u < n; ++u) {
            const auto& o = res.outcomes[u];
            if (!(o.penalty <= 0.0)) {
                r.fail(tag + "positive penalty for user " + std::to_string(u));
            }
            if (!(o.battery_after_j >= 0.0 && o.battery_after_j <= b_max)) {
                r.fail(tag + "battery out of bounds for user " + std::to_string(u));
            }
            const double b_next = res.next_devices[u].battery_j;
            if (!(b_next >= 0.0 && b_next <= b_max)) {
                r.fail(tag + "next battery out of bounds for user " + std::to_string(u));
            }
        }
    }
    r.seconds = elapsed(start);
    return r;
}

} // namespace ucms::verify
