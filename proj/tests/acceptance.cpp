// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include "ucms/harness.hpp"
#include "ucms/simcore.hpp"
#include "ucms/verify.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#ifndef UCMS_CLI_PATH
#error "UCMS_CLI_PATH must name the ucms executable"
#endif

using namespace ucms;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, const std::string& title, bool ok, const std::string& detail) {
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << id << " (" << title << "): " << detail
              << std::endl;
    failures += ok ? 0 : 1;
}

double since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string seconds(double s) {
    std::ostringstream o;
    o.precision(3);
    o << s << " s";
    return o.str();
}

std::string first_failure(const verify::Report& r) {
    return r.failures.empty() ? std::string() : "; " + r.failures.front();
}

void oracle(int id, const std::string& title, const verify::Report& r, double limit_s) {
    const bool fast = r.seconds < limit_s;
    report(id, title, r.passed && fast,
           std::to_string(r.cases) + " cases in " + seconds(r.seconds) + " (limit " +
               seconds(limit_s) + ")" + (r.detail.empty() ? "" : ", " + r.detail) + first_failure(r));
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spot_checks() {
    const sim::TaskSpec mb{8e6, 500.0, 1.0};
    const double delay = sim::local_delay(mb, 1e9);
    const double energy = sim::local_energy(mb, 1e9, 5e-27);
    EnvConfig cfg;
    cfg.bandwidth_hz = 40e6;
    cfg.subchannels = 10;
    const double rate = sim::uplink_rate(24.0, 10.0, cfg);
    // 4e6 * log2(1 + 0.251189 * 10) = 4e6 * 1.812248 = 7.24899e6 bps.
    const bool ok = delay == 4.0 && std::abs(energy - 20.0) < 1e-12 &&
                    std::abs(rate - 7.249e6) <= 7.249e6 * 1e-3;
    std::ostringstream d;
    d.precision(10);
    d << "local_delay " << delay << " s, local_energy " << energy << " J, uplink_rate " << rate << " bps";
    report(2, "unit spot-checks", ok, d.str());
}

void gradient_checks(std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    std::size_t nets = 0;
    std::string worst;
    std::vector<verify::NetShape> shapes;
    for (const auto& name : {"full", "smoke", "stress"}) {
        const auto p = harness::preset(name);
        for (auto& s : verify::deployed_shapes(p.env, p.train.hidden)) {
            bool seen = false;
            for (const auto& t : shapes) {
                seen = seen || (t.widths == s.widths && t.output == s.output);
            }
            if (!seen) {
                shapes.push_back(s);
            }
        }
    }
    for (const auto& s : shapes) {
        verify::GradCheckOptions opts;
        opts.nets = 10;
        const auto r = verify::gradient_check(s.widths, s.hidden, s.output, seed, opts);
        nets += r.cases;
        ok = ok && r.passed;
        worst += (worst.empty() ? "" : "; ") + s.name + " " + std::to_string(s.widths.front()) +
                 " inputs: " + r.detail + first_failure(r);
    }
    const double secs = since(t0);
    report(4, "gradient check", ok && secs < 30.0,
           std::to_string(nets) + " nets over " + std::to_string(shapes.size()) + " shapes in " +
               seconds(secs) + " (limit 30 s); " + worst);
}

harness::Manifest smoke_manifest(std::vector<train::Policy> policies) {
    const auto p = harness::preset("smoke");
    harness::Manifest m;
    m.command = "compare";
    m.preset = p.name;
    m.env = p.env;
    m.train = p.train;
    m.policies = std::move(policies);
    m.seeds = harness::seed_range(10);
    return m;
}

void training_criteria(const fs::path& scratch) {
    harness::RunOptions opts;
    opts.checkpoint = false;

    auto t0 = std::chrono::steady_clock::now();
    opts.out_dir = scratch / "ucms";
    const auto ucms = harness::run_compare(smoke_manifest({train::Policy::Ucms}), opts);
    const double ucms_secs = since(t0);

    int improved = 0;
    std::ostringstream d7;
    d7.precision(4);
    for (auto seed : ucms.seeds("UCMS")) {
        const auto run = ucms.run("UCMS", seed);
        double first = 0.0;
        for (int i = 0; i < 50; ++i) {
            first += run[static_cast<std::size_t>(i)].mean_reward / 50.0;
        }
        const double last = harness::final_window_mean(run, 50);
        improved += last > first ? 1 : 0;
        d7 << " s" << seed << ":" << first << "->" << last;
    }
    report(7, "convergence trend", improved >= 9 && ucms_secs < 600.0,
           std::to_string(improved) + "/10 seeds improve, " + seconds(ucms_secs) +
               " (limit 600 s);" + d7.str());

    opts.out_dir = scratch / "rd";
    const auto rd = harness::run_compare(smoke_manifest({train::Policy::RdUcms}), opts);
    int wins = 0;
    std::ostringstream d8;
    d8.precision(4);
    for (auto seed : ucms.seeds("UCMS")) {
        const double a = harness::final_window_mean(ucms.run("UCMS", seed), 50);
        const double b = harness::final_window_mean(rd.run("RD_UCMS", seed), 50);
        wins += a >= b ? 1 : 0;
        d8 << " s" << seed << ":" << a << (a >= b ? ">=" : "<") << b;
    }
    report(8, "co-selection ablation", wins >= 7, std::to_string(wins) + "/10 seeds;" + d8.str());
}

void load_trend(const fs::path& scratch) {
    auto m = smoke_manifest({train::Policy::Ucms});
    m.command = "sweep-users";
    m.seeds = harness::seed_range(5);
    m.train.episodes = 30;
    m.extra = {{"users", {12, 24, 36}}};
    harness::RunOptions opts;
    opts.out_dir = scratch / "sweep";
    opts.checkpoint = false;
    const auto t0 = std::chrono::steady_clock::now();
    const auto pts = harness::run_sweep(m, opts);
    bool ok = pts.size() == 3;
    std::ostringstream d;
    d.precision(6);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        d << (i ? ", " : "") << "N=" << pts[i].num_users << " cost " << pts[i].mean_cost;
        if (i > 0) {
            ok = ok && pts[i].mean_cost > pts[i - 1].mean_cost;
        }
    }
    d << " (5 seeds x 30 episodes, " << seconds(since(t0)) << ")";
    report(9, "load trend", ok, d.str());
}

void determinism(const fs::path& scratch) {
    const std::string cli = UCMS_CLI_PATH;
    const auto a = scratch / "det_a";
    const auto b = scratch / "det_b";
    const std::string quiet = " > /dev/null 2>&1";
    const int rc1 = std::system((cli + " compare --preset smoke --seeds 2 --episodes 12 --out " +
                                 a.string() + quiet).c_str());
    const int rc2 = std::system((cli + " compare --manifest " + (a / "manifest.json").string() +
                                 " --out " + b.string() + quiet).c_str());
    bool ok = rc1 == 0 && rc2 == 0;
    int files = 0;
    if (ok) {
        for (const auto& e : fs::directory_iterator(a)) {
            if (e.path().extension() != ".csv") {
                continue;
            }
            ++files;
            const auto other = b / e.path().filename();
            ok = ok && fs::exists(other) && slurp(e.path()) == slurp(other);
        }
        ok = ok && slurp(a / "manifest.json") == slurp(b / "manifest.json");
    }
    report(10, "determinism", ok && files > 0,
           std::to_string(files) + " CSV files compared byte for byte after a rerun from manifest.json" +
               (rc1 == 0 && rc2 == 0 ? "" : " (CLI exited nonzero)"));
}

} // namespace

int main(int argc, char** argv) {
    const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 1;
    const auto scratch = fs::temp_directory_path() / ("ucms_acceptance_" + std::to_string(seed));
    fs::remove_all(scratch);
    fs::create_directories(scratch);

    oracle(1, "queue oracle", verify::queue_oracle(1000, seed, 64, 8), 5.0);
    spot_checks();
    oracle(3, "matching invariants", verify::matching_invariants(100, seed, EnvConfig{}), 2.0);
    gradient_checks(seed);
    oracle(5, "sampling law", verify::sampling_law(20, 100000, 0.01, seed), 10.0);
    oracle(6, "environment invariants", verify::environment_invariants(10000, seed, EnvConfig{}), 20.0);
    training_criteria(scratch);
    load_trend(scratch);
    determinism(scratch);

    fs::remove_all(scratch);
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
              << std::endl;
    return failures == 0 ? 0 : 1;
}
