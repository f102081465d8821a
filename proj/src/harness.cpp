#include "ucms/harness.hpp"

#include "ucms/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

extern char** environ;

namespace ucms::harness {

namespace fs = std::filesystem;

// --- presets -----------------------------------------------------------------

void ExperimentPreset::validate() const {
    if (name.empty()) {
        throw ValidationError("preset name must be nonempty");
    }
    std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
    if (unique.size() != seeds.size()) {
        throw ValidationError("preset '" + name + "' lists a seed twice");
    }
    if (policies.empty()) {
        throw ValidationError("preset '" + name + "' has no policies");
    }
    env.validate();
    train.validate();
}

std::vector<std::uint64_t> seed_range(int n) {
    if (n < 1) {
        throw ValidationError("need at least one seed");
    }
    std::vector<std::uint64_t> s(static_cast<std::size_t>(n));
    std::iota(s.begin(), s.end(), std::uint64_t{1});
    return s;
}

std::vector<std::string> preset_names() { return {"full", "smoke", "stress"}; }

ExperimentPreset preset(const std::string& name) {
    ExperimentPreset p;
    p.name = name;
    p.policies = train::all_policies();
    p.seeds = seed_range(10);
    p.output_dir = fs::path("runs") / name;
    p.train.reward_scale = 0.01;

    if (name == "full") {
        // EnvConfig and TrainConfig defaults throughout.
    } else if (name == "smoke") {
        p.env.num_users = 6;
        p.env.num_servers = 2;
        p.env.z_max = 4;
        p.env.cpus_per_server = 2;
        p.env.subchannels = 4;
        p.env.storage_bits = 100.0 * 8e6;
        p.train.episodes = 300;
        p.train.updates_per_episode = 5;
    } else if (name == "stress") {
        p.env.battery_j = {0.5, 1.0};
        p.env.rho1 = 1.0;
        p.env.rho2 = 5.0;
        p.env.slots = 100;
    } else {
        throw ValidationError("unknown preset '" + name + "'");
    }
    p.validate();
    return p;
}

// --- smoothing -----------------------------------------------------------------

std::vector<double> smooth(const std::vector<double>& series, int window, int polyorder,
                           std::ostream* warn) {
    if (window < 1 || window % 2 == 0) {
        throw ValidationError("smooth: window must be a positive odd number");
    }
    if (polyorder < 0 || polyorder >= window) {
        throw ValidationError("smooth: need 0 <= polyorder < window");
    }
    const auto n = static_cast<int>(series.size());
    if (n < window) {
        if (warn != nullptr) {
            *warn << "warning: series of length " << n << " is shorter than the smoothing window "
                  << window << "; left unsmoothed\n";
        }
        return series;
    }

    // Centred abscissae keep the Vandermonde system well conditioned.
    const int half = window / 2;
    Eigen::MatrixXd vander(window, polyorder + 1);
    for (int r = 0; r < window; ++r) {
        double x = 1.0;
        for (int c = 0; c <= polyorder; ++c) {
            vander(r, c) = x;
            x *= static_cast<double>(r - half);
        }
    }
    // Row j of `proj` maps window samples to the fitted value at offset j.
    const Eigen::MatrixXd fit = vander.colPivHouseholderQr().solve(Eigen::MatrixXd::Identity(window, window));
    const Eigen::MatrixXd proj = vander * fit;

    std::vector<double> out(series.size());
    for (int i = 0; i < n; ++i) {
        const int start = std::clamp(i - half, 0, n - window);
        const Eigen::Map<const Eigen::VectorXd> y(series.data() + start, window);
        out[static_cast<std::size_t>(i)] = proj.row(i - start).dot(y);
    }
    return out;
}

std::vector<double> downsample(const std::vector<double>& series, int every) {
    if (every < 1) {
        throw ValidationError("downsample: step must be positive");
    }
    std::vector<double> out;
    for (std::size_t i = static_cast<std::size_t>(every - 1); i < series.size();
         i += static_cast<std::size_t>(every)) {
        out.push_back(series[i]);
    }
    return out;
}

// --- metrics -----------------------------------------------------------------

const std::vector<std::string>& metrics_columns() {
    static const std::vector<std::string> cols{
        "policy",        "seed",          "episode",          "mean_reward",
        "mean_cost",     "timeout_pct",   "participation_pct", "below_bmin_pct",
        "actor_loss",    "critic_loss",   "noise_scale"};
    return cols;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void MetricsTable::add(const std::string& policy, std::uint64_t seed, const train::EpisodeMetrics& m) {
    const auto key = std::make_tuple(policy, seed, m.episode);
    if (index_.count(key) != 0) {
        throw StructuralError("metrics table: duplicate row for " + policy + " seed " +
                              std::to_string(seed) + " episode " + std::to_string(m.episode));
    }
    index_[key] = rows_.size();
    rows_.push_back({policy, seed, m});
}

void MetricsTable::append(const MetricsTable& other) {
    for (const auto& r : other.rows_) {
        add(r.policy, r.seed, r.m);
    }
}

std::vector<std::string> MetricsTable::policies() const {
    std::vector<std::string> out;
    for (const auto& r : rows_) {
        if (std::find(out.begin(), out.end(), r.policy) == out.end()) {
            out.push_back(r.policy);
        }
    }
    return out;
}

std::vector<std::uint64_t> MetricsTable::seeds(const std::string& policy) const {
    std::set<std::uint64_t> s;
    for (const auto& r : rows_) {
        if (r.policy == policy) {
            s.insert(r.seed);
        }
    }
    return {s.begin(), s.end()};
}

std::vector<train::EpisodeMetrics> MetricsTable::run(const std::string& policy, std::uint64_t seed) const {
    std::vector<train::EpisodeMetrics> out;
    for (const auto& r : rows_) {
        if (r.policy == policy && r.seed == seed) {
            out.push_back(r.m);
        }
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.episode < b.episode; });
    return out;
}

void MetricsTable::write_csv(std::ostream& out) const {
    const auto& cols = metrics_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) {
        out << (i ? "," : "") << cols[i];
    }
    out << '\n';
    for (const auto& r : rows_) {
        const auto& m = r.m;
        out << r.policy << ',' << r.seed << ',' << m.episode << ',' << format_double(m.mean_reward) << ','
            << format_double(m.mean_cost) << ',' << format_double(m.timeout_pct) << ','
            << format_double(m.participation_pct) << ',' << format_double(m.below_bmin_pct) << ','
            << format_double(m.actor_loss) << ',' << format_double(m.critic_loss) << ','
            << format_double(m.noise_scale) << '\n';
    }
}

void MetricsTable::write_csv(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    write_csv(out);
}

MetricsTable MetricsTable::read_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) {
        throw StructuralError("metrics CSV: missing header");
    }
    std::string expected;
    for (const auto& c : metrics_columns()) {
        expected += (expected.empty() ? "" : ",") + c;
    }
    if (line != expected) {
        throw StructuralError("metrics CSV: unexpected header '" + line + "'");
    }
    MetricsTable t;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            f.push_back(cell);
        }
        if (f.size() != metrics_columns().size()) {
            throw StructuralError("metrics CSV: row has " + std::to_string(f.size()) + " fields");
        }
        try {
            train::EpisodeMetrics m;
            m.episode = std::stoi(f[2]);
            m.mean_reward = std::stod(f[3]);
            m.mean_cost = std::stod(f[4]);
            m.timeout_pct = std::stod(f[5]);
            m.participation_pct = std::stod(f[6]);
            m.below_bmin_pct = std::stod(f[7]);
            m.actor_loss = std::stod(f[8]);
            m.critic_loss = std::stod(f[9]);
            m.noise_scale = std::stod(f[10]);
            t.add(f[0], std::stoull(f[1]), m);
        } catch (const std::logic_error& e) {
            if (dynamic_cast<const StructuralError*>(&e) != nullptr) {
                throw;
            }
            throw StructuralError("metrics CSV: bad number in row '" + line + "'");
        }
    }
    return t;
}

MetricsTable MetricsTable::read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read " + path.string());
    }
    return read_csv(in);
}

double final_window_mean(const std::vector<train::EpisodeMetrics>& run, int window) {
    if (run.empty() || window < 1) {
        throw StructuralError("final_window_mean: empty run or window");
    }
    const auto w = std::min<std::size_t>(run.size(), static_cast<std::size_t>(window));
    double s = 0.0;
    for (std::size_t i = run.size() - w; i < run.size(); ++i) {
        s += run[i].mean_reward;
    }
    return s / static_cast<double>(w);
}

Summary aggregate(const MetricsTable& table, int final_window) {
    Summary s;
    s.final_window = final_window;
    std::map<std::string, std::map<std::uint64_t, double>> finals;

    for (const auto& policy : table.policies()) {
        std::vector<std::vector<train::EpisodeMetrics>> runs;
        for (auto seed : table.seeds(policy)) {
            runs.push_back(table.run(policy, seed));
            finals[policy][seed] = final_window_mean(runs.back(), final_window);
        }
        const auto& ref = runs.front();
        for (const auto& r : runs) {
            if (r.size() != ref.size()) {
                throw StructuralError("aggregate: runs of " + policy + " have different lengths");
            }
            for (std::size_t i = 0; i < r.size(); ++i) {
                if (r[i].episode != ref[i].episode) {
                    throw StructuralError("aggregate: runs of " + policy + " cover different episodes");
                }
            }
        }
        SeriesStats rew;
        SeriesStats cost;
        const double k = static_cast<double>(runs.size());
        for (std::size_t i = 0; i < ref.size(); ++i) {
            double mr = 0.0;
            double mc = 0.0;
            for (const auto& r : runs) {
                mr += r[i].mean_reward;
                mc += r[i].mean_cost;
            }
            mr /= k;
            mc /= k;
            double vr = 0.0;
            double vc = 0.0;
            for (const auto& r : runs) {
                vr += (r[i].mean_reward - mr) * (r[i].mean_reward - mr);
                vc += (r[i].mean_cost - mc) * (r[i].mean_cost - mc);
            }
            rew.episodes.push_back(ref[i].episode);
            rew.mean.push_back(mr);
            rew.stddev.push_back(std::sqrt(vr / k));
            cost.episodes.push_back(ref[i].episode);
            cost.mean.push_back(mc);
            cost.stddev.push_back(std::sqrt(vc / k));
        }
        s.reward[policy] = std::move(rew);
        s.cost[policy] = std::move(cost);
    }

    const auto ucms = train::to_string(train::Policy::Ucms);
    if (finals.count(ucms) != 0) {
        for (const auto& [policy, by_seed] : finals) {
            if (policy == ucms) {
                continue;
            }
            int wins = 0;
            int shared = 0;
            for (const auto& [seed, value] : by_seed) {
                auto it = finals[ucms].find(seed);
                if (it == finals[ucms].end()) {
                    continue;
                }
                ++shared;
                wins += it->second > value ? 1 : 0;
            }
            if (shared > 0) {
                s.win_rate[policy] = static_cast<double>(wins) / shared;
            }
        }
    }
    return s;
}

void write_summary_csv(std::ostream& out, const Summary& s) {
    out << "policy,episode,reward_mean,reward_std,cost_mean,cost_std\n";
    for (const auto& [policy, rew] : s.reward) {
        const auto& cost = s.cost.at(policy);
        for (std::size_t i = 0; i < rew.episodes.size(); ++i) {
            out << policy << ',' << rew.episodes[i] << ',' << format_double(rew.mean[i]) << ','
                << format_double(rew.stddev[i]) << ',' << format_double(cost.mean[i]) << ','
                << format_double(cost.stddev[i]) << '\n';
        }
    }
}

// --- manifests ---------------------------------------------------------------

nlohmann::json to_json(const Manifest& m) {
    nlohmann::json policies = nlohmann::json::array();
    for (auto p : m.policies) {
        policies.push_back(train::to_string(p));
    }
    return {{"schema_version", kManifestSchemaVersion},
            {"artifact_version", kArtifactVersion},
            {"command", m.command},
            {"preset", m.preset},
            {"env", to_json(m.env)},
            {"train", train::to_json(m.train)},
            {"policies", policies},
            {"seeds", m.seeds},
            {"extra", m.extra}};
}

Manifest manifest_from_json(const nlohmann::json& doc) {
    try {
        if (doc.at("schema_version").get<int>() != kManifestSchemaVersion) {
            throw ValidationError("manifest: unsupported schema version");
        }
        Manifest m;
        m.command = doc.at("command").get<std::string>();
        m.preset = doc.value("preset", "");
        m.env = env_config_from_json(doc.at("env"));
        m.train = train::train_config_from_json(doc.at("train"));
        for (const auto& p : doc.at("policies")) {
            m.policies.push_back(train::policy_from_string(p.get<std::string>()));
        }
        m.seeds = doc.at("seeds").get<std::vector<std::uint64_t>>();
        m.extra = doc.value("extra", nlohmann::json::object());
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("manifest: ") + e.what());
    }
}

void write_manifest(const fs::path& path, const Manifest& m) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << to_json(m).dump(2) << '\n';
}

Manifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read " + path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("manifest: ") + e.what());
    }
    return manifest_from_json(doc);
}

// --- overrides ---------------------------------------------------------------

std::vector<std::string> apply_env_overrides(EnvConfig& env, train::TrainConfig& train,
                                             const std::map<std::string, std::string>& vars) {
    const std::string prefix = kEnvPrefix;
    const auto train_keys = train::to_json(train::TrainConfig{});
    std::vector<std::string> applied;
    for (const auto& [name, value] : vars) {
        if (name.rfind(prefix, 0) != 0 || name.size() == prefix.size()) {
            continue;
        }
        std::string key = name.substr(prefix.size());
        std::transform(key.begin(), key.end(), key.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (train_keys.contains(key)) {
            nlohmann::json v;
            try {
                v = nlohmann::json::parse(value);
            } catch (const nlohmann::json::parse_error&) {
                throw ValidationError("override " + name + ": '" + value + "' is not a JSON value");
            }
            train = train::train_config_from_json(nlohmann::json{{key, v}}, train);
        } else {
            apply_override(env, key, value);
        }
        applied.push_back(key);
    }
    env.validate();
    return applied;
}

std::map<std::string, std::string> process_environment() {
    std::map<std::string, std::string> vars;
    for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
        const std::string entry(*e);
        const auto eq = entry.find('=');
        if (eq != std::string::npos && entry.rfind(kEnvPrefix, 0) == 0) {
            vars[entry.substr(0, eq)] = entry.substr(eq + 1);
        }
    }
    return vars;
}

// --- runs ---------------------------------------------------------------------

std::string run_tag(train::Policy p, std::uint64_t seed) {
    return train::to_string(p) + "_seed" + std::to_string(seed);
}

std::vector<train::EpisodeMetrics> run_one(const EnvConfig& env, const train::TrainConfig& cfg,
                                           train::Policy policy, std::uint64_t seed,
                                           const RunOptions& opts) {
    EnvConfig e = env;
    train::TrainConfig t = cfg;
    e.seed = seed;
    t.seed = seed;
    const auto tag = run_tag(policy, seed);
    fs::create_directories(opts.out_dir);

    std::ofstream trace;
    std::ofstream histogram;
    train::TrainHooks hooks;
    if (opts.verbose) {
        trace.open(opts.out_dir / ("trace_" + tag + ".jsonl"));
        hooks.trace = &trace;
    }
    if (opts.dump_priorities) {
        histogram.open(opts.out_dir / ("priorities_" + tag + ".csv"));
        histogram << "update,bin0,bin1,bin2,bin3,bin4,bin5,bin6,bin7,bin8,bin9\n";
        hooks.priority_histogram = &histogram;
    }
    hooks.abort_checkpoint = (opts.out_dir / ("checkpoint_" + tag + ".aborted.bin")).string();
    if (opts.progress != nullptr) {
        const int every = std::max(1, t.episodes / 10);
        hooks.on_episode = [&, every](const train::EpisodeMetrics& m) {
            if (m.episode % every == 0 || m.episode == t.episodes) {
                *opts.progress << tag << " episode " << m.episode << "/" << t.episodes
                               << " reward " << m.mean_reward << '\n';
            }
        };
    }

    train::Trainer trainer(e, t, policy);
    auto log = trainer.train(hooks);

    MetricsTable table;
    for (const auto& m : log) {
        table.add(train::to_string(policy), seed, m);
    }
    table.write_csv(opts.out_dir / ("metrics_" + tag + ".csv"));
    if (opts.checkpoint) {
        nn::save_checkpoint((opts.out_dir / ("checkpoint_" + tag + ".bin")).string(),
                            trainer.bundle().named_networks());
    }
    return log;
}

MetricsTable run_compare(const Manifest& m, const RunOptions& opts) {
    MetricsTable all;
    for (auto policy : m.policies) {
        for (auto seed : m.seeds) {
            const auto log = run_one(m.env, m.train, policy, seed, opts);
            for (const auto& row : log) {
                all.add(train::to_string(policy), seed, row);
            }
        }
    }
    all.write_csv(opts.out_dir / "metrics.csv");
    if (all.size() > 0) {
        std::ofstream out(opts.out_dir / "summary.csv");
        write_summary_csv(out, aggregate(all));
    }
    return all;
}

std::vector<int> sweep_users_list(int lo, int hi, int step) {
    if (lo < 1 || hi < lo || step < 1) {
        throw ValidationError("sweep: need 1 <= lo <= hi and step >= 1");
    }
    std::vector<int> out;
    for (int n = lo; n <= hi; n += step) {
        out.push_back(n);
    }
    return out;
}

std::vector<SweepPoint> run_sweep(const Manifest& m, const RunOptions& opts) {
    const auto users = m.extra.at("users").get<std::vector<int>>();
    if (m.policies.size() != 1) {
        throw ValidationError("sweep: exactly one policy expected");
    }
    std::vector<SweepPoint> points;
    for (int n : users) {
        EnvConfig env = m.env;
        env.num_users = n;
        RunOptions sub = opts;
        sub.out_dir = opts.out_dir / ("users_" + std::to_string(n));
        std::vector<double> costs;
        double reward = 0.0;
        for (auto seed : m.seeds) {
            const auto log = run_one(env, m.train, m.policies.front(), seed, sub);
            double c = 0.0;
            double r = 0.0;
            for (const auto& row : log) {
                c += row.mean_cost;
                r += row.mean_reward;
            }
            const double k = static_cast<double>(std::max<std::size_t>(log.size(), 1));
            costs.push_back(c / k);
            reward += r / k;
        }
        SweepPoint p;
        p.num_users = n;
        const double k = static_cast<double>(costs.size());
        p.mean_cost = std::accumulate(costs.begin(), costs.end(), 0.0) / k;
        double var = 0.0;
        for (double c : costs) {
            var += (c - p.mean_cost) * (c - p.mean_cost);
        }
        p.std_cost = std::sqrt(var / k);
        p.mean_reward = reward / k;
        points.push_back(p);
    }
    std::ofstream out(opts.out_dir / "sweep.csv");
    write_sweep_csv(out, points);
    return points;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepPoint>& pts) {
    out << "num_users,mean_cost,std_cost,mean_reward\n";
    for (const auto& p : pts) {
        out << p.num_users << ',' << format_double(p.mean_cost) << ',' << format_double(p.std_cost)
            << ',' << format_double(p.mean_reward) << '\n';
    }
}

void write_plot_script(const fs::path& path) {
    static const char* script = R"PY(#!/usr/bin/env python3
"""Plot training curves and sweeps from a run directory.

usage: plot.py RUN_DIR [--window 21] [--polyorder 3] [--every 100]
"""
import argparse
import csv
import os
from collections import defaultdict

import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt


def savgol(y, window, polyorder):
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n < window:
        return y
    half = window // 2
    x = np.arange(window) - half
    vander = np.vander(x, polyorder + 1, increasing=True)
    proj = vander @ np.linalg.pinv(vander)
    out = np.empty(n)
    for i in range(n):
        start = min(max(i - half, 0), n - window)
        out[i] = proj[i - start] @ y[start:start + window]
    return out


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def plot_metrics(run_dir, args):
    path = os.path.join(run_dir, "metrics.csv")
    if not os.path.exists(path):
        files = [f for f in os.listdir(run_dir) if f.startswith("metrics_") and f.endswith(".csv")]
        rows = [r for f in sorted(files) for r in read_rows(os.path.join(run_dir, f))]
    else:
        rows = read_rows(path)
    if not rows:
        return
    for column in ("mean_reward", "mean_cost", "timeout_pct", "participation_pct", "below_bmin_pct"):
        series = defaultdict(lambda: defaultdict(list))
        for r in rows:
            series[r["policy"]][int(r["episode"])].append(float(r[column]))
        plt.figure(figsize=(7, 4))
        for policy, by_ep in sorted(series.items()):
            eps = sorted(by_ep)
            mean = np.array([np.mean(by_ep[e]) for e in eps])
            std = np.array([np.std(by_ep[e]) for e in eps])
            sm = savgol(mean, args.window, args.polyorder)
            step = args.every if len(eps) >= 2 * args.every else 1
            idx = np.arange(step - 1, len(eps), step)
            xs = np.array(eps)[idx]
            plt.plot(xs, sm[idx], label=policy)
            plt.fill_between(xs, (sm - std)[idx], (sm + std)[idx], alpha=0.2)
        plt.xlabel("episode")
        plt.ylabel(column)
        plt.legend()
        plt.tight_layout()
        plt.savefig(os.path.join(run_dir, column + ".png"), dpi=120)
        plt.close()


def plot_sweep(run_dir):
    path = os.path.join(run_dir, "sweep.csv")
    if not os.path.exists(path):
        return
    rows = read_rows(path)
    n = [int(r["num_users"]) for r in rows]
    c = [float(r["mean_cost"]) for r in rows]
    s = [float(r["std_cost"]) for r in rows]
    plt.figure(figsize=(6, 4))
    plt.errorbar(n, c, yerr=s, marker="o")
    plt.xlabel("number of users")
    plt.ylabel("mean total cost per slot")
    plt.tight_layout()
    plt.savefig(os.path.join(run_dir, "sweep.png"), dpi=120)
    plt.close()


def main():
    p = argparse.ArgumentParser()
    p.add_argument("run_dir")
    p.add_argument("--window", type=int, default=21)
    p.add_argument("--polyorder", type=int, default=3)
    p.add_argument("--every", type=int, default=100)
    args = p.parse_args()
    plot_metrics(args.run_dir, args)
    plot_sweep(args.run_dir)


if __name__ == "__main__":
    main()
)PY";
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << script;
    out.close();
    fs::permissions(path, fs::perms::owner_exec | fs::perms::group_exec | fs::perms::others_exec,
                    fs::perm_options::add);
}

} // namespace ucms::harness
