#include "ucms/coselect.hpp"
#include "ucms/errors.hpp"
#include "ucms/harness.hpp"
#include "ucms/verify.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace ucms;

namespace {

struct RunFlags {
    std::string config;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::optional<int> seeds;
    std::string out;
    std::string policy;
    bool verbose = false;
    std::optional<int> episodes;
    std::string manifest;
    bool emit_plot_script = false;
    bool dump_priorities = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& f, const std::string& default_preset) {
    f.preset = default_preset;
    cmd->add_option("--config", f.config, "JSON file with optional \"env\" and \"train\" objects")
        ->check(CLI::ExistingFile);
    cmd->add_option("--preset", f.preset, "full, smoke or stress")
        ->check(CLI::IsMember(harness::preset_names()))
        ->capture_default_str();
    cmd->add_option("--seed", f.seed, "first seed");
    cmd->add_option("--seeds", f.seeds, "number of consecutive seeds")->check(CLI::PositiveNumber);
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--policy", f.policy, "UCMS, RD_UCMS, PLAIN_MADDPG, OFFLOADCOST or DEADLINE");
    cmd->add_flag("--verbose", f.verbose, "write a per-slot decision trace");
    cmd->add_option("--episodes", f.episodes, "override the episode count")->check(CLI::NonNegativeNumber);
    cmd->add_option("--manifest", f.manifest, "rerun exactly what a manifest.json describes")
        ->check(CLI::ExistingFile);
    cmd->add_flag("--emit-plot-script", f.emit_plot_script, "write plot.py next to the results");
    cmd->add_flag("--dump-priorities", f.dump_priorities, "write replay priority histograms");
}

// preset -> config file -> UCMS_* variables -> command-line flags
harness::Manifest resolve(const std::string& command, const RunFlags& f,
                          std::vector<train::Policy> default_policies, int default_seeds) {
    const auto p = harness::preset(f.preset);
    harness::Manifest m;
    m.command = command;
    m.preset = p.name;
    m.env = p.env;
    m.train = p.train;
    if (!f.config.empty()) {
        std::ifstream in(f.config);
        nlohmann::json doc;
        try {
            in >> doc;
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError(std::string("config: ") + e.what());
        }
        if (!doc.is_object()) {
            throw ValidationError("config must be a JSON object");
        }
        for (const auto& [key, value] : doc.items()) {
            if (key == "env") {
                m.env = env_config_from_json(value, m.env);
            } else if (key == "train") {
                m.train = train::train_config_from_json(value, m.train);
            } else {
                throw ValidationError("config: unknown section '" + key + "'");
            }
        }
    }
    harness::apply_env_overrides(m.env, m.train, harness::process_environment());
    if (f.episodes) {
        m.train.episodes = *f.episodes;
    }
    m.policies = f.policy.empty() ? std::move(default_policies)
                                  : std::vector<train::Policy>{train::policy_from_string(f.policy)};
    const auto first = f.seed.value_or(1);
    const int count = f.seeds.value_or(default_seeds);
    for (int i = 0; i < count; ++i) {
        m.seeds.push_back(first + static_cast<std::uint64_t>(i));
    }
    m.env.validate();
    m.train.validate();
    return m;
}

fs::path output_dir(const RunFlags& f, const harness::Manifest& m) {
    if (!f.out.empty()) {
        return f.out;
    }
    return fs::path("runs") / (m.command + "-" + m.preset);
}

int execute(const harness::Manifest& m, const RunFlags& f) {
    harness::RunOptions opts;
    opts.out_dir = output_dir(f, m);
    opts.verbose = f.verbose;
    opts.dump_priorities = f.dump_priorities;
    opts.progress = &std::cerr;
    fs::create_directories(opts.out_dir);
    harness::write_manifest(opts.out_dir / "manifest.json", m);
    if (f.emit_plot_script) {
        harness::write_plot_script(opts.out_dir / "plot.py");
    }

    if (m.command == "sweep-users") {
        const auto points = harness::run_sweep(m, opts);
        harness::write_sweep_csv(std::cout, points);
    } else {
        const auto table = harness::run_compare(m, opts);
        const auto summary = harness::aggregate(table);
        for (const auto& [policy, stats] : summary.reward) {
            double final_mean = 0.0;
            const auto seeds = table.seeds(policy);
            for (auto s : seeds) {
                final_mean += harness::final_window_mean(table.run(policy, s), summary.final_window);
            }
            std::cout << policy << " final-window mean reward "
                      << final_mean / static_cast<double>(seeds.size());
            if (summary.win_rate.count(policy) != 0) {
                std::cout << " (UCMS win-rate " << summary.win_rate.at(policy) << ")";
            }
            std::cout << '\n';
        }
    }
    std::cout << "results in " << opts.out_dir.string() << '\n';
    return 0;
}

int run_match(const std::string& input, const std::string& output, const std::string& preset_name,
              std::uint64_t seed, bool verbose) {
    coselect::SelectionInstance inst;
    if (!input.empty()) {
        std::ifstream in(input);
        nlohmann::json doc;
        try {
            in >> doc;
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError(std::string("match input: ") + e.what());
        }
        inst = coselect::instance_from_json(doc);
    } else {
        EnvConfig cfg = harness::preset(preset_name).env;
        cfg.seed = seed;
        sim::Environment env(cfg);
        env.reset();
        inst = coselect::make_instance(env.tasks(), env.devices(), cfg);
    }
    const auto res = coselect::co_select(inst);
    nlohmann::json doc{{"instance", coselect::to_json(inst)}, {"matching", coselect::to_json(res.matching)}};
    if (verbose) {
        nlohmann::json rounds = nlohmann::json::array();
        for (const auto& r : res.rounds) {
            rounds.push_back(coselect::to_json(r));
        }
        doc["rounds"] = rounds;
    }
    if (output.empty() || output == "-") {
        std::cout << doc.dump(2) << '\n';
    } else {
        std::ofstream(output) << doc.dump(2) << '\n';
    }
    return 0;
}

int run_check(std::uint64_t seed, bool quick) {
    const double scale = quick ? 0.1 : 1.0;
    auto count = [&](double n) { return static_cast<std::size_t>(std::max(1.0, n * scale)); };
    std::vector<verify::Report> reports;

    reports.push_back(verify::queue_oracle(count(1000), seed));
    reports.push_back(verify::matching_invariants(count(100), seed, EnvConfig{}));
    const auto smoke = harness::preset("smoke");
    const auto full = harness::preset("full");
    for (const auto* cfg : {&smoke.env, &full.env}) {
        for (const auto& shape : verify::deployed_shapes(*cfg, smoke.train.hidden)) {
            verify::GradCheckOptions opts;
            opts.nets = quick ? 2 : 10;
            auto r = verify::gradient_check(shape.widths, shape.hidden, shape.output, seed, opts);
            r.name += " (" + shape.name + " " + std::to_string(shape.widths.front()) + " inputs)";
            reports.push_back(std::move(r));
        }
    }
    reports.push_back(verify::sampling_law(20, count(100000), 0.01, seed));
    reports.push_back(verify::environment_invariants(count(10000), seed, EnvConfig{}));
    reports.push_back(verify::environment_invariants(count(10000), seed, harness::preset("stress").env));

    bool ok = true;
    for (const auto& r : reports) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.cases << " cases, "
                  << r.seconds << " s";
        if (!r.detail.empty()) {
            std::cout << ", " << r.detail;
        }
        std::cout << '\n';
        for (const auto& f : r.failures) {
            std::cout << "  " << f << '\n';
        }
        ok = ok && r.passed;
    }
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Edge offloading simulator and multi-agent trainer"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    RunFlags train_f, compare_f, sweep_f, stress_f;
    auto* train_cmd = app.add_subcommand("train", "train one policy on one or more seeds");
    add_run_flags(train_cmd, train_f, "smoke");
    auto* compare_cmd = app.add_subcommand("compare", "train every policy on every seed");
    add_run_flags(compare_cmd, compare_f, "smoke");
    auto* sweep_cmd = app.add_subcommand("sweep-users", "total cost as the number of users grows");
    add_run_flags(sweep_cmd, sweep_f, "smoke");
    int users_min = 12;
    int users_max = 57;
    int users_step = 3;
    sweep_cmd->add_option("--users-min", users_min)->capture_default_str()->check(CLI::PositiveNumber);
    sweep_cmd->add_option("--users-max", users_max)->capture_default_str()->check(CLI::PositiveNumber);
    sweep_cmd->add_option("--users-step", users_step)->capture_default_str()->check(CLI::PositiveNumber);
    auto* stress_cmd = app.add_subcommand("stress", "long-horizon, small-battery comparison");
    add_run_flags(stress_cmd, stress_f, "stress");

    auto* match_cmd = app.add_subcommand("match", "run co-selection on one instance");
    std::string match_in;
    std::string match_out;
    std::string match_preset = "smoke";
    std::uint64_t match_seed = 1;
    bool match_verbose = false;
    match_cmd->add_option("--input", match_in, "instance JSON (default: draw one from the preset)")
        ->check(CLI::ExistingFile);
    match_cmd->add_option("--output", match_out, "result JSON (default: stdout)");
    match_cmd->add_option("--preset", match_preset)->check(CLI::IsMember(harness::preset_names()));
    match_cmd->add_option("--seed", match_seed);
    match_cmd->add_flag("--verbose", match_verbose, "include the per-round application log");

    auto* check_cmd = app.add_subcommand("check", "run the oracle and invariant suites");
    std::uint64_t check_seed = 1;
    bool check_quick = false;
    check_cmd->add_option("--seed", check_seed);
    check_cmd->add_flag("--quick", check_quick, "a tenth of the default case counts");

    CLI11_PARSE(app, argc, argv);

    try {
        auto run_cmd = [&](const std::string& name, const RunFlags& f,
                           std::vector<train::Policy> policies, int default_seeds,
                           const nlohmann::json& extra) {
            harness::Manifest m;
            if (!f.manifest.empty()) {
                m = harness::read_manifest(f.manifest);
                if (m.command != name) {
                    throw ValidationError("manifest was written by '" + m.command + "', not '" + name + "'");
                }
            } else {
                m = resolve(name, f, std::move(policies), default_seeds);
                m.extra = extra;
            }
            return execute(m, f);
        };

        if (*train_cmd) {
            return run_cmd("train", train_f, {train::Policy::Ucms}, 1, nlohmann::json::object());
        }
        if (*compare_cmd) {
            return run_cmd("compare", compare_f, train::all_policies(), 10, nlohmann::json::object());
        }
        if (*sweep_cmd) {
            const auto users = harness::sweep_users_list(users_min, users_max, users_step);
            return run_cmd("sweep-users", sweep_f, {train::Policy::Ucms}, 5,
                           nlohmann::json{{"users", users}});
        }
        if (*stress_cmd) {
            return run_cmd("stress", stress_f, train::all_policies(), 10, nlohmann::json::object());
        }
        if (*match_cmd) {
            return run_match(match_in, match_out, match_preset, match_seed, match_verbose);
        }
        if (*check_cmd) {
            return run_check(check_seed, check_quick);
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
