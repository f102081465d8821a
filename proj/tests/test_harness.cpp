#include "ucms/errors.hpp"
#include "ucms/harness.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace ucms;
using namespace ucms::harness;
namespace fs = std::filesystem;

namespace {

// Fits a degree-p polynomial in the raw window index with an SVD solve and
// evaluates it at the requested point.
double lsq_value(const std::vector<double>& y, int start, int window, int p, int at) {
    Eigen::MatrixXd A(window, p + 1);
    Eigen::VectorXd b(window);
    for (int r = 0; r < window; ++r) {
        double x = 1.0;
        for (int c = 0; c <= p; ++c) {
            A(r, c) = x;
            x *= static_cast<double>(r);
        }
        b(r) = y[static_cast<std::size_t>(start + r)];
    }
    const Eigen::VectorXd coef = A.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(b);
    double v = 0.0;
    double x = 1.0;
    for (int c = 0; c <= p; ++c) {
        v += coef(c) * x;
        x *= static_cast<double>(at - start);
    }
    return v;
}

train::EpisodeMetrics row(int episode, double reward, double cost = 0.0) {
    train::EpisodeMetrics m;
    m.episode = episode;
    m.mean_reward = reward;
    m.mean_cost = cost;
    return m;
}

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST(Presets, KnownNamesValidate) {
    for (const auto& name : preset_names()) {
        EXPECT_NO_THROW(preset(name).validate()) << name;
    }
    EXPECT_THROW(preset("huge"), ValidationError);
}

TEST(Presets, SmokeAndFullScales) {
    const auto smoke = preset("smoke");
    EXPECT_EQ(smoke.env.num_users, 6);
    EXPECT_EQ(smoke.env.num_servers, 2);
    EXPECT_EQ(smoke.env.z_max, 4);
    EXPECT_EQ(smoke.env.cpus_per_server, 2);
    EXPECT_EQ(smoke.env.subchannels, 4);
    EXPECT_DOUBLE_EQ(smoke.env.storage_bits, 100 * 8e6);
    EXPECT_EQ(smoke.train.episodes, 300);
    const auto full = preset("full");
    EXPECT_EQ(full.env.num_users, 48);
    EXPECT_EQ(full.env.num_servers, 3);
    EXPECT_EQ(full.env.z_max, 16);
    EXPECT_EQ(full.env.cpus_per_server, 8);
    EXPECT_DOUBLE_EQ(full.env.storage_bits, 400 * 8e6);
    EXPECT_EQ(full.train.batch_size, 64);
    EXPECT_EQ(full.train.buffer_capacity, 100000u);
    EXPECT_EQ(full.seeds.size(), 10u);
    const auto stress = preset("stress");
    EXPECT_EQ(stress.env.slots, 100);
    EXPECT_DOUBLE_EQ(stress.env.battery_j.hi, 1.0);
    EXPECT_EQ(stress.env.rho1, 1.0);
    EXPECT_EQ(stress.env.rho2, 5.0);
}

TEST(Presets, DuplicateSeedsRejected) {
    auto p = preset("smoke");
    p.seeds = {1, 2, 1};
    EXPECT_THROW(p.validate(), ValidationError);
    p = preset("smoke");
    p.name.clear();
    EXPECT_THROW(p.validate(), ValidationError);
}

TEST(Smooth, FullDegreeIsIdentity) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> y(40);
    for (auto& v : y) {
        v = n(rng);
    }
    const auto s = smooth(y, 5, 4);
    for (std::size_t i = 0; i < y.size(); ++i) {
        EXPECT_NEAR(s[i], y[i], 1e-9);
    }
}

TEST(Smooth, ConstantSeriesUnchanged) {
    const std::vector<double> y(100, -42.5);
    for (double v : smooth(y, 21, 3)) {
        EXPECT_NEAR(v, -42.5, 1e-10);
    }
}

TEST(Smooth, MatchesDenseLeastSquares) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 3.0);
    for (auto [window, order] : {std::pair{21, 3}, std::pair{11, 2}, std::pair{7, 0}}) {
        std::vector<double> y(137);
        for (auto& v : y) {
            v = n(rng);
        }
        const auto s = smooth(y, window, order);
        const int len = static_cast<int>(y.size());
        for (int i = 0; i < len; ++i) {
            const int start = std::clamp(i - window / 2, 0, len - window);
            EXPECT_NEAR(s[static_cast<std::size_t>(i)], lsq_value(y, start, window, order, i), 1e-9)
                << "window " << window << " index " << i;
        }
    }
}

TEST(Smooth, ShortSeriesPassesThroughWithWarning) {
    const std::vector<double> y{1.0, 5.0, 2.0};
    std::ostringstream warn;
    EXPECT_EQ(smooth(y, 21, 3, &warn), y);
    EXPECT_FALSE(warn.str().empty());
}

TEST(Smooth, RejectsBadParameters) {
    const std::vector<double> y(50, 1.0);
    EXPECT_THROW(smooth(y, 20, 3), ValidationError);
    EXPECT_THROW(smooth(y, 5, 5), ValidationError);
}

TEST(Downsample, KeepsEveryHundredthEpisode) {
    std::vector<double> y(300);
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = static_cast<double>(i + 1);
    }
    EXPECT_EQ(downsample(y), (std::vector<double>{100, 200, 300}));
    EXPECT_EQ(downsample(y, 150), (std::vector<double>{150, 300}));
}

TEST(Aggregate, SingleSeedHasZeroSpread) {
    MetricsTable t;
    t.add("UCMS", 1, row(1, -3.0));
    t.add("UCMS", 1, row(2, -2.0));
    const auto s = aggregate(t, 2);
    EXPECT_EQ(s.reward.at("UCMS").stddev, (std::vector<double>{0.0, 0.0}));
    EXPECT_EQ(s.reward.at("UCMS").episodes, (std::vector<int>{1, 2}));
}

TEST(Aggregate, MeanAcrossSeeds) {
    MetricsTable t;
    t.add("UCMS", 1, row(1, -10.0, 5.0));
    t.add("UCMS", 2, row(1, -12.0, 7.0));
    const auto s = aggregate(t, 1);
    EXPECT_DOUBLE_EQ(s.reward.at("UCMS").mean[0], -11.0);
    EXPECT_DOUBLE_EQ(s.reward.at("UCMS").stddev[0], 1.0);
    EXPECT_DOUBLE_EQ(s.cost.at("UCMS").mean[0], 6.0);
}

TEST(Aggregate, WinRateMatchesHandCount) {
    // Final window of 2 episodes. UCMS means per seed: -5, -8, -3.
    // RD_UCMS means: -6, -7, -3. UCMS strictly better on seed 1 only.
    MetricsTable t;
    const std::vector<std::vector<double>> ucms{{-9, -4, -6}, {-9, -8, -8}, {-1, -2, -4}};
    const std::vector<std::vector<double>> rd{{-9, -6, -6}, {-1, -6, -8}, {-9, -3, -3}};
    for (std::uint64_t s = 0; s < 3; ++s) {
        for (int e = 0; e < 3; ++e) {
            t.add("UCMS", s + 1, row(e + 1, ucms[s][static_cast<std::size_t>(e)]));
            t.add("RD_UCMS", s + 1, row(e + 1, rd[s][static_cast<std::size_t>(e)]));
        }
    }
    const auto s = aggregate(t, 2);
    EXPECT_NEAR(s.win_rate.at("RD_UCMS"), 1.0 / 3.0, 1e-15);
    EXPECT_EQ(s.win_rate.count("UCMS"), 0u);
    EXPECT_DOUBLE_EQ(final_window_mean(t.run("UCMS", 1), 2), -5.0);
}

TEST(Aggregate, MismatchedEpisodesAreStructural) {
    MetricsTable t;
    t.add("UCMS", 1, row(1, -1.0));
    t.add("UCMS", 1, row(2, -1.0));
    t.add("UCMS", 2, row(1, -1.0));
    EXPECT_THROW(aggregate(t), StructuralError);
}

TEST(MetricsTable, DuplicateKeyRejected) {
    MetricsTable t;
    t.add("UCMS", 1, row(1, -1.0));
    EXPECT_THROW(t.add("UCMS", 1, row(1, -2.0)), StructuralError);
}

TEST(MetricsTable, CsvRoundTripIsExact) {
    MetricsTable t;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-500.0, 0.0);
    for (int e = 1; e <= 20; ++e) {
        auto m = row(e, u(rng), -u(rng));
        m.timeout_pct = 100.0 / 3.0;
        m.critic_loss = 1e-300;
        m.noise_scale = 0.2 * std::pow(0.999, e);
        t.add("DEADLINE", 18446744073709551615ULL, m);
    }
    std::stringstream buf;
    t.write_csv(buf);
    const std::string first = buf.str();
    const auto back = MetricsTable::read_csv(buf);
    std::stringstream again;
    back.write_csv(again);
    EXPECT_EQ(again.str(), first);
    EXPECT_EQ(back.rows()[7].m.noise_scale, t.rows()[7].m.noise_scale);
    EXPECT_EQ(back.rows()[0].seed, 18446744073709551615ULL);
}

TEST(MetricsTable, MalformedCsvIsStructural) {
    std::stringstream bad("policy,seed\nUCMS,1\n");
    EXPECT_THROW(MetricsTable::read_csv(bad), StructuralError);
}

TEST(FormatDouble, RoundTrips) {
    for (double v : {0.1, 1.0 / 3.0, -7.249e6, 5e-324, 1e308}) {
        EXPECT_EQ(std::strtod(format_double(v).c_str(), nullptr), v);
    }
}

TEST(Manifest, JsonRoundTrip) {
    Manifest m;
    m.command = "compare";
    m.preset = "smoke";
    m.env = preset("smoke").env;
    m.train = preset("smoke").train;
    m.train.actor_lr = 3.3e-5;
    m.policies = {train::Policy::Ucms, train::Policy::Deadline};
    m.seeds = {4, 9};
    m.extra = {{"users", {12, 15}}};
    const auto doc = to_json(m);
    EXPECT_EQ(doc.at("schema_version"), kManifestSchemaVersion);
    EXPECT_EQ(doc.at("artifact_version"), kArtifactVersion);
    EXPECT_EQ(to_json(manifest_from_json(doc)), doc);
}

TEST(Manifest, NewerSchemaRejected) {
    Manifest m;
    m.command = "train";
    m.preset = "smoke";
    m.policies = {train::Policy::Ucms};
    m.seeds = {1};
    auto doc = to_json(m);
    doc["schema_version"] = kManifestSchemaVersion + 1;
    EXPECT_THROW(manifest_from_json(doc), ValidationError);
}

TEST(Overrides, PrefixedVariablesApply) {
    EnvConfig env;
    train::TrainConfig cfg;
    const auto keys = apply_env_overrides(env, cfg,
                                          {{"UCMS_NUM_USERS", "12"},
                                           {"UCMS_GAIN_DB", "6,9"},
                                           {"UCMS_BATCH_SIZE", "32"},
                                           {"UCMS_HIDDEN", "[16,32]"},
                                           {"PATH", "/usr/bin"}});
    EXPECT_EQ(keys.size(), 4u);
    EXPECT_EQ(env.num_users, 12);
    EXPECT_EQ(env.gain_db.hi, 9.0);
    EXPECT_EQ(cfg.batch_size, 32);
    EXPECT_EQ(cfg.hidden, (std::vector<int>{16, 32}));
    EXPECT_THROW(apply_env_overrides(env, cfg, {{"UCMS_NOPE", "1"}}), ValidationError);
}

TEST(Sweep, UserListIsInclusive) {
    const auto u = sweep_users_list(12, 57, 3);
    EXPECT_EQ(u.size(), 16u);
    EXPECT_EQ(u.front(), 12);
    EXPECT_EQ(u.back(), 57);
    EXPECT_THROW(sweep_users_list(12, 57, 0), ValidationError);
}

TEST(Runs, RunOneWritesFilesAndIsRepeatable) {
    auto p = preset("smoke");
    p.train.episodes = 2;
    p.train.batch_size = 8;
    p.train.hidden = {8, 8};
    const auto dir = fresh_dir("ucms_run_one");
    RunOptions opts;
    opts.out_dir = dir / "a";
    opts.verbose = true;
    opts.dump_priorities = true;
    const auto log = run_one(p.env, p.train, train::Policy::Ucms, 3, opts);
    EXPECT_EQ(log.size(), 2u);
    const auto tag = run_tag(train::Policy::Ucms, 3);
    EXPECT_EQ(tag, "UCMS_seed3");
    for (const auto* f : {"metrics_", "checkpoint_", "trace_", "priorities_"}) {
        bool found = false;
        for (const auto& e : fs::directory_iterator(opts.out_dir)) {
            found = found || e.path().filename().string().rfind(std::string(f) + tag, 0) == 0;
        }
        EXPECT_TRUE(found) << f;
    }
    RunOptions again = opts;
    again.out_dir = dir / "b";
    run_one(p.env, p.train, train::Policy::Ucms, 3, again);
    EXPECT_EQ(slurp(dir / "a" / ("metrics_" + tag + ".csv")), slurp(dir / "b" / ("metrics_" + tag + ".csv")));
    fs::remove_all(dir);
}

TEST(Runs, CompareWritesCombinedTables) {
    Manifest m;
    m.command = "compare";
    m.preset = "smoke";
    m.env = preset("smoke").env;
    m.train = preset("smoke").train;
    m.train.episodes = 2;
    m.train.hidden = {8, 8};
    m.train.batch_size = 8;
    m.policies = train::all_policies();
    m.seeds = {1, 2};
    const auto dir = fresh_dir("ucms_compare");
    RunOptions opts;
    opts.out_dir = dir;
    opts.checkpoint = false;
    const auto table = run_compare(m, opts);
    EXPECT_EQ(table.size(), 5u * 2u * 2u);
    EXPECT_TRUE(fs::exists(dir / "metrics.csv"));
    EXPECT_TRUE(fs::exists(dir / "summary.csv"));
    const auto back = MetricsTable::read_csv(dir / "metrics.csv");
    EXPECT_EQ(back.size(), table.size());
    fs::remove_all(dir);
}

TEST(Runs, PlotScriptIsWritten) {
    const auto dir = fresh_dir("ucms_plot");
    write_plot_script(dir / "plot.py");
    const auto text = slurp(dir / "plot.py");
    EXPECT_NE(text.find("matplotlib"), std::string::npos);
    fs::remove_all(dir);
}
