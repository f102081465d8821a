#pragma once

#include "ucms/config.hpp"
#include "ucms/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ucms::harness {

inline constexpr int kManifestSchemaVersion = 1;
inline constexpr const char* kArtifactVersion = "0.1.0";
inline constexpr const char* kEnvPrefix = "UCMS_";

struct ExperimentPreset {
    std::string name;
    EnvConfig env;
    train::TrainConfig train;
    std::vector<train::Policy> policies;
    std::vector<std::uint64_t> seeds;
    std::filesystem::path output_dir;

    // Throws ValidationError for an empty name, duplicate seeds or invalid
    // configurations.
    void validate() const;
};

// "full", "smoke" or "stress"; throws ValidationError otherwise.
ExperimentPreset preset(const std::string& name);
std::vector<std::string> preset_names();

// Seeds 1..n.
std::vector<std::uint64_t> seed_range(int n);

// --- smoothing ---------------------------------------------------------------

// Savitzky-Golay smoothing: each point is the value at that point of the
// least-squares polynomial of degree `polyorder` fitted to a `window`-point
// neighbourhood. Points closer than window/2 to an edge use the first or last
// full window. A series shorter than the window is returned unchanged and a
// warning goes to `warn` when given.
std::vector<double> smooth(const std::vector<double>& series, int window, int polyorder,
                           std::ostream* warn = nullptr);

// Keeps points every-1, 2*every-1, ... (episodes every, 2*every, ... when the
// series is indexed from episode 1).
std::vector<double> downsample(const std::vector<double>& series, int every = 100);

// --- metrics -----------------------------------------------------------------

struct MetricsRow {
    std::string policy;
    std::uint64_t seed = 0;
    train::EpisodeMetrics m;
};

const std::vector<std::string>& metrics_columns();

class MetricsTable {
public:
    // Throws StructuralError on a duplicate (policy, seed, episode) key.
    void add(const std::string& policy, std::uint64_t seed, const train::EpisodeMetrics& m);
    void append(const MetricsTable& other);

    const std::vector<MetricsRow>& rows() const { return rows_; }
    std::size_t size() const { return rows_.size(); }

    std::vector<std::string> policies() const;
    std::vector<std::uint64_t> seeds(const std::string& policy) const;
    // Episode-ordered rows of one run.
    std::vector<train::EpisodeMetrics> run(const std::string& policy, std::uint64_t seed) const;

    void write_csv(std::ostream& out) const;
    void write_csv(const std::filesystem::path& path) const;
    // Throws StructuralError when the header or a row is malformed.
    static MetricsTable read_csv(std::istream& in);
    static MetricsTable read_csv(const std::filesystem::path& path);

private:
    std::vector<MetricsRow> rows_;
    std::map<std::tuple<std::string, std::uint64_t, int>, std::size_t> index_;
};

// Shortest round-trip decimal text for a double.
std::string format_double(double v);

struct SeriesStats {
    std::vector<int> episodes;
    std::vector<double> mean;
    std::vector<double> stddev; // population
};

struct Summary {
    std::map<std::string, SeriesStats> reward;
    std::map<std::string, SeriesStats> cost;
    // Fraction of seeds (present for both) where UCMS's final-window mean
    // reward is strictly greater than the baseline's.
    std::map<std::string, double> win_rate;
    int final_window = 50;
};

// Mean reward of the last `window` episodes of one run.
double final_window_mean(const std::vector<train::EpisodeMetrics>& run, int window = 50);

// Per-policy mean and std across seeds for each episode. Throws
// StructuralError when runs of one policy cover different episodes.
Summary aggregate(const MetricsTable& table, int final_window = 50);

void write_summary_csv(std::ostream& out, const Summary& s);

// --- manifests ---------------------------------------------------------------

struct Manifest {
    std::string command;
    std::string preset;
    EnvConfig env;
    train::TrainConfig train;
    std::vector<train::Policy> policies;
    std::vector<std::uint64_t> seeds;
    nlohmann::json extra = nlohmann::json::object();
};

nlohmann::json to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& doc);
void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

// --- overrides ---------------------------------------------------------------

// Applies UCMS_<KEY> variables: KEY lower-cased names an environment or
// training config key. Environment keys take "a" or "lo,hi"; training keys
// take a JSON scalar (or a JSON array for "hidden"). Returns the applied keys.
std::vector<std::string> apply_env_overrides(EnvConfig& env, train::TrainConfig& train,
                                             const std::map<std::string, std::string>& vars);
std::map<std::string, std::string> process_environment();

// --- runs ---------------------------------------------------------------------

struct RunOptions {
    std::filesystem::path out_dir;
    bool verbose = false;          // trace.jsonl per run
    bool dump_priorities = false;  // priority histogram CSV per run
    bool checkpoint = true;
    std::ostream* progress = nullptr;
};

std::string run_tag(train::Policy p, std::uint64_t seed);

// Trains one policy with env.seed = train.seed = seed and writes
// metrics_<tag>.csv plus checkpoint_<tag>.bin to opts.out_dir.
std::vector<train::EpisodeMetrics> run_one(const EnvConfig& env, const train::TrainConfig& cfg,
                                           train::Policy policy, std::uint64_t seed,
                                           const RunOptions& opts);

// Every (policy, seed) pair of the manifest, in order. Writes the combined
// metrics.csv and summary.csv.
MetricsTable run_compare(const Manifest& m, const RunOptions& opts);

struct SweepPoint {
    int num_users = 0;
    double mean_cost = 0.0;   // mean over seeds of each run's episode-averaged system cost
    double std_cost = 0.0;
    double mean_reward = 0.0;
};

// User counts from extra["users"] (or lo..hi step); writes sweep.csv.
std::vector<int> sweep_users_list(int lo, int hi, int step);
std::vector<SweepPoint> run_sweep(const Manifest& m, const RunOptions& opts);
void write_sweep_csv(std::ostream& out, const std::vector<SweepPoint>& pts);

// Writes a standalone Python/matplotlib script plotting the CSVs in a run
// directory.
void write_plot_script(const std::filesystem::path& path);

} // namespace ucms::harness
