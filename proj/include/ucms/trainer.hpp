#pragma once

#include "ucms/coselect.hpp"
#include "ucms/hybrid.hpp"
#include "ucms/replay.hpp"
#include "ucms/simcore.hpp"
#include "ucms/tinynet.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace ucms::train {

using Rng = std::mt19937_64;

enum class Policy { Ucms, RdUcms, PlainMaddpg, OffloadCost, Deadline };

std::string to_string(Policy p);
Policy policy_from_string(const std::string& name);
const std::vector<Policy>& all_policies();

enum class SelectionRule { CoSelect, RandomFeasible, MaxGain };
enum class RefinementRule { QScore, FirstComeFirstServed, OffloadCost, Deadline };

struct Behavior {
    SelectionRule selection;
    RefinementRule refinement;
};

Behavior baseline_behavior(Policy p);

// Gaussian exploration: initial * decay^episode, never below floor.
struct NoiseSchedule {
    double initial = 0.2;
    double decay = 0.999;
    double floor = 0.01;

    double at(int episode) const;
};

struct TrainConfig {
    int episodes = 2000;           // Ep_max
    int updates_per_episode = 1;   // Ep_train
    double gamma = 0.99;
    int batch_size = 64;
    std::size_t buffer_capacity = 100000;
    double omega = 0.01;           // target blend
    double actor_lr = 1e-4;
    double critic_lr = 1e-3;
    std::vector<int> hidden = {64, 512};
    NoiseSchedule noise;
    double nu_r = 0.5;             // nu_delta = 1 - nu_r
    double priority_eps = 1e-6;
    bool importance_weighting = false;
    double reward_scale = 1.0;     // applied to rewards inside the learner only
    std::uint64_t seed = 1;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& doc, TrainConfig base = {});

struct Dims {
    int num_users = 0;
    int num_servers = 0;
    int state_dim = 0;
    int z_max = 0;

    int view_stride() const { return state_dim + hybrid::kActionDim; }
    int view_size() const { return z_max * view_stride(); }
    int critic_input() const { return view_size() + view_stride(); }
};

Dims dims_for(const EnvConfig& cfg);

// Per-user actors and critics plus the shared server critic, with targets
// and optimizers.
struct AgentBundle {
    Dims dims;
    std::vector<nn::Mlp> actors;
    std::vector<nn::Mlp> target_actors;
    std::vector<nn::Mlp> user_critics;
    std::vector<nn::Mlp> target_user_critics;
    nn::Mlp server_critic;
    nn::Mlp target_server_critic;
    std::vector<nn::Adam> actor_opt;
    std::vector<nn::Adam> user_critic_opt;
    nn::Adam server_critic_opt;

    static AgentBundle create(const Dims& dims, const TrainConfig& cfg, Rng& rng);

    std::vector<nn::NamedNet> named_networks() const;
    // Restores parameters from a checkpoint with matching names and shapes.
    void load(const std::vector<nn::LoadedNet>& nets);
};

// States, actions and associations of one slot; enough to assemble critic
// inputs for any user.
struct SlotView {
    int num_users = 0;
    int state_dim = 0;
    const double* states = nullptr;               // num_users x state_dim
    const hybrid::UserAction* actions = nullptr;  // num_users
    const int* assignment = nullptr;              // num_users, -1 = local-only
};

// Writes [global view of the user's server | candidate state | candidate
// action] into `out` (length dims.critic_input()). The candidate part is
// zero when `candidate_active` is false. Returns the user's position within
// the view, or -1 if it has no server.
int write_critic_input(double* out, const Dims& dims, const SlotView& slot, int user,
                       bool candidate_active);

std::vector<hybrid::UserAction> act(const AgentBundle& bundle,
                                    const std::vector<hybrid::AgentState>& states,
                                    double noise_scale, Rng& rng);

// y_i = scale * r_i + gamma * Q'_server(next view from target actors, candidate)
// for every user; users the server did not approve use a zero candidate;
// terminal experiences do not bootstrap. Only target networks are evaluated.
std::vector<double> target_q(const AgentBundle& bundle, const replay::Experience& exp,
                             double gamma, double reward_scale);

struct CriticStats {
    double server_loss = 0.0;
    double user_loss = 0.0;                 // mean over user critics
    std::vector<double> td_errors;          // per batch item, mean |y - Q_server| over users
};

// Weighted-MSE updates of the server critic and each user critic, followed by
// soft target updates. `weights` multiplies each batch item's squared error.
// As in the targets, the candidate slot of a user the server did not approve
// is zero.
CriticStats critic_update(AgentBundle& bundle, const replay::Batch& batch,
                          const std::vector<double>& weights, const TrainConfig& cfg);

struct ActorStats {
    double mean_q = 0.0;                  // mean server-critic value of regenerated actions
    std::vector<double> grad_norms;       // per user actor
};

// Deterministic policy gradient through the server critic for every actor,
// followed by soft target updates of actors. A regenerated action reaches the
// critic through the user's view entry and, when approved, its candidate slot.
ActorStats actor_update(AgentBundle& bundle, const replay::Batch& batch, const TrainConfig& cfg);

struct EpisodeMetrics {
    int episode = 0;
    double mean_reward = 0.0;
    double mean_cost = 0.0;          // per-slot system cost (sum over users), averaged over slots
    double timeout_pct = 0.0;
    double participation_pct = 0.0;  // share of tasks executed on a server
    double below_bmin_pct = 0.0;
    double actor_loss = 0.0;
    double critic_loss = 0.0;
    double noise_scale = 0.0;
};

struct SlotRecord {
    int slot = 0;
    coselect::Matching matching;
    std::vector<hybrid::UserAction> actions;
    std::vector<hybrid::MappedAction> mapped;
    std::vector<std::uint8_t> approved;
    std::vector<sim::SlotDecision> decisions;
    sim::SlotResult result;
};

struct TrainHooks {
    std::ostream* trace = nullptr;           // JSON line per slot
    std::ostream* priority_histogram = nullptr; // CSV row per update round
    std::function<void(const EpisodeMetrics&)> on_episode;
    std::optional<std::string> abort_checkpoint; // written when training diverges
};

// Drives environment interaction and learning for one policy.
class Trainer {
public:
    Trainer(EnvConfig env_cfg, TrainConfig cfg, Policy policy);

    // Plays one episode with the given exploration scale, storing every slot
    // in the replay buffer. Performs no learning.
    EpisodeMetrics run_episode(double noise_scale, std::vector<SlotRecord>* records = nullptr);

    struct UpdateStats {
        double critic_loss = 0.0;
        double actor_loss = 0.0;
    };
    // One update round; nullopt while the buffer holds fewer than a batch.
    std::optional<UpdateStats> update();

    std::vector<EpisodeMetrics> train(const TrainHooks& hooks = {});

    const AgentBundle& bundle() const { return bundle_; }
    AgentBundle& bundle() { return bundle_; }
    const replay::PriorityBuffer& buffer() const { return buffer_; }
    const sim::Environment& env() const { return env_; }
    const TrainConfig& config() const { return cfg_; }
    Policy policy() const { return policy_; }
    std::int64_t updates_done() const { return updates_done_; }

    void set_trace(std::ostream* trace) { trace_ = trace; }
    void set_priority_histogram(std::ostream* out) { histogram_ = out; }

private:
    coselect::Matching select(const std::vector<sim::TaskSpec>& tasks,
                              const std::vector<sim::DeviceState>& devices);
    std::map<int, double> refinement_scores(int server, const std::vector<int>& candidates,
                                            const std::vector<hybrid::AgentState>& states,
                                            const std::vector<hybrid::UserAction>& actions,
                                            const std::vector<hybrid::MappedAction>& mapped,
                                            const std::vector<int>& assignment);
    void write_trace(int episode, const SlotRecord& rec) const;

    EnvConfig env_cfg_;
    TrainConfig cfg_;
    Policy policy_;
    Behavior behavior_;
    sim::Environment env_;
    Rng rng_;
    AgentBundle bundle_;
    replay::PriorityBuffer buffer_;
    int episodes_done_ = 0;
    std::int64_t updates_done_ = 0;
    std::ostream* trace_ = nullptr;
    std::ostream* histogram_ = nullptr;
};

// Trains `policy` for cfg.episodes episodes and returns one row per episode.
std::vector<EpisodeMetrics> train(const EnvConfig& env_cfg, const TrainConfig& cfg, Policy policy,
                                  const TrainHooks& hooks = {});

} // namespace ucms::train
