#include "ucms/trainer.hpp"

#include "ucms/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace ucms::train {

namespace {

constexpr std::uint64_t kTrainerStream = 0x747261696e; // "train"
constexpr std::uint64_t kInitStream = 0x696e6974;      // "init"

Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return Rng(seq);
}

std::vector<int> widths(int in, const std::vector<int>& hidden, int out) {
    std::vector<int> w{in};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(out);
    return w;
}

void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) {
        throw TrainingError(std::string(what) + " is not finite");
    }
}

// Targets for every (batch item, user): column-major (users x batch).
nn::Matrix batch_targets(const AgentBundle& bundle,
                         const std::vector<const replay::Experience*>& items, double gamma,
                         double reward_scale) {
    const Dims& d = bundle.dims;
    const auto batch = static_cast<Eigen::Index>(items.size());
    const int n_users = d.num_users;

    // Next actions from the target actors, one batched pass per user.
    std::vector<std::vector<hybrid::UserAction>> next_actions(
        items.size(), std::vector<hybrid::UserAction>(static_cast<std::size_t>(n_users)));
    for (int u = 0; u < n_users; ++u) {
        nn::Matrix s(d.state_dim, batch);
        for (Eigen::Index b = 0; b < batch; ++b) {
            const auto ns = items[static_cast<std::size_t>(b)]->next_state(u);
            std::copy(ns.begin(), ns.end(), s.col(b).data());
        }
        const nn::Matrix a = bundle.target_actors[static_cast<std::size_t>(u)].forward(s);
        for (Eigen::Index b = 0; b < batch; ++b) {
            next_actions[static_cast<std::size_t>(b)][static_cast<std::size_t>(u)] =
                hybrid::UserAction{a(0, b), a(1, b), a(2, b)};
        }
    }

    nn::Matrix inputs(d.critic_input(), batch * n_users);
    for (Eigen::Index b = 0; b < batch; ++b) {
        const auto& exp = *items[static_cast<std::size_t>(b)];
        SlotView view{exp.num_users, exp.state_dim, exp.next_states.data(),
                      next_actions[static_cast<std::size_t>(b)].data(), exp.assignment.data()};
        for (int u = 0; u < n_users; ++u) {
            write_critic_input(inputs.col(b * n_users + u).data(), d, view, u,
                               exp.approved[static_cast<std::size_t>(u)] != 0);
        }
    }
    const nn::Matrix next_q = bundle.target_server_critic.forward(inputs);

    nn::Matrix y(n_users, batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
        const auto& exp = *items[static_cast<std::size_t>(b)];
        for (int u = 0; u < n_users; ++u) {
            const double bootstrap = exp.terminal ? 0.0 : gamma * next_q(0, b * n_users + u);
            y(u, b) = reward_scale * exp.rewards[static_cast<std::size_t>(u)] + bootstrap;
        }
    }
    return y;
}

void check_experience_dims(const AgentBundle& bundle, const replay::Experience& exp) {
    if (exp.num_users != bundle.dims.num_users || exp.state_dim != bundle.dims.state_dim) {
        throw StructuralError("experience dimensions do not match the agent bundle");
    }
}

} // namespace

// --- policies ---------------------------------------------------------------

std::string to_string(Policy p) {
    switch (p) {
    case Policy::Ucms:
        return "UCMS";
    case Policy::RdUcms:
        return "RD_UCMS";
    case Policy::PlainMaddpg:
        return "PLAIN_MADDPG";
    case Policy::OffloadCost:
        return "OFFLOADCOST";
    case Policy::Deadline:
        return "DEADLINE";
    }
    return "UCMS";
}

Policy policy_from_string(const std::string& name) {
    for (Policy p : all_policies()) {
        if (to_string(p) == name) {
            return p;
        }
    }
    if (name == "MADDPG") {
        return Policy::PlainMaddpg;
    }
    throw ValidationError("unknown policy '" + name + "'");
}

const std::vector<Policy>& all_policies() {
    static const std::vector<Policy> all{Policy::Ucms, Policy::RdUcms, Policy::PlainMaddpg,
                                         Policy::OffloadCost, Policy::Deadline};
    return all;
}

Behavior baseline_behavior(Policy p) {
    switch (p) {
    case Policy::Ucms:
        return {SelectionRule::CoSelect, RefinementRule::QScore};
    case Policy::RdUcms:
        return {SelectionRule::RandomFeasible, RefinementRule::QScore};
    case Policy::PlainMaddpg:
        return {SelectionRule::MaxGain, RefinementRule::FirstComeFirstServed};
    case Policy::OffloadCost:
        return {SelectionRule::MaxGain, RefinementRule::OffloadCost};
    case Policy::Deadline:
        return {SelectionRule::MaxGain, RefinementRule::Deadline};
    }
    return {SelectionRule::CoSelect, RefinementRule::QScore};
}

double NoiseSchedule::at(int episode) const {
    return std::max(floor, initial * std::pow(decay, static_cast<double>(episode)));
}

// --- config -----------------------------------------------------------------

void TrainConfig::validate() const {
    if (episodes < 0 || updates_per_episode < 1) {
        throw ValidationError("train config: episodes must be >= 0 and Ep_train >= 1");
    }
    if (!(gamma > 0.0 && gamma < 1.0)) {
        throw ValidationError("train config: gamma must lie in (0, 1)");
    }
    if (batch_size < 1 || buffer_capacity < 1) {
        throw ValidationError("train config: batch size and buffer capacity must be positive");
    }
    if (!(omega > 0.0 && omega <= 1.0)) {
        throw ValidationError("train config: omega must lie in (0, 1]");
    }
    if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) {
        throw ValidationError("train config: learning rates must be positive");
    }
    if (!(nu_r >= 0.0 && nu_r <= 1.0) || !(priority_eps > 0.0)) {
        throw ValidationError("train config: nu_r must lie in [0, 1] and epsilon be positive");
    }
    if (noise.initial < 0.0 || noise.floor < 0.0 || noise.decay <= 0.0) {
        throw ValidationError("train config: bad noise schedule");
    }
    if (hidden.empty() || !(reward_scale > 0.0)) {
        throw ValidationError("train config: need hidden layers and a positive reward scale");
    }
}

nlohmann::json to_json(const TrainConfig& c) {
    return {
        {"episodes", c.episodes},
        {"updates_per_episode", c.updates_per_episode},
        {"gamma", c.gamma},
        {"batch_size", c.batch_size},
        {"buffer_capacity", c.buffer_capacity},
        {"omega", c.omega},
        {"actor_lr", c.actor_lr},
        {"critic_lr", c.critic_lr},
        {"hidden", c.hidden},
        {"noise_initial", c.noise.initial},
        {"noise_decay", c.noise.decay},
        {"noise_floor", c.noise.floor},
        {"nu_r", c.nu_r},
        {"priority_eps", c.priority_eps},
        {"importance_weighting", c.importance_weighting},
        {"reward_scale", c.reward_scale},
        {"seed", c.seed},
    };
}

TrainConfig train_config_from_json(const nlohmann::json& doc, TrainConfig c) {
    if (!doc.is_object()) {
        throw ValidationError("train config must be a JSON object");
    }
    try {
        for (const auto& [key, v] : doc.items()) {
            if (key == "episodes") c.episodes = v.get<int>();
            else if (key == "updates_per_episode") c.updates_per_episode = v.get<int>();
            else if (key == "gamma") c.gamma = v.get<double>();
            else if (key == "batch_size") c.batch_size = v.get<int>();
            else if (key == "buffer_capacity") c.buffer_capacity = v.get<std::size_t>();
            else if (key == "omega") c.omega = v.get<double>();
            else if (key == "actor_lr") c.actor_lr = v.get<double>();
            else if (key == "critic_lr") c.critic_lr = v.get<double>();
            else if (key == "hidden") c.hidden = v.get<std::vector<int>>();
            else if (key == "noise_initial") c.noise.initial = v.get<double>();
            else if (key == "noise_decay") c.noise.decay = v.get<double>();
            else if (key == "noise_floor") c.noise.floor = v.get<double>();
            else if (key == "nu_r") c.nu_r = v.get<double>();
            else if (key == "priority_eps") c.priority_eps = v.get<double>();
            else if (key == "importance_weighting") c.importance_weighting = v.get<bool>();
            else if (key == "reward_scale") c.reward_scale = v.get<double>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else throw ValidationError("unknown train config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

// --- bundle -----------------------------------------------------------------

Dims dims_for(const EnvConfig& cfg) {
    return Dims{cfg.num_users, cfg.num_servers, hybrid::state_dim(cfg.num_servers), cfg.z_max};
}

AgentBundle AgentBundle::create(const Dims& dims, const TrainConfig& cfg, Rng& rng) {
    AgentBundle b;
    b.dims = dims;
    const auto actor_w = widths(dims.state_dim, cfg.hidden, hybrid::kActionDim);
    const auto critic_w = widths(dims.critic_input(), cfg.hidden, 1);
    for (int u = 0; u < dims.num_users; ++u) {
        b.actors.emplace_back(actor_w, nn::Activation::Relu, nn::Activation::Sigmoid, rng);
        b.user_critics.emplace_back(critic_w, nn::Activation::Relu, nn::Activation::Identity, rng);
    }
    b.server_critic = nn::Mlp(critic_w, nn::Activation::Relu, nn::Activation::Identity, rng);
    b.target_actors = b.actors;
    b.target_user_critics = b.user_critics;
    b.target_server_critic = b.server_critic;
    for (int u = 0; u < dims.num_users; ++u) {
        b.actor_opt.emplace_back(b.actors[static_cast<std::size_t>(u)],
                                 nn::AdamConfig{cfg.actor_lr});
        b.user_critic_opt.emplace_back(b.user_critics[static_cast<std::size_t>(u)],
                                       nn::AdamConfig{cfg.critic_lr});
    }
    b.server_critic_opt = nn::Adam(b.server_critic, nn::AdamConfig{cfg.critic_lr});
    return b;
}

std::vector<nn::NamedNet> AgentBundle::named_networks() const {
    std::vector<nn::NamedNet> out;
    for (std::size_t u = 0; u < actors.size(); ++u) {
        const auto id = std::to_string(u);
        out.push_back({"actor_" + id, &actors[u]});
        out.push_back({"target_actor_" + id, &target_actors[u]});
        out.push_back({"user_critic_" + id, &user_critics[u]});
        out.push_back({"target_user_critic_" + id, &target_user_critics[u]});
    }
    out.push_back({"server_critic", &server_critic});
    out.push_back({"target_server_critic", &target_server_critic});
    return out;
}

void AgentBundle::load(const std::vector<nn::LoadedNet>& nets) {
    std::map<std::string, nn::Mlp*> slots;
    for (std::size_t u = 0; u < actors.size(); ++u) {
        const auto id = std::to_string(u);
        slots["actor_" + id] = &actors[u];
        slots["target_actor_" + id] = &target_actors[u];
        slots["user_critic_" + id] = &user_critics[u];
        slots["target_user_critic_" + id] = &target_user_critics[u];
    }
    slots["server_critic"] = &server_critic;
    slots["target_server_critic"] = &target_server_critic;
    if (nets.size() != slots.size()) {
        throw StructuralError("checkpoint network count does not match the bundle");
    }
    for (const auto& ln : nets) {
        auto it = slots.find(ln.name);
        if (it == slots.end() || it->second->widths() != ln.net.widths()) {
            throw StructuralError("checkpoint network '" + ln.name + "' does not match the bundle");
        }
        *it->second = ln.net;
    }
}

// --- critic inputs ----------------------------------------------------------

int write_critic_input(double* out, const Dims& dims, const SlotView& slot, int user,
                       bool candidate_active) {
    const int stride = dims.view_stride();
    const int s_dim = dims.state_dim;
    std::fill(out, out + dims.critic_input(), 0.0);
    auto put = [&](double* dst, int who) {
        const double* st = slot.states + static_cast<std::ptrdiff_t>(who) * s_dim;
        std::copy(st, st + s_dim, dst);
        const auto a = slot.actions[who].as_array();
        std::copy(a.begin(), a.end(), dst + s_dim);
    };

    int position = -1;
    const int server = slot.assignment[user];
    if (server >= 0) {
        int k = 0;
        for (int j = 0; j < slot.num_users; ++j) {
            if (slot.assignment[j] != server) {
                continue;
            }
            if (k >= dims.z_max) {
                throw StructuralError("critic input: roster exceeds z_max");
            }
            put(out + static_cast<std::ptrdiff_t>(k) * stride, j);
            if (j == user) {
                position = k;
            }
            ++k;
        }
    }
    if (candidate_active) {
        put(out + dims.view_size(), user);
    }
    return position;
}

// --- acting and learning ----------------------------------------------------

std::vector<hybrid::UserAction> act(const AgentBundle& bundle,
                                    const std::vector<hybrid::AgentState>& states,
                                    double noise_scale, Rng& rng) {
    if (static_cast<int>(states.size()) != bundle.dims.num_users) {
        throw StructuralError("act: expected one state per user");
    }
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<hybrid::UserAction> out;
    out.reserve(states.size());
    for (std::size_t u = 0; u < states.size(); ++u) {
        const nn::Vector s = Eigen::Map<const nn::Vector>(states[u].values.data(),
                                                          static_cast<Eigen::Index>(states[u].values.size()));
        const nn::Vector a = bundle.actors[u].forward(s);
        std::array<double, hybrid::kActionDim> v{a(0), a(1), a(2)};
        if (noise_scale > 0.0) {
            for (auto& x : v) {
                x += noise_scale * noise(rng);
            }
        }
        for (auto& x : v) {
            x = std::clamp(x, 0.0, 1.0);
        }
        out.push_back({v[0], v[1], v[2]});
    }
    return out;
}

std::vector<double> target_q(const AgentBundle& bundle, const replay::Experience& exp,
                             double gamma, double reward_scale) {
    check_experience_dims(bundle, exp);
    const nn::Matrix y = batch_targets(bundle, {&exp}, gamma, reward_scale);
    return std::vector<double>(y.data(), y.data() + y.size());
}

CriticStats critic_update(AgentBundle& bundle, const replay::Batch& batch,
                          const std::vector<double>& weights, const TrainConfig& cfg) {
    const Dims& d = bundle.dims;
    const auto n_batch = static_cast<Eigen::Index>(batch.size());
    const int n_users = d.num_users;
    if (batch.size() == 0 || weights.size() != batch.size()) {
        throw StructuralError("critic_update: batch and weights must be non-empty and aligned");
    }
    for (const auto* e : batch.items) {
        check_experience_dims(bundle, *e);
    }

    const nn::Matrix y = batch_targets(bundle, batch.items, cfg.gamma, cfg.reward_scale);

    nn::Matrix inputs(d.critic_input(), n_batch * n_users);
    for (Eigen::Index b = 0; b < n_batch; ++b) {
        const auto& exp = *batch.items[static_cast<std::size_t>(b)];
        SlotView view{exp.num_users, exp.state_dim, exp.states.data(), exp.actions.data(),
                      exp.assignment.data()};
        for (int u = 0; u < n_users; ++u) {
            write_critic_input(inputs.col(b * n_users + u).data(), d, view, u,
                               exp.approved[static_cast<std::size_t>(u)] != 0);
        }
    }

    CriticStats stats;
    stats.td_errors.assign(batch.size(), 0.0);
    const double count = static_cast<double>(n_batch * n_users);

    // Server critic.
    {
        const nn::Tape tape = bundle.server_critic.forward_tape(inputs);
        nn::Matrix upstream(1, n_batch * n_users);
        double loss = 0.0;
        for (Eigen::Index b = 0; b < n_batch; ++b) {
            const double w = weights[static_cast<std::size_t>(b)];
            double abs_sum = 0.0;
            for (int u = 0; u < n_users; ++u) {
                const Eigen::Index c = b * n_users + u;
                const double delta = y(u, b) - tape.output()(0, c);
                loss += w * delta * delta;
                upstream(0, c) = -2.0 * w * delta / count;
                abs_sum += std::abs(delta);
            }
            stats.td_errors[static_cast<std::size_t>(b)] = abs_sum / n_users;
        }
        stats.server_loss = loss / count;
        require_finite(stats.server_loss, "server critic loss");
        const auto grads = bundle.server_critic.backward(tape, upstream);
        bundle.server_critic_opt.step(bundle.server_critic, grads);
        nn::soft_update(bundle.target_server_critic, bundle.server_critic, cfg.omega);
    }

    // Per-user critics regress onto the same targets.
    double user_loss_total = 0.0;
    for (int u = 0; u < n_users; ++u) {
        nn::Matrix x(d.critic_input(), n_batch);
        for (Eigen::Index b = 0; b < n_batch; ++b) {
            x.col(b) = inputs.col(b * n_users + u);
        }
        auto& critic = bundle.user_critics[static_cast<std::size_t>(u)];
        const nn::Tape tape = critic.forward_tape(x);
        nn::Matrix upstream(1, n_batch);
        double loss = 0.0;
        for (Eigen::Index b = 0; b < n_batch; ++b) {
            const double w = weights[static_cast<std::size_t>(b)];
            const double delta = y(u, b) - tape.output()(0, b);
            loss += w * delta * delta;
            upstream(0, b) = -2.0 * w * delta / static_cast<double>(n_batch);
        }
        loss /= static_cast<double>(n_batch);
        require_finite(loss, "user critic loss");
        user_loss_total += loss;
        bundle.user_critic_opt[static_cast<std::size_t>(u)].step(critic, critic.backward(tape, upstream));
        nn::soft_update(bundle.target_user_critics[static_cast<std::size_t>(u)], critic, cfg.omega);
    }
    stats.user_loss = user_loss_total / n_users;
    return stats;
}

ActorStats actor_update(AgentBundle& bundle, const replay::Batch& batch, const TrainConfig& cfg) {
    const Dims& d = bundle.dims;
    const auto n_batch = static_cast<Eigen::Index>(batch.size());
    if (batch.size() == 0) {
        throw StructuralError("actor_update: empty batch");
    }
    const int stride = d.view_stride();
    ActorStats stats;
    double q_total = 0.0;

    std::vector<hybrid::UserAction> actions;
    for (int u = 0; u < d.num_users; ++u) {
        nn::Matrix s(d.state_dim, n_batch);
        for (Eigen::Index b = 0; b < n_batch; ++b) {
            const auto st = batch.items[static_cast<std::size_t>(b)]->state(u);
            std::copy(st.begin(), st.end(), s.col(b).data());
        }
        auto& actor = bundle.actors[static_cast<std::size_t>(u)];
        const nn::Tape actor_tape = actor.forward_tape(s);
        const nn::Matrix& fresh = actor_tape.output();

        nn::Matrix inputs(d.critic_input(), n_batch);
        std::vector<int> positions(static_cast<std::size_t>(n_batch));
        std::vector<bool> candidate(static_cast<std::size_t>(n_batch));
        for (Eigen::Index b = 0; b < n_batch; ++b) {
            const auto& exp = *batch.items[static_cast<std::size_t>(b)];
            actions = exp.actions;
            actions[static_cast<std::size_t>(u)] = {fresh(0, b), fresh(1, b), fresh(2, b)};
            SlotView view{exp.num_users, exp.state_dim, exp.states.data(), actions.data(),
                          exp.assignment.data()};
            positions[static_cast<std::size_t>(b)] = write_critic_input(
                inputs.col(b).data(), d, view, u, exp.approved[static_cast<std::size_t>(u)] != 0);
            candidate[static_cast<std::size_t>(b)] = exp.approved[static_cast<std::size_t>(u)] != 0;
        }

        const nn::Tape q_tape = bundle.server_critic.forward_tape(inputs);
        q_total += q_tape.output().mean();
        const nn::Matrix upstream = nn::Matrix::Constant(1, n_batch, -1.0 / static_cast<double>(n_batch));
        nn::Matrix input_grad;
        bundle.server_critic.backward(q_tape, upstream, &input_grad);

        // dLoss/dA sums the action's appearances in the view and candidate slots.
        nn::Matrix action_grad(hybrid::kActionDim, n_batch);
        for (Eigen::Index b = 0; b < n_batch; ++b) {
            action_grad.col(b).setZero();
            if (candidate[static_cast<std::size_t>(b)]) {
                action_grad.col(b) += input_grad.block(d.view_size() + d.state_dim, b, hybrid::kActionDim, 1);
            }
            const int pos = positions[static_cast<std::size_t>(b)];
            if (pos >= 0) {
                action_grad.col(b) +=
                    input_grad.block(pos * stride + d.state_dim, b, hybrid::kActionDim, 1);
            }
        }
        const auto grads = actor.backward(actor_tape, action_grad);
        stats.grad_norms.push_back(std::sqrt(nn::squared_norm(grads)));
        bundle.actor_opt[static_cast<std::size_t>(u)].step(actor, grads);
        nn::soft_update(bundle.target_actors[static_cast<std::size_t>(u)], actor, cfg.omega);
    }
    stats.mean_q = q_total / d.num_users;
    require_finite(stats.mean_q, "actor objective");
    return stats;
}

// --- Trainer ----------------------------------------------------------------

Trainer::Trainer(EnvConfig env_cfg, TrainConfig cfg, Policy policy)
    : env_cfg_(std::move(env_cfg)),
      cfg_(std::move(cfg)),
      policy_(policy),
      behavior_(baseline_behavior(policy)),
      env_(env_cfg_),
      rng_(make_stream(cfg_.seed, kTrainerStream)),
      buffer_(cfg_.buffer_capacity, cfg_.nu_r, 1.0 - cfg_.nu_r, cfg_.priority_eps) {
    cfg_.validate();
    Rng init = make_stream(cfg_.seed, kInitStream);
    bundle_ = AgentBundle::create(dims_for(env_cfg_), cfg_, init);
}

coselect::Matching Trainer::select(const std::vector<sim::TaskSpec>& tasks,
                                   const std::vector<sim::DeviceState>& devices) {
    const int n_users = env_cfg_.num_users;
    const int n_servers = env_cfg_.num_servers;
    if (behavior_.selection == SelectionRule::CoSelect) {
        return coselect::co_select(coselect::make_instance(tasks, devices, env_cfg_)).matching;
    }

    std::vector<int> capacity(static_cast<std::size_t>(n_servers), env_cfg_.z_max);
    std::vector<std::optional<int>> assignment(static_cast<std::size_t>(n_users));
    std::vector<int> open;
    for (int u = 0; u < n_users; ++u) {
        open.clear();
        for (int m = 0; m < n_servers; ++m) {
            if (capacity[static_cast<std::size_t>(m)] > 0) {
                open.push_back(m);
            }
        }
        if (open.empty()) {
            break;
        }
        int chosen = open.front();
        if (behavior_.selection == SelectionRule::RandomFeasible) {
            std::uniform_int_distribution<std::size_t> pick(0, open.size() - 1);
            chosen = open[pick(rng_)];
        } else {
            const auto& gains = devices[static_cast<std::size_t>(u)].gains_db;
            for (int m : open) {
                if (gains[static_cast<std::size_t>(m)] > gains[static_cast<std::size_t>(chosen)]) {
                    chosen = m;
                }
            }
        }
        assignment[static_cast<std::size_t>(u)] = chosen;
        --capacity[static_cast<std::size_t>(chosen)];
    }
    return coselect::matching_from_assignment(std::move(assignment), n_servers);
}

std::map<int, double> Trainer::refinement_scores(int server, const std::vector<int>& candidates,
                                                 const std::vector<hybrid::AgentState>& states,
                                                 const std::vector<hybrid::UserAction>& actions,
                                                 const std::vector<hybrid::MappedAction>& mapped,
                                                 const std::vector<int>& assignment) {
    std::map<int, double> scores;
    const auto& tasks = env_.tasks();
    const auto& devices = env_.devices();

    switch (behavior_.refinement) {
    case RefinementRule::QScore: {
        if (updates_done_ == 0) {
            std::uniform_real_distribution<double> u01(0.0, 1.0);
            for (int u : candidates) {
                scores[u] = u01(rng_);
            }
            break;
        }
        const Dims& d = bundle_.dims;
        std::vector<double> flat;
        flat.reserve(states.size() * static_cast<std::size_t>(d.state_dim));
        for (const auto& s : states) {
            flat.insert(flat.end(), s.values.begin(), s.values.end());
        }
        SlotView view{d.num_users, d.state_dim, flat.data(), actions.data(), assignment.data()};
        nn::Matrix inputs(d.critic_input(), static_cast<Eigen::Index>(candidates.size()));
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            write_critic_input(inputs.col(static_cast<Eigen::Index>(i)).data(), d, view,
                               candidates[i], true);
        }
        const nn::Matrix q = bundle_.server_critic.forward(inputs);
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            scores[candidates[i]] = q(0, static_cast<Eigen::Index>(i));
        }
        break;
    }
    case RefinementRule::FirstComeFirstServed:
    case RefinementRule::OffloadCost:
    case RefinementRule::Deadline:
        for (int u : candidates) {
            const auto idx = static_cast<std::size_t>(u);
            const auto est = sim::estimate_offload(
                tasks[idx], mapped[idx].tx_power_dbm,
                devices[idx].gains_db[static_cast<std::size_t>(server)], env_cfg_);
            if (behavior_.refinement == RefinementRule::FirstComeFirstServed) {
                scores[u] = -est.transmission_s;
            } else if (behavior_.refinement == RefinementRule::OffloadCost) {
                scores[u] = -sim::cost(est.total_delay_s, est.energy_j, env_cfg_.rho1, env_cfg_.rho2);
            } else {
                scores[u] = -(tasks[idx].deadline_s - est.total_delay_s);
            }
        }
        break;
    }
    return scores;
}

EpisodeMetrics Trainer::run_episode(double noise_scale, std::vector<SlotRecord>* records) {
    env_.reset();
    const int n_users = env_cfg_.num_users;
    const auto n = static_cast<std::size_t>(n_users);

    EpisodeMetrics m;
    m.episode = episodes_done_ + 1;
    m.noise_scale = noise_scale;
    double reward_sum = 0.0;
    double cost_sum = 0.0;
    int timeouts = 0;
    int offloads = 0;
    int below = 0;
    int slots = 0;

    auto encode_all = [&](const std::vector<sim::DeviceState>& devs,
                          const std::vector<sim::TaskSpec>& tasks) {
        std::vector<hybrid::AgentState> out;
        out.reserve(n);
        for (std::size_t u = 0; u < n; ++u) {
            out.push_back(hybrid::encode_state(devs[u], tasks[u], env_cfg_));
        }
        return out;
    };

    std::vector<hybrid::AgentState> states = encode_all(env_.devices(), env_.tasks());
    while (!env_.done()) {
        SlotRecord rec;
        rec.slot = env_.slot();
        rec.matching = select(env_.tasks(), env_.devices());
        rec.actions = act(bundle_, states, noise_scale, rng_);

        std::vector<int> assignment(n, -1);
        for (std::size_t u = 0; u < n; ++u) {
            if (rec.matching.assignment[u]) {
                assignment[u] = *rec.matching.assignment[u];
            }
            rec.mapped.push_back(hybrid::map_user_action(rec.actions[u], env_cfg_));
        }

        rec.approved.assign(n, 0);
        for (int server = 0; server < env_cfg_.num_servers; ++server) {
            const auto& roster = rec.matching.rosters[static_cast<std::size_t>(server)];
            std::vector<int> requesting;
            std::vector<hybrid::Candidate> candidates;
            for (int u : roster) {
                if (rec.mapped[static_cast<std::size_t>(u)].offload_request) {
                    requesting.push_back(u);
                    candidates.push_back({u, env_.tasks()[static_cast<std::size_t>(u)].size_bits});
                }
            }
            if (candidates.empty()) {
                continue;
            }
            const auto scores = refinement_scores(server, requesting, states, rec.actions,
                                                  rec.mapped, assignment);
            const hybrid::ServerLimits limits{env_cfg_.subchannels, env_cfg_.storage_bits, roster};
            const auto decision = hybrid::refine(limits, candidates, scores);
            for (const auto& [u, ok] : decision.approvals) {
                rec.approved[static_cast<std::size_t>(u)] = ok ? 1 : 0;
            }
        }

        rec.decisions.resize(n);
        for (std::size_t u = 0; u < n; ++u) {
            auto& dec = rec.decisions[u];
            dec.offload = rec.approved[u] != 0;
            dec.server = rec.matching.assignment[u];
            dec.local_freq_hz = rec.mapped[u].local_freq_hz;
            dec.tx_power_dbm = rec.mapped[u].tx_power_dbm;
        }

        const auto& cur_states = states;
        rec.result = env_.advance_slot(rec.decisions);
        auto next_states = encode_all(rec.result.next_devices, rec.result.next_tasks);

        replay::Experience exp;
        exp.num_users = n_users;
        exp.state_dim = bundle_.dims.state_dim;
        for (std::size_t u = 0; u < n; ++u) {
            exp.states.insert(exp.states.end(), cur_states[u].values.begin(), cur_states[u].values.end());
            exp.next_states.insert(exp.next_states.end(), next_states[u].values.begin(),
                                   next_states[u].values.end());
            exp.rewards.push_back(rec.result.outcomes[u].reward);
        }
        exp.actions = rec.actions;
        exp.approved = rec.approved;
        exp.assignment = assignment;
        exp.terminal = rec.result.terminal;
        buffer_.push(std::move(exp));

        double slot_cost = 0.0;
        for (const auto& o : rec.result.outcomes) {
            reward_sum += o.reward;
            slot_cost += o.cost;
            timeouts += o.timed_out ? 1 : 0;
            offloads += o.offloaded ? 1 : 0;
            below += o.battery_after_j < env_cfg_.battery_j.lo ? 1 : 0;
        }
        cost_sum += slot_cost;
        ++slots;

        if (trace_ != nullptr) {
            write_trace(m.episode, rec);
        }
        states = std::move(next_states);
        if (records != nullptr) {
            records->push_back(std::move(rec));
        }
    }

    const double user_slots = static_cast<double>(slots) * n_users;
    m.mean_reward = reward_sum / user_slots;
    m.mean_cost = cost_sum / slots;
    m.timeout_pct = 100.0 * timeouts / user_slots;
    m.participation_pct = 100.0 * offloads / user_slots;
    m.below_bmin_pct = 100.0 * below / user_slots;
    ++episodes_done_;
    return m;
}

std::optional<Trainer::UpdateStats> Trainer::update() {
    if (!buffer_.ready(static_cast<std::size_t>(cfg_.batch_size))) {
        return std::nullopt;
    }
    const auto batch = buffer_.sample(static_cast<std::size_t>(cfg_.batch_size), rng_);

    std::vector<double> weights(batch.size());
    if (cfg_.importance_weighting) {
        double max_w = 0.0;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            weights[i] = 1.0 / (static_cast<double>(buffer_.size()) * batch.probabilities[i]);
            max_w = std::max(max_w, weights[i]);
        }
        for (auto& w : weights) {
            w /= max_w;
        }
    } else {
        weights = batch.priorities;
    }

    const auto critic = critic_update(bundle_, batch, weights, cfg_);
    const auto actor = actor_update(bundle_, batch, cfg_);

    std::vector<double> rewards(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        rewards[i] = cfg_.reward_scale * batch.items[i]->mean_reward();
    }
    buffer_.update_priorities(batch.refs, rewards, critic.td_errors);
    ++updates_done_;

    if (histogram_ != nullptr) {
        const auto counts = buffer_.priority_histogram(10);
        *histogram_ << updates_done_;
        for (auto c : counts) {
            *histogram_ << ',' << c;
        }
        *histogram_ << '\n';
    }
    return UpdateStats{critic.server_loss, -actor.mean_q};
}

std::vector<EpisodeMetrics> Trainer::train(const TrainHooks& hooks) {
    std::vector<EpisodeMetrics> log;
    log.reserve(static_cast<std::size_t>(cfg_.episodes));
    set_trace(hooks.trace);
    set_priority_histogram(hooks.priority_histogram);
    try {
        for (int ep = 0; ep < cfg_.episodes; ++ep) {
            auto m = run_episode(cfg_.noise.at(ep));
            double critic_loss = 0.0;
            double actor_loss = 0.0;
            int rounds = 0;
            for (int k = 0; k < cfg_.updates_per_episode; ++k) {
                if (auto s = update()) {
                    critic_loss += s->critic_loss;
                    actor_loss += s->actor_loss;
                    ++rounds;
                }
            }
            if (rounds > 0) {
                m.critic_loss = critic_loss / rounds;
                m.actor_loss = actor_loss / rounds;
            }
            if (hooks.on_episode) {
                hooks.on_episode(m);
            }
            log.push_back(m);
        }
    } catch (const TrainingError&) {
        if (hooks.abort_checkpoint) {
            nn::save_checkpoint(*hooks.abort_checkpoint, bundle_.named_networks());
        }
        throw;
    }
    return log;
}

void Trainer::write_trace(int episode, const SlotRecord& rec) const {
    nlohmann::json users = nlohmann::json::array();
    for (std::size_t u = 0; u < rec.decisions.size(); ++u) {
        const auto& d = rec.decisions[u];
        const auto& o = rec.result.outcomes[u];
        users.push_back({{"user", u},
                         {"server", d.server ? nlohmann::json(*d.server) : nlohmann::json(nullptr)},
                         {"request", rec.mapped[u].offload_request},
                         {"offload", d.offload},
                         {"freq_hz", d.local_freq_hz},
                         {"power_dbm", d.tx_power_dbm},
                         {"delay_s", o.delay_s},
                         {"energy_j", o.energy_j},
                         {"reward", o.reward},
                         {"timed_out", o.timed_out}});
    }
    nlohmann::json line{{"policy", to_string(policy_)},
                        {"episode", episode},
                        {"slot", rec.slot},
                        {"users", std::move(users)}};
    *trace_ << line.dump() << '\n';
}

std::vector<EpisodeMetrics> train(const EnvConfig& env_cfg, const TrainConfig& cfg, Policy policy,
                                  const TrainHooks& hooks) {
    Trainer trainer(env_cfg, cfg, policy);
    return trainer.train(hooks);
}

} // namespace ucms::train
