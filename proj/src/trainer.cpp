#include <cmath>
#include <filesystem>
#include <limits>
#include <stdexcept>

#include "v2x/algo.hpp"

namespace v2x {

namespace {

std::vector<double> flatten_obs(const std::vector<std::vector<double>>& obs) {
    std::vector<double> flat;
    if (!obs.empty()) flat.reserve(obs.size() * obs[0].size());
    for (const auto& o : obs) flat.insert(flat.end(), o.begin(), o.end());
    return flat;
}

JointAction to_joint(const std::vector<int>& ids, int num_power_levels) {
    JointAction joint(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
        joint[i] = decode_action(ids[i], num_power_levels);
    }
    return joint;
}

}  // namespace

Trainer::Trainer(TrainerConfig cfg)
    : cfg_(std::move(cfg)),
      env_(cfg_.env, cfg_.train_source),
      replay_(cfg_.hp.replay_capacity),
      act_rng_(derive_seed(cfg_.seed, 0xAC7101)),
      sample_rng_(derive_seed(cfg_.seed, 0x5A3202)) {
    if (cfg_.n_evals <= 0 || cfg_.eval_episodes <= 0) {
        throw std::invalid_argument("evaluation counts must be positive");
    }
    if (!cfg_.eval_topologies.empty() &&
        static_cast<int>(cfg_.eval_topologies.size()) != cfg_.eval_episodes) {
        throw std::invalid_argument("eval topology count must match eval episodes");
    }
    if (cfg_.bounds.size() > 1 &&
        static_cast<int>(cfg_.bounds.size()) != cfg_.eval_episodes) {
        throw std::invalid_argument("bounds must be shared (one entry) or per eval episode");
    }
    Rng init_rng(derive_seed(cfg_.seed, 0x171717));
    const int L = env_.num_agents();
    const int obs_dim = env_.local_obs_dim();
    const int state_dim = env_.global_state_dim();
    const int n_actions = env_.num_actions();
    if (is_value_based(cfg_.algo)) {
        value_.emplace(make_value_nets(cfg_.algo, L, obs_dim, state_dim, n_actions,
                                       cfg_.hp, init_rng));
    } else {
        ac_.emplace(make_actor_critic_nets(cfg_.algo, L, obs_dim, state_dim,
                                           n_actions, cfg_.hp, init_rng));
    }
}

bool Trainer::update_ready() const {
    const int64_t need = std::max<int64_t>(cfg_.hp.warmup_transitions, cfg_.hp.batch_size);
    return replay_.size() >= need;
}

void Trainer::run_episode(int64_t episode) {
    env_.reset();
    const bool need_state = uses_global_state(cfg_.algo);
    const int P = env_.num_power_levels();
    int step_idx = 0;
    while (!env_.done()) {
        const auto& obs = env_.local_obs();
        std::vector<double> flat_obs = flatten_obs(obs);
        std::vector<double> state = need_state ? env_.global_state() : std::vector<double>{};
        std::vector<int> ids;
        std::vector<double> logp;
        if (value_) {
            ids = act_value_based(*value_, obs, eps_, act_rng_);
        } else {
            ids = act_stochastic(*ac_, obs, act_rng_, &logp);
        }
        StepOutcome out = env_.step(to_joint(ids, P));
        double loss = std::numeric_limits<double>::quiet_NaN();
        bool updated = false;
        if (value_) {
            Transition tr;
            tr.obs = std::move(flat_obs);
            tr.next_obs = flatten_obs(out.local_obs);
            tr.state = std::move(state);
            if (need_state) tr.next_state = out.global_state;
            tr.actions = ids;
            tr.reward = out.reward;
            tr.done = out.done;
            replay_.push(std::move(tr));
            if (update_ready()) {
                auto batch = replay_.sample(cfg_.hp.batch_size, sample_rng_);
                loss = value_update(*value_, batch);
                updated = true;
            }
        } else {
            RolloutStep st;
            st.obs = std::move(flat_obs);
            st.state = std::move(state);
            st.actions = ids;
            st.logp = std::move(logp);
            st.reward = out.reward;
            st.done = out.done;
            st.next_obs = flatten_obs(out.local_obs);
            if (need_state) st.next_state = out.global_state;
            rollout_.steps.push_back(std::move(st));
            const bool full = rollout_.size() >= cfg_.hp.batch_size;
            // A2C flushes partial batches at episode end; PPO rollouts span episodes
            const bool flush = is_ppo(cfg_.algo) ? full : (full || out.done);
            if (flush) {
                AcLosses l = is_ppo(cfg_.algo) ? ppo_update(*ac_, rollout_, sample_rng_)
                                               : a2c_update(*ac_, rollout_);
                loss = l.actor + l.critic;
                updated = true;
            }
        }
        if (updated && !std::isfinite(loss)) {
            log_.aborted = true;
            log_.abort_reason = "non-finite loss at episode " + std::to_string(episode) +
                                " step " + std::to_string(step_idx);
            return;
        }
        ++step_idx;
    }
}

const TrainLog& Trainer::train() {
    log_ = TrainLog{};
    const int64_t episodes = std::max<int64_t>(cfg_.hp.training_episodes, cfg_.n_evals);
    for (int64_t e = 0; e < episodes; ++e) {
        eps_ = epsilon_at(cfg_.hp, e);
        run_episode(e);
        if (log_.aborted) break;
        log_.episodes_run = e + 1;
        const int64_t before = e * cfg_.n_evals / episodes;
        const int64_t after = (e + 1) * cfg_.n_evals / episodes;
        if (after > before) {
            EvalRecord rec = evaluate(static_cast<int>(after) - 1);
            rec.episodes_done = e + 1;
            log_.evals.push_back(std::move(rec));
        }
    }
    return log_;
}

std::vector<int> Trainer::greedy_action_ids(const std::vector<std::vector<double>>& obs) const {
    if (value_) {
        Rng unused(0);  // eps = 0 draws nothing
        return act_value_based(*value_, obs, 0.0, unused);
    }
    return act_mode(*ac_, obs);
}

EvalRecord Trainer::evaluate(int eval_index) const {
    EnvConfig ec = cfg_.env;
    ec.seed = derive_seed(cfg_.seed, 0xE7A00000ULL + static_cast<uint64_t>(eval_index));
    Env ev(ec, cfg_.train_source);
    const int P = ev.num_power_levels();
    auto run_episode_greedy = [&]() {
        double total = 0.0;
        while (!ev.done()) {
            std::vector<int> ids = greedy_action_ids(ev.local_obs());
            total += ev.step(to_joint(ids, P)).reward;
        }
        return total;
    };
    EvalRecord rec;
    rec.eval_index = eval_index;
    rec.episode_returns.reserve(cfg_.eval_episodes);
    if (cfg_.eval_topologies.empty()) {
        for (int k = 0; k < cfg_.eval_episodes; ++k) {
            ev.reset();
            rec.episode_returns.push_back(run_episode_greedy());
        }
    } else {
        for (const TopologySnapshot& snap : cfg_.eval_topologies) {
            ev.reset_to(snap);
            rec.episode_returns.push_back(run_episode_greedy());
        }
    }
    double sum = 0.0;
    double norm_sum = 0.0;
    for (size_t k = 0; k < rec.episode_returns.size(); ++k) {
        sum += rec.episode_returns[k];
        if (!cfg_.bounds.empty()) {
            const NormalizationBounds& b = cfg_.bounds[cfg_.bounds.size() == 1 ? 0 : k];
            norm_sum += normalize_return(rec.episode_returns[k], b);
        }
    }
    rec.mean_return = sum / rec.episode_returns.size();
    rec.normalized_return = cfg_.bounds.empty()
                                ? std::numeric_limits<double>::quiet_NaN()
                                : norm_sum / rec.episode_returns.size();
    return rec;
}

void Trainer::save_checkpoint(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    auto path = [&](const std::string& name) { return dir + "/" + name + ".net"; };
    if (value_) {
        for (int i = 0; i < value_->L; ++i) {
            save_net(value_->q[i], path("q" + std::to_string(i)));
            save_net(value_->q_target[i], path("q" + std::to_string(i) + "_target"));
        }
        static const char* mixer_names[] = {"mixer_w1", "mixer_b1", "mixer_w2", "mixer_b2"};
        for (size_t k = 0; k < value_->hyper.size(); ++k) {
            save_net(value_->hyper[k], path(mixer_names[k]));
            save_net(value_->hyper_target[k], path(std::string(mixer_names[k]) + "_target"));
        }
    } else {
        for (size_t k = 0; k < ac_->actor.size(); ++k) {
            save_net(ac_->actor[k], path("actor" + std::to_string(k)));
            save_net(ac_->critic[k], path("critic" + std::to_string(k)));
            if (!ac_->critic_target.empty()) {
                save_net(ac_->critic_target[k], path("critic" + std::to_string(k) + "_target"));
            }
        }
    }
}

void Trainer::load_checkpoint(const std::string& dir) {
    auto path = [&](const std::string& name) { return dir + "/" + name + ".net"; };
    if (value_) {
        for (int i = 0; i < value_->L; ++i) {
            value_->q[i] = load_net(path("q" + std::to_string(i)));
            value_->q_target[i] = load_net(path("q" + std::to_string(i) + "_target"));
        }
        static const char* mixer_names[] = {"mixer_w1", "mixer_b1", "mixer_w2", "mixer_b2"};
        for (size_t k = 0; k < value_->hyper.size(); ++k) {
            value_->hyper[k] = load_net(path(mixer_names[k]));
            value_->hyper_target[k] = load_net(path(std::string(mixer_names[k]) + "_target"));
        }
    } else {
        for (size_t k = 0; k < ac_->actor.size(); ++k) {
            ac_->actor[k] = load_net(path("actor" + std::to_string(k)));
            ac_->critic[k] = load_net(path("critic" + std::to_string(k)));
            if (!ac_->critic_target.empty()) {
                ac_->critic_target[k] = load_net(path("critic" + std::to_string(k) + "_target"));
            }
        }
    }
}

}  // namespace v2x
