#include "v2x/algo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace v2x {

namespace {

constexpr double kTinyProb = 1e-300;

Eigen::Map<const Eigen::VectorXd> agent_block(const std::vector<double>& flat,
                                              int agent, int dim) {
    return {flat.data() + static_cast<size_t>(agent) * dim, dim};
}

void check_obs(const std::vector<std::vector<double>>& obs, int L, int dim) {
    if (static_cast<int>(obs.size()) != L) {
        throw std::invalid_argument("observation count does not match agent count");
    }
    for (const auto& o : obs) {
        if (static_cast<int>(o.size()) != dim) {
            throw std::invalid_argument("observation dimension mismatch");
        }
    }
}

int argmax_lowest(const Eigen::VectorXd& v) {
    int best = 0;
    for (int k = 1; k < v.size(); ++k) {
        if (v[k] > v[best]) best = k;
    }
    return best;
}

void shuffle_indices(std::vector<int>& idx, Rng& rng) {
    for (int k = static_cast<int>(idx.size()) - 1; k > 0; --k) {
        std::swap(idx[k], idx[rng.uniform_int(k + 1)]);
    }
}

double elu(double x) { return x > 0.0 ? x : std::exp(x) - 1.0; }
double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }
double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

Algo algo_from_string(const std::string& name) {
    std::string s;
    for (char c : name) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (s == "idqn") return Algo::IDQN;
    if (s == "hys-idqn" || s == "hysidqn" || s == "hys_idqn") return Algo::HysIDQN;
    if (s == "vdn") return Algo::VDN;
    if (s == "qmix") return Algo::QMIX;
    if (s == "ia2c") return Algo::IA2C;
    if (s == "maa2c") return Algo::MAA2C;
    if (s == "ippo") return Algo::IPPO;
    if (s == "mappo") return Algo::MAPPO;
    throw std::invalid_argument("unknown algorithm: " + name);
}

const char* to_string(Algo algo) {
    switch (algo) {
        case Algo::IDQN: return "idqn";
        case Algo::HysIDQN: return "hys-idqn";
        case Algo::VDN: return "vdn";
        case Algo::QMIX: return "qmix";
        case Algo::IA2C: return "ia2c";
        case Algo::MAA2C: return "maa2c";
        case Algo::IPPO: return "ippo";
        case Algo::MAPPO: return "mappo";
    }
    return "?";
}

std::vector<Algo> all_algos() {
    return {Algo::IDQN, Algo::HysIDQN, Algo::VDN, Algo::QMIX,
            Algo::IA2C, Algo::MAA2C, Algo::IPPO, Algo::MAPPO};
}

Hyperparameters default_hyperparameters(Algo algo, Task task) {
    Hyperparameters hp;
    const bool multi = task_is_multi_topology(task);
    const bool sig_sl = task == Task::SIG_SL_NFF || task == Task::SIG_SL_FF;
    if (is_value_based(algo)) {
        hp.gamma = 0.9;
        hp.batch_size = 64;
        hp.tau = 5e-3;
        hp.parameter_sharing = false;
        hp.hyst_beta = algo == Algo::HysIDQN ? 0.2 : 1.0;
        hp.mixer_lr = 1e-6;
        if (multi) {
            const bool independent = algo == Algo::IDQN || algo == Algo::HysIDQN;
            hp.lr = independent && task == Task::POSIG ? 1e-6 : 1e-5;
            hp.training_episodes = 30000;
            hp.anneal_episodes = 24000;
        } else {
            hp.lr = 3e-5;
            hp.training_episodes = sig_sl ? 3000 : 50000;
            hp.anneal_episodes = sig_sl ? 2400 : 40000;
        }
    } else if (is_a2c(algo)) {
        hp.gamma = 0.9;
        hp.batch_size = 8;
        hp.tau = 0.01;
        if (multi) {
            hp.actor_lr = hp.critic_lr = 5e-4;
            hp.parameter_sharing = true;
            hp.training_episodes = 100000;
        } else {
            hp.actor_lr = hp.critic_lr = 2e-4;
            hp.parameter_sharing = false;
            hp.training_episodes = sig_sl ? 30000 : 50000;
        }
        hp.anneal_episodes = hp.training_episodes * 4 / 5;
    } else {
        hp.gamma = 0.99;
        hp.batch_size = 256;
        hp.ppo_epochs = 10;
        hp.ppo_minibatches = 4;
        hp.clip_ratio = 0.2;
        hp.entropy_coef = 1e-3;
        hp.parameter_sharing = true;
        hp.actor_lr = 4e-4;
        hp.critic_lr = 6e-4;
        hp.training_episodes = multi ? 100000 : (sig_sl ? 30000 : 50000);
        hp.anneal_episodes = hp.training_episodes * 4 / 5;
    }
    return hp;
}

double epsilon_at(const Hyperparameters& hp, int64_t episode) {
    if (hp.anneal_episodes <= 0 || episode >= hp.anneal_episodes) return hp.eps_end;
    double frac = static_cast<double>(episode) / static_cast<double>(hp.anneal_episodes);
    return hp.eps_start + frac * (hp.eps_end - hp.eps_start);
}

ReplayBuffer::ReplayBuffer(int64_t capacity) : capacity_(capacity) {
    if (capacity <= 0) throw std::invalid_argument("replay capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
    if (size() < capacity_) {
        data_.push_back(std::move(t));
    } else {
        data_[next_] = std::move(t);
    }
    next_ = (next_ + 1) % capacity_;
}

std::vector<const Transition*> ReplayBuffer::sample(int batch, Rng& rng) const {
    if (batch <= 0) throw std::invalid_argument("batch must be positive");
    if (size() < batch) throw std::invalid_argument("not enough transitions to sample");
    std::vector<const Transition*> out(batch);
    for (int k = 0; k < batch; ++k) {
        out[k] = &data_[rng.uniform_int(static_cast<int>(data_.size()))];
    }
    return out;
}

// ---- value-based ----------------------------------------------------------

ValueNets make_value_nets(Algo algo, int L, int obs_dim, int state_dim,
                          int n_actions, const Hyperparameters& hp, Rng& rng) {
    if (!is_value_based(algo)) throw std::invalid_argument("not a value-based algorithm");
    if (L <= 0 || obs_dim <= 0 || n_actions <= 0) {
        throw std::invalid_argument("value ensemble dimensions must be positive");
    }
    if (algo == Algo::QMIX && state_dim <= 0) {
        throw std::invalid_argument("qmix requires the global state");
    }
    ValueNets nets;
    nets.algo = algo;
    nets.hp = hp;
    nets.L = L;
    nets.obs_dim = obs_dim;
    nets.state_dim = state_dim;
    nets.n_actions = n_actions;
    std::vector<int> sizes{obs_dim, hp.hidden, hp.hidden, n_actions};
    for (int i = 0; i < L; ++i) {
        nets.q.emplace_back(sizes, Head::Linear, rng);
        nets.q_target.push_back(nets.q.back());
        nets.q_opt.push_back(make_adam(nets.q[i], hp.lr));
    }
    if (algo == Algo::QMIX) {
        const int e = hp.qmix_embed;
        nets.hyper.emplace_back(std::vector<int>{state_dim, L * e}, Head::Linear, rng);
        nets.hyper.emplace_back(std::vector<int>{state_dim, e}, Head::Linear, rng);
        nets.hyper.emplace_back(std::vector<int>{state_dim, e}, Head::Linear, rng);
        nets.hyper.emplace_back(std::vector<int>{state_dim, e, 1}, Head::Linear, rng);
        nets.hyper_target = nets.hyper;
        for (const auto& h : nets.hyper) nets.hyper_opt.push_back(make_adam(h, hp.mixer_lr));
    }
    return nets;
}

std::vector<int> act_value_based(const ValueNets& nets,
                                 const std::vector<std::vector<double>>& obs,
                                 double eps, Rng& rng) {
    check_obs(obs, nets.L, nets.obs_dim);
    std::vector<int> ids(nets.L);
    for (int i = 0; i < nets.L; ++i) {
        if (eps > 0.0 && rng.uniform() < eps) {
            ids[i] = rng.uniform_int(nets.n_actions);
            continue;
        }
        Eigen::Map<const Eigen::VectorXd> x(obs[i].data(), obs[i].size());
        ids[i] = argmax_lowest(nets.q[i].forward(x));
    }
    return ids;
}

namespace {

void check_batch(const ValueNets& nets, const std::vector<const Transition*>& batch) {
    if (batch.empty()) throw std::invalid_argument("empty batch");
    const size_t want = static_cast<size_t>(nets.L) * nets.obs_dim;
    for (const Transition* tr : batch) {
        if (tr->obs.size() != want || tr->next_obs.size() != want ||
            static_cast<int>(tr->actions.size()) != nets.L) {
            throw std::invalid_argument("transition shape mismatch");
        }
    }
}

// Mixer evaluation with everything the backward pass needs.
struct MixerEval {
    Eigen::VectorXd w1_raw;  // embed*L, row-major by embed
    Eigen::VectorXd b1;
    Eigen::VectorXd w2_raw;
    double b2 = 0.0;
    Eigen::VectorXd pre;     // |W1| q + b1
    Eigen::VectorXd hidden;  // elu(pre)
    DenseNet::Cache c_w1, c_b1, c_w2, c_b2;
};

double mixer_forward(const std::vector<DenseNet>& hyper,
                     const Eigen::Ref<const Eigen::VectorXd>& state,
                     const Eigen::Ref<const Eigen::VectorXd>& q, int L, int embed,
                     MixerEval& ev) {
    ev.w1_raw = hyper[0].forward(state, ev.c_w1);
    ev.b1 = hyper[1].forward(state, ev.c_b1);
    ev.w2_raw = hyper[2].forward(state, ev.c_w2);
    ev.b2 = hyper[3].forward(state, ev.c_b2)(0);
    ev.pre = ev.b1;
    for (int e = 0; e < embed; ++e) {
        for (int i = 0; i < L; ++i) {
            ev.pre[e] += std::abs(ev.w1_raw[e * L + i]) * q[i];
        }
    }
    ev.hidden.resize(embed);
    double qtot = ev.b2;
    for (int e = 0; e < embed; ++e) {
        ev.hidden[e] = elu(ev.pre[e]);
        qtot += std::abs(ev.w2_raw[e]) * ev.hidden[e];
    }
    return qtot;
}

// Backpropagates d(loss)/d(qtot) through the mixer; accumulates hypernet
// gradients and returns d(loss)/d(q) for the agent heads.
Eigen::VectorXd mixer_backward(const std::vector<DenseNet>& hyper,
                               const Eigen::Ref<const Eigen::VectorXd>& q, int L,
                               int embed, const MixerEval& ev, double dqtot,
                               std::vector<LayerGrads>& hyper_grads) {
    Eigen::VectorXd d_w2(embed), d_pre(embed);
    for (int e = 0; e < embed; ++e) {
        d_w2[e] = sign_of(ev.w2_raw[e]) * ev.hidden[e] * dqtot;
        d_pre[e] = std::abs(ev.w2_raw[e]) * dqtot * elu_grad(ev.pre[e]);
    }
    Eigen::VectorXd d_w1(embed * L), dq = Eigen::VectorXd::Zero(L);
    for (int e = 0; e < embed; ++e) {
        for (int i = 0; i < L; ++i) {
            d_w1[e * L + i] = sign_of(ev.w1_raw[e * L + i]) * d_pre[e] * q[i];
            dq[i] += std::abs(ev.w1_raw[e * L + i]) * d_pre[e];
        }
    }
    Eigen::VectorXd d_b2(1);
    d_b2(0) = dqtot;
    hyper[0].backward(ev.c_w1, d_w1, hyper_grads[0]);
    hyper[1].backward(ev.c_b1, d_pre, hyper_grads[1]);
    hyper[2].backward(ev.c_w2, d_w2, hyper_grads[2]);
    hyper[3].backward(ev.c_b2, d_b2, hyper_grads[3]);
    return dq;
}

}  // namespace

double qmix_mix(const ValueNets& nets, const std::vector<double>& agent_q,
                const std::vector<double>& state, bool use_target) {
    if (nets.algo != Algo::QMIX) throw std::invalid_argument("ensemble has no mixer");
    if (static_cast<int>(agent_q.size()) != nets.L) {
        throw std::invalid_argument("agent utility count mismatch");
    }
    if (static_cast<int>(state.size()) != nets.state_dim) {
        throw std::invalid_argument("state dimension mismatch");
    }
    Eigen::Map<const Eigen::VectorXd> s(state.data(), state.size());
    Eigen::Map<const Eigen::VectorXd> q(agent_q.data(), agent_q.size());
    MixerEval ev;
    return mixer_forward(use_target ? nets.hyper_target : nets.hyper, s, q, nets.L,
                         nets.hp.qmix_embed, ev);
}

LayerGrads dqn_gradients(const ValueNets& nets,
                         const std::vector<const Transition*>& batch, int agent,
                         double* loss_out) {
    check_batch(nets, batch);
    if (agent < 0 || agent >= nets.L) throw std::invalid_argument("agent out of range");
    const double inv = 1.0 / batch.size();
    double loss = 0.0;
    DenseNet::Cache cache;
    LayerGrads grads = nets.q[agent].zero_grads();
    for (const Transition* tr : batch) {
        Eigen::VectorXd qv = nets.q[agent].forward(agent_block(tr->obs, agent, nets.obs_dim), cache);
        double ymax = tr->done
                          ? 0.0
                          : nets.q_target[agent].forward(agent_block(tr->next_obs, agent, nets.obs_dim)).maxCoeff();
        double y = tr->reward + nets.hp.gamma * ymax;
        int a = tr->actions[agent];
        double delta = qv[a] - y;
        loss += delta * delta * inv;
        // hysteresis scales the gradient by alpha when the TD error is
        // non-negative and by beta when it is negative
        double factor = (y - qv[a]) >= 0.0 ? nets.hp.hyst_alpha : nets.hp.hyst_beta;
        Eigen::VectorXd gout = Eigen::VectorXd::Zero(nets.n_actions);
        gout[a] = factor * 2.0 * delta * inv;
        nets.q[agent].backward(cache, gout, grads);
    }
    if (loss_out) *loss_out = loss;
    return grads;
}

double dqn_update(ValueNets& nets, const std::vector<const Transition*>& batch) {
    double loss = 0.0;
    for (int i = 0; i < nets.L; ++i) {
        double agent_loss = 0.0;
        LayerGrads grads = dqn_gradients(nets, batch, i, &agent_loss);
        loss += agent_loss / nets.L;
        adam_step(nets.q[i], grads, nets.q_opt[i]);
        soft_update(nets.q_target[i], nets.q[i], nets.hp.tau);
    }
    return loss;
}

double vdn_q_tot(const ValueNets& nets, const std::vector<double>& joint_obs,
                 const std::vector<int>& actions) {
    if (joint_obs.size() != static_cast<size_t>(nets.L) * nets.obs_dim ||
        static_cast<int>(actions.size()) != nets.L) {
        throw std::invalid_argument("joint observation or action shape mismatch");
    }
    double qtot = 0.0;
    for (int i = 0; i < nets.L; ++i) {
        qtot += nets.q[i].forward(agent_block(joint_obs, i, nets.obs_dim))[actions[i]];
    }
    return qtot;
}

double vdn_update(ValueNets& nets, const std::vector<const Transition*>& batch) {
    check_batch(nets, batch);
    const int B = static_cast<int>(batch.size());
    const double inv = 1.0 / B;
    double loss = 0.0;
    std::vector<LayerGrads> grads;
    grads.reserve(nets.L);
    for (int i = 0; i < nets.L; ++i) grads.push_back(nets.q[i].zero_grads());
    std::vector<DenseNet::Cache> caches(nets.L);
    for (const Transition* tr : batch) {
        double qtot = 0.0;
        std::vector<Eigen::VectorXd> qv(nets.L);
        for (int i = 0; i < nets.L; ++i) {
            qv[i] = nets.q[i].forward(agent_block(tr->obs, i, nets.obs_dim), caches[i]);
            qtot += qv[i][tr->actions[i]];
        }
        double y = tr->reward;
        if (!tr->done) {
            double next_sum = 0.0;
            for (int i = 0; i < nets.L; ++i) {
                next_sum += nets.q_target[i].forward(agent_block(tr->next_obs, i, nets.obs_dim)).maxCoeff();
            }
            y += nets.hp.gamma * next_sum;
        }
        double delta = qtot - y;
        loss += delta * delta * inv;
        double g = 2.0 * delta * inv;
        for (int i = 0; i < nets.L; ++i) {
            Eigen::VectorXd gout = Eigen::VectorXd::Zero(nets.n_actions);
            gout[tr->actions[i]] = g;
            nets.q[i].backward(caches[i], gout, grads[i]);
        }
    }
    for (int i = 0; i < nets.L; ++i) {
        adam_step(nets.q[i], grads[i], nets.q_opt[i]);
        soft_update(nets.q_target[i], nets.q[i], nets.hp.tau);
    }
    return loss;
}

double qmix_update(ValueNets& nets, const std::vector<const Transition*>& batch) {
    check_batch(nets, batch);
    const int B = static_cast<int>(batch.size());
    const double inv = 1.0 / B;
    const int embed = nets.hp.qmix_embed;
    double loss = 0.0;
    std::vector<LayerGrads> grads;
    grads.reserve(nets.L);
    for (int i = 0; i < nets.L; ++i) grads.push_back(nets.q[i].zero_grads());
    std::vector<LayerGrads> hyper_grads;
    hyper_grads.reserve(4);
    for (const auto& h : nets.hyper) hyper_grads.push_back(h.zero_grads());
    std::vector<DenseNet::Cache> caches(nets.L);
    MixerEval ev;
    for (const Transition* tr : batch) {
        if (static_cast<int>(tr->state.size()) != nets.state_dim) {
            throw std::invalid_argument("transition lacks the global state");
        }
        Eigen::VectorXd qsel(nets.L);
        for (int i = 0; i < nets.L; ++i) {
            Eigen::VectorXd qv = nets.q[i].forward(agent_block(tr->obs, i, nets.obs_dim), caches[i]);
            qsel[i] = qv[tr->actions[i]];
        }
        double y = tr->reward;
        if (!tr->done) {
            Eigen::VectorXd qnext(nets.L);
            for (int i = 0; i < nets.L; ++i) {
                qnext[i] = nets.q_target[i].forward(agent_block(tr->next_obs, i, nets.obs_dim)).maxCoeff();
            }
            Eigen::Map<const Eigen::VectorXd> sn(tr->next_state.data(), tr->next_state.size());
            MixerEval evt;
            y += nets.hp.gamma * mixer_forward(nets.hyper_target, sn, qnext, nets.L, embed, evt);
        }
        Eigen::Map<const Eigen::VectorXd> s(tr->state.data(), tr->state.size());
        double qtot = mixer_forward(nets.hyper, s, qsel, nets.L, embed, ev);
        double delta = qtot - y;
        loss += delta * delta * inv;
        Eigen::VectorXd dq =
            mixer_backward(nets.hyper, qsel, nets.L, embed, ev, 2.0 * delta * inv, hyper_grads);
        for (int i = 0; i < nets.L; ++i) {
            Eigen::VectorXd gout = Eigen::VectorXd::Zero(nets.n_actions);
            gout[tr->actions[i]] = dq[i];
            nets.q[i].backward(caches[i], gout, grads[i]);
        }
    }
    for (int i = 0; i < nets.L; ++i) {
        adam_step(nets.q[i], grads[i], nets.q_opt[i]);
        soft_update(nets.q_target[i], nets.q[i], nets.hp.tau);
    }
    for (size_t k = 0; k < nets.hyper.size(); ++k) {
        adam_step(nets.hyper[k], hyper_grads[k], nets.hyper_opt[k]);
        soft_update(nets.hyper_target[k], nets.hyper[k], nets.hp.tau);
    }
    return loss;
}

double value_update(ValueNets& nets, const std::vector<const Transition*>& batch) {
    switch (nets.algo) {
        case Algo::IDQN:
        case Algo::HysIDQN: return dqn_update(nets, batch);
        case Algo::VDN: return vdn_update(nets, batch);
        case Algo::QMIX: return qmix_update(nets, batch);
        default: throw std::invalid_argument("not a value-based algorithm");
    }
}

// ---- actor-critic ---------------------------------------------------------

ActorCriticNets make_actor_critic_nets(Algo algo, int L, int obs_dim,
                                       int state_dim, int n_actions,
                                       const Hyperparameters& hp, Rng& rng) {
    if (is_value_based(algo)) throw std::invalid_argument("not an actor-critic algorithm");
    if (L <= 0 || obs_dim <= 0 || n_actions <= 0) {
        throw std::invalid_argument("actor-critic dimensions must be positive");
    }
    if (uses_global_state(algo) && state_dim <= 0) {
        throw std::invalid_argument("centralized critic requires the global state");
    }
    ActorCriticNets nets;
    nets.algo = algo;
    nets.hp = hp;
    nets.L = L;
    nets.obs_dim = obs_dim;
    nets.state_dim = state_dim;
    nets.n_actions = n_actions;
    nets.shared = hp.parameter_sharing;
    const int n_nets = nets.shared ? 1 : L;
    const int actor_in = obs_dim + (nets.shared ? L : 0);
    const int critic_in =
        uses_global_state(algo) ? state_dim : obs_dim + (nets.shared ? L : 0);
    std::vector<int> actor_sizes{actor_in, hp.hidden, hp.hidden, n_actions};
    std::vector<int> critic_sizes{critic_in, hp.hidden, hp.hidden, 1};
    for (int k = 0; k < n_nets; ++k) {
        nets.actor.emplace_back(actor_sizes, Head::Softmax, rng);
        nets.actor_opt.push_back(make_adam(nets.actor[k], hp.actor_lr));
        nets.critic.emplace_back(critic_sizes, Head::Linear, rng);
        nets.critic_opt.push_back(make_adam(nets.critic[k], hp.critic_lr));
    }
    if (is_a2c(algo)) nets.critic_target = nets.critic;
    return nets;
}

Eigen::VectorXd actor_input(const ActorCriticNets& nets,
                            const std::vector<double>& joint_obs, int agent) {
    if (joint_obs.size() != static_cast<size_t>(nets.L) * nets.obs_dim) {
        throw std::invalid_argument("joint observation size mismatch");
    }
    Eigen::Map<const Eigen::VectorXd> block(joint_obs.data() + static_cast<size_t>(agent) * nets.obs_dim,
                                            nets.obs_dim);
    if (!nets.shared) return block;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(nets.obs_dim + nets.L);
    x.head(nets.obs_dim) = block;
    x[nets.obs_dim + agent] = 1.0;
    return x;
}

Eigen::VectorXd critic_input(const ActorCriticNets& nets,
                             const std::vector<double>& joint_obs,
                             const std::vector<double>& state, int agent) {
    if (uses_global_state(nets.algo)) {
        if (static_cast<int>(state.size()) != nets.state_dim) {
            throw std::invalid_argument("state dimension mismatch");
        }
        return Eigen::Map<const Eigen::VectorXd>(state.data(), state.size());
    }
    return actor_input(nets, joint_obs, agent);
}

namespace {

Eigen::VectorXd per_agent_input(const ActorCriticNets& nets,
                                const std::vector<double>& obs_i, int agent) {
    Eigen::Map<const Eigen::VectorXd> block(obs_i.data(), obs_i.size());
    if (!nets.shared) return block;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(nets.obs_dim + nets.L);
    x.head(nets.obs_dim) = block;
    x[nets.obs_dim + agent] = 1.0;
    return x;
}

}  // namespace

std::vector<int> act_stochastic(const ActorCriticNets& nets,
                                const std::vector<std::vector<double>>& obs,
                                Rng& rng, std::vector<double>* logp_out) {
    check_obs(obs, nets.L, nets.obs_dim);
    std::vector<int> ids(nets.L);
    if (logp_out) logp_out->assign(nets.L, 0.0);
    for (int i = 0; i < nets.L; ++i) {
        const DenseNet& net = nets.actor[nets.shared ? 0 : i];
        Eigen::VectorXd pi = net.forward(per_agent_input(nets, obs[i], i));
        double u = rng.uniform();
        int a = nets.n_actions - 1;
        double cum = 0.0;
        for (int j = 0; j < nets.n_actions; ++j) {
            cum += pi[j];
            if (u < cum) {
                a = j;
                break;
            }
        }
        ids[i] = a;
        if (logp_out) (*logp_out)[i] = std::log(std::max(pi[a], kTinyProb));
    }
    return ids;
}

std::vector<int> act_mode(const ActorCriticNets& nets,
                          const std::vector<std::vector<double>>& obs) {
    check_obs(obs, nets.L, nets.obs_dim);
    std::vector<int> ids(nets.L);
    for (int i = 0; i < nets.L; ++i) {
        const DenseNet& net = nets.actor[nets.shared ? 0 : i];
        ids[i] = argmax_lowest(net.forward(per_agent_input(nets, obs[i], i)));
    }
    return ids;
}

bool AcLosses::finite() const { return std::isfinite(actor) && std::isfinite(critic); }

namespace {

void check_rollout(const ActorCriticNets& nets, const RolloutBuffer& rollout) {
    if (rollout.empty()) throw std::invalid_argument("empty rollout");
    const size_t want = static_cast<size_t>(nets.L) * nets.obs_dim;
    for (const RolloutStep& st : rollout.steps) {
        if (st.obs.size() != want || st.next_obs.size() != want ||
            static_cast<int>(st.actions.size()) != nets.L ||
            static_cast<int>(st.logp.size()) != nets.L) {
            throw std::invalid_argument("rollout step shape mismatch");
        }
        if (uses_global_state(nets.algo) &&
            (static_cast<int>(st.state.size()) != nets.state_dim ||
             static_cast<int>(st.next_state.size()) != nets.state_dim)) {
            throw std::invalid_argument("rollout step lacks the global state");
        }
    }
}

// Discounted returns for one agent, bootstrapped from the given critic at the
// final step when the rollout does not end an episode.
std::vector<double> agent_returns(const ActorCriticNets& nets,
                                  const RolloutBuffer& rollout, int agent,
                                  const DenseNet& bootstrap_critic) {
    const int T = rollout.size();
    std::vector<double> ret(T);
    const RolloutStep& last = rollout.steps.back();
    double next = 0.0;
    if (!last.done) {
        next = bootstrap_critic.forward(critic_input(nets, last.next_obs, last.next_state, agent))(0);
    }
    for (int t = T - 1; t >= 0; --t) {
        const RolloutStep& st = rollout.steps[t];
        next = st.reward + nets.hp.gamma * (st.done ? 0.0 : next);
        ret[t] = next;
    }
    return ret;
}

}  // namespace

AcLosses a2c_update(ActorCriticNets& nets, RolloutBuffer& rollout) {
    if (!is_a2c(nets.algo)) throw std::invalid_argument("not an A2C ensemble");
    check_rollout(nets, rollout);
    const int T = rollout.size();
    const int n_nets = nets.shared ? 1 : nets.L;
    std::vector<LayerGrads> a_grads, c_grads;
    for (int k = 0; k < n_nets; ++k) {
        a_grads.push_back(nets.actor[k].zero_grads());
        c_grads.push_back(nets.critic[k].zero_grads());
    }
    AcLosses out;
    const double report_inv = 1.0 / (static_cast<double>(T) * nets.L);
    DenseNet::Cache cache;
    for (int i = 0; i < nets.L; ++i) {
        const int k = nets.shared ? 0 : i;
        // each net averages over the samples it actually sees
        const double inv = nets.shared ? report_inv : 1.0 / T;
        std::vector<double> ret = agent_returns(nets, rollout, i, nets.critic_target[k]);
        for (int t = 0; t < T; ++t) {
            const RolloutStep& st = rollout.steps[t];
            Eigen::VectorXd xc = critic_input(nets, st.obs, st.state, i);
            double v = nets.critic[k].forward(xc, cache)(0);
            double adv = ret[t] - v;
            out.critic += (v - ret[t]) * (v - ret[t]) * report_inv;
            Eigen::VectorXd gc(1);
            gc(0) = 2.0 * (v - ret[t]) * inv;
            nets.critic[k].backward(cache, gc, c_grads[k]);

            Eigen::VectorXd xa = actor_input(nets, st.obs, i);
            Eigen::VectorXd pi = nets.actor[k].forward(xa, cache);
            int a = st.actions[i];
            out.actor += -std::log(std::max(pi[a], kTinyProb)) * adv * report_inv;
            Eigen::VectorXd ga = Eigen::VectorXd::Zero(nets.n_actions);
            ga[a] = -adv * inv / std::max(pi[a], kTinyProb);
            nets.actor[k].backward(cache, ga, a_grads[k]);
        }
    }
    for (int k = 0; k < n_nets; ++k) {
        clip_grad_norm(a_grads[k], nets.hp.grad_clip);
        clip_grad_norm(c_grads[k], nets.hp.grad_clip);
        adam_step(nets.actor[k], a_grads[k], nets.actor_opt[k]);
        adam_step(nets.critic[k], c_grads[k], nets.critic_opt[k]);
        soft_update(nets.critic_target[k], nets.critic[k], nets.hp.tau);
    }
    rollout.clear();
    return out;
}

AcLosses ppo_update(ActorCriticNets& nets, RolloutBuffer& rollout, Rng& rng) {
    if (!is_ppo(nets.algo)) throw std::invalid_argument("not a PPO ensemble");
    check_rollout(nets, rollout);
    const int T = rollout.size();
    const int L = nets.L;
    const int n_samples = T * L;

    // frozen per-sample quantities, indexed s = t*L + i
    std::vector<Eigen::VectorXd> xa(n_samples), xc(n_samples);
    std::vector<double> ret(n_samples), adv(n_samples), logp_old(n_samples);
    std::vector<int> act(n_samples);
    for (int i = 0; i < L; ++i) {
        const int k = nets.shared ? 0 : i;
        std::vector<double> ri = agent_returns(nets, rollout, i, nets.critic[k]);
        for (int t = 0; t < T; ++t) {
            const RolloutStep& st = rollout.steps[t];
            const int s = t * L + i;
            xa[s] = actor_input(nets, st.obs, i);
            xc[s] = critic_input(nets, st.obs, st.state, i);
            ret[s] = ri[t];
            logp_old[s] = st.logp[i];
            act[s] = st.actions[i];
            adv[s] = ri[t] - nets.critic[k].forward(xc[s])(0);
        }
    }
    // batch-level advantage normalization
    double mean = 0.0;
    for (double a : adv) mean += a;
    mean /= n_samples;
    double var = 0.0;
    for (double a : adv) var += (a - mean) * (a - mean);
    double sd = std::sqrt(var / n_samples);
    for (double& a : adv) a = (a - mean) / (sd + 1e-8);

    // sample index lists per network
    const int n_nets = nets.shared ? 1 : L;
    std::vector<std::vector<int>> idx(n_nets);
    if (nets.shared) {
        idx[0].resize(n_samples);
        for (int s = 0; s < n_samples; ++s) idx[0][s] = s;
    } else {
        for (int i = 0; i < L; ++i) {
            idx[i].resize(T);
            for (int t = 0; t < T; ++t) idx[i][t] = t * L + i;
        }
    }

    AcLosses out;
    int64_t processed = 0;
    DenseNet::Cache cache;
    const double clip = nets.hp.clip_ratio;
    for (int epoch = 0; epoch < nets.hp.ppo_epochs; ++epoch) {
        for (int k = 0; k < n_nets; ++k) {
            shuffle_indices(idx[k], rng);
            const int n = static_cast<int>(idx[k].size());
            const int n_mb = std::max(1, nets.hp.ppo_minibatches);
            for (int mb = 0; mb < n_mb; ++mb) {
                const int lo = static_cast<int>(static_cast<int64_t>(mb) * n / n_mb);
                const int hi = static_cast<int>(static_cast<int64_t>(mb + 1) * n / n_mb);
                if (hi <= lo) continue;
                const double inv = 1.0 / (hi - lo);
                LayerGrads a_grads = nets.actor[k].zero_grads();
                LayerGrads c_grads = nets.critic[k].zero_grads();
                for (int j = lo; j < hi; ++j) {
                    const int s = idx[k][j];
                    double v = nets.critic[k].forward(xc[s], cache)(0);
                    out.critic += (v - ret[s]) * (v - ret[s]);
                    Eigen::VectorXd gc(1);
                    gc(0) = 2.0 * (v - ret[s]) * inv;
                    nets.critic[k].backward(cache, gc, c_grads);

                    Eigen::VectorXd pi = nets.actor[k].forward(xa[s], cache);
                    const int a = act[s];
                    double logp = std::log(std::max(pi[a], kTinyProb));
                    double ratio = std::exp(logp - logp_old[s]);
                    double surr1 = ratio * adv[s];
                    double clamped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
                    double surr2 = clamped * adv[s];
                    double entropy = 0.0;
                    for (int c = 0; c < nets.n_actions; ++c) {
                        if (pi[c] > 0.0) entropy -= pi[c] * std::log(pi[c]);
                    }
                    out.actor += -std::min(surr1, surr2) - nets.hp.entropy_coef * entropy;
                    // the clipped branch has zero gradient once the ratio
                    // saturates outside the band
                    double dobj_dratio = surr1 <= surr2 ? adv[s] : 0.0;
                    Eigen::VectorXd ga = Eigen::VectorXd::Zero(nets.n_actions);
                    ga[a] = -dobj_dratio * std::exp(-logp_old[s]) * inv;
                    if (nets.hp.entropy_coef != 0.0) {
                        for (int c = 0; c < nets.n_actions; ++c) {
                            ga[c] += nets.hp.entropy_coef *
                                     (std::log(std::max(pi[c], kTinyProb)) + 1.0) * inv;
                        }
                    }
                    nets.actor[k].backward(cache, ga, a_grads);
                    ++processed;
                }
                clip_grad_norm(a_grads, nets.hp.grad_clip);
                clip_grad_norm(c_grads, nets.hp.grad_clip);
                adam_step(nets.actor[k], a_grads, nets.actor_opt[k]);
                adam_step(nets.critic[k], c_grads, nets.critic_opt[k]);
            }
        }
    }
    if (processed > 0) {
        out.actor /= static_cast<double>(processed);
        out.critic /= static_cast<double>(processed);
    }
    rollout.clear();
    return out;
}

}  // namespace v2x
