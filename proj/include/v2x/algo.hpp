#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "v2x/env.hpp"
#include "v2x/net.hpp"
#include "v2x/oracle.hpp"

namespace v2x {

enum class Algo { IDQN, HysIDQN, VDN, QMIX, IA2C, MAA2C, IPPO, MAPPO };

Algo algo_from_string(const std::string& name);
const char* to_string(Algo algo);
std::vector<Algo> all_algos();

inline bool is_value_based(Algo a) {
    return a == Algo::IDQN || a == Algo::HysIDQN || a == Algo::VDN || a == Algo::QMIX;
}
inline bool is_ppo(Algo a) { return a == Algo::IPPO || a == Algo::MAPPO; }
inline bool is_a2c(Algo a) { return a == Algo::IA2C || a == Algo::MAA2C; }
// Algorithms whose update consumes the global state (centralized training).
inline bool uses_global_state(Algo a) {
    return a == Algo::QMIX || a == Algo::MAA2C || a == Algo::MAPPO;
}

struct Hyperparameters {
    int hidden = 128;
    double gamma = 0.9;
    double grad_clip = 10.0;  // actor-critic only

    // value-based
    double lr = 3e-5;
    double mixer_lr = 1e-6;
    double hyst_alpha = 1.0;
    double hyst_beta = 1.0;  // 0.2 for HysIDQN; 1.0 degenerates to plain DQN
    double tau = 5e-3;
    int64_t replay_capacity = 100000;
    int64_t warmup_transitions = 1000;
    int qmix_embed = 32;

    // actor-critic
    double actor_lr = 2e-4;
    double critic_lr = 2e-4;
    int ppo_epochs = 10;
    int ppo_minibatches = 4;
    double clip_ratio = 0.2;
    double entropy_coef = 1e-3;
    bool parameter_sharing = false;

    // batch_size doubles as the replay minibatch (value-based), the n-step
    // horizon (A2C) and the rollout length (PPO).
    int batch_size = 64;

    // schedule
    int64_t training_episodes = 50000;
    int64_t anneal_episodes = 40000;
    double eps_start = 1.0;
    double eps_end = 0.02;
};

// Published defaults per task family and algorithm.
Hyperparameters default_hyperparameters(Algo algo, Task task);

// Linear anneal from eps_start to eps_end over anneal_episodes, then flat.
double epsilon_at(const Hyperparameters& hp, int64_t episode);

// One joint transition; obs flattened as L contiguous blocks of obs_dim.
// state/next_state stay empty unless the algorithm trains on the global state.
struct Transition {
    std::vector<double> obs;
    std::vector<double> next_obs;
    std::vector<double> state;
    std::vector<double> next_state;
    std::vector<int> actions;
    double reward = 0.0;
    bool done = false;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(int64_t capacity);
    void push(Transition t);
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    int64_t capacity() const { return capacity_; }
    std::vector<const Transition*> sample(int batch, Rng& rng) const;

private:
    int64_t capacity_;
    int64_t next_ = 0;
    std::vector<Transition> data_;
};

struct RolloutStep {
    std::vector<double> obs;
    std::vector<double> state;
    std::vector<int> actions;
    std::vector<double> logp;  // log pi(a_i | input_i) at collection time
    double reward = 0.0;
    bool done = false;
    std::vector<double> next_obs;
    std::vector<double> next_state;
};

struct RolloutBuffer {
    std::vector<RolloutStep> steps;
    void clear() { steps.clear(); }
    bool empty() const { return steps.empty(); }
    int size() const { return static_cast<int>(steps.size()); }
};

// ---- value-based ensembles (IDQN / HysIDQN / VDN / QMIX) ----------------

struct ValueNets {
    Algo algo = Algo::IDQN;
    Hyperparameters hp;
    int L = 0;
    int obs_dim = 0;
    int state_dim = 0;
    int n_actions = 0;

    std::vector<DenseNet> q;
    std::vector<DenseNet> q_target;
    std::vector<AdamState> q_opt;

    // QMIX hypernetworks in the order w1, b1, w2, b2 (empty otherwise).
    std::vector<DenseNet> hyper;
    std::vector<DenseNet> hyper_target;
    std::vector<AdamState> hyper_opt;
};

ValueNets make_value_nets(Algo algo, int L, int obs_dim, int state_dim,
                          int n_actions, const Hyperparameters& hp, Rng& rng);

// Per-agent epsilon-greedy action ids; argmax ties go to the lowest id.
std::vector<int> act_value_based(const ValueNets& nets,
                                 const std::vector<std::vector<double>>& obs,
                                 double eps, Rng& rng);

double dqn_update(ValueNets& nets, const std::vector<const Transition*>& batch);
// Accumulated (batch-averaged, hysteresis-scaled) TD gradient for one agent's
// Q-net; what dqn_update feeds to Adam.
LayerGrads dqn_gradients(const ValueNets& nets,
                         const std::vector<const Transition*>& batch, int agent,
                         double* loss_out = nullptr);
// Sum of chosen-action utilities, the VDN joint value.
double vdn_q_tot(const ValueNets& nets, const std::vector<double>& joint_obs,
                 const std::vector<int>& actions);
double vdn_update(ValueNets& nets, const std::vector<const Transition*>& batch);
double qmix_update(ValueNets& nets, const std::vector<const Transition*>& batch);
// Dispatches on nets.algo and returns the TD loss.
double value_update(ValueNets& nets, const std::vector<const Transition*>& batch);

// Monotonic mixing of chosen-action utilities under the given global state.
double qmix_mix(const ValueNets& nets, const std::vector<double>& agent_q,
                const std::vector<double>& state, bool use_target);

// ---- actor-critic ensembles (IA2C / MAA2C / IPPO / MAPPO) ---------------

struct ActorCriticNets {
    Algo algo = Algo::IA2C;
    Hyperparameters hp;
    int L = 0;
    int obs_dim = 0;
    int state_dim = 0;
    int n_actions = 0;
    bool shared = false;

    // One entry when shared, L otherwise. Shared nets consume obs plus a
    // one-hot agent id; centralized critics consume the global state.
    std::vector<DenseNet> actor;
    std::vector<AdamState> actor_opt;
    std::vector<DenseNet> critic;
    std::vector<DenseNet> critic_target;  // A2C family only
    std::vector<AdamState> critic_opt;
};

ActorCriticNets make_actor_critic_nets(Algo algo, int L, int obs_dim,
                                       int state_dim, int n_actions,
                                       const Hyperparameters& hp, Rng& rng);

Eigen::VectorXd actor_input(const ActorCriticNets& nets,
                            const std::vector<double>& joint_obs, int agent);
Eigen::VectorXd critic_input(const ActorCriticNets& nets,
                             const std::vector<double>& joint_obs,
                             const std::vector<double>& state, int agent);

// Samples from each agent's policy; fills per-agent log-probabilities.
std::vector<int> act_stochastic(const ActorCriticNets& nets,
                                const std::vector<std::vector<double>>& obs,
                                Rng& rng, std::vector<double>* logp_out);
// Distribution mode (argmax probability), used at evaluation time.
std::vector<int> act_mode(const ActorCriticNets& nets,
                          const std::vector<std::vector<double>>& obs);

struct AcLosses {
    double actor = 0.0;
    double critic = 0.0;
    bool finite() const;
};

// n-step advantage actor-critic on a short rollout; clears the rollout.
AcLosses a2c_update(ActorCriticNets& nets, RolloutBuffer& rollout);
// Clipped-surrogate PPO over a full rollout; clears the rollout.
AcLosses ppo_update(ActorCriticNets& nets, RolloutBuffer& rollout, Rng& rng);

// ---- training loop -------------------------------------------------------

struct EvalRecord {
    int eval_index = 0;
    int64_t episodes_done = 0;
    std::vector<double> episode_returns;  // exactly eval_episodes entries
    double mean_return = 0.0;
    double normalized_return = 0.0;
};

struct TrainLog {
    std::vector<EvalRecord> evals;
    int64_t episodes_run = 0;
    bool aborted = false;
    std::string abort_reason;
};

struct TrainerConfig {
    Task task = Task::NFIG;
    Algo algo = Algo::IDQN;
    Hyperparameters hp;
    EnvConfig env;
    TopologySource train_source;
    // ML/POSIG evaluate one episode on each entry; empty means the SL
    // protocol: eval_episodes episodes on the training topology.
    std::vector<TopologySnapshot> eval_topologies;
    // Empty: no normalization (NaN). One entry: shared by every eval episode.
    // eval_episodes entries: matched per episode (the ML per-topology case).
    std::vector<NormalizationBounds> bounds;
    int n_evals = 100;
    int eval_episodes = 9;
    uint64_t seed = 0;

    TrainerConfig() : train_source(TopologySource::fixed(TopologySnapshot{})) {}
};

class Trainer {
public:
    explicit Trainer(TrainerConfig cfg);

    // Runs the full episode budget, interleaving evaluations so that exactly
    // n_evals records are emitted. A non-finite loss aborts with a diagnostic.
    const TrainLog& train();

    // Evaluation under the frozen current policy, no exploration noise.
    EvalRecord evaluate(int eval_index) const;

    std::vector<int> greedy_action_ids(const std::vector<std::vector<double>>& obs) const;

    void save_checkpoint(const std::string& dir) const;
    void load_checkpoint(const std::string& dir);

    const TrainLog& log() const { return log_; }
    const ValueNets* value_nets() const { return value_ ? &*value_ : nullptr; }
    const ActorCriticNets* ac_nets() const { return ac_ ? &*ac_ : nullptr; }
    int64_t rollout_size() const { return rollout_.size(); }

private:
    void run_episode(int64_t episode);
    bool update_ready() const;
    double run_updates();  // returns the last loss

    TrainerConfig cfg_;
    Env env_;
    std::optional<ValueNets> value_;
    std::optional<ActorCriticNets> ac_;
    ReplayBuffer replay_;
    RolloutBuffer rollout_;
    Rng act_rng_;
    Rng sample_rng_;
    TrainLog log_;
    double eps_ = 1.0;
};

}  // namespace v2x
