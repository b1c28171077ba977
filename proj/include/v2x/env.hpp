#pragma once

#include <memory>
#include <string>
#include <vector>

#include "v2x/game.hpp"
#include "v2x/topology.hpp"

namespace v2x {

enum class Task { NFIG, SIG_SL_NFF, SIG_SL_FF, SIG_ML, POSIG };

Task task_from_string(const std::string& s);
const char* to_string(Task t);

bool task_uses_fast_fading(Task t);   // SIG_SL_FF, SIG_ML, POSIG
bool task_is_multi_topology(Task t);  // SIG_ML, POSIG
bool task_is_partially_observable(Task t);
int task_default_horizon(Task t);     // NFIG: 1, otherwise 50
RewardWeights task_weights(Task t);

// Feature encodings shared by the global state and local observations.
double encode_gain(double gain_linear);                    // (10 log10 g + 120)/60, clipped [0,2]
double encode_interference(double i_mw, double noise_mw);  // (10 log10 I/sigma^2)/60, clipped

struct EnvConfig {
    Task task = Task::SIG_SL_NFF;
    int horizon = 50;  // forced to 1 for NFIG
    ChannelParams channel;
    RewardWeights reward;
    double dt = 1e-3;
    uint64_t seed = 0;          // episode stream: topology sampling + fast fading
    uint64_t channel_seed = 0;  // shadowing is a fixed function of (this, sample_id)
    SamplingMode sampling_mode = SamplingMode::Random;
};

EnvConfig make_env_config(Task task, uint64_t seed);

// Where episodes get their topology: a fixed snapshot (single-layout tasks) or
// a dataset sampled per episode (multi-layout and partially observed tasks).
class TopologySource {
public:
    static TopologySource fixed(TopologySnapshot snapshot);
    static TopologySource from_dataset(std::shared_ptr<const Dataset> dataset, SamplingMode mode);

    const TopologySnapshot& next(Rng& rng);
    bool is_fixed() const { return !dataset_; }
    int L() const { return dataset_ ? dataset_->L : fixed_.L; }
    int M() const { return dataset_ ? dataset_->M : fixed_.M; }

private:
    TopologySource() = default;
    TopologySnapshot fixed_;
    std::shared_ptr<const Dataset> dataset_;
    SamplingMode mode_ = SamplingMode::Random;
    int64_t episode_ = 0;
    int64_t batch_start_ = 0;
};

struct StepOutcome {
    double reward = 0.0;
    RateReport rates;
    std::vector<double> global_state;
    std::vector<std::vector<double>> local_obs;
    bool done = false;
};

class Env {
public:
    Env(EnvConfig config, TopologySource source);

    int num_agents() const { return L_; }
    int num_subchannels() const { return M_; }
    int num_power_levels() const { return static_cast<int>(config_.channel.power_levels_dbm.size()); }
    int num_actions() const { return M_ * num_power_levels(); }
    int horizon() const { return horizon_; }
    int global_state_dim() const { return M_ * (L_ + 1) * (L_ + 1) + L_ + 1; }
    int local_obs_dim() const { return 3 * M_ + 2; }

    const EnvConfig& config() const { return config_; }

    void reset();
    void reset_to(const TopologySnapshot& snapshot);
    StepOutcome step(const JointAction& joint);

    bool done() const { return done_; }
    int t() const { return queues_.t; }
    const std::vector<double>& global_state() const { return global_state_; }
    const std::vector<double>& local_obs(int agent) const { return local_obs_[agent]; }
    const std::vector<std::vector<double>>& local_obs() const { return local_obs_; }

    const TopologySnapshot& topology() const { return topology_; }
    const ChannelRealization& realization() const { return realization_; }
    const LargeScaleGains& large_scale() const { return alpha_; }
    const QueueState& queues() const { return queues_; }

private:
    void setup_episode();
    void rebuild_observations();

    EnvConfig config_;
    TopologySource source_;
    int L_ = 0;
    int M_ = 0;
    int horizon_ = 0;
    Rng rng_;

    TopologySnapshot topology_;
    LargeScaleGains alpha_;
    ChannelRealization realization_;
    QueueState queues_;
    std::vector<double> prev_interference_;  // L*M, sentinel = noise floor at t=0
    std::vector<double> global_state_;
    std::vector<std::vector<double>> local_obs_;
    bool done_ = true;
};

}  // namespace v2x
