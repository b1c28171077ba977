#include "v2x/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace v2x {

Task task_from_string(const std::string& s) {
    if (s == "NFIG" || s == "nfig") return Task::NFIG;
    if (s == "SIG_SL_NFF" || s == "sig_sl_nff") return Task::SIG_SL_NFF;
    if (s == "SIG_SL_FF" || s == "sig_sl_ff") return Task::SIG_SL_FF;
    if (s == "SIG_ML" || s == "sig_ml") return Task::SIG_ML;
    if (s == "POSIG" || s == "posig") return Task::POSIG;
    throw std::runtime_error("unknown task: " + s +
                             " (expected NFIG, SIG_SL_NFF, SIG_SL_FF, SIG_ML, POSIG)");
}

const char* to_string(Task t) {
    switch (t) {
        case Task::NFIG: return "NFIG";
        case Task::SIG_SL_NFF: return "SIG_SL_NFF";
        case Task::SIG_SL_FF: return "SIG_SL_FF";
        case Task::SIG_ML: return "SIG_ML";
        case Task::POSIG: return "POSIG";
    }
    return "?";
}

bool task_uses_fast_fading(Task t) {
    return t == Task::SIG_SL_FF || t == Task::SIG_ML || t == Task::POSIG;
}

bool task_is_multi_topology(Task t) { return t == Task::SIG_ML || t == Task::POSIG; }

bool task_is_partially_observable(Task t) { return t == Task::POSIG; }

int task_default_horizon(Task t) { return t == Task::NFIG ? 1 : 50; }

RewardWeights task_weights(Task t) { return t == Task::NFIG ? nfig_weights() : sig_weights(); }

double encode_gain(double gain_linear) {
    if (gain_linear <= 0.0) return 0.0;
    double db = 10.0 * std::log10(gain_linear);
    return std::clamp((db + 120.0) / 60.0, 0.0, 2.0);
}

double encode_interference(double i_mw, double noise_mw) {
    if (i_mw <= 0.0) return 0.0;
    double db_over_noise = 10.0 * std::log10(i_mw / noise_mw);
    return std::clamp(db_over_noise / 60.0, 0.0, 2.0);
}

EnvConfig make_env_config(Task task, uint64_t seed) {
    EnvConfig cfg;
    cfg.task = task;
    cfg.horizon = task_default_horizon(task);
    cfg.reward = task_weights(task);
    cfg.seed = seed;
    cfg.channel_seed = derive_seed(seed, 0xC4A11);
    return cfg;
}

TopologySource TopologySource::fixed(TopologySnapshot snapshot) {
    TopologySource src;
    src.fixed_ = std::move(snapshot);
    return src;
}

TopologySource TopologySource::from_dataset(std::shared_ptr<const Dataset> dataset,
                                            SamplingMode mode) {
    if (!dataset || dataset->samples.empty())
        throw std::runtime_error("topology source needs a non-empty dataset");
    TopologySource src;
    src.dataset_ = std::move(dataset);
    src.mode_ = mode;
    return src;
}

const TopologySnapshot& TopologySource::next(Rng& rng) {
    if (!dataset_) return fixed_;
    const auto& samples = dataset_->samples;
    const int64_t n = static_cast<int64_t>(samples.size());
    int64_t index = 0;
    switch (mode_) {
        case SamplingMode::Random:
            index = rng.uniform_int(static_cast<int>(n));
            break;
        case SamplingMode::Consecutive:
            index = episode_ % n;
            break;
        case SamplingMode::ConsecutiveBatches:
            if (episode_ % 10 == 0) batch_start_ = rng.uniform_int(static_cast<int>(n));
            index = (batch_start_ + episode_ % 10) % n;
            break;
    }
    ++episode_;
    return samples[index];
}

Env::Env(EnvConfig config, TopologySource source)
    : config_(std::move(config)), source_(std::move(source)), rng_(config_.seed) {
    validate(config_.channel);
    if (config_.horizon < 1) throw std::runtime_error("horizon must be at least 1");
    horizon_ = config_.task == Task::NFIG ? 1 : config_.horizon;
    L_ = source_.L();
    M_ = source_.M();
}

void Env::reset() {
    topology_ = source_.next(rng_);
    setup_episode();
}

void Env::reset_to(const TopologySnapshot& snapshot) {
    topology_ = snapshot;
    setup_episode();
}

void Env::setup_episode() {
    L_ = topology_.L;
    M_ = topology_.M;

    // Shadowing is a pure function of (channel_seed, sample_id): revisiting a
    // topology reproduces its large-scale channel exactly.
    Rng shadow_rng(derive_seed(config_.channel_seed,
                               static_cast<uint64_t>(topology_.sample_id)));
    ShadowState shadow = init_shadow_state(topology_, config_.channel, shadow_rng);
    alpha_ = large_scale_gains(topology_, config_.channel, shadow);

    FadingMode mode = task_uses_fast_fading(config_.task) ? FadingMode::FF : FadingMode::NFF;
    realization_ = realize(alpha_, config_.channel, mode, rng_);

    queues_ = reset_queues(L_);
    prev_interference_.assign(size_t(L_) * M_, config_.channel.noise_mw());
    done_ = false;
    rebuild_observations();
}

StepOutcome Env::step(const JointAction& joint) {
    if (done_) throw std::runtime_error("step() called on a finished episode");

    StepOutcome out;
    compute_rates(joint, realization_, config_.channel, out.rates);

    if (config_.task == Task::NFIG) {
        out.reward = reward_nfig(out.rates.v2i_rates, out.rates.v2v_rates, config_.reward);
    } else {
        out.reward = reward_sig(out.rates.v2i_rates, out.rates.v2v_rates, queues_.q,
                                config_.reward);
    }

    std::vector<double> cam(L_);
    for (int i = 0; i < L_; ++i) cam[i] = cam_rate(out.rates.v2v_rates[i]);
    queues_ = queue_step(queues_, cam, config_.dt);

    done_ = queues_.t >= horizon_;
    prev_interference_ = out.rates.interference;

    if (!done_ && task_uses_fast_fading(config_.task))
        realization_ = realize(alpha_, config_.channel, FadingMode::FF, rng_);

    rebuild_observations();
    out.global_state = global_state_;
    out.local_obs = local_obs_;
    out.done = done_;
    return out;
}

void Env::rebuild_observations() {
    const double noise = config_.channel.noise_mw();
    const double t_frac = static_cast<double>(queues_.t) / horizon_;

    global_state_.clear();
    global_state_.reserve(global_state_dim());
    // per subchannel: an (L+1)x(L+1) block, rows = V2V transmitters then the
    // subchannel's V2I transmitter, columns = V2V receivers then the BS
    for (int m = 0; m < M_; ++m) {
        for (int j = 0; j < L_; ++j) {
            for (int i = 0; i < L_; ++i) global_state_.push_back(encode_gain(realization_.g_v2v(m, j, i)));
            global_state_.push_back(encode_gain(realization_.g_v2v_to_bs(j, m)));
        }
        for (int i = 0; i < L_; ++i)
            global_state_.push_back(encode_gain(realization_.g_v2i_to_v2v(m, i)));
        global_state_.push_back(encode_gain(realization_.g_v2i(m)));
    }
    for (int i = 0; i < L_; ++i) global_state_.push_back(queues_.q[i]);
    global_state_.push_back(t_frac);

    local_obs_.assign(L_, {});
    for (int i = 0; i < L_; ++i) {
        auto& obs = local_obs_[i];
        obs.reserve(local_obs_dim());
        for (int m = 0; m < M_; ++m) obs.push_back(encode_gain(realization_.g_direct(i, m)));
        for (int m = 0; m < M_; ++m) obs.push_back(encode_gain(realization_.g_v2v_to_bs(i, m)));
        for (int m = 0; m < M_; ++m)
            obs.push_back(encode_interference(prev_interference_[i * M_ + m], noise));
        obs.push_back(queues_.q[i]);
        obs.push_back(t_frac);
    }
}

}  // namespace v2x
