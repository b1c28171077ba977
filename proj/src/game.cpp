#include "v2x/game.hpp"

#include <cmath>
#include <stdexcept>

namespace v2x {

RewardWeights nfig_weights() { return {0.1, 0.9, 0.5, 1e7}; }
RewardWeights sig_weights() { return {0.2, 1.8, 0.5, 1e7}; }

namespace {

void check_joint(const JointAction& joint, int L, int M, int P) {
    if (static_cast<int>(joint.size()) != L)
        throw std::runtime_error("joint action has " + std::to_string(joint.size()) +
                                 " entries, expected " + std::to_string(L));
    for (const auto& a : joint) {
        if (a.subchannel < 0 || a.subchannel >= M)
            throw std::runtime_error("subchannel index out of range");
        if (a.power < 0 || a.power >= P)
            throw std::runtime_error("power level index out of range");
    }
}

}  // namespace

void compute_rates(const JointAction& joint, const ChannelRealization& r,
                   const ChannelParams& params, RateReport& out) {
    const int L = r.L;
    const int M = r.M;
    const int P = static_cast<int>(params.power_levels_dbm.size());
    check_joint(joint, L, M, P);

    const double noise = params.noise_mw();
    const double p_v2i = params.v2i_tx_mw();
    // pow() in the dBm conversion dominates this kernel if done per lookup
    thread_local std::vector<double> level_mw;
    level_mw.resize(P);
    for (int k = 0; k < P; ++k) level_mw[k] = params.power_level_mw(k);

    out.v2i_sinr.assign(M, 0.0);
    out.v2v_sinr.assign(L, 0.0);
    out.v2i_rates.assign(M, 0.0);
    out.v2v_rates.assign(L, 0.0);
    out.interference.assign(size_t(L) * M, 0.0);

    for (int m = 0; m < M; ++m) {
        double denom = noise;
        for (int i = 0; i < L; ++i)
            if (joint[i].subchannel == m)
                denom += level_mw[joint[i].power] * r.g_v2v_to_bs(i, m);
        out.v2i_sinr[m] = p_v2i * r.g_v2i(m) / denom;
        out.v2i_rates[m] = link_rate(out.v2i_sinr[m], params.bandwidth_hz);
    }

    for (int i = 0; i < L; ++i)
        for (int m = 0; m < M; ++m) {
            double interference = p_v2i * r.g_v2i_to_v2v(m, i);
            for (int j = 0; j < L; ++j)
                if (j != i && joint[j].subchannel == m)
                    interference += level_mw[joint[j].power] * r.g_v2v(m, j, i);
            out.interference[i * M + m] = interference;
        }

    for (int i = 0; i < L; ++i) {
        double p = level_mw[joint[i].power];
        if (p <= 0.0) continue;
        int m = joint[i].subchannel;
        out.v2v_sinr[i] = p * r.g_direct(i, m) / (noise + out.interference[i * M + m]);
        out.v2v_rates[i] = link_rate(out.v2v_sinr[i], params.bandwidth_hz);
    }
}

RateReport compute_rates(const JointAction& joint, const ChannelRealization& r,
                         const ChannelParams& params) {
    RateReport out;
    compute_rates(joint, r, params, out);
    return out;
}

std::vector<double> sinr_v2i(const JointAction& joint, const ChannelRealization& r,
                             const ChannelParams& params) {
    return compute_rates(joint, r, params).v2i_sinr;
}

std::vector<double> sinr_v2v(const JointAction& joint, const ChannelRealization& r,
                             const ChannelParams& params) {
    return compute_rates(joint, r, params).v2v_sinr;
}

double link_rate(double sinr, double bandwidth_hz) {
    return bandwidth_hz * std::log2(1.0 + sinr);
}

double cam_rate(double bits_per_s) { return bits_per_s / kCamBits; }

QueueState reset_queues(int L) {
    QueueState s;
    s.q.assign(L, 1.0);
    s.t = 0;
    return s;
}

QueueState queue_step(const QueueState& state, const std::vector<double>& cam_rates, double dt) {
    if (cam_rates.size() != state.q.size())
        throw std::runtime_error("queue/rate size mismatch");
    QueueState next = state;
    for (size_t i = 0; i < next.q.size(); ++i) {
        if (state.t == 0)
            next.q[i] = 1.0;
        else
            next.q[i] = std::max(0.0, state.q[i] - cam_rates[i] * dt);
    }
    next.t = state.t + 1;
    return next;
}

double reward_nfig(const std::vector<double>& v2i_rates, const std::vector<double>& v2v_rates,
                   const RewardWeights& w) {
    double sum_v2i = 0.0, sum_v2v = 0.0;
    for (double r : v2i_rates) sum_v2i += r;
    for (double r : v2v_rates) sum_v2v += r;
    return (w.lambda1 * sum_v2i + w.lambda2 * sum_v2v) / w.rate_scale;
}

double reward_sig(const std::vector<double>& v2i_rates, const std::vector<double>& v2v_rates,
                  const std::vector<double>& q_start, const RewardWeights& w) {
    if (q_start.size() != v2v_rates.size())
        throw std::runtime_error("queue/rate size mismatch");
    double sum_v2i = 0.0;
    for (double r : v2i_rates) sum_v2i += r;
    double total = w.lambda1 * sum_v2i / w.rate_scale;
    for (size_t i = 0; i < v2v_rates.size(); ++i) {
        if (q_start[i] > 0.0)
            total += w.lambda2 * v2v_rates[i] / w.rate_scale;
        else
            total += w.z_bonus;
    }
    return total;
}

}  // namespace v2x
