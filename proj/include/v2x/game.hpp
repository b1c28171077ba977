#pragma once

#include <vector>

#include "v2x/channel.hpp"

namespace v2x {

// One agent's choice: a subchannel plus a transmit power level. The lowest
// level (-100 dBm) is "stay silent".
struct Action {
    int subchannel = 0;
    int power = 0;  // index into ChannelParams::power_levels_dbm

    bool operator==(const Action& o) const {
        return subchannel == o.subchannel && power == o.power;
    }
};

using JointAction = std::vector<Action>;

// Flat ids enumerate subchannel-major: id = subchannel * |A_P| + power.
inline int encode_action(const Action& a, int num_power_levels) {
    return a.subchannel * num_power_levels + a.power;
}
inline Action decode_action(int id, int num_power_levels) {
    return {id / num_power_levels, id % num_power_levels};
}

struct RewardWeights {
    double lambda1 = 0.1;
    double lambda2 = 0.9;
    double z_bonus = 0.5;     // per emptied queue, SIG reward only
    double rate_scale = 1e7;  // rates enter rewards as r / rate_scale
};

RewardWeights nfig_weights();  // 0.1 / 0.9
RewardWeights sig_weights();   // 0.2 / 1.8, Z = 0.5

inline constexpr double kCamBits = 6.0 * 1060.0 * 8.0;  // one CAM burst, 50,880 bits

struct RateReport {
    std::vector<double> v2i_sinr;      // M, linear
    std::vector<double> v2v_sinr;      // L, on the chosen subchannel, 0 when silent
    std::vector<double> v2i_rates;     // M, bits/s
    std::vector<double> v2v_rates;     // L, bits/s
    std::vector<double> interference;  // L*M, received power at Rx i on subchannel m at [i*M+m]
};

// SINRs, rates, and the full interference map for one joint action.
void compute_rates(const JointAction& joint, const ChannelRealization& r,
                   const ChannelParams& params, RateReport& out);
RateReport compute_rates(const JointAction& joint, const ChannelRealization& r,
                         const ChannelParams& params);

std::vector<double> sinr_v2i(const JointAction& joint, const ChannelRealization& r,
                             const ChannelParams& params);
std::vector<double> sinr_v2v(const JointAction& joint, const ChannelRealization& r,
                             const ChannelParams& params);

double link_rate(double sinr, double bandwidth_hz);
double cam_rate(double bits_per_s);  // CAMs per second

struct QueueState {
    std::vector<double> q;  // CAM units, >= 0
    int t = 0;              // communication-interval index
};

QueueState reset_queues(int L);

// One communication interval: stepping from t=0 reloads the queue to 1,
// afterwards it drains by the delivered CAM fraction, floored at zero.
QueueState queue_step(const QueueState& state, const std::vector<double>& cam_rates, double dt);

double reward_nfig(const std::vector<double>& v2i_rates, const std::vector<double>& v2v_rates,
                   const RewardWeights& w);

// q_start is the queue at the beginning of the interval: links still loaded
// earn their rate term, links already done earn the completion bonus.
double reward_sig(const std::vector<double>& v2i_rates, const std::vector<double>& v2v_rates,
                  const std::vector<double>& q_start, const RewardWeights& w);

}  // namespace v2x
