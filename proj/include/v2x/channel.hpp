#pragma once

#include <cmath>
#include <vector>

#include "v2x/rng.hpp"
#include "v2x/topology.hpp"

namespace v2x {

inline double dbm_to_mw(double dbm) { return std::pow(10.0, dbm / 10.0); }
inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

struct ChannelParams {
    double carrier_ghz = 2.0;
    double bandwidth_hz = 1e6;  // per subchannel (4 MHz over 4 subchannels)
    double noise_dbm = -114.0;
    double bs_antenna_height = 25.0;
    double bs_gain_dbi = 8.0;
    double bs_noise_figure_db = 5.0;
    double vehicle_gain_dbi = 3.0;
    double vehicle_noise_figure_db = 9.0;
    double vehicle_antenna_height = 1.5;
    double v2i_tx_dbm = 23.0;
    std::vector<double> power_levels_dbm = {23.0, 15.0, 5.0, -100.0};

    double v2v_shadow_sigma_db = 3.0;
    double v2v_decorrelation_m = 10.0;
    double v2i_shadow_sigma_db = 8.0;
    double v2i_decorrelation_m = 50.0;

    // -100 dBm is the "off" action: exactly zero watts, not a tiny power
    double silent_threshold_dbm = -99.0;

    double noise_mw() const { return dbm_to_mw(noise_dbm); }
    double v2i_tx_mw() const { return dbm_to_mw(v2i_tx_dbm); }
    double power_level_mw(int index) const {
        double dbm = power_levels_dbm.at(index);
        return dbm < silent_threshold_dbm ? 0.0 : dbm_to_mw(dbm);
    }
};

void validate(const ChannelParams& params);

// Large-scale (frequency-independent) linear power gains. Row-major layouts;
// every vehicle-to-vehicle entry indexes [tx * L + rx_link].
struct LargeScaleGains {
    int L = 0;
    int M = 0;
    std::vector<double> v2v;         // L*L, Tx_j -> Rx_i at [j*L+i]; diagonal = direct links
    std::vector<double> v2i_to_v2v;  // M*L, V2I vehicle m -> Rx_i at [m*L+i]
    std::vector<double> v2v_to_bs;   // L, Tx_i -> BS
    std::vector<double> v2i;         // M, V2I vehicle m -> BS

    double direct(int i) const { return v2v[i * L + i]; }
};

enum class FadingMode { FF, NFF };

FadingMode fading_mode_from_string(const std::string& s);

// Per-interval gains G = alpha * h on every subchannel.
struct ChannelRealization {
    int L = 0;
    int M = 0;
    std::vector<double> v2v;         // M*L*L, [m][j][i]: Tx_j -> Rx_i on subchannel m
    std::vector<double> v2i_to_v2v;  // M*L,  [m][i]: V2I vehicle of subchannel m -> Rx_i
    std::vector<double> v2v_to_bs;   // M*L,  [m][i]: Tx_i -> BS on subchannel m
    std::vector<double> v2i;         // M,    V2I vehicle m -> BS on its own subchannel

    double g_v2v(int m, int j, int i) const { return v2v[(m * L + j) * L + i]; }
    double g_direct(int i, int m) const { return g_v2v(m, i, i); }
    double g_v2i_to_v2v(int m, int i) const { return v2i_to_v2v[m * L + i]; }
    double g_v2v_to_bs(int i, int m) const { return v2v_to_bs[m * L + i]; }
    double g_v2i(int m) const { return v2i[m]; }
};

// Correlated log-normal shadowing, one value per link, plus the vehicle
// positions it was last updated at.
struct ShadowState {
    int L = 0;
    int M = 0;
    std::vector<double> v2v;         // L*L dB
    std::vector<double> v2i_to_v2v;  // M*L dB
    std::vector<double> v2v_to_bs;   // L dB
    std::vector<double> v2i;         // M dB
    std::vector<double> last_x;      // per vehicle
    std::vector<double> last_y;
};

double path_loss_v2v(double d_m, double carrier_ghz = 2.0);
double path_loss_v2i(double d_3d_m);

// One autoregressive shadowing update: S' = rho*S + sqrt(1-rho^2)*N(0,sigma),
// rho = exp(-moved/decorrelation). Stationary marginal is N(0, sigma).
double shadowing_update(double prev_db, double moved_m, double sigma_db, double decorrelation_m,
                        Rng& rng);

// Fresh stationary draws for every link.
ShadowState init_shadow_state(const TopologySnapshot& snapshot, const ChannelParams& params,
                              Rng& rng);

// Advances every link's shadowing by the distance its endpoints moved since
// the last update. A wrap-around jump decorrelates the link completely.
void update_shadowing(ShadowState& state, const TopologySnapshot& snapshot,
                      const ChannelParams& params, Rng& rng);

LargeScaleGains large_scale_gains(const TopologySnapshot& snapshot, const ChannelParams& params,
                                  const ShadowState& shadow);

// Rayleigh power factor, exponential with unit mean.
double fast_fading(Rng& rng);

ChannelRealization realize(const LargeScaleGains& gains, const ChannelParams& params,
                           FadingMode mode, Rng& rng);

}  // namespace v2x
