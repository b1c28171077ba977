#include "v2x/channel.hpp"

#include <stdexcept>

namespace v2x {

void validate(const ChannelParams& params) {
    if (params.bandwidth_hz <= 0.0) throw std::runtime_error("bandwidth must be positive");
    if (params.power_levels_dbm.empty()) throw std::runtime_error("empty power level set");
    for (size_t i = 1; i < params.power_levels_dbm.size(); ++i)
        if (params.power_levels_dbm[i] >= params.power_levels_dbm[i - 1])
            throw std::runtime_error("power levels must be sorted descending");
    if (params.power_levels_dbm.back() >= params.silent_threshold_dbm)
        throw std::runtime_error("the lowest power level must be the silent (-100 dBm) action");
    if (params.v2v_shadow_sigma_db < 0.0 || params.v2i_shadow_sigma_db < 0.0)
        throw std::runtime_error("shadowing sigma must be non-negative");
    if (params.v2v_decorrelation_m <= 0.0 || params.v2i_decorrelation_m <= 0.0)
        throw std::runtime_error("decorrelation distance must be positive");
}

FadingMode fading_mode_from_string(const std::string& s) {
    if (s == "ff" || s == "FF") return FadingMode::FF;
    if (s == "nff" || s == "NFF") return FadingMode::NFF;
    throw std::runtime_error("unknown fading mode: " + s + " (expected ff or nff)");
}

double path_loss_v2v(double d_m, double carrier_ghz) {
    double d = std::max(d_m, 3.0);
    return 22.7 * std::log10(d) + 41.0 + 20.0 * std::log10(carrier_ghz / 5.0);
}

double path_loss_v2i(double d_3d_m) {
    double d = std::max(d_3d_m, 10.0);
    return 128.1 + 37.6 * std::log10(d / 1000.0);
}

double shadowing_update(double prev_db, double moved_m, double sigma_db, double decorrelation_m,
                        Rng& rng) {
    double rho = std::exp(-moved_m / decorrelation_m);
    return rho * prev_db + std::sqrt(1.0 - rho * rho) * rng.normal(0.0, sigma_db);
}

namespace {

double ground_distance(const TopologySnapshot& s, const Vehicle& a, const Vehicle& b) {
    return std::hypot(a.x - b.x, s.vehicle_y(a) - s.vehicle_y(b));
}

double bs_distance_3d(const TopologySnapshot& s, const Vehicle& v, const ChannelParams& p) {
    double ground = std::hypot(v.x - s.bs_x, s.vehicle_y(v) - s.bs_y);
    return std::hypot(ground, p.bs_antenna_height - p.vehicle_antenna_height);
}

// alpha = 10^((-PL - S + G_tx + G_rx - NF_rx)/10)
double vehicle_link_gain(double d_m, double shadow_db, const ChannelParams& p) {
    double db = -path_loss_v2v(d_m, p.carrier_ghz) - shadow_db + 2.0 * p.vehicle_gain_dbi -
                p.vehicle_noise_figure_db;
    return db_to_linear(db);
}

double bs_link_gain(double d_3d_m, double shadow_db, const ChannelParams& p) {
    double db = -path_loss_v2i(d_3d_m) - shadow_db + p.vehicle_gain_dbi + p.bs_gain_dbi -
                p.bs_noise_figure_db;
    return db_to_linear(db);
}

}  // namespace

ShadowState init_shadow_state(const TopologySnapshot& snapshot, const ChannelParams& params,
                              Rng& rng) {
    const int L = snapshot.L;
    const int M = snapshot.M;
    ShadowState st;
    st.L = L;
    st.M = M;
    st.v2v.resize(size_t(L) * L);
    st.v2i_to_v2v.resize(size_t(M) * L);
    st.v2v_to_bs.resize(L);
    st.v2i.resize(M);
    for (auto& s : st.v2v) s = rng.normal(0.0, params.v2v_shadow_sigma_db);
    for (auto& s : st.v2i_to_v2v) s = rng.normal(0.0, params.v2v_shadow_sigma_db);
    for (auto& s : st.v2v_to_bs) s = rng.normal(0.0, params.v2i_shadow_sigma_db);
    for (auto& s : st.v2i) s = rng.normal(0.0, params.v2i_shadow_sigma_db);
    st.last_x.resize(snapshot.vehicles.size());
    st.last_y.resize(snapshot.vehicles.size());
    for (size_t k = 0; k < snapshot.vehicles.size(); ++k) {
        st.last_x[k] = snapshot.vehicles[k].x;
        st.last_y[k] = snapshot.vehicle_y(snapshot.vehicles[k]);
    }
    return st;
}

void update_shadowing(ShadowState& state, const TopologySnapshot& snapshot,
                      const ChannelParams& params, Rng& rng) {
    const int L = state.L;
    const int M = state.M;
    const size_t n = snapshot.vehicles.size();
    if (n != state.last_x.size())
        throw std::runtime_error("shadow state does not match snapshot");

    std::vector<double> moved(n);
    for (size_t k = 0; k < n; ++k) {
        const Vehicle& v = snapshot.vehicles[k];
        moved[k] = std::hypot(v.x - state.last_x[k], snapshot.vehicle_y(v) - state.last_y[k]);
        state.last_x[k] = v.x;
        state.last_y[k] = snapshot.vehicle_y(v);
    }

    for (int j = 0; j < L; ++j)
        for (int i = 0; i < L; ++i) {
            double m = moved[2 * j] + moved[2 * i + 1];
            state.v2v[j * L + i] = shadowing_update(state.v2v[j * L + i], m,
                                                    params.v2v_shadow_sigma_db,
                                                    params.v2v_decorrelation_m, rng);
        }
    for (int m = 0; m < M; ++m)
        for (int i = 0; i < L; ++i) {
            double mv = moved[2 * L + m] + moved[2 * i + 1];
            state.v2i_to_v2v[m * L + i] =
                shadowing_update(state.v2i_to_v2v[m * L + i], mv, params.v2v_shadow_sigma_db,
                                 params.v2v_decorrelation_m, rng);
        }
    for (int i = 0; i < L; ++i)
        state.v2v_to_bs[i] = shadowing_update(state.v2v_to_bs[i], moved[2 * i],
                                              params.v2i_shadow_sigma_db,
                                              params.v2i_decorrelation_m, rng);
    for (int m = 0; m < M; ++m)
        state.v2i[m] = shadowing_update(state.v2i[m], moved[2 * L + m],
                                        params.v2i_shadow_sigma_db,
                                        params.v2i_decorrelation_m, rng);
}

LargeScaleGains large_scale_gains(const TopologySnapshot& snapshot, const ChannelParams& params,
                                  const ShadowState& shadow) {
    const int L = snapshot.L;
    const int M = snapshot.M;
    LargeScaleGains g;
    g.L = L;
    g.M = M;
    g.v2v.resize(size_t(L) * L);
    g.v2i_to_v2v.resize(size_t(M) * L);
    g.v2v_to_bs.resize(L);
    g.v2i.resize(M);

    for (int j = 0; j < L; ++j)
        for (int i = 0; i < L; ++i) {
            double d = ground_distance(snapshot, snapshot.tx(j), snapshot.rx(i));
            g.v2v[j * L + i] = vehicle_link_gain(d, shadow.v2v[j * L + i], params);
        }
    for (int m = 0; m < M; ++m)
        for (int i = 0; i < L; ++i) {
            double d = ground_distance(snapshot, snapshot.v2i(m), snapshot.rx(i));
            g.v2i_to_v2v[m * L + i] = vehicle_link_gain(d, shadow.v2i_to_v2v[m * L + i], params);
        }
    for (int i = 0; i < L; ++i) {
        double d = bs_distance_3d(snapshot, snapshot.tx(i), params);
        g.v2v_to_bs[i] = bs_link_gain(d, shadow.v2v_to_bs[i], params);
    }
    for (int m = 0; m < M; ++m) {
        double d = bs_distance_3d(snapshot, snapshot.v2i(m), params);
        g.v2i[m] = bs_link_gain(d, shadow.v2i[m], params);
    }
    return g;
}

double fast_fading(Rng& rng) { return rng.exponential(1.0); }

ChannelRealization realize(const LargeScaleGains& gains, const ChannelParams& params,
                           FadingMode mode, Rng& rng) {
    (void)params;
    const int L = gains.L;
    const int M = gains.M;
    ChannelRealization r;
    r.L = L;
    r.M = M;
    r.v2v.resize(size_t(M) * L * L);
    r.v2i_to_v2v.resize(size_t(M) * L);
    r.v2v_to_bs.resize(size_t(M) * L);
    r.v2i.resize(M);

    auto h = [&]() { return mode == FadingMode::NFF ? 1.0 : fast_fading(rng); };

    for (int m = 0; m < M; ++m)
        for (int j = 0; j < L; ++j)
            for (int i = 0; i < L; ++i)
                r.v2v[(size_t(m) * L + j) * L + i] = gains.v2v[j * L + i] * h();
    for (int m = 0; m < M; ++m)
        for (int i = 0; i < L; ++i)
            r.v2i_to_v2v[m * L + i] = gains.v2i_to_v2v[m * L + i] * h();
    for (int m = 0; m < M; ++m)
        for (int i = 0; i < L; ++i)
            r.v2v_to_bs[m * L + i] = gains.v2v_to_bs[i] * h();
    for (int m = 0; m < M; ++m) r.v2i[m] = gains.v2i[m] * h();
    return r;
}

}  // namespace v2x
