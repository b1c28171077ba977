#include "v2x/reference.hpp"

#include <cmath>
#include <stdexcept>

namespace v2x::reference {

RateReport compute_rates(const JointAction& joint, const ChannelRealization& r,
                         const ChannelParams& params) {
    int L = r.L;
    int M = r.M;
    if (static_cast<int>(joint.size()) != L) throw std::runtime_error("joint size mismatch");
    double noise = params.noise_mw();
    double pi = params.v2i_tx_mw();

    // start from the uplink contribution, then push each transmitter's power
    // out to its victims
    std::vector<double> interference(static_cast<size_t>(L) * M, 0.0);
    for (int i = 0; i < L; ++i)
        for (int m = 0; m < M; ++m) interference[i * M + m] = pi * r.g_v2i_to_v2v(m, i);
    std::vector<double> bs_interference(M, 0.0);
    for (int j = 0; j < L; ++j) {
        double p = params.power_level_mw(joint[j].power);
        if (p <= 0.0) continue;
        int m = joint[j].subchannel;
        bs_interference[m] += p * r.g_v2v_to_bs(j, m);
        for (int i = 0; i < L; ++i)
            if (i != j) interference[i * M + m] += p * r.g_v2v(m, j, i);
    }

    RateReport out;
    out.interference = interference;
    out.v2i_sinr.resize(M);
    out.v2i_rates.resize(M);
    for (int m = 0; m < M; ++m) {
        out.v2i_sinr[m] = pi * r.g_v2i(m) / (noise + bs_interference[m]);
        out.v2i_rates[m] = link_rate(out.v2i_sinr[m], params.bandwidth_hz);
    }
    out.v2v_sinr.assign(L, 0.0);
    out.v2v_rates.assign(L, 0.0);
    for (int i = 0; i < L; ++i) {
        double p = params.power_level_mw(joint[i].power);
        if (p <= 0.0) continue;
        int m = joint[i].subchannel;
        out.v2v_sinr[i] = p * r.g_direct(i, m) / (noise + interference[i * M + m]);
        out.v2v_rates[i] = link_rate(out.v2v_sinr[i], params.bandwidth_hz);
    }
    return out;
}

namespace {

void fill_recursive(int agent, int L, int M, int P, JointAction& joint, const PayoffFn& fn,
                    std::vector<double>& values, int64_t& cursor) {
    if (agent == L) {
        values[cursor++] = fn(joint);
        return;
    }
    for (int m = 0; m < M; ++m)
        for (int p = 0; p < P; ++p) {
            joint[agent] = {m, p};
            fill_recursive(agent + 1, L, M, P, joint, fn, values, cursor);
        }
}

}  // namespace

PayoffTensor payoff_tensor(int L, int M, int num_power_levels, const PayoffFn& fn) {
    PayoffTensor tensor{L, M * num_power_levels, {}};
    tensor.values.resize(joint_count(L, tensor.A));
    JointAction joint(L);
    int64_t cursor = 0;
    fill_recursive(0, L, M, num_power_levels, joint, fn, tensor.values, cursor);
    return tensor;
}

SearchResult best_joint(const PayoffTensor& tensor, int num_power_levels) {
    if (tensor.values.empty()) throw std::runtime_error("empty payoff tensor");
    int64_t best = 0;
    double best_value = tensor.values[0];
    for (int64_t j = 1; j < tensor.size(); ++j)
        if (tensor.values[j] > best_value) {
            best_value = tensor.values[j];
            best = j;
        }
    return {unflatten_joint(best, tensor.L, tensor.A, num_power_levels), best, best_value};
}

EquilibriumSet enumerate_pure_nash(const PayoffTensor& tensor) {
    int L = tensor.L;
    int A = tensor.A;
    EquilibriumSet eq;
    eq.L = L;
    eq.A = A;
    std::vector<int> digits(L, 0);
    for (int64_t j = 0; j < tensor.size(); ++j) {
        double v = tensor.values[j];
        bool nash = true;
        int64_t stride = 1;
        for (int i = L - 1; i >= 0 && nash; --i) {
            int64_t base = j - digits[i] * stride;
            for (int alt = 0; alt < A; ++alt) {
                if (alt != digits[i] && tensor.values[base + alt * stride] > v) {
                    nash = false;
                    break;
                }
            }
            stride *= A;
        }
        if (nash) {
            eq.joints.push_back(j);
            eq.payoffs.push_back(v);
        }
        // odometer increment, least significant digit last
        for (int i = L - 1; i >= 0; --i) {
            if (++digits[i] < A) break;
            digits[i] = 0;
        }
    }
    return eq;
}

}  // namespace v2x::reference
