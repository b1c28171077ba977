#include "v2x/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace v2x {

namespace {

void check_guard(int L, int max_agents) {
    if (L > max_agents)
        throw std::runtime_error("exhaustive enumeration refused for " + std::to_string(L) +
                                 " agents (guard at " + std::to_string(max_agents) +
                                 "); use the greedy baseline instead");
}

// Scans fn over all joints without materializing a tensor. Each thread keeps
// its own (value, flat) best; merge prefers the lexicographically first joint.
SearchResult scan_best(int L, int M, int num_power_levels, const PayoffFn& fn) {
    int A = M * num_power_levels;
    int64_t n = joint_count(L, A);
    double best_value = -std::numeric_limits<double>::infinity();
    int64_t best_flat = 0;
#pragma omp parallel
    {
        double local_value = -std::numeric_limits<double>::infinity();
        int64_t local_flat = 0;
        JointAction joint(L);
#pragma omp for schedule(static)
        for (int64_t j = 0; j < n; ++j) {
            int64_t rest = j;
            for (int i = L - 1; i >= 0; --i) {
                joint[i] = decode_action(static_cast<int>(rest % A), num_power_levels);
                rest /= A;
            }
            double v = fn(joint);
            if (v > local_value || (v == local_value && j < local_flat)) {
                local_value = v;
                local_flat = j;
            }
        }
#pragma omp critical
        {
            bool saw_any = local_value != -std::numeric_limits<double>::infinity();
            if (saw_any && (local_value > best_value ||
                            (local_value == best_value && local_flat < best_flat))) {
                best_value = local_value;
                best_flat = local_flat;
            }
        }
    }
    return {unflatten_joint(best_flat, L, A, num_power_levels), best_flat, best_value};
}

}  // namespace

int64_t joint_count(int L, int A) {
    if (L < 1 || A < 1) throw std::runtime_error("joint space needs L >= 1 and A >= 1");
    int64_t n = 1;
    for (int i = 0; i < L; ++i) {
        if (n > std::numeric_limits<int64_t>::max() / A)
            throw std::runtime_error("joint action space overflows a 64-bit count");
        n *= A;
    }
    return n;
}

int64_t flatten_joint(const JointAction& joint, int A, int num_power_levels) {
    int64_t flat = 0;
    for (const Action& a : joint) flat = flat * A + encode_action(a, num_power_levels);
    return flat;
}

JointAction unflatten_joint(int64_t flat, int L, int A, int num_power_levels) {
    JointAction joint(L);
    for (int i = L - 1; i >= 0; --i) {
        joint[i] = decode_action(static_cast<int>(flat % A), num_power_levels);
        flat /= A;
    }
    return joint;
}

PayoffFn nfig_payoff(const ChannelRealization& r, const ChannelParams& params,
                     const RewardWeights& weights) {
    return [r, params, weights](const JointAction& joint) {
        thread_local RateReport scratch;
        compute_rates(joint, r, params, scratch);
        return reward_nfig(scratch.v2i_rates, scratch.v2v_rates, weights);
    };
}

PayoffFn sig_payoff(const ChannelRealization& r, const ChannelParams& params,
                    const RewardWeights& weights, std::vector<double> q_start) {
    if (static_cast<int>(q_start.size()) != r.L)
        throw std::runtime_error("q_start size does not match the agent count");
    return [r, params, weights, q = std::move(q_start)](const JointAction& joint) {
        thread_local RateReport scratch;
        compute_rates(joint, r, params, scratch);
        return reward_sig(scratch.v2i_rates, scratch.v2v_rates, q, weights);
    };
}

PayoffTensor build_payoff_tensor(int L, int M, int num_power_levels, const PayoffFn& fn,
                                 int max_agents) {
    check_guard(L, max_agents);
    int A = M * num_power_levels;
    PayoffTensor tensor{L, A, {}};
    int64_t n = joint_count(L, A);
    tensor.values.resize(n);
#pragma omp parallel
    {
        JointAction joint(L);
#pragma omp for schedule(static)
        for (int64_t j = 0; j < n; ++j) {
            int64_t rest = j;
            for (int i = L - 1; i >= 0; --i) {
                joint[i] = decode_action(static_cast<int>(rest % A), num_power_levels);
                rest /= A;
            }
            tensor.values[j] = fn(joint);
        }
    }
    return tensor;
}

SearchResult best_joint(const PayoffTensor& tensor, int num_power_levels) {
    if (tensor.values.empty()) throw std::runtime_error("empty payoff tensor");
    int64_t best = 0;
    for (int64_t j = 1; j < tensor.size(); ++j)
        if (tensor.values[j] > tensor.values[best]) best = j;
    return {unflatten_joint(best, tensor.L, tensor.A, num_power_levels), best, tensor.values[best]};
}

SearchResult exhaustive_best_joint_action(const ChannelRealization& r, const ChannelParams& params,
                                          const RewardWeights& weights, int max_agents) {
    check_guard(r.L, max_agents);
    int P = static_cast<int>(params.power_levels_dbm.size());
    return scan_best(r.L, r.M, P, nfig_payoff(r, params, weights));
}

GreedyStats greedy_iterative_assignment_stats(int L, int M, int num_power_levels,
                                              const PayoffFn& fn) {
    JointAction joint(L, Action{0, num_power_levels - 1});  // everyone silent
    GreedyStats stats;
    const int sweep_cap = 1000;
    for (;;) {
        if (++stats.sweeps > sweep_cap)
            throw std::runtime_error("greedy assignment failed to settle within 1000 sweeps");
        bool changed = false;
        for (int i = 0; i < L; ++i) {
            double current = fn(joint);
            Action original = joint[i];
            Action best = original;
            double best_value = current;
            for (int m = 0; m < M; ++m) {
                for (int p = 0; p < num_power_levels; ++p) {
                    Action candidate{m, p};
                    if (candidate == original) continue;
                    joint[i] = candidate;
                    double v = fn(joint);
                    // strict improvement only, first hit wins the tie
                    if (v > best_value) {
                        best_value = v;
                        best = candidate;
                    }
                }
            }
            joint[i] = best;
            if (!(best == original)) changed = true;
        }
        if (!changed) break;
    }
    stats.joint = std::move(joint);
    return stats;
}

JointAction greedy_iterative_assignment(int L, int M, int num_power_levels, const PayoffFn& fn) {
    return greedy_iterative_assignment_stats(L, M, num_power_levels, fn).joint;
}

double sig_sl_oracle_return(Env& env, OracleMode mode) {
    int L = env.num_agents();
    bool exhaustive = mode == OracleMode::Exhaustive ||
                      (mode == OracleMode::Auto && L <= kMaxExhaustiveAgents);
    if (mode == OracleMode::Exhaustive) check_guard(L, kMaxExhaustiveAgents);
    int P = env.num_power_levels();
    env.reset();
    double total = 0.0;
    while (!env.done()) {
        PayoffFn fn = sig_payoff(env.realization(), env.config().channel, env.config().reward,
                                 env.queues().q);
        JointAction joint = exhaustive
                                ? scan_best(L, env.num_subchannels(), P, fn).joint
                                : greedy_iterative_assignment(L, env.num_subchannels(), P, fn);
        total += env.step(joint).reward;
    }
    return total;
}

double random_policy_return(Env& env, int n_episodes, Rng& rng) {
    if (n_episodes < 1) throw std::runtime_error("random baseline needs at least one episode");
    int L = env.num_agents();
    int A = env.num_actions();
    int P = env.num_power_levels();
    double total = 0.0;
    for (int ep = 0; ep < n_episodes; ++ep) {
        env.reset();
        while (!env.done()) {
            JointAction joint(L);
            for (Action& a : joint) a = decode_action(rng.uniform_int(A), P);
            total += env.step(joint).reward;
        }
    }
    return total / n_episodes;
}

double normalize_return(double g, const NormalizationBounds& bounds) {
    if (bounds.degenerate())
        throw std::runtime_error("degenerate normalization bounds: g_max <= g_min");
    return (g - bounds.g_min) / (bounds.g_max - bounds.g_min);
}

EquilibriumSet enumerate_pure_nash(const PayoffTensor& tensor) {
    int L = tensor.L;
    int A = tensor.A;
    int64_t n = tensor.size();
    if (n == 0) throw std::runtime_error("empty payoff tensor");

    // strides per agent, agent 0 most significant
    std::vector<int64_t> stride(L, 1);
    for (int i = L - 2; i >= 0; --i) stride[i] = stride[i + 1] * A;

    int num_chunks = 64;
    std::vector<std::vector<int64_t>> found(num_chunks);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < num_chunks; ++c) {
        int64_t lo = n * c / num_chunks;
        int64_t hi = n * (c + 1) / num_chunks;
        for (int64_t j = lo; j < hi; ++j) {
            double v = tensor.values[j];
            bool nash = true;
            for (int i = 0; i < L && nash; ++i) {
                int digit = static_cast<int>((j / stride[i]) % A);
                int64_t base = j - digit * stride[i];
                for (int alt = 0; alt < A; ++alt) {
                    if (alt == digit) continue;
                    if (tensor.values[base + alt * stride[i]] > v) {
                        nash = false;
                        break;
                    }
                }
            }
            if (nash) found[c].push_back(j);
        }
    }

    EquilibriumSet eq;
    eq.L = L;
    eq.A = A;
    for (const auto& chunk : found)
        for (int64_t j : chunk) {
            eq.joints.push_back(j);
            eq.payoffs.push_back(tensor.values[j]);
        }
    return eq;
}

CdsReport coordination_difficulty_score(const EquilibriumSet& eq,
                                        const NormalizationBounds& bounds) {
    if (eq.joints.empty())
        throw std::runtime_error("coordination difficulty is undefined for an empty equilibrium set");
    CdsReport report;
    report.equilibrium_count = eq.count();
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    double sum = 0.0;
    for (double payoff : eq.payoffs) {
        double g = normalize_return(payoff, bounds);
        lo = std::min(lo, g);
        hi = std::max(hi, g);
        sum += g;
    }
    report.g_ne_max = hi;
    report.g_ne_min = lo;
    report.g_ne_mean = sum / eq.count();
    if (!(hi > 0.0))
        throw std::runtime_error("coordination difficulty needs a positive best equilibrium return");
    report.d = (hi - lo) / hi + (1.0 - report.g_ne_mean) / hi;
    return report;
}

PairedReturns robustness_ablation(
    const Policy& policy, const std::vector<TopologySnapshot>& train_samples,
    const std::vector<TopologySnapshot>& held_out, const EnvConfig& cfg,
    int episodes_per_topology,
    const std::function<NormalizationBounds(const TopologySnapshot&)>& bounds_for) {
    if (episodes_per_topology < 1) throw std::runtime_error("need at least one episode per topology");
    auto evaluate_set = [&](const std::vector<TopologySnapshot>& set, uint64_t stream) {
        if (set.empty()) throw std::runtime_error("robustness ablation needs topologies on both sides");
        double mean = 0.0;
        for (size_t k = 0; k < set.size(); ++k) {
            EnvConfig per = cfg;
            per.seed = derive_seed(cfg.seed, stream + k);
            Env env(per, TopologySource::fixed(set[k]));
            double total = 0.0;
            for (int ep = 0; ep < episodes_per_topology; ++ep) {
                env.reset();
                double episode = 0.0;
                while (!env.done()) episode += env.step(policy(env)).reward;
                total += episode;
            }
            mean += normalize_return(total / episodes_per_topology, bounds_for(set[k]));
        }
        return mean / set.size();
    };
    PairedReturns out;
    out.train_mean = evaluate_set(train_samples, 0x7261u);
    out.test_mean = evaluate_set(held_out, 0x7465u);
    return out;
}

}  // namespace v2x
