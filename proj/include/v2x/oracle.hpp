#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "v2x/env.hpp"
#include "v2x/game.hpp"

namespace v2x {

// One-step common payoff as a function of the joint action.
using PayoffFn = std::function<double(const JointAction&)>;

// Dense tensor over all A^L joint actions, agent 0 most significant, so the
// flat index orders joints lexicographically.
struct PayoffTensor {
    int L = 0;
    int A = 0;                   // actions per agent, M * |A_P|
    std::vector<double> values;  // A^L

    int64_t size() const { return static_cast<int64_t>(values.size()); }
};

int64_t joint_count(int L, int A);  // A^L, throws on overflow
int64_t flatten_joint(const JointAction& joint, int A, int num_power_levels);
JointAction unflatten_joint(int64_t flat, int L, int A, int num_power_levels);

// Default enumeration guard: 16^4 joints is fine, 16^8 is not.
inline constexpr int kMaxExhaustiveAgents = 4;

// One-step payoffs for the two reward flavors, bound to a fixed realization.
PayoffFn nfig_payoff(const ChannelRealization& r, const ChannelParams& params,
                     const RewardWeights& weights);
PayoffFn sig_payoff(const ChannelRealization& r, const ChannelParams& params,
                    const RewardWeights& weights, std::vector<double> q_start);

// Evaluates fn over every joint action. OpenMP-parallel over the flat index;
// reference::payoff_tensor is the serial twin used to cross-check it.
PayoffTensor build_payoff_tensor(int L, int M, int num_power_levels, const PayoffFn& fn,
                                 int max_agents = kMaxExhaustiveAgents);

struct SearchResult {
    JointAction joint;
    int64_t flat = 0;
    double value = 0.0;
};

// Exact argmax over the tensor; ties go to the lexicographically first joint.
SearchResult best_joint(const PayoffTensor& tensor, int num_power_levels);

// Enumerates all joints of the one-step game. Refuses above the agent guard.
SearchResult exhaustive_best_joint_action(const ChannelRealization& r, const ChannelParams& params,
                                          const RewardWeights& weights,
                                          int max_agents = kMaxExhaustiveAgents);

// Index-order sweeps, each agent taking the locally best action given the
// others, starting all-silent, until a full sweep changes nothing. Ties favor
// the lower subchannel, then the lower power index.
JointAction greedy_iterative_assignment(int L, int M, int num_power_levels, const PayoffFn& fn);

struct GreedyStats {
    JointAction joint;
    int sweeps = 0;
};
GreedyStats greedy_iterative_assignment_stats(int L, int M, int num_power_levels,
                                              const PayoffFn& fn);

enum class OracleMode { Auto, Exhaustive, Greedy };

// Rolls one episode picking per step the joint action maximizing the
// instantaneous reward (the completion bonus rides along via the queue state).
// Auto switches from exhaustive to greedy above the agent guard.
double sig_sl_oracle_return(Env& env, OracleMode mode = OracleMode::Auto);

// Mean episode return of uniform-random joint actions.
double random_policy_return(Env& env, int n_episodes, Rng& rng);

struct NormalizationBounds {
    double g_min = 0.0;
    double g_max = 1.0;

    bool degenerate() const { return !(g_max > g_min); }
};

// (g - g_min) / (g_max - g_min); unbounded on both sides by design.
double normalize_return(double g, const NormalizationBounds& bounds);

struct EquilibriumSet {
    int L = 0;
    int A = 0;
    std::vector<int64_t> joints;   // flat ids, ascending
    std::vector<double> payoffs;   // raw common payoff per equilibrium

    int count() const { return static_cast<int>(joints.size()); }
};

// All joint actions no agent can strictly improve by unilateral deviation.
EquilibriumSet enumerate_pure_nash(const PayoffTensor& tensor);

struct CdsReport {
    double d = 0.0;
    int equilibrium_count = 0;
    double g_ne_max = 0.0;
    double g_ne_min = 0.0;
    double g_ne_mean = 0.0;
};

// d = (G^max - G^min)/G^max + (1 - G^mean)/G^max over normalized equilibrium
// returns. Throws on an empty set or a non-positive best equilibrium.
CdsReport coordination_difficulty_score(const EquilibriumSet& eq,
                                        const NormalizationBounds& bounds);

// A policy maps the current environment state to a joint action.
using Policy = std::function<JointAction(const Env&)>;

struct PairedReturns {
    double train_mean = 0.0;  // normalized mean over the in-training samples
    double test_mean = 0.0;   // normalized mean over the held-out topologies
};

// Evaluates one policy on in-training samples and held-out topologies with
// per-topology normalization bounds; episodes_per_topology rollouts each.
PairedReturns robustness_ablation(
    const Policy& policy, const std::vector<TopologySnapshot>& train_samples,
    const std::vector<TopologySnapshot>& held_out, const EnvConfig& cfg,
    int episodes_per_topology,
    const std::function<NormalizationBounds(const TopologySnapshot&)>& bounds_for);

}  // namespace v2x
