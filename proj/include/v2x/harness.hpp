#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "v2x/algo.hpp"
#include "v2x/oracle.hpp"

namespace v2x {

// Episode budgets scale as a fraction of the full-budget tables, snapped to a
// multiple of 100 so the evaluation grid keeps exactly 100 points.
int64_t scaled_episodes(int64_t base, double scale);

struct ExperimentConfig {
    Task task = Task::NFIG;
    Algo algo = Algo::IDQN;
    int L = 4;
    int M = 4;
    std::vector<uint64_t> seeds = {0, 1, 2, 3, 4};
    double scale = 0.02;  // fraction of the full episode budget
    std::string out_dir = "out";

    // Multi-topology tasks only. Empty path means generate under out_dir.
    std::string dataset_path;
    int64_t dataset_samples = 15000;
    uint64_t dataset_seed = 31;

    uint64_t topology_seed = 6;        // single-layout training topology
    uint64_t test_topology_seed = 99;  // the 3x3 evaluation grid
    uint64_t channel_seed = 12345;     // shadowing, shared by training/eval/bounds
    // >= 0 pins single-layout training to that entry of the test grid instead
    // of topology_seed (used by the per-topology difficulty sweeps).
    int sl_test_topology_index = -1;

    DensityLevel density = DensityLevel::D123;
    DistanceLevel distance = DistanceLevel::Mid;
    SamplingMode sampling_mode = SamplingMode::Random;

    int n_workers = 1;
    std::map<std::string, std::string> hp_overrides;
};

// Valid keys for hp_overrides and the CLI's --hp flags.
const std::vector<std::string>& hyperparameter_keys();
void apply_hp_override(Hyperparameters& hp, const std::string& key, const std::string& value);

// Experiment config files: flat `key = value` lines grouped by [section]
// headers, # comments. Keys are globally unique; unknown keys or sections
// fail fast listing the valid ones.
const std::vector<std::string>& config_keys();
void apply_config_kv(ExperimentConfig& cfg, const std::string& key, const std::string& value);
ExperimentConfig load_experiment_config(const std::string& path);
void save_experiment_config(const ExperimentConfig& cfg, const std::string& path);

std::string default_dataset_path(const ExperimentConfig& cfg);

// Defaults for (algo, task) with episode counts rescaled by cfg.scale; the
// replay warmup shrinks with tiny budgets so short runs still train. Raw
// overrides win last, taken literally.
Hyperparameters resolve_hyperparameters(const ExperimentConfig& cfg);

// Stable content hash over the persisted topology fields.
uint64_t topology_fingerprint(const TopologySnapshot& snapshot);

// Normalization anchors on one topology: g_min from random-policy episodes on
// the task's own environment, g_max from the task's oracle (exhaustive best
// joint action for the one-shot task, the per-step oracle return without fast
// fading for the others). Deterministic given (task, topology, channel_seed).
NormalizationBounds compute_bounds(Task task, const TopologySnapshot& topo, uint64_t channel_seed,
                                   int random_episodes = 200);

// Process-wide memo keyed by (task, channel_seed, topology fingerprint).
class BoundsCache {
public:
    NormalizationBounds get(Task task, const TopologySnapshot& topo, uint64_t channel_seed);

private:
    std::map<std::tuple<int, uint64_t, uint64_t>, NormalizationBounds> memo_;
    std::mutex mu_;
};

std::string task_dir_name(Task t);
std::string run_dir_for(const ExperimentConfig& cfg, uint64_t seed);

TopologySnapshot training_topology(const ExperimentConfig& cfg);
std::vector<TopologySnapshot> evaluation_topologies(const ExperimentConfig& cfg);
EnvConfig experiment_env_config(const ExperimentConfig& cfg, uint64_t run_seed);

// Loads dataset_path if present, otherwise generates dataset_samples layouts
// and saves them under the experiment's dataset path (logged to stderr).
std::shared_ptr<const Dataset> ensure_dataset(const ExperimentConfig& cfg);

// Everything one seed's Trainer needs; bounds come from `cache` when given so
// sibling seeds share one computation.
TrainerConfig build_trainer_config(const ExperimentConfig& cfg, uint64_t seed,
                                   BoundsCache* cache = nullptr);

struct EvaluationRecord {
    uint64_t seed = 0;
    int eval_index = 0;
    int64_t episodes_done = 0;
    std::vector<double> episode_returns;
    double mean_return = 0.0;
    double normalized_return = 0.0;
};

// Protocol rollouts for an arbitrary policy: one greedy episode per entry of
// `topologies`, or n_episodes resets of env's own source when it is empty.
// Bounds: empty, one shared entry, or one per episode.
EvaluationRecord evaluate_policy(const Policy& policy, Env& env,
                                 const std::vector<TopologySnapshot>& topologies,
                                 const std::vector<NormalizationBounds>& bounds,
                                 int n_episodes = 9);

struct RunOutcome {
    uint64_t seed = 0;
    std::string run_dir;
    std::string status = "failed";  // completed | aborted | failed
    std::string error;
    TrainLog log;
};

struct ExperimentResult {
    std::string experiment_dir;
    std::vector<RunOutcome> runs;
    int completed() const;
};

// Trains every seed, isolated: one seed failing or diverging does not stop the
// siblings, and its status lands in both manifests. Each run directory gets
// manifest.json, log.csv and checkpoints/final/.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Reconstructs the experiment config (and optionally the seed) a run
// directory's manifest records.
ExperimentConfig manifest_config(const std::string& run_dir, uint64_t* seed_out = nullptr);

struct ResultCell {
    Task task = Task::NFIG;
    Algo algo = Algo::IDQN;
    std::vector<uint64_t> seeds;
    int n_evals = 0;
    int best_eval_index = -1;
    double max_mean = 0.0;  // max over eval indices of the across-seed mean
    double ci95 = 0.0;      // 1.96 * sample std / sqrt(n_seeds) at that index
    std::vector<std::vector<double>> per_seed_normalized;  // [seed][eval_index]
};

struct ResultTable {
    std::vector<ResultCell> cells;  // ordered by (task, algo)
};

// Reads manifest.json + log.csv from completed run directories, grouping by
// (task, algorithm). Non-completed runs are skipped with a note; mismatched
// eval counts inside a cell are an error.
ResultTable aggregate(const std::vector<std::string>& run_dirs);

void report_csv(const ResultTable& table, const std::string& path);
void report_json(const ResultTable& table, const std::string& path);
// Long form: task,algorithm,seed,eval_index,normalized_return.
void report_plot_data(const ResultTable& table, const std::string& path);
// Inverse of report_csv over the summary columns (per-seed curves are not in
// the summary CSV, so those come back empty).
ResultTable parse_result_csv(const std::string& path);

struct TopologyCds {
    int index = 0;
    uint64_t fingerprint = 0;
    NormalizationBounds bounds;
    CdsReport report;
};

// One-shot-game difficulty of a single topology / the whole 3x3 grid.
TopologyCds cds_for_topology(const ExperimentConfig& cfg, const TopologySnapshot& topo, int index);
std::vector<TopologyCds> cds_over_test_grid(const ExperimentConfig& cfg);

// Spearman rank correlation with average ranks on ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace v2x
