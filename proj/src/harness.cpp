#include "v2x/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace v2x {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

int64_t scaled_episodes(int64_t base, double scale) {
    if (base <= 0 || scale <= 0.0 || !std::isfinite(scale)) {
        throw std::invalid_argument("episode budget and scale must be positive");
    }
    int64_t snapped = std::llround(static_cast<double>(base) * scale / 100.0) * 100;
    return std::max<int64_t>(100, snapped);
}

namespace {

struct HpKey {
    const char* name;
    void (*set)(Hyperparameters&, const std::string&);
};

int64_t parse_i64(const std::string& v) { return std::stoll(v); }
double parse_f64(const std::string& v) { return std::stod(v); }

bool parse_flag(const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw std::invalid_argument("expected a boolean, got '" + v + "'");
}

const HpKey kHpKeys[] = {
    {"hidden", [](Hyperparameters& h, const std::string& v) { h.hidden = static_cast<int>(parse_i64(v)); }},
    {"gamma", [](Hyperparameters& h, const std::string& v) { h.gamma = parse_f64(v); }},
    {"grad_clip", [](Hyperparameters& h, const std::string& v) { h.grad_clip = parse_f64(v); }},
    {"lr", [](Hyperparameters& h, const std::string& v) { h.lr = parse_f64(v); }},
    {"mixer_lr", [](Hyperparameters& h, const std::string& v) { h.mixer_lr = parse_f64(v); }},
    {"hyst_alpha", [](Hyperparameters& h, const std::string& v) { h.hyst_alpha = parse_f64(v); }},
    {"hyst_beta", [](Hyperparameters& h, const std::string& v) { h.hyst_beta = parse_f64(v); }},
    {"tau", [](Hyperparameters& h, const std::string& v) { h.tau = parse_f64(v); }},
    {"replay_capacity", [](Hyperparameters& h, const std::string& v) { h.replay_capacity = parse_i64(v); }},
    {"warmup_transitions", [](Hyperparameters& h, const std::string& v) { h.warmup_transitions = parse_i64(v); }},
    {"qmix_embed", [](Hyperparameters& h, const std::string& v) { h.qmix_embed = static_cast<int>(parse_i64(v)); }},
    {"actor_lr", [](Hyperparameters& h, const std::string& v) { h.actor_lr = parse_f64(v); }},
    {"critic_lr", [](Hyperparameters& h, const std::string& v) { h.critic_lr = parse_f64(v); }},
    {"ppo_epochs", [](Hyperparameters& h, const std::string& v) { h.ppo_epochs = static_cast<int>(parse_i64(v)); }},
    {"ppo_minibatches", [](Hyperparameters& h, const std::string& v) { h.ppo_minibatches = static_cast<int>(parse_i64(v)); }},
    {"clip_ratio", [](Hyperparameters& h, const std::string& v) { h.clip_ratio = parse_f64(v); }},
    {"entropy_coef", [](Hyperparameters& h, const std::string& v) { h.entropy_coef = parse_f64(v); }},
    {"parameter_sharing", [](Hyperparameters& h, const std::string& v) { h.parameter_sharing = parse_flag(v); }},
    {"batch_size", [](Hyperparameters& h, const std::string& v) { h.batch_size = static_cast<int>(parse_i64(v)); }},
    {"training_episodes", [](Hyperparameters& h, const std::string& v) { h.training_episodes = parse_i64(v); }},
    {"anneal_episodes", [](Hyperparameters& h, const std::string& v) { h.anneal_episodes = parse_i64(v); }},
    {"eps_start", [](Hyperparameters& h, const std::string& v) { h.eps_start = parse_f64(v); }},
    {"eps_end", [](Hyperparameters& h, const std::string& v) { h.eps_end = parse_f64(v); }},
};

}  // namespace

const std::vector<std::string>& hyperparameter_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const HpKey& e : kHpKeys) k.push_back(e.name);
        return k;
    }();
    return keys;
}

void apply_hp_override(Hyperparameters& hp, const std::string& key, const std::string& value) {
    for (const HpKey& e : kHpKeys) {
        if (key == e.name) {
            e.set(hp, value);
            return;
        }
    }
    std::string valid;
    for (const std::string& k : hyperparameter_keys()) {
        if (!valid.empty()) valid += ", ";
        valid += k;
    }
    throw std::invalid_argument("unknown hyperparameter '" + key + "' (valid: " + valid + ")");
}

namespace {

struct ConfigKey {
    const char* section;
    const char* name;
    void (*set)(ExperimentConfig&, const std::string&);
    std::string (*get)(const ExperimentConfig&);
};

std::string seeds_to_string(const std::vector<uint64_t>& seeds) {
    std::string s;
    for (uint64_t v : seeds) {
        if (!s.empty()) s += ',';
        s += std::to_string(v);
    }
    return s;
}

std::vector<uint64_t> seeds_from_string(const std::string& text) {
    std::vector<uint64_t> seeds;
    std::string cur;
    for (char c : text + ",") {
        if (c == ',' || c == ' ' || c == ';') {
            if (!cur.empty()) seeds.push_back(std::stoull(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (seeds.empty()) throw std::invalid_argument("seeds list is empty");
    return seeds;
}

const ConfigKey kConfigKeys[] = {
    {"experiment", "task",
     [](ExperimentConfig& c, const std::string& v) { c.task = task_from_string(v); },
     [](const ExperimentConfig& c) { return task_dir_name(c.task); }},
    {"experiment", "algo",
     [](ExperimentConfig& c, const std::string& v) { c.algo = algo_from_string(v); },
     [](const ExperimentConfig& c) { return std::string(to_string(c.algo)); }},
    {"experiment", "seeds",
     [](ExperimentConfig& c, const std::string& v) { c.seeds = seeds_from_string(v); },
     [](const ExperimentConfig& c) { return seeds_to_string(c.seeds); }},
    {"experiment", "scale",
     [](ExperimentConfig& c, const std::string& v) { c.scale = parse_f64(v); },
     [](const ExperimentConfig& c) { return fmt(c.scale); }},
    {"experiment", "out",
     [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; },
     [](const ExperimentConfig& c) { return c.out_dir; }},
    {"experiment", "workers",
     [](ExperimentConfig& c, const std::string& v) { c.n_workers = static_cast<int>(parse_i64(v)); },
     [](const ExperimentConfig& c) { return std::to_string(c.n_workers); }},
    {"topology", "L",
     [](ExperimentConfig& c, const std::string& v) { c.L = static_cast<int>(parse_i64(v)); },
     [](const ExperimentConfig& c) { return std::to_string(c.L); }},
    {"topology", "M",
     [](ExperimentConfig& c, const std::string& v) { c.M = static_cast<int>(parse_i64(v)); },
     [](const ExperimentConfig& c) { return std::to_string(c.M); }},
    {"topology", "density",
     [](ExperimentConfig& c, const std::string& v) { c.density = density_from_string(v); },
     [](const ExperimentConfig& c) { return std::string(to_string(c.density)); }},
    {"topology", "distance",
     [](ExperimentConfig& c, const std::string& v) { c.distance = distance_from_string(v); },
     [](const ExperimentConfig& c) { return std::string(to_string(c.distance)); }},
    {"topology", "topology-seed",
     [](ExperimentConfig& c, const std::string& v) { c.topology_seed = std::stoull(v); },
     [](const ExperimentConfig& c) { return std::to_string(c.topology_seed); }},
    {"topology", "test-topology-seed",
     [](ExperimentConfig& c, const std::string& v) { c.test_topology_seed = std::stoull(v); },
     [](const ExperimentConfig& c) { return std::to_string(c.test_topology_seed); }},
    {"topology", "sl-test-index",
     [](ExperimentConfig& c, const std::string& v) {
         c.sl_test_topology_index = static_cast<int>(parse_i64(v));
     },
     [](const ExperimentConfig& c) { return std::to_string(c.sl_test_topology_index); }},
    {"topology", "sampling-mode",
     [](ExperimentConfig& c, const std::string& v) { c.sampling_mode = sampling_mode_from_string(v); },
     [](const ExperimentConfig& c) { return std::string(to_string(c.sampling_mode)); }},
    {"dataset", "dataset",
     [](ExperimentConfig& c, const std::string& v) { c.dataset_path = v; },
     [](const ExperimentConfig& c) { return c.dataset_path; }},
    {"dataset", "dataset-samples",
     [](ExperimentConfig& c, const std::string& v) { c.dataset_samples = parse_i64(v); },
     [](const ExperimentConfig& c) { return std::to_string(c.dataset_samples); }},
    {"dataset", "dataset-seed",
     [](ExperimentConfig& c, const std::string& v) { c.dataset_seed = std::stoull(v); },
     [](const ExperimentConfig& c) { return std::to_string(c.dataset_seed); }},
    {"channel", "channel-seed",
     [](ExperimentConfig& c, const std::string& v) { c.channel_seed = std::stoull(v); },
     [](const ExperimentConfig& c) { return std::to_string(c.channel_seed); }},
};

const char* kConfigSections[] = {"experiment", "topology", "dataset", "channel",
                                 "hyperparameters"};

std::string all_config_keys_hint() {
    std::string hint;
    const char* section = "";
    for (const ConfigKey& k : kConfigKeys) {
        if (std::string(section) != k.section) {
            section = k.section;
            hint += std::string(hint.empty() ? "" : " ") + "[" + section + "]";
        }
        hint += std::string(" ") + k.name;
    }
    hint += " [hyperparameters]";
    for (const std::string& k : hyperparameter_keys()) hint += " " + k;
    return hint;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const ConfigKey& e : kConfigKeys) k.push_back(e.name);
        for (const std::string& h : hyperparameter_keys()) k.push_back(h);
        return k;
    }();
    return keys;
}

void apply_config_kv(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    for (const ConfigKey& e : kConfigKeys) {
        if (key == e.name) {
            e.set(cfg, value);
            return;
        }
    }
    for (const std::string& h : hyperparameter_keys()) {
        if (key == h) {
            Hyperparameters probe;  // reject malformed values immediately
            apply_hp_override(probe, key, value);
            cfg.hp_overrides[key] = value;
            return;
        }
    }
    throw std::invalid_argument("unknown config key '" + key +
                                "' (valid: " + all_config_keys_hint() + ")");
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::istringstream in(read_text(path));
    ExperimentConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[' && t.back() == ']') {
            std::string section = trim(t.substr(1, t.size() - 2));
            bool known = false;
            for (const char* s : kConfigSections) known = known || section == s;
            if (!known) {
                throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                            ": unknown section [" + section +
                                            "] (valid: experiment, topology, dataset, channel, "
                                            "hyperparameters)");
            }
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                        ": expected key = value, got '" + t + "'");
        }
        try {
            apply_config_kv(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
        } catch (const std::exception& e) {
            throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

void save_experiment_config(const ExperimentConfig& cfg, const std::string& path) {
    std::ostringstream out;
    const char* section = "";
    for (const ConfigKey& k : kConfigKeys) {
        if (std::string(section) != k.section) {
            section = k.section;
            out << (out.tellp() > 0 ? "\n" : "") << "[" << section << "]\n";
        }
        out << k.name << " = " << k.get(cfg) << "\n";
    }
    if (!cfg.hp_overrides.empty()) {
        out << "\n[hyperparameters]\n";
        for (const auto& [k, v] : cfg.hp_overrides) out << k << " = " << v << "\n";
    }
    write_text(path, out.str());
}

Hyperparameters resolve_hyperparameters(const ExperimentConfig& cfg) {
    Hyperparameters hp = default_hyperparameters(cfg.algo, cfg.task);
    const int64_t base = hp.training_episodes;
    const double anneal_ratio =
        static_cast<double>(hp.anneal_episodes) / static_cast<double>(base);
    hp.training_episodes = scaled_episodes(base, cfg.scale);
    hp.anneal_episodes = std::llround(anneal_ratio * static_cast<double>(hp.training_episodes));
    // A full-budget warmup would eat a tiny run whole; cap it at a fifth of
    // the scaled transition budget.
    const int64_t horizon = task_default_horizon(cfg.task);
    hp.warmup_transitions =
        std::min(hp.warmup_transitions, std::max<int64_t>(1, horizon * hp.training_episodes / 5));
    for (const auto& [key, value] : cfg.hp_overrides) apply_hp_override(hp, key, value);
    return hp;
}

uint64_t topology_fingerprint(const TopologySnapshot& snapshot) {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the persisted fields
    auto mix = [&h](uint64_t v) {
        for (int k = 0; k < 8; ++k) {
            h ^= (v >> (8 * k)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    };
    auto mix_f = [&](double d) {
        uint64_t bits;
        static_assert(sizeof(bits) == sizeof(d));
        std::memcpy(&bits, &d, sizeof(bits));
        mix(bits);
    };
    mix(static_cast<uint64_t>(snapshot.L));
    mix(static_cast<uint64_t>(snapshot.M));
    mix_f(snapshot.bs_x);
    mix_f(snapshot.bs_y);
    mix_f(snapshot.lane_width);
    for (const Vehicle& v : snapshot.vehicles) {
        mix(static_cast<uint64_t>(v.id));
        mix_f(v.x);
        mix(static_cast<uint64_t>(v.lane));
        mix(static_cast<uint64_t>(static_cast<int>(v.role)));
        mix(static_cast<uint64_t>(v.link));
    }
    return h;
}

NormalizationBounds compute_bounds(Task task, const TopologySnapshot& topo, uint64_t channel_seed,
                                   int random_episodes) {
    if (random_episodes <= 0) throw std::invalid_argument("random_episodes must be positive");
    const uint64_t fp = topology_fingerprint(topo);
    TopologySource source = TopologySource::fixed(topo);

    // The lower anchor averages random play on the task's own environment.
    EnvConfig lo_cfg = make_env_config(task, derive_seed(derive_seed(channel_seed, fp), 0x10));
    lo_cfg.channel_seed = channel_seed;
    Env lo_env(lo_cfg, source);
    Rng lo_rng(derive_seed(derive_seed(channel_seed, fp), 0x11));
    NormalizationBounds bounds;
    bounds.g_min = random_policy_return(lo_env, random_episodes, lo_rng);

    // The upper anchor is oracle play without fast fading: the exhaustive
    // best joint action for the one-shot task, the per-step oracle return for
    // the sequential ones. Fading-on tasks reuse the fading-off anchor.
    if (task == Task::NFIG) {
        Env hi_env(lo_cfg, source);
        hi_env.reset();
        if (topo.L <= kMaxExhaustiveAgents) {
            bounds.g_max = exhaustive_best_joint_action(hi_env.realization(), lo_cfg.channel,
                                                        lo_cfg.reward)
                               .value;
        } else {
            PayoffFn fn = nfig_payoff(hi_env.realization(), lo_cfg.channel, lo_cfg.reward);
            const int P = static_cast<int>(lo_cfg.channel.power_levels_dbm.size());
            JointAction joint = greedy_iterative_assignment(topo.L, topo.M, P, fn);
            bounds.g_max = fn(joint);
        }
    } else {
        EnvConfig hi_cfg = make_env_config(Task::SIG_SL_NFF,
                                           derive_seed(derive_seed(channel_seed, fp), 0x12));
        hi_cfg.channel_seed = channel_seed;
        Env hi_env(hi_cfg, source);
        bounds.g_max = sig_sl_oracle_return(hi_env);
    }
    return bounds;
}

NormalizationBounds BoundsCache::get(Task task, const TopologySnapshot& topo,
                                     uint64_t channel_seed) {
    const auto key = std::make_tuple(static_cast<int>(task), channel_seed,
                                     topology_fingerprint(topo));
    {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = memo_.find(key);
        if (it != memo_.end()) return it->second;
    }
    NormalizationBounds bounds = compute_bounds(task, topo, channel_seed);
    std::lock_guard<std::mutex> lock(mu_);
    return memo_.emplace(key, bounds).first->second;
}

std::string task_dir_name(Task t) {
    std::string s = to_string(t);
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string run_dir_for(const ExperimentConfig& cfg, uint64_t seed) {
    return cfg.out_dir + "/" + task_dir_name(cfg.task) + "/" + to_string(cfg.algo) + "/" +
           std::to_string(seed);
}

TopologySnapshot training_topology(const ExperimentConfig& cfg) {
    if (cfg.sl_test_topology_index >= 0) {
        std::vector<TopologySnapshot> grid = evaluation_topologies(cfg);
        if (cfg.sl_test_topology_index >= static_cast<int>(grid.size())) {
            throw std::invalid_argument("sl_test_topology_index out of range");
        }
        return grid[cfg.sl_test_topology_index];
    }
    HighwayConfig hw = highway_config_for(cfg.density);
    return generate_initial_topology(hw, cfg.L, cfg.M, cfg.distance, cfg.topology_seed);
}

std::vector<TopologySnapshot> evaluation_topologies(const ExperimentConfig& cfg) {
    return test_topologies(HighwayConfig{}, cfg.L, cfg.M, cfg.test_topology_seed);
}

EnvConfig experiment_env_config(const ExperimentConfig& cfg, uint64_t run_seed) {
    EnvConfig env = make_env_config(cfg.task, derive_seed(run_seed, 0x5EED0E07));
    env.channel_seed = cfg.channel_seed;
    env.sampling_mode = cfg.sampling_mode;
    return env;
}

std::string default_dataset_path(const ExperimentConfig& cfg) {
    return cfg.out_dir + "/datasets/train_L" + std::to_string(cfg.L) + "_M" +
           std::to_string(cfg.M) + "_n" + std::to_string(cfg.dataset_samples) + "_s" +
           std::to_string(cfg.dataset_seed) + ".csv";
}

std::shared_ptr<const Dataset> ensure_dataset(const ExperimentConfig& cfg) {
    std::string path = cfg.dataset_path.empty() ? default_dataset_path(cfg) : cfg.dataset_path;
    if (fs::exists(path)) {
        return std::make_shared<Dataset>(load_dataset(path));
    }
    std::fprintf(stderr, "[harness] dataset %s missing, generating %lld samples\n", path.c_str(),
                 static_cast<long long>(cfg.dataset_samples));
    DatasetSpec spec;
    spec.n_samples = cfg.dataset_samples;
    spec.sampling_mode = cfg.sampling_mode;
    spec.seed = cfg.dataset_seed;
    auto dataset = std::make_shared<Dataset>(generate_dataset(HighwayConfig{}, cfg.L, cfg.M, spec));
    fs::create_directories(fs::path(path).parent_path());
    save_dataset(*dataset, path);
    return dataset;
}

TrainerConfig build_trainer_config(const ExperimentConfig& cfg, uint64_t seed,
                                   BoundsCache* cache) {
    BoundsCache local;
    BoundsCache& bc = cache ? *cache : local;

    TrainerConfig tc;
    tc.task = cfg.task;
    tc.algo = cfg.algo;
    tc.hp = resolve_hyperparameters(cfg);
    tc.env = experiment_env_config(cfg, seed);
    tc.seed = seed;
    if (task_is_multi_topology(cfg.task)) {
        tc.train_source = TopologySource::from_dataset(ensure_dataset(cfg), cfg.sampling_mode);
        tc.eval_topologies = evaluation_topologies(cfg);
        tc.eval_episodes = static_cast<int>(tc.eval_topologies.size());
        for (const TopologySnapshot& topo : tc.eval_topologies) {
            tc.bounds.push_back(bc.get(cfg.task, topo, cfg.channel_seed));
        }
    } else {
        TopologySnapshot topo = training_topology(cfg);
        tc.train_source = TopologySource::fixed(topo);
        tc.bounds = {bc.get(cfg.task, topo, cfg.channel_seed)};
    }
    return tc;
}

EvaluationRecord evaluate_policy(const Policy& policy, Env& env,
                                 const std::vector<TopologySnapshot>& topologies,
                                 const std::vector<NormalizationBounds>& bounds,
                                 int n_episodes) {
    const int episodes = topologies.empty() ? n_episodes : static_cast<int>(topologies.size());
    if (episodes <= 0) throw std::invalid_argument("need at least one evaluation episode");
    if (bounds.size() > 1 && static_cast<int>(bounds.size()) != episodes) {
        throw std::invalid_argument("bounds must be shared or per episode");
    }
    EvaluationRecord rec;
    for (int k = 0; k < episodes; ++k) {
        if (topologies.empty()) {
            env.reset();
        } else {
            env.reset_to(topologies[k]);
        }
        double total = 0.0;
        while (!env.done()) total += env.step(policy(env)).reward;
        rec.episode_returns.push_back(total);
    }
    double sum = 0.0;
    double norm = 0.0;
    for (int k = 0; k < episodes; ++k) {
        sum += rec.episode_returns[k];
        if (!bounds.empty()) {
            norm += normalize_return(rec.episode_returns[k],
                                     bounds[bounds.size() == 1 ? 0 : k]);
        }
    }
    rec.mean_return = sum / episodes;
    rec.normalized_return =
        bounds.empty() ? std::numeric_limits<double>::quiet_NaN() : norm / episodes;
    return rec;
}

namespace {

json hp_to_json(const Hyperparameters& hp) {
    return json{{"hidden", hp.hidden},
                {"gamma", hp.gamma},
                {"grad_clip", hp.grad_clip},
                {"lr", hp.lr},
                {"mixer_lr", hp.mixer_lr},
                {"hyst_alpha", hp.hyst_alpha},
                {"hyst_beta", hp.hyst_beta},
                {"tau", hp.tau},
                {"replay_capacity", hp.replay_capacity},
                {"warmup_transitions", hp.warmup_transitions},
                {"qmix_embed", hp.qmix_embed},
                {"actor_lr", hp.actor_lr},
                {"critic_lr", hp.critic_lr},
                {"ppo_epochs", hp.ppo_epochs},
                {"ppo_minibatches", hp.ppo_minibatches},
                {"clip_ratio", hp.clip_ratio},
                {"entropy_coef", hp.entropy_coef},
                {"parameter_sharing", hp.parameter_sharing},
                {"batch_size", hp.batch_size},
                {"training_episodes", hp.training_episodes},
                {"anneal_episodes", hp.anneal_episodes},
                {"eps_start", hp.eps_start},
                {"eps_end", hp.eps_end}};
}

json config_to_json(const ExperimentConfig& cfg) {
    json j{{"task", task_dir_name(cfg.task)},
           {"algo", to_string(cfg.algo)},
           {"L", cfg.L},
           {"M", cfg.M},
           {"seeds", cfg.seeds},
           {"scale", cfg.scale},
           {"out_dir", cfg.out_dir},
           {"dataset_path", cfg.dataset_path},
           {"dataset_samples", cfg.dataset_samples},
           {"dataset_seed", cfg.dataset_seed},
           {"topology_seed", cfg.topology_seed},
           {"test_topology_seed", cfg.test_topology_seed},
           {"channel_seed", cfg.channel_seed},
           {"sl_test_topology_index", cfg.sl_test_topology_index},
           {"density", to_string(cfg.density)},
           {"distance", to_string(cfg.distance)},
           {"sampling_mode", to_string(cfg.sampling_mode)},
           {"n_workers", cfg.n_workers}};
    json overrides = json::object();
    for (const auto& [k, v] : cfg.hp_overrides) overrides[k] = v;
    j["hp_overrides"] = overrides;
    return j;
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig cfg;
    cfg.task = task_from_string(j.at("task").get<std::string>());
    cfg.algo = algo_from_string(j.at("algo").get<std::string>());
    cfg.L = j.at("L").get<int>();
    cfg.M = j.at("M").get<int>();
    cfg.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    cfg.scale = j.at("scale").get<double>();
    cfg.out_dir = j.at("out_dir").get<std::string>();
    cfg.dataset_path = j.at("dataset_path").get<std::string>();
    cfg.dataset_samples = j.at("dataset_samples").get<int64_t>();
    cfg.dataset_seed = j.at("dataset_seed").get<uint64_t>();
    cfg.topology_seed = j.at("topology_seed").get<uint64_t>();
    cfg.test_topology_seed = j.at("test_topology_seed").get<uint64_t>();
    cfg.channel_seed = j.at("channel_seed").get<uint64_t>();
    cfg.sl_test_topology_index = j.at("sl_test_topology_index").get<int>();
    cfg.density = density_from_string(j.at("density").get<std::string>());
    cfg.distance = distance_from_string(j.at("distance").get<std::string>());
    cfg.sampling_mode = sampling_mode_from_string(j.at("sampling_mode").get<std::string>());
    cfg.n_workers = j.at("n_workers").get<int>();
    for (const auto& [k, v] : j.at("hp_overrides").items()) {
        cfg.hp_overrides[k] = v.get<std::string>();
    }
    return cfg;
}

void write_manifest(const std::string& run_dir, const ExperimentConfig& cfg,
                    const TrainerConfig& tc, const RunOutcome& out) {
    json j;
    j["schema_version"] = 1;
    j["status"] = out.status;
    if (!out.error.empty()) j["error"] = out.error;
    j["seed"] = out.seed;
    j["config"] = config_to_json(cfg);
    j["hyperparameters"] = hp_to_json(tc.hp);
    j["env_seed"] = tc.env.seed;
    j["channel_seed"] = tc.env.channel_seed;
    j["n_evals"] = tc.n_evals;
    j["eval_episodes"] = tc.eval_episodes;
    json bounds = json::array();
    for (const NormalizationBounds& b : tc.bounds) {
        bounds.push_back(json{{"g_min", b.g_min}, {"g_max", b.g_max}});
    }
    j["bounds"] = bounds;
    j["episodes_run"] = out.log.episodes_run;
    j["evals_recorded"] = out.log.evals.size();
    write_text(run_dir + "/manifest.json", j.dump(2) + "\n");
}

void write_log_csv(const std::string& run_dir, const TrainLog& log, int eval_episodes) {
    std::ostringstream out;
    out << "eval_index,episodes_done,mean_return,normalized_return";
    for (int k = 0; k < eval_episodes; ++k) out << ",ret_" << k;
    out << "\n";
    for (const EvalRecord& rec : log.evals) {
        out << rec.eval_index << "," << rec.episodes_done << "," << fmt(rec.mean_return) << ","
            << fmt(rec.normalized_return);
        for (double r : rec.episode_returns) out << "," << fmt(r);
        out << "\n";
    }
    write_text(run_dir + "/log.csv", out.str());
}

}  // namespace

int ExperimentResult::completed() const {
    int n = 0;
    for (const RunOutcome& r : runs) n += r.status == "completed";
    return n;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    if (cfg.seeds.empty()) throw std::invalid_argument("need at least one seed");
    for (size_t i = 0; i < cfg.seeds.size(); ++i) {
        for (size_t k = i + 1; k < cfg.seeds.size(); ++k) {
            if (cfg.seeds[i] == cfg.seeds[k]) throw std::invalid_argument("duplicate seed");
        }
    }

    ExperimentResult result;
    result.experiment_dir =
        cfg.out_dir + "/" + task_dir_name(cfg.task) + "/" + to_string(cfg.algo);
    fs::create_directories(result.experiment_dir);
    result.runs.resize(cfg.seeds.size());

    // Shared, computed up front: dataset, topologies, bounds. Worker threads
    // only ever read these.
    BoundsCache cache;
    if (task_is_multi_topology(cfg.task)) ensure_dataset(cfg);
    build_trainer_config(cfg, cfg.seeds[0], &cache);

    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const size_t idx = next.fetch_add(1);
            if (idx >= cfg.seeds.size()) return;
            const uint64_t seed = cfg.seeds[idx];
            RunOutcome& out = result.runs[idx];
            out.seed = seed;
            out.run_dir = run_dir_for(cfg, seed);
            try {
                fs::create_directories(out.run_dir);
                TrainerConfig tc = build_trainer_config(cfg, seed, &cache);
                out.status = "running";
                write_manifest(out.run_dir, cfg, tc, out);
                ExperimentConfig solo = cfg;
                solo.seeds = {seed};
                save_experiment_config(solo, out.run_dir + "/config.cfg");
                Trainer trainer(tc);
                out.log = trainer.train();
                write_log_csv(out.run_dir, out.log, tc.eval_episodes);
                trainer.save_checkpoint(out.run_dir + "/checkpoints/final");
                out.status = out.log.aborted ? "aborted" : "completed";
                out.error = out.log.abort_reason;
                write_manifest(out.run_dir, cfg, tc, out);
            } catch (const std::exception& e) {
                out.status = "failed";
                out.error = e.what();
                std::fprintf(stderr, "[harness] seed %llu failed: %s\n",
                             static_cast<unsigned long long>(seed), e.what());
                try {
                    TrainerConfig tc = build_trainer_config(cfg, seed, &cache);
                    write_manifest(out.run_dir, cfg, tc, out);
                } catch (...) {
                }
            }
        }
    };

    const int n_workers =
        std::max(1, std::min(cfg.n_workers, static_cast<int>(cfg.seeds.size())));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    json manifest;
    manifest["schema_version"] = 1;
    manifest["config"] = config_to_json(cfg);
    json runs = json::array();
    for (const RunOutcome& out : result.runs) {
        json r{{"seed", out.seed}, {"status", out.status}, {"dir", out.run_dir}};
        if (!out.error.empty()) r["error"] = out.error;
        runs.push_back(r);
    }
    manifest["runs"] = runs;
    write_text(result.experiment_dir + "/manifest.json", manifest.dump(2) + "\n");
    return result;
}

ExperimentConfig manifest_config(const std::string& run_dir, uint64_t* seed_out) {
    json j = json::parse(read_text(run_dir + "/manifest.json"));
    if (seed_out) *seed_out = j.at("seed").get<uint64_t>();
    return config_from_json(j.at("config"));
}

ResultTable aggregate(const std::vector<std::string>& run_dirs) {
    if (run_dirs.empty()) throw std::invalid_argument("no run directories given");

    struct SeedCurve {
        uint64_t seed;
        std::vector<double> normalized;
    };
    std::map<std::pair<std::string, std::string>, std::vector<SeedCurve>> cells;

    int usable = 0;
    for (const std::string& dir : run_dirs) {
        json j = json::parse(read_text(dir + "/manifest.json"));
        const std::string status = j.at("status").get<std::string>();
        if (status != "completed") {
            std::fprintf(stderr, "[harness] skipping %s (status %s)\n", dir.c_str(),
                         status.c_str());
            continue;
        }
        SeedCurve curve;
        curve.seed = j.at("seed").get<uint64_t>();
        std::istringstream log(read_text(dir + "/log.csv"));
        std::string line;
        std::getline(log, line);  // header
        std::vector<std::string> header = split(line, ',');
        size_t norm_col = 0;
        for (; norm_col < header.size(); ++norm_col) {
            if (header[norm_col] == "normalized_return") break;
        }
        if (norm_col == header.size()) {
            throw std::runtime_error(dir + "/log.csv has no normalized_return column");
        }
        while (std::getline(log, line)) {
            if (line.empty()) continue;
            std::vector<std::string> cols = split(line, ',');
            curve.normalized.push_back(std::stod(cols.at(norm_col)));
        }
        const json& cj = j.at("config");
        cells[{cj.at("task").get<std::string>(), cj.at("algo").get<std::string>()}].push_back(
            std::move(curve));
        ++usable;
    }
    if (usable == 0) throw std::runtime_error("no completed runs among the given directories");

    ResultTable table;
    for (auto& [key, curves] : cells) {
        std::sort(curves.begin(), curves.end(),
                  [](const SeedCurve& a, const SeedCurve& b) { return a.seed < b.seed; });
        ResultCell cell;
        cell.task = task_from_string(key.first);
        cell.algo = algo_from_string(key.second);
        cell.n_evals = static_cast<int>(curves.front().normalized.size());
        for (const SeedCurve& c : curves) {
            if (static_cast<int>(c.normalized.size()) != cell.n_evals) {
                throw std::runtime_error("mismatched eval counts in cell " + key.first + "/" +
                                         key.second);
            }
            cell.seeds.push_back(c.seed);
            cell.per_seed_normalized.push_back(c.normalized);
        }
        const int n = static_cast<int>(curves.size());
        for (int i = 0; i < cell.n_evals; ++i) {
            double mean = 0.0;
            for (const SeedCurve& c : curves) mean += c.normalized[i];
            mean /= n;
            if (cell.best_eval_index < 0 || mean > cell.max_mean) {
                cell.max_mean = mean;
                cell.best_eval_index = i;
            }
        }
        if (n > 1) {
            double var = 0.0;
            for (const SeedCurve& c : curves) {
                const double d = c.normalized[cell.best_eval_index] - cell.max_mean;
                var += d * d;
            }
            cell.ci95 = 1.96 * std::sqrt(var / (n - 1)) / std::sqrt(static_cast<double>(n));
        }
        table.cells.push_back(std::move(cell));
    }
    return table;
}

namespace {

std::string seeds_field(const std::vector<uint64_t>& seeds) {
    std::string s;
    for (uint64_t v : seeds) {
        if (!s.empty()) s += ';';
        s += std::to_string(v);
    }
    return s;
}

}  // namespace

void report_csv(const ResultTable& table, const std::string& path) {
    std::ostringstream out;
    out << "task,algorithm,seeds,n_evals,best_eval_index,max_mean,ci95,display\n";
    for (const ResultCell& c : table.cells) {
        char display[48];
        std::snprintf(display, sizeof(display), "%.2f +/- %.2f", c.max_mean, c.ci95);
        out << task_dir_name(c.task) << "," << to_string(c.algo) << "," << seeds_field(c.seeds)
            << "," << c.n_evals << "," << c.best_eval_index << "," << fmt(c.max_mean) << ","
            << fmt(c.ci95) << "," << display << "\n";
    }
    write_text(path, out.str());
}

void report_json(const ResultTable& table, const std::string& path) {
    json cells = json::array();
    for (const ResultCell& c : table.cells) {
        cells.push_back(json{{"task", task_dir_name(c.task)},
                             {"algorithm", to_string(c.algo)},
                             {"seeds", c.seeds},
                             {"n_evals", c.n_evals},
                             {"best_eval_index", c.best_eval_index},
                             {"max_mean", c.max_mean},
                             {"ci95", c.ci95}});
    }
    json j{{"schema_version", 1}, {"cells", cells}};
    write_text(path, j.dump(2) + "\n");
}

void report_plot_data(const ResultTable& table, const std::string& path) {
    std::ostringstream out;
    out << "task,algorithm,seed,eval_index,normalized_return\n";
    for (const ResultCell& c : table.cells) {
        for (size_t s = 0; s < c.per_seed_normalized.size(); ++s) {
            for (int i = 0; i < c.n_evals; ++i) {
                out << task_dir_name(c.task) << "," << to_string(c.algo) << "," << c.seeds[s]
                    << "," << i << "," << fmt(c.per_seed_normalized[s][i]) << "\n";
            }
        }
    }
    write_text(path, out.str());
}

ResultTable parse_result_csv(const std::string& path) {
    std::istringstream in(read_text(path));
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty results csv " + path);
    const std::string expect = "task,algorithm,seeds,n_evals,best_eval_index,max_mean,ci95,display";
    if (line != expect) throw std::runtime_error("unexpected results csv header: " + line);
    ResultTable table;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols = split(line, ',');
        if (cols.size() != 8) throw std::runtime_error("bad results csv row: " + line);
        ResultCell cell;
        cell.task = task_from_string(cols[0]);
        cell.algo = algo_from_string(cols[1]);
        for (const std::string& s : split(cols[2], ';')) {
            if (!s.empty()) cell.seeds.push_back(std::stoull(s));
        }
        cell.n_evals = std::stoi(cols[3]);
        cell.best_eval_index = std::stoi(cols[4]);
        cell.max_mean = std::stod(cols[5]);
        cell.ci95 = std::stod(cols[6]);
        table.cells.push_back(std::move(cell));
    }
    return table;
}

TopologyCds cds_for_topology(const ExperimentConfig& cfg, const TopologySnapshot& topo,
                             int index) {
    if (topo.L > kMaxExhaustiveAgents) {
        throw std::invalid_argument("difficulty scores need exhaustive enumeration (L <= 4)");
    }
    EnvConfig env_cfg = make_env_config(Task::NFIG, derive_seed(cfg.channel_seed, 0xCD5));
    env_cfg.channel_seed = cfg.channel_seed;
    TopologySource source = TopologySource::fixed(topo);
    Env env(env_cfg, source);
    env.reset();
    PayoffFn fn = nfig_payoff(env.realization(), env_cfg.channel, env_cfg.reward);
    const int P = static_cast<int>(env_cfg.channel.power_levels_dbm.size());
    PayoffTensor tensor = build_payoff_tensor(topo.L, topo.M, P, fn);
    EquilibriumSet eq = enumerate_pure_nash(tensor);
    TopologyCds entry;
    entry.index = index;
    entry.fingerprint = topology_fingerprint(topo);
    entry.bounds = compute_bounds(Task::NFIG, topo, cfg.channel_seed);
    entry.report = coordination_difficulty_score(eq, entry.bounds);
    return entry;
}

std::vector<TopologyCds> cds_over_test_grid(const ExperimentConfig& cfg) {
    std::vector<TopologySnapshot> grid = evaluation_topologies(cfg);
    std::vector<TopologyCds> out;
    for (size_t i = 0; i < grid.size(); ++i) {
        out.push_back(cds_for_topology(cfg, grid[i], static_cast<int>(i)));
    }
    return out;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw std::invalid_argument("spearman needs two equal-length vectors of size >= 2");
    }
    auto ranks = [](const std::vector<double>& v) {
        const int n = static_cast<int>(v.size());
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int x, int y) { return v[x] < v[y]; });
        std::vector<double> r(n);
        int i = 0;
        while (i < n) {
            int j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = 0.5 * (i + j) + 1.0;  // average rank for the tie block
            for (int k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    std::vector<double> ra = ranks(a);
    std::vector<double> rb = ranks(b);
    const int n = static_cast<int>(a.size());
    double ma = 0.0, mb = 0.0;
    for (int i = 0; i < n; ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double num = 0.0, da = 0.0, db = 0.0;
    for (int i = 0; i < n; ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    if (da == 0.0 || db == 0.0) throw std::invalid_argument("spearman undefined for constant ranks");
    return num / std::sqrt(da * db);
}

}  // namespace v2x
