#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "v2x/harness.hpp"

using nlohmann::json;
using namespace v2x;

namespace {

std::string one_line(std::string s) {
    for (char& c : s) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

// Every experiment-flavored subcommand shares the same flags; values are kept
// as text and funneled through apply_config_kv so a --config file and explicit
// flags resolve identically (flags win).
class ExpFlags {
public:
    void add_to(CLI::App& cmd) {
        cmd.add_option("--config", config_path_, "config file (key = value under [sections])")
            ->check(CLI::ExistingFile);
        add(cmd, "--task", "task", "task: nfig, sig_sl_nff, sig_sl_ff, sig_ml, posig");
        add(cmd, "--algo", "algo",
            "algorithm: idqn, hys-idqn, vdn, qmix, ia2c, maa2c, ippo, mappo");
        seeds_opt_ = cmd.add_option("--seed", seeds_, "training seed(s), repeatable");
        add(cmd, "--scale", "scale", "fraction of the full episode budget (default 0.02)");
        add(cmd, "--out", "out", "output root directory (default out)");
        add(cmd, "-L,--links", "L", "number of V2V links (default 4)");
        add(cmd, "-M,--subchannels", "M", "number of V2I subchannels (default 4)");
        add(cmd, "--density", "density", "vehicle density: 35, 123, 500");
        add(cmd, "--distance", "distance", "V2V distance level: close, mid, far");
        add(cmd, "--topology-seed", "topology-seed", "single-layout training topology seed");
        add(cmd, "--test-topology-seed", "test-topology-seed", "evaluation grid seed");
        add(cmd, "--sl-test-index", "sl-test-index",
            "pin single-layout training to this test-grid entry (0..8)");
        add(cmd, "--channel-seed", "channel-seed", "shadowing seed");
        add(cmd, "--sampling-mode", "sampling-mode",
            "dataset sampling: random, consecutive, consecutive-batches-of-10");
        add(cmd, "--dataset", "dataset", "training dataset CSV path");
        add(cmd, "--samples,--dataset-samples", "dataset-samples",
            "dataset size when generating (default 15000)");
        add(cmd, "--dataset-seed", "dataset-seed", "dataset generation seed");
        add(cmd, "--workers", "workers", "parallel seed runs (default 1)");
        hp_opt_ = cmd.add_option("--hp", hp_, "hyperparameter override key=value, repeatable");
    }

    ExperimentConfig resolve() const {
        ExperimentConfig cfg;
        if (!config_path_.empty()) cfg = load_experiment_config(config_path_);
        for (const Binding& b : bindings_) {
            if (b.opt->count() > 0) apply_config_kv(cfg, b.key, *b.value);
        }
        if (seeds_opt_->count() > 0) {
            std::string joined;
            for (const std::string& s : seeds_) joined += (joined.empty() ? "" : ",") + s;
            apply_config_kv(cfg, "seeds", joined);
        }
        for (const std::string& entry : hp_) {
            size_t eq = entry.find('=');
            if (eq == std::string::npos) {
                throw std::invalid_argument("--hp expects key=value, got '" + entry + "'");
            }
            apply_config_kv(cfg, entry.substr(0, eq), entry.substr(eq + 1));
        }
        return cfg;
    }

    bool given(const std::string& key) const {
        if (key == "seeds") return seeds_opt_->count() > 0;
        for (const Binding& b : bindings_) {
            if (key == b.key) return b.opt->count() > 0;
        }
        return false;
    }

private:
    struct Binding {
        std::string key;
        std::string* value;
        CLI::Option* opt;
    };

    void add(CLI::App& cmd, const std::string& flag, const std::string& key,
             const std::string& help) {
        values_.push_back(std::make_unique<std::string>());
        CLI::Option* opt = cmd.add_option(flag, *values_.back(), help);
        bindings_.push_back({key, values_.back().get(), opt});
    }

    std::string config_path_;
    std::vector<std::string> seeds_;
    std::vector<std::string> hp_;
    std::vector<std::unique_ptr<std::string>> values_;
    std::vector<Binding> bindings_;
    CLI::Option* seeds_opt_ = nullptr;
    CLI::Option* hp_opt_ = nullptr;
};

std::string hex(uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

int run_train(const ExpFlags& flags) {
    ExperimentConfig cfg = flags.resolve();
    ExperimentResult result = run_experiment(cfg);
    for (const RunOutcome& out : result.runs) {
        std::printf("%s  %s%s%s\n", out.run_dir.c_str(), out.status.c_str(),
                    out.error.empty() ? "" : ": ", out.error.c_str());
    }
    std::printf("completed %d/%zu runs under %s\n", result.completed(), result.runs.size(),
                result.experiment_dir.c_str());
    return result.completed() == static_cast<int>(result.runs.size()) ? 0 : 3;
}

int run_gen_data(const ExpFlags& flags, bool force) {
    ExperimentConfig cfg = flags.resolve();
    if (flags.given("seeds") && !flags.given("dataset-seed")) cfg.dataset_seed = cfg.seeds.at(0);
    std::string path = cfg.dataset_path.empty() ? default_dataset_path(cfg) : cfg.dataset_path;
    if (force) std::filesystem::remove(path);
    cfg.dataset_path = path;
    std::shared_ptr<const Dataset> dataset = ensure_dataset(cfg);
    std::printf("%s: %zu samples (L=%d, M=%d)\n", path.c_str(), dataset->samples.size(),
                dataset->L, dataset->M);
    return 0;
}

int run_oracle(const ExpFlags& flags) {
    ExperimentConfig cfg = flags.resolve();
    std::vector<TopologySnapshot> grid = evaluation_topologies(cfg);
    json bounds = json::array();
    BoundsCache cache;
    for (size_t i = 0; i < grid.size(); ++i) {
        NormalizationBounds b = cache.get(cfg.task, grid[i], cfg.channel_seed);
        bounds.push_back(json{{"index", i},
                              {"fingerprint", hex(topology_fingerprint(grid[i]))},
                              {"g_min", b.g_min},
                              {"g_max", b.g_max}});
    }
    json j{{"task", task_dir_name(cfg.task)},
           {"L", cfg.L},
           {"M", cfg.M},
           {"channel_seed", cfg.channel_seed},
           {"test_topology_seed", cfg.test_topology_seed},
           {"bounds", bounds}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

int run_cds(const ExpFlags& flags, const std::string& topology_set) {
    ExperimentConfig cfg = flags.resolve();
    std::vector<TopologyCds> entries;
    if (topology_set == "test") {
        entries = cds_over_test_grid(cfg);
    } else {
        entries = {cds_for_topology(cfg, training_topology(cfg), 0)};
    }
    json reports = json::array();
    for (const TopologyCds& e : entries) {
        reports.push_back(json{{"index", e.index},
                               {"fingerprint", hex(e.fingerprint)},
                               {"d", e.report.d},
                               {"equilibrium_count", e.report.equilibrium_count},
                               {"g_ne_max", e.report.g_ne_max},
                               {"g_ne_min", e.report.g_ne_min},
                               {"g_ne_mean", e.report.g_ne_mean},
                               {"g_min", e.bounds.g_min},
                               {"g_max", e.bounds.g_max}});
    }
    json j{{"topology_set", topology_set},
           {"L", cfg.L},
           {"M", cfg.M},
           {"channel_seed", cfg.channel_seed},
           {"reports", reports}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

int run_evaluate(const std::string& run_dir, int eval_index) {
    uint64_t seed = 0;
    ExperimentConfig cfg = manifest_config(run_dir, &seed);
    TrainerConfig tc = build_trainer_config(cfg, seed);
    Trainer trainer(tc);
    trainer.load_checkpoint(run_dir + "/checkpoints/final");
    EvalRecord rec = trainer.evaluate(eval_index);
    json j{{"seed", seed},
           {"eval_index", rec.eval_index},
           {"episode_returns", rec.episode_returns},
           {"mean_return", rec.mean_return},
           {"normalized_return", rec.normalized_return}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

std::vector<std::string> collect_dirs(const std::vector<std::string>& dirs) {
    if (dirs.empty()) throw std::invalid_argument("no run directories given");
    return dirs;
}

int run_aggregate(const std::vector<std::string>& dirs, const std::string& out) {
    ResultTable table = aggregate(collect_dirs(dirs));
    std::filesystem::create_directories(out);
    report_csv(table, out + "/results.csv");
    report_json(table, out + "/results.json");
    for (const ResultCell& c : table.cells) {
        std::printf("%-12s %-9s %zu seeds  best@%-3d  %.2f +/- %.2f\n",
                    task_dir_name(c.task).c_str(), to_string(c.algo),
                    c.seeds.size(), c.best_eval_index, c.max_mean, c.ci95);
    }
    std::printf("wrote %s/results.csv and %s/results.json\n", out.c_str(), out.c_str());
    return 0;
}

int run_report(const std::vector<std::string>& dirs, const std::string& format,
               const std::string& out) {
    ResultTable table = aggregate(collect_dirs(dirs));
    std::filesystem::create_directories(out);
    std::string path;
    if (format == "csv") {
        path = out + "/results.csv";
        report_csv(table, path);
    } else if (format == "json") {
        path = out + "/results.json";
        report_json(table, path);
    } else if (format == "plot-data") {
        path = out + "/plot_data.csv";
        report_plot_data(table, path);
    } else {
        throw std::invalid_argument("unknown format '" + format +
                                    "' (valid: csv, json, plot-data)");
    }
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"V2X spectrum-sharing multi-agent RL benchmark"};
    app.require_subcommand(1);
    int rc = 0;

    CLI::App* train = app.add_subcommand("train", "train one (task, algorithm) over seeds");
    auto train_flags = std::make_shared<ExpFlags>();
    train_flags->add_to(*train);
    train->callback([&rc, train_flags] { rc = run_train(*train_flags); });

    CLI::App* gen = app.add_subcommand("gen-data", "generate a mobility dataset CSV");
    auto gen_flags = std::make_shared<ExpFlags>();
    gen_flags->add_to(*gen);
    auto gen_force = std::make_shared<bool>(false);
    gen->add_flag("--force", *gen_force, "regenerate even if the file exists");
    gen->callback([&rc, gen_flags, gen_force] { rc = run_gen_data(*gen_flags, *gen_force); });

    CLI::App* oracle =
        app.add_subcommand("oracle", "emit normalization bounds over the evaluation grid");
    auto oracle_flags = std::make_shared<ExpFlags>();
    oracle_flags->add_to(*oracle);
    oracle->callback([&rc, oracle_flags] { rc = run_oracle(*oracle_flags); });

    CLI::App* cds = app.add_subcommand("cds", "emit coordination difficulty scores");
    auto cds_flags = std::make_shared<ExpFlags>();
    cds_flags->add_to(*cds);
    auto cds_set = std::make_shared<std::string>("test");
    cds->add_option("--topology-set", *cds_set, "test (3x3 grid) or train (training topology)")
        ->check(CLI::IsMember({"test", "train"}));
    cds->callback([&rc, cds_flags, cds_set] { rc = run_cds(*cds_flags, *cds_set); });

    CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate a saved checkpoint");
    auto eval_run = std::make_shared<std::string>();
    auto eval_index = std::make_shared<int>(0);
    evaluate->add_option("--run", *eval_run, "run directory (out/<task>/<algo>/<seed>)")
        ->required()
        ->check(CLI::ExistingDirectory);
    evaluate->add_option("--eval-index", *eval_index, "evaluation stream index (default 0)");
    // uniform flags; the run's manifest pins everything that matters here
    auto eval_sink = std::make_shared<std::vector<std::string>>(3);
    evaluate->add_option("--seed", (*eval_sink)[0], "ignored, the run directory fixes the seed");
    evaluate->add_option("--scale", (*eval_sink)[1], "ignored, the run directory fixes the budget");
    evaluate->add_option("--out", (*eval_sink)[2], "ignored, output goes to stdout");
    evaluate->callback(
        [&rc, eval_run, eval_index, eval_sink] { rc = run_evaluate(*eval_run, *eval_index); });

    CLI::App* agg = app.add_subcommand("aggregate", "aggregate run directories into a table");
    auto agg_dirs = std::make_shared<std::vector<std::string>>();
    auto agg_out = std::make_shared<std::string>("out");
    agg->add_option("dirs", *agg_dirs, "run directories");
    agg->add_option("--run", *agg_dirs, "run directory, repeatable");
    agg->add_option("--out", *agg_out, "where results.csv/results.json go");
    auto agg_sink = std::make_shared<std::vector<std::string>>(2);
    agg->add_option("--seed", (*agg_sink)[0], "ignored here");
    agg->add_option("--scale", (*agg_sink)[1], "ignored here");
    agg->callback([&rc, agg_dirs, agg_out, agg_sink] { rc = run_aggregate(*agg_dirs, *agg_out); });

    CLI::App* rep = app.add_subcommand("report", "write one report format for run directories");
    auto rep_dirs = std::make_shared<std::vector<std::string>>();
    auto rep_out = std::make_shared<std::string>("out");
    auto rep_format = std::make_shared<std::string>("csv");
    rep->add_option("dirs", *rep_dirs, "run directories");
    rep->add_option("--run", *rep_dirs, "run directory, repeatable");
    rep->add_option("--format", *rep_format, "csv, json, or plot-data");
    rep->add_option("--out", *rep_out, "output directory");
    auto rep_sink = std::make_shared<std::vector<std::string>>(2);
    rep->add_option("--seed", (*rep_sink)[0], "ignored here");
    rep->add_option("--scale", (*rep_sink)[1], "ignored here");
    rep->callback([&rc, rep_dirs, rep_format, rep_out, rep_sink] {
        rc = run_report(*rep_dirs, *rep_format, *rep_out);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << one_line(e.what()) << "\n";
        return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << one_line(e.what()) << "\n";
        return 1;
    }
    return rc;
}
