// Command-line driver: train / eval / verify / sweep.
//
// Exit codes: 0 success, 1 verification or evaluation failure, 2 config
// error, 3 training abort.

#include <CLI11.hpp>

#include <ctime>
#include <iostream>

#include "qdbnn/checkpoint.hpp"
#include "qdbnn/config.hpp"
#include "qdbnn/train.hpp"
#include "qdbnn/verify.hpp"

namespace {

using namespace qdbnn;

std::string iso8601_now() {
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

class RunLog {
  public:
    explicit RunLog(const fs::path& path) : file_(path, std::ios::app) {}

    void line(const std::string& level, const std::string& msg) {
        const std::string full = iso8601_now() + " " + level + " " + msg;
        std::cout << full << "\n";
        if (file_) {
            file_ << full << "\n";
            file_.flush();
        }
    }

    void info(const std::string& msg) { line("INFO", msg); }
    void error(const std::string& msg) { line("ERROR", msg); }

  private:
    std::ofstream file_;
};

RunConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config file not found: " + path);
    json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return RunConfig::from_json(j);
}

struct RunPaths {
    fs::path dir, config, metrics, checkpoint, log;
};

RunPaths run_paths(const fs::path& dir) {
    return {dir, dir / "resolved_config.json", dir / "metrics.csv", dir / "checkpoint.qdbnn", dir / "train.log"};
}

void prepare_run_dir(const RunPaths& paths, bool force) {
    if (fs::exists(paths.metrics) || fs::exists(paths.checkpoint)) {
        if (!force) {
            throw ConfigError("output directory " + paths.dir.string() +
                              " already holds a run; pass --force to overwrite");
        }
        fs::remove(paths.metrics);
        fs::remove(paths.checkpoint);
        fs::remove(paths.log);
        fs::remove(paths.config);
    }
    fs::create_directories(paths.dir);
}

int run_training(const RunConfig& cfg, bool force) {
    const RunPaths paths = run_paths(cfg.output_dir);
    prepare_run_dir(paths, force);
    RunLog log(paths.log);
    {
        std::ofstream f(paths.config);
        f << cfg.to_json().dump(2) << "\n";
    }
    log.info("run " + cfg.output_dir + ": dataset=" + cfg.dataset + " arch=" + cfg.arch +
             " schedule=" + cfg.learning_rate_schedule + " lambda_l2=" + std::to_string(cfg.lambda_l2) +
             " seed=" + std::to_string(cfg.seed));
    LoadedData data;
    try {
        data = load_dataset(cfg);
    } catch (const std::exception& e) {
        log.error(std::string("dataset unavailable: ") + e.what());
        return 3;
    }
    log.info("dataset loaded: " + std::to_string(data.train.count) + " train / " + std::to_string(data.test.count) +
             " test samples");
    const ModelSpec spec = model_spec_from_config(cfg, data);
    try {
        const TrainResult result = train(spec, cfg.train_config(), data.train, data.test, [&](const EpochMetrics& m) {
            char buf[160];
            std::snprintf(buf, sizeof(buf), "epoch %d lr %.4g train_loss %.6f train_acc %.4f test_acc %.4f", m.epoch,
                          m.lr, m.train_loss, m.train_acc, m.test_acc);
            log.info(buf);
        });
        const std::string csv = metrics_csv(result.metrics);
        write_file_atomic(paths.metrics,
                          std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
        save_checkpoint(paths.checkpoint, result.state, cfg.to_json());
        const double final_test = result.metrics.empty() ? 0.0 : result.metrics.back().test_acc;
        log.info("done: final test accuracy " + std::to_string(final_test));
        return 0;
    } catch (const TrainAbort& e) {
        log.error(std::string("training aborted: ") + e.what());
        return 3;
    }
}

int cmd_train(const std::string& config_path, bool force, int threads_override) {
    RunConfig cfg = load_config_file(config_path);
    if (threads_override > 0) cfg.threads = threads_override;
    return run_training(cfg, force);
}

int cmd_eval(const std::string& checkpoint_path, const std::string& split, const std::string& data_dir,
             int threads) {
    const LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
    RunConfig cfg = RunConfig::from_json(loaded.run_config);
    if (!data_dir.empty()) cfg.data_dir = data_dir;
    const LoadedData data = load_dataset(cfg);
    const ProbDataset& set = split == "train" ? data.train : data.test;
    const double acc = evaluate(loaded.state, set, threads);
    std::printf("%s accuracy: %.6f (%d samples)\n", split.c_str(), acc, set.count);
    return 0;
}

int cmd_verify(int max_n, int seeds, int threads, bool corrupt_gate) {
    VerifyOptions opts;
    opts.max_n = max_n;
    opts.seeds = seeds;
    opts.threads = threads;
    opts.corrupt_gate = corrupt_gate;
    const auto suites = run_verification(opts);
    bool all_pass = true;
    std::printf("%-34s %7s %13s %10s %8s  %s\n", "suite", "cases", "max deviation", "tolerance", "time", "status");
    for (const auto& s : suites) {
        all_pass = all_pass && s.pass;
        std::printf("%-34s %7d %13.3e %10.0e %7.2fs  %s\n", s.name.c_str(), s.cases, s.max_deviation, s.tolerance,
                    s.seconds, s.pass ? "PASS" : "FAIL");
        if (!s.pass) std::printf("    first failure: %s\n", s.detail.c_str());
    }
    std::printf(all_pass ? "all suites passed\n" : "verification FAILED\n");
    return all_pass ? 0 : 1;
}

int cmd_sweep(const std::string& config_path, bool force, int threads_override) {
    const RunConfig base = load_config_file(config_path);
    const fs::path root = base.output_dir;
    fs::create_directories(root);
    struct Cell {
        double lambda;
        std::string schedule;
        double test_acc = 0.0, train_acc = 0.0;
        std::string dir;
    };
    std::vector<Cell> cells;
    for (const double lambda : base.sweep_lambda_l2) {
        for (const auto& schedule : base.sweep_schedule) {
            Cell cell;
            cell.lambda = lambda;
            cell.schedule = schedule;
            char tag[96];
            std::snprintf(tag, sizeof(tag), "cell_l%g_%s", lambda, schedule.c_str());
            cell.dir = (root / tag).string();
            cells.push_back(cell);
        }
    }
    for (auto& cell : cells) {
        RunConfig cfg = base;
        cfg.lambda_l2 = cell.lambda;
        cfg.learning_rate_schedule = cell.schedule;
        cfg.output_dir = cell.dir;
        if (threads_override > 0) cfg.threads = threads_override;
        const int rc = run_training(cfg, force);
        if (rc != 0) return rc;
        std::ifstream metrics(fs::path(cell.dir) / "metrics.csv");
        std::string line, last;
        std::getline(metrics, line);  // header
        while (std::getline(metrics, line)) {
            if (!line.empty()) last = line;
        }
        if (!last.empty()) {
            std::istringstream ls(last);
            std::string field;
            std::vector<double> vals;
            while (std::getline(ls, field, ',')) vals.push_back(std::atof(field.c_str()));
            if (vals.size() == 5) {
                cell.train_acc = vals[3];
                cell.test_acc = vals[4];
            }
        }
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < cells.size(); ++i) {
        if (cells[i].test_acc > cells[best].test_acc) best = i;
    }
    std::string csv = "cell,lambda_l2,schedule,train_acc,test_acc,best\n";
    for (std::size_t i = 0; i < cells.size(); ++i) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%s,%.17g,%.17g,%d\n", cells[i].dir.c_str(), cells[i].lambda,
                      cells[i].schedule.c_str(), cells[i].train_acc, cells[i].test_acc, i == best ? 1 : 0);
        csv += buf;
    }
    write_file_atomic(root / "summary.csv", std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
    std::printf("sweep complete; best cell: %s (test_acc %.4f)\n", cells[best].dir.c_str(), cells[best].test_acc);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"quantum-deformed binary neural networks: training, evaluation and oracle verification"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, split = "test", data_dir;
    bool force = false, corrupt_gate = false;
    int threads = 0, max_n = 4, seeds = 50;

    auto* train_cmd = app.add_subcommand("train", "train a model from a JSON config");
    train_cmd->add_option("--config", config_path, "path to the run config")->required();
    train_cmd->add_flag("--force", force, "overwrite an existing run directory");
    train_cmd->add_option("--threads", threads, "worker threads (0 = all cores)");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    eval_cmd->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
    eval_cmd->add_option("--data-dir", data_dir, "dataset cache directory override");
    eval_cmd->add_option("--threads", threads, "worker threads");

    auto* verify_cmd = app.add_subcommand("verify", "run the exact-oracle equivalence and gradient suites");
    verify_cmd->add_option("--max-n", max_n, "largest chain length for the exact suites")->check(CLI::Range(1, 6));
    verify_cmd->add_option("--seeds", seeds, "seeded instances per suite");
    verify_cmd->add_option("--threads", threads, "worker threads");
    verify_cmd->add_flag("--inject-invalid-gate", corrupt_gate, "test hook: corrupt one gate (must fail)")
        ->group("");  // hidden

    auto* sweep_cmd = app.add_subcommand("sweep", "train every (lambda_l2, schedule) grid cell and summarize");
    sweep_cmd->add_option("--config", config_path, "path to the base run config")->required();
    sweep_cmd->add_flag("--force", force, "overwrite existing cell directories");
    sweep_cmd->add_option("--threads", threads, "worker threads");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return cmd_train(config_path, force, threads);
        if (eval_cmd->parsed()) return cmd_eval(checkpoint_path, split, data_dir, threads);
        if (verify_cmd->parsed()) return cmd_verify(max_n, seeds, threads, corrupt_gate);
        if (sweep_cmd->parsed()) return cmd_sweep(config_path, force, threads);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
