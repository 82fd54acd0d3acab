#pragma once

#include <optional>
#include <string>
#include <vector>

#include "srw/meta.hpp"

namespace srw {

// Everything a run needs; serialized to the run directory as a flat
// key=value file that can be fed back through --config.
struct RunConfig {
    // corpus (generated in memory from `seed` unless corpus_dir is set)
    std::string corpus_dir;
    int64_t corpus_n = 240;
    int64_t side = 24;
    // split
    int64_t clean_count = 24;  // K
    int64_t noisy_count = 176; // M
    int64_t val_count = 20;
    int64_t test_count = 20;
    std::string policy = "disjoint";
    std::string noise = "3v";
    int band = -1;
    // network
    int base_channels = 8;
    int depth = 2;
    double init_sigma = 0.05;
    // training
    std::string mode = "reweight";
    double alpha = 1e-4;
    double eta = 1e-4;
    int noisy_batch = 2;
    int clean_batch = 10;
    double momentum = 0.99;
    double weight_decay = 5e-5;
    int64_t iterations = 3000;
    uint64_t seed = 0;
    bool lr_decay = false;
    int lr_patience = 20;
    int64_t fine_tune_pretrain = -1;
    int64_t eval_interval = 50;
    int64_t snapshot_interval = 0;  // weight-map dumps every S iterations (0 = off)
    std::string out_dir;

    NetConfig net_config() const;
    Hyper hyper() const;
    NoiseSpec parsed_noise() const;
    SplitPolicy parsed_policy() const;
    TrainMode parsed_mode() const;
    void validate() const;
};

std::string run_config_to_ini(const RunConfig& cfg);

std::vector<Sample> load_or_generate_corpus(const RunConfig& cfg);
DatasetSplit build_split(const RunConfig& cfg, const std::vector<Sample>& samples);

struct EvalResult {
    std::vector<std::string> ids;
    std::vector<double> dice_scores;
    double mean = 0.0;
    double median = 0.0;
};

EvalResult evaluate(const NetConfig& cfg, const Params& params, const std::vector<Sample>& test);

struct RunOutput {
    TrainState state;
    std::vector<MetricRow> metrics;
    EvalResult test_eval;
};

// Full pipeline: corpus -> split -> train -> test evaluation. Writes run
// artifacts (config, metrics CSV, split manifest, norm stats, checkpoints,
// optional weight-map snapshots) when cfg.out_dir is set. `resume_state`
// continues a previous run and appends to its metrics.
RunOutput run_training(const RunConfig& cfg, const StepCallback& extra_callback = nullptr,
                       const std::string& resume_state = "");

// deterministic CSV encoders (%.17g, "nan" for missing values)
std::string format_double(double v);
std::string metrics_csv(const std::vector<MetricRow>& rows, bool header = true);
std::string eval_csv(const EvalResult& result);

void save_train_state(const std::string& path, const TrainState& st);
TrainState load_train_state(const std::string& path, const NetConfig& cfg);

struct SweepRun {
    int64_t clean_count = 0;
    std::string mode;
    uint64_t seed = 0;
    double test_dice = 0.0;
};

struct SweepCell {
    int64_t clean_count = 0;
    std::string mode;
    double mean_dice = 0.0;
    double sd_dice = 0.0;
    int seeds = 0;
};

struct SweepResult {
    std::vector<SweepRun> runs;
    std::vector<SweepCell> cells;
};

// For each K, each mode and seeds 0..R-1: train + evaluate. K replaces clean
// images into the noisy pool, holding K+M constant. Runs execute on `jobs`
// worker threads; results are aggregated in a fixed order.
SweepResult run_sweep(const RunConfig& base, const std::vector<int64_t>& clean_counts,
                      const std::vector<std::string>& modes, int repeats, int jobs);

std::string sweep_runs_csv(const SweepResult& result);
std::string sweep_cells_csv(const SweepResult& result);

}  // namespace srw
