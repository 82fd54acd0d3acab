#include "srw/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;

namespace srw {

namespace {

void write_file(const std::string& path, const std::string& content, bool append = false) {
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << content;
    if (!out) throw IoError("write failed: " + path);
}

std::string zero_pad(int64_t v, int width) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%0*lld", width, static_cast<long long>(v));
    return buf;
}

double median_of(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

NetConfig RunConfig::net_config() const {
    NetConfig net;
    net.in_channels = 3;
    net.base_channels = base_channels;
    net.depth = depth;
    net.image_side = static_cast<int>(side);
    net.init_sigma = init_sigma;
    net.seed = seed;
    return net;
}

Hyper RunConfig::hyper() const {
    Hyper hy;
    hy.alpha = alpha;
    hy.eta = eta;
    hy.noisy_batch = noisy_batch;
    hy.clean_batch = clean_batch;
    hy.momentum = momentum;
    hy.weight_decay = weight_decay;
    hy.iterations = iterations;
    hy.seed = seed;
    hy.lr_decay = lr_decay;
    hy.lr_patience = lr_patience;
    hy.fine_tune_pretrain = fine_tune_pretrain;
    return hy;
}

NoiseSpec RunConfig::parsed_noise() const {
    NoiseSpec spec = noise_spec_from_string(noise);
    if (spec.kind == NoiseKind::Maximal) spec.band = band;
    return spec;
}

SplitPolicy RunConfig::parsed_policy() const { return split_policy_from_string(policy); }

TrainMode RunConfig::parsed_mode() const { return train_mode_from_string(mode); }

void RunConfig::validate() const {
    net_config().validate();
    hyper().validate();
    parsed_noise().validate();
    parsed_policy();
    parsed_mode();
    require(corpus_n >= 1, "config: corpus_n must be >= 1");
    require(eval_interval >= 0 && snapshot_interval >= 0,
            "config: intervals must be nonnegative");
}

// keys are the CLI long option names, so a saved config feeds back through
// `srw train --config <file>`
std::string run_config_to_ini(const RunConfig& cfg) {
    std::ostringstream out;
    if (!cfg.corpus_dir.empty()) out << "corpus=" << cfg.corpus_dir << "\n";
    out << "n=" << cfg.corpus_n << "\n";
    out << "side=" << cfg.side << "\n";
    out << "clean-count=" << cfg.clean_count << "\n";
    out << "noisy-count=" << cfg.noisy_count << "\n";
    out << "val-count=" << cfg.val_count << "\n";
    out << "test-count=" << cfg.test_count << "\n";
    out << "policy=" << cfg.policy << "\n";
    out << "noise=" << cfg.noise << "\n";
    out << "band=" << cfg.band << "\n";
    out << "base-channels=" << cfg.base_channels << "\n";
    out << "depth=" << cfg.depth << "\n";
    out << "init-sigma=" << format_double(cfg.init_sigma) << "\n";
    out << "mode=" << cfg.mode << "\n";
    out << "alpha=" << format_double(cfg.alpha) << "\n";
    out << "eta=" << format_double(cfg.eta) << "\n";
    out << "noisy-batch=" << cfg.noisy_batch << "\n";
    out << "clean-batch=" << cfg.clean_batch << "\n";
    out << "momentum=" << format_double(cfg.momentum) << "\n";
    out << "weight-decay=" << format_double(cfg.weight_decay) << "\n";
    out << "iterations=" << cfg.iterations << "\n";
    out << "seed=" << cfg.seed << "\n";
    out << "lr-decay=" << (cfg.lr_decay ? "true" : "false") << "\n";
    out << "lr-patience=" << cfg.lr_patience << "\n";
    out << "fine-tune-pretrain=" << cfg.fine_tune_pretrain << "\n";
    out << "eval-interval=" << cfg.eval_interval << "\n";
    out << "snapshot-interval=" << cfg.snapshot_interval << "\n";
    return out.str();
}

std::vector<Sample> load_or_generate_corpus(const RunConfig& cfg) {
    if (!cfg.corpus_dir.empty()) return load_corpus(cfg.corpus_dir, cfg.side);
    return gen_synthetic(cfg.corpus_n, cfg.side, cfg.seed);
}

DatasetSplit build_split(const RunConfig& cfg, const std::vector<Sample>& samples) {
    return make_splits(samples, cfg.clean_count, cfg.noisy_count, cfg.val_count, cfg.test_count,
                       cfg.parsed_noise(), cfg.parsed_policy(), cfg.seed);
}

EvalResult evaluate(const NetConfig& cfg, const Params& params, const std::vector<Sample>& test) {
    require(!test.empty(), "evaluate: test set is empty");
    EvalResult result;
    const int64_t side = cfg.image_side;
    const int64_t plane = side * side;
    for (const Sample& s : test) {
        Tensor batch = Tensor::zeros({1, cfg.in_channels, side, side});
        std::copy(s.image.data.begin(), s.image.data.end(), batch.data.begin());
        const Tensor probs = forward(cfg, params, batch);
        const Tensor preds = threshold_prob(probs);
        Tensor pred = Tensor::zeros({side, side});
        std::copy_n(preds.data.begin(), plane, pred.data.begin());
        result.ids.push_back(s.id);
        result.dice_scores.push_back(dice(pred, s.clean_mask));
    }
    double acc = 0.0;
    for (double d : result.dice_scores) acc += d;
    result.mean = acc / static_cast<double>(result.dice_scores.size());
    result.median = median_of(result.dice_scores);
    return result;
}

std::string metrics_csv(const std::vector<MetricRow>& rows, bool header) {
    std::ostringstream out;
    if (header) out << "iteration,noisy_loss,clean_loss,val_dice,alpha,eta\n";
    for (const auto& r : rows) {
        out << r.iteration << "," << format_double(r.noisy_loss) << ","
            << format_double(r.clean_loss) << "," << format_double(r.val_dice) << ","
            << format_double(r.alpha) << "," << format_double(r.eta) << "\n";
    }
    return out.str();
}

std::string eval_csv(const EvalResult& result) {
    std::ostringstream out;
    out << "id,dice\n";
    for (size_t i = 0; i < result.ids.size(); ++i) {
        out << result.ids[i] << "," << format_double(result.dice_scores[i]) << "\n";
    }
    return out.str();
}

void save_train_state(const std::string& path, const TrainState& st) {
    Params blob = st.params;
    for (size_t i = 0; i < st.params.size(); ++i) {
        blob.add("opt.v/" + st.params.names[i], st.opt.velocity[i]);
    }
    Tensor scalars = Tensor::zeros({8});
    scalars.data = {static_cast<double>(st.iteration),
                    st.alpha,
                    st.eta,
                    st.best_val_dice,
                    static_cast<double>(st.stall),
                    st.opt.momentum,
                    st.opt.weight_decay,
                    st.opt.lr};
    blob.add("__state__", std::move(scalars));
    save_tensors(path, blob);
}

TrainState load_train_state(const std::string& path, const NetConfig& cfg) {
    const Params blob = load_tensors(path);
    TrainState st;
    st.net = cfg;
    for (size_t i = 0; i < blob.size(); ++i) {
        const std::string& name = blob.names[i];
        if (name == "__state__" || name.rfind("opt.v/", 0) == 0) continue;
        st.params.add(name, blob.tensors[i]);
    }
    for (size_t i = 0; i < st.params.size(); ++i) {
        const Tensor* v = blob.find("opt.v/" + st.params.names[i]);
        require(v != nullptr, "train state: missing velocity for " + st.params.names[i]);
        st.opt.velocity.push_back(*v);
    }
    const Tensor* scalars = blob.find("__state__");
    require(scalars != nullptr && scalars->numel() == 8, "train state: missing state record");
    st.iteration = static_cast<int64_t>(scalars->data[0]);
    st.alpha = scalars->data[1];
    st.eta = scalars->data[2];
    st.best_val_dice = scalars->data[3];
    st.stall = static_cast<int>(scalars->data[4]);
    st.opt.momentum = scalars->data[5];
    st.opt.weight_decay = scalars->data[6];
    st.opt.lr = scalars->data[7];
    require(st.params.numel() == count_params(cfg),
            "train state: parameter count does not match config");
    return st;
}

namespace {

// Fig.4-style snapshot: exact weight maps plus 8-bit visualizations where
// mislabelled pixels drive the blue channel and low weight drives green.
void dump_snapshot(const std::string& dir, int64_t iteration, const StepStats& stats,
                   const std::vector<int64_t>& noisy_indices, const DatasetSplit& split) {
    if (stats.weight_map.numel() == 0) return;
    const Tensor& w = stats.weight_map;
    const int64_t B = w.shape[0], H = w.shape[1], W = w.shape[2];
    const std::string tag = zero_pad(iteration, 6);

    Params blob;
    double wmax = 0.0;
    for (double v : w.data) wmax = std::max(wmax, v);
    for (int64_t i = 0; i < B; ++i) {
        Tensor map = Tensor::zeros({H, W});
        std::copy_n(w.data.begin() + i * H * W, H * W, map.data.begin());

        const Sample& s = split.noisy[static_cast<size_t>(noisy_indices[static_cast<size_t>(i)])];
        Tensor mislabelled = Tensor::zeros({H, W});
        for (int64_t q = 0; q < H * W; ++q) {
            mislabelled.data[static_cast<size_t>(q)] =
                s.noisy_mask.data[static_cast<size_t>(q)] !=
                        s.clean_mask.data[static_cast<size_t>(q)]
                    ? 1.0
                    : 0.0;
        }

        Tensor vis = Tensor::zeros({H, W});
        for (int64_t q = 0; q < H * W; ++q) {
            vis.data[static_cast<size_t>(q)] =
                wmax > 0.0 ? map.data[static_cast<size_t>(q)] / wmax : 0.0;
        }
        Tensor overlay = Tensor::zeros({3, H, W});
        for (int64_t q = 0; q < H * W; ++q) {
            overlay.data[static_cast<size_t>(H * W + q)] = 1.0 - vis.data[static_cast<size_t>(q)];
            overlay.data[static_cast<size_t>(2 * H * W + q)] =
                mislabelled.data[static_cast<size_t>(q)];
        }

        const std::string stem = (fs::path(dir) / ("iter" + tag + "_img" + std::to_string(i))).string();
        save_pgm_gray(vis, stem + "_w.pgm");
        save_pgm(mislabelled, stem + "_mislabelled.pgm");
        save_ppm(overlay, stem + "_overlay.ppm");

        blob.add("w" + std::to_string(i), std::move(map));
    }
    save_tensors((fs::path(dir) / ("wmap_" + tag + ".bin")).string(), blob);
}

}  // namespace

RunOutput run_training(const RunConfig& cfg, const StepCallback& extra_callback,
                       const std::string& resume_state) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();

    const std::vector<Sample> corpus = load_or_generate_corpus(cfg);
    const DatasetSplit split = build_split(cfg, corpus);
    const NetConfig net = cfg.net_config();

    const bool to_disk = !cfg.out_dir.empty();
    const bool resuming = !resume_state.empty();
    fs::path out(cfg.out_dir);
    if (to_disk) {
        std::error_code ec;
        fs::create_directories(out, ec);
        if (ec) throw IoError("cannot create run directory: " + cfg.out_dir);
        if (cfg.snapshot_interval > 0) {
            fs::create_directories(out / "wmaps", ec);
            if (ec) throw IoError("cannot create run directory: " + cfg.out_dir);
        }
        write_file((out / "config.ini").string(), run_config_to_ini(cfg));
        write_file((out / "normstats.txt").string(), norm_stats_to_text(split.stats));
        write_file((out / "split_manifest.txt").string(), split_manifest(split));
        if (!resuming) {
            save_tensors((out / "checkpoint_init.bin").string(),
                         init_train_state(net, cfg.hyper()).params);
        }
    }

    TrainState resumed;
    TrainState* resume_ptr = nullptr;
    if (resuming) {
        resumed = load_train_state(resume_state, net);
        resume_ptr = &resumed;
    }

    StepCallback callback = [&](int64_t iteration, const StepStats& stats,
                                const std::vector<int64_t>& noisy_indices) {
        if (to_disk && cfg.snapshot_interval > 0 && iteration % cfg.snapshot_interval == 0) {
            dump_snapshot((out / "wmaps").string(), iteration, stats, noisy_indices, split);
        }
        if (extra_callback) extra_callback(iteration, stats, noisy_indices);
    };

    TrainResult trained =
        train(split, net, cfg.hyper(), cfg.parsed_mode(), cfg.eval_interval, callback, resume_ptr);

    RunOutput output;
    output.state = std::move(trained.state);
    output.metrics = std::move(trained.metrics);
    if (!split.test.empty()) {
        output.test_eval = evaluate(net, output.state.params, split.test);
    }

    if (to_disk) {
        write_file((out / "metrics.csv").string(), metrics_csv(output.metrics, !resuming),
                   resuming);
        save_tensors((out / "checkpoint_final.bin").string(), output.state.params);
        save_train_state((out / "state_final.bin").string(), output.state);
        if (!split.test.empty()) {
            write_file((out / "eval.csv").string(), eval_csv(output.test_eval));
            write_file((out / "eval_summary.txt").string(),
                       "mean " + format_double(output.test_eval.mean) + "\nmedian " +
                           format_double(output.test_eval.median) + "\n");
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        // wall-clock lives outside metrics.csv so reruns stay bit-identical
        write_file((out / "timings.csv").string(), "phase,seconds\ntotal," + format_double(seconds) + "\n",
                   resuming);
    }
    return output;
}

SweepResult run_sweep(const RunConfig& base, const std::vector<int64_t>& clean_counts,
                      const std::vector<std::string>& modes, int repeats, int jobs) {
    require(!clean_counts.empty() && !modes.empty() && repeats >= 1, "sweep: nothing to run");
    const int64_t pool_total = base.clean_count + base.noisy_count;

    struct Job {
        RunConfig cfg;
        size_t slot;
    };
    std::vector<Job> jobs_list;
    SweepResult result;
    for (int64_t k : clean_counts) {
        for (const auto& mode : modes) {
            for (int r = 0; r < repeats; ++r) {
                RunConfig cfg = base;
                cfg.clean_count = k;
                cfg.noisy_count = pool_total - k;
                cfg.mode = mode;
                cfg.seed = static_cast<uint64_t>(r);
                cfg.out_dir.clear();
                cfg.snapshot_interval = 0;
                cfg.validate();
                jobs_list.push_back({std::move(cfg), result.runs.size()});
                result.runs.push_back({k, mode, static_cast<uint64_t>(r), 0.0});
            }
        }
    }

    const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(jobs_list.size())));
    std::mutex mu;
    size_t next = 0;
    std::exception_ptr first_error;
    auto worker = [&]() {
        for (;;) {
            size_t mine;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (first_error || next >= jobs_list.size()) return;
                mine = next++;
            }
            try {
                const RunOutput out = run_training(jobs_list[mine].cfg);
                std::lock_guard<std::mutex> lock(mu);
                result.runs[jobs_list[mine].slot].test_dice = out.test_eval.mean;
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);

    for (int64_t k : clean_counts) {
        for (const auto& mode : modes) {
            std::vector<double> scores;
            for (const auto& run : result.runs) {
                if (run.clean_count == k && run.mode == mode) scores.push_back(run.test_dice);
            }
            SweepCell cell;
            cell.clean_count = k;
            cell.mode = mode;
            cell.seeds = static_cast<int>(scores.size());
            double acc = 0.0;
            for (double s : scores) acc += s;
            cell.mean_dice = acc / static_cast<double>(scores.size());
            double var = 0.0;
            for (double s : scores) var += (s - cell.mean_dice) * (s - cell.mean_dice);
            cell.sd_dice = scores.size() > 1
                               ? std::sqrt(var / static_cast<double>(scores.size() - 1))
                               : 0.0;
            result.cells.push_back(cell);
        }
    }
    return result;
}

std::string sweep_runs_csv(const SweepResult& result) {
    std::ostringstream out;
    out << "clean_count,mode,seed,test_dice\n";
    for (const auto& r : result.runs) {
        out << r.clean_count << "," << r.mode << "," << r.seed << ","
            << format_double(r.test_dice) << "\n";
    }
    return out.str();
}

std::string sweep_cells_csv(const SweepResult& result) {
    std::ostringstream out;
    out << "clean_count,mode,mean_dice,sd_dice,seeds\n";
    for (const auto& c : result.cells) {
        out << c.clean_count << "," << c.mode << "," << format_double(c.mean_dice) << ","
            << format_double(c.sd_dice) << "," << c.seeds << "\n";
    }
    return out.str();
}

}  // namespace srw
