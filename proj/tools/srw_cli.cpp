// srw: train a lesion segmentation network from noisy masks plus a small
// clean set, with spatially adaptive loss reweighting. Subcommands: gen,
// noise, train, eval, sweep.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "srw/experiment.hpp"

namespace fs = std::filesystem;
using namespace srw;

namespace {

void attach_run_config(CLI::App* cmd, RunConfig& cfg) {
    cmd->add_option("--corpus", cfg.corpus_dir, "corpus directory (omit to generate in memory)");
    cmd->add_option("--n", cfg.corpus_n, "generated corpus size");
    cmd->add_option("--side", cfg.side, "image side in pixels");
    cmd->add_option("--clean-count,--K", cfg.clean_count, "clean pool size K");
    cmd->add_option("--noisy-count,--M", cfg.noisy_count, "noisy pool size M");
    cmd->add_option("--val-count", cfg.val_count, "validation set size");
    cmd->add_option("--test-count", cfg.test_count, "test set size");
    cmd->add_option("--policy", cfg.policy, "split policy: disjoint or subset");
    cmd->add_option("--noise", cfg.noise, "noise kind: <k>v, axis4 or maximal");
    cmd->add_option("--band", cfg.band, "maximal-noise band width (-1 = scale with side)");
    cmd->add_option("--base-channels", cfg.base_channels, "network width");
    cmd->add_option("--depth", cfg.depth, "encoder/decoder levels");
    cmd->add_option("--init-sigma", cfg.init_sigma, "Gaussian init std");
    cmd->add_option("--mode", cfg.mode, "reweight, plain, fine_tune or per_image");
    cmd->add_option("--alpha", cfg.alpha, "model learning rate");
    cmd->add_option("--eta", cfg.eta, "weight-map learning rate");
    cmd->add_option("--noisy-batch", cfg.noisy_batch, "noisy mini-batch size");
    cmd->add_option("--clean-batch", cfg.clean_batch, "clean mini-batch size");
    cmd->add_option("--momentum", cfg.momentum, "SGD momentum");
    cmd->add_option("--weight-decay", cfg.weight_decay, "SGD weight decay");
    cmd->add_option("--iterations", cfg.iterations, "training iterations");
    cmd->add_option("--seed", cfg.seed, "run seed");
    cmd->add_flag("--lr-decay", cfg.lr_decay, "divide rates by 10 when validation stalls");
    cmd->add_option("--lr-patience", cfg.lr_patience, "evaluations without improvement before decay");
    cmd->add_option("--fine-tune-pretrain", cfg.fine_tune_pretrain,
                    "fine_tune: iterations on the noisy pool (-1 = half)");
    cmd->add_option("--eval-interval", cfg.eval_interval, "iterations between metric rows");
    cmd->add_option("--snapshot-interval", cfg.snapshot_interval,
                    "iterations between weight-map dumps (0 = off)");
    cmd->set_config("--config", "", "read options from a key=value file");
    cmd->allow_config_extras(false);  // stale keys in a config file are errors
}

// parses the key=value files written by run_training (keys are CLI names)
RunConfig read_run_config_ini(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open run config: " + path);
    RunConfig cfg;
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        try {
            if (key == "corpus") cfg.corpus_dir = value;
            else if (key == "n") cfg.corpus_n = std::stoll(value);
            else if (key == "side") cfg.side = std::stoll(value);
            else if (key == "clean-count") cfg.clean_count = std::stoll(value);
            else if (key == "noisy-count") cfg.noisy_count = std::stoll(value);
            else if (key == "val-count") cfg.val_count = std::stoll(value);
            else if (key == "test-count") cfg.test_count = std::stoll(value);
            else if (key == "policy") cfg.policy = value;
            else if (key == "noise") cfg.noise = value;
            else if (key == "band") cfg.band = std::stoi(value);
            else if (key == "base-channels") cfg.base_channels = std::stoi(value);
            else if (key == "depth") cfg.depth = std::stoi(value);
            else if (key == "init-sigma") cfg.init_sigma = std::stod(value);
            else if (key == "mode") cfg.mode = value;
            else if (key == "alpha") cfg.alpha = std::stod(value);
            else if (key == "eta") cfg.eta = std::stod(value);
            else if (key == "noisy-batch") cfg.noisy_batch = std::stoi(value);
            else if (key == "clean-batch") cfg.clean_batch = std::stoi(value);
            else if (key == "momentum") cfg.momentum = std::stod(value);
            else if (key == "weight-decay") cfg.weight_decay = std::stod(value);
            else if (key == "iterations") cfg.iterations = std::stoll(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "lr-decay") cfg.lr_decay = value == "true" || value == "1";
            else if (key == "lr-patience") cfg.lr_patience = std::stoi(value);
            else if (key == "fine-tune-pretrain") cfg.fine_tune_pretrain = std::stoll(value);
            else if (key == "eval-interval") cfg.eval_interval = std::stoll(value);
            else if (key == "snapshot-interval") cfg.snapshot_interval = std::stoll(value);
            else throw IoError("run config: unknown key " + key + " in " + path);
        } catch (const IoError&) {
            throw;
        } catch (const std::exception&) {
            throw IoError("run config: bad value for " + key + " in " + path);
        }
    }
    return cfg;
}

int cmd_gen(int64_t n, int64_t side, uint64_t seed, const std::string& out) {
    const auto samples = gen_synthetic(n, side, seed);
    save_corpus(samples, out);
    std::cout << "wrote " << samples.size() << " samples to " << out << "\n";
    return 0;
}

int cmd_noise(const std::string& corpus, const std::string& out, const std::string& kind,
              int band) {
    NoiseSpec spec = noise_spec_from_string(kind);
    if (spec.kind == NoiseKind::Maximal) spec.band = band;
    const auto samples = load_corpus(corpus);

    std::error_code ec;
    fs::create_directories(fs::path(out) / "masks", ec);
    if (spec.kind == NoiseKind::KVertex) fs::create_directories(fs::path(out) / "polys", ec);
    if (ec) throw IoError("cannot create output directory: " + out);

    std::ostringstream csv;
    csv << "id,dice\n";
    double acc = 0.0;
    for (const auto& s : samples) {
        std::vector<std::string> warnings;
        const Tensor noisy = make_noisy_mask(s.clean_mask, spec, &warnings);
        for (const auto& w : warnings) std::cerr << s.id << ": " << w << "\n";
        save_pgm(noisy, (fs::path(out) / "masks" / (s.id + ".pgm")).string());
        if (spec.kind == NoiseKind::KVertex) {
            const Polygon poly = simplify_to_k(mask_to_polygon(s.clean_mask), spec.k);
            std::ofstream pf(fs::path(out) / "polys" / (s.id + ".poly"));
            if (!pf) throw IoError("cannot write polygon file for " + s.id);
            pf << polygon_to_text(poly);
        }
        const double d = dice(noisy, s.clean_mask);
        acc += d;
        csv << s.id << "," << format_double(d) << "\n";
    }
    std::ofstream cf(fs::path(out) / "dice.csv");
    if (!cf) throw IoError("cannot write dice.csv in " + out);
    cf << csv.str();
    std::cout << "kind=" << noise_spec_tag(spec) << " mean_dice="
              << format_double(acc / static_cast<double>(samples.size())) << " over "
              << samples.size() << " masks\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& resume) {
    require(!cfg.out_dir.empty(), "train: --out is required");
    const RunOutput out = run_training(cfg, nullptr, resume);
    std::cout << "run complete: iteration " << out.state.iteration;
    if (!out.test_eval.ids.empty()) {
        std::cout << " test_dice_mean=" << format_double(out.test_eval.mean)
                  << " test_dice_median=" << format_double(out.test_eval.median);
    }
    std::cout << "\noutputs in " << cfg.out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& run_dir, std::string checkpoint, std::string out_csv) {
    const RunConfig cfg = read_run_config_ini((fs::path(run_dir) / "config.ini").string());
    if (checkpoint.empty()) checkpoint = (fs::path(run_dir) / "checkpoint_final.bin").string();
    const Params params = load_tensors(checkpoint);
    const NetConfig net = cfg.net_config();
    require(params.numel() == count_params(net),
            "eval: checkpoint does not match the run's network config");

    const auto corpus = load_or_generate_corpus(cfg);
    const DatasetSplit split = build_split(cfg, corpus);
    require(!split.test.empty(), "eval: run has no test set");
    const EvalResult result = evaluate(net, params, split.test);

    if (out_csv.empty()) out_csv = (fs::path(run_dir) / "eval.csv").string();
    std::ofstream out(out_csv, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + out_csv);
    out << eval_csv(result);
    std::cout << "mean " << format_double(result.mean) << "\nmedian "
              << format_double(result.median) << "\nper-image scores in " << out_csv << "\n";
    return 0;
}

int cmd_sweep(const RunConfig& base, std::vector<int64_t> k_list, std::vector<std::string> modes,
              int repeats, int jobs, const std::string& out_dir) {
    require(!out_dir.empty(), "sweep: --out is required");
    const SweepResult result = run_sweep(base, k_list, modes, repeats, jobs);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory: " + out_dir);
    {
        std::ofstream f(fs::path(out_dir) / "sweep.csv");
        if (!f) throw IoError("cannot write sweep.csv");
        f << sweep_cells_csv(result);
    }
    {
        std::ofstream f(fs::path(out_dir) / "sweep_runs.csv");
        if (!f) throw IoError("cannot write sweep_runs.csv");
        f << sweep_runs_csv(result);
    }
    std::cout << sweep_cells_csv(result);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spatially reweighted segmentation training workbench"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic lesion corpus");
    int64_t gen_n = 240, gen_side = 24;
    uint64_t gen_seed = 0;
    std::string gen_out;
    gen->add_option("--n", gen_n, "sample count");
    gen->add_option("--side", gen_side, "image side");
    gen->add_option("--seed", gen_seed, "corpus seed");
    gen->add_option("--out", gen_out, "output directory")->required();

    // noise
    auto* noise = app.add_subcommand("noise", "synthesize noisy masks for a corpus");
    std::string noise_corpus, noise_out, noise_kind = "3v";
    int noise_band = -1;
    noise->add_option("--corpus", noise_corpus, "corpus directory")->required();
    noise->add_option("--out", noise_out, "output directory")->required();
    noise->add_option("--kind", noise_kind, "<k>v, axis4 or maximal");
    noise->add_option("--band", noise_band, "maximal band width (-1 = scale with side)");

    // train
    auto* train = app.add_subcommand("train", "train a segmentation network");
    RunConfig train_cfg;
    std::string resume_state;
    attach_run_config(train, train_cfg);
    train->add_option("--out", train_cfg.out_dir, "run directory")->required();
    train->add_option("--resume", resume_state, "state file to resume from");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a run's test set");
    std::string eval_run, eval_checkpoint, eval_out;
    eval->add_option("--run", eval_run, "run directory (with config.ini)")->required();
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint (default: final of the run)");
    eval->add_option("--out", eval_out, "per-image CSV path");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "clean-size sweep across training modes");
    RunConfig sweep_cfg;
    std::vector<int64_t> k_list{5, 10, 25, 50};
    std::vector<std::string> modes{"fine_tune", "per_image", "reweight"};
    int repeats = 10, jobs = 2;
    std::string sweep_out;
    attach_run_config(sweep, sweep_cfg);
    sweep->add_option("--k-list", k_list, "clean pool sizes")->delimiter(',');
    sweep->add_option("--modes", modes, "training modes to compare")->delimiter(',');
    sweep->add_option("--repeats", repeats, "seeds per cell");
    sweep->add_option("--jobs", jobs, "parallel runs");
    sweep->add_option("--out", sweep_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen(gen_n, gen_side, gen_seed, gen_out);
        if (noise->parsed()) return cmd_noise(noise_corpus, noise_out, noise_kind, noise_band);
        if (train->parsed()) return cmd_train(train_cfg, resume_state);
        if (eval->parsed()) return cmd_eval(eval_run, eval_checkpoint, eval_out);
        if (sweep->parsed()) return cmd_sweep(sweep_cfg, k_list, modes, repeats, jobs, sweep_out);
    } catch (const ContractViolation& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
