// Drives the srw binary end to end through a shell. The binary path comes in
// through the SRW_CLI compile definition.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "srw/dataset.hpp"
#include "srw/polygon.hpp"

namespace fs = std::filesystem;
using namespace srw;

namespace {

const char* cli() { return SRW_CLI; }

int run(const std::string& args) {
    const std::string cmd = std::string(cli()) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

fs::path temp_dir(const char* tag) {
    const fs::path dir = fs::temp_directory_path() / "srw_cli_tests" / tag;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string tiny_train_flags(int iterations = 4) {
    return "--n 30 --side 16 --K 4 --M 16 --val-count 3 --test-count 3 --depth 1 "
           "--base-channels 2 --iterations " +
           std::to_string(iterations) + " --eval-interval 2 --clean-batch 3 --seed 5";
}

}  // namespace

TEST_CASE("gen is idempotent per seed") {
    const auto a = temp_dir("gen_a");
    const auto b = temp_dir("gen_b");
    REQUIRE(run("gen --n 6 --side 16 --seed 1 --out " + a.string()) == 0);
    REQUIRE(run("gen --n 6 --side 16 --seed 1 --out " + b.string()) == 0);
    CHECK(slurp(a / "manifest.txt") == slurp(b / "manifest.txt"));
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const auto rel = fs::relative(entry.path(), a);
        CHECK(slurp(entry.path()) == slurp(b / rel));
    }
    // layout: one image, one mask, one manifest line per sample
    const std::string manifest = slurp(a / "manifest.txt");
    CHECK(std::count(manifest.begin(), manifest.end(), '\n') == 6);
}

TEST_CASE("gen rejects an empty corpus") { CHECK(run("gen --n 0 --out /tmp/srw_noop") == 1); }

TEST_CASE("noise: maximal band arithmetic and k-vertex polygon files") {
    const auto corpus = temp_dir("noise_corpus");
    REQUIRE(run("gen --n 5 --side 24 --seed 2 --out " + corpus.string()) == 0);

    const auto nmax = temp_dir("noise_max");
    REQUIRE(run("noise --corpus " + corpus.string() + " --out " + nmax.string() +
                " --kind maximal --band 1") == 0);
    for (const auto& entry : fs::directory_iterator(nmax / "masks")) {
        const Tensor m = load_pgm(entry.path().string());
        int64_t fg = 0;
        for (double v : m.data) fg += v == 1.0;
        CHECK(fg == (24 - 2) * (24 - 2));
    }

    const auto n7 = temp_dir("noise_7v");
    REQUIRE(run("noise --corpus " + corpus.string() + " --out " + n7.string() + " --kind 7v") ==
            0);
    int polys = 0;
    for (const auto& entry : fs::directory_iterator(n7 / "polys")) {
        const Polygon p = polygon_from_text(slurp(entry.path()));
        CHECK(p.size() == 7);
        ++polys;
    }
    CHECK(polys == 5);
    CHECK(slurp(n7 / "dice.csv").rfind("id,dice", 0) == 0);
}

TEST_CASE("noise severity ordering: 7v >= 3v >= maximal mean dice") {
    const auto corpus = temp_dir("noise_order");
    REQUIRE(run("gen --n 12 --side 24 --seed 3 --out " + corpus.string()) == 0);
    auto mean_dice = [&](const std::string& kind, const char* tag) {
        const auto out = temp_dir(tag);
        REQUIRE(run("noise --corpus " + corpus.string() + " --out " + out.string() + " --kind " +
                    kind) == 0);
        std::istringstream csv(slurp(out / "dice.csv"));
        std::string line;
        std::getline(csv, line);  // header
        double acc = 0.0;
        int n = 0;
        while (std::getline(csv, line)) {
            acc += std::stod(line.substr(line.find(',') + 1));
            ++n;
        }
        return acc / n;
    };
    const double d7 = mean_dice("7v", "ord7");
    const double d3 = mean_dice("3v", "ord3");
    const double dm = mean_dice("maximal", "ordm");
    CHECK(d7 >= d3);
    CHECK(d3 >= dm);
}

TEST_CASE("noise requires an existing corpus") {
    CHECK(run("noise --corpus /tmp/srw_does_not_exist --out /tmp/srw_noop2 --kind 3v") == 2);
}

TEST_CASE("train with zero iterations leaves only the initial checkpoint") {
    const auto out = temp_dir("train0");
    REQUIRE(run("train " + tiny_train_flags(0) + " --out " + out.string()) == 0);
    CHECK(fs::exists(out / "checkpoint_init.bin"));
    CHECK(fs::exists(out / "checkpoint_final.bin"));
    CHECK(slurp(out / "metrics.csv") == "iteration,noisy_loss,clean_loss,val_dice,alpha,eta\n");
    const Params init = load_tensors((out / "checkpoint_init.bin").string());
    const Params fin = load_tensors((out / "checkpoint_final.bin").string());
    for (size_t i = 0; i < init.size(); ++i) CHECK(init.tensors[i].data == fin.tensors[i].data);
}

TEST_CASE("two runs with the same config produce identical metrics files") {
    const auto a = temp_dir("det_a");
    const auto b = temp_dir("det_b");
    REQUIRE(run("train " + tiny_train_flags() + " --out " + a.string()) == 0);
    REQUIRE(run("train " + tiny_train_flags() + " --out " + b.string()) == 0);
    CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
    CHECK(slurp(a / "checkpoint_final.bin") == slurp(b / "checkpoint_final.bin"));
}

TEST_CASE("a saved config file reproduces its run") {
    const auto a = temp_dir("cfg_a");
    const auto b = temp_dir("cfg_b");
    REQUIRE(run("train " + tiny_train_flags() + " --out " + a.string()) == 0);
    REQUIRE(run("train --config " + (a / "config.ini").string() + " --out " + b.string()) == 0);
    CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
}

TEST_CASE("eval reports per-image dice for a finished run") {
    const auto out = temp_dir("eval_run");
    REQUIRE(run("train " + tiny_train_flags() + " --out " + out.string()) == 0);
    REQUIRE(run("eval --run " + out.string() + " --out " + (out / "re_eval.csv").string()) == 0);
    const std::string csv = slurp(out / "re_eval.csv");
    CHECK(csv.rfind("id,dice", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + 3 test images
    // re-evaluating the final checkpoint reproduces the run's own eval
    CHECK(csv == slurp(out / "eval.csv"));
}

TEST_CASE("eval rejects a checkpoint from a different architecture") {
    const auto big = temp_dir("eval_big");
    const auto small = temp_dir("eval_small");
    REQUIRE(run("train " + tiny_train_flags() + " --out " + small.string()) == 0);
    REQUIRE(run("train --n 30 --side 16 --K 4 --M 16 --val-count 3 --test-count 3 --depth 2 "
                "--base-channels 4 --iterations 0 --eval-interval 2 --seed 5 --out " +
                big.string()) == 0);
    CHECK(run("eval --run " + small.string() + " --checkpoint " +
              (big / "checkpoint_final.bin").string()) == 1);
}

TEST_CASE("resume continues to the configured horizon") {
    const auto leg1 = temp_dir("res_leg1");
    const auto leg2 = temp_dir("res_leg2");
    const auto full = temp_dir("res_full");
    REQUIRE(run("train " + tiny_train_flags(2) + " --out " + leg1.string()) == 0);
    REQUIRE(run("train " + tiny_train_flags(4) + " --out " + leg2.string() +
                " --resume " + (leg1 / "state_final.bin").string()) == 0);
    REQUIRE(run("train " + tiny_train_flags(4) + " --out " + full.string()) == 0);
    CHECK(slurp(leg2 / "checkpoint_final.bin") == slurp(full / "checkpoint_final.bin"));
}

TEST_CASE("sweep aggregates one row per mode") {
    const auto out = temp_dir("sweep");
    REQUIRE(run("sweep --n 30 --side 16 --K 4 --M 16 --val-count 3 --test-count 3 --depth 1 "
                "--base-channels 2 --iterations 2 --eval-interval 0 --clean-batch 3 "
                "--k-list 4 --repeats 1 --jobs 2 --out " +
                out.string()) == 0);
    const std::string cells = slurp(out / "sweep.csv");
    CHECK(cells.rfind("clean_count,mode,mean_dice,sd_dice,seeds", 0) == 0);
    CHECK(std::count(cells.begin(), cells.end(), '\n') == 4);  // header + 3 modes
    CHECK(fs::exists(out / "sweep_runs.csv"));
}

TEST_CASE("contract violations exit with code 1") {
    CHECK(run("train " + tiny_train_flags() + " --mode bogus --out /tmp/srw_noop3") == 1);
    CHECK(run("train " + tiny_train_flags() + " --alpha 0 --out /tmp/srw_noop4") == 1);
}
