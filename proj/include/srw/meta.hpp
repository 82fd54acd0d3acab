#pragma once

#include <functional>

#include "srw/dataset.hpp"
#include "srw/loss.hpp"
#include "srw/net.hpp"
#include "srw/optim.hpp"

namespace srw {

struct Hyper {
    double alpha = 1e-4;  // model step size
    double eta = 1e-4;    // weight-map step size
    int noisy_batch = 2;
    int clean_batch = 10;
    double momentum = 0.99;
    double weight_decay = 5e-5;
    int64_t iterations = 3000;
    uint64_t seed = 0;
    // lr schedule: divide alpha and eta by 10 after `lr_patience` validation
    // evaluations without improvement; constant rates by default.
    bool lr_decay = false;
    int lr_patience = 20;
    // fine_tune: iterations spent on the noisy pool before switching to the
    // clean pool; -1 means half the total budget.
    int64_t fine_tune_pretrain = -1;

    void validate() const;
};

enum class TrainMode { Reweight, Plain, FineTune, PerImage };

TrainMode train_mode_from_string(const std::string& s);
const char* train_mode_name(TrainMode m);

struct Batch {
    Tensor images;  // [B,3,H,W]
    Tensor masks;   // [B,H,W]
};

// Eq.-style provisional update: one plain SGD step (no momentum, no weight
// decay) on the weighted noisy loss. With an all-zero weight map this returns
// theta unchanged.
Params virtual_step(const NetConfig& cfg, const Params& theta, const Batch& noisy,
                    const Tensor& w0, double alpha);

// dL^c(theta_hat)/dw_ip for every pixel of the noisy batch, computed as a
// single forward-mode JVP of the per-pixel loss-map function at theta_t along
// tangent -alpha * grad(L^c)(theta_hat). Exact because the virtual step is
// linear in the weight map.
Tensor weight_grad(const NetConfig& cfg, const Params& theta_t, const Params& theta_hat,
                   const Batch& noisy, const Batch& clean, double alpha,
                   double* clean_loss_out = nullptr);

// Generic core behind weight_grad: lossmap_fn builds the per-pixel loss map,
// clean_fn the scalar meta objective.
Tensor meta_weight_gradient(const BuildFn& lossmap_fn, const BuildFn& clean_fn,
                            const Params& theta_t, const Params& theta_hat, double alpha,
                            double* clean_loss_out = nullptr);

// Eq.-style rectifier: elementwise max(0, u), then divide by the batch-global
// sum; all-zero stays all-zero.
Tensor rectify_normalize(const Tensor& u);

// Per-image variant (one scalar weight per image, spread uniformly over its
// pixels so the batch-global sum is still 1).
Tensor rectify_normalize_per_image(const Tensor& u);

struct TrainState {
    NetConfig net;
    Params params;
    OptimState opt;
    int64_t iteration = 0;
    double alpha = 0.0;  // current rates (lr decay may shrink them)
    double eta = 0.0;
    double best_val_dice = -1.0;
    int stall = 0;
};

TrainState init_train_state(const NetConfig& cfg, const Hyper& hy);

struct StepStats {
    double noisy_loss = std::numeric_limits<double>::quiet_NaN();
    double clean_loss = std::numeric_limits<double>::quiet_NaN();
    Tensor weight_map;  // learned W^B (empty for plain steps)
};

// One meta-training iteration: virtual step, weight gradient, rectify and
// normalize, then the real optimizer update on the reweighted objective.
StepStats train_step(TrainState& st, const Batch& noisy, const Batch& clean, const Hyper& hy,
                     bool per_image = false);

// One conventional step on the mean pixel CE of `batch`.
StepStats plain_step(TrainState& st, const Batch& batch, const Hyper& hy);

struct MetricRow {
    int64_t iteration = 0;
    double noisy_loss = std::numeric_limits<double>::quiet_NaN();
    double clean_loss = std::numeric_limits<double>::quiet_NaN();
    double val_dice = std::numeric_limits<double>::quiet_NaN();
    double alpha = 0.0;
    double eta = 0.0;
};

struct TrainResult {
    TrainState state;
    std::vector<MetricRow> metrics;
};

// Called after every iteration; iteration is 1-based, noisy_indices are the
// positions sampled from the noisy pool for this step.
using StepCallback = std::function<void(int64_t iteration, const StepStats& stats,
                                        const std::vector<int64_t>& noisy_indices)>;

double validation_dice(const NetConfig& cfg, const Params& params,
                       const std::vector<Sample>& samples);

// Full training loop over a split, in any mode. Batches are sampled uniformly
// with replacement from the pools, with per-iteration streams derived from
// (seed, stream, iteration) so resuming from a state is exact.
TrainResult train(const DatasetSplit& split, const NetConfig& cfg, const Hyper& hy, TrainMode mode,
                  int64_t eval_interval, const StepCallback& callback = nullptr,
                  TrainState* resume_from = nullptr);

Batch sample_batch(const std::vector<Sample>& pool, int batch_size, bool noisy_labels,
                   uint64_t seed, uint64_t stream, int64_t iteration,
                   std::vector<int64_t>* indices_out = nullptr);

}  // namespace srw
