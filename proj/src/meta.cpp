#include "srw/meta.hpp"

#include <algorithm>
#include <cmath>

#include "srw/rng.hpp"

namespace srw {

namespace {

void check_batch(const Batch& b, const NetConfig& cfg, const char* who) {
    require(b.images.shape.size() == 4 && b.images.shape[1] == cfg.in_channels &&
                b.images.shape[2] == cfg.image_side && b.images.shape[3] == cfg.image_side,
            std::string(who) + ": batch images must be [B,C,side,side]");
    require(b.masks.shape.size() == 3 && b.masks.shape[0] == b.images.shape[0] &&
                b.masks.shape[1] == b.images.shape[2] && b.masks.shape[2] == b.images.shape[3],
            std::string(who) + ": batch masks must mirror image geometry");
}

Params make_grads(const Params& params, std::vector<Tensor> grads) {
    Params g;
    for (size_t i = 0; i < params.size(); ++i) g.add(params.names[i], std::move(grads[i]));
    return g;
}

}  // namespace

void Hyper::validate() const {
    require(alpha > 0.0 && eta > 0.0, "hyper: learning rates must be positive");
    require(noisy_batch >= 1 && clean_batch >= 1, "hyper: batch sizes must be >= 1");
    require(momentum >= 0.0 && weight_decay >= 0.0,
            "hyper: momentum and weight decay must be nonnegative");
    require(iterations >= 0, "hyper: iterations must be nonnegative");
    require(lr_patience >= 1, "hyper: lr patience must be >= 1");
}

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "reweight") return TrainMode::Reweight;
    if (s == "plain") return TrainMode::Plain;
    if (s == "fine_tune") return TrainMode::FineTune;
    if (s == "per_image") return TrainMode::PerImage;
    throw ContractViolation("train: unknown mode '" + s +
                            "' (expected reweight, plain, fine_tune or per_image)");
}

const char* train_mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::Reweight: return "reweight";
        case TrainMode::Plain: return "plain";
        case TrainMode::FineTune: return "fine_tune";
        case TrainMode::PerImage: return "per_image";
    }
    return "unknown";
}

Params virtual_step(const NetConfig& cfg, const Params& theta, const Batch& noisy,
                    const Tensor& w0, double alpha) {
    check_batch(noisy, cfg, "virtual_step");
    require(w0.same_shape(noisy.masks), "virtual_step: weight map must mirror batch masks");
    bool all_zero = true;
    for (double v : w0.data) {
        require(v >= 0.0, "virtual_step: weights must be nonnegative");
        if (v != 0.0) all_zero = false;
    }
    // zero weights (or a zero step) give exactly theta
    if (all_zero || alpha == 0.0) return theta;

    const BuildFn f = [&](Tape& tape, const std::vector<int>& leaves) {
        const int prob = build_forward(tape, cfg, leaves, noisy.images);
        const int lm = tape.pixel_ce(prob, noisy.masks);
        return build_weighted_loss(tape, lm, tape.leaf(w0));
    };
    const Params g = grad(f, theta);
    Params out = theta;
    for (size_t i = 0; i < out.size(); ++i) {
        for (size_t k = 0; k < out.tensors[i].data.size(); ++k) {
            out.tensors[i].data[k] -= alpha * g.tensors[i].data[k];
        }
    }
    return out;
}

Tensor meta_weight_gradient(const BuildFn& lossmap_fn, const BuildFn& clean_fn,
                            const Params& theta_t, const Params& theta_hat, double alpha,
                            double* clean_loss_out) {
    require(theta_hat.same_shapes(theta_t), "weight_grad: provisional/current params disagree");

    Params gc;
    {
        Tape tape;
        std::vector<int> leaves;
        leaves.reserve(theta_hat.size());
        for (const auto& t : theta_hat.tensors) leaves.push_back(tape.leaf(t));
        const int out = clean_fn(tape, leaves);
        require(tape.value(out).numel() == 1, "weight_grad: clean objective must be scalar");
        if (clean_loss_out) *clean_loss_out = tape.value(out).data[0];
        gc = make_grads(theta_hat, tape.gradients(out, leaves));
    }
    for (const auto& t : gc.tensors) {
        if (!t.all_finite()) throw NumericalError("weight_grad: non-finite clean gradient");
    }

    Params tangent = gc;
    for (auto& t : tangent.tensors) {
        for (auto& v : t.data) v = -alpha * v;
    }
    return jvp(lossmap_fn, theta_t, tangent);
}

Tensor weight_grad(const NetConfig& cfg, const Params& theta_t, const Params& theta_hat,
                   const Batch& noisy, const Batch& clean, double alpha, double* clean_loss_out) {
    check_batch(noisy, cfg, "weight_grad");
    check_batch(clean, cfg, "weight_grad");
    const BuildFn lossmap_fn = [&](Tape& tape, const std::vector<int>& leaves) {
        const int prob = build_forward(tape, cfg, leaves, noisy.images);
        return tape.pixel_ce(prob, noisy.masks);
    };
    const BuildFn clean_fn = [&](Tape& tape, const std::vector<int>& leaves) {
        const int prob = build_forward(tape, cfg, leaves, clean.images);
        return build_clean_loss(tape, prob, clean.masks);
    };
    return meta_weight_gradient(lossmap_fn, clean_fn, theta_t, theta_hat, alpha, clean_loss_out);
}

Tensor rectify_normalize(const Tensor& u) {
    Tensor w = Tensor::zeros(u.shape);
    double total = 0.0;
    for (size_t i = 0; i < u.data.size(); ++i) {
        const double v = u.data[i] > 0.0 ? u.data[i] : 0.0;
        w.data[i] = v;
    }
    for (double v : w.data) total += v;
    if (total == 0.0) return w;
    for (auto& v : w.data) v /= total;
    return w;
}

Tensor rectify_normalize_per_image(const Tensor& u) {
    require(u.shape.size() == 3, "rectify_normalize_per_image: expected [B,H,W]");
    const int64_t B = u.shape[0], plane = u.shape[1] * u.shape[2];
    std::vector<double> lam(static_cast<size_t>(B), 0.0);
    double total = 0.0;
    for (int64_t i = 0; i < B; ++i) {
        double s = 0.0;
        const double* p = u.data.data() + i * plane;
        for (int64_t q = 0; q < plane; ++q) s += p[q];
        lam[static_cast<size_t>(i)] = s > 0.0 ? s : 0.0;
        total += lam[static_cast<size_t>(i)];
    }
    Tensor w = Tensor::zeros(u.shape);
    if (total == 0.0) return w;
    for (int64_t i = 0; i < B; ++i) {
        const double v = lam[static_cast<size_t>(i)] / (total * static_cast<double>(plane));
        double* p = w.data.data() + i * plane;
        for (int64_t q = 0; q < plane; ++q) p[q] = v;
    }
    return w;
}

TrainState init_train_state(const NetConfig& cfg, const Hyper& hy) {
    TrainState st;
    st.net = cfg;
    st.params = init_params(cfg);
    st.opt = OptimState::init(st.params, hy.alpha, hy.momentum, hy.weight_decay);
    st.alpha = hy.alpha;
    st.eta = hy.eta;
    return st;
}

StepStats train_step(TrainState& st, const Batch& noisy, const Batch& clean, const Hyper& hy,
                     bool per_image) {
    check_batch(noisy, st.net, "train_step");
    check_batch(clean, st.net, "train_step");

    const Tensor w0 = Tensor::zeros(noisy.masks.shape);
    const Params theta_hat = virtual_step(st.net, st.params, noisy, w0, st.alpha);

    double clean_loss_value = 0.0;
    const Tensor wg =
        weight_grad(st.net, st.params, theta_hat, noisy, clean, st.alpha, &clean_loss_value);

    Tensor u = Tensor::zeros(wg.shape);
    for (size_t i = 0; i < u.data.size(); ++i) u.data[i] = -st.eta * wg.data[i];
    Tensor w = per_image ? rectify_normalize_per_image(u) : rectify_normalize(u);

    Tape tape;
    std::vector<int> leaves;
    leaves.reserve(st.params.size());
    for (const auto& t : st.params.tensors) leaves.push_back(tape.leaf(t));
    const int prob = build_forward(tape, st.net, leaves, noisy.images);
    const int lm = tape.pixel_ce(prob, noisy.masks);
    const int loss = build_weighted_loss(tape, lm, tape.leaf(w));
    Params grads = make_grads(st.params, tape.gradients(loss, leaves));

    st.opt.lr = st.alpha;
    st.opt.momentum = hy.momentum;
    st.opt.weight_decay = hy.weight_decay;
    sgd_step(st.params, grads, st.opt);
    st.iteration += 1;

    StepStats stats;
    stats.noisy_loss = tape.value(loss).data[0];
    stats.clean_loss = clean_loss_value;
    stats.weight_map = std::move(w);
    return stats;
}

StepStats plain_step(TrainState& st, const Batch& batch, const Hyper& hy) {
    check_batch(batch, st.net, "plain_step");
    Tape tape;
    std::vector<int> leaves;
    leaves.reserve(st.params.size());
    for (const auto& t : st.params.tensors) leaves.push_back(tape.leaf(t));
    const int prob = build_forward(tape, st.net, leaves, batch.images);
    const int loss = build_clean_loss(tape, prob, batch.masks);
    Params grads = make_grads(st.params, tape.gradients(loss, leaves));

    st.opt.lr = st.alpha;
    st.opt.momentum = hy.momentum;
    st.opt.weight_decay = hy.weight_decay;
    sgd_step(st.params, grads, st.opt);
    st.iteration += 1;

    StepStats stats;
    stats.noisy_loss = tape.value(loss).data[0];
    return stats;
}

Batch sample_batch(const std::vector<Sample>& pool, int batch_size, bool noisy_labels,
                   uint64_t seed, uint64_t stream, int64_t iteration,
                   std::vector<int64_t>* indices_out) {
    require(!pool.empty(), "sample_batch: pool is empty");
    require(batch_size >= 1, "sample_batch: batch size must be >= 1");
    Rng rng(mix_seed(mix_seed(seed, stream), static_cast<uint64_t>(iteration)));

    const Tensor& proto = pool.front().image;
    const int64_t side = proto.shape[1];
    Batch b;
    b.images = Tensor::zeros({batch_size, proto.shape[0], side, side});
    b.masks = Tensor::zeros({batch_size, side, side});
    if (indices_out) indices_out->clear();
    for (int i = 0; i < batch_size; ++i) {
        const int64_t idx = rng.uniform_int(static_cast<int64_t>(pool.size()));
        if (indices_out) indices_out->push_back(idx);
        const Sample& s = pool[static_cast<size_t>(idx)];
        const Tensor& mask = noisy_labels ? s.noisy_mask : s.clean_mask;
        require(mask.numel() > 0, "sample_batch: sample is missing the requested mask");
        std::copy(s.image.data.begin(), s.image.data.end(),
                  b.images.data.begin() + static_cast<int64_t>(i) * s.image.numel());
        std::copy(mask.data.begin(), mask.data.end(),
                  b.masks.data.begin() + static_cast<int64_t>(i) * mask.numel());
    }
    return b;
}

double validation_dice(const NetConfig& cfg, const Params& params,
                       const std::vector<Sample>& samples) {
    if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
    const int64_t V = static_cast<int64_t>(samples.size());
    const int64_t side = cfg.image_side;
    Tensor images = Tensor::zeros({V, cfg.in_channels, side, side});
    for (int64_t i = 0; i < V; ++i) {
        const Sample& s = samples[static_cast<size_t>(i)];
        std::copy(s.image.data.begin(), s.image.data.end(),
                  images.data.begin() + i * s.image.numel());
    }
    const Tensor probs = forward(cfg, params, images);
    const Tensor preds = threshold_prob(probs);
    const int64_t plane = side * side;
    double acc = 0.0;
    for (int64_t i = 0; i < V; ++i) {
        Tensor pred = Tensor::zeros({side, side});
        std::copy_n(preds.data.begin() + i * plane, plane, pred.data.begin());
        acc += dice(pred, samples[static_cast<size_t>(i)].clean_mask);
    }
    return acc / static_cast<double>(V);
}

TrainResult train(const DatasetSplit& split, const NetConfig& cfg, const Hyper& hy, TrainMode mode,
                  int64_t eval_interval, const StepCallback& callback, TrainState* resume_from) {
    cfg.validate();
    hy.validate();
    require(!split.noisy.empty(), "train: noisy pool is empty");
    const bool needs_clean =
        mode == TrainMode::Reweight || mode == TrainMode::PerImage || mode == TrainMode::FineTune;
    if (needs_clean) require(!split.clean.empty(), "train: this mode requires a clean pool");

    TrainResult result;
    result.state = resume_from ? *resume_from : init_train_state(cfg, hy);
    TrainState& st = result.state;
    require(st.params.numel() == count_params(cfg),
            "train: resume state incompatible with config");

    const int64_t ft_pretrain =
        hy.fine_tune_pretrain >= 0 ? hy.fine_tune_pretrain : hy.iterations / 2;

    std::vector<int64_t> noisy_indices;
    while (st.iteration < hy.iterations) {
        const int64_t it = st.iteration;  // 0-based before the step
        StepStats stats;
        noisy_indices.clear();
        switch (mode) {
            case TrainMode::Plain: {
                const Batch b =
                    sample_batch(split.noisy, hy.noisy_batch, true, hy.seed, 1, it, &noisy_indices);
                stats = plain_step(st, b, hy);
                break;
            }
            case TrainMode::FineTune: {
                if (it < ft_pretrain) {
                    const Batch b = sample_batch(split.noisy, hy.noisy_batch, true, hy.seed, 1, it,
                                                 &noisy_indices);
                    stats = plain_step(st, b, hy);
                } else {
                    const Batch b = sample_batch(split.clean, hy.noisy_batch, false, hy.seed, 2, it);
                    stats = plain_step(st, b, hy);
                    stats.clean_loss = stats.noisy_loss;
                    stats.noisy_loss = std::numeric_limits<double>::quiet_NaN();
                }
                break;
            }
            case TrainMode::Reweight:
            case TrainMode::PerImage: {
                const Batch noisy =
                    sample_batch(split.noisy, hy.noisy_batch, true, hy.seed, 1, it, &noisy_indices);
                const Batch clean = sample_batch(split.clean, hy.clean_batch, false, hy.seed, 2, it);
                stats = train_step(st, noisy, clean, hy, mode == TrainMode::PerImage);
                break;
            }
        }
        if (callback) callback(st.iteration, stats, noisy_indices);

        if (eval_interval > 0 &&
            (st.iteration % eval_interval == 0 || st.iteration == hy.iterations)) {
            MetricRow row;
            row.iteration = st.iteration;
            row.noisy_loss = stats.noisy_loss;
            row.clean_loss = stats.clean_loss;
            row.val_dice = validation_dice(cfg, st.params, split.val);
            row.alpha = st.alpha;
            row.eta = st.eta;
            result.metrics.push_back(row);

            if (!split.val.empty() && std::isfinite(row.val_dice)) {
                if (row.val_dice > st.best_val_dice + 1e-12) {
                    st.best_val_dice = row.val_dice;
                    st.stall = 0;
                } else if (hy.lr_decay && ++st.stall >= hy.lr_patience) {
                    st.alpha /= 10.0;
                    st.eta /= 10.0;
                    st.stall = 0;
                }
            }
        }
    }
    return result;
}

}  // namespace srw
