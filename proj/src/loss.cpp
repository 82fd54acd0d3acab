#include "srw/loss.hpp"

#include <algorithm>
#include <cmath>

namespace srw {

namespace {
constexpr double kProbClamp = 1e-12;

void check_prob_mask(const Tensor& prob, const Tensor& mask, const char* who) {
    require(prob.shape.size() == 4 && prob.shape[1] == 2,
            std::string(who) + ": prob must be [B,2,H,W]");
    require(mask.shape.size() == 3 && mask.shape[0] == prob.shape[0] &&
                mask.shape[1] == prob.shape[2] && mask.shape[2] == prob.shape[3],
            std::string(who) + ": prob/mask shapes disagree");
}
}  // namespace

Tensor pixel_ce(const Tensor& prob, const Tensor& mask) {
    check_prob_mask(prob, mask, "pixel_ce");
    const int64_t B = prob.shape[0], plane = prob.shape[2] * prob.shape[3];
    Tensor out = Tensor::zeros(mask.shape);
    for (int64_t i = 0; i < B; ++i) {
        const double* p0 = prob.data.data() + i * 2 * plane;
        const double* p1 = p0 + plane;
        const double* m = mask.data.data() + i * plane;
        double* y = out.data.data() + i * plane;
        for (int64_t q = 0; q < plane; ++q) {
            require(m[q] == 0.0 || m[q] == 1.0, "pixel_ce: mask values must be 0 or 1");
            const double py = m[q] == 1.0 ? p1[q] : p0[q];
            y[q] = -std::log(std::max(py, kProbClamp));
        }
    }
    return out;
}

double clean_loss(const Tensor& prob, const Tensor& mask) {
    check_prob_mask(prob, mask, "clean_loss");
    require(prob.shape[0] >= 1, "clean_loss: batch must be nonempty");
    const Tensor lm = pixel_ce(prob, mask);
    double acc = 0.0;
    for (double v : lm.data) acc += v;
    return acc / static_cast<double>(lm.numel());
}

double weighted_loss(const Tensor& lossmaps, const Tensor& weights) {
    require(lossmaps.same_shape(weights), "weighted_loss: loss/weight shapes disagree");
    for (double w : weights.data) require(w >= 0.0, "weighted_loss: weights must be nonnegative");
    double acc = 0.0;
    for (size_t i = 0; i < lossmaps.data.size(); ++i) acc += weights.data[i] * lossmaps.data[i];
    return acc;
}

double dice(const Tensor& pred, const Tensor& gt) {
    require(pred.same_shape(gt), "dice: mask shapes disagree");
    int64_t inter = 0, a = 0, b = 0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const bool pa = pred.data[i] != 0.0;
        const bool pb = gt.data[i] != 0.0;
        a += pa;
        b += pb;
        inter += pa && pb;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

Tensor threshold_prob(const Tensor& probs) {
    require(probs.shape.size() == 4 && probs.shape[1] == 2, "threshold: probs must be [B,2,H,W]");
    const int64_t B = probs.shape[0], plane = probs.shape[2] * probs.shape[3];
    Tensor out = Tensor::zeros({B, probs.shape[2], probs.shape[3]});
    for (int64_t i = 0; i < B; ++i) {
        const double* p1 = probs.data.data() + (i * 2 + 1) * plane;
        double* y = out.data.data() + i * plane;
        for (int64_t q = 0; q < plane; ++q) y[q] = p1[q] > 0.5 ? 1.0 : 0.0;
    }
    return out;
}

int build_clean_loss(Tape& tape, int prob_node, Tensor masks) {
    const int64_t n = masks.numel();
    const int lm = tape.pixel_ce(prob_node, std::move(masks));
    return tape.scale(tape.sum(lm), 1.0 / static_cast<double>(n));
}

int build_weighted_loss(Tape& tape, int lossmap_node, int weight_node) {
    for (double w : tape.value(weight_node).data) {
        require(w >= 0.0, "weighted_loss: weights must be nonnegative");
    }
    return tape.sum(tape.mul(lossmap_node, weight_node));
}

}  // namespace srw
