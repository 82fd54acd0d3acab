#pragma once

#include "srw/graph.hpp"
#include "srw/tensor.hpp"

namespace srw {

// Per-pixel cross entropy, -log(prob of the labelled class), probability
// clamped to [1e-12, 1]. prob [B,2,H,W], mask [B,H,W] -> [B,H,W].
Tensor pixel_ce(const Tensor& prob, const Tensor& mask);

// Mean over images of the per-image mean pixel loss (images weighted equally).
double clean_loss(const Tensor& prob, const Tensor& mask);

// sum_i sum_p w_ip * loss_ip; the weight map carries its own normalization.
double weighted_loss(const Tensor& lossmaps, const Tensor& weights);

// 2|A^B| / (|A|+|B|); 1.0 when both masks are empty.
double dice(const Tensor& pred, const Tensor& gt);

// probs [B,2,H,W] -> masks [B,H,W]; lesion iff p1 > 0.5 (class 0 wins ties).
Tensor threshold_prob(const Tensor& probs);

// Tape builders used by the training loops (same math, differentiable).
int build_clean_loss(Tape& tape, int prob_node, Tensor masks);
int build_weighted_loss(Tape& tape, int lossmap_node, int weight_node);

}  // namespace srw
