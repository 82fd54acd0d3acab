#pragma once

#include <cstdint>
#include <vector>

#include "srw/graph.hpp"
#include "srw/tensor.hpp"

namespace srw {

// Miniature U-Net style encoder-decoder with a 2-class softmax head.
// Per level: conv3x3+relu then maxpool down; mirrored upsample, skip concat,
// conv3x3+relu up; 1x1 conv head.
struct NetConfig {
    int in_channels = 3;
    int base_channels = 8;
    int depth = 2;
    int image_side = 24;
    double init_sigma = 0.05;
    uint64_t seed = 0;

    void validate() const;
    int channels_at(int level) const;  // base * 2^level
};

// Parameter layout, in fixed order:
//   enc0.w enc0.b ... enc{d-1}.w enc{d-1}.b
//   bottleneck.w bottleneck.b
//   dec{d-1}.w dec{d-1}.b ... dec0.w dec0.b
//   head.w head.b
Params init_params(const NetConfig& cfg);
int64_t count_params(const NetConfig& cfg);

// Records the whole network onto the tape; images enter as a constant leaf.
// Returns the node holding softmax probabilities [B,2,H,W].
int build_forward(Tape& tape, const NetConfig& cfg, const std::vector<int>& param_nodes,
                  const Tensor& images);

// Convenience one-shot evaluation.
Tensor forward(const NetConfig& cfg, const Params& params, const Tensor& images);

}  // namespace srw
