#pragma once

#include "srw/tensor.hpp"

namespace srw {

// SGD with momentum and decoupled-from-nothing weight decay:
//   velocity <- m*velocity + grad + wd*param
//   param    <- param - lr*velocity
struct OptimState {
    std::vector<Tensor> velocity;
    double lr = 1e-4;
    double momentum = 0.99;
    double weight_decay = 5e-5;

    static OptimState init(const Params& params, double lr, double momentum, double weight_decay);
};

void sgd_step(Params& params, const Params& grads, OptimState& state);

}  // namespace srw
