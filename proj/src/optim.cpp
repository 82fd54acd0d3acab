#include "srw/optim.hpp"

namespace srw {

OptimState OptimState::init(const Params& params, double lr, double momentum, double weight_decay) {
    OptimState s;
    s.lr = lr;
    s.momentum = momentum;
    s.weight_decay = weight_decay;
    s.velocity.reserve(params.size());
    for (const auto& t : params.tensors) s.velocity.push_back(Tensor::zeros(t.shape));
    return s;
}

void sgd_step(Params& params, const Params& grads, OptimState& state) {
    require(grads.same_shapes(params), "sgd_step: gradient shapes must mirror params");
    require(state.velocity.size() == params.size(), "sgd_step: optimizer state shape mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params.tensors[i];
        const Tensor& g = grads.tensors[i];
        Tensor& v = state.velocity[i];
        require(v.same_shape(p), "sgd_step: velocity shape mismatch");
        for (size_t k = 0; k < p.data.size(); ++k) {
            v.data[k] = state.momentum * v.data[k] + g.data[k] + state.weight_decay * p.data[k];
            p.data[k] -= state.lr * v.data[k];
        }
    }
}

}  // namespace srw
