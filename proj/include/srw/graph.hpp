#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "srw/tensor.hpp"

namespace srw {

// Primitive set. Every op supports one reverse (adjoint) sweep and one
// forward (tangent) sweep over the same recorded forward values.
enum class Op : uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    Log,
    Relu,
    Conv3x3,    // stride 1, zero padding 1
    Conv1x1,
    MaxPool2,
    Upsample2,  // nearest neighbor x2
    ConcatC,    // along channel axis of [B,C,H,W]
    Concat0,    // along axis 0
    Softmax2,   // per-pixel 2-class softmax over channel axis of [B,2,H,W]
    PixelCe,    // -log(prob of labelled class), probability clamped at 1e-12
    Sum,        // full reduction to a scalar, fixed left-to-right order
};

const char* op_name(Op op);

// Tape of primitive records in topological (creation) order. Forward values
// are computed eagerly at record time and checked finite; a non-finite result
// raises NumericalError naming the offending primitive.
class Tape {
public:
    int leaf(Tensor value);

    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int scale(int a, double s);
    int logv(int a);
    int relu(int a);
    int conv3x3(int x, int w, int b);
    int conv1x1(int x, int w, int b);
    int maxpool2(int a);
    int upsample2(int a);
    int concat_c(int a, int b);
    int concat0(int a, int b);
    int softmax2(int a);
    int pixel_ce(int prob, Tensor masks);
    int sum(int a);

    const Tensor& value(int id) const { return node(id).value; }
    size_t size() const { return nodes_.size(); }

    // Reverse sweep from a scalar output; returns adjoints of `wrt` nodes
    // (zeros where the output does not depend on them).
    std::vector<Tensor> gradients(int out, const std::vector<int>& wrt);

    // Forward tangent sweep with seeds on the given nodes; returns the
    // tangent of `out`.
    Tensor tangent(int out, const std::vector<int>& seed_nodes, const std::vector<Tensor>& seeds);

    // nodes touched by the most recent gradients() call (test hook)
    size_t last_backward_visits() const { return last_backward_visits_; }

private:
    struct Node {
        Op op = Op::Leaf;
        int a = -1, b = -1, c = -1;
        double attr = 0.0;  // Scale factor
        Tensor value;
        Tensor aux;  // PixelCe: masks; MaxPool2: argmax codes
    };

    std::vector<Node> nodes_;
    size_t last_backward_visits_ = 0;

    int push(Node n);
    const Node& node(int id) const;
    void check_finite(const Node& n) const;
};

// Function-of-parameters wrappers over the tape.
using BuildFn = std::function<int(Tape&, const std::vector<int>&)>;

// d(scalar f)/d(params); pure, params untouched.
Params grad(const BuildFn& f, const Params& params);

// Directional derivative J.v of vector-valued f at params along tangent.
Tensor jvp(const BuildFn& f, const Params& params, const Params& tangent);

}  // namespace srw
