#include "srw/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace srw {

namespace {

constexpr double kProbClamp = 1e-12;

struct ConvDims {
    int64_t batch, cin, cout, h, w;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor& b, int ksize, const char* who) {
    require(x.shape.size() == 4, std::string(who) + ": input must be [B,C,H,W]");
    if (ksize == 3) {
        require(w.shape.size() == 4 && w.shape[2] == 3 && w.shape[3] == 3,
                std::string(who) + ": weight must be [Co,Ci,3,3]");
    } else {
        require(w.shape.size() == 2, std::string(who) + ": weight must be [Co,Ci]");
    }
    require(b.shape.size() == 1 && b.shape[0] == w.shape[0], std::string(who) + ": bias must be [Co]");
    require(w.shape[1] == x.shape[1], std::string(who) + ": input/weight channel mismatch");
    return {x.shape[0], x.shape[1], w.shape[0], x.shape[2], x.shape[3]};
}

// y[n,co,r,c] (+)= sum_{ci,dr,dc} w[co,ci,dr+1,dc+1] * x[n,ci,r+dr,c+dc], zero padded.
// Fixed ci-major accumulation order per output element keeps reductions deterministic.
void conv3x3_apply(const double* x, const double* w, const double* bias, double* y,
                   const ConvDims& d, bool accumulate) {
    const int64_t plane = d.h * d.w;
    for (int64_t n = 0; n < d.batch; ++n) {
        const double* xn = x + n * d.cin * plane;
        double* yn = y + n * d.cout * plane;
        for (int64_t co = 0; co < d.cout; ++co) {
            double* yp = yn + co * plane;
            if (!accumulate) {
                const double bv = bias ? bias[co] : 0.0;
                std::fill(yp, yp + plane, bv);
            } else if (bias) {
                const double bv = bias[co];
                for (int64_t i = 0; i < plane; ++i) yp[i] += bv;
            }
            const double* wco = w + co * d.cin * 9;
            for (int64_t ci = 0; ci < d.cin; ++ci) {
                const double* xp = xn + ci * plane;
                const double* wk = wco + ci * 9;
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        const double wv = wk[(dr + 1) * 3 + (dc + 1)];
                        const int64_t r0 = std::max<int64_t>(0, -dr);
                        const int64_t r1 = std::min<int64_t>(d.h, d.h - dr);
                        const int64_t c0 = std::max<int64_t>(0, -dc);
                        const int64_t c1 = std::min<int64_t>(d.w, d.w - dc);
                        for (int64_t r = r0; r < r1; ++r) {
                            double* yr = yp + r * d.w;
                            const double* xr = xp + (r + dr) * d.w + dc;
                            for (int64_t c = c0; c < c1; ++c) yr[c] += wv * xr[c];
                        }
                    }
                }
            }
        }
    }
}

// dx[n,ci,r,c] += sum_{co,dr,dc} w[co,ci,dr+1,dc+1] * g[n,co,r-dr,c-dc]
void conv3x3_input_grad(const double* g, const double* w, double* dx, const ConvDims& d) {
    const int64_t plane = d.h * d.w;
    for (int64_t n = 0; n < d.batch; ++n) {
        const double* gn = g + n * d.cout * plane;
        double* dxn = dx + n * d.cin * plane;
        for (int64_t ci = 0; ci < d.cin; ++ci) {
            double* dxp = dxn + ci * plane;
            for (int64_t co = 0; co < d.cout; ++co) {
                const double* gp = gn + co * plane;
                const double* wk = w + (co * d.cin + ci) * 9;
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        const double wv = wk[(dr + 1) * 3 + (dc + 1)];
                        const int64_t r0 = std::max<int64_t>(0, dr);
                        const int64_t r1 = std::min<int64_t>(d.h, d.h + dr);
                        const int64_t c0 = std::max<int64_t>(0, dc);
                        const int64_t c1 = std::min<int64_t>(d.w, d.w + dc);
                        for (int64_t r = r0; r < r1; ++r) {
                            double* dxr = dxp + r * d.w;
                            const double* gr = gp + (r - dr) * d.w - dc;
                            for (int64_t c = c0; c < c1; ++c) dxr[c] += wv * gr[c];
                        }
                    }
                }
            }
        }
    }
}

// dw[co,ci,dr+1,dc+1] += sum_{n,r,c} g[n,co,r,c] * x[n,ci,r+dr,c+dc]; db[co] += sum g
void conv3x3_weight_grad(const double* g, const double* x, double* dw, double* db,
                         const ConvDims& d) {
    const int64_t plane = d.h * d.w;
    for (int64_t n = 0; n < d.batch; ++n) {
        const double* xn = x + n * d.cin * plane;
        const double* gn = g + n * d.cout * plane;
        for (int64_t co = 0; co < d.cout; ++co) {
            const double* gp = gn + co * plane;
            double acc_b = 0.0;
            for (int64_t i = 0; i < plane; ++i) acc_b += gp[i];
            db[co] += acc_b;
            for (int64_t ci = 0; ci < d.cin; ++ci) {
                const double* xp = xn + ci * plane;
                double* wk = dw + (co * d.cin + ci) * 9;
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int64_t r0 = std::max<int64_t>(0, -dr);
                        const int64_t r1 = std::min<int64_t>(d.h, d.h - dr);
                        const int64_t c0 = std::max<int64_t>(0, -dc);
                        const int64_t c1 = std::min<int64_t>(d.w, d.w - dc);
                        double acc = 0.0;
                        for (int64_t r = r0; r < r1; ++r) {
                            const double* gr = gp + r * d.w;
                            const double* xr = xp + (r + dr) * d.w + dc;
                            for (int64_t c = c0; c < c1; ++c) acc += gr[c] * xr[c];
                        }
                        wk[(dr + 1) * 3 + (dc + 1)] += acc;
                    }
                }
            }
        }
    }
}

void conv1x1_apply(const double* x, const double* w, const double* bias, double* y,
                   const ConvDims& d, bool accumulate) {
    const int64_t plane = d.h * d.w;
    for (int64_t n = 0; n < d.batch; ++n) {
        const double* xn = x + n * d.cin * plane;
        double* yn = y + n * d.cout * plane;
        for (int64_t co = 0; co < d.cout; ++co) {
            double* yp = yn + co * plane;
            if (!accumulate) {
                const double bv = bias ? bias[co] : 0.0;
                std::fill(yp, yp + plane, bv);
            } else if (bias) {
                const double bv = bias[co];
                for (int64_t i = 0; i < plane; ++i) yp[i] += bv;
            }
            for (int64_t ci = 0; ci < d.cin; ++ci) {
                const double wv = w[co * d.cin + ci];
                const double* xp = xn + ci * plane;
                for (int64_t i = 0; i < plane; ++i) yp[i] += wv * xp[i];
            }
        }
    }
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::Log: return "log";
        case Op::Relu: return "relu";
        case Op::Conv3x3: return "conv2d3x3";
        case Op::Conv1x1: return "conv1x1";
        case Op::MaxPool2: return "maxpool2";
        case Op::Upsample2: return "upsample2";
        case Op::ConcatC: return "concat_channels";
        case Op::Concat0: return "concat0";
        case Op::Softmax2: return "softmax2";
        case Op::PixelCe: return "pixel_ce";
        case Op::Sum: return "sum";
    }
    return "unknown";
}

int Tape::push(Node n) {
    check_finite(n);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

const Tape::Node& Tape::node(int id) const {
    require(id >= 0 && id < static_cast<int>(nodes_.size()), "tape: node id out of range");
    return nodes_[static_cast<size_t>(id)];
}

void Tape::check_finite(const Node& n) const {
    if (!n.value.all_finite()) {
        throw NumericalError(std::string(op_name(n.op)) + " produced a non-finite value");
    }
}

int Tape::leaf(Tensor value) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    return push(std::move(n));
}

int Tape::add(int a, int b) {
    const Tensor& va = node(a).value;
    const Tensor& vb = node(b).value;
    require(va.same_shape(vb), "add: operand shapes differ");
    Node n;
    n.op = Op::Add;
    n.a = a;
    n.b = b;
    n.value = Tensor::zeros(va.shape);
    for (size_t i = 0; i < va.data.size(); ++i) n.value.data[i] = va.data[i] + vb.data[i];
    return push(std::move(n));
}

int Tape::sub(int a, int b) {
    const Tensor& va = node(a).value;
    const Tensor& vb = node(b).value;
    require(va.same_shape(vb), "sub: operand shapes differ");
    Node n;
    n.op = Op::Sub;
    n.a = a;
    n.b = b;
    n.value = Tensor::zeros(va.shape);
    for (size_t i = 0; i < va.data.size(); ++i) n.value.data[i] = va.data[i] - vb.data[i];
    return push(std::move(n));
}

int Tape::mul(int a, int b) {
    const Tensor& va = node(a).value;
    const Tensor& vb = node(b).value;
    require(va.same_shape(vb), "mul: operand shapes differ");
    Node n;
    n.op = Op::Mul;
    n.a = a;
    n.b = b;
    n.value = Tensor::zeros(va.shape);
    for (size_t i = 0; i < va.data.size(); ++i) n.value.data[i] = va.data[i] * vb.data[i];
    return push(std::move(n));
}

int Tape::scale(int a, double s) {
    const Tensor& va = node(a).value;
    Node n;
    n.op = Op::Scale;
    n.a = a;
    n.attr = s;
    n.value = Tensor::zeros(va.shape);
    for (size_t i = 0; i < va.data.size(); ++i) n.value.data[i] = s * va.data[i];
    return push(std::move(n));
}

int Tape::logv(int a) {
    const Tensor& va = node(a).value;
    Node n;
    n.op = Op::Log;
    n.a = a;
    n.value = Tensor::zeros(va.shape);
    for (size_t i = 0; i < va.data.size(); ++i) n.value.data[i] = std::log(va.data[i]);
    return push(std::move(n));
}

int Tape::relu(int a) {
    const Tensor& va = node(a).value;
    Node n;
    n.op = Op::Relu;
    n.a = a;
    n.value = Tensor::zeros(va.shape);
    for (size_t i = 0; i < va.data.size(); ++i) n.value.data[i] = va.data[i] > 0.0 ? va.data[i] : 0.0;
    return push(std::move(n));
}

int Tape::conv3x3(int x, int w, int b) {
    const Tensor& vx = node(x).value;
    const Tensor& vw = node(w).value;
    const Tensor& vb = node(b).value;
    const ConvDims d = conv_dims(vx, vw, vb, 3, "conv2d3x3");
    Node n;
    n.op = Op::Conv3x3;
    n.a = x;
    n.b = w;
    n.c = b;
    n.value = Tensor::zeros({d.batch, d.cout, d.h, d.w});
    conv3x3_apply(vx.data.data(), vw.data.data(), vb.data.data(), n.value.data.data(), d, false);
    return push(std::move(n));
}

int Tape::conv1x1(int x, int w, int b) {
    const Tensor& vx = node(x).value;
    const Tensor& vw = node(w).value;
    const Tensor& vb = node(b).value;
    const ConvDims d = conv_dims(vx, vw, vb, 1, "conv1x1");
    Node n;
    n.op = Op::Conv1x1;
    n.a = x;
    n.b = w;
    n.c = b;
    n.value = Tensor::zeros({d.batch, d.cout, d.h, d.w});
    conv1x1_apply(vx.data.data(), vw.data.data(), vb.data.data(), n.value.data.data(), d, false);
    return push(std::move(n));
}

int Tape::maxpool2(int a) {
    const Tensor& va = node(a).value;
    require(va.shape.size() == 4, "maxpool2: input must be [B,C,H,W]");
    const int64_t B = va.shape[0], C = va.shape[1], H = va.shape[2], W = va.shape[3];
    require(H % 2 == 0 && W % 2 == 0, "maxpool2: spatial dims must be even");
    const int64_t Ho = H / 2, Wo = W / 2;
    Node n;
    n.op = Op::MaxPool2;
    n.a = a;
    n.value = Tensor::zeros({B, C, Ho, Wo});
    n.aux = Tensor::zeros({B, C, Ho, Wo});
    const double* x = va.data.data();
    double* y = n.value.data.data();
    double* arg = n.aux.data.data();
    for (int64_t nc = 0; nc < B * C; ++nc) {
        const double* xp = x + nc * H * W;
        double* yp = y + nc * Ho * Wo;
        double* ap = arg + nc * Ho * Wo;
        for (int64_t r = 0; r < Ho; ++r) {
            for (int64_t c = 0; c < Wo; ++c) {
                // choice scans (0,0),(0,1),(1,0),(1,1); first maximum wins
                const int64_t base = (2 * r) * W + 2 * c;
                double best = xp[base];
                int code = 0;
                if (xp[base + 1] > best) { best = xp[base + 1]; code = 1; }
                if (xp[base + W] > best) { best = xp[base + W]; code = 2; }
                if (xp[base + W + 1] > best) { best = xp[base + W + 1]; code = 3; }
                yp[r * Wo + c] = best;
                ap[r * Wo + c] = static_cast<double>(code);
            }
        }
    }
    return push(std::move(n));
}

int Tape::upsample2(int a) {
    const Tensor& va = node(a).value;
    require(va.shape.size() == 4, "upsample2: input must be [B,C,H,W]");
    const int64_t B = va.shape[0], C = va.shape[1], H = va.shape[2], W = va.shape[3];
    Node n;
    n.op = Op::Upsample2;
    n.a = a;
    n.value = Tensor::zeros({B, C, 2 * H, 2 * W});
    const double* x = va.data.data();
    double* y = n.value.data.data();
    for (int64_t nc = 0; nc < B * C; ++nc) {
        const double* xp = x + nc * H * W;
        double* yp = y + nc * 4 * H * W;
        for (int64_t r = 0; r < H; ++r) {
            for (int64_t c = 0; c < W; ++c) {
                const double v = xp[r * W + c];
                double* o = yp + (2 * r) * (2 * W) + 2 * c;
                o[0] = v;
                o[1] = v;
                o[2 * W] = v;
                o[2 * W + 1] = v;
            }
        }
    }
    return push(std::move(n));
}

int Tape::concat_c(int a, int b) {
    const Tensor& va = node(a).value;
    const Tensor& vb = node(b).value;
    require(va.shape.size() == 4 && vb.shape.size() == 4, "concat_channels: inputs must be [B,C,H,W]");
    require(va.shape[0] == vb.shape[0] && va.shape[2] == vb.shape[2] && va.shape[3] == vb.shape[3],
            "concat_channels: batch/spatial dims differ");
    const int64_t B = va.shape[0], Ca = va.shape[1], Cb = vb.shape[1];
    const int64_t plane = va.shape[2] * va.shape[3];
    Node n;
    n.op = Op::ConcatC;
    n.a = a;
    n.b = b;
    n.value = Tensor::zeros({B, Ca + Cb, va.shape[2], va.shape[3]});
    double* y = n.value.data.data();
    for (int64_t i = 0; i < B; ++i) {
        std::memcpy(y + i * (Ca + Cb) * plane, va.data.data() + i * Ca * plane,
                    static_cast<size_t>(Ca * plane) * sizeof(double));
        std::memcpy(y + (i * (Ca + Cb) + Ca) * plane, vb.data.data() + i * Cb * plane,
                    static_cast<size_t>(Cb * plane) * sizeof(double));
    }
    return push(std::move(n));
}

int Tape::concat0(int a, int b) {
    const Tensor& va = node(a).value;
    const Tensor& vb = node(b).value;
    require(!va.shape.empty() && va.shape.size() == vb.shape.size(), "concat0: rank mismatch");
    for (size_t i = 1; i < va.shape.size(); ++i) {
        require(va.shape[i] == vb.shape[i], "concat0: trailing dims differ");
    }
    std::vector<int64_t> shape = va.shape;
    shape[0] += vb.shape[0];
    Node n;
    n.op = Op::Concat0;
    n.a = a;
    n.b = b;
    n.value = Tensor::zeros(shape);
    std::memcpy(n.value.data.data(), va.data.data(), va.data.size() * sizeof(double));
    std::memcpy(n.value.data.data() + va.data.size(), vb.data.data(), vb.data.size() * sizeof(double));
    return push(std::move(n));
}

int Tape::softmax2(int a) {
    const Tensor& va = node(a).value;
    require(va.shape.size() == 4 && va.shape[1] == 2, "softmax2: input must be [B,2,H,W]");
    const int64_t B = va.shape[0], plane = va.shape[2] * va.shape[3];
    Node n;
    n.op = Op::Softmax2;
    n.a = a;
    n.value = Tensor::zeros(va.shape);
    const double* x = va.data.data();
    double* y = n.value.data.data();
    for (int64_t i = 0; i < B; ++i) {
        const double* z0 = x + i * 2 * plane;
        const double* z1 = z0 + plane;
        double* p0 = y + i * 2 * plane;
        double* p1 = p0 + plane;
        for (int64_t p = 0; p < plane; ++p) {
            const double m = std::max(z0[p], z1[p]);
            const double e0 = std::exp(z0[p] - m);
            const double e1 = std::exp(z1[p] - m);
            const double s = e0 + e1;
            p0[p] = e0 / s;
            p1[p] = e1 / s;
        }
    }
    return push(std::move(n));
}

int Tape::pixel_ce(int prob, Tensor masks) {
    const Tensor& vp = node(prob).value;
    require(vp.shape.size() == 4 && vp.shape[1] == 2, "pixel_ce: prob must be [B,2,H,W]");
    require(masks.shape.size() == 3, "pixel_ce: mask must be [B,H,W]");
    require(masks.shape[0] == vp.shape[0] && masks.shape[1] == vp.shape[2] &&
                masks.shape[2] == vp.shape[3],
            "pixel_ce: prob/mask shapes disagree");
    for (double v : masks.data) require(v == 0.0 || v == 1.0, "pixel_ce: mask values must be 0 or 1");
    const int64_t B = vp.shape[0], plane = vp.shape[2] * vp.shape[3];
    Node n;
    n.op = Op::PixelCe;
    n.a = prob;
    n.value = Tensor::zeros(masks.shape);
    n.aux = std::move(masks);
    const double* p = vp.data.data();
    const double* m = n.aux.data.data();
    double* y = n.value.data.data();
    for (int64_t i = 0; i < B; ++i) {
        const double* p0 = p + i * 2 * plane;
        const double* p1 = p0 + plane;
        const double* mi = m + i * plane;
        double* yi = y + i * plane;
        for (int64_t q = 0; q < plane; ++q) {
            const double py = mi[q] == 1.0 ? p1[q] : p0[q];
            yi[q] = -std::log(std::max(py, kProbClamp));
        }
    }
    return push(std::move(n));
}

int Tape::sum(int a) {
    const Tensor& va = node(a).value;
    double acc = 0.0;
    for (double v : va.data) acc += v;
    Node n;
    n.op = Op::Sum;
    n.a = a;
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
}

std::vector<Tensor> Tape::gradients(int out, const std::vector<int>& wrt) {
    const Node& on = node(out);
    require(on.value.numel() == 1, "gradients: output must be a scalar");
    std::vector<Tensor> adj(nodes_.size());
    auto bump = [&](int id) -> Tensor& {
        Tensor& t = adj[static_cast<size_t>(id)];
        if (t.data.empty()) t = Tensor::zeros(nodes_[static_cast<size_t>(id)].value.shape);
        return t;
    };
    bump(out).data[0] = 1.0;

    last_backward_visits_ = 0;
    for (int i = out; i >= 0; --i) {
        Tensor& g = adj[static_cast<size_t>(i)];
        if (g.data.empty()) continue;
        ++last_backward_visits_;
        const Node& n = nodes_[static_cast<size_t>(i)];
        if (!g.all_finite()) {
            throw NumericalError(std::string(op_name(n.op)) + " produced a non-finite gradient");
        }
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Add: {
                Tensor& ga = bump(n.a);
                Tensor& gb = bump(n.b);
                for (size_t k = 0; k < g.data.size(); ++k) {
                    ga.data[k] += g.data[k];
                    gb.data[k] += g.data[k];
                }
                break;
            }
            case Op::Sub: {
                Tensor& ga = bump(n.a);
                Tensor& gb = bump(n.b);
                for (size_t k = 0; k < g.data.size(); ++k) {
                    ga.data[k] += g.data[k];
                    gb.data[k] -= g.data[k];
                }
                break;
            }
            case Op::Mul: {
                const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
                const Tensor& vb = nodes_[static_cast<size_t>(n.b)].value;
                Tensor& ga = bump(n.a);
                Tensor& gb = bump(n.b);
                for (size_t k = 0; k < g.data.size(); ++k) {
                    ga.data[k] += g.data[k] * vb.data[k];
                    gb.data[k] += g.data[k] * va.data[k];
                }
                break;
            }
            case Op::Scale: {
                Tensor& ga = bump(n.a);
                for (size_t k = 0; k < g.data.size(); ++k) ga.data[k] += n.attr * g.data[k];
                break;
            }
            case Op::Log: {
                const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
                Tensor& ga = bump(n.a);
                for (size_t k = 0; k < g.data.size(); ++k) ga.data[k] += g.data[k] / va.data[k];
                break;
            }
            case Op::Relu: {
                const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
                Tensor& ga = bump(n.a);
                for (size_t k = 0; k < g.data.size(); ++k) {
                    if (va.data[k] > 0.0) ga.data[k] += g.data[k];
                }
                break;
            }
            case Op::Conv3x3: {
                const Tensor& vx = nodes_[static_cast<size_t>(n.a)].value;
                const Tensor& vw = nodes_[static_cast<size_t>(n.b)].value;
                const Tensor& vb = nodes_[static_cast<size_t>(n.c)].value;
                const ConvDims d = conv_dims(vx, vw, vb, 3, "conv2d3x3");
                conv3x3_input_grad(g.data.data(), vw.data.data(), bump(n.a).data.data(), d);
                conv3x3_weight_grad(g.data.data(), vx.data.data(), bump(n.b).data.data(),
                                    bump(n.c).data.data(), d);
                break;
            }
            case Op::Conv1x1: {
                const Tensor& vx = nodes_[static_cast<size_t>(n.a)].value;
                const Tensor& vw = nodes_[static_cast<size_t>(n.b)].value;
                const Tensor& vb = nodes_[static_cast<size_t>(n.c)].value;
                const ConvDims d = conv_dims(vx, vw, vb, 1, "conv1x1");
                const int64_t plane = d.h * d.w;
                Tensor& gx = bump(n.a);
                Tensor& gw = bump(n.b);
                Tensor& gb = bump(n.c);
                for (int64_t nb = 0; nb < d.batch; ++nb) {
                    for (int64_t co = 0; co < d.cout; ++co) {
                        const double* gp = g.data.data() + (nb * d.cout + co) * plane;
                        double acc_b = 0.0;
                        for (int64_t q = 0; q < plane; ++q) acc_b += gp[q];
                        gb.data[static_cast<size_t>(co)] += acc_b;
                        for (int64_t ci = 0; ci < d.cin; ++ci) {
                            const double wv = vw.data[static_cast<size_t>(co * d.cin + ci)];
                            const double* xp = vx.data.data() + (nb * d.cin + ci) * plane;
                            double* gxp = gx.data.data() + (nb * d.cin + ci) * plane;
                            double acc_w = 0.0;
                            for (int64_t q = 0; q < plane; ++q) {
                                gxp[q] += wv * gp[q];
                                acc_w += gp[q] * xp[q];
                            }
                            gw.data[static_cast<size_t>(co * d.cin + ci)] += acc_w;
                        }
                    }
                }
                break;
            }
            case Op::MaxPool2: {
                const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
                const int64_t W = va.shape[3];
                const int64_t Ho = n.value.shape[2], Wo = n.value.shape[3];
                Tensor& ga = bump(n.a);
                for (int64_t nc = 0; nc < n.value.shape[0] * n.value.shape[1]; ++nc) {
                    const double* gp = g.data.data() + nc * Ho * Wo;
                    const double* ap = n.aux.data.data() + nc * Ho * Wo;
                    double* gap = ga.data.data() + nc * va.shape[2] * W;
                    for (int64_t r = 0; r < Ho; ++r) {
                        for (int64_t c = 0; c < Wo; ++c) {
                            const int code = static_cast<int>(ap[r * Wo + c]);
                            const int64_t rr = 2 * r + (code >> 1);
                            const int64_t cc = 2 * c + (code & 1);
                            gap[rr * W + cc] += gp[r * Wo + c];
                        }
                    }
                }
                break;
            }
            case Op::Upsample2: {
                const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
                const int64_t H = va.shape[2], W = va.shape[3];
                Tensor& ga = bump(n.a);
                for (int64_t nc = 0; nc < va.shape[0] * va.shape[1]; ++nc) {
                    const double* gp = g.data.data() + nc * 4 * H * W;
                    double* gap = ga.data.data() + nc * H * W;
                    for (int64_t r = 0; r < H; ++r) {
                        for (int64_t c = 0; c < W; ++c) {
                            const double* o = gp + (2 * r) * (2 * W) + 2 * c;
                            gap[r * W + c] += o[0] + o[1] + o[2 * W] + o[2 * W + 1];
                        }
                    }
                }
                break;
            }
            case Op::ConcatC: {
                const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
                const Tensor& vb = nodes_[static_cast<size_t>(n.b)].value;
                const int64_t B = va.shape[0], Ca = va.shape[1], Cb = vb.shape[1];
                const int64_t plane = va.shape[2] * va.shape[3];
                Tensor& ga = bump(n.a);
                Tensor& gb = bump(n.b);
                for (int64_t i2 = 0; i2 < B; ++i2) {
                    const double* gp = g.data.data() + i2 * (Ca + Cb) * plane;
                    double* gap = ga.data.data() + i2 * Ca * plane;
                    double* gbp = gb.data.data() + i2 * Cb * plane;
                    for (int64_t k = 0; k < Ca * plane; ++k) gap[k] += gp[k];
                    for (int64_t k = 0; k < Cb * plane; ++k) gbp[k] += gp[Ca * plane + k];
                }
                break;
            }
            case Op::Concat0: {
                const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
                Tensor& ga = bump(n.a);
                Tensor& gb = bump(n.b);
                for (size_t k = 0; k < va.data.size(); ++k) ga.data[k] += g.data[k];
                for (size_t k = 0; k < gb.data.size(); ++k) gb.data[k] += g.data[va.data.size() + k];
                break;
            }
            case Op::Softmax2: {
                const int64_t B = n.value.shape[0];
                const int64_t plane = n.value.shape[2] * n.value.shape[3];
                Tensor& ga = bump(n.a);
                for (int64_t i2 = 0; i2 < B; ++i2) {
                    const double* p0 = n.value.data.data() + i2 * 2 * plane;
                    const double* p1 = p0 + plane;
                    const double* g0 = g.data.data() + i2 * 2 * plane;
                    const double* g1 = g0 + plane;
                    double* d0 = ga.data.data() + i2 * 2 * plane;
                    double* d1 = d0 + plane;
                    for (int64_t q = 0; q < plane; ++q) {
                        const double t = p0[q] * p1[q] * (g0[q] - g1[q]);
                        d0[q] += t;
                        d1[q] -= t;
                    }
                }
                break;
            }
            case Op::PixelCe: {
                const Tensor& vp = nodes_[static_cast<size_t>(n.a)].value;
                const int64_t B = vp.shape[0], plane = vp.shape[2] * vp.shape[3];
                Tensor& ga = bump(n.a);
                for (int64_t i2 = 0; i2 < B; ++i2) {
                    const double* m = n.aux.data.data() + i2 * plane;
                    const double* gp = g.data.data() + i2 * plane;
                    for (int64_t q = 0; q < plane; ++q) {
                        const int64_t ch = m[q] == 1.0 ? 1 : 0;
                        const size_t off = static_cast<size_t>((i2 * 2 + ch) * plane + q);
                        const double p = vp.data[off];
                        if (p > kProbClamp) ga.data[off] += -gp[q] / p;
                    }
                }
                break;
            }
            case Op::Sum: {
                Tensor& ga = bump(n.a);
                const double gs = g.data[0];
                for (auto& v : ga.data) v += gs;
                break;
            }
        }
    }

    std::vector<Tensor> result;
    result.reserve(wrt.size());
    for (int id : wrt) {
        const Node& n = node(id);
        Tensor& g = adj[static_cast<size_t>(id)];
        result.push_back(g.data.empty() ? Tensor::zeros(n.value.shape) : std::move(g));
    }
    return result;
}

Tensor Tape::tangent(int out, const std::vector<int>& seed_nodes, const std::vector<Tensor>& seeds) {
    require(seed_nodes.size() == seeds.size(), "tangent: seed count mismatch");
    std::vector<Tensor> tan(nodes_.size());
    for (size_t i = 0; i < seed_nodes.size(); ++i) {
        const Node& n = node(seed_nodes[i]);
        require(seeds[i].same_shape(n.value), "tangent: seed shape does not mirror node value");
        tan[static_cast<size_t>(seed_nodes[i])] = seeds[i];
    }

    auto has = [&](int id) { return id >= 0 && !tan[static_cast<size_t>(id)].data.empty(); };
    auto get = [&](int id) -> const Tensor& { return tan[static_cast<size_t>(id)]; };

    for (int i = 0; i <= out; ++i) {
        const Node& n = nodes_[static_cast<size_t>(i)];
        if (n.op == Op::Leaf) continue;
        if (!has(n.a) && !has(n.b) && !has(n.c)) continue;
        Tensor t = Tensor::zeros(n.value.shape);
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Add: {
                if (has(n.a)) {
                    const Tensor& ta = get(n.a);
                    for (size_t k = 0; k < t.data.size(); ++k) t.data[k] += ta.data[k];
                }
                if (has(n.b)) {
                    const Tensor& tb = get(n.b);
                    for (size_t k = 0; k < t.data.size(); ++k) t.data[k] += tb.data[k];
                }
                break;
            }
            case Op::Sub: {
                if (has(n.a)) {
                    const Tensor& ta = get(n.a);
                    for (size_t k = 0; k < t.data.size(); ++k) t.data[k] += ta.data[k];
                }
                if (has(n.b)) {
                    const Tensor& tb = get(n.b);
                    for (size_t k = 0; k < t.data.size(); ++k) t.data[k] -= tb.data[k];
                }
                break;
            }
            case Op::Mul: {
                const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
                const Tensor& vb = nodes_[static_cast<size_t>(n.b)].value;
                if (has(n.a)) {
                    const Tensor& ta = get(n.a);
                    for (size_t k = 0; k < t.data.size(); ++k) t.data[k] += ta.data[k] * vb.data[k];
                }
                if (has(n.b)) {
                    const Tensor& tb = get(n.b);
                    for (size_t k = 0; k < t.data.size(); ++k) t.data[k] += va.data[k] * tb.data[k];
                }
                break;
            }
            case Op::Scale: {
                const Tensor& ta = get(n.a);
                for (size_t k = 0; k < t.data.size(); ++k) t.data[k] = n.attr * ta.data[k];
                break;
            }
            case Op::Log: {
                const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
                const Tensor& ta = get(n.a);
                for (size_t k = 0; k < t.data.size(); ++k) t.data[k] = ta.data[k] / va.data[k];
                break;
            }
            case Op::Relu: {
                const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
                const Tensor& ta = get(n.a);
                for (size_t k = 0; k < t.data.size(); ++k) {
                    t.data[k] = va.data[k] > 0.0 ? ta.data[k] : 0.0;
                }
                break;
            }
            case Op::Conv3x3: {
                const Tensor& vx = nodes_[static_cast<size_t>(n.a)].value;
                const Tensor& vw = nodes_[static_cast<size_t>(n.b)].value;
                const Tensor& vb = nodes_[static_cast<size_t>(n.c)].value;
                const ConvDims d = conv_dims(vx, vw, vb, 3, "conv2d3x3");
                // d(conv) = conv(dx, w) + conv(x, dw) + db
                if (has(n.a)) {
                    conv3x3_apply(get(n.a).data.data(), vw.data.data(), nullptr, t.data.data(), d,
                                  true);
                }
                if (has(n.b)) {
                    conv3x3_apply(vx.data.data(), get(n.b).data.data(),
                                  has(n.c) ? get(n.c).data.data() : nullptr, t.data.data(), d, true);
                } else if (has(n.c)) {
                    const double* db = get(n.c).data.data();
                    const int64_t plane = d.h * d.w;
                    for (int64_t nb = 0; nb < d.batch; ++nb) {
                        for (int64_t co = 0; co < d.cout; ++co) {
                            double* tp = t.data.data() + (nb * d.cout + co) * plane;
                            for (int64_t q = 0; q < plane; ++q) tp[q] += db[co];
                        }
                    }
                }
                break;
            }
            case Op::Conv1x1: {
                const Tensor& vx = nodes_[static_cast<size_t>(n.a)].value;
                const Tensor& vw = nodes_[static_cast<size_t>(n.b)].value;
                const Tensor& vb = nodes_[static_cast<size_t>(n.c)].value;
                const ConvDims d = conv_dims(vx, vw, vb, 1, "conv1x1");
                if (has(n.a)) {
                    conv1x1_apply(get(n.a).data.data(), vw.data.data(), nullptr, t.data.data(), d,
                                  true);
                }
                if (has(n.b)) {
                    conv1x1_apply(vx.data.data(), get(n.b).data.data(),
                                  has(n.c) ? get(n.c).data.data() : nullptr, t.data.data(), d, true);
                } else if (has(n.c)) {
                    const double* db = get(n.c).data.data();
                    const int64_t plane = d.h * d.w;
                    for (int64_t nb = 0; nb < d.batch; ++nb) {
                        for (int64_t co = 0; co < d.cout; ++co) {
                            double* tp = t.data.data() + (nb * d.cout + co) * plane;
                            for (int64_t q = 0; q < plane; ++q) tp[q] += db[co];
                        }
                    }
                }
                break;
            }
            case Op::MaxPool2: {
                const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
                const Tensor& ta = get(n.a);
                const int64_t W = va.shape[3];
                const int64_t Ho = n.value.shape[2], Wo = n.value.shape[3];
                for (int64_t nc = 0; nc < n.value.shape[0] * n.value.shape[1]; ++nc) {
                    const double* ap = n.aux.data.data() + nc * Ho * Wo;
                    const double* tp = ta.data.data() + nc * va.shape[2] * W;
                    double* op = t.data.data() + nc * Ho * Wo;
                    for (int64_t r = 0; r < Ho; ++r) {
                        for (int64_t c = 0; c < Wo; ++c) {
                            const int code = static_cast<int>(ap[r * Wo + c]);
                            const int64_t rr = 2 * r + (code >> 1);
                            const int64_t cc = 2 * c + (code & 1);
                            op[r * Wo + c] = tp[rr * W + cc];
                        }
                    }
                }
                break;
            }
            case Op::Upsample2: {
                const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
                const Tensor& ta = get(n.a);
                const int64_t H = va.shape[2], W = va.shape[3];
                for (int64_t nc = 0; nc < va.shape[0] * va.shape[1]; ++nc) {
                    const double* tp = ta.data.data() + nc * H * W;
                    double* op = t.data.data() + nc * 4 * H * W;
                    for (int64_t r = 0; r < H; ++r) {
                        for (int64_t c = 0; c < W; ++c) {
                            const double v = tp[r * W + c];
                            double* o = op + (2 * r) * (2 * W) + 2 * c;
                            o[0] = v;
                            o[1] = v;
                            o[2 * W] = v;
                            o[2 * W + 1] = v;
                        }
                    }
                }
                break;
            }
            case Op::ConcatC: {
                const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
                const Tensor& vb = nodes_[static_cast<size_t>(n.b)].value;
                const int64_t B = va.shape[0], Ca = va.shape[1], Cb = vb.shape[1];
                const int64_t plane = va.shape[2] * va.shape[3];
                for (int64_t i2 = 0; i2 < B; ++i2) {
                    double* op = t.data.data() + i2 * (Ca + Cb) * plane;
                    if (has(n.a)) {
                        const double* tp = get(n.a).data.data() + i2 * Ca * plane;
                        for (int64_t k = 0; k < Ca * plane; ++k) op[k] = tp[k];
                    }
                    if (has(n.b)) {
                        const double* tp = get(n.b).data.data() + i2 * Cb * plane;
                        for (int64_t k = 0; k < Cb * plane; ++k) op[Ca * plane + k] = tp[k];
                    }
                }
                break;
            }
            case Op::Concat0: {
                const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
                if (has(n.a)) {
                    const Tensor& ta = get(n.a);
                    std::memcpy(t.data.data(), ta.data.data(), ta.data.size() * sizeof(double));
                }
                if (has(n.b)) {
                    const Tensor& tb = get(n.b);
                    std::memcpy(t.data.data() + va.data.size(), tb.data.data(),
                                tb.data.size() * sizeof(double));
                }
                break;
            }
            case Op::Softmax2: {
                const Tensor& ta = get(n.a);
                const int64_t B = n.value.shape[0];
                const int64_t plane = n.value.shape[2] * n.value.shape[3];
                for (int64_t i2 = 0; i2 < B; ++i2) {
                    const double* p0 = n.value.data.data() + i2 * 2 * plane;
                    const double* p1 = p0 + plane;
                    const double* t0 = ta.data.data() + i2 * 2 * plane;
                    const double* t1 = t0 + plane;
                    double* o0 = t.data.data() + i2 * 2 * plane;
                    double* o1 = o0 + plane;
                    for (int64_t q = 0; q < plane; ++q) {
                        const double dp = p0[q] * p1[q] * (t0[q] - t1[q]);
                        o0[q] = dp;
                        o1[q] = -dp;
                    }
                }
                break;
            }
            case Op::PixelCe: {
                const Tensor& vp = nodes_[static_cast<size_t>(n.a)].value;
                const Tensor& ta = get(n.a);
                const int64_t B = vp.shape[0], plane = vp.shape[2] * vp.shape[3];
                for (int64_t i2 = 0; i2 < B; ++i2) {
                    const double* m = n.aux.data.data() + i2 * plane;
                    double* op = t.data.data() + i2 * plane;
                    for (int64_t q = 0; q < plane; ++q) {
                        const int64_t ch = m[q] == 1.0 ? 1 : 0;
                        const size_t off = static_cast<size_t>((i2 * 2 + ch) * plane + q);
                        const double p = vp.data[off];
                        op[q] = p > kProbClamp ? -ta.data[off] / p : 0.0;
                    }
                }
                break;
            }
            case Op::Sum: {
                const Tensor& ta = get(n.a);
                double acc = 0.0;
                for (double v : ta.data) acc += v;
                t.data[0] = acc;
                break;
            }
        }
        if (!t.all_finite()) {
            throw NumericalError(std::string(op_name(n.op)) + " produced a non-finite tangent");
        }
        tan[static_cast<size_t>(i)] = std::move(t);
    }

    Tensor& r = tan[static_cast<size_t>(out)];
    return r.data.empty() ? Tensor::zeros(node(out).value.shape) : std::move(r);
}

Params grad(const BuildFn& f, const Params& params) {
    Tape tape;
    std::vector<int> leaves;
    leaves.reserve(params.size());
    for (const auto& t : params.tensors) leaves.push_back(tape.leaf(t));
    const int out = f(tape, leaves);
    require(tape.value(out).numel() == 1, "grad: function must produce a scalar");
    auto grads = tape.gradients(out, leaves);
    Params result;
    for (size_t i = 0; i < params.size(); ++i) result.add(params.names[i], std::move(grads[i]));
    return result;
}

Tensor jvp(const BuildFn& f, const Params& params, const Params& tangent) {
    require(tangent.same_shapes(params), "jvp: tangent shapes must mirror params");
    Tape tape;
    std::vector<int> leaves;
    leaves.reserve(params.size());
    for (const auto& t : params.tensors) leaves.push_back(tape.leaf(t));
    const int out = f(tape, leaves);
    return tape.tangent(out, leaves, tangent.tensors);
}

}  // namespace srw
