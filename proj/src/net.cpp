#include "srw/net.hpp"

#include <string>

#include "srw/rng.hpp"

namespace srw {

namespace {

struct LayerShape {
    std::string name;
    std::vector<int64_t> w_shape;
    int64_t out_channels;
};

std::vector<LayerShape> layer_shapes(const NetConfig& cfg) {
    std::vector<LayerShape> layers;
    int64_t ch = cfg.in_channels;
    for (int d = 0; d < cfg.depth; ++d) {
        const int64_t out = cfg.channels_at(d);
        layers.push_back({"enc" + std::to_string(d), {out, ch, 3, 3}, out});
        ch = out;
    }
    {
        const int64_t out = cfg.channels_at(cfg.depth);
        layers.push_back({"bottleneck", {out, ch, 3, 3}, out});
        ch = out;
    }
    for (int d = cfg.depth - 1; d >= 0; --d) {
        const int64_t skip = cfg.channels_at(d);
        const int64_t out = skip;
        layers.push_back({"dec" + std::to_string(d), {out, ch + skip, 3, 3}, out});
        ch = out;
    }
    layers.push_back({"head", {2, ch}, 2});
    return layers;
}

}  // namespace

void NetConfig::validate() const {
    require(in_channels >= 1, "net: in_channels must be >= 1");
    require(base_channels >= 1, "net: base_channels must be >= 1");
    require(depth >= 1, "net: depth must be >= 1");
    require(image_side >= 1, "net: image_side must be >= 1");
    require(init_sigma >= 0.0, "net: init_sigma must be >= 0");
    int side = image_side;
    for (int d = 0; d < depth; ++d) {
        require(side % 2 == 0, "net: image_side must be divisible by 2^depth");
        side /= 2;
    }
}

int NetConfig::channels_at(int level) const { return base_channels << level; }

Params init_params(const NetConfig& cfg) {
    cfg.validate();
    Rng rng(mix_seed(cfg.seed, 0x5e9));
    Params params;
    for (const auto& layer : layer_shapes(cfg)) {
        Tensor w = Tensor::zeros(layer.w_shape);
        for (auto& v : w.data) v = rng.normal(0.0, cfg.init_sigma);
        params.add(layer.name + ".w", std::move(w));
        params.add(layer.name + ".b", Tensor::zeros({layer.out_channels}));
    }
    return params;
}

int64_t count_params(const NetConfig& cfg) {
    cfg.validate();
    int64_t n = 0;
    for (const auto& layer : layer_shapes(cfg)) {
        n += Tensor::numel_of(layer.w_shape) + layer.out_channels;
    }
    return n;
}

int build_forward(Tape& tape, const NetConfig& cfg, const std::vector<int>& param_nodes,
                  const Tensor& images) {
    cfg.validate();
    require(images.shape.size() == 4, "forward: images must be [B,C,H,W]");
    require(images.shape[1] == cfg.in_channels, "forward: image channels do not match config");
    require(images.shape[2] == cfg.image_side && images.shape[3] == cfg.image_side,
            "forward: image side does not match config");
    const size_t expected = 2 * (static_cast<size_t>(cfg.depth) * 2 + 2);
    require(param_nodes.size() == expected, "forward: wrong number of parameter tensors");

    size_t p = 0;
    auto next_pair = [&]() {
        const int w = param_nodes[p];
        const int b = param_nodes[p + 1];
        p += 2;
        return std::pair<int, int>(w, b);
    };

    int x = tape.leaf(images);
    std::vector<int> skips;
    for (int d = 0; d < cfg.depth; ++d) {
        auto [w, b] = next_pair();
        x = tape.relu(tape.conv3x3(x, w, b));
        skips.push_back(x);
        x = tape.maxpool2(x);
    }
    {
        auto [w, b] = next_pair();
        x = tape.relu(tape.conv3x3(x, w, b));
    }
    for (int d = cfg.depth - 1; d >= 0; --d) {
        auto [w, b] = next_pair();
        x = tape.upsample2(x);
        x = tape.concat_c(x, skips[static_cast<size_t>(d)]);
        x = tape.relu(tape.conv3x3(x, w, b));
    }
    auto [w, b] = next_pair();
    x = tape.conv1x1(x, w, b);
    return tape.softmax2(x);
}

Tensor forward(const NetConfig& cfg, const Params& params, const Tensor& images) {
    Tape tape;
    std::vector<int> nodes;
    nodes.reserve(params.size());
    for (const auto& t : params.tensors) nodes.push_back(tape.leaf(t));
    const int out = build_forward(tape, cfg, nodes, images);
    return tape.value(out);
}

}  // namespace srw
