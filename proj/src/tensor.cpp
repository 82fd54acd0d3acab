#include "srw/tensor.hpp"

#include <cstring>
#include <fstream>

namespace srw {

namespace {

template <typename T>
void write_le(std::ofstream& out, T v) {
    // the toolchain targets little-endian machines; memcpy keeps this UB-free
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.write(buf, sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in, const std::string& path) {
    char buf[sizeof(T)];
    in.read(buf, sizeof(T));
    if (!in) throw IoError("checkpoint truncated: " + path);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

}  // namespace

void save_tensors(const std::string& path, const Params& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    write_le<uint64_t>(out, params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.names[i];
        const Tensor& t = params.tensors[i];
        write_le<uint32_t>(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_le<uint32_t>(out, static_cast<uint32_t>(t.shape.size()));
        for (int64_t d : t.shape) write_le<uint64_t>(out, static_cast<uint64_t>(d));
        for (double v : t.data) write_le<double>(out, v);
    }
    if (!out) throw IoError("write failed: " + path);
}

Params load_tensors(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    const uint64_t count = read_le<uint64_t>(in, path);
    Params params;
    for (uint64_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_le<uint32_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw IoError("checkpoint truncated: " + path);
        const uint32_t rank = read_le<uint32_t>(in, path);
        std::vector<int64_t> shape(rank);
        for (uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<int64_t>(read_le<uint64_t>(in, path));
            if (shape[d] <= 0) throw IoError("checkpoint has invalid dims: " + path);
        }
        const int64_t n = Tensor::numel_of(shape);
        std::vector<double> data(static_cast<size_t>(n));
        for (auto& v : data) v = read_le<double>(in, path);
        params.add(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return params;
}

}  // namespace srw
