#include "srw/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <queue>
#include <sstream>

#include "srw/rng.hpp"

namespace fs = std::filesystem;

namespace srw {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

int64_t count_components4(const Tensor& mask) {
    const int64_t h = mask.shape[0], w = mask.shape[1];
    std::vector<char> seen(static_cast<size_t>(h * w), 0);
    int64_t ncomp = 0;
    for (int64_t start = 0; start < h * w; ++start) {
        if (mask.data[static_cast<size_t>(start)] == 0.0 || seen[static_cast<size_t>(start)])
            continue;
        ++ncomp;
        std::queue<int64_t> q;
        q.push(start);
        seen[static_cast<size_t>(start)] = 1;
        while (!q.empty()) {
            const int64_t cur = q.front();
            q.pop();
            const int64_t r = cur / w, c = cur % w;
            const int64_t nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
            for (auto& nb : nbr) {
                if (nb[0] < 0 || nb[0] >= h || nb[1] < 0 || nb[1] >= w) continue;
                const int64_t idx = nb[0] * w + nb[1];
                if (mask.data[static_cast<size_t>(idx)] == 1.0 && !seen[static_cast<size_t>(idx)]) {
                    seen[static_cast<size_t>(idx)] = 1;
                    q.push(idx);
                }
            }
        }
    }
    return ncomp;
}

void skip_pnm_space(std::istream& in) {
    for (;;) {
        const int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            return;
        }
    }
}

struct PnmHeader {
    std::string magic;
    int64_t width = 0, height = 0, maxval = 0;
};

PnmHeader read_pnm_header(std::istream& in, const std::string& path) {
    PnmHeader h;
    in >> h.magic;
    skip_pnm_space(in);
    in >> h.width;
    skip_pnm_space(in);
    in >> h.height;
    skip_pnm_space(in);
    in >> h.maxval;
    if (!in || h.width <= 0 || h.height <= 0) throw IoError("malformed raster header: " + path);
    if (h.maxval != 255) throw IoError("unsupported raster maxval (want 255): " + path);
    in.get();  // single whitespace before pixel data
    return h;
}

std::vector<unsigned char> read_pnm_body(std::istream& in, size_t n, const std::string& path) {
    std::vector<unsigned char> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n)) throw IoError("truncated raster: " + path);
    return buf;
}

}  // namespace

SplitPolicy split_policy_from_string(const std::string& s) {
    if (s == "disjoint") return SplitPolicy::Disjoint;
    if (s == "subset") return SplitPolicy::Subset;
    throw ContractViolation("split: unknown policy '" + s + "' (expected disjoint or subset)");
}

const char* split_policy_name(SplitPolicy p) {
    return p == SplitPolicy::Disjoint ? "disjoint" : "subset";
}

std::vector<Sample> gen_synthetic(int64_t n, int64_t side, uint64_t seed) {
    require(n >= 1, "gen_synthetic: n must be >= 1");
    require(side >= 16, "gen_synthetic: side must be >= 16");
    std::vector<Sample> samples;
    samples.reserve(static_cast<size_t>(n));
    const double s = static_cast<double>(side);

    for (int64_t i = 0; i < n; ++i) {
        Rng rng(mix_seed(mix_seed(seed, 0xda7a), static_cast<uint64_t>(i)));

        const double cr = 0.5 * s + rng.uniform(-0.08, 0.08) * s;
        const double cc = 0.5 * s + rng.uniform(-0.08, 0.08) * s;
        const double ra = rng.uniform(0.18, 0.33) * s;
        const double rb = rng.uniform(0.18, 0.33) * s;
        const double rot = rng.uniform(0.0, kTwoPi / 2.0);
        const double amp2 = rng.uniform(0.0, 0.12), ph2 = rng.uniform(0.0, kTwoPi);
        const double amp3 = rng.uniform(0.0, 0.12), ph3 = rng.uniform(0.0, kTwoPi);

        const double bg[3] = {rng.uniform(0.65, 0.85), rng.uniform(0.50, 0.70),
                              rng.uniform(0.45, 0.65)};
        const double fgc[3] = {rng.uniform(0.25, 0.50), rng.uniform(0.15, 0.40),
                               rng.uniform(0.10, 0.35)};

        // two low-frequency texture waves shared by all channels
        const double tf1 = rng.uniform(0.5, 2.0), ta1 = rng.uniform(0.0, 0.05),
                     tp1 = rng.uniform(0.0, kTwoPi), td1 = rng.uniform(0.0, kTwoPi / 2.0);
        const double tf2 = rng.uniform(0.5, 2.0), ta2 = rng.uniform(0.0, 0.05),
                     tp2 = rng.uniform(0.0, kTwoPi), td2 = rng.uniform(0.0, kTwoPi / 2.0);

        const double cosr = std::cos(rot), sinr = std::sin(rot);

        Sample sample;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "s%05lld", static_cast<long long>(i));
        sample.id = idbuf;
        sample.image = Tensor::zeros({3, side, side});
        sample.clean_mask = Tensor::zeros({side, side});

        for (int64_t r = 0; r < side; ++r) {
            for (int64_t c = 0; c < side; ++c) {
                const double dy = (static_cast<double>(r) + 0.5) - cr;
                const double dx = (static_cast<double>(c) + 0.5) - cc;
                const double u = (dx * cosr + dy * sinr) / ra;
                const double v = (-dx * sinr + dy * cosr) / rb;
                const double rad = std::hypot(u, v);
                const double th = std::atan2(v, u);
                const double rho =
                    1.0 + amp2 * std::cos(2.0 * th + ph2) + amp3 * std::cos(3.0 * th + ph3);
                if (rad <= rho) sample.clean_mask.at({r, c}) = 1.0;

                // soft lesion edge over roughly 1.5 px
                const double signed_px = (rho - rad) * std::min(ra, rb);
                const double alpha = std::clamp(0.5 + signed_px / 1.5, 0.0, 1.0);

                const double x1 = std::cos(td1) * static_cast<double>(c) +
                                  std::sin(td1) * static_cast<double>(r);
                const double x2 = std::cos(td2) * static_cast<double>(c) +
                                  std::sin(td2) * static_cast<double>(r);
                const double texture = ta1 * std::sin(kTwoPi * tf1 * x1 / s + tp1) +
                                       ta2 * std::sin(kTwoPi * tf2 * x2 / s + tp2);

                for (int64_t ch = 0; ch < 3; ++ch) {
                    const double base = alpha * fgc[ch] + (1.0 - alpha) * bg[ch];
                    const double noise = rng.normal(0.0, 0.02);
                    sample.image.at({ch, r, c}) = std::clamp(base + texture + noise, 0.0, 1.0);
                }
            }
        }

        require(count_components4(sample.clean_mask) == 1,
                "gen_synthetic: blob must be a single 4-connected component");
        samples.push_back(std::move(sample));
    }
    return samples;
}

Tensor load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    const PnmHeader h = read_pnm_header(in, path);
    if (h.magic != "P6") throw IoError("expected P6 image: " + path);
    const auto body = read_pnm_body(in, static_cast<size_t>(3 * h.width * h.height), path);
    Tensor img = Tensor::zeros({3, h.height, h.width});
    for (int64_t r = 0; r < h.height; ++r) {
        for (int64_t c = 0; c < h.width; ++c) {
            for (int64_t ch = 0; ch < 3; ++ch) {
                img.at({ch, r, c}) =
                    static_cast<double>(body[static_cast<size_t>((r * h.width + c) * 3 + ch)]) /
                    255.0;
            }
        }
    }
    return img;
}

void save_ppm(const Tensor& image, const std::string& path) {
    require(image.shape.size() == 3 && image.shape[0] == 3, "save_ppm: image must be [3,H,W]");
    const int64_t hgt = image.shape[1], wid = image.shape[2];
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "P6\n" << wid << " " << hgt << "\n255\n";
    std::vector<unsigned char> body(static_cast<size_t>(3 * hgt * wid));
    for (int64_t r = 0; r < hgt; ++r) {
        for (int64_t c = 0; c < wid; ++c) {
            for (int64_t ch = 0; ch < 3; ++ch) {
                const double v = std::clamp(image.at({ch, r, c}), 0.0, 1.0);
                body[static_cast<size_t>((r * wid + c) * 3 + ch)] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
    }
    out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
    if (!out) throw IoError("write failed: " + path);
}

Tensor load_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    const PnmHeader h = read_pnm_header(in, path);
    if (h.magic == "P6") throw IoError("mask must be single-channel: " + path);
    if (h.magic != "P5") throw IoError("expected P5 mask: " + path);
    const auto body = read_pnm_body(in, static_cast<size_t>(h.width * h.height), path);
    Tensor mask = Tensor::zeros({h.height, h.width});
    for (size_t i = 0; i < body.size(); ++i) {
        if (body[i] == 255) {
            mask.data[i] = 1.0;
        } else if (body[i] != 0) {
            throw IoError("mask pixels must be 0 or 255: " + path);
        }
    }
    return mask;
}

void save_pgm(const Tensor& mask, const std::string& path) {
    require(mask.shape.size() == 2, "save_pgm: mask must be [H,W]");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "P5\n" << mask.shape[1] << " " << mask.shape[0] << "\n255\n";
    std::vector<unsigned char> body(mask.data.size());
    for (size_t i = 0; i < body.size(); ++i) {
        require(mask.data[i] == 0.0 || mask.data[i] == 1.0, "save_pgm: mask values must be 0 or 1");
        body[i] = mask.data[i] == 1.0 ? 255 : 0;
    }
    out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
    if (!out) throw IoError("write failed: " + path);
}

void save_pgm_gray(const Tensor& gray, const std::string& path) {
    require(gray.shape.size() == 2, "save_pgm_gray: input must be [H,W]");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "P5\n" << gray.shape[1] << " " << gray.shape[0] << "\n255\n";
    std::vector<unsigned char> body(gray.data.size());
    for (size_t i = 0; i < body.size(); ++i) {
        body[i] = static_cast<unsigned char>(std::lround(std::clamp(gray.data[i], 0.0, 1.0) * 255.0));
    }
    out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
    if (!out) throw IoError("write failed: " + path);
}

namespace {

// area-average a single [H,W] plane to side x side
Tensor resize_plane(const Tensor& plane, int64_t side) {
    const int64_t h = plane.shape[0], w = plane.shape[1];
    Tensor out = Tensor::zeros({side, side});
    const double sr = static_cast<double>(h) / static_cast<double>(side);
    const double sc = static_cast<double>(w) / static_cast<double>(side);
    for (int64_t r = 0; r < side; ++r) {
        const double r0 = static_cast<double>(r) * sr, r1 = static_cast<double>(r + 1) * sr;
        for (int64_t c = 0; c < side; ++c) {
            const double c0 = static_cast<double>(c) * sc, c1 = static_cast<double>(c + 1) * sc;
            double acc = 0.0;
            for (int64_t rr = static_cast<int64_t>(std::floor(r0)); rr < h && rr < r1; ++rr) {
                const double wr = std::min(r1, static_cast<double>(rr + 1)) -
                                  std::max(r0, static_cast<double>(rr));
                if (wr <= 0.0) continue;
                for (int64_t cc = static_cast<int64_t>(std::floor(c0)); cc < w && cc < c1; ++cc) {
                    const double wc = std::min(c1, static_cast<double>(cc + 1)) -
                                      std::max(c0, static_cast<double>(cc));
                    if (wc <= 0.0) continue;
                    acc += wr * wc * plane.data[static_cast<size_t>(rr * w + cc)];
                }
            }
            out.data[static_cast<size_t>(r * side + c)] = acc / (sr * sc);
        }
    }
    return out;
}

}  // namespace

Tensor resize_image(const Tensor& image, int64_t side) {
    require(image.shape.size() == 3 && image.shape[0] == 3, "resize_image: image must be [3,H,W]");
    Tensor out = Tensor::zeros({3, side, side});
    for (int64_t ch = 0; ch < 3; ++ch) {
        Tensor plane = Tensor::zeros({image.shape[1], image.shape[2]});
        std::copy_n(image.data.begin() + ch * plane.numel(), plane.numel(), plane.data.begin());
        Tensor rp = resize_plane(plane, side);
        std::copy_n(rp.data.begin(), rp.numel(), out.data.begin() + ch * rp.numel());
    }
    return out;
}

Tensor resize_mask(const Tensor& mask, int64_t side) {
    require(mask.shape.size() == 2, "resize_mask: mask must be [H,W]");
    Tensor rp = resize_plane(mask, side);
    for (auto& v : rp.data) v = v >= 0.5 ? 1.0 : 0.0;
    return rp;
}

NormStats compute_norm_stats(const std::vector<const Tensor*>& images) {
    require(!images.empty(), "norm stats: training pool is empty");
    NormStats st;
    const int64_t plane = images[0]->shape[1] * images[0]->shape[2];
    const double count = static_cast<double>(plane * static_cast<int64_t>(images.size()));
    for (int64_t ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (const Tensor* img : images) {
            const double* p = img->data.data() + ch * plane;
            for (int64_t i = 0; i < plane; ++i) acc += p[i];
        }
        st.mean[static_cast<size_t>(ch)] = acc / count;
        double var = 0.0;
        for (const Tensor* img : images) {
            const double* p = img->data.data() + ch * plane;
            for (int64_t i = 0; i < plane; ++i) {
                const double d = p[i] - st.mean[static_cast<size_t>(ch)];
                var += d * d;
            }
        }
        const double sd = std::sqrt(var / count);
        if (sd <= 0.0) throw NumericalError("norm stats: channel has zero standard deviation");
        st.stdev[static_cast<size_t>(ch)] = sd;
    }
    return st;
}

void normalize_inplace(Tensor& image, const NormStats& stats) {
    require(image.shape.size() == 3 && image.shape[0] == 3, "normalize: image must be [3,H,W]");
    const int64_t plane = image.shape[1] * image.shape[2];
    for (int64_t ch = 0; ch < 3; ++ch) {
        double* p = image.data.data() + ch * plane;
        const double m = stats.mean[static_cast<size_t>(ch)];
        const double s = stats.stdev[static_cast<size_t>(ch)];
        for (int64_t i = 0; i < plane; ++i) p[i] = (p[i] - m) / s;
    }
}

std::string norm_stats_to_text(const NormStats& stats) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %.17g %.17g\n", stats.mean[0],
                  stats.mean[1], stats.mean[2], stats.stdev[0], stats.stdev[1], stats.stdev[2]);
    return buf;
}

NormStats norm_stats_from_text(const std::string& text) {
    std::istringstream in(text);
    NormStats st;
    for (auto& v : st.mean) in >> v;
    for (auto& v : st.stdev) in >> v;
    if (!in) throw IoError("norm stats: expected 6 numbers");
    return st;
}

DatasetSplit make_splits(const std::vector<Sample>& samples, int64_t clean_count,
                         int64_t noisy_count, int64_t val_count, int64_t test_count,
                         const NoiseSpec& spec, SplitPolicy policy, uint64_t seed,
                         std::vector<std::string>* warnings) {
    spec.validate();
    const int64_t n = static_cast<int64_t>(samples.size());
    require(clean_count >= 0 && noisy_count >= 1 && val_count >= 0 && test_count >= 0,
            "split: counts must be nonnegative (noisy pool nonempty)");
    if (policy == SplitPolicy::Disjoint) {
        require(clean_count + noisy_count + val_count + test_count <= n,
                "split: not enough samples for disjoint pools");
    } else {
        require(clean_count <= noisy_count, "split: subset policy needs K <= M");
        require(noisy_count + val_count + test_count <= n,
                "split: not enough samples for subset pools");
    }

    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng rng(mix_seed(seed, 0x5b117));
    rng.shuffle(order);

    DatasetSplit split;
    split.policy = policy;
    split.noise = spec;
    split.seed = seed;

    size_t cursor = 0;
    auto take = [&](int64_t count) {
        std::vector<const Sample*> out;
        for (int64_t i = 0; i < count; ++i) {
            out.push_back(&samples[static_cast<size_t>(order[cursor++])]);
        }
        return out;
    };

    const auto test_src = take(test_count);
    const auto val_src = take(val_count);
    std::vector<const Sample*> clean_src, noisy_src;
    if (policy == SplitPolicy::Disjoint) {
        clean_src = take(clean_count);
        noisy_src = take(noisy_count);
    } else {
        noisy_src = take(noisy_count);
        clean_src.assign(noisy_src.begin(), noisy_src.begin() + clean_count);
    }

    for (const Sample* s : noisy_src) {
        Sample copy = *s;
        copy.noisy_mask = make_noisy_mask(copy.clean_mask, spec, warnings);
        split.noisy.push_back(std::move(copy));
    }
    for (const Sample* s : clean_src) split.clean.push_back(*s);
    for (const Sample* s : val_src) split.val.push_back(*s);
    for (const Sample* s : test_src) split.test.push_back(*s);

    // training-pool statistics over distinct images of D^n and D^c
    std::vector<const Tensor*> pool;
    for (const auto& s : split.noisy) pool.push_back(&s.image);
    if (policy == SplitPolicy::Disjoint) {
        for (const auto& s : split.clean) pool.push_back(&s.image);
    }
    split.stats = compute_norm_stats(pool);
    for (auto* set : {&split.noisy, &split.clean, &split.val, &split.test}) {
        for (auto& s : *set) normalize_inplace(s.image, split.stats);
    }

    std::ostringstream rec;
    rec << "policy=" << split_policy_name(policy) << " noise=" << noise_spec_tag(spec)
        << " seed=" << seed << " K=" << clean_count << " M=" << noisy_count
        << " val=" << val_count << " test=" << test_count << " stats_from=train_pool";
    split.policy_record = rec.str();
    return split;
}

std::string split_manifest(const DatasetSplit& split) {
    std::ostringstream out;
    out << "# dataset split manifest\n";
    out << "policy " << split_policy_name(split.policy) << "\n";
    out << "noise " << noise_spec_tag(split.noise) << "\n";
    out << "seed " << split.seed << "\n";
    out << "record " << split.policy_record << "\n";
    out << "stats " << norm_stats_to_text(split.stats);
    const std::pair<const char*, const std::vector<Sample>*> sets[] = {
        {"noisy", &split.noisy}, {"clean", &split.clean}, {"val", &split.val}, {"test", &split.test}};
    for (const auto& [name, set] : sets) {
        out << "[" << name << "]\n";
        for (const auto& s : *set) out << s.id << "\n";
    }
    return out.str();
}

void save_corpus(const std::vector<Sample>& samples, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "images", ec);
    fs::create_directories(fs::path(dir) / "masks", ec);
    if (ec) throw IoError("cannot create corpus directory: " + dir);
    std::ofstream manifest(fs::path(dir) / "manifest.txt", std::ios::trunc);
    if (!manifest) throw IoError("cannot write corpus manifest in: " + dir);
    for (const auto& s : samples) {
        save_ppm(s.image, (fs::path(dir) / "images" / (s.id + ".ppm")).string());
        save_pgm(s.clean_mask, (fs::path(dir) / "masks" / (s.id + ".pgm")).string());
        manifest << s.id << "\n";
    }
    if (!manifest) throw IoError("cannot write corpus manifest in: " + dir);
}

std::vector<Sample> load_corpus(const std::string& dir, int64_t resize_to) {
    std::ifstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw IoError("missing corpus manifest: " + dir + "/manifest.txt");
    std::vector<Sample> samples;
    std::string id;
    while (std::getline(manifest, id)) {
        if (id.empty()) continue;
        Sample s;
        s.id = id;
        s.image = load_ppm((fs::path(dir) / "images" / (id + ".ppm")).string());
        s.clean_mask = load_pgm((fs::path(dir) / "masks" / (id + ".pgm")).string());
        require(s.image.shape[1] == s.clean_mask.shape[0] &&
                    s.image.shape[2] == s.clean_mask.shape[1],
                "load_corpus: image/mask dimensions disagree for id " + id);
        if (resize_to > 0 && (s.image.shape[1] != resize_to || s.image.shape[2] != resize_to)) {
            s.image = resize_image(s.image, resize_to);
            s.clean_mask = resize_mask(s.clean_mask, resize_to);
        }
        samples.push_back(std::move(s));
    }
    require(!samples.empty(), "load_corpus: corpus is empty");
    return samples;
}

}  // namespace srw
