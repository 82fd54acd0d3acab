#include "srw/polygon.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <queue>
#include <sstream>

namespace srw {

namespace {

void check_mask(const Tensor& mask, const char* who) {
    require(mask.shape.size() == 2, std::string(who) + ": mask must be [H,W]");
    for (double v : mask.data) {
        require(v == 0.0 || v == 1.0, std::string(who) + ": mask values must be 0 or 1");
    }
}

// signed turn at b when walking a->b->c, in the (x=col, y=row) frame
double turn_angle(const Vertex& a, const Vertex& b, const Vertex& c) {
    const double ix = b.col - a.col, iy = b.row - a.row;
    const double ox = c.col - b.col, oy = c.row - b.row;
    const double cross = ix * oy - iy * ox;
    const double dot = ix * ox + iy * oy;
    return std::atan2(cross, dot);
}

double edge_len(const Vertex& a, const Vertex& b) {
    return std::hypot(b.col - a.col, b.row - a.row);
}

double vertex_importance(const Polygon& p, size_t i) {
    const size_t n = p.v.size();
    const Vertex& prev = p.v[(i + n - 1) % n];
    const Vertex& cur = p.v[i];
    const Vertex& next = p.v[(i + 1) % n];
    const double t = turn_angle(prev, cur, next);
    return t * 0.5 * (edge_len(prev, cur) + edge_len(cur, next));
}

// Directions: 0 east (+col), 1 south (+row), 2 west, 3 north.
constexpr int kDr[4] = {0, 1, 0, -1};
constexpr int kDc[4] = {1, 0, -1, 0};

}  // namespace

double polygon_area(const Polygon& p) {
    double acc = 0.0;
    const size_t n = p.v.size();
    for (size_t i = 0; i < n; ++i) {
        const Vertex& a = p.v[i];
        const Vertex& b = p.v[(i + 1) % n];
        acc += a.col * b.row - b.col * a.row;
    }
    return 0.5 * acc;
}

void NoiseSpec::validate() const {
    if (kind == NoiseKind::KVertex) require(k >= 3, "noise: k must be >= 3");
    if (kind == NoiseKind::Maximal) require(band >= -1, "noise: band must be >= 0 (or -1 = auto)");
}

NoiseSpec noise_spec_from_string(const std::string& s) {
    NoiseSpec spec;
    if (s == "axis4" || s == "axis_aligned_4") {
        spec.kind = NoiseKind::AxisAligned4;
    } else if (s == "maximal") {
        spec.kind = NoiseKind::Maximal;
    } else if (!s.empty() && s.back() == 'v') {
        spec.kind = NoiseKind::KVertex;
        try {
            spec.k = std::stoi(s.substr(0, s.size() - 1));
        } catch (...) {
            throw ContractViolation("noise: unknown kind '" + s + "'");
        }
        spec.validate();
    } else {
        throw ContractViolation("noise: unknown kind '" + s +
                                "' (expected <k>v, axis4 or maximal)");
    }
    return spec;
}

std::string noise_spec_tag(const NoiseSpec& spec) {
    switch (spec.kind) {
        case NoiseKind::KVertex: return std::to_string(spec.k) + "v";
        case NoiseKind::AxisAligned4: return "axis4";
        case NoiseKind::Maximal: return "maximal";
    }
    return "unknown";
}

Polygon mask_to_polygon(const Tensor& mask, std::vector<std::string>* warnings) {
    check_mask(mask, "mask_to_polygon");
    const int64_t h = mask.shape[0], w = mask.shape[1];

    // largest 4-connected component
    std::vector<int32_t> label(static_cast<size_t>(h * w), 0);
    int32_t ncomp = 0;
    std::vector<int64_t> area;
    for (int64_t start = 0; start < h * w; ++start) {
        if (mask.data[static_cast<size_t>(start)] == 0.0 || label[static_cast<size_t>(start)] != 0)
            continue;
        ++ncomp;
        area.push_back(0);
        std::queue<int64_t> q;
        q.push(start);
        label[static_cast<size_t>(start)] = ncomp;
        while (!q.empty()) {
            const int64_t cur = q.front();
            q.pop();
            ++area.back();
            const int64_t r = cur / w, c = cur % w;
            const int64_t nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
            for (auto& nb : nbr) {
                if (nb[0] < 0 || nb[0] >= h || nb[1] < 0 || nb[1] >= w) continue;
                const int64_t idx = nb[0] * w + nb[1];
                if (mask.data[static_cast<size_t>(idx)] == 1.0 &&
                    label[static_cast<size_t>(idx)] == 0) {
                    label[static_cast<size_t>(idx)] = ncomp;
                    q.push(idx);
                }
            }
        }
    }
    require(ncomp > 0, "mask_to_polygon: mask is empty");
    int32_t keep = 1;
    for (int32_t i = 2; i <= ncomp; ++i) {
        if (area[static_cast<size_t>(i - 1)] > area[static_cast<size_t>(keep - 1)]) keep = i;
    }
    if (ncomp > 1 && warnings) {
        warnings->push_back("mask_to_polygon: " + std::to_string(ncomp) +
                            " components, tracing the largest");
    }

    auto fg = [&](int64_t r, int64_t c) {
        if (r < 0 || r >= h || c < 0 || c >= w) return false;
        return label[static_cast<size_t>(r * w + c)] == keep;
    };

    // Directed boundary edges between corners, interior kept on the right.
    // Key: corner id = r*(w+1)+c; value: bitmask of outgoing directions.
    std::map<int64_t, int> outgoing;
    auto corner = [&](int64_t r, int64_t c) { return r * (w + 1) + c; };
    for (int64_t r = 0; r < h; ++r) {
        for (int64_t c = 0; c < w; ++c) {
            if (!fg(r, c)) continue;
            if (!fg(r - 1, c)) outgoing[corner(r, c)] |= 1 << 0;          // east along top
            if (!fg(r, c + 1)) outgoing[corner(r, c + 1)] |= 1 << 1;      // south along right
            if (!fg(r + 1, c)) outgoing[corner(r + 1, c + 1)] |= 1 << 2;  // west along bottom
            if (!fg(r, c - 1)) outgoing[corner(r + 1, c)] |= 1 << 3;      // north along left
        }
    }

    // Walk loops. Opposite directed edges never coexist, so a corner with no
    // remaining outgoing edge is the closed starting corner. At pinch corners
    // prefer the right turn relative to the incoming direction, which keeps
    // loops from crossing.
    Polygon best;
    double best_area = 0.0;
    auto consume = [&](int64_t at, int dir) {
        auto it = outgoing.find(at);
        it->second &= ~(1 << dir);
        if (it->second == 0) outgoing.erase(it);
    };
    while (!outgoing.empty()) {
        const int64_t start = outgoing.begin()->first;
        int dir = 0;
        while (!(outgoing[start] & (1 << dir))) ++dir;
        Polygon loop;
        int64_t cur = start;
        while (true) {
            consume(cur, dir);
            loop.v.push_back(
                {static_cast<double>(cur / (w + 1)), static_cast<double>(cur % (w + 1))});
            cur += kDr[dir] * (w + 1) + kDc[dir];
            int pick = -1;
            const auto it = outgoing.find(cur);
            if (it != outgoing.end()) {
                for (int t : {1, 0, 3}) {  // right turn, straight, left turn
                    const int cand = (dir + t) & 3;
                    if (it->second & (1 << cand)) {
                        pick = cand;
                        break;
                    }
                }
            }
            if (pick < 0) break;
            dir = pick;
        }
        const double a = polygon_area(loop);
        if (std::abs(a) > std::abs(best_area)) {
            best = std::move(loop);
            best_area = a;
        }
    }

    // collapse exactly collinear corners
    Polygon out;
    const size_t n = best.v.size();
    for (size_t i = 0; i < n; ++i) {
        const Vertex& prev = best.v[(i + n - 1) % n];
        const Vertex& cur = best.v[i];
        const Vertex& next = best.v[(i + 1) % n];
        const double cross = (cur.col - prev.col) * (next.row - cur.row) -
                             (cur.row - prev.row) * (next.col - cur.col);
        if (cross != 0.0) out.v.push_back(cur);
    }
    if (best_area < 0.0) std::reverse(out.v.begin(), out.v.end());
    return out;
}

Polygon simplify_to_k(Polygon poly, int k, std::vector<std::string>* warnings) {
    require(k >= 3, "simplify_to_k: k must be >= 3");
    require(poly.size() >= 3, "simplify_to_k: polygon needs at least 3 vertices");

    // drop exactly collinear vertices first so k counts geometric corners
    Polygon p;
    const size_t n0 = poly.v.size();
    for (size_t i = 0; i < n0; ++i) {
        const Vertex& prev = poly.v[(i + n0 - 1) % n0];
        const Vertex& cur = poly.v[i];
        const Vertex& next = poly.v[(i + 1) % n0];
        const double cross = (cur.col - prev.col) * (next.row - cur.row) -
                             (cur.row - prev.row) * (next.col - cur.col);
        const double dot = (cur.col - prev.col) * (next.col - cur.col) +
                           (cur.row - prev.row) * (next.row - cur.row);
        if (cross != 0.0 || dot <= 0.0) p.v.push_back(cur);
    }

    if (static_cast<int>(p.size()) < k) {
        if (warnings) {
            warnings->push_back("simplify_to_k: polygon has " + std::to_string(p.size()) +
                                " corners, fewer than k=" + std::to_string(k) +
                                "; returned unchanged");
        }
        return p;
    }

    while (static_cast<int>(p.size()) > k) {
        size_t worst = 0;
        double worst_imp = vertex_importance(p, 0);
        for (size_t i = 1; i < p.size(); ++i) {
            const double imp = vertex_importance(p, i);
            if (imp < worst_imp) {
                worst_imp = imp;
                worst = i;
            }
        }
        p.v.erase(p.v.begin() + static_cast<std::ptrdiff_t>(worst));
    }
    return p;
}

Polygon axis_aligned_4(const Tensor& mask) {
    check_mask(mask, "axis_aligned_4");
    const int64_t h = mask.shape[0], w = mask.shape[1];
    int64_t r0 = h, r1 = -1, c0 = w, c1 = -1;
    for (int64_t r = 0; r < h; ++r) {
        for (int64_t c = 0; c < w; ++c) {
            if (mask.data[static_cast<size_t>(r * w + c)] == 1.0) {
                r0 = std::min(r0, r);
                r1 = std::max(r1, r);
                c0 = std::min(c0, c);
                c1 = std::max(c1, c);
            }
        }
    }
    require(r1 >= 0, "axis_aligned_4: mask is empty");
    Polygon p;
    p.v = {{static_cast<double>(r0), static_cast<double>(c0)},
           {static_cast<double>(r0), static_cast<double>(c1 + 1)},
           {static_cast<double>(r1 + 1), static_cast<double>(c1 + 1)},
           {static_cast<double>(r1 + 1), static_cast<double>(c0)}};
    return p;
}

Tensor maximal_mask(int64_t h, int64_t w, int64_t band) {
    require(band >= 0, "maximal_mask: band must be >= 0");
    require(h > 2 * band && w > 2 * band, "maximal_mask: band too large for the image");
    Tensor m = Tensor::zeros({h, w});
    for (int64_t r = band; r < h - band; ++r) {
        for (int64_t c = band; c < w - band; ++c) {
            m.data[static_cast<size_t>(r * w + c)] = 1.0;
        }
    }
    return m;
}

Tensor rasterize(const Polygon& poly, int64_t h, int64_t w) {
    require(poly.size() >= 3, "rasterize: polygon needs at least 3 vertices");
    require(polygon_area(poly) != 0.0, "rasterize: degenerate polygon");
    require(h > 0 && w > 0, "rasterize: raster dims must be positive");
    Tensor m = Tensor::zeros({h, w});
    const size_t n = poly.v.size();
    std::vector<double> xs;
    for (int64_t r = 0; r < h; ++r) {
        const double y = static_cast<double>(r) + 0.5;
        xs.clear();
        for (size_t i = 0; i < n; ++i) {
            const Vertex& a = poly.v[i];
            const Vertex& b = poly.v[(i + 1) % n];
            const double y1 = a.row, y2 = b.row;
            if ((y1 <= y && y < y2) || (y2 <= y && y < y1)) {
                const double t = (y - y1) / (y2 - y1);
                xs.push_back(a.col + t * (b.col - a.col));
            }
        }
        std::sort(xs.begin(), xs.end());
        for (size_t i = 0; i + 1 < xs.size(); i += 2) {
            // pixel centers c+0.5 in [xa, xb)
            const int64_t c0 = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(xs[i] - 0.5)));
            const int64_t c1 =
                std::min<int64_t>(w - 1, static_cast<int64_t>(std::ceil(xs[i + 1] - 0.5)) - 1);
            for (int64_t c = c0; c <= c1; ++c) m.data[static_cast<size_t>(r * w + c)] = 1.0;
        }
    }
    return m;
}

Tensor make_noisy_mask(const Tensor& clean_mask, const NoiseSpec& spec,
                       std::vector<std::string>* warnings) {
    check_mask(clean_mask, "make_noisy_mask");
    spec.validate();
    const int64_t h = clean_mask.shape[0], w = clean_mask.shape[1];
    switch (spec.kind) {
        case NoiseKind::Maximal: {
            const int64_t band =
                spec.band >= 0
                    ? spec.band
                    : static_cast<int64_t>(std::llround(2.0 * static_cast<double>(std::min(h, w)) / 96.0));
            return maximal_mask(h, w, band);
        }
        case NoiseKind::AxisAligned4:
            return rasterize(axis_aligned_4(clean_mask), h, w);
        case NoiseKind::KVertex: {
            const Polygon contour = mask_to_polygon(clean_mask, warnings);
            const Polygon simplified = simplify_to_k(contour, spec.k, warnings);
            return rasterize(simplified, h, w);
        }
    }
    throw ContractViolation("make_noisy_mask: unknown noise kind");
}

std::string polygon_to_text(const Polygon& p) {
    std::ostringstream out;
    out << "POLY " << p.size() << "\n";
    char buf[64];
    for (const auto& v : p.v) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", v.row, v.col);
        out << buf;
    }
    return out.str();
}

Polygon polygon_from_text(const std::string& text) {
    std::istringstream in(text);
    std::string tag;
    size_t n = 0;
    if (!(in >> tag >> n) || tag != "POLY") throw IoError("polygon: bad header");
    Polygon p;
    std::string line;
    std::getline(in, line);  // rest of header line
    for (size_t i = 0; i < n; ++i) {
        if (!std::getline(in, line)) throw IoError("polygon: truncated vertex list");
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw IoError("polygon: malformed vertex line");
        try {
            p.v.push_back({std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
        } catch (...) {
            throw IoError("polygon: malformed vertex line");
        }
    }
    return p;
}

}  // namespace srw
