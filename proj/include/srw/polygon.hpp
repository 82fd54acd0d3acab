#pragma once

#include <string>
#include <vector>

#include "srw/tensor.hpp"

namespace srw {

// Vertices are (row, col) in pixel-corner coordinates: pixel (r,c) spans
// corners (r,c)..(r+1,c+1) and has its center at (r+0.5, c+0.5). Polygons are
// implicitly closed and stored with positive shoelace area in the
// (x=col, y=row) frame.
struct Vertex {
    double row = 0.0;
    double col = 0.0;
};

struct Polygon {
    std::vector<Vertex> v;

    size_t size() const { return v.size(); }
};

double polygon_area(const Polygon& p);

enum class NoiseKind { KVertex, AxisAligned4, Maximal };

struct NoiseSpec {
    NoiseKind kind = NoiseKind::KVertex;
    int k = 3;      // KVertex target vertex count
    int band = -1;  // Maximal perimeter band; -1 scales as round(2*side/96)

    void validate() const;
};

NoiseSpec noise_spec_from_string(const std::string& s);
std::string noise_spec_tag(const NoiseSpec& spec);

// Grid-edge contour of the largest 4-connected foreground component, exact in
// pixel-corner coordinates, collinear corners collapsed. Multiple components
// trace the largest and record a warning.
Polygon mask_to_polygon(const Tensor& mask, std::vector<std::string>* warnings = nullptr);

// Iteratively removes the least important vertex until k remain.
// importance(v) = turn_angle(v) * mean(adjacent edge lengths), where
// turn_angle = pi - interior angle; ties break at the lowest current index.
// Exactly collinear vertices are dropped up front so k counts corners.
Polygon simplify_to_k(Polygon poly, int k, std::vector<std::string>* warnings = nullptr);

// Tight axis-aligned bounding rectangle of the foreground, as a 4-vertex
// polygon in corner coordinates.
Polygon axis_aligned_4(const Tensor& mask);

// Foreground everywhere except `band` rows/columns around the perimeter.
Tensor maximal_mask(int64_t h, int64_t w, int64_t band);

// Scanline even-odd fill at pixel centers.
Tensor rasterize(const Polygon& poly, int64_t h, int64_t w);

// Applies a noise spec to a clean mask (the full pipeline).
Tensor make_noisy_mask(const Tensor& clean_mask, const NoiseSpec& spec,
                       std::vector<std::string>* warnings = nullptr);

// Text format: "POLY <n>" then one "row,col" line per vertex.
std::string polygon_to_text(const Polygon& p);
Polygon polygon_from_text(const std::string& text);

}  // namespace srw
