#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <iostream>
#include <stdexcept>
#include <vector>

namespace psta {

/// Shape descriptors of a parcel mask. Perimeter is the number of
/// 4-connected pixel edges between parcel and non-parcel (image border
/// included), in pixel-edge units; a single pixel has perimeter 4.
struct GeometricFeatures {
    double perimeter = 0;
    double pixel_count = 0;
    double cover_ratio = 0;              // pixel_count / bounding-box area
    double perimeter_surface_ratio = 0;  // perimeter / pixel_count

    std::array<double, 4> as_array() const {
        return {perimeter, pixel_count, cover_ratio, perimeter_surface_ratio};
    }
};

/// Binary parcel mask, row-major.
struct Mask {
    std::size_t height = 0, width = 0;
    std::vector<std::uint8_t> cells;

    bool at(std::size_t r, std::size_t c) const { return cells[r * width + c] != 0; }
};

inline GeometricFeatures compute_geometric_features(const Mask& mask) {
    if (mask.height == 0 || mask.width == 0 || mask.cells.size() != mask.height * mask.width)
        throw std::invalid_argument("geometric features: malformed mask");

    std::size_t rmin = mask.height, rmax = 0, cmin = mask.width, cmax = 0, count = 0;
    for (std::size_t r = 0; r < mask.height; ++r)
        for (std::size_t c = 0; c < mask.width; ++c)
            if (mask.at(r, c)) {
                ++count;
                rmin = std::min(rmin, r);
                rmax = std::max(rmax, r);
                cmin = std::min(cmin, c);
                cmax = std::max(cmax, c);
            }
    if (count == 0) throw std::invalid_argument("geometric features: empty mask");

    if (rmin != 0 || cmin != 0 || rmax != mask.height - 1 || cmax != mask.width - 1)
        std::cerr << "warning: mask bounding box is not tight; using the tight sub-box\n";

    const std::size_t box_h = rmax - rmin + 1, box_w = cmax - cmin + 1;
    std::size_t perimeter = 0;
    for (std::size_t r = rmin; r <= rmax; ++r)
        for (std::size_t c = cmin; c <= cmax; ++c) {
            if (!mask.at(r, c)) continue;
            if (r == rmin || !mask.at(r - 1, c)) ++perimeter;
            if (r == rmax || !mask.at(r + 1, c)) ++perimeter;
            if (c == cmin || !mask.at(r, c - 1)) ++perimeter;
            if (c == cmax || !mask.at(r, c + 1)) ++perimeter;
        }

    GeometricFeatures f;
    f.perimeter = static_cast<double>(perimeter);
    f.pixel_count = static_cast<double>(count);
    f.cover_ratio = static_cast<double>(count) / static_cast<double>(box_h * box_w);
    f.perimeter_surface_ratio = f.perimeter / f.pixel_count;
    return f;
}

}  // namespace psta
