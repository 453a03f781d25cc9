#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "psta/geometry.hpp"

namespace psta {

/// One parcel's pixel-set time series: T x C x N values in (t, c, n)
/// row-major order, day offsets with day[0] == 0, mask-derived geometric
/// features, and the class label.
struct ParcelRecord {
    std::uint64_t id = 0;
    std::uint32_t label = 0;
    std::uint32_t t_len = 0;
    std::uint32_t channels = 0;
    std::uint32_t pixel_count = 0;
    std::vector<std::int32_t> days;
    GeometricFeatures geo;
    std::vector<float> pixels;

    float pixel(std::size_t t, std::size_t c, std::size_t n) const {
        return pixels[(t * channels + c) * pixel_count + n];
    }
    float& pixel(std::size_t t, std::size_t c, std::size_t n) {
        return pixels[(t * channels + c) * pixel_count + n];
    }

    void validate() const {
        if (pixel_count < 1)
            throw std::invalid_argument("parcel " + std::to_string(id) + ": no pixels");
        if (days.size() != t_len)
            throw std::invalid_argument("parcel " + std::to_string(id) +
                                        ": day stamps do not match T");
        if (!days.empty() && days.front() != 0)
            throw std::invalid_argument("parcel " + std::to_string(id) +
                                        ": first day offset must be 0");
        for (std::size_t t = 1; t < days.size(); ++t)
            if (days[t] < days[t - 1])
                throw std::invalid_argument("parcel " + std::to_string(id) +
                                            ": day stamps must be nondecreasing");
        if (pixels.size() !=
            static_cast<std::size_t>(t_len) * channels * pixel_count)
            throw std::invalid_argument("parcel " + std::to_string(id) +
                                        ": pixel buffer does not match T*C*N");
    }
};

}  // namespace psta
