#include "tfl/interp.hpp"

#include <algorithm>

#include "tfl/errors.hpp"

namespace tfl {

std::vector<InterpTap> linear_taps(std::size_t in_len, std::size_t out_len) {
    if (in_len == 0 || out_len == 0) throw ArgumentError("linear_taps: lengths must be positive");
    std::vector<InterpTap> taps(out_len);
    if (in_len == 1) return taps;

    for (std::size_t j = 0; j < out_len; ++j) {
        double pos = 0.0;
        if (out_len == 1) {
            pos = static_cast<double>(in_len - 1) / 2.0;
        } else if (in_len == out_len) {
            pos = static_cast<double>(j);
        } else {
            // integer numerator keeps the last position exactly in_len - 1
            pos = static_cast<double>(j * (in_len - 1)) / static_cast<double>(out_len - 1);
        }
        auto left = std::min(static_cast<std::size_t>(pos), in_len - 2);
        taps[j] = {left, pos - static_cast<double>(left)};
    }
    return taps;
}

}  // namespace tfl
