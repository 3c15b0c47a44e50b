#pragma once

#include <cstddef>
#include <vector>

namespace tfl {

// One output sample of an endpoint-aligned linear resampler:
// out[j] = (1 - weight) * in[left] + weight * in[left + 1].
struct InterpTap {
    std::size_t left = 0;
    double weight = 0.0;
};

// Taps mapping a length-in_len signal onto out_len uniformly spaced positions with the
// first and last samples aligned. A single output sample reads the centre of the input.
// in_len == 1 yields taps that copy the single input sample.
std::vector<InterpTap> linear_taps(std::size_t in_len, std::size_t out_len);

}  // namespace tfl
