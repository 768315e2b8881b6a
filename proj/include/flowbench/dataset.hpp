#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowbench/geometry.hpp"
#include "flowbench/rng.hpp"
#include "flowbench/tensor.hpp"

namespace flowbench {

// Ordered sequence of equal-sized 2D flow frames. The first
// floor(0.8 * n) frames are the training block, the rest are the test block.
// norm_lo/norm_hi record the original value range once normalize() has mapped
// the data into [-1, 1]; before that they describe the identity mapping.
struct FrameDataset {
    std::vector<Tensor> frames; // each [H x W]
    FrameGeometry geometry;
    double norm_lo = -1.0;
    double norm_hi = 1.0;
    std::size_t split_index = 0;

    std::size_t n_frames() const { return frames.size(); }
};

// Consecutive frames (t-1, t, t+1).
struct SamplePair {
    Tensor prev;
    Tensor curr;
    Tensor target;
    std::size_t t = 0; // index of `curr` in the source dataset
};

enum class Split { Train, Test };

// Deterministic traveling-wave vortex-street proxy:
//   f(x, y, t) = sin(2*pi*(3x/W - t/24)) * cos(2*pi*2y/H) * exp(-((y - H/2)/(0.35H))^2)
//              + 0.3 * sin(2*pi*(5x/W - t/12)) * sin(2*pi*3y/H)
// Exactly periodic in t with period 24 (the phase is reduced mod 24 before
// evaluation, so frame t and frame t+24 are bit-identical). The seed is
// reserved for optional additive noise and currently leaves the data
// untouched.
FrameDataset generate_synthetic(const FrameGeometry& geometry, std::size_t n_frames,
                                std::uint64_t seed);

// FLOWDAT1 container: bytes 0-7 magic "FLOWDAT1", then little-endian u32
// n_frames, u32 height, u32 width, then n_frames*H*W little-endian 64-bit
// floats, frame-major, row-major within each frame.
FrameDataset load_raw(const std::string& path);
void save_raw(const FrameDataset& ds, const std::string& path);

// Affine map of the training-block range onto [-1, 1]; the same transform is
// applied to the test frames, which may therefore land slightly outside.
FrameDataset normalize(const FrameDataset& ds);
double denormalize_value(const FrameDataset& ds, double v);

// Train pairs keep (prev, curr, target) entirely inside the training block;
// test pairs entirely inside the test block. Boundary-straddling pairs are
// dropped.
std::vector<SamplePair> make_pairs(const FrameDataset& ds, Split split);

// Partitions pairs into batches of at most batch_size for one epoch, keeping
// the last partial batch. A non-null rng shuffles the pair order first.
std::vector<std::vector<SamplePair>> batch_iter(const std::vector<SamplePair>& pairs,
                                                std::size_t batch_size, Rng* shuffle_rng);

} // namespace flowbench
