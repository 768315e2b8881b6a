#include "flowbench/dataset.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>

namespace flowbench {

namespace {

constexpr char kMagic[8] = {'F', 'L', 'O', 'W', 'D', 'A', 'T', '1'};
constexpr std::size_t kHeaderBytes = 8 + 3 * 4;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_f64(std::string& out, double v) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
}

double get_f64(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) {
        bits = (bits << 8) | p[i];
    }
    return std::bit_cast<double>(bits);
}

std::size_t default_split(std::size_t n_frames) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n_frames) * 0.8));
}

} // namespace

FrameDataset generate_synthetic(const FrameGeometry& geometry, std::size_t n_frames,
                                std::uint64_t seed) {
    (void)seed;
    if (n_frames < 3) {
        throw ParameterError("synthetic dataset needs at least 3 frames, got " +
                             std::to_string(n_frames));
    }
    constexpr double two_pi = 2.0 * std::numbers::pi;
    const double w = static_cast<double>(geometry.width);
    const double h = static_cast<double>(geometry.height);

    FrameDataset ds;
    ds.geometry = geometry;
    ds.frames.reserve(n_frames);
    for (std::size_t t = 0; t < n_frames; ++t) {
        const double tm = static_cast<double>(t % 24);
        Tensor frame(Shape{geometry.height, geometry.width});
        for (std::size_t y = 0; y < geometry.height; ++y) {
            const double yd = static_cast<double>(y);
            const double envelope = std::exp(-std::pow((yd - h / 2.0) / (0.35 * h), 2.0));
            const double cross1 = std::cos(two_pi * 2.0 * yd / h) * envelope;
            const double cross2 = std::sin(two_pi * 3.0 * yd / h);
            for (std::size_t x = 0; x < geometry.width; ++x) {
                const double xd = static_cast<double>(x);
                const double wave1 = std::sin(two_pi * (3.0 * xd / w - tm / 24.0));
                const double wave2 = std::sin(two_pi * (5.0 * xd / w - tm / 12.0));
                frame.at(y * geometry.width + x) = wave1 * cross1 + 0.3 * wave2 * cross2;
            }
        }
        ds.frames.push_back(std::move(frame));
    }
    ds.split_index = default_split(n_frames);
    return ds;
}

void save_raw(const FrameDataset& ds, const std::string& path) {
    std::string bytes;
    bytes.reserve(kHeaderBytes + ds.n_frames() * ds.geometry.flat_len() * 8);
    bytes.append(kMagic, sizeof(kMagic));
    put_u32(bytes, static_cast<std::uint32_t>(ds.n_frames()));
    put_u32(bytes, static_cast<std::uint32_t>(ds.geometry.height));
    put_u32(bytes, static_cast<std::uint32_t>(ds.geometry.width));
    for (const Tensor& frame : ds.frames) {
        for (std::size_t i = 0; i < frame.size(); ++i) {
            put_f64(bytes, frame.at(i));
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot open " + path + " for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw FormatError("failed writing dataset to " + path);
    }
}

FrameDataset load_raw(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open dataset file " + path);
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < kHeaderBytes) {
        throw FormatError("dataset file " + path + " is shorter than the FLOWDAT1 header");
    }
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("bad magic in " + path + ": expected \"FLOWDAT1\"");
    }
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint32_t n_frames = get_u32(p + 8);
    const std::uint32_t height = get_u32(p + 12);
    const std::uint32_t width = get_u32(p + 16);
    if (n_frames < 3 || height == 0 || width == 0) {
        throw FormatError("dataset header declares unusable geometry: " +
                          std::to_string(n_frames) + " frames of " + std::to_string(height) +
                          "x" + std::to_string(width));
    }
    const std::size_t flat = static_cast<std::size_t>(height) * width;
    const std::size_t expected = kHeaderBytes + static_cast<std::size_t>(n_frames) * flat * 8;
    if (bytes.size() != expected) {
        throw FormatError("dataset file " + path + " is truncated or padded: expected " +
                          std::to_string(expected) + " bytes, found " +
                          std::to_string(bytes.size()));
    }

    FrameDataset ds;
    ds.geometry = FrameGeometry{height, width};
    ds.frames.reserve(n_frames);
    std::size_t offset = kHeaderBytes;
    for (std::uint32_t t = 0; t < n_frames; ++t) {
        Tensor frame(Shape{height, width});
        for (std::size_t i = 0; i < flat; ++i, offset += 8) {
            frame.at(i) = get_f64(p + offset);
        }
        ds.frames.push_back(std::move(frame));
    }
    ds.split_index = default_split(n_frames);
    return ds;
}

FrameDataset normalize(const FrameDataset& ds) {
    if (ds.split_index < 1 || ds.split_index > ds.n_frames()) {
        throw ContractError("normalize: dataset split index is not set");
    }
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < ds.split_index; ++t) {
        const Tensor& frame = ds.frames[t];
        for (std::size_t i = 0; i < frame.size(); ++i) {
            lo = std::min(lo, frame.at(i));
            hi = std::max(hi, frame.at(i));
        }
    }
    if (!(hi > lo)) {
        throw ParameterError("normalize: training range is degenerate (min == max == " +
                             std::to_string(lo) + ")");
    }

    FrameDataset out;
    out.geometry = ds.geometry;
    out.split_index = ds.split_index;
    out.norm_lo = lo;
    out.norm_hi = hi;
    const double inv_span = 2.0 / (hi - lo);
    out.frames.reserve(ds.n_frames());
    for (const Tensor& frame : ds.frames) {
        Tensor mapped(frame.shape());
        for (std::size_t i = 0; i < frame.size(); ++i) {
            mapped.at(i) = (frame.at(i) - lo) * inv_span - 1.0;
        }
        out.frames.push_back(std::move(mapped));
    }
    return out;
}

double denormalize_value(const FrameDataset& ds, double v) {
    return ds.norm_lo + (v + 1.0) * 0.5 * (ds.norm_hi - ds.norm_lo);
}

std::vector<SamplePair> make_pairs(const FrameDataset& ds, Split split) {
    const std::size_t n = ds.n_frames();
    if (ds.split_index < 2 || ds.split_index > n) {
        throw ContractError("make_pairs: dataset split index is not set");
    }
    // Train: t in [1, split-2], so the target t+1 stays inside the training
    // block. Test: t in [split+1, n-2], so prev/curr/target all live in the
    // test block.
    std::size_t first, last; // inclusive range of `curr`
    if (split == Split::Train) {
        first = 1;
        last = ds.split_index - 2;
        if (ds.split_index < 3) {
            throw ParameterError("training block of " + std::to_string(ds.split_index) +
                                 " frames yields no (prev, curr, next) pairs");
        }
    } else {
        first = ds.split_index + 1;
        if (n < ds.split_index + 3) {
            throw ParameterError("test block of " + std::to_string(n - ds.split_index) +
                                 " frames yields no (prev, curr, next) pairs");
        }
        last = n - 2;
    }

    std::vector<SamplePair> pairs;
    pairs.reserve(last - first + 1);
    for (std::size_t t = first; t <= last; ++t) {
        pairs.push_back(SamplePair{ds.frames[t - 1], ds.frames[t], ds.frames[t + 1], t});
    }
    return pairs;
}

std::vector<std::vector<SamplePair>> batch_iter(const std::vector<SamplePair>& pairs,
                                                std::size_t batch_size, Rng* shuffle_rng) {
    if (batch_size < 1) {
        throw ParameterError("batch size must be >= 1");
    }
    std::vector<SamplePair> order = pairs;
    if (shuffle_rng != nullptr) {
        shuffle(order, *shuffle_rng);
    }
    std::vector<std::vector<SamplePair>> batches;
    batches.reserve((order.size() + batch_size - 1) / batch_size);
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
        const std::size_t end = std::min(i + batch_size, order.size());
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

} // namespace flowbench
