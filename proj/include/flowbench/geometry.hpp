#pragma once

#include <cstddef>

namespace flowbench {

// Shared frame geometry. The default 16x32 keeps the flattened length at 512.
struct FrameGeometry {
    std::size_t height = 16;
    std::size_t width = 32;

    std::size_t flat_len() const { return height * width; }

    bool operator==(const FrameGeometry&) const = default;
};

} // namespace flowbench
