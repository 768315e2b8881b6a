#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace flowbench {

inline constexpr const char* kToolVersion = "0.1.0";

// Snapshot of everything needed to reproduce a training run bit-for-bit:
// configuration, model selection, and the identity of the dataset file.
struct RunManifest {
    std::string tool_version = kToolVersion;
    std::vector<std::string> models; // tags: transformer, conv, ae
    std::uint64_t seed = 0;
    std::size_t epochs = 20;
    std::size_t batch_size = 12;
    double lr = 1e-3;
    double dropout_p = 0.1;
    bool shuffle = true;
    bool row_tokens = false;
    std::string data_path;
    std::string data_digest; // fnv1a-64 of the dataset file, hex
    std::size_t n_frames = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::string outdir;
};

std::string fnv1a64_file_digest(const std::string& path);

void save_manifest(const RunManifest& manifest, const std::string& path);
RunManifest load_manifest(const std::string& path);

} // namespace flowbench
