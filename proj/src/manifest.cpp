#include "flowbench/manifest.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "flowbench/errors.hpp"

namespace flowbench {

std::string fnv1a64_file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path + " for digesting");
    }
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (!in) {
            break;
        }
    }
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << h;
    return out.str();
}

void save_manifest(const RunManifest& m, const std::string& path) {
    nlohmann::json j;
    j["tool_version"] = m.tool_version;
    j["models"] = m.models;
    j["seed"] = m.seed;
    j["epochs"] = m.epochs;
    j["batch_size"] = m.batch_size;
    j["lr"] = m.lr;
    j["dropout_p"] = m.dropout_p;
    j["shuffle"] = m.shuffle;
    j["row_tokens"] = m.row_tokens;
    j["dataset"] = {{"path", m.data_path},
                    {"digest_fnv1a64", m.data_digest},
                    {"n_frames", m.n_frames},
                    {"height", m.height},
                    {"width", m.width}};
    j["outdir"] = m.outdir;

    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw FormatError("cannot open " + path + " for writing");
    }
    out << j.dump(2) << "\n";
    if (!out) {
        throw FormatError("failed writing manifest to " + path);
    }
}

RunManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open manifest file " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("manifest " + path + " is not valid JSON: " + e.what());
    }
    try {
        RunManifest m;
        m.tool_version = j.at("tool_version").get<std::string>();
        m.models = j.at("models").get<std::vector<std::string>>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.epochs = j.at("epochs").get<std::size_t>();
        m.batch_size = j.at("batch_size").get<std::size_t>();
        m.lr = j.at("lr").get<double>();
        m.dropout_p = j.at("dropout_p").get<double>();
        m.shuffle = j.at("shuffle").get<bool>();
        m.row_tokens = j.at("row_tokens").get<bool>();
        const auto& ds = j.at("dataset");
        m.data_path = ds.at("path").get<std::string>();
        m.data_digest = ds.at("digest_fnv1a64").get<std::string>();
        m.n_frames = ds.at("n_frames").get<std::size_t>();
        m.height = ds.at("height").get<std::size_t>();
        m.width = ds.at("width").get<std::size_t>();
        m.outdir = j.at("outdir").get<std::string>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest " + path + " is missing fields: " + e.what());
    }
}

} // namespace flowbench
