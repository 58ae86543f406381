#pragma once

// Checkpoint directory: manifest.txt ("<name> f32 <d0>x<d1>..." per parameter, in
// registration order) and weights.bin (little-endian float32 values, same order).

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ssw/autodiff.hpp"

namespace ssw::ckpt {

namespace fs = std::filesystem;

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline fs::path manifest_path(const fs::path& dir) { return dir / "manifest.txt"; }
inline fs::path blob_path(const fs::path& dir) { return dir / "weights.bin"; }

struct ManifestEntry {
    std::string name;
    std::string dtype;
    Shape shape;
};

inline std::string shape_token(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out.empty() ? "scalar" : out;
}

inline Shape parse_shape_token(const std::string& tok) {
    Shape s;
    if (tok == "scalar") return s;
    std::stringstream ss(tok);
    std::string part;
    while (std::getline(ss, part, 'x')) s.push_back(std::stoul(part));
    return s;
}

inline std::vector<ManifestEntry> read_manifest(const fs::path& dir) {
    std::ifstream in(manifest_path(dir));
    if (!in) throw CheckpointError("cannot read " + manifest_path(dir).string());
    std::vector<ManifestEntry> entries;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        ManifestEntry e;
        std::string shape;
        if (!(ls >> e.name >> e.dtype >> shape)) throw CheckpointError("malformed manifest line: " + line);
        e.shape = parse_shape_token(shape);
        entries.push_back(std::move(e));
    }
    return entries;
}

inline std::uint32_t to_little_endian(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
    return v;
}

template <std::floating_point T>
void save(const fs::path& dir, const ParameterSet<T>& params) {
    fs::create_directories(dir);
    std::ofstream man(manifest_path(dir), std::ios::trunc);
    std::ofstream blob(blob_path(dir), std::ios::binary | std::ios::trunc);
    if (!man || !blob) throw CheckpointError("cannot write checkpoint to " + dir.string());
    for (const auto& p : params.all()) {
        man << p.name << " f32 " << shape_token(p.value().shape()) << '\n';
        for (T v : p.value().data()) {
            const float f = static_cast<float>(v);
            std::uint32_t bits = 0;
            std::memcpy(&bits, &f, 4);
            bits = to_little_endian(bits);
            blob.write(reinterpret_cast<const char*>(&bits), 4);
        }
    }
    if (!man.flush() || !blob.flush()) throw CheckpointError("write failed for checkpoint " + dir.string());
}

/// Loads into an already-built parameter set; names and shapes must agree entry by entry.
template <std::floating_point T>
void load(const fs::path& dir, ParameterSet<T>& params) {
    const auto entries = read_manifest(dir);
    auto& all = params.all();
    const std::size_t n = std::min(entries.size(), all.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto& e = entries[i];
        const auto& p = all[i];
        if (e.name != p.name || e.shape != p.value().shape() || e.dtype != "f32")
            throw CheckpointError("checkpoint mismatch at parameter '" + p.name + "': model expects " +
                                  shape_str(p.value().shape()) + ", checkpoint has '" + e.name + "' " +
                                  shape_str(e.shape) + " " + e.dtype);
    }
    if (entries.size() != all.size())
        throw CheckpointError("checkpoint mismatch at parameter '" +
                              (entries.size() < all.size() ? all[n].name : entries[n].name) + "': checkpoint has " +
                              std::to_string(entries.size()) + " parameters, model has " + std::to_string(all.size()));

    std::ifstream blob(blob_path(dir), std::ios::binary | std::ios::ate);
    if (!blob) throw CheckpointError("cannot read " + blob_path(dir).string());
    std::size_t expect = 0;
    for (const auto& p : all) expect += p.value().size() * 4;
    if (static_cast<std::size_t>(blob.tellg()) != expect)
        throw CheckpointError("weights.bin holds " + std::to_string(static_cast<std::size_t>(blob.tellg())) +
                              " bytes, manifest implies " + std::to_string(expect));
    blob.seekg(0);
    for (auto& p : all)
        for (T& v : p.mutable_value().data()) {
            std::uint32_t bits = 0;
            blob.read(reinterpret_cast<char*>(&bits), 4);
            bits = to_little_endian(bits);
            float f;
            std::memcpy(&f, &bits, 4);
            v = static_cast<T>(f);
        }
}

}  // namespace ssw::ckpt
