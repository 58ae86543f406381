#pragma once

// On-disk OCTA sample layout, split partitions, and a procedural vessel generator.
//
//   <root>/<3M|6M>/projections/{FULL,ILM_OPL,OPL_BM}/<id>.png
//   <root>/<3M|6M>/labels/<task>/<id>.png

#include <algorithm>
#include <array>
#include <cmath>
#include <cctype>
#include <optional>
#include <random>

#include "ssw/pipeline/png_io.hpp"
#include "ssw/tensor.hpp"

namespace ssw::data {

namespace fs = std::filesystem;

enum class Task { RV, FAZ, Capillary, Artery, Vein };
enum class Subset { M3, M6 };
enum class Split { Train, Val, Test };

inline std::string to_string(Task t) {
    static constexpr std::array names{"rv", "faz", "capillary", "artery", "vein"};
    return names[static_cast<std::size_t>(t)];
}
inline std::string to_string(Subset s) { return s == Subset::M3 ? "3M" : "6M"; }
inline std::string to_string(Split s) { return s == Split::Train ? "train" : s == Split::Val ? "val" : "test"; }

inline Task parse_task(std::string s) {
    std::ranges::transform(s, s.begin(), [](unsigned char c) { return std::tolower(c); });
    for (Task t : {Task::RV, Task::FAZ, Task::Capillary, Task::Artery, Task::Vein})
        if (to_string(t) == s) return t;
    throw std::invalid_argument("unknown task: " + s);
}
inline Subset parse_subset(std::string s) {
    std::ranges::transform(s, s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "3m") return Subset::M3;
    if (s == "6m") return Subset::M6;
    throw std::invalid_argument("unknown subset: " + s);
}
inline Split parse_split(const std::string& s) {
    for (Split p : {Split::Train, Split::Val, Split::Test})
        if (to_string(p) == s) return p;
    throw std::invalid_argument("unknown split: " + s);
}

inline const std::array<std::string, 3>& projection_layers() {
    static const std::array<std::string, 3> layers{"FULL", "ILM_OPL", "OPL_BM"};
    return layers;
}

struct IdRange {
    int first = 0;
    int last = 0;  // inclusive
    bool contains(int id) const { return id >= first && id <= last; }
    std::size_t size() const { return static_cast<std::size_t>(last - first + 1); }
};

struct PartitionSpec {
    Subset subset = Subset::M3;
    IdRange train, val, test;

    static PartitionSpec octa500(Subset s) {
        if (s == Subset::M3) return {s, {10301, 10440}, {10441, 10450}, {10451, 10500}};
        return {s, {10001, 10180}, {10181, 10200}, {10201, 10300}};
    }

    std::optional<Split> split_of(int id) const {
        if (train.contains(id)) return Split::Train;
        if (val.contains(id)) return Split::Val;
        if (test.contains(id)) return Split::Test;
        return std::nullopt;
    }
    const IdRange& range(Split s) const { return s == Split::Train ? train : s == Split::Val ? val : test; }
};

struct SampleRecord {
    int id = 0;
    Tensor<float> input;   // [3, H, W], FULL / ILM_OPL / OPL_BM in [0, 1]
    Tensor<float> target;  // [1, H, W], exactly {0, 1}
    Task task = Task::RV;

    std::size_t height() const { return target.dim(1); }
    std::size_t width() const { return target.dim(2); }
};

struct Dataset {
    std::vector<SampleRecord> train, val, test;

    const std::vector<SampleRecord>& split(Split s) const { return s == Split::Train ? train : s == Split::Val ? val : test; }
    std::size_t size() const { return train.size() + val.size() + test.size(); }
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline fs::path projection_path(const fs::path& root, Subset s, const std::string& layer, int id) {
    return root / to_string(s) / "projections" / layer / (std::to_string(id) + ".png");
}
inline fs::path label_path(const fs::path& root, Subset s, Task t, int id) {
    return root / to_string(s) / "labels" / to_string(t) / (std::to_string(id) + ".png");
}

namespace detail {
inline io::Image read_required(const fs::path& p) {
    if (!fs::is_regular_file(p)) throw DataError("missing file: " + p.string());
    return io::read_gray(p);
}
}  // namespace detail

/// One sample: three projections scaled by 1/255, label binarized at > 127.
inline SampleRecord load_sample(const fs::path& root, Subset subset, Task task, int id) {
    SampleRecord rec;
    rec.id = id;
    rec.task = task;
    const auto label = detail::read_required(label_path(root, subset, task, id));
    const std::size_t h = label.height, w = label.width;
    rec.input = Tensor<float>({3, h, w});
    rec.target = Tensor<float>({1, h, w});
    for (std::size_t i = 0; i < h * w; ++i) rec.target[i] = label.pixels[i] > 127 ? 1.0f : 0.0f;
    for (std::size_t c = 0; c < 3; ++c) {
        const auto img = detail::read_required(projection_path(root, subset, projection_layers()[c], id));
        if (img.height != h || img.width != w)
            throw DataError("sample " + std::to_string(id) + ": " + projection_layers()[c] + " is " +
                            std::to_string(img.height) + "x" + std::to_string(img.width) + " but label is " +
                            std::to_string(h) + "x" + std::to_string(w));
        for (std::size_t i = 0; i < h * w; ++i) rec.input[c * h * w + i] = static_cast<float>(img.pixels[i]) / 255.0f;
    }
    return rec;
}

/// IDs with a FULL projection on disk, ascending.
inline std::vector<int> discover_ids(const fs::path& root, Subset subset) {
    const fs::path dir = root / to_string(subset) / "projections" / "FULL";
    std::vector<int> ids;
    if (fs::is_directory(dir))
        for (const auto& e : fs::directory_iterator(dir)) {
            if (e.path().extension() != ".png") continue;
            const std::string stem = e.path().stem().string();
            if (stem.empty() || !std::ranges::all_of(stem, [](unsigned char c) { return std::isdigit(c); })) continue;
            ids.push_back(std::stoi(stem));
        }
    std::ranges::sort(ids);
    return ids;
}

/// Every sample on disk, assigned to its split. IDs outside the partition are rejected.
inline Dataset load_dataset(const fs::path& root, const PartitionSpec& part, Task task) {
    const auto ids = discover_ids(root, part.subset);
    if (ids.empty())
        throw DataError("no samples under " + (root / to_string(part.subset) / "projections" / "FULL").string());
    Dataset ds;
    for (int id : ids) {
        const auto split = part.split_of(id);
        if (!split) throw DataError("sample " + std::to_string(id) + " is outside the " + to_string(part.subset) + " partition");
        auto rec = load_sample(root, part.subset, task, id);
        (*split == Split::Train ? ds.train : *split == Split::Val ? ds.val : ds.test).push_back(std::move(rec));
    }
    return ds;
}

inline io::Image to_image(const Tensor<float>& plane, std::size_t h, std::size_t w, std::size_t offset = 0) {
    io::Image img(w, h, 1);
    for (std::size_t i = 0; i < h * w; ++i)
        img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(plane[offset + i], 0.0f, 1.0f) * 255.0f));
    return img;
}

inline void save_sample(const fs::path& root, Subset subset, const SampleRecord& rec) {
    const std::size_t h = rec.height(), w = rec.width();
    for (std::size_t c = 0; c < 3; ++c)
        io::write(projection_path(root, subset, projection_layers()[c], rec.id), to_image(rec.input, h, w, c * h * w));
    io::write(label_path(root, subset, rec.task, rec.id), to_image(rec.target, h, w));
}

/// Curvilinear vessel tree on a noisy background, fully determined by `seed`.
inline SampleRecord synthetic_vessels(int id, std::size_t size, std::uint64_t seed, Task task = Task::RV) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double n = static_cast<double>(size);
    std::vector<float> vessel(size * size, 0.0f);

    auto stamp = [&](double cy, double cx, double r) {
        const long y0 = std::lround(std::floor(cy - r)), y1 = std::lround(std::ceil(cy + r));
        const long x0 = std::lround(std::floor(cx - r)), x1 = std::lround(std::ceil(cx + r));
        for (long y = std::max(0L, y0); y <= std::min(long(size) - 1, y1); ++y)
            for (long x = std::max(0L, x0); x <= std::min(long(size) - 1, x1); ++x)
                if (std::hypot(y - cy, x - cx) <= r) vessel[y * size + x] = 1.0f;
    };
    // Each vessel is a random walk with smoothly drifting heading, entering from an edge.
    const int count = 3 + static_cast<int>(u(rng) * 3);
    for (int v = 0; v < count; ++v) {
        double y = u(rng) * n, x = u(rng) * n;
        const int edge = static_cast<int>(u(rng) * 4);
        double heading = u(rng) * 2 * M_PI;
        if (edge == 0) y = 0, heading = M_PI / 2 + (u(rng) - 0.5);
        if (edge == 1) y = n - 1, heading = -M_PI / 2 + (u(rng) - 0.5);
        if (edge == 2) x = 0, heading = (u(rng) - 0.5);
        if (edge == 3) x = n - 1, heading = M_PI + (u(rng) - 0.5);
        double radius = 1.2 + u(rng) * 1.3, turn = 0.0;
        for (int step = 0; step < int(2 * n); ++step) {
            stamp(y, x, radius);
            turn = 0.85 * turn + 0.15 * (u(rng) - 0.5);
            heading += turn;
            y += 0.7 * std::sin(heading);
            x += 0.7 * std::cos(heading);
            radius = std::max(0.8, radius - 0.004);
            if (y < -2 || x < -2 || y > n + 1 || x > n + 1) break;
        }
    }

    SampleRecord rec;
    rec.id = id;
    rec.task = task;
    rec.target = Tensor<float>({1, size, size}, vessel);
    rec.input = Tensor<float>({3, size, size});
    std::normal_distribution<double> noise(0.0, 0.05);
    const double gain[3] = {0.75, 0.6, 0.15};
    const double floor_level[3] = {0.15, 0.1, 0.3};
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < size * size; ++i)
            rec.input[c * size * size + i] =
                static_cast<float>(std::clamp(floor_level[c] + gain[c] * vessel[i] + noise(rng), 0.0, 1.0));
    return rec;
}

/// Writes `count` synthetic samples per split, using the first IDs of each partition range.
inline void write_synthetic_dataset(const fs::path& root, const PartitionSpec& part, Task task,
                                    std::array<std::size_t, 3> count, std::size_t size, std::uint64_t seed) {
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
        const auto& r = part.range(s);
        const std::size_t n = std::min(count[static_cast<std::size_t>(s)], r.size());
        for (std::size_t k = 0; k < n; ++k) {
            const int id = r.first + static_cast<int>(k);
            save_sample(root, part.subset, synthetic_vessels(id, size, seed * 1000003ULL + static_cast<std::uint64_t>(id), task));
        }
    }
}

}  // namespace ssw::data
