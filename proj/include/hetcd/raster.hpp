#pragma once
// Raster data model and dataset-bundle I/O.
//
// A bundle is a JSON manifest plus raw headerless binaries: rasters as
// 32-bit little-endian floats in band-sequential layout, masks as u8 with
// values 0/1. Values are held as doubles in memory; file round-trips are
// bit-exact because every stored value passes through float.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hetcd/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "raster binaries are little-endian; big-endian hosts are unsupported");

namespace hetcd {

using Mask = std::vector<std::uint8_t>;

struct Raster {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<std::string> names;  // one per channel
    std::vector<double> data;        // band-sequential: [c][y][x]

    std::int64_t pixels() const { return static_cast<std::int64_t>(height) * width; }
    std::int64_t size() const { return pixels() * channels; }

    double& at(int c, int y, int x) {
        return data[(static_cast<std::int64_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return data[(static_cast<std::int64_t>(c) * height + y) * width + x];
    }

    const double* plane(int c) const { return data.data() + static_cast<std::int64_t>(c) * pixels(); }
    double* plane(int c) { return data.data() + static_cast<std::int64_t>(c) * pixels(); }

    // Index of the first channel whose name matches (case-insensitive), or -1.
    int channel_named(const std::string& name) const {
        auto lower = [](std::string s) {
            std::transform(s.begin(), s.end(), s.begin(),
                           [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
            return s;
        };
        const std::string want = lower(name);
        for (int c = 0; c < channels; ++c) {
            if (c < static_cast<int>(names.size()) && lower(names[c]) == want) return c;
        }
        return -1;
    }
};

struct DatasetBundle {
    std::string name;
    double pixel_spacing = 0.0;  // metres per pixel, 0 if unknown
    Raster t1;
    Raster t2;
    Mask ground_truth;                        // empty when absent
    std::map<std::string, Mask> region_masks; // named 0/1 masks, t1-shaped

    bool has_ground_truth() const { return !ground_truth.empty(); }
};

// Ordered list of labelled positive pixel indices; the unlabelled set U is
// the implicit complement of P in [0, universe_size).
struct LabeledSet {
    std::vector<std::int64_t> positive_indices;
    std::int64_t universe_size = 0;
};

inline void validate_raster(const Raster& r, const std::string& what) {
    if (r.height <= 0 || r.width <= 0 || r.channels <= 0)
        throw std::runtime_error(what + ": non-positive dimensions");
    if (static_cast<std::int64_t>(r.data.size()) != r.size())
        throw std::runtime_error(what + ": data length does not match height*width*channels");
    if (static_cast<int>(r.names.size()) != r.channels)
        throw std::runtime_error(what + ": expected one channel name per channel");
    for (double v : r.data) {
        if (!std::isfinite(v)) throw std::runtime_error(what + ": non-finite value");
    }
}

// Per-channel affine map of min->-1 and max->+1; constant channels become 0.
inline Raster normalize_raster(const Raster& r) {
    validate_raster(r, "normalize_raster");
    Raster out = r;
    const std::int64_t n = r.pixels();
    for (int c = 0; c < r.channels; ++c) {
        const double* src = r.plane(c);
        double* dst = out.plane(c);
        double lo = src[0], hi = src[0];
        for (std::int64_t i = 1; i < n; ++i) {
            lo = std::min(lo, src[i]);
            hi = std::max(hi, src[i]);
        }
        if (hi == lo) {
            std::fill(dst, dst + n, 0.0);
            continue;
        }
        // Symmetric form: exact -1/0/+1 at min, midpoint and max regardless
        // of FMA contraction.
        const double span = hi - lo;
        for (std::int64_t i = 0; i < n; ++i) dst[i] = ((src[i] - lo) - (hi - src[i])) / span;
    }
    return out;
}

// First npos entries of a seed-determined permutation of all positive pixels.
// For a fixed seed the drawn set of size m is a prefix of the set of size m',
// m < m', which realises the nested-training-set protocol.
inline LabeledSet sample_positive_set(const Mask& ground_truth, std::int64_t npos,
                                      std::uint64_t seed) {
    if (npos < 1) throw std::invalid_argument("sample_positive_set: npos must be >= 1");
    std::vector<std::int64_t> positives;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(ground_truth.size()); ++i) {
        if (ground_truth[i] != 0) positives.push_back(i);
    }
    if (npos > static_cast<std::int64_t>(positives.size()))
        throw std::invalid_argument("sample_positive_set: npos exceeds available positives (" +
                                    std::to_string(positives.size()) + ")");
    Rng rng(mix_seed(seed, 0x706f73ull));  // 'pos'
    const std::int64_t n = static_cast<std::int64_t>(positives.size());
    for (std::int64_t i = 0; i + 1 < n; ++i) {
        const std::int64_t j = i + static_cast<std::int64_t>(rng.below(n - i));
        std::swap(positives[i], positives[j]);
    }
    LabeledSet set;
    set.universe_size = static_cast<std::int64_t>(ground_truth.size());
    set.positive_indices.assign(positives.begin(), positives.begin() + npos);
    return set;
}

// ---------------------------------------------------------------------------
// Bundle manifest I/O
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path,
                             const std::uint8_t* data, std::size_t n) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write file: " + path.string());
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) throw std::runtime_error("short write: " + path.string());
}

inline Raster read_band_raster(const nlohmann::json& spec, const std::filesystem::path& base,
                               const std::string& what) {
    for (const char* key : {"file", "height", "width", "channels", "dtype", "layout", "names"}) {
        if (!spec.contains(key))
            throw std::runtime_error(what + ": manifest band spec missing field '" + key + "'");
    }
    if (spec.at("dtype").get<std::string>() != "f32le")
        throw std::runtime_error(what + ": unsupported dtype (want f32le)");
    if (spec.at("layout").get<std::string>() != "band-sequential")
        throw std::runtime_error(what + ": unsupported layout (want band-sequential)");

    Raster r;
    r.height = spec.at("height").get<int>();
    r.width = spec.at("width").get<int>();
    r.channels = spec.at("channels").get<int>();
    r.names = spec.at("names").get<std::vector<std::string>>();
    if (r.height <= 0 || r.width <= 0 || r.channels <= 0)
        throw std::runtime_error(what + ": non-positive dimensions in manifest");
    if (static_cast<int>(r.names.size()) != r.channels)
        throw std::runtime_error(what + ": names length does not equal channels");

    const auto path = base / spec.at("file").get<std::string>();
    const auto bytes = read_file_bytes(path);
    const std::int64_t expected = r.size() * 4;
    if (static_cast<std::int64_t>(bytes.size()) != expected)
        throw std::runtime_error(what + ": byte count mismatch for " + path.string() + " (got " +
                                 std::to_string(bytes.size()) + ", want " + std::to_string(expected) + ")");
    r.data.resize(r.size());
    for (std::int64_t i = 0; i < r.size(); ++i) {
        float f;
        std::memcpy(&f, bytes.data() + 4 * i, 4);
        r.data[i] = static_cast<double>(f);
    }
    validate_raster(r, what);
    return r;
}

inline Mask read_mask(const nlohmann::json& spec, const std::filesystem::path& base,
                      std::int64_t pixels, const std::string& what) {
    if (!spec.contains("file")) throw std::runtime_error(what + ": mask spec missing 'file'");
    if (spec.contains("dtype") && spec.at("dtype").get<std::string>() != "u8")
        throw std::runtime_error(what + ": unsupported mask dtype (want u8)");
    const auto path = base / spec.at("file").get<std::string>();
    auto bytes = read_file_bytes(path);
    if (static_cast<std::int64_t>(bytes.size()) != pixels)
        throw std::runtime_error(what + ": mask byte count mismatch for " + path.string());
    for (std::uint8_t b : bytes) {
        if (b > 1) throw std::runtime_error(what + ": mask values must be 0 or 1");
    }
    return bytes;
}

inline std::vector<std::uint8_t> raster_to_f32(const Raster& r) {
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(r.size()) * 4);
    for (std::int64_t i = 0; i < r.size(); ++i) {
        const float f = static_cast<float>(r.data[i]);
        std::memcpy(bytes.data() + 4 * i, &f, 4);
    }
    return bytes;
}

}  // namespace detail

inline DatasetBundle load_bundle(const std::filesystem::path& manifest_path) {
    if (!std::filesystem::exists(manifest_path))
        throw std::runtime_error("manifest not found: " + manifest_path.string());
    std::ifstream in(manifest_path);
    nlohmann::json m;
    try {
        in >> m;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("manifest parse error: " + std::string(e.what()));
    }
    const auto base = manifest_path.parent_path();

    DatasetBundle b;
    b.name = m.value("name", std::string("unnamed"));
    b.pixel_spacing = m.value("pixel_spacing", 0.0);
    if (!m.contains("t1") || !m.contains("t2"))
        throw std::runtime_error("manifest must declare t1 and t2");
    b.t1 = detail::read_band_raster(m.at("t1"), base, "t1");
    b.t2 = detail::read_band_raster(m.at("t2"), base, "t2");
    if (b.t1.height != b.t2.height || b.t1.width != b.t2.width)
        throw std::runtime_error("t1 and t2 must share height and width");

    if (m.contains("ground_truth"))
        b.ground_truth = detail::read_mask(m.at("ground_truth"), base, b.t1.pixels(), "ground_truth");
    if (m.contains("region_masks")) {
        for (const auto& [rname, spec] : m.at("region_masks").items())
            b.region_masks[rname] = detail::read_mask(spec, base, b.t1.pixels(), "region '" + rname + "'");
    }
    return b;
}

// Writes manifest.json plus the referenced binaries into dir. The layout is
// the exact inverse of load_bundle, so load(write(load(m))) is byte-stable.
inline std::filesystem::path write_bundle(const DatasetBundle& b, const std::filesystem::path& dir) {
    validate_raster(b.t1, "write_bundle t1");
    validate_raster(b.t2, "write_bundle t2");
    if (b.t1.height != b.t2.height || b.t1.width != b.t2.width)
        throw std::runtime_error("write_bundle: t1/t2 spatial mismatch");
    std::filesystem::create_directories(dir);

    auto band_spec = [&](const Raster& r, const std::string& file) {
        nlohmann::ordered_json spec;
        spec["file"] = file;
        spec["height"] = r.height;
        spec["width"] = r.width;
        spec["channels"] = r.channels;
        spec["dtype"] = "f32le";
        spec["layout"] = "band-sequential";
        spec["names"] = r.names;
        return spec;
    };

    nlohmann::ordered_json m;
    m["name"] = b.name;
    m["pixel_spacing"] = b.pixel_spacing;
    m["t1"] = band_spec(b.t1, "t1.bin");
    m["t2"] = band_spec(b.t2, "t2.bin");
    {
        auto bytes = detail::raster_to_f32(b.t1);
        detail::write_file_bytes(dir / "t1.bin", bytes.data(), bytes.size());
        bytes = detail::raster_to_f32(b.t2);
        detail::write_file_bytes(dir / "t2.bin", bytes.data(), bytes.size());
    }
    if (b.has_ground_truth()) {
        if (static_cast<std::int64_t>(b.ground_truth.size()) != b.t1.pixels())
            throw std::runtime_error("write_bundle: ground_truth shape mismatch");
        m["ground_truth"] = {{"file", "ground_truth.bin"}, {"dtype", "u8"}};
        detail::write_file_bytes(dir / "ground_truth.bin", b.ground_truth.data(), b.ground_truth.size());
    }
    if (!b.region_masks.empty()) {
        nlohmann::ordered_json masks;
        for (const auto& [rname, mask] : b.region_masks) {
            if (static_cast<std::int64_t>(mask.size()) != b.t1.pixels())
                throw std::runtime_error("write_bundle: region mask shape mismatch: " + rname);
            const std::string file = "region_" + rname + ".bin";
            masks[rname] = {{"file", file}, {"dtype", "u8"}};
            detail::write_file_bytes(dir / file, mask.data(), mask.size());
        }
        m["region_masks"] = masks;
    }

    const auto manifest_path = dir / "manifest.json";
    std::ofstream out(manifest_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write manifest: " + manifest_path.string());
    out << m.dump(2) << "\n";
    return manifest_path;
}

}  // namespace hetcd
