#pragma once

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srforge/geo.hpp"
#include "srforge/nn.hpp"
#include "srforge/raster.hpp"

namespace srforge::io {

using json = nlohmann::json;

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(bool(in), "io", "cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_file(const std::string& path, const void* data, std::size_t size) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(bool(out), "io", "cannot write " + path);
    out.write(reinterpret_cast<const char*>(data), std::streamsize(size));
    require(bool(out), "io", "short write to " + path);
}

template <typename T>
inline void append_le(std::vector<std::uint8_t>& buf, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
        buf.push_back(std::uint8_t((std::uint64_t(value) >> (8 * i)) & 0xff));
}

template <typename T>
inline T read_le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(p[i]) << (8 * i);
    return T(v);
}

} // namespace detail

// ---- SRRAS v1: JSON sidecar + raw f32 little-endian payload ----
//
// The sidecar lives at <path>; the payload at <path>.bin. Layout is
// band-sequential row-major, single precision, little endian.

struct LoadedRaster {
    Raster raster;
    std::optional<GeoAnchor> geo;
};

inline void save_srras(const std::string& path, const Raster& r,
                       const GeoAnchor* geo = nullptr) {
    r.validate();
    json sidecar{{"format", "SRRAS"},
                 {"version", 1},
                 {"width", r.width},
                 {"height", r.height},
                 {"bands", r.bands},
                 {"bit_depth", r.nominal_bit_depth},
                 {"dtype", "f32"},
                 {"byte_order", "LE"},
                 {"layout", "band-sequential row-major"}};
    if (r.gsd) sidecar["gsd_m"] = *r.gsd;
    if (geo) {
        sidecar["geo"] = {{"origin_x", geo->origin_x},
                          {"origin_y", geo->origin_y},
                          {"pixel_size_x", geo->pixel_size_x},
                          {"pixel_size_y", geo->pixel_size_y},
                          {"crs_id", geo->crs_id}};
    }
    const std::string text = sidecar.dump(2) + "\n";
    detail::write_file(path, text.data(), text.size());

    std::vector<float> payload(r.data.size());
    for (std::size_t i = 0; i < r.data.size(); ++i) payload[i] = float(r.data[i]);
    detail::write_file(path + ".bin", payload.data(), payload.size() * sizeof(float));
}

inline LoadedRaster load_srras(const std::string& path) {
    json sidecar;
    {
        std::ifstream in(path);
        require(bool(in), "io", "cannot open " + path);
        try {
            in >> sidecar;
        } catch (const json::exception& e) {
            fail("io", "malformed SRRAS sidecar " + path + ": " + e.what());
        }
    }
    require(sidecar.value("format", "") == "SRRAS", "io", path + " is not an SRRAS sidecar");
    require(sidecar.value("dtype", "") == "f32" && sidecar.value("byte_order", "") == "LE",
            "io", path + ": unsupported payload encoding");

    LoadedRaster out;
    Raster& r = out.raster;
    r.width = sidecar.at("width").get<int>();
    r.height = sidecar.at("height").get<int>();
    r.bands = sidecar.at("bands").get<int>();
    r.nominal_bit_depth = sidecar.value("bit_depth", 8);
    if (sidecar.contains("gsd_m")) r.gsd = sidecar["gsd_m"].get<double>();
    require(r.width > 0 && r.height > 0 && r.bands > 0, "io", path + ": invalid dimensions");

    const auto bytes = detail::read_file(path + ".bin");
    const std::size_t expect = std::size_t(r.width) * r.height * r.bands * sizeof(float);
    require(bytes.size() == expect, "io",
            path + ".bin: payload is " + std::to_string(bytes.size()) + " bytes, expected " +
                std::to_string(expect));
    r.data.resize(bytes.size() / sizeof(float));
    for (std::size_t i = 0; i < r.data.size(); ++i) {
        float f;
        std::memcpy(&f, bytes.data() + i * sizeof(float), sizeof(float));
        r.data[i] = double(f);
    }

    if (sidecar.contains("geo")) {
        const auto& g = sidecar["geo"];
        GeoAnchor anchor;
        anchor.origin_x = g.at("origin_x").get<double>();
        anchor.origin_y = g.at("origin_y").get<double>();
        anchor.pixel_size_x = g.at("pixel_size_x").get<double>();
        anchor.pixel_size_y = g.at("pixel_size_y").get<double>();
        anchor.crs_id = g.value("crs_id", "");
        out.geo = anchor;
    }
    return out;
}

// ---- SRWT v1: named weight arrays, bit-exact round trip ----
//
// magic "SRWT", u32 version, u32 entry count, then per entry:
// u32 name length, UTF-8 name, u8 dtype (0 = f32, 1 = f64), u8 rank,
// u32 dims[rank], raw little-endian values.

struct WeightEntry {
    std::string name;
    std::vector<std::int64_t> dims;
    std::vector<double> values;
};

inline void save_srwt(const std::string& path, const std::vector<WeightEntry>& entries) {
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), {'S', 'R', 'W', 'T'});
    detail::append_le<std::uint32_t>(buf, 1);
    detail::append_le<std::uint32_t>(buf, std::uint32_t(entries.size()));
    for (const auto& e : entries) {
        detail::append_le<std::uint32_t>(buf, std::uint32_t(e.name.size()));
        buf.insert(buf.end(), e.name.begin(), e.name.end());
        buf.push_back(1); // f64
        buf.push_back(std::uint8_t(e.dims.size()));
        std::int64_t n = 1;
        for (const auto d : e.dims) {
            detail::append_le<std::uint32_t>(buf, std::uint32_t(d));
            n *= d;
        }
        require(std::int64_t(e.values.size()) == n, "io",
                "SRWT entry " + e.name + ": dims do not match value count");
        for (const double v : e.values) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof(bits));
            detail::append_le<std::uint64_t>(buf, bits);
        }
    }
    detail::write_file(path, buf.data(), buf.size());
}

inline std::vector<WeightEntry> load_srwt(const std::string& path) {
    const auto bytes = detail::read_file(path);
    require(bytes.size() >= 12 && std::memcmp(bytes.data(), "SRWT", 4) == 0, "io",
            path + " is not an SRWT file");
    const auto version = detail::read_le<std::uint32_t>(bytes.data() + 4);
    require(version == 1, "io", path + ": unsupported SRWT version");
    const auto count = detail::read_le<std::uint32_t>(bytes.data() + 8);

    std::vector<WeightEntry> entries;
    entries.reserve(count);
    std::size_t pos = 12;
    const auto need = [&](std::size_t n) {
        require(pos + n <= bytes.size(), "io", path + ": truncated SRWT payload");
    };
    for (std::uint32_t i = 0; i < count; ++i) {
        need(4);
        const auto name_len = detail::read_le<std::uint32_t>(bytes.data() + pos);
        pos += 4;
        need(name_len + 2);
        WeightEntry e;
        e.name.assign(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
        pos += name_len;
        const std::uint8_t dtype = bytes[pos++];
        const std::uint8_t rank = bytes[pos++];
        require(dtype == 0 || dtype == 1, "io", path + ": unknown dtype code");
        std::int64_t n = 1;
        need(std::size_t(rank) * 4);
        for (int d = 0; d < rank; ++d) {
            e.dims.push_back(detail::read_le<std::uint32_t>(bytes.data() + pos));
            pos += 4;
            n *= e.dims.back();
        }
        const std::size_t elem = dtype == 1 ? 8 : 4;
        need(std::size_t(n) * elem);
        e.values.resize(std::size_t(n));
        for (std::int64_t k = 0; k < n; ++k) {
            if (dtype == 1) {
                const auto bits = detail::read_le<std::uint64_t>(bytes.data() + pos);
                double v;
                std::memcpy(&v, &bits, sizeof(v));
                e.values[std::size_t(k)] = v;
            } else {
                const auto bits = detail::read_le<std::uint32_t>(bytes.data() + pos);
                float v;
                std::memcpy(&v, &bits, sizeof(v));
                e.values[std::size_t(k)] = double(v);
            }
            pos += elem;
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

/// Serialize a registry (parameters first, then buffers) into SRWT entries.
inline std::vector<WeightEntry> registry_to_entries(const nn::ParamRegistry& reg) {
    std::vector<WeightEntry> entries;
    for (const auto& p : reg.parameters()) {
        WeightEntry e;
        e.name = p.name;
        e.dims.assign(p.tensor.shape().begin(), p.tensor.shape().end());
        e.values = p.tensor.data();
        entries.push_back(std::move(e));
    }
    for (const auto& b : reg.buffers()) {
        WeightEntry e;
        e.name = b.name;
        e.dims = {std::int64_t(b.data->size())};
        e.values = *b.data;
        entries.push_back(std::move(e));
    }
    return entries;
}

inline void entries_to_registry(const std::vector<WeightEntry>& entries, nn::ParamRegistry& reg) {
    const auto find = [&](const std::string& name) -> const WeightEntry* {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    };
    for (auto& p : reg.parameters()) {
        const WeightEntry* e = find(p.name);
        require(e != nullptr, "io", "weights file is missing parameter " + p.name);
        require(e->values.size() == p.tensor.data().size(), "io",
                "weights file: size mismatch for " + p.name);
        p.tensor.data() = e->values;
    }
    for (auto& b : reg.buffers()) {
        const WeightEntry* e = find(b.name);
        require(e != nullptr, "io", "weights file is missing buffer " + b.name);
        require(e->values.size() == b.data->size(), "io",
                "weights file: size mismatch for " + b.name);
        *b.data = e->values;
    }
}

// ---- PNG (8-bit, non-interlaced; visualization import/export) ----

namespace detail {

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n,
                              std::uint32_t seed = 0) {
    return std::uint32_t(::crc32(seed, data, uInt(n)));
}

inline void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                         const std::vector<std::uint8_t>& payload) {
    append_le<std::uint32_t>(out, 0); // placeholder, PNG lengths are big-endian
    const std::size_t len_pos = out.size() - 4;
    for (int i = 3; i >= 0; --i) out[len_pos + 3 - i] = std::uint8_t((payload.size() >> (8 * i)) & 0xff);
    std::vector<std::uint8_t> chunk;
    chunk.insert(chunk.end(), type, type + 4);
    chunk.insert(chunk.end(), payload.begin(), payload.end());
    const std::uint32_t crc = crc32_of(chunk.data(), chunk.size(), crc32_of(nullptr, 0));
    out.insert(out.end(), chunk.begin(), chunk.end());
    for (int i = 3; i >= 0; --i) out.push_back(std::uint8_t((crc >> (8 * i)) & 0xff));
}

inline std::uint32_t read_be32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

} // namespace detail

/// Write an 8-bit RGB PNG. Values are clamped to [0,1] and quantized to
/// k/255; lossy by design, for visualization only.
inline void save_png(const std::string& path, const Raster& r) {
    r.validate();
    require(r.bands == 3 || r.bands == 1, "io", "PNG export supports 1 or 3 bands");
    const int w = r.width, h = r.height;
    const int channels = r.bands == 3 ? 3 : 1;

    std::vector<std::uint8_t> raw(std::size_t(h) * (std::size_t(w) * channels + 1));
    std::size_t pos = 0;
    for (int y = 0; y < h; ++y) {
        raw[pos++] = 0; // filter: none
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) {
                const double v = std::clamp(r.at(c, y, x), 0.0, 1.0);
                raw[pos++] = std::uint8_t(std::lround(v * 255.0));
            }
    }

    uLongf comp_size = compressBound(uLong(raw.size()));
    std::vector<std::uint8_t> compressed(comp_size);
    require(compress2(compressed.data(), &comp_size, raw.data(), uLong(raw.size()), 6) == Z_OK,
            "io", "PNG deflate failed");
    compressed.resize(comp_size);

    std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<std::uint8_t> ihdr;
    for (int i = 3; i >= 0; --i) ihdr.push_back(std::uint8_t((w >> (8 * i)) & 0xff));
    for (int i = 3; i >= 0; --i) ihdr.push_back(std::uint8_t((h >> (8 * i)) & 0xff));
    ihdr.push_back(8);                            // bit depth
    ihdr.push_back(channels == 3 ? 2 : 0);        // color type
    ihdr.push_back(0);                            // compression
    ihdr.push_back(0);                            // filter
    ihdr.push_back(0);                            // no interlace
    detail::append_chunk(out, "IHDR", ihdr);
    detail::append_chunk(out, "IDAT", compressed);
    detail::append_chunk(out, "IEND", {});
    detail::write_file(path, out.data(), out.size());
}

/// Read an 8-bit gray/RGB/RGBA non-interlaced PNG; values come back as k/255.
/// Alpha, when present, is dropped.
inline Raster load_png(const std::string& path) {
    const auto bytes = detail::read_file(path);
    static const std::uint8_t signature[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    require(bytes.size() > 8 && std::memcmp(bytes.data(), signature, 8) == 0, "io",
            path + " is not a PNG file");

    int w = 0, h = 0, color_type = -1;
    std::vector<std::uint8_t> idat;
    std::size_t pos = 8;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t len = detail::read_be32(bytes.data() + pos);
        require(pos + 12 + len <= bytes.size(), "io", path + ": truncated chunk");
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const std::uint8_t* payload = bytes.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            require(len == 13, "io", path + ": bad IHDR");
            w = int(detail::read_be32(payload));
            h = int(detail::read_be32(payload + 4));
            const int bit_depth = payload[8];
            color_type = payload[9];
            require(bit_depth == 8, "io", path + ": only 8-bit PNG import is supported");
            require(color_type == 0 || color_type == 2 || color_type == 6, "io",
                    path + ": unsupported PNG color type");
            require(payload[12] == 0, "io", path + ": interlaced PNG not supported");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    require(w > 0 && h > 0 && !idat.empty(), "io", path + ": missing image data");

    const int src_channels = color_type == 2 ? 3 : (color_type == 6 ? 4 : 1);
    const std::size_t stride = std::size_t(w) * src_channels;
    std::vector<std::uint8_t> raw(std::size_t(h) * (stride + 1));
    uLongf raw_size = uLongf(raw.size());
    require(uncompress(raw.data(), &raw_size, idat.data(), uLong(idat.size())) == Z_OK &&
                raw_size == raw.size(),
            "io", path + ": PNG inflate failed");

    // Undo per-scanline filters.
    std::vector<std::uint8_t> pixels(std::size_t(h) * stride);
    const int bpp = src_channels;
    for (int y = 0; y < h; ++y) {
        const std::uint8_t filter = raw[std::size_t(y) * (stride + 1)];
        const std::uint8_t* src = raw.data() + std::size_t(y) * (stride + 1) + 1;
        std::uint8_t* dst = pixels.data() + std::size_t(y) * stride;
        const std::uint8_t* up = y > 0 ? pixels.data() + std::size_t(y - 1) * stride : nullptr;
        for (std::size_t i = 0; i < stride; ++i) {
            const int left = i >= std::size_t(bpp) ? dst[i - bpp] : 0;
            const int above = up ? up[i] : 0;
            const int upper_left = (up && i >= std::size_t(bpp)) ? up[i - bpp] : 0;
            int value = src[i];
            switch (filter) {
                case 0: break;
                case 1: value += left; break;
                case 2: value += above; break;
                case 3: value += (left + above) / 2; break;
                case 4: {
                    const int p = left + above - upper_left;
                    const int pa = std::abs(p - left), pb = std::abs(p - above),
                              pc = std::abs(p - upper_left);
                    value += (pa <= pb && pa <= pc) ? left : (pb <= pc ? above : upper_left);
                    break;
                }
                default: fail("io", path + ": unknown PNG filter type");
            }
            dst[i] = std::uint8_t(value & 0xff);
        }
    }

    const int out_bands = src_channels >= 3 ? 3 : 1;
    Raster r(w, h, out_bands);
    r.nominal_bit_depth = 8;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < out_bands; ++c)
                r.at(c, y, x) =
                    pixels[std::size_t(y) * stride + std::size_t(x) * src_channels + c] / 255.0;
    return r;
}

} // namespace srforge::io
