#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srforge/geo.hpp"
#include "srforge/io.hpp"
#include "srforge/metrics.hpp"
#include "srforge/raster.hpp"

namespace srforge::data {

using json = nlohmann::json;

namespace detail {

/// Days since the civil epoch for a YYYY-MM-DD string (proleptic Gregorian).
inline std::int64_t parse_date_days(const std::string& date) {
    int y = 0, m = 0, d = 0;
    if (std::sscanf(date.c_str(), "%d-%d-%d", &y, &m, &d) != 3 || m < 1 || m > 12 || d < 1 ||
        d > 31)
        fail("dataset", "unparseable capture date: '" + date + "' (expected YYYY-MM-DD)");
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = unsigned(y - era * 400);
    const unsigned doy = (153u * unsigned(m + (m > 2 ? -3 : 9)) + 2u) / 5u + unsigned(d) - 1u;
    const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
    return era * 146097 + std::int64_t(doe) - 719468;
}

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace detail

/// One HR/LR tile pairing, with the manual temporal-alignment note carried
/// through verbatim (alignment itself is a curation step, not an algorithm).
struct TilePairingEntry {
    std::string aoi_id;
    std::string hr_path;
    std::string lr_path;
    std::string hr_capture_date; // YYYY-MM-DD
    std::string lr_capture_date;
    std::string notes;

    std::int64_t capture_gap_days() const {
        return std::abs(detail::parse_date_days(hr_capture_date) -
                        detail::parse_date_days(lr_capture_date));
    }

    void validate() const {
        require(!aoi_id.empty(), "dataset", "pairing entry needs an aoi_id");
        require(!hr_path.empty() && !lr_path.empty(), "dataset",
                "pairing entry needs hr_path and lr_path");
        capture_gap_days(); // throws on unparseable dates
    }

    json to_json() const {
        return {{"aoi_id", aoi_id},
                {"hr_path", hr_path},
                {"lr_path", lr_path},
                {"hr_capture_date", hr_capture_date},
                {"lr_capture_date", lr_capture_date},
                {"notes", notes}};
    }

    static TilePairingEntry from_json(const json& j) {
        TilePairingEntry e;
        e.aoi_id = j.at("aoi_id").get<std::string>();
        e.hr_path = j.at("hr_path").get<std::string>();
        e.lr_path = j.at("lr_path").get<std::string>();
        e.hr_capture_date = j.at("hr_capture_date").get<std::string>();
        e.lr_capture_date = j.at("lr_capture_date").get<std::string>();
        e.notes = j.value("notes", "");
        e.validate();
        return e;
    }
};

inline std::vector<TilePairingEntry> load_pairing_file(const std::string& path) {
    std::ifstream in(path);
    require(bool(in), "dataset", "cannot open pairing file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail("dataset", "malformed pairing file " + path + ": " + e.what());
    }
    require(j.is_array(), "dataset", "pairing file must be a JSON list");
    std::vector<TilePairingEntry> entries;
    for (const auto& item : j) entries.push_back(TilePairingEntry::from_json(item));
    require(!entries.empty(), "dataset", "pairing file is empty");
    return entries;
}

/// Aligned LR/HR patch tuple with provenance and quality scores.
struct PatchPair {
    std::string pair_id;
    Raster lr_patch; // lr_patch_px^2 at the LR gsd
    Raster hr_patch; // 2x per axis at half the gsd
    double ssim_score = 0.0;
    double psnr_score = 0.0;
    std::string source_tile;
    int grid_row = 0;
    int grid_col = 0;
};

struct SplitEntry {
    std::string pair_id;
    std::string lr_path;
    std::string hr_path;
    double ssim_score = 0.0;
    double psnr_score = 0.0;
    std::string source_tile;
    int grid_row = 0;
    int grid_col = 0;
};

struct DatasetManifest {
    std::string split;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::vector<SplitEntry> entries;

    json to_json() const {
        json items = json::array();
        for (const auto& e : entries)
            items.push_back({{"pair_id", e.pair_id},
                             {"lr_path", e.lr_path},
                             {"hr_path", e.hr_path},
                             {"ssim", e.ssim_score},
                             {"psnr", std::isfinite(e.psnr_score) ? json(e.psnr_score)
                                                                  : json("inf")},
                             {"source_tile", e.source_tile},
                             {"grid_row", e.grid_row},
                             {"grid_col", e.grid_col}});
        return {{"split", split}, {"seed", seed}, {"config_hash", config_hash},
                {"pairs", items}};
    }

    void save(const std::string& path) const {
        const std::string text = to_json().dump(2) + "\n";
        io::detail::write_file(path, text.data(), text.size());
    }

    static DatasetManifest load(const std::string& path) {
        std::ifstream in(path);
        require(bool(in), "dataset", "cannot open manifest " + path);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            fail("dataset", "malformed manifest " + path + ": " + e.what());
        }
        DatasetManifest m;
        m.split = j.at("split").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.config_hash = j.value("config_hash", "");
        for (const auto& item : j.at("pairs")) {
            SplitEntry e;
            e.pair_id = item.at("pair_id").get<std::string>();
            e.lr_path = item.at("lr_path").get<std::string>();
            e.hr_path = item.at("hr_path").get<std::string>();
            e.ssim_score = item.value("ssim", 0.0);
            e.psnr_score = item.at("psnr").is_string()
                               ? std::numeric_limits<double>::infinity()
                               : item.at("psnr").get<double>();
            e.source_tile = item.value("source_tile", "");
            e.grid_row = item.value("grid_row", 0);
            e.grid_col = item.value("grid_col", 0);
            m.entries.push_back(std::move(e));
        }
        return m;
    }
};

/// Pipeline configuration; defaults mirror the reproduced setup (96 px LR
/// patches at 10 m, 192 px HR at 5 m, 0.45 / 21 quality gates, 256-bin
/// spectral matching, split ratios 1500/374/208).
struct ForgeConfig {
    int lr_patch = 96;
    int lr_stride = 96;
    double lr_gsd = 10.0;
    double hr_gsd = 5.0;
    int histogram_bins = 256;
    double ssim_threshold = 0.45;
    double psnr_threshold = 21.0;
    double train_fraction = 1500.0 / 2082.0;
    double val_fraction = 374.0 / 2082.0;
    double test_fraction = 208.0 / 2082.0;
    std::uint64_t seed = 42;
    std::string normalize = "auto"; // auto | fixed | minmax | none

    void validate() const {
        require(lr_patch >= 1 && lr_stride >= 1, "dataset", "patch geometry must be positive");
        require(hr_gsd > 0 && lr_gsd > hr_gsd, "dataset",
                "LR gsd must be coarser than HR gsd");
        require(histogram_bins >= 2, "dataset", "histogram_bins must be >= 2");
        const double sum = train_fraction + val_fraction + test_fraction;
        require(std::abs(sum - 1.0) < 1e-9, "dataset", "split fractions must sum to 1");
        require(normalize == "auto" || normalize == "fixed" || normalize == "minmax" ||
                    normalize == "none",
                "dataset", "unknown normalize mode: " + normalize);
    }

    json to_json() const {
        return {{"lr_patch", lr_patch},
                {"lr_stride", lr_stride},
                {"lr_gsd", lr_gsd},
                {"hr_gsd", hr_gsd},
                {"histogram_bins", histogram_bins},
                {"ssim_threshold", ssim_threshold},
                {"psnr_threshold", psnr_threshold},
                {"train_fraction", train_fraction},
                {"val_fraction", val_fraction},
                {"test_fraction", test_fraction},
                {"seed", seed},
                {"normalize", normalize}};
    }

    static ForgeConfig from_json(const json& j) {
        ForgeConfig c;
        c.lr_patch = j.value("lr_patch", c.lr_patch);
        c.lr_stride = j.value("lr_stride", c.lr_stride);
        c.lr_gsd = j.value("lr_gsd", c.lr_gsd);
        c.hr_gsd = j.value("hr_gsd", c.hr_gsd);
        c.histogram_bins = j.value("histogram_bins", c.histogram_bins);
        c.ssim_threshold = j.value("ssim_threshold", c.ssim_threshold);
        c.psnr_threshold = j.value("psnr_threshold", c.psnr_threshold);
        c.train_fraction = j.value("train_fraction", c.train_fraction);
        c.val_fraction = j.value("val_fraction", c.val_fraction);
        c.test_fraction = j.value("test_fraction", c.test_fraction);
        c.seed = j.value("seed", c.seed);
        c.normalize = j.value("normalize", c.normalize);
        c.validate();
        return c;
    }

    std::string hash() const {
        const std::string dump = to_json().dump();
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx",
                      (unsigned long long)detail::fnv1a(dump.data(), dump.size()));
        return buf;
    }
};

struct IngestedRaster {
    Raster raster;
    std::optional<GeoAnchor> geo;
    std::string checksum; // FNV-1a of the payload bytes
};

/// Load an SRRAS or PNG(+sidecar) raster. PNG values arrive as k/255; an
/// optional <name>.png.json sidecar supplies gsd and geo metadata.
inline IngestedRaster ingest(const std::string& path) {
    IngestedRaster out;
    const auto ext = std::filesystem::path(path).extension().string();
    if (ext == ".srras") {
        auto loaded = io::load_srras(path);
        out.raster = std::move(loaded.raster);
        out.geo = loaded.geo;
        const auto payload = io::detail::read_file(path + ".bin");
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx",
                      (unsigned long long)detail::fnv1a(payload.data(), payload.size()));
        out.checksum = buf;
    } else if (ext == ".png") {
        out.raster = io::load_png(path);
        const auto bytes = io::detail::read_file(path);
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx",
                      (unsigned long long)detail::fnv1a(bytes.data(), bytes.size()));
        out.checksum = buf;
        const std::string sidecar = path + ".json";
        if (std::filesystem::exists(sidecar)) {
            std::ifstream in(sidecar);
            json j;
            try {
                in >> j;
            } catch (const json::exception& e) {
                fail("dataset", "malformed PNG sidecar " + sidecar + ": " + e.what());
            }
            if (j.contains("gsd_m")) out.raster.gsd = j["gsd_m"].get<double>();
            if (j.contains("bit_depth")) out.raster.nominal_bit_depth = j["bit_depth"].get<int>();
            if (j.contains("geo")) {
                GeoAnchor a;
                a.origin_x = j["geo"].value("origin_x", 0.0);
                a.origin_y = j["geo"].value("origin_y", 0.0);
                a.pixel_size_x = j["geo"].value("pixel_size_x", 1.0);
                a.pixel_size_y = j["geo"].value("pixel_size_y", -1.0);
                a.crs_id = j["geo"].value("crs_id", "");
                out.geo = a;
            }
        }
    } else {
        fail("dataset", "unsupported raster format: " + path);
    }
    out.raster.validate();
    return out;
}

/// Normalize per the config policy. "auto" applies fixed-range scaling only
/// when values exceed 1 (raw sensor counts).
inline Raster apply_normalize(const Raster& r, const std::string& mode) {
    if (mode == "none") return r;
    if (mode == "minmax") return normalize(r, NormalizeMode::PerImageMinMax).raster;
    if (mode == "fixed") return normalize(r, NormalizeMode::FixedRange).raster;
    double hi = 0.0;
    for (const double v : r.data) hi = std::max(hi, v);
    if (hi > 1.0) return normalize(r, NormalizeMode::FixedRange).raster;
    return r;
}

/// Anti-alias and resample a fine-gsd raster down to `target_gsd`. The box
/// side is round(target/source); even or fractional ratios fall to the
/// nearest odd with a warning flag.
inline Raster preprocess_hr(const Raster& hr, double target_gsd, bool* kernel_adjusted = nullptr) {
    require(hr.gsd.has_value(), "dataset", "preprocess_hr needs a known gsd");
    const auto kernel = BoxKernelSpec::from_gsd_ratio(*hr.gsd, target_gsd, kernel_adjusted);
    Raster filtered = kernel.n > 1 ? box_filter(hr, kernel) : hr;
    const int tw = int(std::llround(hr.width * *hr.gsd / target_gsd));
    const int th = int(std::llround(hr.height * *hr.gsd / target_gsd));
    require(tw >= 1 && th >= 1, "dataset", "target grid collapses to zero pixels");
    Raster out = bicubic_resample(filtered, tw, th);
    out.gsd = target_gsd;
    return out;
}

/// Histogram-match the LR tile toward the HR reference, band by band.
inline Raster spectral_adjust(const Raster& lr, const Raster& hr_ref, int bins = 256) {
    return histogram_match(lr, hr_ref, bins);
}

/// Cut matching LR/HR patch grids and score each pair (SSIM and PSNR between
/// the bicubic x2 upscaled LR patch and the HR patch).
inline std::vector<PatchPair> make_pairs(const Raster& lr, const Raster& hr,
                                         const std::string& tile_id, const ForgeConfig& cfg) {
    cfg.validate();
    const int ratio = int(std::llround(cfg.lr_gsd / cfg.hr_gsd));
    require(ratio == 2, "dataset", "patch pairing expects a gsd ratio of 2");
    require(hr.width == lr.width * 2 && hr.height == lr.height * 2, "dataset",
            "HR tile must be exactly 2x the LR tile (register tiles first)");
    require(hr.bands == lr.bands, "dataset", "band count mismatch between LR and HR tiles");

    const auto lr_grid = extract_patch_grid(lr, cfg.lr_patch, cfg.lr_stride);
    const auto hr_grid = extract_patch_grid(hr, cfg.lr_patch * 2, cfg.lr_stride * 2);
    require(lr_grid.size() == hr_grid.size(), "dataset",
            "LR/HR patch grids disagree (" + std::to_string(lr_grid.size()) + " vs " +
                std::to_string(hr_grid.size()) + ")");

    std::vector<PatchPair> pairs;
    pairs.reserve(lr_grid.size());
    for (std::size_t i = 0; i < lr_grid.size(); ++i) {
        require(hr_grid[i].row == lr_grid[i].row * 2 && hr_grid[i].col == lr_grid[i].col * 2,
                "dataset", "patch grid positions out of step");
        PatchPair pair;
        pair.source_tile = tile_id;
        pair.grid_row = lr_grid[i].row;
        pair.grid_col = lr_grid[i].col;
        pair.pair_id = tile_id + "_r" + std::to_string(lr_grid[i].row) + "_c" +
                       std::to_string(lr_grid[i].col);
        pair.lr_patch = lr_grid[i].patch;
        pair.hr_patch = hr_grid[i].patch;
        const Raster upscaled =
            bicubic_resample(pair.lr_patch, pair.hr_patch.width, pair.hr_patch.height);
        pair.psnr_score = iq::psnr(upscaled, pair.hr_patch, 1.0);
        pair.ssim_score = iq::ssim(upscaled, pair.hr_patch);
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

struct FilterResult {
    std::vector<PatchPair> kept;
    std::vector<PatchPair> rejected;
};

/// Keep pairs with ssim >= 0.45 and psnr >= 21 (boundary values kept; the
/// gate removes strictly-lower scores).
inline FilterResult quality_filter(std::vector<PatchPair> pairs, const ForgeConfig& cfg) {
    FilterResult out;
    for (auto& pair : pairs) {
        if (pair.ssim_score >= cfg.ssim_threshold && pair.psnr_score >= cfg.psnr_threshold)
            out.kept.push_back(std::move(pair));
        else
            out.rejected.push_back(std::move(pair));
    }
    return out;
}

struct SplitCounts {
    std::size_t train = 0, val = 0, test = 0;
};

inline SplitCounts split_counts(std::size_t total, const ForgeConfig& cfg) {
    SplitCounts c;
    c.train = std::size_t(std::llround(double(total) * cfg.train_fraction));
    const std::size_t train_val =
        std::size_t(std::llround(double(total) * (cfg.train_fraction + cfg.val_fraction)));
    c.val = train_val - c.train;
    c.test = total - train_val;
    return c;
}

/// Seeded shuffle then partition; splits are disjoint and exhaustive.
/// `id_of` extracts a stable identity used in the manifests.
template <typename T, typename MakeEntry>
inline std::array<DatasetManifest, 3> split(const std::vector<T>& pairs, const ForgeConfig& cfg,
                                            MakeEntry&& make_entry) {
    require(!pairs.empty(), "dataset", "cannot split an empty pair list");
    cfg.validate();
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(cfg.seed);
    rng.shuffle(order);

    const auto counts = split_counts(pairs.size(), cfg);
    std::array<DatasetManifest, 3> manifests;
    const char* names[3] = {"train", "val", "test"};
    const std::size_t bounds[3] = {counts.train, counts.train + counts.val, pairs.size()};
    std::size_t cursor = 0;
    for (int s = 0; s < 3; ++s) {
        manifests[std::size_t(s)].split = names[s];
        manifests[std::size_t(s)].seed = cfg.seed;
        manifests[std::size_t(s)].config_hash = cfg.hash();
        for (; cursor < bounds[s]; ++cursor)
            manifests[std::size_t(s)].entries.push_back(make_entry(pairs[order[cursor]]));
    }
    return manifests;
}

struct BuildSummary {
    std::size_t tiles = 0;
    std::size_t pairs_total = 0;
    std::size_t pairs_rejected = 0;
    SplitCounts counts;
    std::vector<std::pair<std::string, std::string>> tile_checksums;
    json to_json() const {
        json checks = json::object();
        for (const auto& [tile, sum] : tile_checksums) checks[tile] = sum;
        return {{"tiles", tiles},
                {"pairs_total", pairs_total},
                {"pairs_rejected", pairs_rejected},
                {"train", counts.train},
                {"val", counts.val},
                {"test", counts.test},
                {"tile_checksums", checks}};
    }
};

/// End-to-end dataset factory: ingest both tiles, register them onto the LR
/// grid, run the degradation/adjustment chain, patch, filter, split, and
/// write SRRAS patches plus JSON manifests under out_dir.
inline BuildSummary build_dataset(const std::vector<TilePairingEntry>& entries,
                                  const std::string& out_dir, const ForgeConfig& cfg) {
    namespace fs = std::filesystem;
    cfg.validate();
    require(!entries.empty(), "dataset", "no pairing entries");
    fs::create_directories(out_dir);

    BuildSummary summary;
    std::vector<PatchPair> all_pairs;
    for (const auto& entry : entries) {
        entry.validate();
        auto hr_in = ingest(entry.hr_path);
        auto lr_in = ingest(entry.lr_path);
        summary.tile_checksums.emplace_back(entry.aoi_id + ":hr", hr_in.checksum);
        summary.tile_checksums.emplace_back(entry.aoi_id + ":lr", lr_in.checksum);

        Raster hr = apply_normalize(hr_in.raster, cfg.normalize);
        Raster lr = apply_normalize(lr_in.raster, cfg.normalize);
        hr.gsd = hr_in.raster.gsd;
        lr.gsd = lr_in.raster.gsd ? lr_in.raster.gsd : std::optional<double>(cfg.lr_gsd);

        // Register: crop to the shared footprint when both tiles carry
        // anchors; otherwise the tiles must already be aligned.
        if (hr_in.geo && lr_in.geo) {
            auto cropped = intersect_and_crop(hr, *hr_in.geo, lr, *lr_in.geo);
            hr = std::move(cropped.hr);
            lr = std::move(cropped.lr);
            hr.gsd = std::abs(cropped.hr_anchor.pixel_size_x);
            lr.gsd = std::abs(cropped.lr_anchor.pixel_size_x);
        }

        if (!hr.gsd || std::abs(*hr.gsd - cfg.hr_gsd) > 1e-9) {
            require(hr.gsd.has_value(), "dataset",
                    "HR tile " + entry.hr_path + " has no gsd; cannot resample");
            hr = preprocess_hr(hr, cfg.hr_gsd);
        }
        lr = spectral_adjust(lr, hr, cfg.histogram_bins);

        auto pairs = make_pairs(lr, hr, entry.aoi_id, cfg);
        for (auto& p : pairs) all_pairs.push_back(std::move(p));
        ++summary.tiles;
    }
    summary.pairs_total = all_pairs.size();

    auto filtered = quality_filter(std::move(all_pairs), cfg);
    summary.pairs_rejected = filtered.rejected.size();
    require(!filtered.kept.empty(), "dataset", "quality filter rejected every pair");

    // Write patches grouped by split.
    auto manifests = split(filtered.kept, cfg, [&](const PatchPair& p) {
        SplitEntry e;
        e.pair_id = p.pair_id;
        e.ssim_score = p.ssim_score;
        e.psnr_score = p.psnr_score;
        e.source_tile = p.source_tile;
        e.grid_row = p.grid_row;
        e.grid_col = p.grid_col;
        return e;
    });
    summary.counts = split_counts(filtered.kept.size(), cfg);

    // pair_id -> PatchPair lookup for writing payloads.
    std::vector<const PatchPair*> by_id;
    for (const auto& p : filtered.kept) by_id.push_back(&p);
    const auto find_pair = [&](const std::string& id) -> const PatchPair& {
        for (const auto* p : by_id)
            if (p->pair_id == id) return *p;
        fail("dataset", "internal: pair lost during split: " + id);
    };

    for (auto& manifest : manifests) {
        const fs::path split_dir = fs::path(out_dir) / manifest.split;
        fs::create_directories(split_dir);
        for (auto& e : manifest.entries) {
            const PatchPair& p = find_pair(e.pair_id);
            e.lr_path = (split_dir / (e.pair_id + "_lr.srras")).string();
            e.hr_path = (split_dir / (e.pair_id + "_hr.srras")).string();
            io::save_srras(e.lr_path, p.lr_patch);
            io::save_srras(e.hr_path, p.hr_patch);
        }
        manifest.save((fs::path(out_dir) / (manifest.split + "_manifest.json")).string());
    }

    const std::string summary_text = summary.to_json().dump(2) + "\n";
    io::detail::write_file((fs::path(out_dir) / "summary.json").string(), summary_text.data(),
                           summary_text.size());
    return summary;
}

} // namespace srforge::data
