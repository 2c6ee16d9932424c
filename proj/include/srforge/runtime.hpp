#pragma once

#include <algorithm>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "srforge/dataset.hpp"
#include "srforge/figure.hpp"
#include "srforge/metrics.hpp"
#include "srforge/models.hpp"
#include "srforge/train.hpp"

namespace srforge::rt {

inline Raster tensor_to_raster(const nn::Tensor& t) {
    require(t.rank() == 4 && t.dim(0) == 1, "rt", "expected a single NCHW sample");
    Raster r(int(t.dim(3)), int(t.dim(2)), int(t.dim(1)));
    r.data = t.data();
    return r;
}

/// Run the generator on one whole raster (no tiling).
inline Raster run_generator(zoo::Model& gen, const Raster& input) {
    Raster feed = input;
    if (gen.wants_preupscaled_input())
        feed = bicubic_resample(input, input.width * gen.spec().scale,
                                input.height * gen.spec().scale);
    auto x = nn::Tensor::from_data({1, feed.bands, feed.height, feed.width}, feed.data);
    return tensor_to_raster(gen.forward(x, false));
}

/// Tiled inference with overlap-and-blend: LR-domain tiles (side `tile`,
/// overlap `overlap`) are upscaled independently and feathered together with
/// linear ramps; tiles snap to the far edge so the whole raster is covered.
/// Inputs no larger than one tile take the direct path.
inline Raster upscale_raster(zoo::Model& gen, const Raster& input, int tile = 96,
                             int overlap = 8) {
    require(input.bands == 3, "rt", "inference expects a 3-band raster");
    require(tile > overlap && overlap >= 0, "rt", "tile must exceed overlap");
    const int scale = gen.spec().scale;
    if (input.width <= tile && input.height <= tile) {
        Raster out = run_generator(gen, input);
        out.gsd = input.gsd ? std::optional<double>(*input.gsd / scale) : std::nullopt;
        return out;
    }

    const auto positions = [&](int extent) {
        std::vector<int> out{0};
        const int stride = tile - overlap;
        while (out.back() + tile < extent)
            out.push_back(std::min(out.back() + stride, extent - tile));
        return out;
    };
    const auto xs = positions(input.width);
    const auto ys = positions(input.height);

    const int ow = input.width * scale, oh = input.height * scale;
    Raster accum(ow, oh, 3, 0.0);
    std::vector<double> weight(std::size_t(ow) * oh, 0.0);
    // Inside the overlap band: the outer half of each tile (where zero-pad
    // edge effects live) contributes nothing, the inner half carries a linear
    // ramp. Opposing ramps always sum to a positive weight. Overlap 0 keeps
    // hard tile boundaries.
    const int band = overlap > 0 ? std::max(2, overlap * scale) : 0;
    const int margin = band / 2;
    const int feather = std::max(1, band - margin);

    for (const int ty : ys) {
        for (const int tx : xs) {
            const int tw = std::min(tile, input.width - tx);
            const int th = std::min(tile, input.height - ty);
            Raster patch(tw, th, 3);
            for (int b = 0; b < 3; ++b)
                for (int y = 0; y < th; ++y)
                    for (int x = 0; x < tw; ++x) patch.at(b, y, x) = input.at(b, ty + y, tx + x);
            Raster sr = run_generator(gen, patch);

            const int ox = tx * scale, oy = ty * scale;
            const int sw = tw * scale, sh = th * scale;
            const auto edge_ramp = [&](int d) {
                if (band == 0) return 1.0;
                if (d < margin) return 0.0;
                return std::min(1.0, double(d - margin + 1) / feather);
            };
            for (int y = 0; y < sh; ++y) {
                // Ramp toward interior tile edges; full weight at raster borders.
                double wy = 1.0;
                if (oy > 0) wy = std::min(wy, edge_ramp(y));
                if (oy + sh < oh) wy = std::min(wy, edge_ramp(sh - 1 - y));
                if (wy == 0.0) continue;
                for (int x = 0; x < sw; ++x) {
                    double wx = 1.0;
                    if (ox > 0) wx = std::min(wx, edge_ramp(x));
                    if (ox + sw < ow) wx = std::min(wx, edge_ramp(sw - 1 - x));
                    const double w = wx * wy;
                    if (w == 0.0) continue;
                    weight[std::size_t(oy + y) * ow + (ox + x)] += w;
                    for (int b = 0; b < 3; ++b)
                        accum.at(b, oy + y, ox + x) += w * sr.at(b, y, x);
                }
            }
        }
    }
    for (int b = 0; b < 3; ++b)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                const double w = weight[std::size_t(y) * ow + x];
                require(w > 0.0, "rt", "tiling left an uncovered pixel");
                accum.at(b, y, x) /= w;
            }
    accum.gsd = input.gsd ? std::optional<double>(*input.gsd / scale) : std::nullopt;
    return accum;
}

struct EvalItem {
    std::string pair_id;
    Raster lr;
    Raster hr;
};

inline std::vector<EvalItem> load_eval_items(const data::DatasetManifest& manifest) {
    require(!manifest.entries.empty(), "rt", "manifest has no pairs");
    std::vector<EvalItem> items;
    for (const auto& e : manifest.entries) {
        EvalItem item;
        item.pair_id = e.pair_id;
        item.lr = io::load_srras(e.lr_path).raster;
        item.hr = io::load_srras(e.hr_path).raster;
        items.push_back(std::move(item));
    }
    return items;
}

/// Manifest -> training samples; pre-upscales LR bicubically when the
/// generator consumes HR-sized input.
inline std::vector<train::SamplePair> load_samples(const data::DatasetManifest& manifest,
                                                   bool preupscale, int scale = 2) {
    std::vector<train::SamplePair> out;
    for (const auto& e : manifest.entries) {
        auto lr = io::load_srras(e.lr_path).raster;
        auto hr = io::load_srras(e.hr_path).raster;
        if (preupscale) lr = bicubic_resample(lr, lr.width * scale, lr.height * scale);
        train::SamplePair pair;
        pair.lr = nn::Tensor::from_data({lr.bands, lr.height, lr.width}, lr.data);
        pair.hr = nn::Tensor::from_data({hr.bands, hr.height, hr.width}, hr.data);
        out.push_back(std::move(pair));
    }
    return out;
}

/// Canonical column order for comparison tables; unknown methods follow in
/// name order after the known ones.
inline std::vector<std::string> ordered_methods(std::vector<std::string> names) {
    const std::vector<std::string> canon{"bicubic", "srcnn", "srresnet", "esrgan",
                                         "real-esrgan"};
    std::vector<std::string> out;
    for (const auto& c : canon)
        for (const auto& n : names)
            if (n == c) out.push_back(n);
    std::sort(names.begin(), names.end());
    for (const auto& n : names)
        if (std::find(out.begin(), out.end(), n) == out.end()) out.push_back(n);
    return out;
}

struct MethodReport {
    std::string method;
    iq::MetricReport report;
    std::map<std::string, Raster> outputs; // pair_id -> SR raster (optional retention)
};

/// Evaluate each method over the manifest items. The bicubic baseline is
/// always included; model methods map LR patches directly (patch-sized
/// inputs, no tiling).
inline std::vector<MethodReport> evaluate_methods(
    const std::vector<EvalItem>& items,
    const std::vector<std::pair<std::string, zoo::Model*>>& models,
    const iq::FeatureExtractor& extractor, bool keep_outputs = false) {
    require(!items.empty(), "rt", "empty test set");
    std::vector<std::string> names{"bicubic"};
    for (const auto& [name, model] : models) names.push_back(name);
    const auto order = ordered_methods(names);

    std::vector<MethodReport> out;
    for (const auto& method : order) {
        MethodReport mr;
        mr.method = method;
        std::vector<iq::MetricItem> metric_items;
        for (const auto& item : items) {
            Raster sr;
            if (method == "bicubic") {
                sr = bicubic_resample(item.lr, item.hr.width, item.hr.height);
            } else {
                zoo::Model* model = nullptr;
                for (const auto& [name, m] : models)
                    if (name == method) model = m;
                require(model != nullptr, "rt", "internal: method lost: " + method);
                sr = run_generator(*model, item.lr);
            }
            iq::MetricItem mi;
            mi.item_id = item.pair_id;
            mi.psnr_db = iq::psnr(sr, item.hr, 1.0);
            mi.ssim = iq::ssim(sr, item.hr);
            mi.lpips = iq::lpips(sr, item.hr, extractor);
            metric_items.push_back(mi);
            if (keep_outputs) mr.outputs[item.pair_id] = std::move(sr);
        }
        mr.report = iq::aggregate(std::move(metric_items));
        out.push_back(std::move(mr));
    }
    return out;
}

/// Aligned text table in the comparison layout: method columns (mean and
/// median per method), metric rows.
inline std::string format_comparison_table(const std::vector<MethodReport>& reports) {
    std::ostringstream out;
    const auto fmt = [](double v) {
        std::ostringstream s;
        if (std::isinf(v))
            s << "inf";
        else
            s << std::fixed << std::setprecision(v >= 10.0 ? 2 : 3) << v;
        return s.str();
    };
    out << std::left << std::setw(8) << "Metric";
    for (const auto& r : reports)
        out << "| " << std::setw(19) << (r.method + " mean/median");
    out << "\n";
    out << std::string(8 + reports.size() * 21, '-') << "\n";
    const char* metric_names[3] = {"PSNR", "SSIM", "LPIPS"};
    for (int m = 0; m < 3; ++m) {
        out << std::left << std::setw(8) << metric_names[m];
        for (const auto& r : reports) {
            const iq::MetricAggregate& agg =
                m == 0 ? r.report.psnr : (m == 1 ? r.report.ssim : r.report.lpips);
            out << "| " << std::setw(19) << (fmt(agg.mean) + " / " + fmt(agg.median));
        }
        out << "\n";
    }
    return out.str();
}

} // namespace srforge::rt
