#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srforge/nn.hpp"
#include "srforge/raster.hpp"

namespace srforge::iq {

/// 10 log10(MAX^2 / MSE) over all pixels and bands. Identical inputs give the
/// +infinity sentinel.
inline double psnr(const Raster& a, const Raster& b, double max_value = 1.0) {
    require(a.width == b.width && a.height == b.height && a.bands == b.bands, "iq",
            "psnr: shape mismatch");
    require(max_value > 0.0, "iq", "psnr: max_value must be positive");
    double sse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        sse += d * d;
    }
    if (sse == 0.0) return std::numeric_limits<double>::infinity();
    const double mse = sse / double(a.data.size());
    return 10.0 * std::log10(max_value * max_value / mse);
}

struct SsimParams {
    int window = 11;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
    double gaussian_sigma = 1.5;
};

/// Mean structural similarity over Gaussian-weighted sliding windows (valid
/// positions only), averaged across bands.
inline double ssim(const Raster& a, const Raster& b, const SsimParams& p = {}) {
    require(a.width == b.width && a.height == b.height && a.bands == b.bands, "iq",
            "ssim: shape mismatch");
    require(p.window % 2 == 1 && p.window >= 3, "iq", "ssim: window must be odd and >= 3");
    require(a.width >= p.window && a.height >= p.window, "iq",
            "ssim: image smaller than the comparison window");
    require(p.k1 > 0.0 && p.k2 > 0.0, "iq", "ssim: stabilization constants must be positive");

    const int n = p.window, half = n / 2;
    std::vector<double> kernel(std::size_t(n) * n);
    double ksum = 0.0;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double dy = y - half, dx = x - half;
            const double w = std::exp(-(dx * dx + dy * dy) /
                                      (2.0 * p.gaussian_sigma * p.gaussian_sigma));
            kernel[std::size_t(y) * n + x] = w;
            ksum += w;
        }
    for (double& w : kernel) w /= ksum;

    const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
    const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);

    double total = 0.0;
    std::size_t count = 0;
    for (int band = 0; band < a.bands; ++band) {
        const double* pa = a.plane(band);
        const double* pb = b.plane(band);
        for (int cy = half; cy < a.height - half; ++cy)
            for (int cx = half; cx < a.width - half; ++cx) {
                double mu_a = 0.0, mu_b = 0.0;
                for (int y = 0; y < n; ++y)
                    for (int x = 0; x < n; ++x) {
                        const double w = kernel[std::size_t(y) * n + x];
                        const std::size_t idx =
                            std::size_t(cy - half + y) * a.width + (cx - half + x);
                        mu_a += w * pa[idx];
                        mu_b += w * pb[idx];
                    }
                double var_a = 0.0, var_b = 0.0, cov = 0.0;
                for (int y = 0; y < n; ++y)
                    for (int x = 0; x < n; ++x) {
                        const double w = kernel[std::size_t(y) * n + x];
                        const std::size_t idx =
                            std::size_t(cy - half + y) * a.width + (cx - half + x);
                        const double da = pa[idx] - mu_a;
                        const double db = pb[idx] - mu_b;
                        var_a += w * da * da;
                        var_b += w * db * db;
                        cov += w * da * db;
                    }
                const double value = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                                     ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                total += value;
                ++count;
            }
    }
    return total / double(count);
}

/// Taps of a fixed feature network, used as the perceptual distance space.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::vector<nn::Tensor> extract(const Raster& r) const = 0;
    virtual std::vector<double> layer_weights() const = 0;
};

inline nn::Tensor raster_to_tensor(const Raster& r, bool requires_grad = false) {
    return nn::Tensor::from_data({1, r.bands, r.height, r.width}, r.data, requires_grad);
}

/// Default perceptual backbone: five stride-2 3x3 convolutions with channels
/// {16, 32, 64, 128, 128} and leaky-ReLU taps, deterministically initialized
/// from a fixed seed. Weights can be replaced via SRWT (see io.hpp); with a
/// seeded random stack the metric is a reproducible perceptual ranking, not
/// comparable in absolute value to published figures.
class CompactFeatureExtractor final : public FeatureExtractor {
public:
    explicit CompactFeatureExtractor(int bands = 3, std::uint64_t seed = 2024) {
        Rng rng(seed);
        int in_ch = bands;
        const int stages[5] = {16, 32, 64, 128, 128};
        for (int s = 0; s < 5; ++s) {
            const int out_ch = stages[s];
            const std::int64_t fan_in = std::int64_t(in_ch) * 9;
            weights_.push_back(registry_.add_parameter(
                "stage" + std::to_string(s) + ".weight",
                nn::kaiming_uniform(rng, {out_ch, in_ch, 3, 3}, fan_in)));
            biases_.push_back(registry_.add_parameter(
                "stage" + std::to_string(s) + ".bias", nn::Tensor::zeros({out_ch}, true)));
            in_ch = out_ch;
        }
    }

    std::vector<nn::Tensor> extract(const Raster& r) const override {
        nn::Tensor x = raster_to_tensor(r);
        std::vector<nn::Tensor> taps;
        for (std::size_t s = 0; s < weights_.size(); ++s) {
            x = nn::leaky_relu(nn::conv2d(x, weights_[s].detach(), biases_[s].detach(), 2, 1),
                               0.2);
            taps.push_back(x);
        }
        return taps;
    }

    std::vector<double> layer_weights() const override { return {1.0, 1.0, 1.0, 1.0, 1.0}; }

    nn::ParamRegistry& registry() { return registry_; }

private:
    nn::ParamRegistry registry_;
    std::vector<nn::Tensor> weights_;
    std::vector<nn::Tensor> biases_;
};

/// Perceptual feature distance: channel-unit-normalized taps, mean squared
/// difference per layer, weighted sum across layers. Symmetric, zero on
/// identical inputs.
inline double lpips(const Raster& a, const Raster& b, const FeatureExtractor& extractor) {
    require(a.width == b.width && a.height == b.height && a.bands == b.bands, "iq",
            "lpips: shape mismatch");
    const auto fa = extractor.extract(a);
    const auto fb = extractor.extract(b);
    const auto weights = extractor.layer_weights();
    require(!fa.empty(), "iq", "lpips: extractor produced no taps");
    require(fa.size() == fb.size() && fa.size() == weights.size(), "iq",
            "lpips: tap/weight count mismatch");

    constexpr double eps = 1e-10;
    double total = 0.0;
    for (std::size_t l = 0; l < fa.size(); ++l) {
        const auto& sa = fa[l].shape();
        const std::int64_t c = sa[1], hw = sa[2] * sa[3];
        const auto& da = fa[l].data();
        const auto& db = fb[l].data();
        double layer_sum = 0.0;
        for (std::int64_t p = 0; p < hw; ++p) {
            double na = 0.0, nb = 0.0;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                na += da[std::size_t(ch * hw + p)] * da[std::size_t(ch * hw + p)];
                nb += db[std::size_t(ch * hw + p)] * db[std::size_t(ch * hw + p)];
            }
            na = std::sqrt(na) + eps;
            nb = std::sqrt(nb) + eps;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const double d =
                    da[std::size_t(ch * hw + p)] / na - db[std::size_t(ch * hw + p)] / nb;
                layer_sum += d * d;
            }
        }
        total += weights[l] * layer_sum / double(c * hw);
    }
    return total;
}

struct MetricItem {
    std::string item_id;
    double psnr_db = 0.0;
    double ssim = 0.0;
    double lpips = 0.0;
};

struct MetricAggregate {
    double mean = 0.0;
    double median = 0.0;
};

struct MetricReport {
    std::vector<MetricItem> per_item;
    MetricAggregate psnr;
    MetricAggregate ssim;
    MetricAggregate lpips;
    int psnr_inf_excluded_from_mean = 0;
};

namespace detail {

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace detail

/// Arithmetic mean and median per metric; infinite PSNR items are excluded
/// from the mean (with the exclusion count reported) but kept for the median.
inline MetricReport aggregate(std::vector<MetricItem> items) {
    require(!items.empty(), "iq", "aggregate: empty metric list");
    MetricReport report;
    report.per_item = std::move(items);

    std::vector<double> psnr_vals, ssim_vals, lpips_vals;
    double psnr_sum = 0.0;
    int psnr_finite = 0;
    for (const auto& item : report.per_item) {
        psnr_vals.push_back(item.psnr_db);
        ssim_vals.push_back(item.ssim);
        lpips_vals.push_back(item.lpips);
        if (std::isfinite(item.psnr_db)) {
            psnr_sum += item.psnr_db;
            ++psnr_finite;
        } else {
            ++report.psnr_inf_excluded_from_mean;
        }
    }
    report.psnr.mean = psnr_finite > 0 ? psnr_sum / psnr_finite
                                       : std::numeric_limits<double>::infinity();
    report.psnr.median = detail::median_of(psnr_vals);

    double ssim_sum = 0.0, lpips_sum = 0.0;
    for (const auto& item : report.per_item) {
        ssim_sum += item.ssim;
        lpips_sum += item.lpips;
    }
    report.ssim.mean = ssim_sum / double(report.per_item.size());
    report.ssim.median = detail::median_of(ssim_vals);
    report.lpips.mean = lpips_sum / double(report.per_item.size());
    report.lpips.median = detail::median_of(lpips_vals);
    return report;
}

inline std::string format_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

inline std::string report_to_csv(const MetricReport& report) {
    std::ostringstream out;
    out << "item_id,psnr,ssim,lpips\n";
    for (const auto& item : report.per_item)
        out << item.item_id << ',' << format_metric(item.psnr_db) << ','
            << format_metric(item.ssim) << ',' << format_metric(item.lpips) << '\n';
    return out.str();
}

inline nlohmann::json report_to_json(const MetricReport& report) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& item : report.per_item) {
        items.push_back({{"item_id", item.item_id},
                         {"psnr", std::isfinite(item.psnr_db) ? nlohmann::json(item.psnr_db)
                                                              : nlohmann::json("inf")},
                         {"ssim", item.ssim},
                         {"lpips", item.lpips}});
    }
    nlohmann::json aggregates{
        {"psnr", {{"mean", std::isfinite(report.psnr.mean) ? nlohmann::json(report.psnr.mean)
                                                           : nlohmann::json("inf")},
                  {"median", std::isfinite(report.psnr.median)
                                 ? nlohmann::json(report.psnr.median)
                                 : nlohmann::json("inf")},
                  {"inf_excluded_from_mean", report.psnr_inf_excluded_from_mean}}},
        {"ssim", {{"mean", report.ssim.mean}, {"median", report.ssim.median}}},
        {"lpips", {{"mean", report.lpips.mean}, {"median", report.lpips.median}}}};
    return nlohmann::json{{"items", items}, {"aggregates", aggregates}};
}

} // namespace srforge::iq
