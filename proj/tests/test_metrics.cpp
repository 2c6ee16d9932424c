#include <catch2/catch_amalgamated.hpp>

#include "srforge/metrics.hpp"
#include "testutil.hpp"

using namespace srforge;
using testutil::random_raster;

namespace {

/// Sliding-window SSIM oracle written directly from the windowed-statistics
/// definition (plain loops, no shared code with iq::ssim).
double ssim_oracle(const Raster& a, const Raster& b, int n, double k1, double k2, double maxv,
                   double sigma) {
    const int half = n / 2;
    std::vector<double> w(std::size_t(n) * n);
    double wsum = 0.0;
    for (int y = -half; y <= half; ++y)
        for (int x = -half; x <= half; ++x) {
            const double g = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
            w[std::size_t(y + half) * n + (x + half)] = g;
            wsum += g;
        }
    const double c1 = (k1 * maxv) * (k1 * maxv), c2 = (k2 * maxv) * (k2 * maxv);
    double total = 0.0;
    int count = 0;
    for (int band = 0; band < a.bands; ++band)
        for (int cy = half; cy < a.height - half; ++cy)
            for (int cx = half; cx < a.width - half; ++cx) {
                double ma = 0.0, mb = 0.0;
                for (int y = -half; y <= half; ++y)
                    for (int x = -half; x <= half; ++x) {
                        const double ww = w[std::size_t(y + half) * n + (x + half)] / wsum;
                        ma += ww * a.at(band, cy + y, cx + x);
                        mb += ww * b.at(band, cy + y, cx + x);
                    }
                double va = 0.0, vb = 0.0, cab = 0.0;
                for (int y = -half; y <= half; ++y)
                    for (int x = -half; x <= half; ++x) {
                        const double ww = w[std::size_t(y + half) * n + (x + half)] / wsum;
                        va += ww * (a.at(band, cy + y, cx + x) - ma) *
                              (a.at(band, cy + y, cx + x) - ma);
                        vb += ww * (b.at(band, cy + y, cx + x) - mb) *
                              (b.at(band, cy + y, cx + x) - mb);
                        cab += ww * (a.at(band, cy + y, cx + x) - ma) *
                               (b.at(band, cy + y, cx + x) - mb);
                    }
                total += ((2 * ma * mb + c1) * (2 * cab + c2)) /
                         ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
    return total / count;
}

} // namespace

TEST_CASE("psnr closed-form cases") {
    // Uniform error 0.1 -> MSE 0.01 -> 20 dB.
    Raster a(4, 4, 1, 0.5), b(4, 4, 1, 0.6);
    CHECK(iq::psnr(a, b, 1.0) == Catch::Approx(20.0).margin(1e-12));

    // Identical inputs -> infinity sentinel.
    CHECK(std::isinf(iq::psnr(a, a, 1.0)));

    // 1x1, 1.0 vs 0.5: MSE 0.25 -> 10 log10(4) = 6.0206 dB.
    Raster c(1, 1, 1, 1.0), d(1, 1, 1, 0.5);
    CHECK(iq::psnr(c, d, 1.0) == Catch::Approx(6.020599913279624).margin(1e-10));
}

TEST_CASE("psnr rejects shape mismatch") {
    Raster a(4, 4, 1, 0.0), b(4, 5, 1, 0.0);
    CHECK_THROWS_AS(iq::psnr(a, b, 1.0), Error);
}

TEST_CASE("psnr decreases as noise amplitude grows") {
    Rng rng(60);
    auto base = random_raster(rng, 16, 16, 3);
    double prev = std::numeric_limits<double>::infinity();
    for (double amp : {0.01, 0.03, 0.1, 0.3}) {
        Raster noisy = base;
        Rng nrng(61);
        for (double& v : noisy.data) v += amp * (nrng.uniform() - 0.5);
        const double value = iq::psnr(base, noisy, 1.0);
        CHECK(value < prev);
        prev = value;
    }
}

TEST_CASE("ssim of identical images is exactly 1") {
    Rng rng(62);
    auto a = random_raster(rng, 16, 16, 3);
    CHECK(iq::ssim(a, a) == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("ssim closed form for constant images 0 and 1") {
    // Zero variances: value = (2*0*1 + C1)/(0 + 1 + C1) = C1/(1+C1).
    Raster a(16, 16, 1, 0.0), b(16, 16, 1, 1.0);
    const double c1 = 1e-4;
    CHECK(iq::ssim(a, b) == Catch::Approx(c1 / (1.0 + c1)).margin(1e-12));
}

TEST_CASE("ssim matches the sliding-window oracle on random pairs") {
    Rng rng(63);
    for (int trial = 0; trial < 3; ++trial) {
        auto a = random_raster(rng, 16, 16, 1);
        auto b = random_raster(rng, 16, 16, 1);
        const double got = iq::ssim(a, b);
        const double want = ssim_oracle(a, b, 11, 0.01, 0.03, 1.0, 1.5);
        REQUIRE(got == Catch::Approx(want).margin(1e-8));
    }
}

TEST_CASE("ssim is symmetric") {
    Rng rng(64);
    auto a = random_raster(rng, 13, 17, 2);
    auto b = random_raster(rng, 13, 17, 2);
    CHECK(iq::ssim(a, b) == Catch::Approx(iq::ssim(b, a)).margin(1e-15));
}

TEST_CASE("ssim rejects images smaller than the window") {
    Raster a(8, 8, 1, 0.5);
    CHECK_THROWS_AS(iq::ssim(a, a), Error);
}

TEST_CASE("lpips is zero on identical inputs and symmetric") {
    iq::CompactFeatureExtractor extractor;
    Rng rng(65);
    auto a = random_raster(rng, 32, 32, 3);
    auto b = random_raster(rng, 32, 32, 3);
    CHECK(iq::lpips(a, a, extractor) == 0.0);
    CHECK(iq::lpips(a, b, extractor) ==
          Catch::Approx(iq::lpips(b, a, extractor)).margin(1e-12));
    CHECK(iq::lpips(a, b, extractor) > 0.0);
}

TEST_CASE("lpips grows with noise amplitude") {
    iq::CompactFeatureExtractor extractor;
    Rng rng(66);
    auto base = random_raster(rng, 32, 32, 3);
    // Smooth the base a little so noise is the dominant difference.
    double prev = 0.0;
    for (double sigma : {0.02, 0.05, 0.1}) {
        Raster noisy = base;
        Rng nrng(67);
        for (double& v : noisy.data) v = std::clamp(v + sigma * nrng.normal(), 0.0, 1.0);
        const double value = iq::lpips(base, noisy, extractor);
        REQUIRE(value > prev);
        prev = value;
    }
}

TEST_CASE("lpips extractor is deterministic across instances") {
    iq::CompactFeatureExtractor e1, e2;
    Rng rng(68);
    auto a = random_raster(rng, 16, 16, 3);
    auto b = random_raster(rng, 16, 16, 3);
    CHECK(iq::lpips(a, b, e1) == iq::lpips(a, b, e2));
}

TEST_CASE("aggregate means and medians") {
    std::vector<iq::MetricItem> items{{"a", 20.0, 0.5, 0.3},
                                      {"b", 22.0, 0.6, 0.2},
                                      {"c", 24.0, 0.7, 0.1}};
    auto report = iq::aggregate(items);
    CHECK(report.psnr.mean == Catch::Approx(22.0));
    CHECK(report.psnr.median == Catch::Approx(22.0));

    std::vector<iq::MetricItem> pair{{"a", 20.0, 0.5, 0.3}, {"b", 30.0, 0.9, 0.1}};
    auto report2 = iq::aggregate(pair);
    CHECK(report2.psnr.mean == Catch::Approx(25.0));
    CHECK(report2.psnr.median == Catch::Approx(25.0)); // mid-pair average
    CHECK(report2.ssim.median == Catch::Approx(0.7));
}

TEST_CASE("aggregate excludes infinite psnr from the mean but reports it") {
    std::vector<iq::MetricItem> items{
        {"a", std::numeric_limits<double>::infinity(), 1.0, 0.0},
        {"b", 20.0, 0.5, 0.2},
        {"c", 30.0, 0.6, 0.1}};
    auto report = iq::aggregate(items);
    CHECK(report.psnr.mean == Catch::Approx(25.0));
    CHECK(report.psnr_inf_excluded_from_mean == 1);
    CHECK(report.psnr.median == Catch::Approx(30.0));
}

TEST_CASE("aggregate matches a sort-based oracle on a larger set") {
    Rng rng(69);
    std::vector<iq::MetricItem> items;
    for (int i = 0; i < 208; ++i)
        items.push_back({"item" + std::to_string(i), rng.uniform(15.0, 35.0),
                         rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)});
    auto report = iq::aggregate(items);

    std::vector<double> psnr_sorted;
    double mean = 0.0;
    for (const auto& item : items) {
        psnr_sorted.push_back(item.psnr_db);
        mean += item.psnr_db;
    }
    mean /= double(items.size());
    std::sort(psnr_sorted.begin(), psnr_sorted.end());
    const double median = 0.5 * (psnr_sorted[103] + psnr_sorted[104]);
    CHECK(report.psnr.mean == Catch::Approx(mean).margin(1e-12));
    CHECK(report.psnr.median == Catch::Approx(median).margin(1e-12));
}

TEST_CASE("aggregate rejects empty input") {
    CHECK_THROWS_AS(iq::aggregate({}), Error);
}

TEST_CASE("report serializes to CSV and JSON") {
    std::vector<iq::MetricItem> items{{"p1", 20.0, 0.5, 0.25},
                                      {"p2", std::numeric_limits<double>::infinity(), 1.0, 0.0}};
    auto report = iq::aggregate(items);
    const std::string csv = iq::report_to_csv(report);
    CHECK(csv.find("item_id,psnr,ssim,lpips") == 0);
    CHECK(csv.find("p1,20,0.5,0.25") != std::string::npos);
    CHECK(csv.find("p2,inf,1,0") != std::string::npos);

    const auto j = iq::report_to_json(report);
    CHECK(j["items"].size() == 2);
    CHECK(j["aggregates"]["psnr"]["inf_excluded_from_mean"] == 1);
    CHECK(j["items"][1]["psnr"] == "inf");
}
