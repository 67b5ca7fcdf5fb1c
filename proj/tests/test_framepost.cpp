#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "sedpost/framepost.hpp"
#include "testutil.hpp"

using namespace sedpost;

namespace {

std::size_t active_count(const std::vector<std::uint8_t>& dets) {
    std::size_t n = 0;
    for (auto d : dets) n += d;
    return n;
}

} // namespace

TEST_CASE("median filter with replicate padding, kernel 3") {
    auto out = median_filter_row(std::vector<double>{0.1, 0.9, 0.1}, 3);
    REQUIRE(out == std::vector<double>{0.1, 0.1, 0.1});
}

TEST_CASE("median filter leaves constant traces unchanged") {
    const std::vector<double> flat(20, 0.37);
    REQUIRE(median_filter_row(flat, 3) == flat);
    REQUIRE(median_filter_row(flat, 11) == flat);
}

TEST_CASE("median filter matches the sliding-window sort oracle") {
    std::mt19937_64 rng(101);
    for (int i = 0; i < 200; ++i) {
        const int kernel = std::vector<int>{3, 5, 11, 33}[static_cast<std::size_t>(i) % 4];
        std::uniform_int_distribution<std::size_t> len(static_cast<std::size_t>(kernel), 200);
        auto probs = testutil::random_probs(rng, len(rng));
        REQUIRE(median_filter_row(probs, kernel) == testutil::median_oracle(probs, kernel));
    }
}

TEST_CASE("median filter rejects bad kernels") {
    const std::vector<double> xs(10, 0.5);
    REQUIRE_THROWS_AS(median_filter_row(xs, 4), InvalidParameter);
    REQUIRE_THROWS_AS(median_filter_row(xs, 1), InvalidParameter);
    REQUIRE_THROWS_AS(median_filter_row(xs, 11), InvalidParameter);  // larger than trace
}

TEST_CASE("hysteresis state machine hand trace") {
    auto out = hysteresis_row(std::vector<double>{0.2, 0.8, 0.5, 0.4, 0.2, 0.6}, 0.7, 0.3);
    REQUIRE(out == std::vector<std::uint8_t>{0, 1, 1, 1, 0, 0});
}

TEST_CASE("hysteresis with equal thresholds is a plain threshold") {
    auto out = hysteresis_row(std::vector<double>{0.4, 0.6}, 0.5, 0.5);
    REQUIRE(out == std::vector<std::uint8_t>{0, 1});

    std::mt19937_64 rng(5);
    for (int i = 0; i < 100; ++i) {
        auto probs = testutil::random_probs(rng, 120);
        const double thr = 0.1 + 0.8 * testutil::random_probs(rng, 1)[0];
        REQUIRE(hysteresis_row(probs, thr, thr) == testutil::threshold_oracle(probs, thr));
    }
}

TEST_CASE("hysteresis never activates below the off threshold") {
    std::vector<double> probs(50, 0.2);
    auto out = hysteresis_row(probs, 0.7, 0.3);
    REQUIRE(active_count(out) == 0);
}

TEST_CASE("hysteresis rejects off > on") {
    REQUIRE_THROWS_AS(hysteresis_row(std::vector<double>{0.5}, 0.3, 0.7), InvalidParameter);
}

TEST_CASE("raising the on threshold never adds active frames") {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 100; ++i) {
        auto probs = testutil::random_probs(rng, 150);
        const double off = 0.2;
        const auto low = hysteresis_row(probs, 0.4, off);
        const auto high = hysteresis_row(probs, 0.6, off);
        REQUIRE(active_count(high) <= active_count(low));
    }
}

TEST_CASE("hangover majority vote, kernel 3") {
    // window [y_t, y_{t-1}, y_{t-2}] = [1,1,0]: sum 2 > 1.5 -> 1
    REQUIRE(hangover_row(std::vector<std::uint8_t>{0, 1, 1}, 3) ==
            std::vector<std::uint8_t>{0, 0, 1});
    // window [1,0,0]: sum 1 fails the vote
    REQUIRE(hangover_row(std::vector<std::uint8_t>{1, 0, 0}, 3) ==
            std::vector<std::uint8_t>{1, 0, 0});
}

TEST_CASE("hangover keeps unanimous windows") {
    const std::vector<std::uint8_t> ones(40, 1);
    const std::vector<std::uint8_t> zeros(40, 0);
    for (int kernel : {3, 11, 33}) {
        REQUIRE(hangover_row(ones, kernel) == ones);
        REQUIRE(hangover_row(zeros, kernel) == zeros);
    }
}

TEST_CASE("hangover matches the direct vote oracle") {
    std::mt19937_64 rng(23);
    for (int i = 0; i < 300; ++i) {
        const int kernel = std::vector<int>{3, 11, 33, 55}[static_cast<std::size_t>(i) % 4];
        std::uniform_int_distribution<std::size_t> len(1, 300);
        auto dets = testutil::random_binary(rng, len(rng));
        REQUIRE(hangover_row(dets, kernel) == testutil::hangover_oracle(dets, kernel));
    }
}

TEST_CASE("hangover rejects even kernels") {
    REQUIRE_THROWS_AS(hangover_row(std::vector<std::uint8_t>{1, 0}, 4), InvalidParameter);
}

TEST_CASE("frame params validation") {
    FrameParams p;
    REQUIRE_NOTHROW(p.validate());
    p.median_kernel = 4;
    REQUIRE_THROWS_AS(p.validate(), InvalidParameter);
    p.median_kernel = 11;
    p.off_threshold = 0.9;
    p.on_threshold = 0.5;
    REQUIRE_THROWS_AS(p.validate(), InvalidParameter);
}

TEST_CASE("degenerate pipeline equals plain thresholding") {
    std::mt19937_64 rng(31);
    auto probs = testutil::random_probs(rng, 200);
    FrameParams params{std::nullopt, 0.5, 0.5, std::nullopt};
    REQUIRE(frame_pipeline_row(probs, params) == testutil::threshold_oracle(probs, 0.5));
}

TEST_CASE("pipeline runs at the extreme search values on a long trace") {
    std::mt19937_64 rng(37);
    auto trace = testutil::single_class_trace(testutil::random_probs(rng, 3000));
    FrameConfig config{{"x", FrameParams{55, 0.9, 0.1, 55}}};
    DetectionTrace out = frame_pipeline(trace, config);
    REQUIRE(out.frames() == 3000);
}

TEST_CASE("pipeline equals manual composition of the three stages") {
    std::mt19937_64 rng(41);
    for (int i = 0; i < 40; ++i) {
        auto probs = testutil::random_probs(rng, 250);
        FrameParams params{11, 0.6, 0.4, 3};
        auto expected = hangover_row(
            hysteresis_row(median_filter_row(probs, 11), 0.6, 0.4), 3);
        REQUIRE(frame_pipeline_row(probs, params) == expected);
    }
}

TEST_CASE("pipeline requires params for every trace class") {
    auto trace = testutil::single_class_trace({0.5, 0.5});
    REQUIRE_THROWS_AS(frame_pipeline(trace, FrameConfig{}), ConfigError);
}

TEST_CASE("median applied to detections is a binary majority smoother") {
    std::vector<double> probs{0.9, 0.9, 0.1, 0.9, 0.9};
    FrameParams params{3, 0.5, 0.5, std::nullopt};
    FramePipelineOptions opts;
    opts.median_target = MedianTarget::detections;
    // hysteresis gives [1,1,0,1,1]; a width-3 binary median fills the hole
    REQUIRE(frame_pipeline_row(probs, params, opts) ==
            std::vector<std::uint8_t>{1, 1, 1, 1, 1});
}
