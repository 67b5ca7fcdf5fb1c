#pragma once

// Frame-level post-processing: median filtering of class probabilities,
// hysteresis thresholding, and hangover majority voting over past detections.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "sedpost/core.hpp"
#include "sedpost/errors.hpp"

namespace sedpost {

// Per-class frame-level hyperparameters. A missing kernel means the stage is
// skipped entirely (not kernel = 1).
struct FrameParams {
    std::optional<int> median_kernel;
    double on_threshold = 0.5;
    double off_threshold = 0.5;
    std::optional<int> hangover_kernel;

    bool operator==(const FrameParams&) const = default;

    void validate() const {
        for (const auto& k : {median_kernel, hangover_kernel}) {
            if (k && (*k < 3 || *k % 2 == 0))
                throw InvalidParameter("filter kernels must be odd and >= 3");
        }
        if (!(off_threshold > 0.0 && off_threshold <= on_threshold && on_threshold < 1.0))
            throw InvalidParameter("thresholds must satisfy 0 < off <= on < 1");
    }
};

using FrameConfig = std::map<ClassLabel, FrameParams>;

namespace detail {

inline void check_kernel(int kernel, std::size_t length, const char* what) {
    if (kernel % 2 == 0 || kernel < 3)
        throw InvalidParameter(std::string(what) + " kernel must be odd and >= 3");
    if (static_cast<std::size_t>(kernel) > length)
        throw InvalidParameter(std::string(what) + " kernel larger than trace");
}

} // namespace detail

// Sliding-window median with replicate padding at the edges.
inline std::vector<double> median_filter_row(std::span<const double> probs, int kernel) {
    detail::check_kernel(kernel, probs.size(), "median");
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(probs.size());
    const std::ptrdiff_t half = kernel / 2;
    std::vector<double> out(probs.size());
    std::vector<double> window(static_cast<std::size_t>(kernel));
    for (std::ptrdiff_t t = 0; t < n; ++t) {
        for (std::ptrdiff_t j = 0; j < kernel; ++j) {
            std::ptrdiff_t idx = std::clamp<std::ptrdiff_t>(t - half + j, 0, n - 1);
            window[static_cast<std::size_t>(j)] = probs[static_cast<std::size_t>(idx)];
        }
        auto mid = window.begin() + half;
        std::nth_element(window.begin(), mid, window.end());
        out[static_cast<std::size_t>(t)] = *mid;
    }
    return out;
}

inline FrameTrace median_filter(const FrameTrace& trace, int kernel) {
    FrameTrace out = trace;
    for (auto& row : out.probs) row = median_filter_row(row, kernel);
    return out;
}

// Two-threshold state machine. Inactive -> active when p >= on; active ->
// inactive when p < off. With on == off this is a plain fixed threshold.
inline std::vector<std::uint8_t> hysteresis_row(std::span<const double> probs,
                                                double on, double off) {
    if (!(off > 0.0 && off <= on && on < 1.0))
        throw InvalidParameter("hysteresis thresholds must satisfy 0 < off <= on < 1");
    std::vector<std::uint8_t> out(probs.size());
    bool active = false;
    for (std::size_t t = 0; t < probs.size(); ++t) {
        if (active) {
            if (probs[t] < off) active = false;
        } else {
            if (probs[t] >= on) active = true;
        }
        out[t] = active ? 1 : 0;
    }
    return out;
}

inline DetectionTrace hysteresis_binarize(const FrameTrace& trace, double on, double off) {
    DetectionTrace out;
    out.frame_rate = trace.frame_rate;
    out.start_time = trace.start_time;
    out.classes = trace.classes;
    out.dets.reserve(trace.probs.size());
    for (const auto& row : trace.probs) out.dets.push_back(hysteresis_row(row, on, off));
    return out;
}

// Majority vote over the current frame plus the k previous detections, with
// kernel = k + 1:  y~_t = 1  iff  sum_{i=0..k} y^_{t-i} > (k+1)/2.
// Before k past samples exist the vote runs on the t+1 available ones with
// threshold (t+1)/2.
inline std::vector<std::uint8_t> hangover_row(std::span<const std::uint8_t> dets, int kernel) {
    if (kernel % 2 == 0 || kernel < 1)
        throw InvalidParameter("hangover kernel must be odd and >= 1");
    const int k = kernel - 1;
    std::vector<std::uint8_t> out(dets.size());
    int window_sum = 0;
    for (std::size_t t = 0; t < dets.size(); ++t) {
        window_sum += dets[t];
        if (t > static_cast<std::size_t>(k)) window_sum -= dets[t - static_cast<std::size_t>(k) - 1];
        const int avail = static_cast<int>(std::min<std::size_t>(t, static_cast<std::size_t>(k))) + 1;
        out[t] = (2 * window_sum > avail) ? 1 : 0;
    }
    return out;
}

inline DetectionTrace hangover(const DetectionTrace& dets, int kernel) {
    DetectionTrace out = dets;
    for (auto& row : out.dets) row = hangover_row(row, kernel);
    return out;
}

// Where the per-class median kernel is applied. The default smooths the class
// probabilities before binarisation; the alternative applies a binary median
// (majority in a centered window) to the detections after hysteresis.
enum class MedianTarget { probabilities, detections };

struct FramePipelineOptions {
    MedianTarget median_target = MedianTarget::probabilities;
};

inline std::vector<std::uint8_t> frame_pipeline_row(std::span<const double> probs,
                                                    const FrameParams& params,
                                                    FramePipelineOptions opts = {}) {
    params.validate();
    std::vector<std::uint8_t> dets;
    if (params.median_kernel && opts.median_target == MedianTarget::probabilities) {
        dets = hysteresis_row(median_filter_row(probs, *params.median_kernel),
                              params.on_threshold, params.off_threshold);
    } else {
        dets = hysteresis_row(probs, params.on_threshold, params.off_threshold);
    }
    if (params.median_kernel && opts.median_target == MedianTarget::detections) {
        std::vector<double> as_real(dets.begin(), dets.end());
        auto smoothed = median_filter_row(as_real, *params.median_kernel);
        for (std::size_t t = 0; t < dets.size(); ++t) dets[t] = smoothed[t] >= 0.5 ? 1 : 0;
    }
    if (params.hangover_kernel) dets = hangover_row(dets, *params.hangover_kernel);
    return dets;
}

// Per class: median filter (if set) -> hysteresis -> hangover (if set).
inline DetectionTrace frame_pipeline(const FrameTrace& trace, const FrameConfig& config,
                                     FramePipelineOptions opts = {}) {
    DetectionTrace out;
    out.frame_rate = trace.frame_rate;
    out.start_time = trace.start_time;
    out.classes = trace.classes;
    out.dets.resize(trace.classes.size());
    for (std::size_t c = 0; c < trace.classes.size(); ++c) {
        auto it = config.find(trace.classes[c]);
        if (it == config.end())
            throw ConfigError("no frame params for class '" + trace.classes[c] + "'");
        out.dets[c] = frame_pipeline_row(trace.probs[c], it->second, opts);
    }
    return out;
}

} // namespace sedpost
