#pragma once

// Shared domain types: per-frame probability traces, binary detection traces,
// labelled time-interval events, and elementary interval arithmetic.
//
// Time convention: frame i of a trace covers
//   [start_time + i*hop, start_time + (i+1)*hop),  hop = 1/frame_rate.
// Event end times are exclusive-edge, so an n-frame run has duration n*hop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sedpost/errors.hpp"

namespace sedpost {

using ClassLabel = std::string;

// Grouped call classes used throughout: blue whale A/B/Z, downsweeps, fin pulses.
inline std::vector<ClassLabel> default_labels() {
    return {"bmabz", "d", "bp"};
}

struct FrameTrace {
    double frame_rate = 0.0;  // frames per second, > 0
    double start_time = 0.0;  // seconds, >= 0
    std::vector<ClassLabel> classes;
    std::vector<std::vector<double>> probs;  // [class][frame], values in [0,1]

    double hop() const { return 1.0 / frame_rate; }
    std::size_t frames() const { return probs.empty() ? 0 : probs.front().size(); }

    const std::vector<double>& row(const ClassLabel& label) const {
        for (std::size_t c = 0; c < classes.size(); ++c) {
            if (classes[c] == label) return probs[c];
        }
        throw ConfigError("trace has no class '" + label + "'");
    }

    void validate() const {
        if (!(frame_rate > 0.0)) throw InvalidParameter("frame_rate must be positive");
        if (start_time < 0.0) throw InvalidParameter("start_time must be >= 0");
        if (classes.size() != probs.size())
            throw InvalidParameter("class label count does not match probability rows");
        const std::size_t n = frames();
        for (std::size_t c = 0; c < probs.size(); ++c) {
            if (probs[c].size() != n)
                throw InvalidParameter("ragged probability rows (class '" + classes[c] + "')");
            for (double p : probs[c]) {
                if (!(p >= 0.0 && p <= 1.0))
                    throw InvalidParameter("probability outside [0,1] in class '" + classes[c] + "'");
            }
        }
    }
};

struct DetectionTrace {
    double frame_rate = 0.0;
    double start_time = 0.0;
    std::vector<ClassLabel> classes;
    std::vector<std::vector<std::uint8_t>> dets;  // [class][frame], 0/1

    double hop() const { return 1.0 / frame_rate; }
    std::size_t frames() const { return dets.empty() ? 0 : dets.front().size(); }

    const std::vector<std::uint8_t>& row(const ClassLabel& label) const {
        for (std::size_t c = 0; c < classes.size(); ++c) {
            if (classes[c] == label) return dets[c];
        }
        throw ConfigError("detection trace has no class '" + label + "'");
    }
};

// One labelled time interval. t_end is exclusive; duration must be positive.
struct Event {
    ClassLabel label;
    double t_start = 0.0;
    double t_end = 0.0;

    double duration() const { return t_end - t_start; }

    bool operator==(const Event& other) const = default;
};

// Events of one class from one recording, sorted by start time.
struct EventSet {
    std::vector<Event> events;
    std::string source_id;
};

// Interval intersection-over-union; labels are ignored, callers filter by class.
inline double iou(const Event& a, const Event& b) {
    const double inter =
        std::min(a.t_end, b.t_end) - std::max(a.t_start, b.t_start);
    if (inter <= 0.0) return 0.0;
    const double uni = a.duration() + b.duration() - inter;
    return inter / uni;
}

inline double frame_to_time(std::size_t frame, double frame_rate, double start_time) {
    return start_time + static_cast<double>(frame) / frame_rate;
}

// One recording: its probability trace plus per-class ground-truth events.
struct Recording {
    std::string id;
    FrameTrace trace;
    std::map<ClassLabel, EventSet> truth;

    const EventSet& truth_for(const ClassLabel& label) const {
        static const EventSet empty;
        auto it = truth.find(label);
        return it == truth.end() ? empty : it->second;
    }
};

// A named partition of the data (keyed by site-year in the real corpus).
struct Fold {
    std::string name;
    std::vector<Recording> recordings;
};

} // namespace sedpost
