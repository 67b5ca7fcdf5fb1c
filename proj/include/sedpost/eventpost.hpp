#pragma once

// Event-level post-processing: aggregate binary detections into contiguous
// events, merge events separated by small gaps, and drop events with
// implausible durations.

#include <map>
#include <vector>

#include "sedpost/core.hpp"
#include "sedpost/errors.hpp"

namespace sedpost {

struct EventParams {
    double min_gap = 0.5;       // seconds between events below which they merge
    double min_duration = 0.0;  // inclusive bounds; events outside are removed
    double max_duration = 0.0;

    bool operator==(const EventParams&) const = default;

    void validate() const {
        if (!(min_gap > 0.0 && min_duration > 0.0 && max_duration > 0.0))
            throw InvalidParameter("event params must be positive");
        if (!(min_duration < max_duration))
            throw InvalidParameter("min_duration must be < max_duration");
    }
};

using EventConfig = std::map<ClassLabel, EventParams>;

// One event per maximal run of 1s in the class row. Event edges land on frame
// boundaries: start = first*hop, end = (last+1)*hop, shifted by start_time.
inline EventSet aggregate_events(const DetectionTrace& dets, const ClassLabel& label) {
    const auto& row = dets.row(label);
    EventSet out;
    const double rate = dets.frame_rate;
    std::size_t t = 0;
    while (t < row.size()) {
        if (!row[t]) {
            ++t;
            continue;
        }
        std::size_t run_end = t;
        while (run_end + 1 < row.size() && row[run_end + 1]) ++run_end;
        out.events.push_back(Event{label,
                                   frame_to_time(t, rate, dets.start_time),
                                   frame_to_time(run_end + 1, rate, dets.start_time)});
        t = run_end + 1;
    }
    return out;
}

// Merge consecutive events whose gap is strictly smaller than min_gap,
// applied transitively left to right. Input must be sorted by start time.
inline EventSet merge_events(const EventSet& events, double min_gap) {
    EventSet out;
    out.source_id = events.source_id;
    for (const Event& e : events.events) {
        if (!out.events.empty() && e.t_start - out.events.back().t_end < min_gap) {
            out.events.back().t_end = std::max(out.events.back().t_end, e.t_end);
        } else {
            out.events.push_back(e);
        }
    }
    return out;
}

// Keep events with min_d <= duration <= max_d; over-long events are removed,
// never truncated.
inline EventSet filter_duration(const EventSet& events, double min_d, double max_d) {
    if (!(min_d < max_d)) throw InvalidParameter("min duration must be < max duration");
    EventSet out;
    out.source_id = events.source_id;
    for (const Event& e : events.events) {
        const double d = e.duration();
        if (d >= min_d && d <= max_d) out.events.push_back(e);
    }
    return out;
}

inline EventSet event_pipeline_class(const DetectionTrace& dets, const ClassLabel& label,
                                     const EventParams& params) {
    params.validate();
    EventSet events = aggregate_events(dets, label);
    events = merge_events(events, params.min_gap);
    return filter_duration(events, params.min_duration, params.max_duration);
}

// Per class: aggregate -> merge -> filter.
inline std::map<ClassLabel, EventSet> event_pipeline(const DetectionTrace& dets,
                                                     const EventConfig& config) {
    std::map<ClassLabel, EventSet> out;
    for (const ClassLabel& label : dets.classes) {
        auto it = config.find(label);
        if (it == config.end())
            throw ConfigError("no event params for class '" + label + "'");
        out[label] = event_pipeline_class(dets, label, it->second);
    }
    return out;
}

} // namespace sedpost
