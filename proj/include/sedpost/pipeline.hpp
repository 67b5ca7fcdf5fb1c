#pragma once

// Full post-processing pipeline: frame-level smoothing/binarisation followed
// by event-level aggregation and constraints, per class.

#include <map>

#include "sedpost/core.hpp"
#include "sedpost/eventpost.hpp"
#include "sedpost/framepost.hpp"

namespace sedpost {

struct ClassConfig {
    FrameParams frame;
    EventParams event;

    bool operator==(const ClassConfig&) const = default;
};

using PostProcessingConfig = std::map<ClassLabel, ClassConfig>;

inline EventSet run_postprocess_class(const FrameTrace& trace, const ClassLabel& label,
                                      const ClassConfig& config,
                                      FramePipelineOptions opts = {}) {
    config.event.validate();
    DetectionTrace dets;
    dets.frame_rate = trace.frame_rate;
    dets.start_time = trace.start_time;
    dets.classes = {label};
    dets.dets = {frame_pipeline_row(trace.row(label), config.frame, opts)};
    return event_pipeline_class(dets, label, config.event);
}

inline std::map<ClassLabel, EventSet> run_postprocess(const FrameTrace& trace,
                                                      const PostProcessingConfig& config,
                                                      FramePipelineOptions opts = {}) {
    std::map<ClassLabel, EventSet> out;
    for (const ClassLabel& label : trace.classes) {
        auto it = config.find(label);
        if (it == config.end())
            throw ConfigError("no post-processing config for class '" + label + "'");
        out[label] = run_postprocess_class(trace, label, it->second, opts);
    }
    return out;
}

} // namespace sedpost
