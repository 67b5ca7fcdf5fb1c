#pragma once

// JSON forms of configs, metrics, and search reports. Keys are emitted in
// sorted order and metric values are rounded to nine decimals, so identical
// inputs always serialise to identical bytes.

#include <cmath>
#include <optional>
#include <string>

#include <json.hpp>

#include "sedpost/evalkit.hpp"
#include "sedpost/hypersearch.hpp"
#include "sedpost/pipeline.hpp"

namespace sedpost {

inline constexpr const char* kToolVersion = "0.1.0";

namespace detail {

inline double round9(double v) { return std::round(v * 1e9) / 1e9; }

inline nlohmann::json kernel_to_json(const std::optional<int>& k) {
    return k ? nlohmann::json(*k) : nlohmann::json(nullptr);
}

inline std::optional<int> kernel_from_json(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<int>();
}

} // namespace detail

inline nlohmann::json frame_params_to_json(const FrameParams& p) {
    return {{"median_kernel", detail::kernel_to_json(p.median_kernel)},
            {"on_threshold", detail::round9(p.on_threshold)},
            {"off_threshold", detail::round9(p.off_threshold)},
            {"hangover_kernel", detail::kernel_to_json(p.hangover_kernel)}};
}

inline FrameParams frame_params_from_json(const nlohmann::json& j) {
    FrameParams p;
    p.median_kernel = detail::kernel_from_json(j.value("median_kernel", nlohmann::json()));
    p.on_threshold = j.at("on_threshold").get<double>();
    p.off_threshold = j.at("off_threshold").get<double>();
    p.hangover_kernel = detail::kernel_from_json(j.value("hangover_kernel", nlohmann::json()));
    return p;
}

inline nlohmann::json event_params_to_json(const EventParams& p) {
    return {{"min_gap", detail::round9(p.min_gap)},
            {"min_duration", detail::round9(p.min_duration)},
            {"max_duration", detail::round9(p.max_duration)}};
}

inline EventParams event_params_from_json(const nlohmann::json& j) {
    return EventParams{j.at("min_gap").get<double>(), j.at("min_duration").get<double>(),
                       j.at("max_duration").get<double>()};
}

inline nlohmann::json config_to_json(const PostProcessingConfig& config) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [label, c] : config)
        j[label] = {{"frame", frame_params_to_json(c.frame)},
                    {"event", event_params_to_json(c.event)}};
    return j;
}

inline PostProcessingConfig config_from_json(const nlohmann::json& j) {
    PostProcessingConfig config;
    for (const auto& [label, cj] : j.items())
        config[label] = ClassConfig{frame_params_from_json(cj.at("frame")),
                                    event_params_from_json(cj.at("event"))};
    return config;
}

inline nlohmann::json metrics_to_json(const ClassMetrics& m) {
    return {{"tp", m.tp},
            {"fp", m.fp},
            {"fn", m.fn},
            {"precision", detail::round9(m.precision)},
            {"recall", detail::round9(m.recall)},
            {"f1", detail::round9(m.f1)},
            {"mean_iou", detail::round9(m.mean_iou)}};
}

inline nlohmann::json eval_report_to_json(const EvalReport& report) {
    nlohmann::json per_fold = nlohmann::json::object();
    for (const auto& [label, folds] : report.per_fold) {
        nlohmann::json arr = nlohmann::json::array();
        for (std::size_t i = 0; i < folds.size(); ++i)
            arr.push_back({{"fold", report.fold_names[i]},
                           {"metrics", metrics_to_json(folds[i])}});
        per_fold[label] = arr;
    }
    nlohmann::json averaged = nlohmann::json::object();
    for (const auto& [label, m] : report.averaged) averaged[label] = metrics_to_json(m);
    return {{"schema", "1"},
            {"per_fold", per_fold},
            {"averaged", averaged},
            {"macro_f1", detail::round9(report.macro_f1)}};
}

// Search-space override document: per-class lists mirroring the grid specs.
inline SearchSpace search_space_from_json(const nlohmann::json& j,
                                          const std::vector<ClassLabel>& labels) {
    SearchSpace space = default_search_space(labels);
    auto kernels = [](const nlohmann::json& arr) {
        std::vector<std::optional<int>> out;
        for (const auto& v : arr) out.push_back(detail::kernel_from_json(v));
        return out;
    };
    if (j.contains("frame")) {
        for (const auto& [label, fj] : j.at("frame").items()) {
            FrameGridSpec& spec = space.frame[label];
            if (fj.contains("median_kernel")) spec.median_kernel = kernels(fj["median_kernel"]);
            if (fj.contains("on_threshold"))
                spec.on_threshold = fj["on_threshold"].get<std::vector<double>>();
            if (fj.contains("off_threshold"))
                spec.off_threshold = fj["off_threshold"].get<std::vector<double>>();
            if (fj.contains("hangover_kernel"))
                spec.hangover_kernel = kernels(fj["hangover_kernel"]);
        }
    }
    if (j.contains("event")) {
        for (const auto& [label, ej] : j.at("event").items()) {
            EventGridSpec& spec = space.event[label];
            if (ej.contains("min_gap")) spec.min_gap = ej["min_gap"].get<std::vector<double>>();
            if (ej.contains("min_duration"))
                spec.min_duration = ej["min_duration"].get<std::vector<double>>();
            if (ej.contains("max_duration"))
                spec.max_duration = ej["max_duration"].get<std::vector<double>>();
        }
    }
    return space;
}

// Deterministic search report; wall time goes to stderr, not the file.
inline nlohmann::json search_report_to_json(const CvOutcome& outcome,
                                            std::uint64_t seed,
                                            double match_threshold) {
    nlohmann::json turns = nlohmann::json::array();
    for (const TurnOutcome& turn : outcome.per_turn) {
        nlohmann::json dev_f1 = nlohmann::json::object();
        for (const auto& [label, f1] : turn.search.dev_f1) dev_f1[label] = detail::round9(f1);
        nlohmann::json test = nlohmann::json::object();
        for (const auto& [label, m] : turn.test_metrics) test[label] = metrics_to_json(m);
        turns.push_back({{"test_fold", turn.test_fold},
                         {"dev_folds", turn.dev_folds},
                         {"chosen", config_to_json(turn.search.chosen)},
                         {"dev_f1", dev_f1},
                         {"test", test}});
    }
    nlohmann::json final_per_class = nlohmann::json::object();
    for (const auto& [label, m] : outcome.final_per_class)
        final_per_class[label] = metrics_to_json(m);
    nlohmann::json grid_sizes = {{"frame", outcome.frame_grid_sizes},
                                 {"event", outcome.event_grid_sizes}};
    return {{"schema", "1"},
            {"tool_version", kToolVersion},
            {"strategy", strategy_name(outcome.strategy)},
            {"seed", seed},
            {"match_threshold", detail::round9(match_threshold)},
            {"grid_sizes", grid_sizes},
            {"turns", turns},
            {"final", {{"per_class", final_per_class},
                       {"macro_f1", detail::round9(outcome.final_macro_f1)}}}};
}

} // namespace sedpost
