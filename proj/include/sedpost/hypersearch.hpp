#pragma once

// Hyperparameter grid construction, the forward- and backward-search two-stage
// optimisation procedures, and the turn-based cross-validation protocol.
//
// Both searches optimise each class independently (a class's metrics depend
// only on its own parameters) and are deterministic: candidates are scored in
// a fixed enumeration order and ties break on the first candidate, regardless
// of worker count.

#include <chrono>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sedpost/call_stats.hpp"
#include "sedpost/core.hpp"
#include "sedpost/errors.hpp"
#include "sedpost/evalkit.hpp"
#include "sedpost/ingest.hpp"
#include "sedpost/parallel.hpp"
#include "sedpost/pipeline.hpp"

namespace sedpost {

// ---------------------------------------------------------------------------
// Search space

struct FrameGridSpec {
    std::vector<std::optional<int>> median_kernel;
    std::vector<double> on_threshold;
    std::vector<double> off_threshold;
    std::vector<std::optional<int>> hangover_kernel;
};

struct EventGridSpec {
    std::vector<double> min_gap;
    std::vector<double> min_duration;
    std::vector<double> max_duration;
};

struct SearchSpace {
    std::map<ClassLabel, FrameGridSpec> frame;
    std::map<ClassLabel, EventGridSpec> event;
};

namespace detail {

inline std::vector<double> tenths(int from, int to, int step) {
    std::vector<double> out;
    for (int i = from; i <= to; i += step) out.push_back(static_cast<double>(i) / 10.0);
    return out;
}

} // namespace detail

// Default grids: kernels {none,11,33,55}, thresholds 0.1..0.9 in steps of 0.1,
// and per-class event ranges (gap 0.1..0.9 s; durations bracketing each class).
inline SearchSpace default_search_space(const std::vector<ClassLabel>& labels =
                                            default_labels()) {
    SearchSpace space;
    FrameGridSpec frame;
    frame.median_kernel = {std::nullopt, 11, 33, 55};
    frame.on_threshold = detail::tenths(1, 9, 1);
    frame.off_threshold = detail::tenths(1, 9, 1);
    frame.hangover_kernel = {std::nullopt, 11, 33, 55};

    std::map<ClassLabel, EventGridSpec> event_defaults;
    event_defaults["bmabz"] = {detail::tenths(1, 9, 1), detail::tenths(20, 50, 5),
                               detail::tenths(250, 400, 25)};
    event_defaults["d"] = {detail::tenths(1, 9, 1), detail::tenths(6, 30, 4),
                           detail::tenths(50, 110, 10)};
    event_defaults["bp"] = {detail::tenths(1, 9, 1), detail::tenths(3, 15, 2),
                            detail::tenths(20, 50, 5)};

    for (const ClassLabel& label : labels) {
        space.frame[label] = frame;
        auto it = event_defaults.find(label);
        space.event[label] = it != event_defaults.end()
                                 ? it->second
                                 : EventGridSpec{detail::tenths(1, 9, 1),
                                                 detail::tenths(3, 30, 4),
                                                 detail::tenths(50, 400, 50)};
    }
    return space;
}

// Cartesian product in lexicographic order over (median, on, off, hangover),
// with pairs violating off <= on excluded.
inline std::vector<FrameParams> frame_grid(const SearchSpace& space, const ClassLabel& label) {
    auto it = space.frame.find(label);
    if (it == space.frame.end())
        throw ConfigError("no frame search space for class '" + label + "'");
    const FrameGridSpec& spec = it->second;
    std::vector<FrameParams> grid;
    for (const auto& median : spec.median_kernel)
        for (double on : spec.on_threshold)
            for (double off : spec.off_threshold) {
                if (off > on) continue;
                for (const auto& hang : spec.hangover_kernel)
                    grid.push_back(FrameParams{median, on, off, hang});
            }
    return grid;
}

// Cartesian product in lexicographic order over (min_gap, min_dur, max_dur).
inline std::vector<EventParams> event_grid(const SearchSpace& space, const ClassLabel& label) {
    auto it = space.event.find(label);
    if (it == space.event.end())
        throw ConfigError("no event search space for class '" + label + "'");
    const EventGridSpec& spec = it->second;
    std::vector<EventParams> grid;
    for (double gap : spec.min_gap)
        for (double min_d : spec.min_duration)
            for (double max_d : spec.max_duration)
                grid.push_back(EventParams{gap, min_d, max_d});
    return grid;
}

// ---------------------------------------------------------------------------
// Empirical event-parameter defaults

// min_gap fixed at 0.5 s; per grouped class, duration bounds are the overall
// min and max over the constituent raw call types in the stats table.
inline EventConfig empirical_event_defaults(
    const CallStatsTable& stats = training_call_stats(),
    const GroupingMap& grouping = GroupingMap::defaults(),
    double min_gap = 0.5) {
    EventConfig config;
    for (const auto& [raw, s] : stats) {
        const ClassLabel label = grouping.group(raw);
        auto [it, inserted] = config.try_emplace(label, EventParams{min_gap, s.min_s, s.max_s});
        if (!inserted) {
            it->second.min_duration = std::min(it->second.min_duration, s.min_s);
            it->second.max_duration = std::max(it->second.max_duration, s.max_s);
        }
    }
    return config;
}

// ---------------------------------------------------------------------------
// Candidate evaluation

struct SearchOptions {
    double match_threshold = kDefaultMatchThreshold;
    unsigned jobs = 1;
    FramePipelineOptions pipeline{};
    std::vector<double> pr_sweep = default_pr_sweep();
    const CallStatsTable* stats = &training_call_stats();
    GroupingMap grouping = GroupingMap::defaults();
    // Backward-search stage 2 re-searches all four frame parameters by
    // default; set to keep the stage-1 equal-PR threshold pinned instead.
    bool backward_keep_threshold = false;
    bool verbose = false;
};

// Dev-fold objective for one class: precision/recall averaged over the dev
// folds, F1 recomputed from the averages. Pipeline failures score 0 with a
// diagnostic rather than aborting the sweep.
inline double evaluate_candidate_class(std::span<const Fold> dev_folds,
                                       const ClassLabel& label, const ClassConfig& config,
                                       const SearchOptions& opts) {
    static std::mutex diag_mutex;
    try {
        std::vector<ClassMetrics> per_fold;
        per_fold.reserve(dev_folds.size());
        for (const Fold& fold : dev_folds)
            per_fold.push_back(evaluate_fold_class(fold, label, config,
                                                   opts.match_threshold, opts.pipeline));
        return fold_average_metrics(per_fold).f1;
    } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(diag_mutex);
        std::cerr << "candidate failed for class '" << label << "': " << e.what() << "\n";
        return 0.0;
    }
}

inline std::map<ClassLabel, double> evaluate_candidate(
    std::span<const Fold> dev_folds, const std::vector<ClassLabel>& labels,
    const PostProcessingConfig& config, const SearchOptions& opts = {}) {
    std::map<ClassLabel, double> out;
    for (const ClassLabel& label : labels) {
        auto it = config.find(label);
        if (it == config.end()) throw ConfigError("no config for class '" + label + "'");
        out[label] = evaluate_candidate_class(dev_folds, label, it->second, opts);
    }
    return out;
}

namespace detail {

// Scores every candidate (in parallel when opts.jobs > 1) and returns the
// index of the best score, first index winning ties.
template <typename MakeConfig>
std::pair<std::size_t, double> best_candidate(std::size_t n_candidates,
                                              std::span<const Fold> dev_folds,
                                              const ClassLabel& label,
                                              const MakeConfig& make_config,
                                              const SearchOptions& opts) {
    if (n_candidates == 0) throw ConfigError("empty candidate grid for class '" + label + "'");
    std::vector<double> scores(n_candidates);
    parallel_for(n_candidates, opts.jobs, [&](std::size_t i) {
        scores[i] = evaluate_candidate_class(dev_folds, label, make_config(i), opts);
    });
    std::size_t best = 0;
    for (std::size_t i = 1; i < n_candidates; ++i)
        if (scores[i] > scores[best]) best = i;
    return {best, scores[best]};
}

} // namespace detail

// ---------------------------------------------------------------------------
// Search procedures

struct SearchResult {
    PostProcessingConfig chosen;
    std::map<ClassLabel, double> dev_f1;  // objective of the chosen config
};

// Stage 1: event params pinned to the empirical defaults, frame params
// searched per class. Stage 2: frame params pinned at the stage-1 winners,
// event params searched.
inline SearchResult forward_search(std::span<const Fold> dev_folds,
                                   const std::vector<ClassLabel>& labels,
                                   const SearchSpace& space, const SearchOptions& opts = {}) {
    const EventConfig event_defaults =
        empirical_event_defaults(*opts.stats, opts.grouping);
    SearchResult result;
    for (const ClassLabel& label : labels) {
        auto ev_it = event_defaults.find(label);
        if (ev_it == event_defaults.end())
            throw ConfigError("no empirical event defaults for class '" + label + "'");

        const auto frames = frame_grid(space, label);
        auto [f_best, f_score] = detail::best_candidate(
            frames.size(), dev_folds, label,
            [&](std::size_t i) { return ClassConfig{frames[i], ev_it->second}; }, opts);

        const auto events = event_grid(space, label);
        auto [e_best, e_score] = detail::best_candidate(
            events.size(), dev_folds, label,
            [&](std::size_t i) { return ClassConfig{frames[f_best], events[i]}; }, opts);

        result.chosen[label] = ClassConfig{frames[f_best], events[e_best]};
        result.dev_f1[label] = e_score;
        if (opts.verbose)
            std::cerr << "forward-search " << label << ": stage1 F1 " << f_score
                      << ", stage2 F1 " << e_score << "\n";
    }
    return result;
}

// Stage 1: a plain threshold per class is pinned at the equal-precision-recall
// point of the dev-fold-averaged PR curve, then event params are searched.
// Stage 2: event params pinned at the stage-1 winners, frame params searched.
inline SearchResult backward_search(std::span<const Fold> dev_folds,
                                    const std::vector<ClassLabel>& labels,
                                    const SearchSpace& space, const SearchOptions& opts = {}) {
    const EventConfig event_defaults =
        empirical_event_defaults(*opts.stats, opts.grouping);

    // Average the per-fold PR curves pointwise before locating the crossing.
    std::map<ClassLabel, std::vector<std::vector<PrPoint>>> per_fold_curves;
    for (const Fold& fold : dev_folds) {
        auto curves = pr_curve(fold.recordings, labels, opts.pr_sweep, event_defaults,
                               opts.match_threshold);
        for (auto& [label, curve] : curves) per_fold_curves[label].push_back(std::move(curve));
    }

    SearchResult result;
    for (const ClassLabel& label : labels) {
        const double threshold =
            equal_pr_threshold(average_pr_curves(per_fold_curves.at(label)));
        const FrameParams pinned_frame{std::nullopt, threshold, threshold, std::nullopt};
        if (opts.verbose)
            std::cerr << "backward-search " << label << ": equal-PR threshold " << threshold
                      << "\n";

        const auto events = event_grid(space, label);
        auto [e_best, e_score] = detail::best_candidate(
            events.size(), dev_folds, label,
            [&](std::size_t i) { return ClassConfig{pinned_frame, events[i]}; }, opts);

        SearchSpace stage2_space = space;
        if (opts.backward_keep_threshold) {
            stage2_space.frame.at(label).on_threshold = {threshold};
            stage2_space.frame.at(label).off_threshold = {threshold};
        }
        const auto frames = frame_grid(stage2_space, label);
        auto [f_best, f_score] = detail::best_candidate(
            frames.size(), dev_folds, label,
            [&](std::size_t i) { return ClassConfig{frames[i], events[e_best]}; }, opts);

        result.chosen[label] = ClassConfig{frames[f_best], events[e_best]};
        result.dev_f1[label] = f_score;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Cross-validated evaluation

enum class Strategy { forward, backward };

inline const char* strategy_name(Strategy s) {
    return s == Strategy::forward ? "forward" : "backward";
}

struct TurnOutcome {
    std::string test_fold;
    std::vector<std::string> dev_folds;
    SearchResult search;
    std::map<ClassLabel, ClassMetrics> test_metrics;
};

struct CvOutcome {
    Strategy strategy = Strategy::forward;
    std::vector<TurnOutcome> per_turn;
    std::map<ClassLabel, ClassMetrics> final_per_class;  // fold-averaged over test folds
    double final_macro_f1 = 0.0;
    std::map<ClassLabel, std::size_t> frame_grid_sizes;
    std::map<ClassLabel, std::size_t> event_grid_sizes;
};

// Each fold serves as the held-out test fold exactly once; the search runs on
// the remaining dev folds and the chosen config is scored on the test fold.
// Final metrics average precision/recall over test folds with F1 recomputed.
inline CvOutcome cross_validated_evaluation(Strategy strategy, std::span<const Fold> folds,
                                            const std::vector<ClassLabel>& labels,
                                            const SearchSpace& space,
                                            const SearchOptions& opts = {},
                                            std::size_t min_folds = 3) {
    if (min_folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
    if (folds.size() < min_folds)
        throw ConfigError("cross-validation configured for >= " + std::to_string(min_folds) +
                          " folds, got " + std::to_string(folds.size()));

    CvOutcome outcome;
    outcome.strategy = strategy;
    for (const ClassLabel& label : labels) {
        outcome.frame_grid_sizes[label] = frame_grid(space, label).size();
        outcome.event_grid_sizes[label] = event_grid(space, label).size();
    }

    for (std::size_t t = 0; t < folds.size(); ++t) {
        TurnOutcome turn;
        turn.test_fold = folds[t].name;
        std::vector<Fold> dev;
        for (std::size_t i = 0; i < folds.size(); ++i) {
            if (i == t) continue;
            dev.push_back(folds[i]);
            turn.dev_folds.push_back(folds[i].name);
        }
        turn.search = strategy == Strategy::forward
                          ? forward_search(dev, labels, space, opts)
                          : backward_search(dev, labels, space, opts);
        turn.test_metrics = evaluate_fold(folds[t], labels, turn.search.chosen,
                                          opts.match_threshold, opts.pipeline);
        outcome.per_turn.push_back(std::move(turn));
    }

    for (const ClassLabel& label : labels) {
        std::vector<ClassMetrics> per_fold;
        for (const TurnOutcome& turn : outcome.per_turn)
            per_fold.push_back(turn.test_metrics.at(label));
        outcome.final_per_class[label] = fold_average_metrics(per_fold);
    }
    outcome.final_macro_f1 = macro_f1(outcome.final_per_class);
    return outcome;
}

} // namespace sedpost
