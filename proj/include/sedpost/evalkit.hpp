#pragma once

// Event-level evaluation: greedy IoU matching, precision/recall/F1 and mean
// matched IoU, precision-recall curves, and cross-fold averaging where the F1
// is recomputed from fold-averaged precision and recall.

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sedpost/core.hpp"
#include "sedpost/errors.hpp"
#include "sedpost/eventpost.hpp"
#include "sedpost/framepost.hpp"
#include "sedpost/pipeline.hpp"

namespace sedpost {

inline constexpr double kDefaultMatchThreshold = 0.3;

// One-to-one assignment between ground-truth and detected events.
struct MatchResult {
    struct Pair {
        std::size_t gt_index;
        std::size_t det_index;
        double iou;
    };
    std::vector<Pair> pairs;
    std::vector<std::size_t> unmatched_gt;
    std::vector<std::size_t> unmatched_det;
};

// Greedy matching by descending IoU with a minimum-overlap threshold.
// Ties break on the earlier ground-truth event, then the earlier detection.
inline MatchResult match_events(const EventSet& gt, const EventSet& det,
                                double match_threshold = kDefaultMatchThreshold) {
    if (!(match_threshold > 0.0 && match_threshold <= 1.0))
        throw InvalidParameter("match threshold must lie in (0,1]");

    MatchResult result;
    std::vector<MatchResult::Pair> candidates;
    for (std::size_t i = 0; i < gt.events.size(); ++i) {
        for (std::size_t j = 0; j < det.events.size(); ++j) {
            const double overlap = iou(gt.events[i], det.events[j]);
            if (overlap >= match_threshold) candidates.push_back({i, j, overlap});
        }
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const MatchResult::Pair& a, const MatchResult::Pair& b) {
                  if (a.iou != b.iou) return a.iou > b.iou;
                  if (a.gt_index != b.gt_index) return a.gt_index < b.gt_index;
                  return a.det_index < b.det_index;
              });

    std::vector<bool> gt_used(gt.events.size(), false);
    std::vector<bool> det_used(det.events.size(), false);
    for (const auto& c : candidates) {
        if (gt_used[c.gt_index] || det_used[c.det_index]) continue;
        gt_used[c.gt_index] = true;
        det_used[c.det_index] = true;
        result.pairs.push_back(c);
    }
    for (std::size_t i = 0; i < gt_used.size(); ++i)
        if (!gt_used[i]) result.unmatched_gt.push_back(i);
    for (std::size_t j = 0; j < det_used.size(); ++j)
        if (!det_used[j]) result.unmatched_det.push_back(j);
    return result;
}

// Counts plus derived rates for one class. Zero denominators yield 0, not NaN.
struct ClassMetrics {
    long long tp = 0;
    long long fp = 0;
    long long fn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double mean_iou = 0.0;
};

inline double f1_score(double precision, double recall) {
    const double denom = precision + recall;
    return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

inline ClassMetrics metrics_from_counts(long long tp, long long fp, long long fn,
                                        double iou_sum) {
    ClassMetrics m;
    m.tp = tp;
    m.fp = fp;
    m.fn = fn;
    m.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    m.recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = f1_score(m.precision, m.recall);
    m.mean_iou = tp > 0 ? iou_sum / static_cast<double>(tp) : 0.0;
    return m;
}

inline ClassMetrics pr_from_matching(const MatchResult& m) {
    double iou_sum = 0.0;
    for (const auto& p : m.pairs) iou_sum += p.iou;
    return metrics_from_counts(static_cast<long long>(m.pairs.size()),
                               static_cast<long long>(m.unmatched_det.size()),
                               static_cast<long long>(m.unmatched_gt.size()), iou_sum);
}

// Average precision and recall over test folds and recompute the F1 from the
// averages. This differs from averaging per-fold F1 scores.
inline ClassMetrics fold_average_metrics(const std::vector<ClassMetrics>& per_fold) {
    if (per_fold.empty()) throw InvalidParameter("fold_average_metrics: empty fold list");
    ClassMetrics avg;
    double iou_mean = 0.0;
    for (const ClassMetrics& m : per_fold) {
        avg.tp += m.tp;
        avg.fp += m.fp;
        avg.fn += m.fn;
        avg.precision += m.precision;
        avg.recall += m.recall;
        iou_mean += m.mean_iou;
    }
    const double n = static_cast<double>(per_fold.size());
    avg.precision /= n;
    avg.recall /= n;
    avg.mean_iou = iou_mean / n;
    avg.f1 = f1_score(avg.precision, avg.recall);
    return avg;
}

inline double macro_f1(const std::map<ClassLabel, ClassMetrics>& per_class) {
    if (per_class.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& [label, m] : per_class) sum += m.f1;
    return sum / static_cast<double>(per_class.size());
}

// ---------------------------------------------------------------------------
// Fold evaluation

inline ClassMetrics evaluate_fold_class(const Fold& fold, const ClassLabel& label,
                                        const ClassConfig& config, double match_threshold,
                                        FramePipelineOptions opts = {}) {
    long long tp = 0, fp = 0, fn = 0;
    double iou_sum = 0.0;
    for (const Recording& rec : fold.recordings) {
        EventSet det = run_postprocess_class(rec.trace, label, config, opts);
        MatchResult m = match_events(rec.truth_for(label), det, match_threshold);
        tp += static_cast<long long>(m.pairs.size());
        fp += static_cast<long long>(m.unmatched_det.size());
        fn += static_cast<long long>(m.unmatched_gt.size());
        for (const auto& p : m.pairs) iou_sum += p.iou;
    }
    return metrics_from_counts(tp, fp, fn, iou_sum);
}

inline std::map<ClassLabel, ClassMetrics> evaluate_fold(
    const Fold& fold, const std::vector<ClassLabel>& labels,
    const PostProcessingConfig& config, double match_threshold,
    FramePipelineOptions opts = {}) {
    std::map<ClassLabel, ClassMetrics> out;
    for (const ClassLabel& label : labels) {
        auto it = config.find(label);
        if (it == config.end()) throw ConfigError("no config for class '" + label + "'");
        out[label] = evaluate_fold_class(fold, label, it->second, match_threshold, opts);
    }
    return out;
}

// Per-fold metrics, fold-averaged metrics per class, and the macro F1.
struct EvalReport {
    std::vector<std::string> fold_names;
    std::map<ClassLabel, std::vector<ClassMetrics>> per_fold;  // parallel to fold_names
    std::map<ClassLabel, ClassMetrics> averaged;
    double macro_f1 = 0.0;
};

inline EvalReport evaluate_cross_folds(std::span<const Fold> folds,
                                       const std::vector<ClassLabel>& labels,
                                       const PostProcessingConfig& config,
                                       double match_threshold,
                                       FramePipelineOptions opts = {}) {
    EvalReport report;
    for (const Fold& fold : folds) {
        report.fold_names.push_back(fold.name);
        auto metrics = evaluate_fold(fold, labels, config, match_threshold, opts);
        for (const auto& [label, m] : metrics) report.per_fold[label].push_back(m);
    }
    for (const auto& [label, per_fold] : report.per_fold)
        report.averaged[label] = fold_average_metrics(per_fold);
    report.macro_f1 = macro_f1(report.averaged);
    return report;
}

// ---------------------------------------------------------------------------
// Precision-recall curves

struct PrPoint {
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

// 0.02 .. 0.98 in steps of 0.02; finer than the search grid so the equal-PR
// point is stable.
inline std::vector<double> default_pr_sweep() {
    std::vector<double> sweep;
    sweep.reserve(49);
    for (int i = 1; i <= 49; ++i) sweep.push_back(static_cast<double>(2 * i) / 100.0);
    return sweep;
}

// Sweep a plain threshold (on == off, frame filters disabled) over the pooled
// recordings, with event-level params held fixed.
inline std::map<ClassLabel, std::vector<PrPoint>> pr_curve(
    std::span<const Recording> recordings, const std::vector<ClassLabel>& labels,
    const std::vector<double>& sweep, const EventConfig& fixed_event_params,
    double match_threshold = kDefaultMatchThreshold) {
    if (sweep.empty()) throw InvalidParameter("pr_curve: empty threshold sweep");
    for (std::size_t i = 0; i < sweep.size(); ++i) {
        if (!(sweep[i] > 0.0 && sweep[i] < 1.0))
            throw InvalidParameter("pr_curve: thresholds must lie in (0,1)");
        if (i > 0 && !(sweep[i] > sweep[i - 1]))
            throw InvalidParameter("pr_curve: thresholds must be strictly increasing");
    }

    std::map<ClassLabel, std::vector<PrPoint>> curves;
    for (const ClassLabel& label : labels) {
        auto it = fixed_event_params.find(label);
        if (it == fixed_event_params.end())
            throw ConfigError("pr_curve: no event params for class '" + label + "'");
        std::vector<PrPoint>& curve = curves[label];
        curve.reserve(sweep.size());
        for (double threshold : sweep) {
            ClassConfig config;
            config.frame = FrameParams{std::nullopt, threshold, threshold, std::nullopt};
            config.event = it->second;
            long long tp = 0, fp = 0, fn = 0;
            for (const Recording& rec : recordings) {
                EventSet det = run_postprocess_class(rec.trace, label, config);
                MatchResult m = match_events(rec.truth_for(label), det, match_threshold);
                tp += static_cast<long long>(m.pairs.size());
                fp += static_cast<long long>(m.unmatched_det.size());
                fn += static_cast<long long>(m.unmatched_gt.size());
            }
            ClassMetrics metrics = metrics_from_counts(tp, fp, fn, 0.0);
            curve.push_back({threshold, metrics.precision, metrics.recall});
        }
    }
    return curves;
}

// Pointwise mean of per-fold curves sharing one threshold sweep.
inline std::vector<PrPoint> average_pr_curves(const std::vector<std::vector<PrPoint>>& folds) {
    if (folds.empty()) throw InvalidParameter("average_pr_curves: no curves");
    const std::size_t n_points = folds.front().size();
    for (const auto& curve : folds)
        if (curve.size() != n_points)
            throw InvalidParameter("average_pr_curves: curves differ in length");
    std::vector<PrPoint> avg(n_points);
    for (std::size_t i = 0; i < n_points; ++i) {
        avg[i].threshold = folds.front()[i].threshold;
        for (const auto& curve : folds) {
            avg[i].precision += curve[i].precision;
            avg[i].recall += curve[i].recall;
        }
        avg[i].precision /= static_cast<double>(folds.size());
        avg[i].recall /= static_cast<double>(folds.size());
    }
    return avg;
}

// Threshold whose averaged precision and recall are closest to equal; ties go
// to the lower threshold.
inline double equal_pr_threshold(const std::vector<PrPoint>& averaged_curve) {
    if (averaged_curve.empty()) throw InvalidParameter("equal_pr_threshold: empty curve");
    double best_threshold = averaged_curve.front().threshold;
    double best_gap = std::abs(averaged_curve.front().precision - averaged_curve.front().recall);
    for (const PrPoint& p : averaged_curve) {
        const double gap = std::abs(p.precision - p.recall);
        if (gap < best_gap) {
            best_gap = gap;
            best_threshold = p.threshold;
        }
    }
    return best_threshold;
}

} // namespace sedpost
