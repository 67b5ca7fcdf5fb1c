#pragma once

// Command-line entry point. Exit codes: 0 success, 1 usage error, 2 data or
// validation error. All outputs are written atomically (temp file + rename)
// and identical inputs plus seed produce byte-identical files.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sedpost/sedpost.hpp"

namespace sedpost::cli {

namespace fs = std::filesystem;

namespace detail {

inline void write_file_atomic(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        out << content;
        if (!out) throw ConfigError("cannot write " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string(), 0, "cannot open file");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string(), 0, e.what());
    }
}

inline std::vector<RawAnnotation> events_to_annotations(
    const std::map<ClassLabel, EventSet>& events, const std::string& recording_id,
    const std::string& site_year) {
    std::vector<RawAnnotation> rows;
    for (const auto& [label, set] : events)
        for (const Event& e : set.events)
            rows.push_back(RawAnnotation{recording_id, e.t_start, e.t_end, 0.0, 0.0, label,
                                         site_year});
    std::stable_sort(rows.begin(), rows.end(),
                     [](const RawAnnotation& a, const RawAnnotation& b) {
                         return a.t_start < b.t_start;
                     });
    return rows;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Subcommand bodies

inline int run_postprocess(const std::string& trace_path, const std::string& params_path,
                           const std::string& out_path, const std::string& median_target) {
    FrameTrace trace = parse_trace(trace_path);
    PostProcessingConfig config = config_from_json(detail::read_json_file(params_path));
    FramePipelineOptions opts;
    if (median_target == "detections") opts.median_target = MedianTarget::detections;
    auto events = run_postprocess(trace, config, opts);

    const std::string recording_id = fs::path(trace_path).stem().string();
    auto rows = detail::events_to_annotations(events, recording_id, "");
    std::ostringstream out;
    write_annotations(out, rows);
    detail::write_file_atomic(out_path, out.str());
    return 0;
}

inline int run_evaluate(const std::string& detections_path, const std::string& annotations_path,
                        const std::string& out_path, double match_threshold) {
    const GroupingMap grouping = GroupingMap::defaults();
    auto gt_rows = parse_annotations(annotations_path, grouping);
    auto det_rows = parse_annotations(detections_path, grouping);
    const auto labels = grouping.grouped_labels();

    // detections are keyed by recording; folds come from the annotations
    std::map<std::string, std::vector<RawAnnotation>> det_by_rec;
    for (const auto& d : det_rows) det_by_rec[d.recording_id].push_back(d);
    std::map<std::string, std::map<std::string, std::vector<RawAnnotation>>> gt_by_fold;
    std::set<std::string> gt_recordings;
    for (const auto& a : gt_rows) {
        gt_by_fold[a.site_year][a.recording_id].push_back(a);
        gt_recordings.insert(a.recording_id);
    }
    for (const auto& [rec, rows] : det_by_rec)
        if (!gt_recordings.count(rec))
            std::cerr << "warning: detections for recording '" << rec
                      << "' have no annotations; skipped\n";

    EvalReport report;
    for (const auto& [fold_name, recs] : gt_by_fold) {
        report.fold_names.push_back(fold_name);
        std::map<ClassLabel, ClassMetrics> fold_counts;
        std::map<ClassLabel, std::pair<long long, double>> tp_iou;  // tp, iou sum
        std::map<ClassLabel, long long> fp, fn;
        for (const auto& [rec_id, rec_anns] : recs) {
            auto gt_events = group_labels(rec_anns, grouping);
            auto det_it = det_by_rec.find(rec_id);
            std::map<ClassLabel, EventSet> det_events;
            if (det_it != det_by_rec.end())
                det_events = group_labels(det_it->second, grouping);
            for (const ClassLabel& label : labels) {
                static const EventSet empty;
                const EventSet& gt = gt_events.count(label) ? gt_events[label] : empty;
                const EventSet& det = det_events.count(label) ? det_events[label] : empty;
                MatchResult m = match_events(gt, det, match_threshold);
                tp_iou[label].first += static_cast<long long>(m.pairs.size());
                for (const auto& p : m.pairs) tp_iou[label].second += p.iou;
                fp[label] += static_cast<long long>(m.unmatched_det.size());
                fn[label] += static_cast<long long>(m.unmatched_gt.size());
            }
        }
        for (const ClassLabel& label : labels)
            report.per_fold[label].push_back(metrics_from_counts(
                tp_iou[label].first, fp[label], fn[label], tp_iou[label].second));
    }
    for (const auto& [label, folds] : report.per_fold)
        report.averaged[label] = fold_average_metrics(folds);
    report.macro_f1 = macro_f1(report.averaged);

    detail::write_file_atomic(out_path, eval_report_to_json(report).dump(2) + "\n");
    return 0;
}

inline int run_pr_curve(const std::string& traces_dir, const std::string& annotations_path,
                        const std::string& out_path, double match_threshold,
                        const std::vector<std::string>& fold_names) {
    const GroupingMap grouping = GroupingMap::defaults();
    auto folds = load_dataset(traces_dir, annotations_path, grouping, fold_names);
    const auto labels = grouping.grouped_labels();
    const auto sweep = default_pr_sweep();
    const EventConfig event_defaults = empirical_event_defaults();

    std::map<ClassLabel, std::vector<std::vector<PrPoint>>> per_fold;
    for (const Fold& fold : folds) {
        auto curves = pr_curve(fold.recordings, labels, sweep, event_defaults, match_threshold);
        for (auto& [label, curve] : curves) per_fold[label].push_back(std::move(curve));
    }

    std::ostringstream out;
    out << "class\tthreshold\tprecision\trecall\n";
    char buf[96];
    for (const auto& [label, curves] : per_fold) {
        for (const PrPoint& p : average_pr_curves(curves)) {
            std::snprintf(buf, sizeof buf, "%s\t%.6f\t%.6f\t%.6f\n", label.c_str(),
                          p.threshold, p.precision, p.recall);
            out << buf;
        }
    }
    detail::write_file_atomic(out_path, out.str());
    return 0;
}

inline int run_search(const std::string& traces_dir, const std::string& annotations_path,
                      const std::string& out_path, const std::string& strategy_name,
                      unsigned jobs, double match_threshold, const std::string& space_path,
                      const std::vector<std::string>& fold_names, std::uint64_t seed,
                      std::size_t min_folds, bool backward_keep_threshold,
                      const std::string& stats_table) {
    const GroupingMap grouping = GroupingMap::defaults();
    auto folds = load_dataset(traces_dir, annotations_path, grouping, fold_names);
    const auto labels = grouping.grouped_labels();

    SearchSpace space = default_search_space(labels);
    if (!space_path.empty())
        space = search_space_from_json(detail::read_json_file(space_path), labels);

    SearchOptions opts;
    opts.match_threshold = match_threshold;
    opts.jobs = jobs;
    opts.backward_keep_threshold = backward_keep_threshold;
    opts.stats = stats_table == "dev" ? &development_call_stats() : &training_call_stats();
    opts.grouping = grouping;

    const Strategy strategy =
        strategy_name == "forward" ? Strategy::forward : Strategy::backward;
    const auto t0 = std::chrono::steady_clock::now();
    CvOutcome outcome =
        cross_validated_evaluation(strategy, folds, labels, space, opts, min_folds);
    const double wall_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    detail::write_file_atomic(out_path,
                              search_report_to_json(outcome, seed, match_threshold).dump(2) +
                                  "\n");
    std::cerr << "search finished in " << wall_s << " s (strategy " << strategy_name
              << ", jobs " << jobs << "), final macro F1 " << outcome.final_macro_f1 << "\n";
    return 0;
}

inline int run_synth(const std::string& spec_path, const std::string& out_dir,
                     std::vector<std::string> fold_names, unsigned recordings_per_fold,
                     std::uint64_t seed_override, bool seed_given) {
    SynthSpec spec = synth_spec_from_json(detail::read_json_file(spec_path));
    if (seed_given) spec.seed = seed_override;
    if (fold_names.empty()) fold_names = {"casey2017", "kerguelen2014", "kerguelen2015"};

    const fs::path out(out_dir);
    fs::create_directories(out / "traces");

    std::vector<RawAnnotation> all_rows;
    for (std::size_t f = 0; f < fold_names.size(); ++f) {
        for (unsigned r = 0; r < recordings_per_fold; ++r) {
            SynthSpec rec_spec = spec;
            rec_spec.seed = spec.seed + 1000003ULL * f + r;
            auto [trace, truth] = synth_generate(rec_spec);
            const std::string rec_id = fold_names[f] + "_r" + std::to_string(r);
            std::ostringstream ts;
            write_trace(ts, trace);
            detail::write_file_atomic(out / "traces" / (rec_id + ".csv"), ts.str());
            auto rows = detail::events_to_annotations(truth, rec_id, fold_names[f]);
            all_rows.insert(all_rows.end(), rows.begin(), rows.end());
        }
    }
    std::ostringstream as;
    write_annotations(as, all_rows);
    detail::write_file_atomic(out / "annotations.csv", as.str());
    std::cerr << "wrote " << all_rows.size() << " events over " << fold_names.size()
              << " folds to " << out_dir << "\n";
    return 0;
}

inline int run_bpn_demo(std::uint64_t seed, std::size_t heads, std::size_t frames,
                        std::size_t freq_bins, const std::string& weights_path,
                        const std::string& out_path) {
    bpn::BpnConfig config;
    config.heads = heads;
    bpn::BpnWeights weights =
        weights_path.empty()
            ? bpn::random_weights(config, seed)
            : bpn::weights_from_json(detail::read_json_file(weights_path), config);

    std::vector<bpn::Tensor> fmaps;
    for (std::size_t h = 0; h < config.heads; ++h)
        fmaps.push_back(
            bpn::random_feature_map(config.in_channels, frames, freq_bins, seed + h + 1));

    FrameTrace posteriors;
    posteriors.frame_rate = 10.0;
    posteriors.classes = default_labels();
    {
        std::mt19937_64 rng(seed + 997);
        std::uniform_real_distribution<double> dist(0.0, 1.0);
        for (std::size_t c = 0; c < posteriors.classes.size(); ++c) {
            std::vector<double> row(frames);
            for (double& p : row) p = dist(rng);
            posteriors.probs.push_back(std::move(row));
        }
    }

    FrameTrace gated = bpn::bpn_forward(fmaps, posteriors, config, weights);

    bool dominated = true;
    for (std::size_t c = 0; c < gated.probs.size(); ++c)
        for (std::size_t t = 0; t < frames; ++t)
            if (gated.probs[c][t] > posteriors.probs[c][t] + 1e-12) dominated = false;

    // dilated residual block impulse response at toy width
    const int block_kernel = 3;
    bpn::DilatedBlockWeights block;
    {
        std::mt19937_64 rng(seed + 7);
        std::uniform_real_distribution<double> dist(0.05, 0.3);
        for (int d : {2, 4, 8}) {
            bpn::DepthwiseLayer layer;
            layer.kernel = block_kernel;
            layer.dilation = d;
            layer.weight.resize(4 * block_kernel);
            for (double& w : layer.weight) w = dist(rng);
            layer.bn = bpn::BatchNorm::identity(4);
            block.layers.push_back(std::move(layer));
        }
    }
    const std::size_t block_len = 101;
    bpn::Tensor zero({4, block_len});
    bpn::Tensor impulse = zero;
    impulse(0, block_len / 2) = 1.0;
    bpn::Tensor base = bpn::dilated_depthwise_block(zero, block);
    bpn::Tensor response = bpn::dilated_depthwise_block(impulse, block);
    std::size_t lo = block_len, hi = 0;
    for (std::size_t t = 0; t < block_len; ++t)
        for (std::size_t c = 0; c < 4; ++c)
            if (std::abs(response(c, t) - base(c, t)) > 1e-12) {
                lo = std::min(lo, t);
                hi = std::max(hi, t);
            }
    const std::size_t measured_rf = lo <= hi ? hi - lo + 1 : 0;

    const auto masked_frames = gated.frames();
    nlohmann::json report = {
        {"schema", "1"},
        {"tool_version", kToolVersion},
        {"seed", seed},
        {"config",
         {{"heads", config.heads},
          {"in_channels", config.in_channels},
          {"proj_channels", config.proj_channels},
          {"roi_channels", config.roi_channels},
          {"rois", config.rois()},
          {"lstm_hidden", config.lstm_hidden},
          {"frames", frames},
          {"freq_bins", freq_bins}}},
        {"shapes",
         {{"feature_map", {config.in_channels, frames, freq_bins}},
          {"stacked", {config.heads, config.proj_channels, frames}},
          {"proposals", {config.heads, config.rois(), config.roi_channels, frames}},
          {"gated", {gated.classes.size(), masked_frames}}}},
        {"invariants",
         {{"time_axis_preserved", masked_frames == frames},
          {"gated_le_backbone", dominated},
          {"dilated_block",
           {{"kernel", block_kernel},
            {"receptive_field_expected", bpn::dilated_block_receptive_field(block_kernel)},
            {"receptive_field_measured", measured_rf}}}}}};

    const std::string text = report.dump(2) + "\n";
    if (out_path.empty())
        std::cout << text;
    else
        detail::write_file_atomic(out_path, text);
    return 0;
}

// ---------------------------------------------------------------------------
// Argument wiring

inline int run(std::vector<std::string> args) {
    CLI::App app{"post-processing, evaluation and hyperparameter search for "
                 "frame-level call detectors"};
    app.require_subcommand(1);

    // postprocess
    auto* pp = app.add_subcommand("postprocess", "turn a probability trace into events");
    std::string pp_trace, pp_params, pp_out;
    std::string pp_median_target = "probabilities";
    pp->add_option("--trace", pp_trace, "probability trace CSV")->required();
    pp->add_option("--params", pp_params, "post-processing config JSON")->required();
    pp->add_option("--out", pp_out, "output events CSV")->required();
    pp->add_option("--median-target", pp_median_target, "probabilities|detections")
        ->check(CLI::IsMember({"probabilities", "detections"}));

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "score detected events against annotations");
    std::string ev_det, ev_ann, ev_out;
    double ev_thr = kDefaultMatchThreshold;
    ev->add_option("--detections", ev_det, "detected events CSV")->required();
    ev->add_option("--annotations", ev_ann, "ground-truth annotations CSV")->required();
    ev->add_option("--out", ev_out, "output report JSON")->required();
    ev->add_option("--match-threshold", ev_thr, "minimum IoU for a match");

    // pr-curve
    auto* pr = app.add_subcommand("pr-curve", "emit fold-averaged precision-recall points");
    std::string pr_traces, pr_ann, pr_out;
    double pr_thr = kDefaultMatchThreshold;
    std::vector<std::string> pr_folds;
    pr->add_option("--traces", pr_traces, "directory of per-recording trace CSVs")->required();
    pr->add_option("--annotations", pr_ann, "annotations CSV")->required();
    pr->add_option("--out", pr_out, "output TSV")->required();
    pr->add_option("--match-threshold", pr_thr, "minimum IoU for a match");
    pr->add_option("--folds", pr_folds, "site-year fold names")->delimiter(',');

    // search
    auto* se = app.add_subcommand("search", "two-stage hyperparameter optimisation with "
                                            "turn-based cross-validation");
    std::string se_traces, se_ann, se_out, se_strategy, se_space, se_stats = "train";
    std::vector<std::string> se_folds;
    unsigned se_jobs = 0;
    double se_thr = kDefaultMatchThreshold;
    std::uint64_t se_seed = 0;
    std::size_t se_min_folds = 3;
    bool se_keep_threshold = false;
    se->add_option("--traces", se_traces, "directory of per-recording trace CSVs")->required();
    se->add_option("--annotations", se_ann, "annotations CSV")->required();
    se->add_option("--out", se_out, "output report JSON")->required();
    se->add_option("--strategy", se_strategy, "forward|backward")
        ->required()
        ->check(CLI::IsMember({"forward", "backward"}));
    se->add_option("--jobs", se_jobs, "worker count (0 = all cores); never affects results");
    se->add_option("--match-threshold", se_thr, "minimum IoU for a match");
    se->add_option("--space", se_space, "search-space override JSON");
    se->add_option("--folds", se_folds, "site-year fold names")->delimiter(',');
    se->add_option("--seed", se_seed, "seed recorded in the report");
    se->add_option("--min-folds", se_min_folds, "required fold count");
    se->add_flag("--backward-keep-threshold", se_keep_threshold,
                 "pin the stage-1 equal-PR threshold during backward stage 2");
    se->add_option("--stats", se_stats, "duration-stats table for event defaults")
        ->check(CLI::IsMember({"train", "dev"}));

    // synth
    auto* sy = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string sy_spec, sy_out;
    std::vector<std::string> sy_folds;
    unsigned sy_recs = 1;
    std::uint64_t sy_seed = 0;
    sy->add_option("--spec", sy_spec, "synthesis spec JSON")->required();
    sy->add_option("--out", sy_out, "output directory")->required();
    sy->add_option("--folds", sy_folds, "fold names to generate")->delimiter(',');
    sy->add_option("--recordings-per-fold", sy_recs, "recordings per fold");
    auto* sy_seed_opt = sy->add_option("--seed", sy_seed, "override the spec seed");

    // bpn-demo
    auto* bd = app.add_subcommand("bpn-demo", "seeded gating forward pass with an "
                                              "invariant report");
    std::uint64_t bd_seed = 0;
    std::size_t bd_heads = 3, bd_frames = 300, bd_freq = 5;
    std::string bd_weights, bd_out;
    bd->add_option("--seed", bd_seed, "weight/input seed");
    bd->add_option("--heads", bd_heads, "projection head count");
    bd->add_option("--frames", bd_frames, "time steps");
    bd->add_option("--freq-bins", bd_freq, "frequency bins per feature map");
    bd->add_option("--weights", bd_weights, "weight manifest JSON (default: random)");
    bd->add_option("--out", bd_out, "report path (default: stdout)");

    std::vector<const char*> argv;
    argv.push_back("sedpost");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (pp->parsed())
            return run_postprocess(pp_trace, pp_params, pp_out, pp_median_target);
        if (ev->parsed()) return run_evaluate(ev_det, ev_ann, ev_out, ev_thr);
        if (pr->parsed()) return run_pr_curve(pr_traces, pr_ann, pr_out, pr_thr, pr_folds);
        if (se->parsed())
            return run_search(se_traces, se_ann, se_out, se_strategy, se_jobs, se_thr,
                              se_space, se_folds, se_seed, se_min_folds, se_keep_threshold,
                              se_stats);
        if (sy->parsed())
            return run_synth(sy_spec, sy_out, sy_folds, sy_recs, sy_seed,
                             sy_seed_opt->count() > 0);
        if (bd->parsed())
            return run_bpn_demo(bd_seed, bd_heads, bd_frames, bd_freq, bd_weights, bd_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

} // namespace sedpost::cli
