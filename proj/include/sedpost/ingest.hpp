#pragma once

// File ingestion and synthesis: annotation CSV parsing, call-type grouping,
// probability-trace CSV I/O, fold assembly, and a seeded synthetic dataset
// generator for desk-scale experiments.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sedpost/call_stats.hpp"
#include "sedpost/core.hpp"
#include "sedpost/errors.hpp"

namespace sedpost {

// ---------------------------------------------------------------------------
// Annotations

// Canonical annotation schema: one labelled time/frequency box per row.
// Frequency bounds are parsed and retained but unused by the time-only
// evaluation.
struct RawAnnotation {
    std::string recording_id;
    double t_start = 0.0;
    double t_end = 0.0;
    double f_min = 0.0;
    double f_max = 0.0;
    std::string raw_label;
    std::string site_year;
};

inline const std::string kAnnotationHeader =
    "recording_id,t_start,t_end,f_min,f_max,label,site_year";

// Maps the seven raw call types onto the grouped classes. Already-grouped
// labels pass through unchanged so detection files can be re-read.
class GroupingMap {
public:
    static GroupingMap defaults() {
        GroupingMap g;
        g.map_ = {{"BmA", "bmabz"}, {"BmB", "bmabz"}, {"BmZ", "bmabz"},
                  {"BmD", "d"},     {"BpD", "d"},
                  {"Bp20", "bp"},   {"Bp20plus", "bp"}};
        return g;
    }

    static GroupingMap from_entries(std::map<std::string, ClassLabel> entries) {
        GroupingMap g;
        g.map_ = std::move(entries);
        return g;
    }

    ClassLabel group(const std::string& raw) const {
        auto it = map_.find(raw);
        if (it != map_.end()) return it->second;
        for (const auto& [from, to] : map_)
            if (to == raw) return raw;  // already grouped
        throw ConfigError("unknown call label '" + raw + "'");
    }

    bool knows(const std::string& label) const {
        if (map_.count(label)) return true;
        for (const auto& [from, to] : map_)
            if (to == label) return true;
        return false;
    }

    std::vector<ClassLabel> grouped_labels() const {
        std::set<ClassLabel> seen;
        for (const auto& [from, to] : map_) seen.insert(to);
        return {seen.begin(), seen.end()};
    }

    const std::map<std::string, ClassLabel>& entries() const { return map_; }

private:
    std::map<std::string, ClassLabel> map_;
};

namespace detail {

inline std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

inline double parse_number(const std::string& text, const std::string& file,
                           std::size_t line, const char* what) {
    try {
        std::size_t pos = 0;
        double value = std::stod(text, &pos);
        if (pos != text.size()) throw std::invalid_argument("trailing characters");
        return value;
    } catch (const std::exception&) {
        throw ParseError(file, line, std::string("bad ") + what + " value '" + text + "'");
    }
}

} // namespace detail

inline std::vector<RawAnnotation> parse_annotations(const std::filesystem::path& path,
                                                    const GroupingMap& grouping =
                                                        GroupingMap::defaults()) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string(), 0, "cannot open file");
    const std::string file = path.string();

    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw ParseError(file, 1, "missing header row");
    ++lineno;
    if (line != kAnnotationHeader)
        throw ParseError(file, 1, "expected header '" + kAnnotationHeader + "'");

    std::vector<RawAnnotation> out;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = detail::split_csv_row(line);
        if (fields.size() != 7)
            throw ParseError(file, lineno, "expected 7 fields, got " +
                                               std::to_string(fields.size()));
        RawAnnotation ann;
        ann.recording_id = fields[0];
        ann.t_start = detail::parse_number(fields[1], file, lineno, "t_start");
        ann.t_end = detail::parse_number(fields[2], file, lineno, "t_end");
        ann.f_min = detail::parse_number(fields[3], file, lineno, "f_min");
        ann.f_max = detail::parse_number(fields[4], file, lineno, "f_max");
        ann.raw_label = fields[5];
        ann.site_year = fields[6];
        if (!(ann.t_end > ann.t_start))
            throw ParseError(file, lineno, "t_end must be > t_start");
        if (!grouping.knows(ann.raw_label))
            throw ParseError(file, lineno, "unknown call label '" + ann.raw_label + "'");
        out.push_back(std::move(ann));
    }
    return out;
}

inline void write_annotations(std::ostream& out, std::span<const RawAnnotation> anns) {
    out << kAnnotationHeader << "\n";
    char buf[64];
    for (const RawAnnotation& a : anns) {
        out << a.recording_id << ',';
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f", a.t_start, a.t_end, a.f_min,
                      a.f_max);
        out << buf << ',' << a.raw_label << ',' << a.site_year << "\n";
    }
}

// Replace raw labels with grouped classes and partition events by class.
// Events keep their original order of appearance, then sort by start time.
inline std::map<ClassLabel, EventSet> group_labels(std::span<const RawAnnotation> anns,
                                                   const GroupingMap& grouping) {
    std::map<ClassLabel, EventSet> out;
    std::set<std::string> sources;
    for (const RawAnnotation& a : anns) {
        const ClassLabel label = grouping.group(a.raw_label);
        out[label].events.push_back(Event{label, a.t_start, a.t_end});
        sources.insert(a.recording_id);
    }
    const std::string source = sources.size() == 1 ? *sources.begin() : std::string();
    for (auto& [label, set] : out) {
        std::stable_sort(set.events.begin(), set.events.end(),
                         [](const Event& a, const Event& b) { return a.t_start < b.t_start; });
        set.source_id = source;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Probability-trace files
//
//   # frame_rate=10.000000
//   time,bmabz,bp,d
//   0.000000,0.020000,0.020000,0.020000
//   ...

inline FrameTrace parse_trace(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string(), 0, "cannot open file");
    const std::string file = path.string();

    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw ParseError(file, 1, "empty trace file");
    ++lineno;
    const std::string prefix = "# frame_rate=";
    if (line.rfind(prefix, 0) != 0)
        throw ParseError(file, 1, "expected '" + prefix + "<value>' comment line");
    FrameTrace trace;
    trace.frame_rate =
        detail::parse_number(line.substr(prefix.size()), file, 1, "frame_rate");
    if (!(trace.frame_rate > 0.0)) throw ParseError(file, 1, "frame_rate must be positive");

    if (!std::getline(in, line)) throw ParseError(file, 2, "missing column header");
    ++lineno;
    auto header = detail::split_csv_row(line);
    if (header.size() < 2 || header[0] != "time")
        throw ParseError(file, 2, "expected header 'time,<class...>'");
    trace.classes.assign(header.begin() + 1, header.end());
    trace.probs.assign(trace.classes.size(), {});

    bool first_row = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = detail::split_csv_row(line);
        if (fields.size() != header.size())
            throw ParseError(file, lineno, "ragged row: expected " +
                                               std::to_string(header.size()) + " fields, got " +
                                               std::to_string(fields.size()));
        const double t = detail::parse_number(fields[0], file, lineno, "time");
        if (first_row) {
            trace.start_time = t;
            first_row = false;
        }
        for (std::size_t c = 0; c < trace.classes.size(); ++c) {
            const double p = detail::parse_number(fields[c + 1], file, lineno, "probability");
            if (!(p >= 0.0 && p <= 1.0))
                throw ParseError(file, lineno,
                                 "probability " + fields[c + 1] + " outside [0,1]");
            trace.probs[c].push_back(p);
        }
    }
    trace.validate();
    return trace;
}

inline void write_trace(std::ostream& out, const FrameTrace& trace) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", trace.frame_rate);
    out << "# frame_rate=" << buf << "\n";
    out << "time";
    for (const ClassLabel& label : trace.classes) out << ',' << label;
    out << "\n";
    for (std::size_t t = 0; t < trace.frames(); ++t) {
        std::snprintf(buf, sizeof buf, "%.6f",
                      frame_to_time(t, trace.frame_rate, trace.start_time));
        out << buf;
        for (std::size_t c = 0; c < trace.classes.size(); ++c) {
            std::snprintf(buf, sizeof buf, "%.6f", trace.probs[c][t]);
            out << ',' << buf;
        }
        out << "\n";
    }
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthClassSpec {
    double events_per_min = 2.0;
    double min_duration = 1.0;  // uniform duration bounds, seconds
    double max_duration = 4.0;
    double p_inside = 0.95;
    double p_outside = 0.02;
    double fragmentation = 0.0;  // chance a within-event frame drops to p_outside
    double jitter = 0.0;         // additive uniform noise amplitude
};

struct SynthSpec {
    std::uint64_t seed = 0;
    double duration_s = 60.0;
    double frame_rate = 10.0;
    std::map<ClassLabel, SynthClassSpec> classes;

    void validate() const {
        if (!(duration_s > 0.0) || !(frame_rate > 0.0))
            throw InvalidParameter("synth duration and frame rate must be positive");
        for (const auto& [label, c] : classes) {
            if (!(c.events_per_min > 0.0) || !(c.min_duration > 0.0) ||
                !(c.min_duration <= c.max_duration))
                throw InvalidParameter("synth rates/durations invalid for class '" + label + "'");
            for (double p : {c.p_inside, c.p_outside, c.fragmentation, c.jitter}) {
                if (!(p >= 0.0 && p <= 1.0))
                    throw InvalidParameter("synth probabilities must lie in [0,1]");
            }
            const double occupancy =
                c.events_per_min / 60.0 * (c.min_duration + c.max_duration) / 2.0;
            if (occupancy > 0.9)
                throw InvalidParameter("synth spec infeasible: expected occupancy " +
                                       std::to_string(occupancy) + " > 0.9 for class '" +
                                       label + "'");
        }
    }
};

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    SynthSpec spec;
    spec.seed = j.value("seed", std::uint64_t{0});
    spec.duration_s = j.value("duration_s", 60.0);
    spec.frame_rate = j.value("frame_rate", 10.0);
    if (!j.contains("classes") || !j["classes"].is_object())
        throw ConfigError("synth spec needs a 'classes' object");
    for (const auto& [label, cj] : j["classes"].items()) {
        SynthClassSpec c;
        c.events_per_min = cj.value("events_per_min", c.events_per_min);
        c.min_duration = cj.value("min_duration", c.min_duration);
        c.max_duration = cj.value("max_duration", c.max_duration);
        c.p_inside = cj.value("p_inside", c.p_inside);
        c.p_outside = cj.value("p_outside", c.p_outside);
        c.fragmentation = cj.value("fragmentation", c.fragmentation);
        c.jitter = cj.value("jitter", c.jitter);
        spec.classes[label] = c;
    }
    spec.validate();
    return spec;
}

inline nlohmann::json synth_spec_to_json(const SynthSpec& spec) {
    nlohmann::json j;
    j["seed"] = spec.seed;
    j["duration_s"] = spec.duration_s;
    j["frame_rate"] = spec.frame_rate;
    j["classes"] = nlohmann::json::object();
    for (const auto& [label, c] : spec.classes) {
        j["classes"][label] = {
            {"events_per_min", c.events_per_min}, {"min_duration", c.min_duration},
            {"max_duration", c.max_duration},     {"p_inside", c.p_inside},
            {"p_outside", c.p_outside},           {"fragmentation", c.fragmentation},
            {"jitter", c.jitter}};
    }
    return j;
}

// Ground-truth events are snapped to frame boundaries so a clean threshold
// recovers them exactly. Event placement uses exponential gaps tuned so the
// expected occupancy matches events_per_min * mean_duration.
inline std::pair<FrameTrace, std::map<ClassLabel, EventSet>> synth_generate(
    const SynthSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    const std::size_t n_frames =
        static_cast<std::size_t>(std::llround(spec.duration_s * spec.frame_rate));
    const double hop = 1.0 / spec.frame_rate;

    FrameTrace trace;
    trace.frame_rate = spec.frame_rate;
    trace.start_time = 0.0;
    std::map<ClassLabel, EventSet> truth;

    for (const auto& [label, cls] : spec.classes) {
        trace.classes.push_back(label);
        std::vector<double> row(n_frames, cls.p_outside);

        const double mean_dur = (cls.min_duration + cls.max_duration) / 2.0;
        const double mean_gap = std::max(hop, 60.0 / cls.events_per_min - mean_dur);
        std::exponential_distribution<double> gap_dist(1.0 / mean_gap);
        std::uniform_real_distribution<double> dur_dist(cls.min_duration, cls.max_duration);
        std::uniform_real_distribution<double> unit(0.0, 1.0);

        EventSet& events = truth[label];
        std::size_t cursor_frame = 0;  // first frame an event may occupy
        bool first = true;
        for (;;) {
            const auto gap_frames = static_cast<std::size_t>(
                std::llround(gap_dist(rng) * spec.frame_rate));
            const auto dur_frames = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::llround(dur_dist(rng) * spec.frame_rate)));
            // keep at least one empty frame between events so runs stay distinct
            const std::size_t start_frame =
                cursor_frame + (first ? gap_frames : std::max<std::size_t>(1, gap_frames));
            const std::size_t end_frame = start_frame + dur_frames;
            if (end_frame > n_frames) break;
            events.events.push_back(
                Event{label, frame_to_time(start_frame, spec.frame_rate, 0.0),
                      frame_to_time(end_frame, spec.frame_rate, 0.0)});
            for (std::size_t t = start_frame; t < end_frame; ++t) row[t] = cls.p_inside;
            cursor_frame = end_frame;
            first = false;
        }

        if (cls.fragmentation > 0.0) {
            for (const Event& e : events.events) {
                const auto first = static_cast<std::size_t>(
                    std::llround(e.t_start * spec.frame_rate));
                const auto last = static_cast<std::size_t>(
                    std::llround(e.t_end * spec.frame_rate));
                for (std::size_t t = first; t < last; ++t)
                    if (unit(rng) < cls.fragmentation) row[t] = cls.p_outside;
            }
        }
        if (cls.jitter > 0.0) {
            std::uniform_real_distribution<double> noise(-cls.jitter, cls.jitter);
            for (double& p : row) p = std::clamp(p + noise(rng), 0.0, 1.0);
        }
        trace.probs.push_back(std::move(row));
    }
    return {std::move(trace), std::move(truth)};
}

// ---------------------------------------------------------------------------
// Dataset assembly

// Builds folds from an annotation CSV plus a directory of per-recording trace
// files named <recording_id>.csv. Folds are keyed by site_year; `fold_names`
// restricts and orders them, defaulting to all site-years sorted.
inline std::vector<Fold> load_dataset(const std::filesystem::path& traces_dir,
                                      const std::filesystem::path& annotations_csv,
                                      const GroupingMap& grouping = GroupingMap::defaults(),
                                      std::vector<std::string> fold_names = {}) {
    auto anns = parse_annotations(annotations_csv, grouping);

    std::map<std::string, std::map<std::string, std::vector<RawAnnotation>>> by_fold;
    for (const RawAnnotation& a : anns) by_fold[a.site_year][a.recording_id].push_back(a);

    if (fold_names.empty())
        for (const auto& [site_year, recs] : by_fold) fold_names.push_back(site_year);

    std::vector<Fold> folds;
    for (const std::string& name : fold_names) {
        auto it = by_fold.find(name);
        if (it == by_fold.end())
            throw ConfigError("fold '" + name + "' has no annotations");
        Fold fold;
        fold.name = name;
        for (const auto& [rec_id, rec_anns] : it->second) {
            Recording rec;
            rec.id = rec_id;
            const auto trace_path = traces_dir / (rec_id + ".csv");
            if (!std::filesystem::exists(trace_path))
                throw ConfigError("missing trace file " + trace_path.string());
            rec.trace = parse_trace(trace_path);
            rec.truth = group_labels(rec_anns, grouping);
            for (auto& [label, set] : rec.truth) set.source_id = rec_id;
            fold.recordings.push_back(std::move(rec));
        }
        folds.push_back(std::move(fold));
    }
    return folds;
}

} // namespace sedpost
