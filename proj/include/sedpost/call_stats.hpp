#pragma once

// Duration statistics of the seven annotated call types, shipped as fixtures.
// Used to derive empirical event-duration bounds per grouped class.

#include <map>
#include <string>
#include <vector>

namespace sedpost {

struct CallDurationStats {
    double min_s = 0.0;
    double max_s = 0.0;
    double avg_s = 0.0;
    long long count = 0;
};

using CallStatsTable = std::map<std::string, CallDurationStats>;

inline const std::vector<std::string>& raw_call_labels() {
    static const std::vector<std::string> labels = {
        "BmA", "BmB", "BmZ", "BmD", "BpD", "Bp20", "Bp20plus"};
    return labels;
}

inline const CallStatsTable& training_call_stats() {
    static const CallStatsTable table = {
        {"BmA", {2.12, 27.11, 7.19, 13785}},
        {"BmB", {3.14, 19.51, 7.83, 5433}},
        {"BmZ", {3.87, 28.07, 12.76, 1646}},
        {"BmD", {0.29, 6.78, 1.42, 22977}},
        {"BpD", {0.29, 2.70, 1.12, 2658}},
        {"Bp20", {0.48, 3.08, 1.52, 9104}},
        {"Bp20plus", {0.76, 2.91, 1.50, 3950}},
    };
    return table;
}

inline const CallStatsTable& development_call_stats() {
    static const CallStatsTable table = {
        {"BmA", {2.12, 36.62, 7.12, 6268}},
        {"BmB", {1.29, 18.10, 8.35, 2277}},
        {"BmZ", {5.15, 29.45, 12.64, 918}},
        {"BmD", {0.74, 7.36, 2.87, 2168}},
        {"BpD", {0.37, 2.58, 1.08, 688}},
        {"Bp20", {0.46, 2.83, 1.35, 2550}},
        {"Bp20plus", {0.64, 2.58, 1.43, 2758}},
    };
    return table;
}

} // namespace sedpost
