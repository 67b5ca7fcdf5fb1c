#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "sedpost/cli.hpp"

using namespace sedpost;

namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    fs::path dir = fs::temp_directory_path() /
                   ("sedpost_cli_" + tag + "_" + std::to_string(rng()));
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

std::string synth_spec_text() {
    return R"({
      "seed": 7,
      "duration_s": 60.0,
      "frame_rate": 10.0,
      "classes": {
        "bmabz": {"events_per_min": 2.0, "min_duration": 2.5, "max_duration": 8.0,
                   "p_inside": 0.85, "p_outside": 0.08, "fragmentation": 0.2, "jitter": 0.1},
        "d":     {"events_per_min": 5.0, "min_duration": 0.5, "max_duration": 2.0,
                   "p_inside": 0.85, "p_outside": 0.08, "fragmentation": 0.2, "jitter": 0.1},
        "bp":    {"events_per_min": 4.0, "min_duration": 0.6, "max_duration": 2.5,
                   "p_inside": 0.85, "p_outside": 0.08, "fragmentation": 0.2, "jitter": 0.1}
      }
    })";
}

// a deliberately small space so CLI search tests stay quick
std::string tiny_space_text() {
    return R"({
      "frame": {
        "bmabz": {"median_kernel": [null, 11], "on_threshold": [0.4, 0.6],
                   "off_threshold": [0.4], "hangover_kernel": [null]},
        "d":     {"median_kernel": [null], "on_threshold": [0.4, 0.6],
                   "off_threshold": [0.4], "hangover_kernel": [null, 11]},
        "bp":    {"median_kernel": [null], "on_threshold": [0.4, 0.6],
                   "off_threshold": [0.4], "hangover_kernel": [null]}
      },
      "event": {
        "bmabz": {"min_gap": [0.3, 0.6], "min_duration": [2.0], "max_duration": [10.0]},
        "d":     {"min_gap": [0.3, 0.6], "min_duration": [0.3], "max_duration": [3.0]},
        "bp":    {"min_gap": [0.3, 0.6], "min_duration": [0.4], "max_duration": [3.5]}
      }
    })";
}

} // namespace

TEST_CASE("synth writes traces and annotations for each fold") {
    auto dir = temp_dir("synth");
    write_file(dir / "spec.json", synth_spec_text());
    const int rc = cli::run({"synth", "--spec", (dir / "spec.json").string(), "--out",
                             (dir / "data").string()});
    REQUIRE(rc == 0);
    REQUIRE(fs::exists(dir / "data" / "annotations.csv"));
    REQUIRE(fs::exists(dir / "data" / "traces" / "casey2017_r0.csv"));
    REQUIRE(fs::exists(dir / "data" / "traces" / "kerguelen2014_r0.csv"));
    REQUIRE(fs::exists(dir / "data" / "traces" / "kerguelen2015_r0.csv"));
    fs::remove_all(dir);
}

TEST_CASE("postprocess with no filters equals plain thresholding") {
    auto dir = temp_dir("postprocess");

    FrameTrace trace;
    trace.frame_rate = 10.0;
    trace.start_time = 0.0;
    trace.classes = {"bmabz"};
    trace.probs = {{0.1, 0.9, 0.9, 0.9, 0.2, 0.1, 0.8, 0.8, 0.1, 0.1}};
    std::ostringstream ts;
    write_trace(ts, trace);
    write_file(dir / "rec1.csv", ts.str());

    nlohmann::json params = {
        {"bmabz",
         {{"frame",
           {{"median_kernel", nullptr},
            {"on_threshold", 0.5},
            {"off_threshold", 0.5},
            {"hangover_kernel", nullptr}}},
          {"event",
           {{"min_gap", 0.01}, {"min_duration", 0.05}, {"max_duration", 100.0}}}}}};
    write_file(dir / "params.json", params.dump());

    const int rc = cli::run({"postprocess", "--trace", (dir / "rec1.csv").string(),
                             "--params", (dir / "params.json").string(), "--out",
                             (dir / "events.csv").string()});
    REQUIRE(rc == 0);

    auto events = parse_annotations(dir / "events.csv");
    REQUIRE(events.size() == 2);
    REQUIRE(events[0].t_start == 0.1);
    REQUIRE(events[0].t_end == 0.4);
    REQUIRE(events[1].t_start == 0.6);
    REQUIRE(events[1].t_end == 0.8);
    REQUIRE(events[0].recording_id == "rec1");
    fs::remove_all(dir);
}

TEST_CASE("evaluate scores identical files perfectly") {
    auto dir = temp_dir("evaluate");
    const std::string anns =
        kAnnotationHeader + "\n"
        "rec1,1.0,4.0,0.0,0.0,bmabz,casey2017\n"
        "rec1,6.0,7.0,0.0,0.0,d,casey2017\n"
        "rec1,9.0,10.0,0.0,0.0,bp,casey2017\n"
        "rec2,0.5,5.0,0.0,0.0,bmabz,kerguelen2014\n"
        "rec2,7.0,7.8,0.0,0.0,d,kerguelen2014\n"
        "rec2,2.0,3.5,0.0,0.0,bp,kerguelen2014\n";
    write_file(dir / "gt.csv", anns);
    write_file(dir / "det.csv", anns);
    const int rc = cli::run({"evaluate", "--detections", (dir / "det.csv").string(),
                             "--annotations", (dir / "gt.csv").string(), "--out",
                             (dir / "report.json").string()});
    REQUIRE(rc == 0);
    auto report = nlohmann::json::parse(read_file(dir / "report.json"));
    REQUIRE(report["schema"] == "1");
    REQUIRE(report["averaged"]["bmabz"]["f1"] == 1.0);
    REQUIRE(report["averaged"]["d"]["recall"] == 1.0);
    REQUIRE(report["averaged"]["bp"]["precision"] == 1.0);
    REQUIRE(report["macro_f1"] == 1.0);
    fs::remove_all(dir);
}

TEST_CASE("pr-curve emits one row per class and threshold") {
    auto dir = temp_dir("prcurve");
    write_file(dir / "spec.json", synth_spec_text());
    REQUIRE(cli::run({"synth", "--spec", (dir / "spec.json").string(), "--out",
                      (dir / "data").string()}) == 0);
    const int rc = cli::run({"pr-curve", "--traces", (dir / "data" / "traces").string(),
                             "--annotations", (dir / "data" / "annotations.csv").string(),
                             "--out", (dir / "curve.tsv").string()});
    REQUIRE(rc == 0);
    std::istringstream tsv(read_file(dir / "curve.tsv"));
    std::string line;
    std::size_t rows = 0;
    REQUIRE(std::getline(tsv, line));
    REQUIRE(line == "class\tthreshold\tprecision\trecall");
    while (std::getline(tsv, line))
        if (!line.empty()) ++rows;
    REQUIRE(rows == 3 * 49);
    fs::remove_all(dir);
}

TEST_CASE("search writes a structured report") {
    auto dir = temp_dir("search");
    write_file(dir / "spec.json", synth_spec_text());
    write_file(dir / "space.json", tiny_space_text());
    REQUIRE(cli::run({"synth", "--spec", (dir / "spec.json").string(), "--out",
                      (dir / "data").string()}) == 0);
    const int rc = cli::run({"search", "--traces", (dir / "data" / "traces").string(),
                             "--annotations", (dir / "data" / "annotations.csv").string(),
                             "--out", (dir / "report.json").string(), "--strategy",
                             "backward", "--space", (dir / "space.json").string(),
                             "--seed", "5", "--jobs", "2"});
    REQUIRE(rc == 0);
    auto report = nlohmann::json::parse(read_file(dir / "report.json"));
    REQUIRE(report["schema"] == "1");
    REQUIRE(report["strategy"] == "backward");
    REQUIRE(report["seed"] == 5);
    REQUIRE(report["turns"].size() == 3);
    for (const std::string label : {"bmabz", "d", "bp"}) {
        REQUIRE(report["turns"][0]["chosen"].contains(label));
        REQUIRE(report["grid_sizes"]["frame"].contains(label));
    }
    const double macro = report["final"]["macro_f1"].get<double>();
    REQUIRE(macro >= 0.0);
    REQUIRE(macro <= 1.0);
    fs::remove_all(dir);
}

TEST_CASE("bpn-demo reports shapes and invariants") {
    auto dir = temp_dir("bpndemo");
    const int rc = cli::run({"bpn-demo", "--seed", "3", "--heads", "2", "--frames", "40",
                             "--freq-bins", "3", "--out", (dir / "demo.json").string()});
    REQUIRE(rc == 0);
    auto report = nlohmann::json::parse(read_file(dir / "demo.json"));
    REQUIRE(report["invariants"]["time_axis_preserved"] == true);
    REQUIRE(report["invariants"]["gated_le_backbone"] == true);
    REQUIRE(report["config"]["rois"] == 8);
    REQUIRE(report["invariants"]["dilated_block"]["receptive_field_measured"] ==
            report["invariants"]["dilated_block"]["receptive_field_expected"]);
    fs::remove_all(dir);
}

TEST_CASE("usage errors exit with code 1") {
    REQUIRE(cli::run({"no-such-command"}) == 1);
    REQUIRE(cli::run({"search", "--traces", "x"}) == 1);  // missing required flags
    REQUIRE(cli::run({}) == 1);
}

TEST_CASE("data errors exit with code 2") {
    auto dir = temp_dir("dataerr");
    REQUIRE(cli::run({"postprocess", "--trace", (dir / "missing.csv").string(), "--params",
                      (dir / "missing.json").string(), "--out",
                      (dir / "out.csv").string()}) == 2);
    write_file(dir / "bad.csv", "not,a,trace\n");
    REQUIRE(cli::run({"postprocess", "--trace", (dir / "bad.csv").string(), "--params",
                      (dir / "missing.json").string(), "--out",
                      (dir / "out.csv").string()}) == 2);
    fs::remove_all(dir);
}

TEST_CASE("help exits successfully") {
    REQUIRE(cli::run({"--help"}) == 0);
}
