#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "sedpost/hypersearch.hpp"
#include "testutil.hpp"

using namespace sedpost;
using Catch::Approx;

namespace {

SynthSpec clean_spec(std::uint64_t seed) {
    SynthSpec spec;
    spec.seed = seed;
    spec.duration_s = 90.0;
    spec.frame_rate = 10.0;
    spec.classes["bmabz"] = SynthClassSpec{1.5, 3.0, 8.0, 0.95, 0.02, 0.0, 0.0};
    return spec;
}

SynthSpec noisy_spec(std::uint64_t seed) {
    SynthSpec spec;
    spec.seed = seed;
    spec.duration_s = 90.0;
    spec.frame_rate = 10.0;
    spec.classes["bmabz"] = SynthClassSpec{1.5, 3.0, 8.0, 0.8, 0.1, 0.25, 0.2};
    return spec;
}

// reduced grids for brute-force comparisons
SearchSpace tiny_space(const ClassLabel& label) {
    SearchSpace space;
    FrameGridSpec frame;
    frame.median_kernel = {std::nullopt, 11};
    frame.on_threshold = {0.3, 0.5, 0.7};
    frame.off_threshold = {0.3, 0.5};
    frame.hangover_kernel = {std::nullopt};
    space.frame[label] = frame;
    space.event[label] = EventGridSpec{{0.1, 0.5}, {0.3, 0.5}, {4.0, 8.0}};
    return space;
}

} // namespace

TEST_CASE("default frame grid has 720 candidates per class") {
    const SearchSpace space = default_search_space();
    for (const ClassLabel& label : default_labels()) {
        auto grid = frame_grid(space, label);
        REQUIRE(grid.size() == 720);
        for (const FrameParams& p : grid) REQUIRE(p.off_threshold <= p.on_threshold);
    }
}

TEST_CASE("default event grid has 441 candidates per class") {
    const SearchSpace space = default_search_space();
    for (const ClassLabel& label : default_labels())
        REQUIRE(event_grid(space, label).size() == 441);
}

TEST_CASE("grid enumeration order is stable across calls") {
    const SearchSpace space = default_search_space();
    auto a = frame_grid(space, "d");
    auto b = frame_grid(space, "d");
    REQUIRE(a == b);
    auto ea = event_grid(space, "bp");
    auto eb = event_grid(space, "bp");
    REQUIRE(ea == eb);
}

TEST_CASE("singleton lists produce exactly one candidate") {
    SearchSpace space;
    space.frame["x"] = FrameGridSpec{{std::nullopt}, {0.5}, {0.5}, {std::nullopt}};
    space.event["x"] = EventGridSpec{{0.5}, {1.0}, {5.0}};
    REQUIRE(frame_grid(space, "x").size() == 1);
    REQUIRE(event_grid(space, "x").size() == 1);
}

TEST_CASE("empirical event defaults bracket each grouped class") {
    EventConfig defaults = empirical_event_defaults();
    REQUIRE(defaults.at("bmabz").min_duration == 2.12);
    REQUIRE(defaults.at("bmabz").max_duration == 28.07);
    REQUIRE(defaults.at("d").min_duration == 0.29);
    REQUIRE(defaults.at("d").max_duration == 6.78);
    REQUIRE(defaults.at("bp").min_duration == 0.48);
    REQUIRE(defaults.at("bp").max_duration == 3.08);
    for (const auto& [label, p] : defaults) REQUIRE(p.min_gap == 0.5);
}

TEST_CASE("empirical defaults can draw from the development-set table") {
    EventConfig defaults = empirical_event_defaults(development_call_stats());
    REQUIRE(defaults.at("bmabz").min_duration == 1.29);
    REQUIRE(defaults.at("bmabz").max_duration == 36.62);
}

TEST_CASE("candidate evaluation is perfect on cleanly separable folds") {
    auto folds = testutil::synth_folds(clean_spec(211), {"f1", "f2"});
    PostProcessingConfig config{
        {"bmabz", ClassConfig{FrameParams{std::nullopt, 0.5, 0.5, std::nullopt},
                              EventParams{0.05, 0.5, 10.0}}}};
    auto f1 = evaluate_candidate(folds, {"bmabz"}, config);
    REQUIRE(f1.at("bmabz") == 1.0);
}

TEST_CASE("a config that detects nothing scores zero") {
    auto folds = testutil::synth_folds(clean_spec(223), {"f1", "f2"});
    ClassConfig config{FrameParams{std::nullopt, 0.97, 0.97, std::nullopt},
                       EventParams{0.05, 0.5, 10.0}};
    REQUIRE(evaluate_candidate_class(folds, "bmabz", config, SearchOptions{}) == 0.0);
}

TEST_CASE("candidate failures score zero instead of aborting") {
    auto folds = testutil::synth_folds(clean_spec(227), {"f1", "f2"});
    // median kernel far larger than the trace
    SynthSpec tiny = clean_spec(229);
    tiny.duration_s = 2.0;
    tiny.classes["bmabz"].events_per_min = 2.0;
    tiny.classes["bmabz"].min_duration = 0.5;
    tiny.classes["bmabz"].max_duration = 1.0;
    auto short_folds = testutil::synth_folds(tiny, {"f1", "f2"});
    ClassConfig config{FrameParams{55, 0.5, 0.5, std::nullopt}, EventParams{0.05, 0.1, 10.0}};
    REQUIRE(evaluate_candidate_class(short_folds, "bmabz", config, SearchOptions{}) == 0.0);
}

TEST_CASE("forward search equals an exhaustive two-stage brute force") {
    auto folds = testutil::synth_folds(noisy_spec(233), {"f1", "f2"});
    const SearchSpace space = tiny_space("bmabz");
    SearchOptions opts;

    SearchResult result = forward_search(folds, {"bmabz"}, space, opts);

    // independent exhaustive two-stage optimisation
    const EventConfig defaults = empirical_event_defaults();
    const auto frames = frame_grid(space, "bmabz");
    const auto events = event_grid(space, "bmabz");
    std::size_t best_f = 0;
    double best_f_score = -1.0;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const double s = evaluate_candidate_class(
            folds, "bmabz", ClassConfig{frames[i], defaults.at("bmabz")}, opts);
        if (s > best_f_score) {
            best_f_score = s;
            best_f = i;
        }
    }
    std::size_t best_e = 0;
    double best_e_score = -1.0;
    for (std::size_t i = 0; i < events.size(); ++i) {
        const double s = evaluate_candidate_class(
            folds, "bmabz", ClassConfig{frames[best_f], events[i]}, opts);
        if (s > best_e_score) {
            best_e_score = s;
            best_e = i;
        }
    }
    REQUIRE(result.chosen.at("bmabz").frame == frames[best_f]);
    REQUIRE(result.chosen.at("bmabz").event == events[best_e]);
    REQUIRE(result.dev_f1.at("bmabz") == best_e_score);
}

TEST_CASE("backward search equals an exhaustive two-stage brute force") {
    auto folds = testutil::synth_folds(noisy_spec(239), {"f1", "f2"});
    const SearchSpace space = tiny_space("bmabz");
    SearchOptions opts;

    SearchResult result = backward_search(folds, {"bmabz"}, space, opts);

    const EventConfig defaults = empirical_event_defaults();
    std::vector<std::vector<PrPoint>> curves;
    for (const Fold& fold : folds)
        curves.push_back(
            pr_curve(fold.recordings, {"bmabz"}, opts.pr_sweep, defaults, 0.3).at("bmabz"));
    const double thr = equal_pr_threshold(average_pr_curves(curves));
    const FrameParams pinned{std::nullopt, thr, thr, std::nullopt};

    const auto events = event_grid(space, "bmabz");
    std::size_t best_e = 0;
    double best_e_score = -1.0;
    for (std::size_t i = 0; i < events.size(); ++i) {
        const double s =
            evaluate_candidate_class(folds, "bmabz", ClassConfig{pinned, events[i]}, opts);
        if (s > best_e_score) {
            best_e_score = s;
            best_e = i;
        }
    }
    const auto frames = frame_grid(space, "bmabz");
    std::size_t best_f = 0;
    double best_f_score = -1.0;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const double s = evaluate_candidate_class(
            folds, "bmabz", ClassConfig{frames[i], events[best_e]}, opts);
        if (s > best_f_score) {
            best_f_score = s;
            best_f = i;
        }
    }
    REQUIRE(result.chosen.at("bmabz").frame == frames[best_f]);
    REQUIRE(result.chosen.at("bmabz").event == events[best_e]);
    REQUIRE(result.dev_f1.at("bmabz") == best_f_score);
}

TEST_CASE("forward search recovers a planted optimal threshold") {
    SynthSpec spec;
    spec.seed = 241;
    spec.duration_s = 120.0;
    spec.frame_rate = 10.0;
    // only a 0.5 threshold separates inside (0.55) from outside (0.45)
    spec.classes["bmabz"] = SynthClassSpec{1.5, 3.0, 8.0, 0.55, 0.45, 0.0, 0.0};
    auto folds = testutil::synth_folds(spec, {"f1", "f2"});

    SearchSpace space = default_search_space({"bmabz"});
    space.frame["bmabz"].median_kernel = {std::nullopt};
    space.frame["bmabz"].hangover_kernel = {std::nullopt};

    SearchResult result = forward_search(folds, {"bmabz"}, space, SearchOptions{});
    REQUIRE(result.chosen.at("bmabz").frame.on_threshold == 0.5);
    REQUIRE(result.chosen.at("bmabz").frame.off_threshold == 0.5);
}

TEST_CASE("searching classes jointly equals searching them independently") {
    SynthSpec spec;
    spec.seed = 251;
    spec.duration_s = 90.0;
    spec.frame_rate = 10.0;
    spec.classes["bmabz"] = SynthClassSpec{1.5, 3.0, 8.0, 0.8, 0.1, 0.25, 0.2};
    spec.classes["d"] = SynthClassSpec{4.0, 0.5, 2.0, 0.85, 0.08, 0.2, 0.15};
    auto folds = testutil::synth_folds(spec, {"f1", "f2"});

    SearchSpace space = tiny_space("bmabz");
    const SearchSpace d_space = tiny_space("d");
    space.frame["d"] = d_space.frame.at("d");
    space.event["d"] = d_space.event.at("d");

    SearchResult joint = forward_search(folds, {"bmabz", "d"}, space, SearchOptions{});
    SearchResult only_a = forward_search(folds, {"bmabz"}, space, SearchOptions{});
    SearchResult only_b = forward_search(folds, {"d"}, space, SearchOptions{});
    REQUIRE(joint.chosen.at("bmabz") == only_a.chosen.at("bmabz"));
    REQUIRE(joint.chosen.at("d") == only_b.chosen.at("d"));
    REQUIRE(joint.dev_f1.at("bmabz") == only_a.dev_f1.at("bmabz"));
    REQUIRE(joint.dev_f1.at("d") == only_b.dev_f1.at("d"));
}

TEST_CASE("search results are identical regardless of worker count") {
    auto folds = testutil::synth_folds(noisy_spec(257), {"f1", "f2"});
    const SearchSpace space = tiny_space("bmabz");
    SearchOptions serial;
    serial.jobs = 1;
    SearchOptions parallel;
    parallel.jobs = 8;
    SearchResult a = forward_search(folds, {"bmabz"}, space, serial);
    SearchResult b = forward_search(folds, {"bmabz"}, space, parallel);
    REQUIRE(a.chosen == b.chosen);
    REQUIRE(a.dev_f1 == b.dev_f1);
    SearchResult c = backward_search(folds, {"bmabz"}, space, serial);
    SearchResult d = backward_search(folds, {"bmabz"}, space, parallel);
    REQUIRE(c.chosen == d.chosen);
    REQUIRE(c.dev_f1 == d.dev_f1);
}

TEST_CASE("the chosen candidate dominates every other enumerated candidate") {
    auto folds = testutil::synth_folds(noisy_spec(263), {"f1", "f2"});
    const SearchSpace space = tiny_space("bmabz");
    SearchOptions opts;
    SearchResult result = forward_search(folds, {"bmabz"}, space, opts);

    const EventConfig defaults = empirical_event_defaults();
    for (const FrameParams& frame : frame_grid(space, "bmabz")) {
        const double s = evaluate_candidate_class(
            folds, "bmabz", ClassConfig{frame, defaults.at("bmabz")}, opts);
        REQUIRE(s <= result.dev_f1.at("bmabz") + 1e-12);
    }
}

TEST_CASE("backward stage 2 never scores below the stage-1 config it contains") {
    auto folds = testutil::synth_folds(noisy_spec(269), {"f1", "f2"});
    SearchSpace space = tiny_space("bmabz");
    space.frame["bmabz"].on_threshold = {0.3, 0.5, 0.7};
    space.frame["bmabz"].off_threshold = {0.3, 0.5, 0.7};
    SearchOptions opts;
    opts.pr_sweep = {0.3, 0.5, 0.7};  // stage-1 threshold lies inside the stage-2 grid

    SearchResult result = backward_search(folds, {"bmabz"}, space, opts);

    // recompute the pinned stage-1 threshold and evaluate that configuration
    // with the chosen event params; the stage-2 argmax cannot be worse
    const EventConfig defaults = empirical_event_defaults();
    std::vector<std::vector<PrPoint>> curves;
    for (const Fold& fold : folds)
        curves.push_back(
            pr_curve(fold.recordings, {"bmabz"}, opts.pr_sweep, defaults, 0.3).at("bmabz"));
    const double thr = equal_pr_threshold(average_pr_curves(curves));
    ClassConfig stage1{FrameParams{std::nullopt, thr, thr, std::nullopt},
                       result.chosen.at("bmabz").event};
    const double stage1_score = evaluate_candidate_class(folds, "bmabz", stage1, opts);
    REQUIRE(result.dev_f1.at("bmabz") >= stage1_score - 1e-12);
}

TEST_CASE("empty grids raise a configuration error") {
    auto folds = testutil::synth_folds(clean_spec(271), {"f1", "f2"});
    SearchSpace space = tiny_space("bmabz");
    space.frame["bmabz"].on_threshold = {};
    REQUIRE_THROWS_AS(forward_search(folds, {"bmabz"}, space, SearchOptions{}), ConfigError);
}

TEST_CASE("cross-validation rejects too few folds") {
    auto folds = testutil::synth_folds(clean_spec(277), {"f1", "f2"});
    const SearchSpace space = tiny_space("bmabz");
    REQUIRE_THROWS_AS(cross_validated_evaluation(Strategy::forward, folds, {"bmabz"}, space,
                                                 SearchOptions{}, 3),
                      ConfigError);
    REQUIRE_NOTHROW(cross_validated_evaluation(Strategy::forward, folds, {"bmabz"}, space,
                                               SearchOptions{}, 2));
}

TEST_CASE("identical folds give identical turns and a matching final report") {
    SynthSpec spec = noisy_spec(281);
    std::vector<Fold> folds;
    for (const char* name : {"f1", "f2", "f3"}) {
        auto [trace, truth] = synth_generate(spec);  // same seed for every fold
        Recording rec;
        rec.id = std::string(name) + "_r0";
        rec.trace = std::move(trace);
        rec.truth = std::move(truth);
        folds.push_back(Fold{name, {std::move(rec)}});
    }
    const SearchSpace space = tiny_space("bmabz");
    CvOutcome outcome = cross_validated_evaluation(Strategy::forward, folds, {"bmabz"}, space,
                                                   SearchOptions{});
    REQUIRE(outcome.per_turn.size() == 3);
    for (const TurnOutcome& turn : outcome.per_turn) {
        REQUIRE(turn.search.chosen == outcome.per_turn[0].search.chosen);
        REQUIRE(turn.test_metrics.at("bmabz").f1 ==
                outcome.per_turn[0].test_metrics.at("bmabz").f1);
    }
    // averaging identical folds reproduces the per-turn metrics
    REQUIRE(outcome.final_per_class.at("bmabz").f1 ==
            Approx(outcome.per_turn[0].test_metrics.at("bmabz").f1).epsilon(1e-12));
    REQUIRE(outcome.frame_grid_sizes.at("bmabz") == 10);
    REQUIRE(outcome.event_grid_sizes.at("bmabz") == 8);
}

TEST_CASE("each fold is the test fold exactly once") {
    auto folds = testutil::synth_folds(noisy_spec(283), {"f1", "f2", "f3"});
    const SearchSpace space = tiny_space("bmabz");
    CvOutcome outcome = cross_validated_evaluation(Strategy::backward, folds, {"bmabz"}, space,
                                                   SearchOptions{});
    std::set<std::string> test_folds;
    for (const TurnOutcome& turn : outcome.per_turn) {
        test_folds.insert(turn.test_fold);
        REQUIRE(turn.dev_folds.size() == 2);
        for (const auto& dev : turn.dev_folds) REQUIRE(dev != turn.test_fold);
    }
    REQUIRE(test_folds == std::set<std::string>{"f1", "f2", "f3"});
    REQUIRE(outcome.final_macro_f1 >= 0.0);
    REQUIRE(outcome.final_macro_f1 <= 1.0);
}

TEST_CASE("cross-validation equals hand-composed search plus evaluation") {
    auto folds = testutil::synth_folds(noisy_spec(293), {"f1", "f2", "f3"});
    const SearchSpace space = tiny_space("bmabz");
    SearchOptions opts;
    CvOutcome outcome =
        cross_validated_evaluation(Strategy::forward, folds, {"bmabz"}, space, opts);

    std::vector<ClassMetrics> test_metrics;
    for (std::size_t t = 0; t < folds.size(); ++t) {
        std::vector<Fold> dev;
        for (std::size_t i = 0; i < folds.size(); ++i)
            if (i != t) dev.push_back(folds[i]);
        SearchResult search = forward_search(dev, {"bmabz"}, space, opts);
        REQUIRE(search.chosen == outcome.per_turn[t].search.chosen);
        test_metrics.push_back(
            evaluate_fold_class(folds[t], "bmabz", search.chosen.at("bmabz"), 0.3));
    }
    ClassMetrics fin = fold_average_metrics(test_metrics);
    REQUIRE(outcome.final_per_class.at("bmabz").f1 == fin.f1);
    REQUIRE(outcome.final_per_class.at("bmabz").precision == fin.precision);
}
