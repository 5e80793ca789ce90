#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "phasezoo/phase.hpp"
#include "phasezoo/rng.hpp"
#include "phasezoo/zoo.hpp"

namespace phasezoo {

enum class ActionKind { increase_width, increase_batch, decrease_batch, none };
const char* to_string(ActionKind k);

// One tuning move on the grid: a direction plus 1..5 index steps along the
// corresponding axis. The batch actions move along the temperature axis, so
// increase_batch always means "lower the temperature" regardless of whether
// the axis is realized by batch size or learning rate.
struct TuningAction {
    ActionKind kind = ActionKind::none;
    int magnitude = 0;  // >= 1 unless kind == none
};

// kind uniform over the three moves, magnitude uniform over 1..5.
TuningAction random_action(Rng& rng);

// Deterministic direction per phase (I, III widen; II cool down; IV-A heat
// up; IV-B hold), random magnitude for a fair comparison.
TuningAction phase_action(PhaseLabel phase, Rng& rng);

// Index-step move clamped at the grid boundary; the seed is preserved.
GridCell apply_action(const GridCell& cell, const TuningAction& action, const GridSpec& grid);

enum class HpoPolicy { random, phase_aware };
const char* to_string(HpoPolicy p);

struct HpoTrial {
    int start_width = 0;
    std::string start_temp;
    TuningAction action;
    int end_width = 0;
    std::string end_temp;
    double gain = 0.0;  // delta seed-mean test accuracy
};

struct HpoReport {
    HpoPolicy policy = HpoPolicy::random;
    double mean_gain = 0.0;
    double std_gain = 0.0;  // sample std over counted trials
    int trials = 0;         // drawn trials, including skipped ones
    int skipped = 0;        // start cells without usable accuracy/phase data
    bool paired = true;
    bool exhaustive = false;
    std::vector<HpoTrial> per_trial;
};

struct HpoOptions {
    int trials = 50;
    std::uint64_t seed = 0;
    bool exhaustive = false;  // iterate every start cell once instead of sampling
};

// Paired experiment: both policies act from the same start cell with
// per-trial rng substreams; gains are read from the seed-mean accuracy grid,
// no retraining.
std::pair<HpoReport, HpoReport> run_hpo_on_tables(const GridSpec& grid, const GridTable& accuracy,
                                                  const std::vector<std::optional<MetricRecord>>& records,
                                                  const PhaseThresholds& thresholds,
                                                  const HpoOptions& opts);

std::pair<HpoReport, HpoReport> run_hpo_experiment(const ZooManifest& manifest,
                                                   const PhaseThresholds& thresholds,
                                                   const HpoOptions& opts = {});

}  // namespace phasezoo
