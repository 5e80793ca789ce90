#pragma once

#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "phasezoo/zoo.hpp"

namespace phasezoo {

enum class PhaseLabel { I, II, III, IV_A, IV_B };

const char* to_string(PhaseLabel p);
PhaseLabel phase_from_string(const std::string& s);
constexpr int kNumPhases = 5;

// Per-model (or per-cell, seed-mean) annotation the classifier runs on.
struct MetricRecord {
    double train_loss = 0.0;
    double test_acc = 0.0;
    double generalization_gap = 0.0;
    double lambda_max = 0.0;
    double hessian_trace = 0.0;
    double mc = 0.0;
    double cka = 0.0;
    std::string cell;  // provenance, may be empty

    bool finite() const;
};

struct PhaseThresholds {
    double tau_loss = 0.5;
    double tau_mc = -0.05;  // nonpositive: the barrier cutoff
    double tau_cka = 0.8;
    double tau_trace = std::numeric_limits<double>::infinity();  // +inf disables the trace test

    // fit metadata, persisted alongside the cut points
    double fit_accuracy = std::numeric_limits<double>::quiet_NaN();
    bool low_confidence = false;
    bool provisional = false;

    void validate() const;
};

// Hierarchical decision tree:
//   train_loss > tau_loss ? (mc < tau_mc ? I : II)
//                         : (mc < tau_mc ? III
//                            : cka >= tau_cka && trace <= tau_trace ? IV_B : IV_A)
PhaseLabel classify(const MetricRecord& record, const PhaseThresholds& thresholds);

double classification_accuracy(const std::vector<MetricRecord>& records,
                               const std::vector<PhaseLabel>& labels, const PhaseThresholds& thresholds);

struct FitBounds {
    std::pair<double, double> loss{0.0, 10.0};
    std::pair<double, double> mc{-1.0, 0.0};
    std::pair<double, double> cka{0.0, 1.0};
    std::pair<double, double> trace{0.0, 1e4};

    // loss/trace brackets widened to the observed data range
    static FitBounds from_records(const std::vector<MetricRecord>& records);
};

// Thresholds optimized one at a time in tree order by bounded scalar search:
// a dense bracket of candidates, refined by shrinking onto the best plateau,
// ties broken toward the plateau midpoint. Needs >= 1 example per phase.
PhaseThresholds fit_thresholds(const std::vector<MetricRecord>& records,
                               const std::vector<PhaseLabel>& labels, const FitBounds& bounds);

// Quantile-based provisional thresholds for bootstrapping labels when no
// reference annotation exists; marked provisional.
PhaseThresholds bootstrap_thresholds(const std::vector<MetricRecord>& records);

struct PhaseGridResult {
    GridLabelTable table;
    std::vector<std::string> unlabeled;  // cells without complete metrics
};

// Seed-mean metrics per (width, temperature) cell, classified and laid out
// for the grid CSV exporter. Cells with missing metrics stay NA.
PhaseGridResult phase_grid(const ZooManifest& manifest, const PhaseThresholds& thresholds);

// Seed-mean MetricRecord per grid position, in row-major (width, temperature)
// order; entries without complete data are nullopt.
std::vector<std::optional<MetricRecord>> seed_mean_records(const ZooManifest& manifest);

}  // namespace phasezoo
