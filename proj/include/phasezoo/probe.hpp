#pragma once

#include <string>
#include <vector>

#include "phasezoo/zoo.hpp"

namespace phasezoo {

// Per-layer weight statistics in a fixed order: for every tensor (weights,
// then biases, per layer) mean, std, min, q20, q40, q60, q80, max.
struct WeightFeatures {
    std::vector<double> values;
    std::vector<std::string> feature_names;

    std::size_t size() const { return values.size(); }
};

WeightFeatures weight_features(const ParameterVector& params);

// Linear-interpolated percentile of a sorted sample, p in [0,1].
double percentile(const std::vector<double>& sorted_values, double p);

struct RidgeModel {
    std::vector<double> weights;       // original feature space
    double intercept = 0.0;
    std::vector<std::size_t> dropped;  // zero-variance columns, excluded from the fit
};

// min_w ||y - Xw - b||^2 + lambda ||w||^2 with an unpenalized intercept,
// solved by normal equations on standardized features.
RidgeModel fit_ridge(const Matrix& features, const std::vector<double>& targets, double lambda);

double ridge_predict(const RidgeModel& model, const double* row, std::size_t dim);

// 1 - SS_res / SS_tot; negative when the predictor is worse than the mean.
double r2_score(const std::vector<double>& pred, const std::vector<double>& truth);

enum class ProbeTarget { test_acc, ggap, cka, log_hessian_trace, mc };
const char* to_string(ProbeTarget t);
ProbeTarget probe_target_from_string(const std::string& s);

struct ProbeReport {
    ProbeTarget target = ProbeTarget::test_acc;
    double r2_test = 0.0;
    double ridge_lambda = 0.0;
    double train_fraction = 0.8;
    std::uint64_t split_seed = 0;
    std::size_t n_train_rows = 0;
    std::size_t n_test_rows = 0;
    std::size_t dropped_rows = 0;  // rows with non-finite targets
    bool standardized = true;
};

// One row per model; group keys tie all seeds of a grid cell together so the
// train/test split can never leak a cell across sides.
struct ProbeRows {
    Matrix features;
    std::vector<double> targets;
    std::vector<std::string> groups;
};

inline const std::vector<double> kDefaultLambdaGrid = {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0};

// Cell-level split, lambda chosen on an inner validation fold of the training
// cells, R^2 reported on the untouched held-out cells.
ProbeReport run_probe_rows(const ProbeRows& rows, ProbeTarget target, std::uint64_t split_seed,
                           double train_fraction = 0.8,
                           const std::vector<double>& lambda_grid = kDefaultLambdaGrid);

ProbeReport run_probe(const ZooManifest& manifest, ProbeTarget target, std::uint64_t split_seed,
                      double train_fraction = 0.8,
                      const std::vector<double>& lambda_grid = kDefaultLambdaGrid);

// The probe's row view of a manifest (features from final checkpoints on
// disk, targets per model; mc/cka use the cell's seed-pair mean).
ProbeRows probe_rows_from_manifest(const ZooManifest& manifest, ProbeTarget target);

// One row per model: group key, target value, then the named features.
void export_features_csv(const ZooManifest& manifest, ProbeTarget target,
                         const std::filesystem::path& path);

}  // namespace phasezoo
