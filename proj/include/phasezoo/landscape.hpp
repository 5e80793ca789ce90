#pragma once

#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "phasezoo/nn.hpp"

namespace phasezoo {

// Matrix-free operator interfaces keep the solvers testable against synthetic
// quadratics as well as real nets.
using HvpFn = std::function<std::vector<double>(const std::vector<double>&)>;
using LossFn = std::function<double(const std::vector<double>&)>;

struct PowerIterationResult {
    double lambda = 0.0;  // signed eigenvalue of largest magnitude
    bool converged = false;
    int iters = 0;
};

// Power iteration with the sign recovered from the final Rayleigh quotient.
// Converged once successive Rayleigh quotients agree to tol relative.
PowerIterationResult power_iteration(const HvpFn& apply, std::size_t dim, int max_iters, double tol,
                                     std::uint64_t seed);

struct CurvatureReport {
    double lambda_max = std::numeric_limits<double>::quiet_NaN();
    double trace_estimate = 0.0;
    std::optional<double> trace_stderr;  // undefined with a single probe
    int probes_used = 0;
    int power_iters = 0;
    bool converged = false;
};

// Hutchinson estimator with Rademacher probes; deterministic in seed.
CurvatureReport hutchinson_trace(const HvpFn& apply, std::size_t dim, int probes, std::uint64_t seed);

// Hessian metrics of the mean train-split cross-entropy at params.
std::pair<double, bool> top_eigenvalue(const ParameterVector& params, const ModelSpec& spec,
                                       const Dataset& data, int max_iters, double tol);
CurvatureReport hessian_trace(const ParameterVector& params, const ModelSpec& spec, const Dataset& data,
                              int probes, std::uint64_t seed);

struct CurvatureOptions {
    int power_max_iters = 100;
    double power_tol = 1e-5;
    int probes = 100;
    std::uint64_t seed = 0;
};

// Both Hessian metrics in one report.
CurvatureReport compute_curvature(const ParameterVector& params, const ModelSpec& spec,
                                  const Dataset& data, const CurvatureOptions& opts);

// Quadratic Bezier between two parameter vectors with one trainable control
// point; endpoints are never modified, so gamma(0)=a and gamma(1)=b exactly.
struct BezierCurve {
    ParameterVector endpoint_a;
    ParameterVector endpoint_b;
    ParameterVector control;
    static constexpr int degree = 2;
};

ParameterVector bezier_point(const BezierCurve& curve, double t);

// Control point starts at the midpoint and is trained by stochastic steps on
// L(gamma(t)) with t ~ U(0,1) per step, full-batch gradients.
BezierCurve fit_bezier(const ParameterVector& a, const ParameterVector& b, const ModelSpec& spec,
                       const Dataset& train_data, int steps, double lr, std::uint64_t seed);

enum class McSelection {
    max_abs_deviation,  // default; consistent with the barrier sign convention
    min_abs_deviation,  // compatibility mode
};

struct ConnectivityReport {
    double mc = 0.0;
    double t_star = 0.0;
    std::vector<std::pair<double, double>> curve_losses;  // (t, loss)
    double endpoint_mean_loss = 0.0;
};

// mc = mean endpoint loss minus the loss at the extremal grid point t*.
// mc < 0 means a barrier between the endpoints, mc > 0 a lower-loss valley.
// t_grid_size must be odd and >= 3 so the grid contains 0, 0.5 and 1.
ConnectivityReport mode_connectivity(const BezierCurve& curve, const ModelSpec& spec,
                                     const Dataset& train_data, int t_grid_size,
                                     McSelection selection = McSelection::max_abs_deviation);

ConnectivityReport mode_connectivity_fn(const LossFn& loss, const BezierCurve& curve, int t_grid_size,
                                        McSelection selection = McSelection::max_abs_deviation);

struct SimilarityReport {
    double cka = 0.0;
    std::size_t n_samples = 0;
};

// Linear-kernel CKA between two logit matrices on the same ordered inputs.
SimilarityReport cka_similarity(const Matrix& logits_x, const Matrix& logits_y);

struct PairMetrics {
    std::uint64_t seed_a = 0;
    std::uint64_t seed_b = 0;
    double mc = 0.0;
    double t_star = 0.0;
    double cka = 0.0;
};

struct PairwiseReport {
    double mc_mean = 0.0;
    double cka_mean = 0.0;
    std::vector<PairMetrics> pairs;
};

struct PairwiseOptions {
    int bezier_steps = 100;
    double bezier_lr = 0.05;
    int t_grid_size = 21;
    McSelection mc_selection = McSelection::max_abs_deviation;
    std::uint64_t seed = 0;
};

// mc and cka for every unordered pair of same-config models trained from
// different seeds, averaged.
PairwiseReport pairwise_metrics(const std::vector<std::pair<std::uint64_t, ParameterVector>>& models,
                                const ModelSpec& spec, const Dataset& train_data,
                                const PairwiseOptions& opts = {});

}  // namespace phasezoo
