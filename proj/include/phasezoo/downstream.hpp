#pragma once

#include <string>
#include <vector>

#include "phasezoo/trainer.hpp"
#include "phasezoo/zoo.hpp"

namespace phasezoo {

// Global magnitude pruning: the floor(sparsity * weight_count) smallest-|w|
// weights (biases exempt) set to zero, ties broken by index. Idempotent at
// fixed sparsity.
ParameterVector prune_magnitude(const ParameterVector& params, double sparsity);

// Mean of the models' softmax outputs, then argmax accuracy.
double ensemble_accuracy(const std::vector<ParameterVector>& models, const ModelSpec& spec,
                         const Dataset& data);

// Coordinate-wise arithmetic mean; layouts must match.
ParameterVector average_naive(const std::vector<ParameterVector>& models);

// (1 - alpha) * a + alpha * b.
ParameterVector interpolate(const ParameterVector& a, const ParameterVector& b, double alpha);

// Coordinate-wise mean of the run's last k checkpoints.
ParameterVector average_epochs(const RunRecord& run, int last_k);

// Per-hidden-layer unit permutation; perm[l][i] is the candidate unit playing
// the role of reference unit i in hidden layer l.
struct PermutationMap {
    std::vector<std::vector<int>> layer_perms;
};

// Reorders the candidate's hidden units by the map (rows of W_l and b_l, then
// the matching columns of W_{l+1}); function values are untouched.
ParameterVector apply_permutation(const ParameterVector& params, const ModelSpec& spec,
                                  const PermutationMap& map);

// Weight matching: layer by layer, a linear assignment maximizes the overlap
// between reference and candidate unit weight vectors (candidate inputs
// composed with the upstream permutation), solved exactly by the Hungarian
// algorithm. The returned candidate is functionally identical to the input.
std::pair<PermutationMap, ParameterVector> align_permutations(const ParameterVector& reference,
                                                              const ParameterVector& candidate,
                                                              const ModelSpec& spec);

// Exact min-cost square assignment, O(n^3); returns the column picked for
// each row.
std::vector<int> solve_assignment_min(const Matrix& cost);
std::vector<int> solve_assignment_max(const Matrix& score);

struct FinetuneResult {
    ModelSpec spec;  // output_dim may differ from the source spec
    RunRecord run;
};

// Continues training on the target dataset. If the class count differs the
// head must be reinitialized (seeded by config.seed); the body transfers
// bit-identically before training.
FinetuneResult finetune(const ParameterVector& params, const ModelSpec& spec, const DataPair& target,
                        const TrainConfig& config, bool reinit_head);

enum class DownstreamMethod { prune, ensemble, avg_naive, avg_aligned, avg_epochs, interpolate, finetune };
const char* to_string(DownstreamMethod m);
DownstreamMethod downstream_method_from_string(const std::string& s);

struct DownstreamParams {
    double sparsity = 0.5;       // prune
    int last_k = 3;              // avg_epochs
    double alpha = 0.5;          // interpolate
    DatasetSpec target;          // finetune
    TrainConfig finetune_config; // finetune
    bool reinit_head = true;     // finetune
};

// Applies the method per (width, temperature) cell over its seeds (pairwise
// methods per seed pair) and aggregates to a grid table; failures stay NA.
GridTable downstream_grid(const ZooManifest& manifest, DownstreamMethod method,
                          const DownstreamParams& params);

}  // namespace phasezoo
