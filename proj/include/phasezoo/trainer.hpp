#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "phasezoo/nn.hpp"

namespace phasezoo {

enum class LrSchedule { one_cycle_cosine, constant };

const char* to_string(LrSchedule s);
LrSchedule schedule_from_string(const std::string& s);

struct TrainConfig {
    int epochs = 50;
    int batch_size = 32;          // the temperature-like knob
    double peak_lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0;
    LrSchedule schedule = LrSchedule::one_cycle_cosine;
    double warmup_fraction = 0.1;
    int checkpoint_every = 5;     // epochs
    std::uint64_t seed = 0;
    bool strict_eval = false;     // full post-epoch train pass instead of running mean

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_loss = 0.0;
    double test_acc = 0.0;
    double lr = 0.0;
};

struct RunRecord {
    std::vector<EpochRecord> history;
    std::vector<std::pair<int, ParameterVector>> checkpoints;  // sorted by epoch
    EpochRecord final;
    double generalization_gap = 0.0;  // final.test_loss - final.train_loss
    bool diverged = false;

    const ParameterVector& final_params() const { return checkpoints.back().second; }
};

// One-cycle schedule: linear warmup peak/25 -> peak over warmup_fraction of
// the run, cosine decay to peak/1e4 at the last step. Constant: peak always.
double lr_at(const TrainConfig& config, std::int64_t step, std::int64_t total_steps);

// Minibatch SGD with momentum and weight decay. Deterministic: shuffling is a
// pure function of (config.seed, epoch). Divergence is recorded, not thrown.
RunRecord train(const ModelSpec& spec, const DataPair& data, const TrainConfig& config);

// As train(), but starting from the given parameters instead of a fresh init.
RunRecord train_from(ParameterVector params, const ModelSpec& spec, const DataPair& data,
                     const TrainConfig& config);

// Full-split mean cross-entropy loss and top-1 accuracy.
std::pair<double, double> evaluate(const ParameterVector& params, const ModelSpec& spec,
                                   const Dataset& split);

}  // namespace phasezoo
