#include "phasezoo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "phasezoo/rng.hpp"

namespace phasezoo {

const char* to_string(LrSchedule s) {
    return s == LrSchedule::one_cycle_cosine ? "one_cycle_cosine" : "constant";
}

LrSchedule schedule_from_string(const std::string& s) {
    if (s == "one_cycle_cosine") return LrSchedule::one_cycle_cosine;
    if (s == "constant") return LrSchedule::constant;
    throw invalid_spec_error("unknown schedule: " + s);
}

void TrainConfig::validate() const {
    if (epochs < 0) throw invalid_spec_error("epochs must be >= 0");
    if (batch_size <= 0) throw invalid_spec_error("batch_size must be positive");
    if (peak_lr < 0.0) throw invalid_spec_error("peak_lr must be nonnegative");
    if (momentum < 0.0 || momentum >= 1.0) throw invalid_spec_error("momentum must be in [0,1)");
    if (weight_decay < 0.0) throw invalid_spec_error("weight_decay must be nonnegative");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
        throw invalid_spec_error("warmup_fraction must be in [0,1)");
    if (checkpoint_every <= 0) throw invalid_spec_error("checkpoint_every must be positive");
}

double lr_at(const TrainConfig& config, std::int64_t step, std::int64_t total_steps) {
    if (step < 0 || step > total_steps)
        throw precondition_error("lr_at step " + std::to_string(step) + " outside [0," +
                                 std::to_string(total_steps) + "]");
    if (config.schedule == LrSchedule::constant) return config.peak_lr;

    const double warmup_floor = config.peak_lr / 25.0;
    const double final_floor = config.peak_lr / 1e4;
    const std::int64_t warmup_steps =
        static_cast<std::int64_t>(std::floor(config.warmup_fraction * static_cast<double>(total_steps)));
    if (warmup_steps > 0 && step <= warmup_steps) {
        const double t = static_cast<double>(step) / static_cast<double>(warmup_steps);
        return warmup_floor + (config.peak_lr - warmup_floor) * t;
    }
    const std::int64_t decay_steps = total_steps - warmup_steps;
    if (decay_steps <= 0) return config.peak_lr;
    const double t = static_cast<double>(step - warmup_steps) / static_cast<double>(decay_steps);
    return final_floor + (config.peak_lr - final_floor) * 0.5 * (1.0 + std::cos(M_PI * t));
}

std::pair<double, double> evaluate(const ParameterVector& params, const ModelSpec& spec,
                                   const Dataset& split) {
    if (split.size() == 0) throw precondition_error("evaluate on empty split");
    Batch batch = full_batch(split);
    Matrix logits = forward(params, spec, batch);

    double total = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const double* zi = logits.row(i);
        double mx = zi[0];
        std::size_t arg = 0;
        for (std::size_t j = 1; j < logits.cols; ++j) {
            if (zi[j] > mx) {
                mx = zi[j];
                arg = j;
            }
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < logits.cols; ++j) sum += std::exp(zi[j] - mx);
        total += mx + std::log(sum) - zi[static_cast<std::size_t>(batch.labels[i])];
        if (arg == static_cast<std::size_t>(batch.labels[i])) ++correct;
    }
    return {total / static_cast<double>(logits.rows),
            static_cast<double>(correct) / static_cast<double>(logits.rows)};
}

namespace {

std::vector<std::size_t> epoch_shuffle(std::size_t n, std::uint64_t seed, int epoch) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(mix_seed(seed, 0x65706f6368ULL + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.uniform_int(i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

std::size_t batch_accuracy_count(const Matrix& logits, const std::vector<int>& labels) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const double* zi = logits.row(i);
        std::size_t arg = 0;
        for (std::size_t j = 1; j < logits.cols; ++j)
            if (zi[j] > zi[arg]) arg = j;
        if (arg == static_cast<std::size_t>(labels[i])) ++correct;
    }
    return correct;
}

}  // namespace

RunRecord train(const ModelSpec& spec, const DataPair& data, const TrainConfig& config) {
    return train_from(build_model(spec), spec, data, config);
}

RunRecord train_from(ParameterVector params, const ModelSpec& spec, const DataPair& data,
                     const TrainConfig& config) {
    spec.validate();
    config.validate();
    if (data.train.size() == 0 || data.test.size() == 0)
        throw precondition_error("train requires nonempty train and test splits");
    if (static_cast<std::size_t>(config.batch_size) > data.train.size())
        throw invalid_spec_error("batch_size exceeds train-set size");
    if (params.size() != spec.parameter_count()) throw shape_error("initial parameters do not match spec");

    const std::size_t n = data.train.size();
    const std::size_t batches_per_epoch = (n + static_cast<std::size_t>(config.batch_size) - 1) /
                                          static_cast<std::size_t>(config.batch_size);
    const std::int64_t total_steps =
        static_cast<std::int64_t>(batches_per_epoch) * static_cast<std::int64_t>(config.epochs);

    RunRecord run;
    run.checkpoints.emplace_back(0, params);
    ParameterVector last_finite = params;  // end of the last fully finite epoch

    std::vector<double> velocity(params.size(), 0.0);
    std::int64_t step = 0;
    int last_finite_epoch = 0;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const std::vector<std::size_t> order = epoch_shuffle(n, config.seed, epoch);

        double loss_sum = 0.0;       // sample-weighted running mean numerator
        std::size_t correct = 0;
        double last_lr = 0.0;
        bool blew_up = false;

        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            const std::size_t lo = b * static_cast<std::size_t>(config.batch_size);
            const std::size_t hi = std::min(lo + static_cast<std::size_t>(config.batch_size), n);
            Batch batch = take_batch(data.train, std::span<const std::size_t>(order.data() + lo, hi - lo));

            const double lr = lr_at(config, step, total_steps);
            last_lr = lr;

            LossGrad lg;
            try {
                lg = loss_and_grad(params, spec, batch);
            } catch (const numeric_error&) {
                blew_up = true;
                break;
            }
            loss_sum += lg.loss * static_cast<double>(batch.size());
            correct += batch_accuracy_count(lg.logits, batch.labels);

            for (std::size_t i = 0; i < params.size(); ++i) {
                const double g = lg.grad.values[i] + config.weight_decay * params.values[i];
                velocity[i] = config.momentum * velocity[i] + g;
                params.values[i] -= lr * velocity[i];
            }
            ++step;
        }

        if (!blew_up) {
            for (double v : params.values)
                if (!std::isfinite(v)) {
                    blew_up = true;
                    break;
                }
        }
        if (blew_up) {
            run.diverged = true;
            break;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = last_lr;
        try {
            if (config.strict_eval) {
                auto [tl, ta] = evaluate(params, spec, data.train);
                rec.train_loss = tl;
                rec.train_acc = ta;
            } else {
                rec.train_loss = loss_sum / static_cast<double>(n);
                rec.train_acc = static_cast<double>(correct) / static_cast<double>(n);
            }
            auto [vl, va] = evaluate(params, spec, data.test);
            rec.test_loss = vl;
            rec.test_acc = va;
        } catch (const numeric_error&) {
            // finite weights can still overflow the forward pass one epoch
            // before the parameters themselves go non-finite
            run.diverged = true;
            break;
        }
        run.history.push_back(rec);
        last_finite = params;
        last_finite_epoch = epoch;

        if (epoch % config.checkpoint_every == 0 && epoch != config.epochs)
            run.checkpoints.emplace_back(epoch, params);
    }

    if (!run.diverged && config.epochs > 0) {
        run.checkpoints.emplace_back(config.epochs, params);
    } else if (run.diverged && run.checkpoints.back().first != last_finite_epoch) {
        run.checkpoints.emplace_back(last_finite_epoch, last_finite);
    }

    if (!run.history.empty()) {
        run.final = run.history.back();
        run.generalization_gap = run.final.test_loss - run.final.train_loss;
    } else {
        run.final = EpochRecord{};
        run.generalization_gap = 0.0;
    }
    return run;
}

}  // namespace phasezoo
