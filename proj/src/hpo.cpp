#include "phasezoo/hpo.hpp"

#include <algorithm>
#include <cmath>

namespace phasezoo {

const char* to_string(ActionKind k) {
    switch (k) {
        case ActionKind::increase_width: return "increase_width";
        case ActionKind::increase_batch: return "increase_batch";
        case ActionKind::decrease_batch: return "decrease_batch";
        default: return "none";
    }
}

const char* to_string(HpoPolicy p) { return p == HpoPolicy::random ? "random" : "phase_aware"; }

TuningAction random_action(Rng& rng) {
    TuningAction a;
    switch (rng.uniform_int(3)) {
        case 0: a.kind = ActionKind::increase_width; break;
        case 1: a.kind = ActionKind::increase_batch; break;
        default: a.kind = ActionKind::decrease_batch; break;
    }
    a.magnitude = 1 + static_cast<int>(rng.uniform_int(5));
    return a;
}

TuningAction phase_action(PhaseLabel phase, Rng& rng) {
    TuningAction a;
    const int magnitude = 1 + static_cast<int>(rng.uniform_int(5));
    switch (phase) {
        case PhaseLabel::I:
        case PhaseLabel::III: a.kind = ActionKind::increase_width; break;
        case PhaseLabel::II: a.kind = ActionKind::increase_batch; break;
        case PhaseLabel::IV_A: a.kind = ActionKind::decrease_batch; break;
        case PhaseLabel::IV_B:
            a.kind = ActionKind::none;
            a.magnitude = 0;
            return a;
    }
    a.magnitude = magnitude;
    return a;
}

namespace {

template <typename T>
std::size_t index_of(const std::vector<T>& xs, const T& x, const char* what) {
    const auto it = std::find(xs.begin(), xs.end(), x);
    if (it == xs.end()) throw precondition_error(std::string("cell ") + what + " not on the grid");
    return static_cast<std::size_t>(it - xs.begin());
}

std::size_t clamp_move(std::size_t idx, int delta, std::size_t size) {
    const long target = static_cast<long>(idx) + delta;
    return static_cast<std::size_t>(std::clamp<long>(target, 0, static_cast<long>(size) - 1));
}

// temperature index of a cell on the active axis
std::size_t temp_index(const GridSpec& grid, const GridCell& cell) {
    if (grid.temperature_axis == TemperatureAxis::batch_size)
        return index_of(grid.batch_sizes, cell.batch_size, "batch_size");
    return index_of(grid.peak_lrs, cell.peak_lr, "peak_lr");
}

GridCell cell_at(const GridSpec& grid, std::size_t width_idx, std::size_t temp_idx, std::uint64_t seed) {
    GridCell c;
    c.width = grid.widths[width_idx];
    if (grid.temperature_axis == TemperatureAxis::batch_size) {
        c.batch_size = grid.batch_sizes[temp_idx];
        c.peak_lr = grid.base_train.peak_lr;
    } else {
        c.batch_size = grid.base_train.batch_size;
        c.peak_lr = grid.peak_lrs[temp_idx];
    }
    c.seed = seed;
    return c;
}

// increase_batch lowers the temperature: up the batch list, down the lr list
std::pair<std::size_t, std::size_t> move_indices(const GridSpec& grid, std::size_t w, std::size_t t,
                                                 const TuningAction& action) {
    const std::size_t n_t = grid.temperature_count();
    const bool lr_axis = grid.temperature_axis == TemperatureAxis::peak_lr;
    switch (action.kind) {
        case ActionKind::increase_width:
            return {clamp_move(w, action.magnitude, grid.widths.size()), t};
        case ActionKind::increase_batch:
            return {w, clamp_move(t, lr_axis ? -action.magnitude : action.magnitude, n_t)};
        case ActionKind::decrease_batch:
            return {w, clamp_move(t, lr_axis ? action.magnitude : -action.magnitude, n_t)};
        default: return {w, t};
    }
}

}  // namespace

GridCell apply_action(const GridCell& cell, const TuningAction& action, const GridSpec& grid) {
    const std::size_t w = index_of(grid.widths, cell.width, "width");
    const std::size_t t = temp_index(grid, cell);
    const auto [nw, nt] = move_indices(grid, w, t, action);
    return cell_at(grid, nw, nt, cell.seed);
}

namespace {

void finish_report(HpoReport& rep) {
    const std::size_t n = rep.per_trial.size();
    if (n == 0) {
        rep.mean_gain = 0.0;
        rep.std_gain = 0.0;
        return;
    }
    double mean = 0.0;
    for (const HpoTrial& t : rep.per_trial) mean += t.gain;
    mean /= static_cast<double>(n);
    rep.mean_gain = mean;
    if (n > 1) {
        double ss = 0.0;
        for (const HpoTrial& t : rep.per_trial) ss += (t.gain - mean) * (t.gain - mean);
        rep.std_gain = std::sqrt(ss / static_cast<double>(n - 1));
    }
}

}  // namespace

std::pair<HpoReport, HpoReport> run_hpo_on_tables(const GridSpec& grid, const GridTable& accuracy,
                                                  const std::vector<std::optional<MetricRecord>>& records,
                                                  const PhaseThresholds& thresholds,
                                                  const HpoOptions& opts) {
    grid.validate();
    const std::size_t rows = grid.widths.size();
    const std::size_t cols = grid.temperature_count();
    if (accuracy.row_labels.size() != rows || accuracy.col_labels.size() != cols)
        throw shape_error("accuracy table does not match the grid");
    if (records.size() != rows * cols) throw shape_error("records do not match the grid");
    if (!opts.exhaustive && opts.trials < 1) throw precondition_error("trials must be >= 1");

    HpoReport random_rep;
    random_rep.policy = HpoPolicy::random;
    HpoReport phase_rep;
    phase_rep.policy = HpoPolicy::phase_aware;
    random_rep.exhaustive = phase_rep.exhaustive = opts.exhaustive;

    const int total = opts.exhaustive ? static_cast<int>(rows * cols) : opts.trials;
    random_rep.trials = phase_rep.trials = total;

    for (int trial = 0; trial < total; ++trial) {
        Rng start_rng(mix_seed(opts.seed, mix_seed(1, static_cast<std::uint64_t>(trial))));
        Rng action_rng(mix_seed(opts.seed, mix_seed(2, static_cast<std::uint64_t>(trial))));
        Rng mag_rng(mix_seed(opts.seed, mix_seed(3, static_cast<std::uint64_t>(trial))));

        std::size_t w, t;
        if (opts.exhaustive) {
            w = static_cast<std::size_t>(trial) / cols;
            t = static_cast<std::size_t>(trial) % cols;
        } else {
            w = start_rng.uniform_int(rows);
            t = start_rng.uniform_int(cols);
        }

        const auto& start_acc = accuracy.at(w, t);
        const auto& start_rec = records[w * cols + t];
        if (!start_acc || !start_rec) {
            ++random_rep.skipped;
            ++phase_rep.skipped;
            continue;
        }

        const TuningAction ra = random_action(action_rng);
        const TuningAction pa = phase_action(classify(*start_rec, thresholds), mag_rng);
        const auto [rw, rt] = move_indices(grid, w, t, ra);
        const auto [pw, pt] = move_indices(grid, w, t, pa);
        const auto& racc = accuracy.at(rw, rt);
        const auto& pacc = accuracy.at(pw, pt);
        if (!racc || !pacc) {  // landed on an unmeasurable cell; skip the pair
            ++random_rep.skipped;
            ++phase_rep.skipped;
            continue;
        }

        HpoTrial rt_rec;
        rt_rec.start_width = grid.widths[w];
        rt_rec.start_temp = grid.temperature_label(t);
        rt_rec.action = ra;
        rt_rec.end_width = grid.widths[rw];
        rt_rec.end_temp = grid.temperature_label(rt);
        rt_rec.gain = *racc - *start_acc;
        random_rep.per_trial.push_back(rt_rec);

        HpoTrial pt_rec;
        pt_rec.start_width = grid.widths[w];
        pt_rec.start_temp = grid.temperature_label(t);
        pt_rec.action = pa;
        pt_rec.end_width = grid.widths[pw];
        pt_rec.end_temp = grid.temperature_label(pt);
        pt_rec.gain = *pacc - *start_acc;
        phase_rep.per_trial.push_back(pt_rec);
    }

    finish_report(random_rep);
    finish_report(phase_rep);
    return {random_rep, phase_rep};
}

std::pair<HpoReport, HpoReport> run_hpo_experiment(const ZooManifest& manifest,
                                                   const PhaseThresholds& thresholds,
                                                   const HpoOptions& opts) {
    const GridTable accuracy = collect_grid(manifest, "test_acc");
    const std::vector<std::optional<MetricRecord>> records = seed_mean_records(manifest);
    return run_hpo_on_tables(manifest.grid, accuracy, records, thresholds, opts);
}

}  // namespace phasezoo
