#include "phasezoo/phase.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace phasezoo {

const char* to_string(PhaseLabel p) {
    switch (p) {
        case PhaseLabel::I: return "I";
        case PhaseLabel::II: return "II";
        case PhaseLabel::III: return "III";
        case PhaseLabel::IV_A: return "IVA";
        default: return "IVB";
    }
}

PhaseLabel phase_from_string(const std::string& s) {
    if (s == "I") return PhaseLabel::I;
    if (s == "II") return PhaseLabel::II;
    if (s == "III") return PhaseLabel::III;
    if (s == "IVA" || s == "IV-A") return PhaseLabel::IV_A;
    if (s == "IVB" || s == "IV-B") return PhaseLabel::IV_B;
    throw format_error("unknown phase label: " + s);
}

bool MetricRecord::finite() const {
    return std::isfinite(train_loss) && std::isfinite(test_acc) && std::isfinite(generalization_gap) &&
           std::isfinite(lambda_max) && std::isfinite(hessian_trace) && std::isfinite(mc) &&
           std::isfinite(cka);
}

void PhaseThresholds::validate() const {
    if (tau_mc > 0.0) throw invalid_spec_error("tau_mc must be nonpositive");
    if (tau_cka < 0.0 || tau_cka > 1.0) throw invalid_spec_error("tau_cka must be in [0,1]");
}

PhaseLabel classify(const MetricRecord& record, const PhaseThresholds& thresholds) {
    thresholds.validate();
    if (record.train_loss > thresholds.tau_loss)
        return record.mc < thresholds.tau_mc ? PhaseLabel::I : PhaseLabel::II;
    if (record.mc < thresholds.tau_mc) return PhaseLabel::III;
    return (record.cka >= thresholds.tau_cka && record.hessian_trace <= thresholds.tau_trace)
               ? PhaseLabel::IV_B
               : PhaseLabel::IV_A;
}

double classification_accuracy(const std::vector<MetricRecord>& records,
                               const std::vector<PhaseLabel>& labels,
                               const PhaseThresholds& thresholds) {
    if (records.size() != labels.size() || records.empty())
        throw precondition_error("records and labels must align and be nonempty");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < records.size(); ++i)
        if (classify(records[i], thresholds) == labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(records.size());
}

FitBounds FitBounds::from_records(const std::vector<MetricRecord>& records) {
    FitBounds b;
    if (records.empty()) return b;
    double loss_lo = records[0].train_loss, loss_hi = records[0].train_loss;
    double trace_lo = records[0].hessian_trace, trace_hi = records[0].hessian_trace;
    for (const MetricRecord& r : records) {
        loss_lo = std::min(loss_lo, r.train_loss);
        loss_hi = std::max(loss_hi, r.train_loss);
        trace_lo = std::min(trace_lo, r.hessian_trace);
        trace_hi = std::max(trace_hi, r.hessian_trace);
    }
    const double loss_pad = std::max(1e-6, 0.05 * (loss_hi - loss_lo));
    const double trace_pad = std::max(1e-6, 0.05 * (trace_hi - trace_lo));
    b.loss = {loss_lo - loss_pad, loss_hi + loss_pad};
    b.trace = {trace_lo - trace_pad, trace_hi + trace_pad};
    return b;
}

namespace {

// Bounded scalar maximization of a piecewise-constant accuracy. Dense bracket
// of candidates, then shrink onto the best plateau; ties break toward the
// plateau midpoint. Returns a value whose accuracy is >= every evaluated
// candidate's accuracy.
template <typename Eval>
double optimize_threshold(const Eval& eval, double lo, double hi) {
    if (!(lo < hi)) return lo;
    constexpr int kCandidates = 65;
    constexpr int kRounds = 4;

    double best_acc = -1.0;
    double best_tau = lo;
    double cur_lo = lo, cur_hi = hi;

    for (int round = 0; round < kRounds; ++round) {
        const double step = (cur_hi - cur_lo) / (kCandidates - 1);
        std::vector<double> accs(kCandidates);
        for (int i = 0; i < kCandidates; ++i) {
            const double tau = cur_lo + step * i;
            accs[static_cast<std::size_t>(i)] = eval(tau);
            if (accs[static_cast<std::size_t>(i)] > best_acc) {
                best_acc = accs[static_cast<std::size_t>(i)];
                best_tau = tau;
            }
        }
        // longest contiguous run of round-best candidates (first on ties)
        const double round_best = *std::max_element(accs.begin(), accs.end());
        int run_start = -1, run_len = 0, best_start = 0, best_len = 0;
        for (int i = 0; i <= kCandidates; ++i) {
            if (i < kCandidates && accs[static_cast<std::size_t>(i)] == round_best) {
                if (run_start < 0) run_start = i;
                ++run_len;
            } else {
                if (run_len > best_len) {
                    best_len = run_len;
                    best_start = run_start;
                }
                run_start = -1;
                run_len = 0;
            }
        }
        const double plateau_lo = cur_lo + step * best_start;
        const double plateau_hi = cur_lo + step * (best_start + best_len - 1);
        const double mid = 0.5 * (plateau_lo + plateau_hi);
        if (eval(mid) >= best_acc) {
            best_acc = eval(mid);
            best_tau = mid;
        }
        // shrink one step beyond the plateau for the next sweep
        cur_lo = std::max(lo, plateau_lo - step);
        cur_hi = std::min(hi, plateau_hi + step);
        if (cur_hi - cur_lo < 1e-12) break;
    }
    return best_tau;
}

}  // namespace

PhaseThresholds fit_thresholds(const std::vector<MetricRecord>& records,
                               const std::vector<PhaseLabel>& labels, const FitBounds& bounds) {
    if (records.size() != labels.size() || records.empty())
        throw precondition_error("records and labels must align and be nonempty");

    std::set<PhaseLabel> present(labels.begin(), labels.end());
    if (present.size() < static_cast<std::size_t>(kNumPhases)) {
        std::string missing;
        for (PhaseLabel p : {PhaseLabel::I, PhaseLabel::II, PhaseLabel::III, PhaseLabel::IV_A, PhaseLabel::IV_B}) {
            if (!present.count(p)) {
                if (!missing.empty()) missing += ", ";
                missing += to_string(p);
            }
        }
        throw coverage_error("labels missing phases: " + missing);
    }

    PhaseThresholds fit;
    fit.tau_loss = 0.5 * (bounds.loss.first + bounds.loss.second);
    fit.tau_mc = std::min(0.0, 0.5 * (bounds.mc.first + bounds.mc.second));
    fit.tau_cka = 0.5 * (bounds.cka.first + bounds.cka.second);
    fit.tau_trace = 0.5 * (bounds.trace.first + bounds.trace.second);

    const auto acc_with = [&](const PhaseThresholds& t) {
        return classification_accuracy(records, labels, t);
    };

    // tree order: loss, mc, cka, trace
    fit.tau_loss = optimize_threshold(
        [&](double tau) {
            PhaseThresholds t = fit;
            t.tau_loss = tau;
            return acc_with(t);
        },
        bounds.loss.first, bounds.loss.second);
    fit.tau_mc = optimize_threshold(
        [&](double tau) {
            PhaseThresholds t = fit;
            t.tau_mc = std::min(0.0, tau);
            return acc_with(t);
        },
        bounds.mc.first, std::min(0.0, bounds.mc.second));
    fit.tau_mc = std::min(0.0, fit.tau_mc);
    fit.tau_cka = optimize_threshold(
        [&](double tau) {
            PhaseThresholds t = fit;
            t.tau_cka = tau;
            return acc_with(t);
        },
        bounds.cka.first, bounds.cka.second);
    fit.tau_trace = optimize_threshold(
        [&](double tau) {
            PhaseThresholds t = fit;
            t.tau_trace = tau;
            return acc_with(t);
        },
        bounds.trace.first, bounds.trace.second);

    fit.fit_accuracy = acc_with(fit);
    fit.low_confidence = fit.fit_accuracy < 0.5;
    fit.provisional = false;
    return fit;
}

namespace {

double quantile(std::vector<double> xs, double q) {
    if (xs.empty()) return 0.0;
    std::sort(xs.begin(), xs.end());
    const double pos = q * static_cast<double>(xs.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, xs.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return xs[lo] + frac * (xs[hi] - xs[lo]);
}

}  // namespace

namespace {

// midpoint of the widest gap in the sorted sample; a 1-d two-cluster split
double largest_gap_split(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    if (xs.size() < 2) return xs.empty() ? 0.0 : xs[0];
    double best = xs[0], width = -1.0;
    for (std::size_t i = 1; i < xs.size(); ++i) {
        if (xs[i] - xs[i - 1] > width) {
            width = xs[i] - xs[i - 1];
            best = 0.5 * (xs[i] + xs[i - 1]);
        }
    }
    return best;
}

}  // namespace

PhaseThresholds bootstrap_thresholds(const std::vector<MetricRecord>& records) {
    if (records.empty()) throw precondition_error("bootstrap needs records");
    std::vector<double> loss, mc, cka, trace;
    for (const MetricRecord& r : records) {
        loss.push_back(r.train_loss);
        mc.push_back(r.mc);
        cka.push_back(r.cka);
        trace.push_back(r.hessian_trace);
    }
    PhaseThresholds t;
    // the train-loss axis is bimodal (interpolating vs underfit cluster), so
    // the split lands in the gap; the remaining axes use plain quantiles
    t.tau_loss = largest_gap_split(loss);
    t.tau_mc = std::min(-1e-6, quantile(mc, 0.25));
    t.tau_cka = std::clamp(quantile(cka, 0.5), 0.0, 1.0);
    // interpolating desk-scale minima are sharp, so the flatness veto sits at
    // a high quantile rather than the median
    t.tau_trace = quantile(trace, 0.75);
    t.provisional = true;
    return t;
}

std::vector<std::optional<MetricRecord>> seed_mean_records(const ZooManifest& manifest) {
    const GridSpec& grid = manifest.grid;
    const std::size_t rows = grid.widths.size();
    const std::size_t cols = grid.temperature_count();

    const char* fields[] = {"train_loss", "test_acc", "ggap", "lambda_max", "hessian_trace", "mc", "cka"};
    std::vector<GridTable> tables;
    for (const char* f : fields) tables.push_back(collect_grid(manifest, f));

    std::vector<std::optional<MetricRecord>> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            bool complete = true;
            for (const GridTable& t : tables)
                if (!t.at(r, c)) {
                    complete = false;
                    break;
                }
            if (!complete) continue;
            MetricRecord rec;
            rec.train_loss = *tables[0].at(r, c);
            rec.test_acc = *tables[1].at(r, c);
            rec.generalization_gap = *tables[2].at(r, c);
            rec.lambda_max = *tables[3].at(r, c);
            rec.hessian_trace = *tables[4].at(r, c);
            rec.mc = *tables[5].at(r, c);
            rec.cka = *tables[6].at(r, c);
            rec.cell = "w" + std::to_string(grid.widths[r]) + "_t" + grid.temperature_label(c);
            out[r * cols + c] = rec;
        }
    }
    return out;
}

PhaseGridResult phase_grid(const ZooManifest& manifest, const PhaseThresholds& thresholds) {
    const GridSpec& grid = manifest.grid;
    PhaseGridResult result;
    for (int w : grid.widths) result.table.row_labels.push_back(std::to_string(w));
    result.table.col_labels = grid.temperature_labels();
    const std::size_t cols = result.table.col_labels.size();
    result.table.values.assign(result.table.row_labels.size() * cols, std::nullopt);

    const std::vector<std::optional<MetricRecord>> records = seed_mean_records(manifest);
    for (std::size_t r = 0; r < result.table.row_labels.size(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const auto& rec = records[r * cols + c];
            if (rec) {
                result.table.at(r, c) = std::string(to_string(classify(*rec, thresholds)));
            } else {
                result.unlabeled.push_back("w" + result.table.row_labels[r] + "_t" +
                                           result.table.col_labels[c]);
            }
        }
    }
    return result;
}

}  // namespace phasezoo
