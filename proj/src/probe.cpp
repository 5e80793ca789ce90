#include "phasezoo/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "phasezoo/jsonio.hpp"
#include "phasezoo/rng.hpp"

namespace phasezoo {

double percentile(const std::vector<double>& sorted_values, double p) {
    if (sorted_values.empty()) throw precondition_error("percentile of an empty sample");
    if (p <= 0.0) return sorted_values.front();
    if (p >= 1.0) return sorted_values.back();
    const double pos = p * static_cast<double>(sorted_values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted_values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted_values[lo] + frac * (sorted_values[hi] - sorted_values[lo]);
}

WeightFeatures weight_features(const ParameterVector& params) {
    WeightFeatures out;
    static const char* kStats[] = {"mean", "std", "min", "q20", "q40", "q60", "q80", "max"};
    for (std::size_t t = 0; t < params.layout.size(); ++t) {
        const TensorDesc& d = params.layout[t];
        std::vector<double> xs(params.tensor(t).begin(), params.tensor(t).end());
        std::sort(xs.begin(), xs.end());
        double mean = 0.0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(xs.size());
        double var = 0.0;
        for (double x : xs) var += (x - mean) * (x - mean);
        var /= static_cast<double>(xs.size());  // population: 1-element biases stay defined

        const double stats[] = {mean,
                                std::sqrt(var),
                                xs.front(),
                                percentile(xs, 0.2),
                                percentile(xs, 0.4),
                                percentile(xs, 0.6),
                                percentile(xs, 0.8),
                                xs.back()};
        for (std::size_t s = 0; s < 8; ++s) {
            out.values.push_back(stats[s]);
            out.feature_names.push_back(d.name() + "." + kStats[s]);
        }
    }
    return out;
}

namespace {

struct Standardizer {
    std::vector<double> mean;
    std::vector<double> std_dev;
    std::vector<std::size_t> kept;     // columns with variance
    std::vector<std::size_t> dropped;
};

Standardizer standardize(const Matrix& x) {
    Standardizer s;
    s.mean.assign(x.cols, 0.0);
    s.std_dev.assign(x.cols, 0.0);
    for (std::size_t j = 0; j < x.cols; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < x.rows; ++i) m += x(i, j);
        m /= static_cast<double>(x.rows);
        double v = 0.0;
        for (std::size_t i = 0; i < x.rows; ++i) v += (x(i, j) - m) * (x(i, j) - m);
        v /= static_cast<double>(x.rows);
        s.mean[j] = m;
        s.std_dev[j] = std::sqrt(v);
        if (s.std_dev[j] > 1e-12) {
            s.kept.push_back(j);
        } else {
            s.dropped.push_back(j);
        }
    }
    return s;
}

// Cholesky solve of (A)x = b for symmetric positive definite A, in place.
std::vector<double> cholesky_solve(Matrix a, std::vector<double> b) {
    const std::size_t n = a.rows;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = a(i, j);
            for (std::size_t k = 0; k < j; ++k) sum -= a(i, k) * a(j, k);
            if (i == j) {
                if (sum <= 0.0) throw numeric_error("ridge normal equations not positive definite");
                a(i, i) = std::sqrt(sum);
            } else {
                a(i, j) = sum / a(j, j);
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        double sum = b[i];
        for (std::size_t k = 0; k < i; ++k) sum -= a(i, k) * b[k];
        b[i] = sum / a(i, i);
    }
    for (std::size_t ii = n; ii > 0; --ii) {
        const std::size_t i = ii - 1;
        double sum = b[i];
        for (std::size_t k = i + 1; k < n; ++k) sum -= a(k, i) * b[k];
        b[i] = sum / a(i, i);
    }
    return b;
}

}  // namespace

RidgeModel fit_ridge(const Matrix& features, const std::vector<double>& targets, double lambda) {
    if (features.rows < 2) throw precondition_error("ridge needs >= 2 rows");
    if (features.rows != targets.size()) throw shape_error("features/targets row mismatch");
    if (lambda < 0.0) throw precondition_error("lambda must be nonnegative");

    const Standardizer s = standardize(features);
    const std::size_t d = s.kept.size();
    const std::size_t n = features.rows;

    double y_mean = 0.0;
    for (double y : targets) y_mean += y;
    y_mean /= static_cast<double>(n);

    RidgeModel model;
    model.weights.assign(features.cols, 0.0);
    model.dropped = s.dropped;
    model.intercept = y_mean;
    if (d == 0) return model;  // nothing but the mean to learn

    // normal equations on standardized columns; the data term is normalized
    // by n so duplicating rows cannot change the solution
    Matrix xtx(d, d);
    std::vector<double> xty(d, 0.0);
    std::vector<double> row(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j)
            row[j] = (features(i, s.kept[j]) - s.mean[s.kept[j]]) / s.std_dev[s.kept[j]];
        const double yc = targets[i] - y_mean;
        for (std::size_t j = 0; j < d; ++j) {
            xty[j] += row[j] * yc;
            for (std::size_t k = 0; k <= j; ++k) xtx(j, k) += row[j] * row[k];
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        xty[j] /= static_cast<double>(n);
        for (std::size_t k = 0; k <= j; ++k) xtx(j, k) /= static_cast<double>(n);
    }
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t k = j + 1; k < d; ++k) xtx(j, k) = xtx(k, j);
        xtx(j, j) += lambda + 1e-12;  // tiny jitter keeps lambda=0 solvable
    }

    const std::vector<double> w_std = cholesky_solve(std::move(xtx), std::move(xty));

    // back to the raw feature space
    for (std::size_t j = 0; j < d; ++j) {
        const std::size_t col = s.kept[j];
        model.weights[col] = w_std[j] / s.std_dev[col];
        model.intercept -= model.weights[col] * s.mean[col];
    }
    return model;
}

double ridge_predict(const RidgeModel& model, const double* row, std::size_t dim) {
    if (dim != model.weights.size()) throw shape_error("prediction row width mismatch");
    double y = model.intercept;
    for (std::size_t j = 0; j < dim; ++j) y += model.weights[j] * row[j];
    return y;
}

double r2_score(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size() || truth.size() < 2)
        throw precondition_error("r2 needs equal lengths >= 2");
    double mean = 0.0;
    for (double t : truth) mean += t;
    mean /= static_cast<double>(truth.size());
    double ss_tot = 0.0, ss_res = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ss_tot += (truth[i] - mean) * (truth[i] - mean);
        ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    }
    if (ss_tot == 0.0) throw precondition_error("r2 undefined for constant truth");
    return 1.0 - ss_res / ss_tot;
}

const char* to_string(ProbeTarget t) {
    switch (t) {
        case ProbeTarget::test_acc: return "test_acc";
        case ProbeTarget::ggap: return "ggap";
        case ProbeTarget::cka: return "cka";
        case ProbeTarget::log_hessian_trace: return "log_hessian_trace";
        default: return "mc";
    }
}

ProbeTarget probe_target_from_string(const std::string& s) {
    if (s == "test_acc") return ProbeTarget::test_acc;
    if (s == "ggap") return ProbeTarget::ggap;
    if (s == "cka") return ProbeTarget::cka;
    if (s == "log_hessian_trace") return ProbeTarget::log_hessian_trace;
    if (s == "mc") return ProbeTarget::mc;
    throw schema_error("unknown probe target: " + s);
}

namespace {

struct GroupSplit {
    std::vector<std::size_t> train_rows;
    std::vector<std::size_t> test_rows;
};

// deterministic group-level split: all rows of a group share a side
GroupSplit split_by_group(const std::vector<std::string>& groups, double train_fraction,
                     std::uint64_t seed) {
    std::vector<std::string> uniq(groups.begin(), groups.end());
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

    Rng rng(mix_seed(seed, 0x70726f6265ULL));
    for (std::size_t i = uniq.size(); i > 1; --i) std::swap(uniq[i - 1], uniq[rng.uniform_int(i)]);

    std::size_t n_train = static_cast<std::size_t>(train_fraction * static_cast<double>(uniq.size()));
    n_train = std::clamp<std::size_t>(n_train, 1, uniq.size() - 1);
    std::set<std::string> train_groups(uniq.begin(), uniq.begin() + static_cast<std::ptrdiff_t>(n_train));

    GroupSplit split;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        if (train_groups.count(groups[i])) {
            split.train_rows.push_back(i);
        } else {
            split.test_rows.push_back(i);
        }
    }
    return split;
}

Matrix take_rows(const Matrix& x, const std::vector<std::size_t>& rows) {
    Matrix out(rows.size(), x.cols);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(x.row(rows[i]), x.cols, out.row(i));
    return out;
}

std::vector<double> take(const std::vector<double>& xs, const std::vector<std::size_t>& rows) {
    std::vector<double> out;
    out.reserve(rows.size());
    for (std::size_t i : rows) out.push_back(xs[i]);
    return out;
}

std::vector<std::string> take(const std::vector<std::string>& xs, const std::vector<std::size_t>& rows) {
    std::vector<std::string> out;
    out.reserve(rows.size());
    for (std::size_t i : rows) out.push_back(xs[i]);
    return out;
}

double holdout_r2(const Matrix& x_train, const std::vector<double>& y_train, const Matrix& x_test,
                  const std::vector<double>& y_test, double lambda) {
    const RidgeModel model = fit_ridge(x_train, y_train, lambda);
    std::vector<double> pred(x_test.rows);
    for (std::size_t i = 0; i < x_test.rows; ++i) pred[i] = ridge_predict(model, x_test.row(i), x_test.cols);
    return r2_score(pred, y_test);
}

}  // namespace

ProbeReport run_probe_rows(const ProbeRows& rows, ProbeTarget target, std::uint64_t split_seed,
                           double train_fraction, const std::vector<double>& lambda_grid) {
    if (rows.features.rows != rows.targets.size() || rows.features.rows != rows.groups.size())
        throw shape_error("probe rows misaligned");
    if (train_fraction <= 0.0 || train_fraction >= 1.0)
        throw precondition_error("train_fraction must be in (0,1)");
    if (lambda_grid.empty()) throw precondition_error("lambda grid is empty");

    // drop rows with non-finite targets (e.g. log of a negative trace)
    std::vector<std::size_t> keep;
    std::size_t dropped_rows = 0;
    for (std::size_t i = 0; i < rows.targets.size(); ++i) {
        bool ok = std::isfinite(rows.targets[i]);
        for (std::size_t j = 0; ok && j < rows.features.cols; ++j)
            ok = std::isfinite(rows.features(i, j));
        if (ok) {
            keep.push_back(i);
        } else {
            ++dropped_rows;
        }
    }
    const Matrix x = take_rows(rows.features, keep);
    const std::vector<double> y = take(rows.targets, keep);
    const std::vector<std::string> g = take(rows.groups, keep);

    std::set<std::string> uniq(g.begin(), g.end());
    if (uniq.size() < 10)
        throw sample_size_error("probe needs >= 10 cells, have " + std::to_string(uniq.size()));

    const GroupSplit outer = split_by_group(g, train_fraction, split_seed);
    const Matrix x_train = take_rows(x, outer.train_rows);
    const std::vector<double> y_train = take(y, outer.train_rows);
    const std::vector<std::string> g_train = take(g, outer.train_rows);
    const Matrix x_test = take_rows(x, outer.test_rows);
    const std::vector<double> y_test = take(y, outer.test_rows);

    // inner fold over training cells selects lambda
    const GroupSplit inner = split_by_group(g_train, 0.75, mix_seed(split_seed, 0x696e6e6572ULL));
    double best_lambda = lambda_grid.front();
    double best_r2 = -std::numeric_limits<double>::infinity();
    for (double lambda : lambda_grid) {
        double r2;
        try {
            r2 = holdout_r2(take_rows(x_train, inner.train_rows), take(y_train, inner.train_rows),
                            take_rows(x_train, inner.test_rows), take(y_train, inner.test_rows), lambda);
        } catch (const std::exception&) {
            continue;
        }
        if (r2 > best_r2) {
            best_r2 = r2;
            best_lambda = lambda;
        }
    }

    ProbeReport rep;
    rep.target = target;
    rep.ridge_lambda = best_lambda;
    rep.train_fraction = train_fraction;
    rep.split_seed = split_seed;
    rep.n_train_rows = x_train.rows;
    rep.n_test_rows = x_test.rows;
    rep.dropped_rows = dropped_rows;
    rep.r2_test = holdout_r2(x_train, y_train, x_test, y_test, best_lambda);
    return rep;
}

ProbeRows probe_rows_from_manifest(const ZooManifest& manifest, ProbeTarget target) {
    ProbeRows rows;
    std::vector<std::vector<double>> feats;
    for (const auto& [key, info] : manifest.cells) {
        if (info.cell.status != CellStatus::done) continue;
        const auto epochs = list_checkpoint_epochs(manifest.root / info.directory);
        if (epochs.empty()) continue;
        ParameterVector params;
        try {
            params = load_checkpoint(checkpoint_dir(manifest.root / info.directory, epochs.back()));
        } catch (const std::exception&) {
            continue;
        }

        double target_value = std::numeric_limits<double>::quiet_NaN();
        switch (target) {
            case ProbeTarget::test_acc: target_value = info.final.test_acc; break;
            case ProbeTarget::ggap: target_value = info.generalization_gap; break;
            case ProbeTarget::cka:
            case ProbeTarget::mc:
            case ProbeTarget::log_hessian_trace: {
                const std::filesystem::path mpath = manifest.root / info.directory / "metrics.json";
                if (!std::filesystem::exists(mpath)) break;
                try {
                    const json j = read_json(mpath);
                    if (target == ProbeTarget::cka && j.contains("cka_mean") && !j["cka_mean"].is_null())
                        target_value = j["cka_mean"].get<double>();
                    if (target == ProbeTarget::mc && j.contains("mc_mean") && !j["mc_mean"].is_null())
                        target_value = j["mc_mean"].get<double>();
                    if (target == ProbeTarget::log_hessian_trace && j.contains("hessian_trace") &&
                        !j["hessian_trace"].is_null())
                        target_value = std::log10(j["hessian_trace"].get<double>());
                } catch (const std::exception&) {
                }
                break;
            }
        }

        WeightFeatures wf = weight_features(params);
        feats.push_back(std::move(wf.values));
        rows.targets.push_back(target_value);
        // group key: the cell minus its seed, so seeds never straddle the split
        char buf[64];
        std::snprintf(buf, sizeof buf, "w%d_b%d_lr%g", info.cell.width, info.cell.batch_size,
                      info.cell.peak_lr);
        rows.groups.push_back(buf);
    }
    if (feats.empty()) throw sample_size_error("no usable probe rows in the manifest");
    rows.features = Matrix(feats.size(), feats.front().size());
    for (std::size_t i = 0; i < feats.size(); ++i)
        std::copy(feats[i].begin(), feats[i].end(), rows.features.row(i));
    return rows;
}

ProbeReport run_probe(const ZooManifest& manifest, ProbeTarget target, std::uint64_t split_seed,
                      double train_fraction, const std::vector<double>& lambda_grid) {
    return run_probe_rows(probe_rows_from_manifest(manifest, target), target, split_seed, train_fraction,
                          lambda_grid);
}

void export_features_csv(const ZooManifest& manifest, ProbeTarget target,
                         const std::filesystem::path& path) {
    const ProbeRows rows = probe_rows_from_manifest(manifest, target);

    // recover the feature names from any done cell's layout
    std::vector<std::string> names;
    for (const auto& [key, info] : manifest.cells) {
        if (info.cell.status != CellStatus::done) continue;
        const auto epochs = list_checkpoint_epochs(manifest.root / info.directory);
        if (epochs.empty()) continue;
        names = weight_features(load_checkpoint(checkpoint_dir(manifest.root / info.directory, epochs.back())))
                    .feature_names;
        break;
    }
    if (names.size() != rows.features.cols) throw schema_error("feature names do not match the rows");

    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path.string());
    out << "cell," << to_string(target);
    for (const std::string& n : names) out << "," << n;
    out << "\n";
    char buf[40];
    for (std::size_t i = 0; i < rows.features.rows; ++i) {
        out << rows.groups[i];
        std::snprintf(buf, sizeof buf, "%.17g", rows.targets[i]);
        out << "," << buf;
        for (std::size_t j = 0; j < rows.features.cols; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", rows.features(i, j));
            out << "," << buf;
        }
        out << "\n";
    }
    if (!out) throw io_error("short write to " + path.string());
}

}  // namespace phasezoo
