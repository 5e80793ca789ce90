#include "phasezoo/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "phasezoo/rng.hpp"

namespace phasezoo {

ParameterVector prune_magnitude(const ParameterVector& params, double sparsity) {
    if (sparsity < 0.0 || sparsity > 1.0) throw precondition_error("sparsity must be in [0,1]");

    std::vector<std::size_t> weight_idx;
    for (std::size_t t = 0; t < params.layout.size(); ++t) {
        const TensorDesc& d = params.layout[t];
        if (d.kind != TensorKind::weight) continue;
        for (std::size_t i = 0; i < d.size(); ++i) weight_idx.push_back(d.offset + i);
    }
    const std::size_t keep_cut =
        static_cast<std::size_t>(std::floor(sparsity * static_cast<double>(weight_idx.size())));

    std::sort(weight_idx.begin(), weight_idx.end(), [&](std::size_t a, std::size_t b) {
        const double ma = std::abs(params.values[a]);
        const double mb = std::abs(params.values[b]);
        return ma != mb ? ma < mb : a < b;
    });

    ParameterVector pruned = params;
    for (std::size_t i = 0; i < keep_cut; ++i) pruned.values[weight_idx[i]] = 0.0;
    return pruned;
}

namespace {

void softmax_inplace(Matrix& logits) {
    for (std::size_t i = 0; i < logits.rows; ++i) {
        double* row = logits.row(i);
        double mx = row[0];
        for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < logits.cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (std::size_t j = 0; j < logits.cols; ++j) row[j] /= sum;
    }
}

}  // namespace

double ensemble_accuracy(const std::vector<ParameterVector>& models, const ModelSpec& spec,
                         const Dataset& data) {
    if (models.empty()) throw precondition_error("ensemble needs >= 1 model");
    if (data.size() == 0) throw precondition_error("ensemble on empty data");
    Batch batch = full_batch(data);

    Matrix mean_probs(batch.size(), static_cast<std::size_t>(spec.output_dim));
    for (const ParameterVector& m : models) {
        if (!m.same_layout(models.front())) throw shape_error("ensemble members have different layouts");
        Matrix probs = forward(m, spec, batch);
        softmax_inplace(probs);
        for (std::size_t i = 0; i < probs.data.size(); ++i) mean_probs.data[i] += probs.data[i];
    }
    for (double& v : mean_probs.data) v /= static_cast<double>(models.size());

    std::size_t correct = 0;
    for (std::size_t i = 0; i < mean_probs.rows; ++i) {
        const double* row = mean_probs.row(i);
        std::size_t arg = 0;
        for (std::size_t j = 1; j < mean_probs.cols; ++j)
            if (row[j] > row[arg]) arg = j;
        if (arg == static_cast<std::size_t>(batch.labels[i])) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(mean_probs.rows);
}

ParameterVector average_naive(const std::vector<ParameterVector>& models) {
    if (models.empty()) throw precondition_error("average of zero models");
    bool all_same = true;
    for (const ParameterVector& m : models) {
        if (!m.same_layout(models.front())) throw shape_error("averaged models have different layouts");
        all_same = all_same && m.values == models.front().values;
    }
    // the mean of identical vectors is that vector; sum/divide would round
    if (all_same) return models.front();

    ParameterVector mean = zeros_like(models.front());
    for (const ParameterVector& m : models)
        for (std::size_t i = 0; i < mean.size(); ++i) mean.values[i] += m.values[i];
    for (double& v : mean.values) v /= static_cast<double>(models.size());
    return mean;
}

ParameterVector interpolate(const ParameterVector& a, const ParameterVector& b, double alpha) {
    if (!a.same_layout(b)) throw shape_error("interpolation endpoints have different layouts");
    if (alpha < 0.0 || alpha > 1.0) throw precondition_error("alpha must be in [0,1]");
    ParameterVector out = zeros_like(a);
    for (std::size_t i = 0; i < a.size(); ++i)
        out.values[i] = (1.0 - alpha) * a.values[i] + alpha * b.values[i];
    return out;
}

ParameterVector average_epochs(const RunRecord& run, int last_k) {
    if (last_k < 1) throw precondition_error("last_k must be >= 1");
    if (run.checkpoints.size() < static_cast<std::size_t>(last_k))
        throw precondition_error("run has only " + std::to_string(run.checkpoints.size()) +
                                 " checkpoints, need " + std::to_string(last_k));
    std::vector<ParameterVector> tail;
    for (std::size_t i = run.checkpoints.size() - static_cast<std::size_t>(last_k);
         i < run.checkpoints.size(); ++i)
        tail.push_back(run.checkpoints[i].second);
    return average_naive(tail);
}

// ---------------------------------------------------------------------------
// assignment + permutation alignment

std::vector<int> solve_assignment_min(const Matrix& cost) {
    if (cost.rows != cost.cols || cost.rows == 0) throw shape_error("assignment needs a square matrix");
    const int n = static_cast<int>(cost.rows);
    constexpr double kInf = std::numeric_limits<double>::infinity();

    // potentials / shortest augmenting path formulation
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<int> p(static_cast<std::size_t>(n) + 1, 0), way(static_cast<std::size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n) + 1, kInf);
        std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const int i0 = p[static_cast<std::size_t>(j0)];
            int j1 = 0;
            double delta = kInf;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost(static_cast<std::size_t>(i0 - 1), static_cast<std::size_t>(j - 1)) -
                                   u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0);
    }

    std::vector<int> assignment(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= n; ++j)
        if (p[static_cast<std::size_t>(j)] > 0)
            assignment[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
    return assignment;
}

std::vector<int> solve_assignment_max(const Matrix& score) {
    Matrix neg = score;
    for (double& v : neg.data) v = -v;
    return solve_assignment_min(neg);
}

ParameterVector apply_permutation(const ParameterVector& params, const ModelSpec& spec,
                                  const PermutationMap& map) {
    spec.validate();
    if (map.layer_perms.size() != static_cast<std::size_t>(spec.num_hidden_layers))
        throw shape_error("permutation map must cover every hidden layer");
    const std::size_t w = static_cast<std::size_t>(spec.hidden_width);
    for (const auto& perm : map.layer_perms) {
        if (perm.size() != w) throw shape_error("permutation size does not match the hidden width");
        std::vector<char> seen(w, 0);
        for (int j : perm) {
            if (j < 0 || static_cast<std::size_t>(j) >= w || seen[static_cast<std::size_t>(j)])
                throw shape_error("permutation is not a bijection on [0, w)");
            seen[static_cast<std::size_t>(j)] = 1;
        }
    }

    std::vector<Matrix> tensors = split_tensors(params);
    // rows of layer l, then columns of layer l+1
    for (int l = 0; l < spec.num_hidden_layers; ++l) {
        const std::vector<int>& perm = map.layer_perms[static_cast<std::size_t>(l)];
        Matrix& wmat = tensors[2 * static_cast<std::size_t>(l)];
        Matrix& bias = tensors[2 * static_cast<std::size_t>(l) + 1];
        Matrix wnew = wmat;
        Matrix bnew = bias;
        for (std::size_t i = 0; i < w; ++i) {
            const std::size_t src = static_cast<std::size_t>(perm[i]);
            std::copy_n(wmat.row(src), wmat.cols, wnew.row(i));
            bnew(i, 0) = bias(src, 0);
        }
        wmat = std::move(wnew);
        bias = std::move(bnew);

        Matrix& next = tensors[2 * static_cast<std::size_t>(l) + 2];
        Matrix nnew = next;
        for (std::size_t r = 0; r < next.rows; ++r)
            for (std::size_t c = 0; c < w; ++c) nnew(r, c) = next(r, static_cast<std::size_t>(perm[c]));
        next = std::move(nnew);
    }
    return join_tensors(params.layout, tensors);
}

std::pair<PermutationMap, ParameterVector> align_permutations(const ParameterVector& reference,
                                                              const ParameterVector& candidate,
                                                              const ModelSpec& spec) {
    spec.validate();
    if (!reference.same_layout(candidate)) throw shape_error("alignment inputs have different layouts");
    if (reference.size() != spec.parameter_count()) throw shape_error("parameters do not match spec");

    const std::size_t w = static_cast<std::size_t>(spec.hidden_width);
    const std::vector<Matrix> ref = split_tensors(reference);
    const std::vector<Matrix> cand = split_tensors(candidate);

    PermutationMap map;
    std::vector<int> upstream;  // permutation applied to the previous layer's units

    for (int l = 0; l < spec.num_hidden_layers; ++l) {
        const Matrix& wr = ref[2 * static_cast<std::size_t>(l)];
        const Matrix& br = ref[2 * static_cast<std::size_t>(l) + 1];
        const Matrix& wc = cand[2 * static_cast<std::size_t>(l)];
        const Matrix& bc = cand[2 * static_cast<std::size_t>(l) + 1];

        Matrix score(w, w);
        for (std::size_t i = 0; i < w; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                double s = br(i, 0) * bc(j, 0);
                for (std::size_t k = 0; k < wr.cols; ++k) {
                    const std::size_t ck = (l == 0 || upstream.empty())
                                               ? k
                                               : static_cast<std::size_t>(upstream[k]);
                    s += wr(i, k) * wc(j, ck);
                }
                score(i, j) = s;
            }
        }
        map.layer_perms.push_back(solve_assignment_max(score));
        upstream = map.layer_perms.back();
    }
    return {map, apply_permutation(candidate, spec, map)};
}

// ---------------------------------------------------------------------------
// grid sweep

const char* to_string(DownstreamMethod m) {
    switch (m) {
        case DownstreamMethod::prune: return "prune";
        case DownstreamMethod::ensemble: return "ensemble";
        case DownstreamMethod::avg_naive: return "avg_naive";
        case DownstreamMethod::avg_aligned: return "avg_aligned";
        case DownstreamMethod::avg_epochs: return "avg_epochs";
        case DownstreamMethod::interpolate: return "interpolate";
        default: return "finetune";
    }
}

DownstreamMethod downstream_method_from_string(const std::string& s) {
    if (s == "prune") return DownstreamMethod::prune;
    if (s == "ensemble") return DownstreamMethod::ensemble;
    if (s == "avg_naive") return DownstreamMethod::avg_naive;
    if (s == "avg_aligned") return DownstreamMethod::avg_aligned;
    if (s == "avg_epochs") return DownstreamMethod::avg_epochs;
    if (s == "interpolate") return DownstreamMethod::interpolate;
    if (s == "finetune") return DownstreamMethod::finetune;
    throw schema_error("unknown downstream method: " + s);
}

FinetuneResult finetune(const ParameterVector& params, const ModelSpec& spec, const DataPair& target,
                        const TrainConfig& config, bool reinit_head) {
    spec.validate();
    if (target.train.input_dim() != spec.input_dim)
        throw shape_error("target input_dim does not match the model");
    if (target.train.num_classes != spec.output_dim && !reinit_head)
        throw invalid_spec_error("class count changed from " + std::to_string(spec.output_dim) + " to " +
                                 std::to_string(target.train.num_classes) +
                                 "; finetune requires reinit_head");

    FinetuneResult result;
    result.spec = spec;
    ParameterVector start = params;
    if (reinit_head) {
        result.spec.output_dim = target.train.num_classes;
        ParameterVector shell = build_model(result.spec);  // provides the new layout
        // body transfers bit-identically; only the head is fresh
        Rng rng(mix_seed(config.seed, 0x68656164ULL));
        const std::size_t head_w = shell.layout.size() - 2;
        const double bound = std::sqrt(3.0 / static_cast<double>(shell.layout[head_w].cols)) *
                             (spec.activation == Activation::relu ? std::sqrt(2.0) : 5.0 / 3.0);
        for (double& v : shell.tensor(head_w)) v = rng.uniform(-bound, bound);
        const double b_bound = 1.0 / std::sqrt(static_cast<double>(shell.layout[head_w].cols));
        for (double& v : shell.tensor(head_w + 1)) v = rng.uniform(-b_bound, b_bound);
        for (std::size_t t = 0; t + 2 < shell.layout.size(); ++t) {
            std::span<const double> src = params.tensor(t);
            std::span<double> dst = shell.tensor(t);
            std::copy(src.begin(), src.end(), dst.begin());
        }
        start = std::move(shell);
    }
    result.run = train_from(std::move(start), result.spec, target, config);
    return result;
}

namespace {

std::optional<ParameterVector> final_params_from_disk(const ZooManifest& manifest, const CellInfo& info) {
    try {
        const auto epochs = list_checkpoint_epochs(manifest.root / info.directory);
        if (epochs.empty()) return std::nullopt;
        return load_checkpoint(checkpoint_dir(manifest.root / info.directory, epochs.back()));
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

}  // namespace

GridTable downstream_grid(const ZooManifest& manifest, DownstreamMethod method,
                          const DownstreamParams& params) {
    const GridSpec& grid = manifest.grid;
    if (method == DownstreamMethod::interpolate && grid.seeds.size() < 2)
        throw schema_error("interpolate is pairwise and needs >= 2 seeds");

    const DataPair data = make_data(grid.dataset);
    const DataPair target = method == DownstreamMethod::finetune ? make_data(params.target) : DataPair{};

    GridTable table;
    for (int w : grid.widths) table.row_labels.push_back(std::to_string(w));
    table.col_labels = grid.temperature_labels();
    table.values.assign(table.row_labels.size() * table.col_labels.size(), std::nullopt);

    for (std::size_t r = 0; r < grid.widths.size(); ++r) {
        for (std::size_t c = 0; c < grid.temperature_count(); ++c) {
            // gather this config's per-seed models
            std::vector<ParameterVector> models;
            std::vector<const CellInfo*> infos;
            bool complete = true;
            for (std::uint64_t s : grid.seeds) {
                GridCell cell;
                cell.width = grid.widths[r];
                if (grid.temperature_axis == TemperatureAxis::batch_size) {
                    cell.batch_size = grid.batch_sizes[c];
                    cell.peak_lr = grid.base_train.peak_lr;
                } else {
                    cell.batch_size = grid.base_train.batch_size;
                    cell.peak_lr = grid.peak_lrs[c];
                }
                cell.seed = s;
                const auto it = manifest.cells.find(cell_key(grid, cell));
                if (it == manifest.cells.end() || it->second.cell.status != CellStatus::done) {
                    complete = false;
                    break;
                }
                auto p = final_params_from_disk(manifest, it->second);
                if (!p) {
                    complete = false;
                    break;
                }
                models.push_back(std::move(*p));
                infos.push_back(&it->second);
            }
            if (!complete) continue;

            GridCell proto;
            proto.width = grid.widths[r];
            proto.batch_size = grid.temperature_axis == TemperatureAxis::batch_size
                                   ? grid.batch_sizes[c]
                                   : grid.base_train.batch_size;
            proto.peak_lr = grid.temperature_axis == TemperatureAxis::peak_lr ? grid.peak_lrs[c]
                                                                              : grid.base_train.peak_lr;
            const ModelSpec spec = cell_model_spec(grid, proto);

            try {
                double value = 0.0;
                switch (method) {
                    case DownstreamMethod::prune: {
                        for (const ParameterVector& m : models)
                            value += evaluate(prune_magnitude(m, params.sparsity), spec, data.test).second;
                        value /= static_cast<double>(models.size());
                        break;
                    }
                    case DownstreamMethod::ensemble:
                        value = ensemble_accuracy(models, spec, data.test);
                        break;
                    case DownstreamMethod::avg_naive:
                        value = evaluate(average_naive(models), spec, data.test).second;
                        break;
                    case DownstreamMethod::avg_aligned: {
                        std::vector<ParameterVector> aligned{models.front()};
                        for (std::size_t i = 1; i < models.size(); ++i)
                            aligned.push_back(align_permutations(models.front(), models[i], spec).second);
                        value = evaluate(average_naive(aligned), spec, data.test).second;
                        break;
                    }
                    case DownstreamMethod::avg_epochs: {
                        std::size_t got = 0;
                        for (std::size_t i = 0; i < models.size(); ++i) {
                            const auto epochs = list_checkpoint_epochs(manifest.root / infos[i]->directory);
                            if (epochs.size() < static_cast<std::size_t>(params.last_k)) continue;
                            std::vector<ParameterVector> tail;
                            for (std::size_t e = epochs.size() - static_cast<std::size_t>(params.last_k);
                                 e < epochs.size(); ++e)
                                tail.push_back(load_checkpoint(
                                    checkpoint_dir(manifest.root / infos[i]->directory, epochs[e])));
                            value += evaluate(average_naive(tail), spec, data.test).second;
                            ++got;
                        }
                        if (got == 0) throw precondition_error("no seed had enough checkpoints");
                        value /= static_cast<double>(got);
                        break;
                    }
                    case DownstreamMethod::interpolate: {
                        std::size_t pairs = 0;
                        for (std::size_t i = 0; i < models.size(); ++i)
                            for (std::size_t j = i + 1; j < models.size(); ++j) {
                                value += evaluate(interpolate(models[i], models[j], params.alpha), spec,
                                                  data.test)
                                             .second;
                                ++pairs;
                            }
                        if (pairs == 0) throw precondition_error("interpolate needs >= 2 seeds");
                        value /= static_cast<double>(pairs);
                        break;
                    }
                    case DownstreamMethod::finetune: {
                        for (const ParameterVector& m : models) {
                            FinetuneResult ft =
                                finetune(m, spec, target, params.finetune_config, params.reinit_head);
                            value += ft.run.final.test_acc;
                        }
                        value /= static_cast<double>(models.size());
                        break;
                    }
                }
                table.at(r, c) = value;
            } catch (const std::exception&) {
                // per-cell failure stays NA
            }
        }
    }
    return table;
}

}  // namespace phasezoo
