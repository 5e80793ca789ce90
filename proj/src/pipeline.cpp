#include "phasezoo/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "phasezoo/rng.hpp"

namespace fs = std::filesystem;

namespace phasezoo {

namespace {

Dataset subsample(const Dataset& full, std::size_t n, std::uint64_t seed) {
    if (n >= full.size()) return full;
    std::vector<std::size_t> idx(full.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(mix_seed(seed, 0x7375627573ULL));
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
    Batch b = take_batch(full, std::span<const std::size_t>(idx.data(), n));
    Dataset out = full;
    out.inputs = std::move(b.inputs);
    out.labels = std::move(b.labels);
    return out;
}

json curvature_to_json(const CurvatureReport& rep) {
    json j{{"lambda_max", rep.lambda_max},
           {"hessian_trace", rep.trace_estimate},
           {"probes", rep.probes_used},
           {"power_iters", rep.power_iters},
           {"converged", rep.converged}};
    if (rep.trace_stderr) {
        j["trace_stderr"] = *rep.trace_stderr;
    } else {
        j["trace_stderr"] = nullptr;
    }
    return j;
}

}  // namespace

ZooManifest compute_metrics(const ZooManifest& manifest, const MetricOptions& opts, int workers) {
    if (workers < 1) throw precondition_error("workers must be >= 1");
    const DataPair data = make_data(manifest.grid.dataset);
    const Dataset metric_data =
        opts.metric_samples ? subsample(data.train, *opts.metric_samples, opts.seed) : data.train;

    // per-cell curvature over the worker pool
    std::vector<const CellInfo*> done_cells;
    for (const auto& [key, info] : manifest.cells)
        if (info.cell.status == CellStatus::done) done_cells.push_back(&info);

    struct CellMetrics {
        json curvature;
        json per_epoch = json::object();
        bool ok = false;
    };
    std::vector<CellMetrics> results(done_cells.size());

    std::atomic<std::size_t> next{0};
    const auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= done_cells.size()) break;
            const CellInfo& info = *done_cells[i];
            try {
                const ModelSpec spec = cell_model_spec(manifest.grid, info.cell);
                const fs::path cell_dir = manifest.root / info.directory;
                const std::vector<int> epochs = list_checkpoint_epochs(cell_dir);
                if (epochs.empty()) continue;

                CurvatureOptions copts;
                copts.power_max_iters = opts.power_max_iters;
                copts.power_tol = opts.power_tol;
                copts.probes = opts.probes;
                copts.seed = mix_seed(opts.seed, info.cell.seed);

                const ParameterVector final_params =
                    load_checkpoint(checkpoint_dir(cell_dir, epochs.back()));
                results[i].curvature =
                    curvature_to_json(compute_curvature(final_params, spec, metric_data, copts));
                if (opts.every_checkpoint) {
                    for (int epoch : epochs) {
                        const ParameterVector p = load_checkpoint(checkpoint_dir(cell_dir, epoch));
                        results[i].per_epoch[std::to_string(epoch)] =
                            curvature_to_json(compute_curvature(p, spec, metric_data, copts));
                    }
                }
                results[i].ok = true;
            } catch (const std::exception&) {
                results[i].ok = false;
            }
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    // pairwise metrics per (width, temperature) config over its seeds
    struct PairJson {
        json mc_mean = nullptr;
        json cka_mean = nullptr;
        json pairs = json::array();
    };
    std::map<std::string, PairJson> config_pairs;
    const GridSpec& grid = manifest.grid;
    for (std::size_t r = 0; r < grid.widths.size(); ++r) {
        for (std::size_t c = 0; c < grid.temperature_count(); ++c) {
            std::vector<std::pair<std::uint64_t, ParameterVector>> models;
            ModelSpec spec = grid.base_model;
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
                spec = cell_model_spec(grid, cell);
                try {
                    const fs::path cell_dir = manifest.root / it->second.directory;
                    const auto epochs = list_checkpoint_epochs(cell_dir);
                    models.emplace_back(s, load_checkpoint(checkpoint_dir(cell_dir, epochs.back())));
                } catch (const std::exception&) {
                    complete = false;
                    break;
                }
            }
            const std::string config_key = "w" + std::to_string(grid.widths[r]) + "_t" +
                                           grid.temperature_label(c);
            PairJson pj;
            if (complete && models.size() >= 2) {
                PairwiseOptions popts;
                popts.bezier_steps = opts.bezier_steps;
                popts.bezier_lr = opts.bezier_lr;
                popts.t_grid_size = opts.t_grid_size;
                popts.mc_selection = opts.mc_selection;
                popts.seed = opts.seed;
                try {
                    const PairwiseReport rep = pairwise_metrics(models, spec, metric_data, popts);
                    pj.mc_mean = rep.mc_mean;
                    pj.cka_mean = rep.cka_mean;
                    for (const PairMetrics& pm : rep.pairs)
                        pj.pairs.push_back(json{{"seed_a", pm.seed_a},
                                                {"seed_b", pm.seed_b},
                                                {"mc", pm.mc},
                                                {"t_star", pm.t_star},
                                                {"cka", pm.cka}});
                } catch (const std::exception&) {
                }
            }
            config_pairs[config_key] = std::move(pj);
        }
    }

    // one metrics.json per cell: curvature of its own model + its config's
    // pairwise results
    for (std::size_t i = 0; i < done_cells.size(); ++i) {
        const CellInfo& info = *done_cells[i];
        if (!results[i].ok) continue;
        const std::string config_key =
            "w" + std::to_string(info.cell.width) + "_t" +
            (grid.temperature_axis == TemperatureAxis::batch_size
                 ? std::to_string(info.cell.batch_size)
                 : [&] {
                       char buf[32];
                       std::snprintf(buf, sizeof buf, "%g", info.cell.peak_lr);
                       return std::string(buf);
                   }());
        json j = results[i].curvature;
        const auto it = config_pairs.find(config_key);
        if (it != config_pairs.end()) {
            j["mc_mean"] = it->second.mc_mean;
            j["cka_mean"] = it->second.cka_mean;
            j["pairs"] = it->second.pairs;
        } else {
            j["mc_mean"] = nullptr;
            j["cka_mean"] = nullptr;
            j["pairs"] = json::array();
        }
        if (opts.every_checkpoint) j["epochs"] = results[i].per_epoch;
        write_json_atomic(manifest.root / info.directory / "metrics.json", j);
    }
    return load_manifest(manifest.root);
}

void save_thresholds(const fs::path& path, const PhaseThresholds& t) {
    json j{{"tau_loss", t.tau_loss},
           {"tau_mc", t.tau_mc},
           {"tau_cka", t.tau_cka},
           {"tau_trace", std::isinf(t.tau_trace) ? json(nullptr) : json(t.tau_trace)},
           {"low_confidence", t.low_confidence},
           {"provisional", t.provisional}};
    if (std::isfinite(t.fit_accuracy)) j["fit_accuracy"] = t.fit_accuracy;
    write_json_atomic(path, j);
}

PhaseThresholds load_thresholds(const fs::path& path) {
    const json j = read_json(path);
    PhaseThresholds t;
    t.tau_loss = j.at("tau_loss").get<double>();
    t.tau_mc = j.at("tau_mc").get<double>();
    t.tau_cka = j.at("tau_cka").get<double>();
    t.tau_trace = j.at("tau_trace").is_null() ? std::numeric_limits<double>::infinity()
                                              : j.at("tau_trace").get<double>();
    t.low_confidence = j.value("low_confidence", false);
    t.provisional = j.value("provisional", false);
    t.fit_accuracy = j.value("fit_accuracy", std::numeric_limits<double>::quiet_NaN());
    t.validate();
    return t;
}

json to_json(const HpoReport& rep) {
    json trials = json::array();
    for (const HpoTrial& t : rep.per_trial) {
        trials.push_back(json{{"start_width", t.start_width},
                              {"start_temp", t.start_temp},
                              {"action", to_string(t.action.kind)},
                              {"magnitude", t.action.magnitude},
                              {"end_width", t.end_width},
                              {"end_temp", t.end_temp},
                              {"gain", t.gain}});
    }
    return json{{"policy", to_string(rep.policy)}, {"mean_gain", rep.mean_gain},
                {"std_gain", rep.std_gain},       {"trials", rep.trials},
                {"skipped", rep.skipped},         {"paired", rep.paired},
                {"exhaustive", rep.exhaustive},   {"per_trial", trials}};
}

json to_json(const ProbeReport& rep) {
    return json{{"target", to_string(rep.target)},
                {"r2_test", rep.r2_test},
                {"ridge_lambda", rep.ridge_lambda},
                {"train_fraction", rep.train_fraction},
                {"split_seed", rep.split_seed},
                {"n_train_rows", rep.n_train_rows},
                {"n_test_rows", rep.n_test_rows},
                {"dropped_rows", rep.dropped_rows},
                {"standardized", rep.standardized}};
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

void write_provenance(const fs::path& root, const std::string& command, const json& resolved_config) {
    json prov{{"command", command},
              {"config", resolved_config},
              {"config_hash", hex64(fnv1a(resolved_config.dump()))},
              {"tool_version", kToolVersion}};
    // csv-backed datasets get a content hash so reruns can detect input drift
    const auto csv_path = [&]() -> std::string {
        if (!resolved_config.is_object() || !resolved_config.contains("grid")) return {};
        const json& grid = resolved_config.at("grid");
        if (!grid.contains("dataset")) return {};
        const json& ds = grid.at("dataset");
        if (ds.value("generator", std::string()) != "csv") return {};
        return ds.value("csv_path", std::string());
    }();
    if (!csv_path.empty() && fs::exists(csv_path)) {
        std::ifstream in(csv_path, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        prov["input_hashes"] = json{{csv_path, hex64(fnv1a(ss.str()))}};
    }
    write_json_atomic(root / "provenance.json", prov);
}

// ---------------------------------------------------------------------------
// pipeline config with unknown-key rejection

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& path) {
    if (!j.is_object()) throw schema_error("config node " + path + " must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) throw schema_error("unknown config key: " + path + key);
    }
}

}  // namespace

PipelineConfig pipeline_config_from_json(const json& j) {
    reject_unknown(j, {"zoo_root", "grid", "metrics", "phase", "hpo", "downstream", "probe", "workers"},
                   "");
    PipelineConfig cfg;
    cfg.zoo_root = j.value("zoo_root", std::string());
    cfg.grid = grid_spec_from_json(j.at("grid"));
    if (j.contains("grid")) {
        reject_unknown(j.at("grid"),
                       {"widths", "batch_sizes", "peak_lrs", "seeds", "temperature_axis", "base_model",
                        "base_train", "dataset"},
                       "grid.");
        reject_unknown(j.at("grid").at("base_model"),
                       {"input_dim", "hidden_width", "num_hidden_layers", "output_dim", "activation",
                        "init_scheme", "seed"},
                       "grid.base_model.");
        reject_unknown(j.at("grid").at("base_train"),
                       {"epochs", "batch_size", "peak_lr", "momentum", "weight_decay", "schedule",
                        "warmup_fraction", "checkpoint_every", "seed", "strict_eval"},
                       "grid.base_train.");
        reject_unknown(j.at("grid").at("dataset"),
                       {"generator", "n", "classes", "noise", "separation", "csv_path", "test_fraction",
                        "seed"},
                       "grid.dataset.");
    }
    if (j.contains("metrics")) {
        const json& m = j.at("metrics");
        reject_unknown(m,
                       {"power_max_iters", "power_tol", "probes", "bezier_steps", "bezier_lr",
                        "t_grid_size", "mc_argmin", "metric_samples", "every_checkpoint", "seed"},
                       "metrics.");
        cfg.metrics.power_max_iters = m.value("power_max_iters", cfg.metrics.power_max_iters);
        cfg.metrics.power_tol = m.value("power_tol", cfg.metrics.power_tol);
        cfg.metrics.probes = m.value("probes", cfg.metrics.probes);
        cfg.metrics.bezier_steps = m.value("bezier_steps", cfg.metrics.bezier_steps);
        cfg.metrics.bezier_lr = m.value("bezier_lr", cfg.metrics.bezier_lr);
        cfg.metrics.t_grid_size = m.value("t_grid_size", cfg.metrics.t_grid_size);
        if (m.value("mc_argmin", false)) cfg.metrics.mc_selection = McSelection::min_abs_deviation;
        if (m.contains("metric_samples") && !m.at("metric_samples").is_null())
            cfg.metrics.metric_samples = m.at("metric_samples").get<std::size_t>();
        cfg.metrics.every_checkpoint = m.value("every_checkpoint", false);
        cfg.metrics.seed = m.value("seed", cfg.metrics.seed);
    }
    if (j.contains("phase")) {
        reject_unknown(j.at("phase"), {"bootstrap", "labels_path"}, "phase.");
        cfg.phase_bootstrap = j.at("phase").value("bootstrap", true);
        cfg.phase_labels_path = j.at("phase").value("labels_path", std::string());
    }
    if (j.contains("hpo")) {
        reject_unknown(j.at("hpo"), {"trials", "seed", "exhaustive"}, "hpo.");
        cfg.hpo.trials = j.at("hpo").value("trials", 50);
        cfg.hpo.seed = j.at("hpo").value("seed", 0);
        cfg.hpo.exhaustive = j.at("hpo").value("exhaustive", false);
    }
    if (j.contains("downstream")) {
        const json& d = j.at("downstream");
        reject_unknown(d, {"sparsity", "last_k", "alpha", "target", "finetune", "reinit_head"},
                       "downstream.");
        cfg.downstream.sparsity = d.value("sparsity", 0.5);
        cfg.downstream.last_k = d.value("last_k", 3);
        cfg.downstream.alpha = d.value("alpha", 0.5);
        if (d.contains("target")) cfg.downstream.target = dataset_spec_from_json(d.at("target"));
        if (d.contains("finetune")) cfg.downstream.finetune_config = train_config_from_json(d.at("finetune"));
        cfg.downstream.reinit_head = d.value("reinit_head", true);
    }
    if (j.contains("probe")) {
        const json& p = j.at("probe");
        reject_unknown(p, {"target", "split_seed", "train_fraction", "lambda_grid"}, "probe.");
        cfg.probe_target = probe_target_from_string(p.value("target", std::string("test_acc")));
        cfg.probe_split_seed = p.value("split_seed", 0);
        cfg.probe_train_fraction = p.value("train_fraction", 0.8);
        if (p.contains("lambda_grid")) cfg.probe_lambda_grid = p.at("lambda_grid").get<std::vector<double>>();
    }
    cfg.workers = j.value("workers", 1);
    return cfg;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
    return pipeline_config_from_json(read_json(path));
}

}  // namespace phasezoo
