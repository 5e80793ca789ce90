// phasezoo: generate model-zoo grids over load x temperature, annotate them
// with loss-landscape metrics, classify phases, and run the downstream
// experiments. Every command prints a single machine-readable JSON summary
// line; exit 2 = invalid config, exit 3 = partial zoo.

#include <CLI11.hpp>
#include <functional>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "phasezoo/pipeline.hpp"

namespace fs = std::filesystem;
using namespace phasezoo;

namespace {

struct GlobalArgs {
    std::string zoo;
    std::string config;
    int workers = 1;
    std::uint64_t seed = 0;
    bool workers_set = false;
    bool seed_set = false;
};

void emit(const json& summary) { std::cout << summary.dump() << "\n"; }

fs::path require_zoo(const GlobalArgs& g) {
    if (!g.zoo.empty()) return g.zoo;
    throw schema_error("missing --zoo path");
}

// exit 3 when any cell is still pending
void require_complete(const ZooManifest& manifest) {
    std::vector<std::string> pending;
    for (const auto& [key, info] : manifest.cells)
        if (info.cell.status == CellStatus::pending) pending.push_back(key);
    if (pending.empty()) return;
    json listed = json::array();
    for (std::size_t i = 0; i < std::min<std::size_t>(pending.size(), 20); ++i) listed.push_back(pending[i]);
    emit(json{{"error", "partial_zoo"},
              {"pending_cells", pending.size()},
              {"pending", listed}});
    std::exit(3);
}

PipelineConfig config_for_zoo(const GlobalArgs& g) {
    if (!g.config.empty()) return load_pipeline_config(g.config);
    const fs::path stored = fs::path(require_zoo(g)) / "pipeline_config.json";
    if (fs::exists(stored)) return load_pipeline_config(stored);
    throw schema_error("no --config given and no pipeline_config.json in the zoo root");
}

std::vector<MetricRecord> complete_records(const ZooManifest& manifest, std::vector<std::string>* keys) {
    std::vector<MetricRecord> out;
    for (const auto& rec : seed_mean_records(manifest)) {
        if (!rec) continue;
        out.push_back(*rec);
        if (keys) keys->push_back(rec->cell);
    }
    return out;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"phase-structured model zoo toolkit"};
    app.require_subcommand(1);
    GlobalArgs g;
    app.add_option("--zoo", g.zoo, "zoo root directory")->envname("PHASEZOO_ZOO");
    app.add_option("--config", g.config, "pipeline config file");
    app.add_option("--workers", g.workers, "worker threads")->check(CLI::PositiveNumber);
    app.add_option("--seed", g.seed, "seed override for the invoked command");

    // ---- zoo ----
    CLI::App* zoo = app.add_subcommand("zoo", "plan and train the grid");
    zoo->require_subcommand(1);
    CLI::App* zoo_plan = zoo->add_subcommand("plan", "plan the grid and write manifest.json");
    CLI::App* zoo_run = zoo->add_subcommand("run", "train every pending cell");

    // ---- metrics ----
    CLI::App* metrics = app.add_subcommand("metrics", "loss-landscape metrics");
    CLI::App* metrics_compute = metrics->add_subcommand("compute", "annotate cells with metrics");
    int probes_override = -1;
    std::int64_t metric_samples = -1;
    bool every_checkpoint = false, mc_argmin = false;
    metrics_compute->add_option("--probes", probes_override, "hutchinson probes");
    metrics_compute->add_option("--metric-samples", metric_samples,
                                "deterministic train subsample for hessian metrics");
    metrics_compute->add_flag("--every-checkpoint", every_checkpoint,
                              "curvature for every checkpoint, not just the final one");
    metrics_compute->add_flag("--mc-argmin", mc_argmin, "select t* by smallest absolute deviation");

    // ---- phase ----
    CLI::App* phase = app.add_subcommand("phase", "phase classification");
    phase->require_subcommand(1);
    CLI::App* phase_fit = phase->add_subcommand("fit", "fit thresholds from labels or bootstrap");
    std::string labels_path;
    bool bootstrap = false;
    phase_fit->add_option("--labels", labels_path, "json file mapping cell keys to phase labels");
    phase_fit->add_flag("--bootstrap", bootstrap, "derive provisional labels from quantiles");
    CLI::App* phase_classify = phase->add_subcommand("classify", "label the grid and export phases.csv");

    // ---- hpo ----
    CLI::App* hpo = app.add_subcommand("hpo", "one-step hyperparameter search");
    hpo->require_subcommand(1);
    CLI::App* hpo_run = hpo->add_subcommand("run", "paired random vs phase-aware experiment");
    int trials = 50;
    bool exhaustive = false;
    hpo_run->add_option("--trials", trials, "number of paired trials");
    hpo_run->add_flag("--exhaustive", exhaustive, "iterate every start cell once");

    // ---- downstream ----
    CLI::App* downstream = app.add_subcommand("downstream", "phase-sensitive downstream methods");
    downstream->require_subcommand(1);
    std::map<std::string, CLI::App*> dmethods;
    double sparsity = 0.5, alpha = 0.5;
    int last_k = 3;
    for (const char* name : {"prune", "ensemble", "avg_naive", "avg_aligned", "avg_epochs",
                             "interpolate", "finetune"}) {
        CLI::App* sub = downstream->add_subcommand(name, std::string("method: ") + name);
        sub->add_option("--sparsity", sparsity, "prune: fraction of weights to zero");
        sub->add_option("--last-k", last_k, "avg_epochs: checkpoints to average");
        sub->add_option("--alpha", alpha, "interpolate: interpolation point");
        dmethods[name] = sub;
    }

    // ---- probe ----
    CLI::App* probe = app.add_subcommand("probe", "weight-statistics probe");
    probe->require_subcommand(1);
    CLI::App* probe_run = probe->add_subcommand("run", "ridge probe with held-out R^2");
    std::string target = "test_acc";
    std::uint64_t split_seed = 0;
    double train_fraction = 0.8;
    probe_run->add_option("--target", target, "test_acc | ggap | cka | log_hessian_trace | mc");
    probe_run->add_option("--split-seed", split_seed, "cell split seed");
    probe_run->add_option("--train-fraction", train_fraction, "fraction of cells used for fitting");
    CLI::App* probe_features = probe->add_subcommand("features", "export probe rows as CSV");
    std::string features_target = "test_acc", features_out;
    probe_features->add_option("--target", features_target, "target column for the CSV");
    probe_features->add_option("--out", features_out, "output csv path");

    // ---- export ----
    CLI::App* export_cmd = app.add_subcommand("export", "grid exports");
    export_cmd->require_subcommand(1);
    CLI::App* export_grid_cmd = export_cmd->add_subcommand("grid", "write one field as CSV");
    std::string field, out_path;
    export_grid_cmd->add_option("--field", field, "grid field name")->required();
    export_grid_cmd->add_option("--out", out_path, "output csv path");

    // global flags may appear after any subcommand
    const std::function<void(CLI::App*)> allow_fallthrough = [&](CLI::App* cmd) {
        cmd->fallthrough();
        for (CLI::App* sub : cmd->get_subcommands({})) allow_fallthrough(sub);
    };
    for (CLI::App* sub : app.get_subcommands({})) allow_fallthrough(sub);

    CLI11_PARSE(app, argc, argv);
    g.workers_set = app.count("--workers") > 0;
    g.seed_set = app.count("--seed") > 0;

    if (zoo_plan->parsed()) {
        if (g.config.empty()) throw schema_error("zoo plan needs --config");
        PipelineConfig cfg = load_pipeline_config(g.config);
        fs::path root;
        if (!g.zoo.empty()) {
            root = g.zoo;
        } else if (!cfg.zoo_root.empty()) {
            root = cfg.zoo_root;
        } else {
            throw schema_error("missing zoo_root (config) or --zoo");
        }
        ZooManifest m = plan_zoo(cfg.grid, root);
        write_json_atomic(root / "pipeline_config.json", read_json(g.config));
        write_provenance(root, "zoo plan", read_json(g.config));
        emit(json{{"cmd", "zoo plan"}, {"zoo", root.string()}, {"cells", m.cells.size()}});
        std::printf("%zu cells planned\n", m.cells.size());
        return 0;
    }

    if (zoo_run->parsed()) {
        const fs::path root = require_zoo(g);
        PipelineConfig cfg = config_for_zoo(g);
        const int workers = g.workers_set ? g.workers : cfg.workers;
        ZooManifest m = run_grid(load_manifest(root), workers);
        write_provenance(root, "zoo run", to_json(m.grid));
        emit(json{{"cmd", "zoo run"},
                  {"zoo", root.string()},
                  {"done", m.count(CellStatus::done)},
                  {"diverged", m.count(CellStatus::diverged)},
                  {"pending", m.count(CellStatus::pending)}});
        return 0;
    }

    if (metrics_compute->parsed()) {
        const fs::path root = require_zoo(g);
        PipelineConfig cfg = config_for_zoo(g);
        ZooManifest m = load_manifest(root);
        require_complete(m);
        MetricOptions opts = cfg.metrics;
        if (probes_override > 0) opts.probes = probes_override;
        if (metric_samples > 0) opts.metric_samples = static_cast<std::size_t>(metric_samples);
        if (every_checkpoint) opts.every_checkpoint = true;
        if (mc_argmin) opts.mc_selection = McSelection::min_abs_deviation;
        if (g.seed_set) opts.seed = g.seed;
        const int workers = g.workers_set ? g.workers : cfg.workers;
        m = compute_metrics(m, opts, workers);
        write_provenance(root, "metrics compute", json{{"probes", opts.probes}});
        std::size_t annotated = 0;
        for (const auto& [key, info] : m.cells)
            if (fs::exists(root / info.directory / "metrics.json")) ++annotated;
        emit(json{{"cmd", "metrics compute"}, {"zoo", root.string()}, {"annotated", annotated}});
        return 0;
    }

    if (phase_fit->parsed()) {
        const fs::path root = require_zoo(g);
        ZooManifest m = load_manifest(root);
        require_complete(m);
        std::vector<std::string> keys;
        std::vector<MetricRecord> records = complete_records(m, &keys);
        if (records.empty()) throw schema_error("no cells with complete metrics; run `metrics compute`");

        if (!labels_path.empty() && bootstrap)
            throw schema_error("--labels and --bootstrap are mutually exclusive");
        PhaseThresholds fitted;
        bool fell_back = false;
        if (!labels_path.empty()) {
            const json lj = read_json(labels_path);
            std::vector<PhaseLabel> labels;
            std::vector<MetricRecord> labeled;
            for (std::size_t i = 0; i < records.size(); ++i) {
                if (lj.at("labels").contains(keys[i])) {
                    labels.push_back(phase_from_string(lj.at("labels").at(keys[i]).get<std::string>()));
                    labeled.push_back(records[i]);
                }
            }
            fitted = fit_thresholds(labeled, labels, FitBounds::from_records(labeled));
        } else {
            // bootstrap: provisional quantile thresholds label the records,
            // then the tree is refit on those labels when they cover all phases
            const PhaseThresholds provisional = bootstrap_thresholds(records);
            std::vector<PhaseLabel> labels;
            for (const MetricRecord& r : records) labels.push_back(classify(r, provisional));
            try {
                fitted = fit_thresholds(records, labels, FitBounds::from_records(records));
            } catch (const coverage_error&) {
                fitted = provisional;
                fell_back = true;
            }
        }
        save_thresholds(root / "phase_thresholds.json", fitted);
        write_provenance(root, "phase fit",
                         json{{"labels", labels_path}, {"bootstrap", labels_path.empty()}});
        emit(json{{"cmd", "phase fit"},
                  {"zoo", root.string()},
                  {"tau_loss", fitted.tau_loss},
                  {"tau_mc", fitted.tau_mc},
                  {"tau_cka", fitted.tau_cka},
                  {"provisional", fitted.provisional || fell_back},
                  {"low_confidence", fitted.low_confidence}});
        return 0;
    }

    if (phase_classify->parsed()) {
        const fs::path root = require_zoo(g);
        ZooManifest m = load_manifest(root);
        require_complete(m);
        const PhaseThresholds t = load_thresholds(root / "phase_thresholds.json");
        const PhaseGridResult res = phase_grid(m, t);
        fs::create_directories(root / "grids");
        export_grid_csv(res.table, root / "grids" / "phases.csv");

        json counts = json::object();
        for (const auto& v : res.table.values)
            if (v) counts[*v] = counts.value(*v, 0) + 1;
        json unlabeled = json::array();
        for (const std::string& u : res.unlabeled) unlabeled.push_back(u);
        write_json_atomic(root / "phases.json", json{{"counts", counts}, {"unlabeled", unlabeled}});
        emit(json{{"cmd", "phase classify"},
                  {"zoo", root.string()},
                  {"counts", counts},
                  {"unlabeled", res.unlabeled.size()},
                  {"csv", (root / "grids" / "phases.csv").string()}});
        return 0;
    }

    if (hpo_run->parsed()) {
        const fs::path root = require_zoo(g);
        PipelineConfig cfg = config_for_zoo(g);
        ZooManifest m = load_manifest(root);
        require_complete(m);
        const PhaseThresholds t = load_thresholds(root / "phase_thresholds.json");
        HpoOptions opts = cfg.hpo;
        if (hpo_run->count("--trials")) opts.trials = trials;
        if (exhaustive) opts.exhaustive = true;
        if (g.seed_set) opts.seed = g.seed;
        const auto [rnd, aware] = run_hpo_experiment(m, t, opts);
        write_json_atomic(root / "hpo_report.json",
                          json{{"random", to_json(rnd)}, {"phase_aware", to_json(aware)}});
        write_provenance(root, "hpo run", json{{"trials", opts.trials}, {"seed", opts.seed}});
        emit(json{{"cmd", "hpo run"},
                  {"zoo", root.string()},
                  {"random_mean_gain", rnd.mean_gain},
                  {"phase_aware_mean_gain", aware.mean_gain},
                  {"trials", rnd.trials},
                  {"skipped", rnd.skipped}});
        return 0;
    }

    for (const auto& [name, sub] : dmethods) {
        if (!sub->parsed()) continue;
        const fs::path root = require_zoo(g);
        PipelineConfig cfg = config_for_zoo(g);
        ZooManifest m = load_manifest(root);
        require_complete(m);
        DownstreamParams params = cfg.downstream;
        if (sub->count("--sparsity")) params.sparsity = sparsity;
        if (sub->count("--last-k")) params.last_k = last_k;
        if (sub->count("--alpha")) params.alpha = alpha;
        const DownstreamMethod method = downstream_method_from_string(name);
        const GridTable table = downstream_grid(m, method, params);

        fs::create_directories(root / "downstream");
        fs::create_directories(root / "grids");
        export_grid_csv(table, root / "grids" / (name + std::string(".csv")));

        // per-cell records with the delta against the base accuracy grid
        const GridTable base = collect_grid(m, "test_acc");
        json cells = json::object();
        std::size_t computed = 0;
        for (std::size_t r = 0; r < table.row_labels.size(); ++r) {
            for (std::size_t c = 0; c < table.col_labels.size(); ++c) {
                const std::string key = "w" + table.row_labels[r] + "_t" + table.col_labels[c];
                if (table.at(r, c)) {
                    ++computed;
                    json entry{{"test_acc", *table.at(r, c)}};
                    if (base.at(r, c)) entry["delta_vs_base"] = *table.at(r, c) - *base.at(r, c);
                    cells[key] = entry;
                } else {
                    cells[key] = nullptr;
                }
            }
        }
        write_json_atomic(root / "downstream" / (name + std::string(".json")),
                          json{{"method", name},
                               {"params",
                                json{{"sparsity", params.sparsity},
                                     {"last_k", params.last_k},
                                     {"alpha", params.alpha}}},
                               {"cells", cells}});
        write_provenance(root, std::string("downstream ") + name, json{{"method", name}});
        emit(json{{"cmd", std::string("downstream ") + name},
                  {"zoo", root.string()},
                  {"computed", computed},
                  {"csv", (root / "grids" / (name + std::string(".csv"))).string()}});
        return 0;
    }

    if (probe_run->parsed()) {
        const fs::path root = require_zoo(g);
        PipelineConfig cfg = config_for_zoo(g);
        ZooManifest m = load_manifest(root);
        require_complete(m);
        const ProbeTarget pt =
            probe_run->count("--target") ? probe_target_from_string(target) : cfg.probe_target;
        const std::uint64_t sseed = probe_run->count("--split-seed") ? split_seed : cfg.probe_split_seed;
        const double frac =
            probe_run->count("--train-fraction") ? train_fraction : cfg.probe_train_fraction;
        const ProbeReport rep = run_probe(m, pt, sseed, frac, cfg.probe_lambda_grid);
        write_json_atomic(root / "probe_report.json", to_json(rep));
        write_provenance(root, "probe run", to_json(rep));
        emit(json{{"cmd", "probe run"},
                  {"zoo", root.string()},
                  {"target", to_string(rep.target)},
                  {"r2_test", rep.r2_test},
                  {"ridge_lambda", rep.ridge_lambda}});
        return 0;
    }

    if (probe_features->parsed()) {
        const fs::path root = require_zoo(g);
        ZooManifest m = load_manifest(root);
        require_complete(m);
        const fs::path out = features_out.empty() ? root / "features.csv" : fs::path(features_out);
        export_features_csv(m, probe_target_from_string(features_target), out);
        emit(json{{"cmd", "probe features"}, {"zoo", root.string()}, {"csv", out.string()}});
        return 0;
    }

    if (export_grid_cmd->parsed()) {
        const fs::path root = require_zoo(g);
        ZooManifest m = load_manifest(root);
        require_complete(m);
        const GridTable table = collect_grid(m, field == "trace" ? "hessian_trace" : field);
        const fs::path out = out_path.empty() ? root / "grids" / (field + ".csv") : fs::path(out_path);
        fs::create_directories(out.parent_path());
        export_grid_csv(table, out);
        std::size_t filled = 0;
        for (const auto& v : table.values)
            if (v) ++filled;
        emit(json{{"cmd", "export grid"},
                  {"zoo", root.string()},
                  {"field", field},
                  {"csv", out.string()},
                  {"filled", filled},
                  {"total", table.values.size()}});
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const schema_error& e) {
        std::cout << json{{"error", "invalid_config"}, {"detail", e.what()}}.dump() << "\n";
        return 2;
    } catch (const invalid_spec_error& e) {
        std::cout << json{{"error", "invalid_config"}, {"detail", e.what()}}.dump() << "\n";
        return 2;
    } catch (const format_error& e) {
        std::cout << json{{"error", "invalid_config"}, {"detail", e.what()}}.dump() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cout << json{{"error", "failed"}, {"detail", e.what()}}.dump() << "\n";
        return 1;
    }
}
