#pragma once

#include <optional>
#include <string>

#include "phasezoo/downstream.hpp"
#include "phasezoo/hpo.hpp"
#include "phasezoo/jsonio.hpp"
#include "phasezoo/landscape.hpp"
#include "phasezoo/phase.hpp"
#include "phasezoo/probe.hpp"
#include "phasezoo/zoo.hpp"

namespace phasezoo {

inline constexpr const char* kToolVersion = "0.1.0";

struct MetricOptions {
    int power_max_iters = 100;
    double power_tol = 1e-5;
    int probes = 100;
    int bezier_steps = 100;
    double bezier_lr = 0.05;
    int t_grid_size = 21;
    McSelection mc_selection = McSelection::max_abs_deviation;
    std::optional<std::size_t> metric_samples;  // deterministic train subsample
    bool every_checkpoint = false;              // default: final epoch only
    std::uint64_t seed = 0;
};

// Curvature per model plus pairwise mc/cka per (width, temperature) config,
// appended to each cell's metrics.json. Deterministic and idempotent: reruns
// rewrite byte-identical files.
ZooManifest compute_metrics(const ZooManifest& manifest, const MetricOptions& opts, int workers);

// thresholds <-> phase_thresholds.json
void save_thresholds(const std::filesystem::path& path, const PhaseThresholds& t);
PhaseThresholds load_thresholds(const std::filesystem::path& path);

json to_json(const HpoReport& rep);
json to_json(const ProbeReport& rep);

// Provenance: resolved config, tool version, input hashes; written next to
// every artifact-producing command's output.
void write_provenance(const std::filesystem::path& root, const std::string& command,
                      const json& resolved_config);

// Full pipeline configuration file. Unknown keys are rejected with the
// offending key path.
struct PipelineConfig {
    std::string zoo_root;
    GridSpec grid;
    MetricOptions metrics;
    bool phase_bootstrap = true;
    std::string phase_labels_path;
    HpoOptions hpo;
    DownstreamParams downstream;
    ProbeTarget probe_target = ProbeTarget::test_acc;
    std::uint64_t probe_split_seed = 0;
    double probe_train_fraction = 0.8;
    std::vector<double> probe_lambda_grid = kDefaultLambdaGrid;
    int workers = 1;
};

PipelineConfig pipeline_config_from_json(const json& j);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

}  // namespace phasezoo
