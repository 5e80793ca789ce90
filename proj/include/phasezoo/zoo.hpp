#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "phasezoo/trainer.hpp"

namespace phasezoo {

// Descriptor sufficient to regenerate a dataset pair exactly.
struct DatasetSpec {
    DataGenerator generator = DataGenerator::spirals;
    std::size_t n = 400;
    int classes = 3;
    double noise = 0.2;        // spirals
    double separation = 3.0;   // gaussian_mixture
    std::string csv_path;      // csv
    double test_fraction = 0.25;
    std::uint64_t seed = 0;
};

DataPair make_data(const DatasetSpec& spec);

enum class TemperatureAxis { batch_size, peak_lr };
const char* to_string(TemperatureAxis a);
TemperatureAxis temperature_axis_from_string(const std::string& s);

// The load x temperature x seed lattice. Widths are the load axis (wider =
// lower load); the temperature axis is batch size by default, learning rate
// as the alternative.
struct GridSpec {
    std::vector<int> widths;          // ascending
    std::vector<int> batch_sizes;     // ascending, used when axis = batch_size
    std::vector<double> peak_lrs;     // ascending, used when axis = peak_lr
    std::vector<std::uint64_t> seeds;
    TemperatureAxis temperature_axis = TemperatureAxis::batch_size;
    ModelSpec base_model;
    TrainConfig base_train;
    DatasetSpec dataset;

    void validate() const;
    std::size_t temperature_count() const;
    std::string temperature_label(std::size_t idx) const;
    std::vector<std::string> temperature_labels() const;
};

enum class CellStatus { pending, done, diverged };
const char* to_string(CellStatus s);
CellStatus cell_status_from_string(const std::string& s);

struct GridCell {
    int width = 0;
    int batch_size = 0;
    double peak_lr = 0.0;  // resolved from the grid
    std::uint64_t seed = 0;
    CellStatus status = CellStatus::pending;
};

std::string cell_key(const GridSpec& grid, const GridCell& cell);

ModelSpec cell_model_spec(const GridSpec& grid, const GridCell& cell);
TrainConfig cell_train_config(const GridSpec& grid, const GridCell& cell);

// Exactly |widths| x |temperatures| x |seeds| cells in lexicographic order.
std::vector<GridCell> plan_grid(const GridSpec& grid);

struct CellInfo {
    GridCell cell;
    std::string directory;  // relative to the zoo root
    EpochRecord final;
    double generalization_gap = 0.0;
    std::string error_note;
};

struct ZooManifest {
    std::filesystem::path root;
    GridSpec grid;
    std::map<std::string, CellInfo> cells;  // key -> info, sorted

    std::size_t count(CellStatus status) const;
};

// Plans the grid and writes manifest.json under root.
ZooManifest plan_zoo(const GridSpec& grid, const std::filesystem::path& root);

// Reads manifest.json and refreshes cell status from per-cell results.json.
ZooManifest load_manifest(const std::filesystem::path& root);

// Trains every pending cell on a bounded worker pool. Idempotent: cells with
// a valid results.json are skipped untouched. Disk failures mark the cell
// pending with an error note and the run continues.
ZooManifest run_grid(ZooManifest manifest, int workers);

// Binary checkpoint: magic PZOO, u32 version, u64 count, f32 little-endian
// payload in layout order, layout.json sidecar. Round trip is bit-exact at
// 32-bit storage precision.
void save_checkpoint(const std::filesystem::path& dir, const ParameterVector& params);
ParameterVector load_checkpoint(const std::filesystem::path& dir);

// Checkpoint epochs recorded for a cell, ascending.
std::vector<int> list_checkpoint_epochs(const std::filesystem::path& cell_dir);
std::filesystem::path checkpoint_dir(const std::filesystem::path& cell_dir, int epoch);

// widths x temperatures matrix of seed-aggregated values; NA entries are
// explicit, never silent zeros.
struct GridTable {
    std::vector<std::string> row_labels;  // widths
    std::vector<std::string> col_labels;  // temperature values
    std::vector<std::optional<double>> values;  // row-major

    std::optional<double>& at(std::size_t r, std::size_t c) { return values[r * col_labels.size() + c]; }
    const std::optional<double>& at(std::size_t r, std::size_t c) const {
        return values[r * col_labels.size() + c];
    }
};

struct GridLabelTable {
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    std::vector<std::optional<std::string>> values;  // row-major

    std::optional<std::string>& at(std::size_t r, std::size_t c) { return values[r * col_labels.size() + c]; }
    const std::optional<std::string>& at(std::size_t r, std::size_t c) const {
        return values[r * col_labels.size() + c];
    }
};

// Known fields: train_loss, train_acc, test_loss, test_acc, ggap from
// results; lambda_max, hessian_trace, mc, cka from metrics.json. Pairwise
// fields (mc, cka) need >= 2 seeds. An entry is the mean over seeds and goes
// NA if any seed of the cell is missing, diverged, or lacks the field.
GridTable collect_grid(const ZooManifest& manifest, const std::string& field);

void export_grid_csv(const GridTable& table, const std::filesystem::path& path);
void export_grid_csv(const GridLabelTable& table, const std::filesystem::path& path);

}  // namespace phasezoo
