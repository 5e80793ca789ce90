#pragma once

#include <filesystem>
#include <json.hpp>

#include "phasezoo/trainer.hpp"
#include "phasezoo/zoo.hpp"

namespace phasezoo {

using json = nlohmann::json;  // std::map keys, so dumps are key-sorted

json read_json(const std::filesystem::path& path);

// Write-to-temp + rename so readers never observe partial files.
void write_json_atomic(const std::filesystem::path& path, const json& j);

json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const json& j);

json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const json& j);

json to_json(const DatasetSpec& ds);
DatasetSpec dataset_spec_from_json(const json& j);

json to_json(const GridSpec& grid);
GridSpec grid_spec_from_json(const json& j);

json to_json(const EpochRecord& rec);
EpochRecord epoch_record_from_json(const json& j);

}  // namespace phasezoo
