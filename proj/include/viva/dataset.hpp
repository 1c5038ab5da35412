#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "viva/session.hpp"

namespace viva::session {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetSummary {
  std::int64_t samples = 0;
  std::int64_t stride = 1;
  std::filesystem::path out_dir;
  nlohmann::json document;  // contents of dataset.json
};

// Replays the log with rendering on and writes, for every stride-th tick,
// images/NNNNNN.png (NNNNNN = tick) plus one line of meta.jsonl; dataset.json
// summarises the export. Needs a random-access frame source.
DatasetSummary export_dataset(const SessionLog& log, const std::filesystem::path& out_dir, std::int64_t stride = 1);

// Meta record fields for one exported frame.
nlohmann::json sample_metadata(const render::VacFrame& frame, const std::string& image_file, std::uint64_t seed);

}  // namespace viva::session
