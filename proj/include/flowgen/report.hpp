#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowgen/stylized.hpp"
#include "json.hpp"

namespace flowgen {

struct EvalConfig {
  double delta_s = 1.0;
  int max_lag = 100;
  int bins = 500;
  int horizon = 500;
  int fan_samples = 1000;
  std::uint64_t seed = 1;
};

nlohmann::json eval_config_json(const EvalConfig& c);

struct Dataset {
  std::string name;
  bool generated = true;
  std::vector<MarketRecord> records;
};

/// Computes every statistic for each dataset and the cross-dataset
/// comparisons. Pure in (datasets, config): the output is byte-stable.
nlohmann::json stylized_report(const std::vector<Dataset>& datasets, const EvalConfig& cfg);

/// Writes report.json plus one CSV per plotted statistic into `dir`; returns the file names.
std::vector<std::string> write_report(const std::vector<Dataset>& datasets, const EvalConfig& cfg,
                                      const std::string& dir);

}  // namespace flowgen
