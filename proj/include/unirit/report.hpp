#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "unirit/metrics.hpp"

namespace unirit {

/// One evaluated pair; `family` is the grouping key of the aggregate table.
struct EvalRecord {
  MetricReport report;
  std::string family;
};

nlohmann::ordered_json to_json(const MetricReport& r);
nlohmann::ordered_json to_json(const EvalRecord& r);
EvalRecord eval_record_from_json(const nlohmann::json& j);

struct AggregateRow {
  std::string group;  // family name or "overall"
  int count = 0;
  std::optional<double> mean_pre_rmse;
  std::optional<double> mean_rmse;
  std::optional<double> median_rmse;
  double mean_cd = 0.0;
  double median_cd = 0.0;
};

struct Aggregate {
  std::vector<AggregateRow> rows;  // families in first-seen order, then "overall"

  std::string to_csv() const;
  nlohmann::ordered_json to_json() const;
};

/// Per-family and overall mean/median of RMSE and CD. RMSE statistics skip records without correspondence.
Aggregate report_aggregate(const std::vector<EvalRecord>& records);

double median(std::vector<double> values);

}  // namespace unirit
