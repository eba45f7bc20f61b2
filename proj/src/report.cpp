#include "unirit/report.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "unirit/error.hpp"

namespace unirit {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

ordered_json optional_number(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

std::optional<double> optional_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::string csv_number(const std::optional<double>& v) {
  if (!v) return "";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", *v);
  return buf;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

AggregateRow summarize(const std::string& group, const std::vector<const EvalRecord*>& records) {
  AggregateRow row;
  row.group = group;
  row.count = static_cast<int>(records.size());
  std::vector<double> pre, rmse, cd;
  for (const auto* r : records) {
    if (r->report.pre_rmse) pre.push_back(*r->report.pre_rmse);
    if (r->report.rmse) rmse.push_back(*r->report.rmse);
    cd.push_back(r->report.cd);
  }
  if (!pre.empty()) row.mean_pre_rmse = mean(pre);
  if (!rmse.empty()) {
    row.mean_rmse = mean(rmse);
    row.median_rmse = median(rmse);
  }
  row.mean_cd = mean(cd);
  row.median_cd = median(cd);
  return row;
}

}  // namespace

double median(std::vector<double> values) {
  if (values.empty()) throw ValidationError("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

ordered_json to_json(const MetricReport& r) {
  ordered_json j;
  j["pair_id"] = r.pair_id;
  j["pre_rmse"] = optional_number(r.pre_rmse);
  j["rmse"] = optional_number(r.rmse);
  j["cd"] = r.cd;
  return j;
}

ordered_json to_json(const EvalRecord& r) {
  ordered_json j = to_json(r.report);
  j["family"] = r.family;
  return j;
}

EvalRecord eval_record_from_json(const json& j) {
  try {
    EvalRecord r;
    r.report.pair_id = j.at("pair_id").get<std::string>();
    r.report.pre_rmse = optional_from(j, "pre_rmse");
    r.report.rmse = optional_from(j, "rmse");
    r.report.cd = j.at("cd").get<double>();
    r.family = j.value("family", std::string("unknown"));
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("metric record: ") + e.what());
  }
}

Aggregate report_aggregate(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw ValidationError("report_aggregate: no records");
  std::vector<std::string> order;
  for (const auto& r : records)
    if (std::find(order.begin(), order.end(), r.family) == order.end()) order.push_back(r.family);
  Aggregate agg;
  for (const auto& fam : order) {
    std::vector<const EvalRecord*> group;
    for (const auto& r : records)
      if (r.family == fam) group.push_back(&r);
    agg.rows.push_back(summarize(fam, group));
  }
  std::vector<const EvalRecord*> all;
  for (const auto& r : records) all.push_back(&r);
  agg.rows.push_back(summarize("overall", all));
  return agg;
}

std::string Aggregate::to_csv() const {
  std::ostringstream out;
  out << "group,count,mean_pre_rmse,mean_rmse,median_rmse,mean_cd,median_cd\n";
  for (const auto& r : rows)
    out << r.group << ',' << r.count << ',' << csv_number(r.mean_pre_rmse) << ',' << csv_number(r.mean_rmse) << ','
        << csv_number(r.median_rmse) << ',' << csv_number(r.mean_cd) << ',' << csv_number(r.median_cd) << '\n';
  return out.str();
}

ordered_json Aggregate::to_json() const {
  ordered_json rows_json = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json j;
    j["group"] = r.group;
    j["count"] = r.count;
    j["mean_pre_rmse"] = optional_number(r.mean_pre_rmse);
    j["mean_rmse"] = optional_number(r.mean_rmse);
    j["median_rmse"] = optional_number(r.median_rmse);
    j["mean_cd"] = r.mean_cd;
    j["median_cd"] = r.median_cd;
    rows_json.push_back(std::move(j));
  }
  return ordered_json{{"rows", std::move(rows_json)}};
}

}  // namespace unirit
