#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "cwb/clock.hpp"
#include "cwb/definition.hpp"

namespace cwb::results {

/// Nominal values are strings; every other scale is stored as a double.
using Value = std::variant<std::string, double>;

struct Observation {
  std::string execution_id;
  std::string metric;
  Value value;
  std::optional<std::int64_t> offset_ms;
  Instant recorded_at;

  bool operator==(const Observation&) const = default;
};

nlohmann::json to_json(const Observation& o);
std::string value_text(const Value& v);

/// Validates one submission against the benchmark's metric definitions.
/// `value` may be a JSON string or number; numeric scales also accept numeric
/// strings. Throws UnknownMetric or ScaleMismatch.
Observation make_observation(const model::BenchmarkDefinition& def, const std::string& execution_id,
                             const std::string& metric, const nlohmann::json& value,
                             std::optional<std::int64_t> offset_ms, Instant now);

struct CsvRow {
  std::size_t line = 0;  // 1-based line in the payload; the header is line 1
  std::string metric;
  std::string value;
  std::optional<std::int64_t> offset_ms;
};

/// Header must be exactly `metric,value` or `metric,value,offset_ms`.
/// Throws BadHeader or RowError ("line N: reason").
std::vector<CsvRow> parse_csv(std::string_view payload);

/// Parses and validates a whole batch; any bad row rejects all of them with
/// RowError.
std::vector<Observation> parse_batch(const model::BenchmarkDefinition& def,
                                     const std::string& execution_id, std::string_view payload,
                                     Instant now);

/// Export form of the same CSV format.
std::string to_csv(std::span<const Observation> observations);

/// Numeric values ascending by value; nominal values lexicographically.
void sort_by_value(std::vector<Observation>& observations);

/// Sample standard deviation over the mean, in percent. Throws
/// InsufficientData (fewer than 2 values) or ZeroMean.
double coefficient_of_variation(std::span<const double> values);

struct VariabilityRow {
  std::string label;
  double across_cv_pct = 0;
  double within_cv_min_pct = 0;
  double within_cv_max_pct = 0;
  std::size_t executions = 0;
};

/// `series` holds one value series per execution. Throws InsufficientData
/// when fewer than two series or any series shorter than two.
VariabilityRow variability(std::span<const std::vector<double>> series, std::string label = {});

/// Report cell "A% (L-U%)" with each value rounded to the nearest 5.
std::string render(const VariabilityRow& row);

nlohmann::json to_json(const VariabilityRow& row);

}  // namespace cwb::results
