#include "cwb/results.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "cwb/error.hpp"

namespace cwb::results {

namespace {

std::optional<double> parse_number(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<std::int64_t> parse_offset(std::string_view s) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || v < 0) return std::nullopt;
  return v;
}

const model::MetricDefinition& metric_of(const model::BenchmarkDefinition& def, const std::string& name) {
  const auto* m = def.find_metric(name);
  if (!m) throw Error(Errc::UnknownMetric, name + " is not defined on benchmark " + def.id);
  return *m;
}

Value typed_value(const model::MetricDefinition& m, const nlohmann::json& value) {
  if (m.scale == model::ScaleType::Nominal) {
    if (!value.is_string())
      throw Error(Errc::ScaleMismatch, m.name + " is nominal and needs a string value");
    return value.get<std::string>();
  }
  std::optional<double> v;
  if (value.is_number()) v = value.get<double>();
  if (value.is_string()) v = parse_number(value.get<std::string>());
  if (!v) throw Error(Errc::ScaleMismatch, m.name + " is " + std::string(model::to_string(m.scale)) +
                                               " and needs a numeric value, got " + value.dump());
  return *v;
}

}  // namespace

std::string value_text(const Value& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, std::get<double>(v));
  (void)ec;
  return std::string(buf, p);
}

nlohmann::json to_json(const Observation& o) {
  nlohmann::json j{{"execution_id", o.execution_id},
                   {"metric", o.metric},
                   {"offset_ms", nullptr},
                   {"recorded_at", format_instant(o.recorded_at)}};
  std::visit([&](const auto& v) { j["value"] = v; }, o.value);
  if (o.offset_ms) j["offset_ms"] = *o.offset_ms;
  return j;
}

Observation make_observation(const model::BenchmarkDefinition& def, const std::string& execution_id,
                             const std::string& metric, const nlohmann::json& value,
                             std::optional<std::int64_t> offset_ms, Instant now) {
  const auto& m = metric_of(def, metric);
  if (offset_ms && *offset_ms < 0) throw Error(Errc::ScaleMismatch, "offset_ms must be non-negative");
  return {execution_id, metric, typed_value(m, value), offset_ms, now};
}

std::vector<CsvRow> parse_csv(std::string_view payload) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::size_t> lines;

  std::vector<std::string> fields;
  std::string field;
  bool quoted = false, in_quotes = false, field_started = false;
  std::size_t line = 1, record_line = 1;

  auto end_field = [&] {
    fields.push_back(std::move(field));
    field.clear();
    quoted = false;
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    records.push_back(std::move(fields));
    lines.push_back(record_line);
    fields.clear();
  };

  for (std::size_t i = 0; i < payload.size(); ++i) {
    char c = payload[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < payload.size() && payload[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started)
          throw Error(Errc::RowError, "line " + std::to_string(line) + ": stray quote");
        in_quotes = quoted = field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        throw Error(Errc::RowError, "line " + std::to_string(line) + ": CR line endings are not accepted");
      case '\n':
        end_record();
        record_line = ++line;
        break;
      default:
        if (quoted) throw Error(Errc::RowError, "line " + std::to_string(line) + ": text after closing quote");
        field += c;
        field_started = true;
    }
  }
  if (in_quotes) throw Error(Errc::RowError, "line " + std::to_string(line) + ": unterminated quote");
  if (field_started || !fields.empty()) end_record();

  if (records.empty()) throw Error(Errc::BadHeader, "empty payload");
  const auto& header = records[0];
  bool with_offset = header == std::vector<std::string>{"metric", "value", "offset_ms"};
  if (!with_offset && header != std::vector<std::string>{"metric", "value"})
    throw Error(Errc::BadHeader, "expected metric,value[,offset_ms]");

  std::vector<CsvRow> rows;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    auto where = "line " + std::to_string(lines[r]) + ": ";
    if (rec.size() == 1 && rec[0].empty()) continue;  // blank line
    if (rec.size() != header.size())
      throw Error(Errc::RowError, where + "expected " + std::to_string(header.size()) + " fields");
    CsvRow row;
    row.line = lines[r];
    row.metric = rec[0];
    row.value = rec[1];
    if (row.metric.empty()) throw Error(Errc::RowError, where + "empty metric name");
    if (with_offset && !rec[2].empty()) {
      row.offset_ms = parse_offset(rec[2]);
      if (!row.offset_ms) throw Error(Errc::RowError, where + "offset_ms must be a non-negative integer");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<Observation> parse_batch(const model::BenchmarkDefinition& def,
                                     const std::string& execution_id, std::string_view payload,
                                     Instant now) {
  std::vector<Observation> out;
  for (auto& row : parse_csv(payload)) {
    try {
      const auto& m = metric_of(def, row.metric);
      out.push_back({execution_id, row.metric, typed_value(m, row.value), row.offset_ms, now});
    } catch (const Error& e) {
      throw Error(Errc::RowError, "line " + std::to_string(row.line) + ": " + e.what());
    }
  }
  return out;
}

std::string to_csv(std::span<const Observation> observations) {
  std::string out = "metric,value,offset_ms\n";
  for (const auto& o : observations) {
    out += o.metric + ',';
    if (const auto* s = std::get_if<std::string>(&o.value)) {
      out += '"';
      for (char c : *s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
      out += '"';
    } else {
      out += value_text(o.value);
    }
    out += ',';
    if (o.offset_ms) out += std::to_string(*o.offset_ms);
    out += '\n';
  }
  return out;
}

void sort_by_value(std::vector<Observation>& observations) {
  std::stable_sort(observations.begin(), observations.end(),
                   [](const Observation& a, const Observation& b) { return a.value < b.value; });
}

double coefficient_of_variation(std::span<const double> values) {
  if (values.size() < 2) throw Error(Errc::InsufficientData, "need at least 2 values");
  const double n = static_cast<double>(values.size());
  double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (mean == 0.0) throw Error(Errc::ZeroMean, "mean is zero");
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / (n - 1)) / std::abs(mean) * 100.0;
}

VariabilityRow variability(std::span<const std::vector<double>> series, std::string label) {
  if (series.size() < 2) throw Error(Errc::InsufficientData, "need at least 2 executions");
  std::vector<double> means, within;
  for (const auto& s : series) {
    if (s.size() < 2) throw Error(Errc::InsufficientData, "every execution needs at least 2 observations");
    means.push_back(std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size()));
    within.push_back(coefficient_of_variation(s));
  }
  VariabilityRow row;
  row.label = std::move(label);
  row.across_cv_pct = coefficient_of_variation(means);
  auto [lo, hi] = std::minmax_element(within.begin(), within.end());
  row.within_cv_min_pct = *lo;
  row.within_cv_max_pct = *hi;
  row.executions = series.size();
  return row;
}

std::string render(const VariabilityRow& row) {
  auto r5 = [](double v) { return std::to_string(static_cast<long long>(std::llround(v / 5.0) * 5)); };
  return r5(row.across_cv_pct) + "% (" + r5(row.within_cv_min_pct) + "-" + r5(row.within_cv_max_pct) + "%)";
}

nlohmann::json to_json(const VariabilityRow& row) {
  return {{"label", row.label},
          {"across_cv_pct", row.across_cv_pct},
          {"within_cv_min_pct", row.within_cv_min_pct},
          {"within_cv_max_pct", row.within_cv_max_pct},
          {"executions", row.executions},
          {"rendered", render(row)}};
}

}  // namespace cwb::results
