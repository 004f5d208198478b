#pragma once

#include <nlohmann/json.hpp>

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "twinfuse/eval/measure.hpp"

namespace twinfuse::eval {

enum class ReportFormat { TextTable, Csv, Json };

inline ReportFormat parse_format(const std::string& s) {
  if (s == "text" || s == "text-table" || s == "table") return ReportFormat::TextTable;
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json") return ReportFormat::Json;
  throw Error(ErrorCode::InvalidArgument, "unknown report format '" + s + "'");
}

namespace detail {

inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

inline nlohmann::json to_json(const ErrorRow& r) {
  return {{"name", r.name},
          {"truth_mm", r.truth_mm},
          {"estimate_mm", r.estimate_mm},
          {"error_mm", r.error_mm},
          {"percent_error", r.percent_error}};
}

inline ErrorRow row_from_json(const nlohmann::json& j) {
  return ErrorRow{j.at("name").get<std::string>(), j.at("truth_mm").get<double>(),
                  j.at("estimate_mm").get<double>(), j.at("error_mm").get<double>(),
                  j.at("percent_error").get<double>()};
}

inline std::string_view axis_name(Axis a) {
  switch (a) {
    case Axis::X: return "x";
    case Axis::Y: return "y";
    case Axis::Z: return "z";
  }
  return "?";
}

/// Measurement file entry: {"name", "axis": "x|y|z", "roi": {"min","max"}, "truth": metres}.
inline nlohmann::json to_json(const MeasurementSpec& m) {
  return {{"name", m.name},
          {"axis", axis_name(m.axis)},
          {"roi", {{"min", {m.roi.min.x(), m.roi.min.y(), m.roi.min.z()}}, {"max", {m.roi.max.x(), m.roi.max.y(), m.roi.max.z()}}}},
          {"truth", m.truth}};
}

inline MeasurementSpec measurement_from_json(const nlohmann::json& j) {
  try {
    MeasurementSpec m;
    m.name = j.at("name").get<std::string>();
    const auto axis = j.at("axis").get<std::string>();
    if (axis == "x") m.axis = Axis::X;
    else if (axis == "y") m.axis = Axis::Y;
    else if (axis == "z") m.axis = Axis::Z;
    else throw Error(ErrorCode::ParseError, "axis must be x, y or z");
    const auto& mn = j.at("roi").at("min");
    const auto& mx = j.at("roi").at("max");
    for (int i = 0; i < 3; ++i) {
      m.roi.min[i] = mn.at(i).get<double>();
      m.roi.max[i] = mx.at(i).get<double>();
    }
    m.truth = j.at("truth").get<double>();
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("measurement: ") + e.what());
  }
}

inline std::vector<MeasurementSpec> measurements_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error(ErrorCode::ParseError, "measurement file must be a JSON array");
  std::vector<MeasurementSpec> out;
  for (const auto& e : j) out.push_back(measurement_from_json(e));
  return out;
}

inline nlohmann::json measurements_json(const std::vector<MeasurementSpec>& specs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : specs) arr.push_back(to_json(m));
  return arr;
}

inline std::string emit_report(const std::vector<ErrorRow>& rows, ReportFormat format) {
  std::ostringstream out;
  switch (format) {
    case ReportFormat::Csv:
      out << "name,truth_mm,estimate_mm,error_mm,percent_error\n";
      for (const auto& r : rows) {
        out << detail::csv_field(r.name) << ',' << detail::fixed(r.truth_mm, 0) << ','
            << detail::fixed(r.estimate_mm, 0) << ',' << detail::fixed(r.error_mm, 0) << ','
            << detail::fixed(r.percent_error, 2) << '\n';
      }
      break;
    case ReportFormat::Json: {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& r : rows) arr.push_back(to_json(r));
      out << arr.dump(2) << '\n';
      break;
    }
    case ReportFormat::TextTable: {
      const std::vector<std::string> head{"Item", "Measured Distance", "Distance", "Error", "% Error"};
      std::vector<std::vector<std::string>> cells{head};
      for (const auto& r : rows) {
        cells.push_back({r.name, detail::fixed(r.truth_mm, 0) + " mm", detail::fixed(r.estimate_mm, 0) + " mm",
                         detail::fixed(r.error_mm, 0) + " mm", detail::fixed(r.percent_error, 2) + "%"});
      }
      std::vector<std::size_t> width(head.size(), 0);
      for (const auto& row : cells)
        for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
      auto line = [&](const std::vector<std::string>& row) {
        for (std::size_t i = 0; i < row.size(); ++i) {
          out << (i == 0 ? "" : " | ") << row[i] << std::string(width[i] - row[i].size(), ' ');
        }
        out << '\n';
      };
      line(cells[0]);
      for (std::size_t i = 0; i < width.size(); ++i) out << (i == 0 ? "" : "-+-") << std::string(width[i], '-');
      out << '\n';
      for (std::size_t i = 1; i < cells.size(); ++i) line(cells[i]);
      break;
    }
  }
  return out.str();
}

inline std::vector<ErrorRow> parse_json_report(const std::string& text) {
  std::vector<ErrorRow> rows;
  for (const auto& j : nlohmann::json::parse(text)) rows.push_back(row_from_json(j));
  return rows;
}

}  // namespace twinfuse::eval
