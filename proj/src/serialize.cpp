#include "mflimits/serialize.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mflimits/errors.hpp"

namespace mfl {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

template <class Coord>
std::string csv_rows(std::span<const double> values, Coord coord) {
  std::string out = "node,value\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    out += format_double(coord(static_cast<int>(i)));
    out += ',';
    out += format_double(values[i]);
    out += '\n';
  }
  return out;
}

double parse_double(const std::string& s) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || errno == ERANGE) throw ConfigError("malformed number in CSV: '" + s + "'");
  return v;
}

std::vector<double> csv_values(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("node,value", 0) != 0) {
    throw ConfigError("CSV must start with a 'node,value' header");
  }
  std::vector<double> nodes;
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ConfigError("CSV row without a comma: '" + line + "'");
    nodes.push_back(parse_double(line.substr(0, comma)));
    values.push_back(parse_double(line.substr(comma + 1)));
  }
  if (values.empty()) throw ConfigError("CSV has no rows");
  const TorusGrid grid(static_cast<int>(values.size()));
  for (int i = 0; i < grid.size(); ++i) {
    if (std::abs(nodes[i] - grid.node(i)) > 1e-12) {
      throw ConfigError("CSV node column does not match a uniform cell-centred grid");
    }
  }
  return values;
}

std::vector<double> json_values(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("n_cells") || !j.contains("values")) {
    throw ConfigError("grid JSON must be an object with n_cells and values");
  }
  auto values = j.at("values").get<std::vector<double>>();
  if (values.size() != j.at("n_cells").get<std::size_t>()) {
    throw ConfigError("grid JSON: values length differs from n_cells");
  }
  return values;
}

}  // namespace

std::string to_csv(const GridField& f) {
  return csv_rows(f.values(), [&](int i) { return f.grid().node(i); });
}

std::string to_csv(const ProbabilityGrid& m) {
  return csv_rows(m.density(), [&](int i) { return m.grid().node(i); });
}

std::string to_csv(const GridDrift& a) {
  return csv_rows(a.values(), [&](int i) { return a.grid().face(i); });
}

GridField grid_field_from_csv(const std::string& text) {
  auto v = csv_values(text);
  const TorusGrid grid(static_cast<int>(v.size()));
  return GridField(grid, std::move(v));
}

ProbabilityGrid probability_grid_from_csv(const std::string& text) {
  auto v = csv_values(text);
  const TorusGrid grid(static_cast<int>(v.size()));
  return ProbabilityGrid(grid, std::move(v));
}

nlohmann::json to_json(const GridField& f) {
  return {{"n_cells", f.size()}, {"values", std::vector<double>(f.values().begin(), f.values().end())}};
}

nlohmann::json to_json(const ProbabilityGrid& m) {
  return {{"n_cells", m.size()},
          {"values", std::vector<double>(m.density().begin(), m.density().end())}};
}

nlohmann::json to_json(const GridDrift& a) {
  return {{"n_cells", a.size()},
          {"staggered", true},
          {"values", std::vector<double>(a.values().begin(), a.values().end())}};
}

GridField grid_field_from_json(const nlohmann::json& j) {
  auto v = json_values(j);
  const TorusGrid grid(static_cast<int>(v.size()));
  return GridField(grid, std::move(v));
}

ProbabilityGrid probability_grid_from_json(const nlohmann::json& j) {
  auto v = json_values(j);
  const TorusGrid grid(static_cast<int>(v.size()));
  return ProbabilityGrid(grid, std::move(v));
}

GridDrift grid_drift_from_json(const nlohmann::json& j) {
  auto v = json_values(j);
  const TorusGrid grid(static_cast<int>(v.size()));
  return GridDrift(grid, std::move(v));
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw ConfigError("write to '" + path.string() + "' failed");
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace mfl
