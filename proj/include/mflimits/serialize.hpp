#pragma once

// CSV and JSON forms of grid objects. Doubles are written with 17 significant
// digits, so a write/read cycle reproduces every value bit for bit.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "mflimits/torus.hpp"

namespace mfl {

std::string format_double(double v);

/// "node,value" header followed by one row per cell centre.
std::string to_csv(const GridField& f);
std::string to_csv(const ProbabilityGrid& m);
/// Drifts use their face coordinates in the node column.
std::string to_csv(const GridDrift& a);

GridField grid_field_from_csv(const std::string& text);
ProbabilityGrid probability_grid_from_csv(const std::string& text);

/// {"n_cells": n, "values": [...]}
nlohmann::json to_json(const GridField& f);
nlohmann::json to_json(const ProbabilityGrid& m);
nlohmann::json to_json(const GridDrift& a);

GridField grid_field_from_json(const nlohmann::json& j);
ProbabilityGrid probability_grid_from_json(const nlohmann::json& j);
GridDrift grid_drift_from_json(const nlohmann::json& j);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace mfl
