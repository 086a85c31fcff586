#pragma once

// File formats: JSON documents for models, calibration, scenarios, reports
// and QP dumps; CSV tables for transitions, calibration pairs and trajectories.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "koopnav/conformal.hpp"
#include "koopnav/harness.hpp"
#include "koopnav/koopman.hpp"
#include "koopnav/qp_solver.hpp"
#include "koopnav/sim_env.hpp"

namespace koopnav::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kModelFormatVersion = 1;
inline constexpr const char* kTrajectorySchema = "koopnav-trajectory-v1";

/// Column order of trajectory CSV files.
const std::vector<std::string>& trajectory_columns();

std::string fnv1a_hex(const std::string& bytes);

json model_to_json(const KoopmanModel& model);
KoopmanModel model_from_json(const json& doc);

json calibration_to_json(const CalibrationResult& result);
CalibrationResult calibration_from_json(const json& doc);

json scenario_to_json(const Scenario& scenario);
Scenario scenario_from_json(const json& doc);

json qp_to_json(const QpProblem& problem);
QpProblem qp_from_json(const json& doc);

json aggregates_to_json(const RunAggregates& agg);
json report_to_json(const ExperimentReport& report);

void write_text(const fs::path& path, const std::string& content);
std::string read_text(const fs::path& path);
void write_json(const fs::path& path, const json& doc);
json read_json(const fs::path& path);

/// `comment`, when given, is written as a leading "# " line.
void write_transitions_csv(const fs::path& path, const std::vector<Transition>& transitions,
                           const std::string& comment = {});
std::vector<Transition> read_transitions_csv(const fs::path& path);

/// Columns: pair_id, true x/y/theta, predicted x/y/theta, score.
void write_calibration_csv(const fs::path& path, const std::vector<CalibrationPair>& pairs);
std::vector<CalibrationPair> read_calibration_csv(const fs::path& path);

/// Trajectory CSV text: one comment line with schema and metadata, a header, one row per record.
std::string trajectory_csv(const TrajectoryLog& log);
TrajectoryLog parse_trajectory_csv(const std::string& text);

/// Writes <stem>.csv and the wall-clock sidecar <stem>_timing.csv.
void write_trajectory(const fs::path& csv_path, const TrajectoryLog& log);
/// Reads a trajectory and, when present, its timing sidecar.
TrajectoryLog read_trajectory(const fs::path& csv_path);

/// report.json plus trajectory_<scenario>_<arm>_<seed>.csv for every run.
void emit_report(const ExperimentReport& report, const fs::path& directory);

Scenario load_scenario(const fs::path& path);
void save_model(const fs::path& path, const KoopmanModel& model);
KoopmanModel load_model(const fs::path& path);

}  // namespace koopnav::io
