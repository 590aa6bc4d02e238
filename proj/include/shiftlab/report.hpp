#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "shiftlab/harness.hpp"
#include "shiftlab/radiation.hpp"
#include "shiftlab/stats.hpp"

namespace shiftlab {

// records.csv: one RobustnessRecord per row. Variable-group breakdowns become
// three extra columns per group, `vg.<name>.loss_ood`, `.loss_id`, `.e_r`.
// Commas and newlines inside failure tags are replaced by ';' and ' '.
void write_records_csv(const std::vector<RobustnessRecord>& records, std::ostream& out);
void write_records_csv(const std::vector<RobustnessRecord>& records, const std::string& path);
std::vector<RobustnessRecord> read_records_csv(std::istream& in);
std::vector<RobustnessRecord> read_records_csv(const std::string& path);

struct ReportCounts {
  std::size_t records = 0;
  std::size_t failed = 0;
  std::size_t ood = 0;
  std::size_t trained_cells = 0;
  std::size_t cached_cells = 0;
};

ReportCounts count_records(const std::vector<RobustnessRecord>& records);

/// Regressions for every grouping that has enough data; groupings that do
/// not are listed under "skipped" with the reason.
struct ReportBundle {
  ReportCounts counts;
  std::vector<ShiftRegression> regressions;
  std::vector<std::pair<std::string, std::string>> skipped;  // grouping, reason
  std::string loss;  // error loss the records were computed with, if known
};

ReportBundle build_report(const std::vector<RobustnessRecord>& records, const std::vector<Grouping>& groupings);

std::string report_json(const ReportBundle& bundle);

/// One TSV per regression: plotdata/<grouping>_<key>.tsv with columns
/// ed, mean_log_er, min_log_er, max_log_er, n_seeds, region, model, train, test, variable_group.
/// Returns the files written.
std::vector<std::string> write_plotdata(const std::vector<ShiftRegression>& regressions, const std::string& dir);

std::string permutation_json(const PermutationTestResult& r);
std::string correlation_json(const CorrelationReport& r);
std::string calibration_json(const CalibrationResult& r);
std::string proxy_study_json(const ProxyStudyResult& r);
std::string train_record_json(const TrainRecord& r);

}  // namespace shiftlab
