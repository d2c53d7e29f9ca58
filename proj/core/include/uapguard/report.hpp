#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "uapguard/experiment.hpp"

namespace uapguard {

/// Pretty-printed JSON documents.
std::string report_json(const ExperimentReport& r);
std::string sweep_json(const SweepTable& t);

/// Aligned plain-text tables.
std::string render_text(const ExperimentReport& r);
std::string render_text(const SweepTable& t);

inline constexpr const char* kVerdictCsvHeader = "id,y,y_hat,flagged,inferred_target,method";

void write_verdicts_csv(const std::vector<VerdictRow>& rows, const std::filesystem::path& path);
/// Throws FormatError on a bad header or malformed row.
std::vector<VerdictRow> read_verdicts_csv(const std::filesystem::path& path);

/// report.json, report.txt, verdicts.csv, strip_scores.csv, config.ini,
/// model.bin, and perturbation.bin when a universal perturbation exists.
/// Run timestamps go to provenance.json so the other files are reproducible.
void write_outputs(const ExperimentOutcome& outcome, const ExperimentConfig& cfg, const std::filesystem::path& dir);

struct VerificationIssue {
  std::string field;
  std::string expected;  // recomputed from the verdicts
  std::string reported;
};

/// Recomputes every count in report.json from verdicts.csv.
std::vector<VerificationIssue> verify_report(const std::filesystem::path& report_json,
                                             const std::filesystem::path& verdicts_csv);

}  // namespace uapguard
