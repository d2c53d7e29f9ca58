#include "uapguard/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "uapguard/errors.hpp"

namespace uapguard {

using nlohmann::ordered_json;

namespace {

ordered_json rate_json(const RateCount& r) {
  return ordered_json{{"count", r.numerator}, {"total", r.denominator}, {"rate", r.rate()}};
}

template <typename T>
ordered_json optional_json(const std::optional<T>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

ordered_json strip_json(const std::optional<StripSummary>& s) {
  if (!s) return nullptr;
  return ordered_json{{"calibration_quantile", s->quantile},
                      {"threshold", s->threshold},
                      {"frr", rate_json(s->frr)},
                      {"far", rate_json(s->far)},
                      {"basr_after", rate_json(s->basr_after)}};
}

ordered_json sweep_table_json(const SweepTable& t) {
  ordered_json rows = ordered_json::array();
  for (const SweepRow& r : t.rows) {
    ordered_json row{{"value", r.value}, {"ok", r.ok}};
    if (r.ok) {
      row["clean_accuracy"] = r.clean_accuracy;
      row["basr_before"] = rate_json(r.basr_before);
      row["basr_after"] = rate_json(r.basr_after);
      row["frr"] = rate_json(r.frr);
      row["far"] = rate_json(r.far);
      row["fooling_rate"] = r.fooling_rate;
    } else {
      if (r.basr_before.denominator > 0) {
        row["clean_accuracy"] = r.clean_accuracy;
        row["basr_before"] = rate_json(r.basr_before);
      }
      row["error"] = r.error;
    }
    rows.push_back(std::move(row));
  }
  return ordered_json{{"axis", t.axis}, {"rows", std::move(rows)}};
}

ordered_json reference_figures(const std::string& dataset) {
  // full-scale published operating points, kept for comparison only
  if (dataset == "fashion-mnist") {
    return ordered_json{{"clean_accuracy", 0.9219}, {"basr_before", 0.9947}, {"basr_after", 0.0037}, {"frr", 0.0934}};
  }
  if (dataset == "cifar10") {
    return ordered_json{{"clean_accuracy", 0.9277}, {"basr_before", 0.9977}, {"basr_after", 0.0024}, {"frr", 0.1018}};
  }
  return nullptr;
}

ordered_json report_document(const ExperimentReport& r) {
  ordered_json doc;
  doc["name"] = r.name;
  doc["dataset"] = r.dataset;
  doc["provenance"] = ordered_json{{"config_hash", r.config_hash}, {"seed", r.seed}, {"timestamps", "provenance.json"}};
  doc["target_label"] = r.target_label;
  doc["train_size"] = r.train_size;
  doc["test_size"] = r.test_size;
  doc["attack"] = ordered_json{{"clean_accuracy", r.clean_accuracy},
                               {"twin_accuracy", optional_json(r.twin_accuracy)},
                               {"basr_before", rate_json(r.basr_before)}};
  const UapSummary& p = r.perturbation;
  doc["perturbation"] = ordered_json{{"method", std::string(to_string(p.method))},
                                     {"xi", p.xi},
                                     {"linf", p.linf},
                                     {"generation_fooling_rate", p.generation_fooling_rate},
                                     {"heldout_fooling_rate", p.heldout_fooling_rate},
                                     {"passes", p.passes},
                                     {"gate_threshold", p.gate_threshold}};
  doc["defense"] = ordered_json{{"frr", rate_json(r.frr)},
                                {"far", rate_json(r.far)},
                                {"detected", rate_json(r.detected)},
                                {"basr_after", rate_json(r.basr_after)}};
  if (r.sanitization) {
    const SanitizationSummary& s = *r.sanitization;
    doc["sanitization"] = ordered_json{{"total", s.total},
                                       {"flagged", s.flagged},
                                       {"flagged_poisoned", s.flagged_poisoned},
                                       {"poisoned", s.poisoned},
                                       {"retrained_accuracy", optional_json(s.retrained_accuracy)},
                                       {"retrained_basr", s.retrained_basr ? rate_json(*s.retrained_basr) : nullptr}};
  } else {
    doc["sanitization"] = nullptr;
  }
  doc["strip"] = strip_json(r.strip);
  doc["strip_matched"] = strip_json(r.strip_matched);
  ordered_json sweeps = ordered_json::array();
  for (const SweepTable& t : r.sweeps) sweeps.push_back(sweep_table_json(t));
  doc["sweeps"] = std::move(sweeps);
  doc["reference"] = reference_figures(r.dataset);
  return doc;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
  return buf;
}

std::string pct(const RateCount& r) { return pct(r.rate()) + " (" + std::to_string(r.numerator) + "/" + std::to_string(r.denominator) + ")"; }

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    if (width.size() < row.size()) width.resize(row.size(), 0);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::string line;
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      if (c) line += "  ";
      line += rows[r][c];
      if (c + 1 < rows[r].size()) line.append(width[c] - rows[r][c].size(), ' ');
    }
    out += line + "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w;
      out += std::string(total + 2 * (width.size() - 1), '-') + "\n";
    }
  }
  return out;
}

}  // namespace

std::string report_json(const ExperimentReport& r) { return report_document(r).dump(2) + "\n"; }

std::string sweep_json(const SweepTable& t) { return sweep_table_json(t).dump(2) + "\n"; }

std::string render_text(const SweepTable& t) {
  std::vector<std::vector<std::string>> rows{{t.axis, "clean acc", "BASR before", "BASR after", "FRR", "FAR", "fooling"}};
  for (const SweepRow& r : t.rows) {
    if (r.ok) {
      rows.push_back({r.value, pct(r.clean_accuracy), pct(r.basr_before.rate()), pct(r.basr_after.rate()),
                      pct(r.frr.rate()), pct(r.far.rate()), fixed(r.fooling_rate, 3)});
    } else {
      rows.push_back({r.value, "failed: " + r.error});
    }
  }
  return table(rows);
}

std::string render_text(const ExperimentReport& r) {
  std::string out = "Experiment " + r.name + " (" + r.dataset + ")\n";
  out += "config " + r.config_hash + ", seed " + std::to_string(r.seed) + ", target label " +
         std::to_string(r.target_label) + ", train " + std::to_string(r.train_size) + ", test " +
         std::to_string(r.test_size) + "\n\n";

  std::vector<std::vector<std::string>> attack{{"Attack", "value"}};
  attack.push_back({"clean accuracy", pct(r.clean_accuracy)});
  if (r.twin_accuracy) attack.push_back({"clean twin accuracy", pct(*r.twin_accuracy)});
  attack.push_back({"BASR without defence", pct(r.basr_before)});
  out += table(attack) + "\n";

  const UapSummary& p = r.perturbation;
  std::vector<std::vector<std::string>> pert{{"Perturbation", "value"}};
  pert.push_back({"method", std::string(to_string(p.method))});
  pert.push_back({"budget (linf)", fixed(p.xi)});
  pert.push_back({"measured linf", fixed(p.linf)});
  pert.push_back({"fooling rate (generation set)", fixed(p.generation_fooling_rate)});
  pert.push_back({"fooling rate (held-out)", fixed(p.heldout_fooling_rate)});
  pert.push_back({"passes", std::to_string(p.passes)});
  pert.push_back({"gate threshold", fixed(p.gate_threshold, 2)});
  out += table(pert) + "\n";

  std::vector<std::vector<std::string>> def{{"Defence", "FRR", "FAR", "BASR after"}};
  def.push_back({std::string(to_string(p.method)), pct(r.frr), pct(r.far), pct(r.basr_after)});
  if (r.strip) def.push_back({"strip", pct(r.strip->frr), pct(r.strip->far), pct(r.strip->basr_after)});
  if (r.strip_matched)
    def.push_back({"strip (matched FRR)", pct(r.strip_matched->frr), pct(r.strip_matched->far),
                   pct(r.strip_matched->basr_after)});
  out += table(def) + "\n";

  if (r.sanitization) {
    const SanitizationSummary& s = *r.sanitization;
    std::vector<std::vector<std::string>> san{{"Sanitisation", "value"}};
    san.push_back({"flagged", std::to_string(s.flagged) + " / " + std::to_string(s.total)});
    san.push_back({"flagged poisoned", std::to_string(s.flagged_poisoned) + " / " + std::to_string(s.poisoned)});
    if (s.retrained_accuracy) san.push_back({"retrained accuracy", pct(*s.retrained_accuracy)});
    if (s.retrained_basr) san.push_back({"retrained BASR", pct(*s.retrained_basr)});
    out += table(san) + "\n";
  }
  for (const SweepTable& t : r.sweeps) out += "Sweep over " + t.axis + "\n" + render_text(t) + "\n";
  return out;
}

void write_verdicts_csv(const std::vector<VerdictRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << kVerdictCsvHeader << "\n";
  for (const VerdictRow& r : rows) {
    out << r.id << ',' << r.y << ',';
    if (r.y_hat) out << *r.y_hat;
    out << ',' << (r.flagged ? 1 : 0) << ',';
    if (r.inferred_target) out << *r.inferred_target;
    out << ',' << r.method << "\n";
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

int parse_int_cell(const std::string& s, const std::string& field) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(field, "not an integer: '" + s + "'");
  }
}

std::optional<int> parse_optional_int(const std::string& s, const std::string& field) {
  if (s.empty()) return std::nullopt;
  return parse_int_cell(s, field);
}

}  // namespace

std::vector<VerdictRow> read_verdicts_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("file", "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kVerdictCsvHeader) throw FormatError("header", "unexpected verdict CSV header");
  std::vector<VerdictRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    const std::string where = "line " + std::to_string(line_no);
    if (cells.size() != 6) throw FormatError(where, "expected 6 cells, got " + std::to_string(cells.size()));
    VerdictRow r;
    r.id = cells[0];
    r.y = parse_int_cell(cells[1], where + ".y");
    r.y_hat = parse_optional_int(cells[2], where + ".y_hat");
    if (cells[3] != "0" && cells[3] != "1") throw FormatError(where + ".flagged", "expected 0 or 1");
    r.flagged = cells[3] == "1";
    r.inferred_target = parse_optional_int(cells[4], where + ".inferred_target");
    r.method = cells[5];
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_outputs(const ExperimentOutcome& outcome, const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write_text = [&dir](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << text;
  };
  write_text("report.json", report_json(outcome.report));
  write_text("report.txt", render_text(outcome.report));
  write_text("config.ini", to_ini(cfg));
  write_verdicts_csv(outcome.verdicts, dir / "verdicts.csv");
  if (!outcome.strip_scores.empty()) {
    std::string csv = "id,score\n";
    for (const auto& [id, score] : outcome.strip_scores) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", score);
      csv += id + "," + buf + "\n";
    }
    write_text("strip_scores.csv", csv);
  }
  if (outcome.model) save_model(*outcome.model, dir / "model.bin");
  if (outcome.perturbation) save_perturbation(*outcome.perturbation, dir / "perturbation.bin");
}

namespace {

struct Tally {
  RateCount flagged;
  RateCount accepted;
  RateCount accepted_target;
};

Tally tally(const std::vector<VerdictRow>& rows, const std::string& set, const std::string& method, int target) {
  Tally t;
  for (const VerdictRow& r : rows) {
    if (r.method != method || r.id.rfind(set + ":", 0) != 0) continue;
    ++t.flagged.denominator;
    ++t.accepted.denominator;
    ++t.accepted_target.denominator;
    t.flagged.numerator += r.flagged ? 1 : 0;
    t.accepted.numerator += r.flagged ? 0 : 1;
    t.accepted_target.numerator += (!r.flagged && r.y == target) ? 1 : 0;
  }
  return t;
}

void compare(std::vector<VerificationIssue>& issues, const std::string& field, const RateCount& expected,
             const ordered_json& reported) {
  const auto n = reported.at("count").get<std::size_t>();
  const auto d = reported.at("total").get<std::size_t>();
  if (n != expected.numerator || d != expected.denominator) {
    issues.push_back({field, std::to_string(expected.numerator) + "/" + std::to_string(expected.denominator),
                      std::to_string(n) + "/" + std::to_string(d)});
  }
}

}  // namespace

std::vector<VerificationIssue> verify_report(const std::filesystem::path& report_path,
                                             const std::filesystem::path& verdicts_csv) {
  std::ifstream in(report_path, std::ios::binary);
  if (!in) throw FormatError("file", "cannot read " + report_path.string());
  ordered_json doc;
  try {
    doc = ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("report", e.what());
  }
  const auto rows = read_verdicts_csv(verdicts_csv);
  std::vector<VerificationIssue> issues;
  try {
    const int target = doc.at("target_label").get<int>();
    const std::string method = doc.at("perturbation").at("method").get<std::string>();
    const Tally clean = tally(rows, "clean_test", method, target);
    const Tally stamped = tally(rows, "stamped_test", method, target);
    const auto& defense = doc.at("defense");
    compare(issues, "defense.frr", clean.flagged, defense.at("frr"));
    compare(issues, "defense.far", stamped.accepted, defense.at("far"));
    compare(issues, "defense.detected", stamped.flagged, defense.at("detected"));
    compare(issues, "defense.basr_after", stamped.accepted_target, defense.at("basr_after"));
    if (!doc.at("sanitization").is_null()) {
      const Tally train = tally(rows, "train", method, target);
      const auto& s = doc.at("sanitization");
      compare(issues, "sanitization.flagged", train.flagged,
              ordered_json{{"count", s.at("flagged")}, {"total", s.at("total")}});
    }
    for (const char* key : {"strip", "strip_matched"}) {
      if (doc.at(key).is_null()) continue;
      const Tally sc = tally(rows, "clean_test", key, target);
      const Tally ss = tally(rows, "stamped_test", key, target);
      const auto& s = doc.at(key);
      compare(issues, std::string(key) + ".frr", sc.flagged, s.at("frr"));
      compare(issues, std::string(key) + ".far", ss.accepted, s.at("far"));
      compare(issues, std::string(key) + ".basr_after", ss.accepted_target, s.at("basr_after"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("report", e.what());
  }
  return issues;
}

}  // namespace uapguard
