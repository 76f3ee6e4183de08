#ifndef CBW_HARNESS_REPORT_HPP
#define CBW_HARNESS_REPORT_HPP

#include "cbw/csv.hpp"
#include "cbw/harness/grid.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace cbw {

inline constexpr std::array<const char*, 14> kReportColumns = {
    "mechanism", "outcome_model",    "strategy",         "method_family",      "moments", "estimand", "n_reps",
    "abs_bias",  "mae",              "rmse",             "mean_ess_treated",   "mean_ess_control",
    "converged_fraction",            "mc_se"};

enum class ReportFormat { Csv, Markdown };

inline ReportFormat parse_report_format(std::string_view s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "md" || s == "markdown") return ReportFormat::Markdown;
  throw ConfigError("unknown report format '" + std::string(s) + "' (expected csv or md)");
}

inline std::string report_csv(const std::vector<CellResult>& cells) {
  std::ostringstream out;
  csv::write_row(out, std::vector<std::string>(kReportColumns.begin(), kReportColumns.end()));
  for (const auto& c : cells) {
    csv::write_row(out, {dgp::to_string(c.key.mechanism), std::to_string(static_cast<int>(c.key.outcome_model)),
                         std::to_string(static_cast<int>(c.key.strategy)), to_string(c.key.method.family),
                         std::to_string(c.key.method.moments), to_string(c.key.method.estimand),
                         std::to_string(c.n_reps), csv::format_double(c.abs_bias), csv::format_double(c.mae),
                         csv::format_double(c.rmse), csv::format_double(c.mean_ess_treated),
                         csv::format_double(c.mean_ess_control), csv::format_double(c.converged_fraction),
                         csv::format_double(c.mc_se)});
  }
  return out.str();
}

/// Parses a results CSV. A missing column raises DataError listing every
/// absent name.
inline std::vector<CellResult> parse_report_csv(std::string_view text) {
  const csv::Table table = csv::parse(text);
  std::vector<std::string> missing;
  std::array<long, kReportColumns.size()> idx{};
  for (std::size_t k = 0; k < kReportColumns.size(); ++k) {
    idx[k] = table.column(kReportColumns[k]);
    if (idx[k] < 0) missing.emplace_back(kReportColumns[k]);
  }
  if (!missing.empty()) {
    std::string msg = "results schema mismatch; missing columns:";
    for (const auto& m : missing) msg += " " + m;
    throw DataError(msg);
  }

  std::vector<CellResult> cells;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    auto field = [&](std::size_t k) -> const std::string& { return row[static_cast<std::size_t>(idx[k])]; };
    auto num = [&](std::size_t k) {
      return csv::parse_double(field(k), "row " + std::to_string(r + 2) + ", column " + kReportColumns[k]);
    };
    auto integer = [&](std::size_t k) { return static_cast<int>(num(k)); };
    try {
      CellResult c;
      c.key.mechanism = dgp::parse_mechanism(field(0));
      c.key.outcome_model = dgp::outcome_model_from_int(integer(1));
      c.key.strategy = dgp::strategy_from_int(integer(2));
      c.key.method = MethodSpec(parse_method_family(field(3)), integer(4), parse_estimand(field(5)));
      c.n_reps = integer(6);
      c.abs_bias = num(7);
      c.mae = num(8);
      c.rmse = num(9);
      c.mean_ess_treated = num(10);
      c.mean_ess_control = num(11);
      c.converged_fraction = num(12);
      c.mc_se = num(13);
      cells.push_back(c);
    } catch (const ConfigError& e) {
      throw DataError("row " + std::to_string(r + 2) + ": " + e.what());
    }
  }
  return cells;
}

inline std::string method_label(const MethodSpec& m) {
  std::string s;
  switch (m.family) {
    case MethodFamily::Logit:
      s = "Logit";
      break;
    case MethodFamily::Gbm:
      s = "GBM";
      break;
    case MethodFamily::Eb:
      s = "EB m=" + std::to_string(m.moments);
      break;
    case MethodFamily::CbpsDefault:
      s = "CBPS (Default) m=" + std::to_string(m.moments);
      break;
    case MethodFamily::CbpsExact:
      s = "CBPS (Exact) m=" + std::to_string(m.moments);
      break;
  }
  if (m.estimand == Estimand::ATE) s += " [ATE]";
  return s;
}

/// Three tables (absolute bias, mean absolute error, RMSE), one row per
/// mechanism and one column per method.
inline std::string report_markdown(const std::vector<CellResult>& cells) {
  const std::vector<TableRow> rows = aggregate_table(cells);
  std::ostringstream out;
  auto fmt = [](double v) {
    if (std::isnan(v)) return std::string("NA");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return std::string(buf);
  };
  auto table = [&](const char* title, double TableEntry::*field) {
    out << "### " << title << "\n\n| PS |";
    if (!rows.empty()) {
      for (const auto& e : rows.front().entries) out << ' ' << method_label(e.method) << " |";
    }
    out << "\n|---|";
    if (!rows.empty()) {
      for (std::size_t k = 0; k < rows.front().entries.size(); ++k) out << "---:|";
    }
    out << '\n';
    for (const auto& row : rows) {
      out << "| " << dgp::to_string(row.mechanism) << " |";
      for (const auto& e : row.entries) out << ' ' << fmt(e.*field) << " |";
      out << '\n';
    }
    out << '\n';
  };
  table("Absolute bias |mean(tau) - theta|", &TableEntry::abs_bias);
  table("Mean absolute error mean|tau - theta|", &TableEntry::mae);
  table("RMSE", &TableEntry::rmse);
  return out.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << text;
  out.flush();
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

inline void write_report(const SimReport& report, const std::filesystem::path& path, ReportFormat format) {
  write_text(path, format == ReportFormat::Csv ? report_csv(report.cells) : report_markdown(report.cells));
}

}  // namespace cbw

#endif  // CBW_HARNESS_REPORT_HPP
