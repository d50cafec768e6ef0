#include "cbbreg/io_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace cbbreg {
namespace {

using nlohmann::json;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

bool is_missing(std::string_view s) {
  s = trim(s);
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "null";
}

std::optional<std::int64_t> parse_integer(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  std::int64_t value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec == std::errc() && ptr == s.data() + s.size()) return value;
  // Accept integral decimals such as "3.0".
  double real = 0.0;
  const auto [rptr, rec] = std::from_chars(s.data(), s.data() + s.size(), real);
  if (rec == std::errc() && rptr == s.data() + s.size() && std::isfinite(real) &&
      real == std::floor(real) && std::abs(real) < 9e15) {
    return static_cast<std::int64_t>(real);
  }
  return std::nullopt;
}

std::optional<double> parse_real(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

std::string fixed(double value, int decimals) {
  if (!std::isfinite(value)) return "n/a";
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%.*f", decimals, value);
  return buffer;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::string pad_left(std::string s, std::size_t width) {
  if (s.size() < width) s.insert(0, width - s.size(), ' ');
  return s;
}

std::string quote_field(const std::string& s, char delimiter) {
  if (s.find_first_of(std::string{delimiter, '"', '\n', '\r'}) == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string shortest(double v) {
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, v);
  return std::string(buffer, ptr);
}

std::string short_family(Family f) {
  switch (f) {
    case Family::binomial:
      return "B";
    case Family::beta_binomial:
      return "BB";
    case Family::contaminated_beta_binomial:
      return "cBB";
  }
  return "?";
}

std::string long_family(Family f) {
  switch (f) {
    case Family::binomial:
      return "binomial";
    case Family::beta_binomial:
      return "beta-binomial";
    case Family::contaminated_beta_binomial:
      return "contaminated beta-binomial";
  }
  return "?";
}

json comparison_json(const ModelComparison& c) {
  json out;
  out["models"] = json::array();
  for (const auto& e : c.entries) {
    out["models"].push_back({{"family", std::string(to_string(e.family))},
                             {"parameters", e.parameters},
                             {"log_likelihood", e.log_likelihood},
                             {"aic", e.aic},
                             {"bic", e.bic},
                             {"hqic", e.hqic},
                             {"aic_rank", e.aic_rank},
                             {"bic_rank", e.bic_rank},
                             {"hqic_rank", e.hqic_rank}});
  }
  out["lr_tests"] = json::array();
  for (const auto& t : c.tests) {
    out["lr_tests"].push_back({{"null", std::string(to_string(t.null_family))},
                               {"alternative", std::string(to_string(t.alternative_family))},
                               {"statistic", t.result.statistic},
                               {"df", t.result.df},
                               {"p_value", t.result.p_value}});
  }
  return out;
}

json report_json(const FitResult& fit, const InferenceReport& report) {
  json out;
  out["family"] = std::string(to_string(report.family));
  out["observations"] = report.observations;
  out["parameters"] = report.parameters;
  out["log_likelihood"] = report.log_likelihood;
  out["aic"] = report.aic;
  out["bic"] = report.bic;
  out["hqic"] = report.hqic;
  out["iterations"] = fit.iterations;
  out["converged"] = fit.converged;
  out["hessian_ok"] = report.hessian_ok;
  out["condition_number"] = report.condition_number;
  out["coefficients"] = json::array();
  for (std::size_t j = 0; j < report.parameter_names.size(); ++j) {
    const auto idx = static_cast<Eigen::Index>(j);
    json c = {{"name", report.parameter_names[j]},
              {"estimate", report.estimates[idx]},
              {"unreliable", static_cast<bool>(report.unreliable[j])}};
    c["se"] = report.hessian_ok ? json(report.standard_errors[idx]) : json(nullptr);
    out["coefficients"].push_back(c);
  }
  if (fit.family == Family::contaminated_beta_binomial && fit.posterior_weights.size() > 0) {
    const auto& w = fit.posterior_weights;
    out["posterior_weights"] = {{"min", w.minCoeff()},
                                {"mean", w.mean()},
                                {"max", w.maxCoeff()},
                                {"count_above_half", (w.array() > 0.5).count()}};
  }
  out["diagnostics"] = fit.diagnostics;
  for (const auto& d : report.diagnostics) out["diagnostics"].push_back(d);
  return out;
}

std::string report_table(const FitResult& fit, const InferenceReport& report) {
  std::ostringstream out;
  out << "Model: " << long_family(report.family) << "\n";
  out << "Observations: " << report.observations << "   Parameters: " << report.parameters
      << "\n\n";
  std::size_t width = 12;
  for (const auto& name : report.parameter_names) width = std::max(width, name.size() + 2);
  out << pad("Coefficient", width) << "Estimate (SE)\n";
  bool any_unreliable = false;
  for (std::size_t j = 0; j < report.parameter_names.size(); ++j) {
    const auto idx = static_cast<Eigen::Index>(j);
    const std::string se = report.hessian_ok ? fixed(report.standard_errors[idx], 3) : "n/a";
    out << pad(report.parameter_names[j], width) << fixed(report.estimates[idx], 3) << " (" << se
        << ")";
    if (report.unreliable[j]) {
      out << " *";
      any_unreliable = true;
    }
    out << "\n";
  }
  if (any_unreliable) out << "* linear predictor beyond |30|; the likelihood is nearly flat\n";
  out << "\n";
  out << pad("Log-likelihood", 16) << fixed(report.log_likelihood, 3) << "\n";
  out << pad("AIC", 16) << fixed(report.aic, 3) << "\n";
  out << pad("BIC", 16) << fixed(report.bic, 3) << "\n";
  out << pad("HQIC", 16) << fixed(report.hqic, 3) << "\n";
  out << pad("Iterations", 16) << fit.iterations << (fit.converged ? " (converged)" : " (not converged)")
      << "\n";
  if (fit.family == Family::contaminated_beta_binomial && fit.posterior_weights.size() > 0) {
    const auto& w = fit.posterior_weights;
    out << "Posterior weights: min " << fixed(w.minCoeff(), 3) << "  mean " << fixed(w.mean(), 3)
        << "  max " << fixed(w.maxCoeff(), 3) << "  above 0.5: " << (w.array() > 0.5).count()
        << "\n";
  }
  for (const auto& d : fit.diagnostics) out << "note: " << d << "\n";
  for (const auto& d : report.diagnostics) out << "note: " << d << "\n";
  return out.str();
}

}  // namespace

void CsvSchema::validate() const {
  if (response_column.empty()) throw std::invalid_argument("schema: response column is required");
  if (trials_column.has_value() == trials_constant.has_value()) {
    throw std::invalid_argument("schema: give either a trials column or a constant m");
  }
  if (trials_constant && *trials_constant < 1) {
    throw std::invalid_argument("schema: constant m must be >= 1");
  }
  if (trials_column && *trials_column == response_column) {
    throw std::invalid_argument("schema: response and trials columns must differ");
  }
  for (const auto& c : covariate_columns) {
    if (c == response_column || (trials_column && c == *trials_column)) {
      throw std::invalid_argument("schema: covariate '" + c +
                                  "' is also the response or trials column");
    }
  }
  if (delimiter == '"' || delimiter == '\n' || delimiter == '\r') {
    throw std::invalid_argument("schema: invalid delimiter");
  }
}

std::vector<CsvRecord> parse_csv(std::string_view text, char delimiter) {
  if (text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  std::vector<CsvRecord> records;
  CsvRecord record;
  std::string field;
  std::size_t line = 1;
  record.line = 1;
  bool in_quotes = false;
  bool after_quote = false;
  bool field_started = false;

  auto end_field = [&] {
    record.fields.push_back(std::move(field));
    field.clear();
    after_quote = false;
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    const bool blank = record.fields.size() == 1 && record.fields[0].empty();
    if (!blank) records.push_back(std::move(record));
    record = CsvRecord{};
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
          after_quote = true;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    if (c == delimiter) {
      end_field();
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      end_record();
      ++line;
      record.line = line;
    } else if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (after_quote) {
      if (c == ' ' || c == '\t') continue;
      throw InputError("line " + std::to_string(line) + ": unexpected character after closing quote",
                       line);
    } else {
      field += c;
      field_started = true;
    }
  }
  if (in_quotes) {
    throw InputError("line " + std::to_string(record.line) + ": unterminated quoted field",
                     record.line);
  }
  if (!record.fields.empty() || !field.empty() || field_started) end_record();
  return records;
}

Dataset parse_dataset(std::string_view text, const CsvSchema& schema, const std::string& source) {
  schema.validate();
  const auto records = parse_csv(text, schema.delimiter);
  auto fail = [&](std::size_t line, const std::string& what) -> InputError {
    return InputError(source + ":" + std::to_string(line) + ": " + what, line);
  };

  std::vector<std::string> names;
  std::size_t first = 0;
  if (schema.header) {
    if (records.empty()) throw InputError(source + ": empty file (no header)", 0);
    for (const auto& f : records[0].fields) names.emplace_back(trim(f));
    first = 1;
    std::set<std::string> seen;
    for (const auto& n : names) {
      if (!seen.insert(n).second) throw fail(records[0].line, "duplicate column '" + n + "'");
    }
  } else if (!records.empty()) {
    for (std::size_t j = 0; j < records[0].fields.size(); ++j) {
      names.push_back("V" + std::to_string(j + 1));
    }
  }
  if (records.size() <= first) throw InputError(source + ": no data rows", 0);

  auto column = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw InputError(source + ": no column named '" + name + "'", 0);
    return static_cast<std::size_t>(it - names.begin());
  };
  const std::size_t response = column(schema.response_column);
  const std::optional<std::size_t> trials =
      schema.trials_column ? std::optional(column(*schema.trials_column)) : std::nullopt;
  const std::vector<std::string>& covariates = schema.covariate_columns;
  std::vector<std::size_t> cov_index;
  for (const auto& c : covariates) cov_index.push_back(column(c));

  const std::size_t n = records.size() - first;
  std::vector<std::int64_t> y(n), m(n);
  std::vector<std::vector<std::string>> raw(covariates.size(), std::vector<std::string>(n));
  std::vector<std::size_t> lines(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto& rec = records[first + r];
    lines[r] = rec.line;
    if (rec.fields.size() != names.size()) {
      throw fail(rec.line, "expected " + std::to_string(names.size()) + " fields, found " +
                               std::to_string(rec.fields.size()));
    }
    const auto& yf = rec.fields[response];
    if (is_missing(yf)) throw fail(rec.line, "missing value in '" + schema.response_column + "'");
    const auto yv = parse_integer(yf);
    if (!yv) throw fail(rec.line, "'" + std::string(trim(yf)) + "' is not an integer count");
    y[r] = *yv;
    if (trials) {
      const auto& mf = rec.fields[*trials];
      if (is_missing(mf)) throw fail(rec.line, "missing value in '" + *schema.trials_column + "'");
      const auto mv = parse_integer(mf);
      if (!mv) throw fail(rec.line, "'" + std::string(trim(mf)) + "' is not an integer trial count");
      m[r] = *mv;
    } else {
      m[r] = *schema.trials_constant;
    }
    if (m[r] < 1) throw fail(rec.line, "trials m=" + std::to_string(m[r]) + " must be >= 1");
    if (y[r] < 0 || y[r] > m[r]) {
      throw fail(rec.line, "count y=" + std::to_string(y[r]) + " outside [0, m=" +
                               std::to_string(m[r]) + "]");
    }
    for (std::size_t j = 0; j < covariates.size(); ++j) {
      const auto& f = rec.fields[cov_index[j]];
      if (is_missing(f)) throw fail(rec.line, "missing value in '" + covariates[j] + "'");
      raw[j][r] = std::string(trim(f));
    }
  }

  Dataset data;
  data.y = std::move(y);
  data.m = std::move(m);
  std::vector<std::pair<std::string, Eigen::VectorXd>> columns;
  for (std::size_t j = 0; j < covariates.size(); ++j) {
    Eigen::VectorXd values(static_cast<Eigen::Index>(n));
    bool numeric = true;
    for (std::size_t r = 0; r < n && numeric; ++r) {
      const auto v = parse_real(raw[j][r]);
      if (v) {
        values[static_cast<Eigen::Index>(r)] = *v;
      } else {
        numeric = false;
      }
    }
    if (numeric) {
      columns.emplace_back(covariates[j], values);
      continue;
    }
    const std::set<std::string> levels(raw[j].begin(), raw[j].end());
    std::vector<std::string> indicators;
    for (auto it = std::next(levels.begin()); it != levels.end(); ++it) {
      const std::string name = covariates[j] + "[" + *it + "]";
      Eigen::VectorXd ind(static_cast<Eigen::Index>(n));
      for (std::size_t r = 0; r < n; ++r) ind[static_cast<Eigen::Index>(r)] = raw[j][r] == *it ? 1.0 : 0.0;
      columns.emplace_back(name, ind);
      indicators.push_back(name);
    }
    data.factors[covariates[j]] = indicators;
  }
  data.covariates.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) {
    data.covariates.col(static_cast<Eigen::Index>(j)) = columns[j].second;
    data.covariate_names.push_back(columns[j].first);
  }
  data.validate();
  return data;
}

Dataset read_dataset(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'", 0);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_dataset(buffer.str(), schema, path.string());
}

void write_dataset(const Dataset& data, const std::filesystem::path& path, char delimiter) {
  data.validate();
  std::ostringstream out;
  out << "y" << delimiter << "m";
  for (const auto& name : data.covariate_names) out << delimiter << quote_field(name, delimiter);
  out << "\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.y[i] << delimiter << data.m[i];
    for (Eigen::Index j = 0; j < data.covariates.cols(); ++j) {
      out << delimiter << shortest(data.covariates(static_cast<Eigen::Index>(i), j));
    }
    out << "\n";
  }
  write_text(out.str(), path);
}

ReportFormat parse_format(std::string_view text) {
  if (text == "json") return ReportFormat::json;
  if (text == "table") return ReportFormat::table;
  throw std::invalid_argument("unknown format '" + std::string(text) + "' (expected json or table)");
}

std::string render_report(const FitResult& fit, const InferenceReport& report, ReportFormat format,
                          const ModelComparison* comparison) {
  if (format == ReportFormat::json) {
    json out = report_json(fit, report);
    if (comparison) out["comparison"] = comparison_json(*comparison);
    return out.dump(2) + "\n";
  }
  std::string text = report_table(fit, report);
  if (comparison) text += "\n" + render_comparison(*comparison);
  return text;
}

void write_report(const FitResult& fit, const InferenceReport& report,
                  const std::filesystem::path& path, ReportFormat format,
                  const ModelComparison* comparison) {
  write_text(render_report(fit, report, format, comparison), path);
}

std::string render_comparison(const ModelComparison& comparison) {
  std::ostringstream out;
  out << pad("Model", 7) << pad_left("k", 3) << pad_left("Log-lik", 12) << pad_left("AIC", 12)
      << pad_left("BIC", 12) << pad_left("HQIC", 12) << "   Ranks (AIC/BIC/HQIC)\n";
  for (const auto& e : comparison.entries) {
    out << pad(short_family(e.family), 7) << pad_left(std::to_string(e.parameters), 3)
        << pad_left(fixed(e.log_likelihood, 3), 12) << pad_left(fixed(e.aic, 3), 12)
        << pad_left(fixed(e.bic, 3), 12) << pad_left(fixed(e.hqic, 3), 12) << "   " << e.aic_rank
        << "/" << e.bic_rank << "/" << e.hqic_rank << "\n";
  }
  for (const auto& t : comparison.tests) {
    out << "LR test " << short_family(t.null_family) << " vs " << short_family(t.alternative_family)
        << ": statistic " << fixed(t.result.statistic, 3) << ", df " << t.result.df
        << ", p-value " << fixed(t.result.p_value, 3) << "\n";
  }
  return out.str();
}

std::string render_study(const StudyReport& study, ReportFormat format) {
  const auto& cfg = study.config;
  const Family families[] = {Family::binomial, Family::beta_binomial,
                             Family::contaminated_beta_binomial};
  if (format == ReportFormat::json) {
    json out;
    out["n"] = cfg.n;
    out["m"] = cfg.m;
    out["true_beta"] = cfg.true_beta;
    out["replications"] = cfg.replications;
    out["seed"] = cfg.seed;
    out["failures"] = study.failures;
    out["non_converged"] = study.non_converged;
    out["cells"] = json::array();
    for (const auto& c : study.cells) {
      out["cells"].push_back({{"family", std::string(to_string(c.family))},
                              {"fraction", c.fraction},
                              {"coefficient", "beta" + std::to_string(c.coefficient)},
                              {"bias", c.bias},
                              {"mse", c.mse},
                              {"fits", c.fits}});
    }
    return out.dump(2) + "\n";
  }

  std::ostringstream out;
  out << "Sensitivity study: n=" << cfg.n << ", m=" << cfg.m << ", beta=(";
  for (std::size_t j = 0; j < cfg.true_beta.size(); ++j) {
    out << (j ? ", " : "") << shortest(cfg.true_beta[j]);
  }
  out << "), " << cfg.replications << " replications, seed " << cfg.seed << "\n\n";

  constexpr std::size_t kCol = 10;
  out << pad("", 16);
  for (const double f : cfg.fractions) {
    char label[64];
    std::snprintf(label, sizeof label, "%.6g%% contamination", 100.0 * f);
    out << pad_left(label, 3 * kCol) << "  ";
  }
  out << "\n" << pad("Measure", 8) << pad("Coef", 8);
  for (std::size_t f = 0; f < cfg.fractions.size(); ++f) {
    for (const Family fam : families) out << pad_left(short_family(fam), kCol);
    out << "  ";
  }
  out << "\n";
  for (const char* measure : {"Bias", "MSE"}) {
    for (std::size_t j = 0; j < cfg.true_beta.size(); ++j) {
      out << pad(j == 0 ? measure : "", 8) << pad("beta" + std::to_string(j), 8);
      for (const double f : cfg.fractions) {
        for (const Family fam : families) {
          const auto& c = study.cell(fam, f, j);
          out << pad_left(fixed(std::string(measure) == "Bias" ? c.bias : c.mse, 4), kCol);
        }
        out << "  ";
      }
      out << "\n";
    }
  }
  out << "\nFailed fits: " << study.failures << "   Not converged: " << study.non_converged << "\n";
  std::string text = out.str();
  std::string cleaned;
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) {
    line.erase(line.find_last_not_of(' ') + 1);
    cleaned += line + "\n";
  }
  return cleaned;
}

void write_text(const std::string& text, const std::filesystem::path& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("error writing '" + path.string() + "'");
}

}  // namespace cbbreg
