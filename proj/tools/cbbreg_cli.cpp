// cbbreg: fit bounded-count regressions, run the contamination study, and
// tabulate distributions from the command line.
//
// Exit status: 0 success, 1 usage or input error, 2 numerical non-convergence.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cbbreg/distributions.hpp"
#include "cbbreg/inference.hpp"
#include "cbbreg/io_data.hpp"
#include "cbbreg/regression.hpp"
#include "cbbreg/simulation.hpp"

namespace {

using namespace cbbreg;

constexpr int kOk = 0;
constexpr int kInputError = 1;
constexpr int kNotConverged = 2;

struct Formula {
  std::string response;
  std::vector<std::string> terms;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

// "y ~ x + z", "~ 1", or a bare right-hand side "x + z".
Formula parse_formula(const std::string& text) {
  Formula f;
  std::string rhs = text;
  if (const auto tilde = text.find('~'); tilde != std::string::npos) {
    f.response = trim(text.substr(0, tilde));
    rhs = text.substr(tilde + 1);
  }
  std::stringstream in(rhs);
  std::string term;
  bool any = false;
  while (std::getline(in, term, '+')) {
    term = trim(term);
    if (term.empty()) throw std::invalid_argument("empty term in formula '" + text + "'");
    any = true;
    if (term == "1") continue;
    if (term == "0" || term == "-1") {
      throw std::invalid_argument("formula '" + text + "': models without an intercept are not supported");
    }
    f.terms.push_back(term);
  }
  if (!any) throw std::invalid_argument("formula '" + text + "' has no right-hand side");
  return f;
}

struct FitOptions {
  std::string input;
  std::string pi = "~ 1";
  std::string sigma = "~ 1";
  std::string delta = "~ 1";
  std::string eta = "~ 1";
  std::string response;
  std::string trials_column;
  std::int64_t trials_constant = 0;
  std::string delimiter = ",";
  bool no_header = false;
  std::string family = "cbb";
  bool compare = false;
  std::string optimizer = "bfgs";
  double epsilon = 1e-10;
  int max_iter = 1000;
  int restarts = 0;
  std::uint64_t seed = 0;
  std::string output;
  std::string format = "table";
};

struct SimulateOptions {
  std::size_t n = 500;
  std::int64_t m = 10;
  std::vector<double> beta = {2.0, 1.0};
  std::vector<double> fractions = {0.01, 0.05};
  std::size_t replications = 1000;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  double epsilon = 1e-10;
  int max_iter = 1000;
  std::string output;
  std::string format = "table";
};

struct DistOptions {
  std::string family = "cbb";
  std::int64_t m = 10;
  double pi = 0.5;
  double sigma = 0.1;
  double delta = 0.05;
  double eta = 1.5;
  std::string format = "table";
};

FitControl make_control(double epsilon, int max_iter, int restarts, std::uint64_t seed,
                        const std::string& optimizer) {
  FitControl c;
  c.epsilon = epsilon;
  c.max_iterations = max_iter;
  c.restarts = restarts;
  c.seed = seed;
  if (optimizer == "bfgs") {
    c.inner_optimizer = optim::Method::quasi_newton;
  } else if (optimizer == "nelder-mead") {
    c.inner_optimizer = optim::Method::simplex;
  } else {
    throw std::invalid_argument("unknown optimizer '" + optimizer + "' (expected bfgs or nelder-mead)");
  }
  c.validate();
  return c;
}

int cmd_fit(const FitOptions& o) {
  const Formula pi = parse_formula(o.pi);
  const Formula sigma = parse_formula(o.sigma);
  const Formula delta = parse_formula(o.delta);
  const Formula eta = parse_formula(o.eta);

  CsvSchema schema;
  schema.response_column = !o.response.empty() ? o.response : pi.response;
  if (schema.response_column.empty()) {
    throw std::invalid_argument("no response column: use --pi \"y ~ ...\" or --response");
  }
  if (!o.trials_column.empty() && o.trials_constant > 0) {
    throw std::invalid_argument("--trials and --m are mutually exclusive");
  }
  if (!o.trials_column.empty()) {
    schema.trials_column = o.trials_column;
  } else if (o.trials_constant > 0) {
    schema.trials_constant = o.trials_constant;
  } else {
    throw std::invalid_argument("give the number of trials with --trials COLUMN or --m N");
  }
  if (o.delimiter.size() != 1) throw std::invalid_argument("--delimiter must be one character");
  schema.delimiter = o.delimiter == "\\t" ? '\t' : o.delimiter[0];
  schema.header = !o.no_header;
  std::set<std::string> seen;
  for (const auto* f : {&pi, &sigma, &delta, &eta}) {
    for (const auto& t : f->terms) {
      if (seen.insert(t).second) schema.covariate_columns.push_back(t);
    }
  }

  const Dataset data = read_dataset(o.input, schema);
  ModelSpec spec;
  spec.pi_terms = pi.terms;
  spec.sigma_terms = sigma.terms;
  spec.delta_terms = delta.terms;
  spec.eta_terms = eta.terms;
  spec.family = parse_family(o.family);
  const FitControl control = make_control(o.epsilon, o.max_iter, o.restarts, o.seed, o.optimizer);
  const ReportFormat format = parse_format(o.format);

  FitResult result;
  std::optional<ModelComparison> comparison;
  if (o.compare) {
    std::vector<InferenceReport> reports;
    std::vector<FitResult> fits;
    if (spec.family == Family::contaminated_beta_binomial) {
      NestedFits nested = fit_nested(data, spec, control);
      fits = {nested.binomial, nested.beta_binomial, nested.contaminated};
    } else {
      for (Family f : {Family::binomial, Family::beta_binomial}) {
        ModelSpec s = spec;
        s.family = f;
        fits.push_back(fit(data, s, std::nullopt, control));
        if (f == spec.family) break;
      }
    }
    for (const auto& f : fits) reports.push_back(standard_errors(data, spec, f));
    comparison = compare_models(reports);
    result = fits.back();
  } else {
    result = fit(data, spec, std::nullopt, control);
  }
  const InferenceReport report = standard_errors(data, spec, result);
  write_report(result, report, o.output, format, comparison ? &*comparison : nullptr);
  if (!result.converged) {
    std::cerr << "cbbreg: fit did not converge within " << control.max_iterations
              << " iterations\n";
    return kNotConverged;
  }
  return kOk;
}

int cmd_simulate(const SimulateOptions& o) {
  StudyConfig config;
  config.n = o.n;
  config.m = o.m;
  config.true_beta = o.beta;
  config.fractions = o.fractions;
  config.replications = o.replications;
  config.seed = o.seed;
  config.threads = o.threads;
  const FitControl control = make_control(o.epsilon, o.max_iter, 0, 0, "bfgs");
  const ReportFormat format = parse_format(o.format);
  config.validate();
  StudyReport study;
  try {
    study = run_sensitivity_study(config, control);
  } catch (const std::runtime_error& e) {
    std::cerr << "cbbreg: " << e.what() << "\n";
    return kNotConverged;
  }
  write_text(render_study(study, format), o.output);
  return kOk;
}

int cmd_dist(const DistOptions& o) {
  const Family family = parse_family(o.family);
  const ReportFormat format = parse_format(o.format);
  if (o.m < 1) throw std::domain_error("m must be >= 1");
  std::vector<double> pmf;
  MomentSet moments;
  const CBBParams cbb{o.pi, o.sigma, o.delta, o.eta};
  switch (family) {
    case Family::binomial:
      moments = binom_moments(o.m, o.pi);
      for (std::int64_t y = 0; y <= o.m; ++y) pmf.push_back(std::exp(binom_log_pmf({y, o.m}, o.pi)));
      break;
    case Family::beta_binomial:
      moments = bb_moments(o.m, cbb.reference());
      for (std::int64_t y = 0; y <= o.m; ++y) {
        pmf.push_back(std::exp(bb_log_pmf({y, o.m}, cbb.reference())));
      }
      break;
    case Family::contaminated_beta_binomial:
      moments = cbb_moments(o.m, cbb);
      for (std::int64_t y = 0; y <= o.m; ++y) pmf.push_back(std::exp(cbb_log_pmf({y, o.m}, cbb)));
      break;
  }

  std::ostringstream out;
  if (format == ReportFormat::json) {
    nlohmann::json j;
    j["family"] = std::string(to_string(family));
    j["m"] = o.m;
    j["parameters"]["pi"] = o.pi;
    if (family != Family::binomial) j["parameters"]["sigma"] = o.sigma;
    if (family == Family::contaminated_beta_binomial) {
      j["parameters"]["delta"] = o.delta;
      j["parameters"]["eta"] = o.eta;
    }
    j["pmf"] = pmf;
    j["moments"] = {{"mean", moments.mean},
                    {"variance", moments.variance},
                    {"skewness", moments.skewness},
                    {"excess_kurtosis", moments.excess_kurtosis}};
    out << j.dump(2) << "\n";
  } else {
    char line[96];
    out << "y  probability\n";
    for (std::size_t y = 0; y < pmf.size(); ++y) {
      std::snprintf(line, sizeof line, "%zu  %.17g\n", y, pmf[y]);
      out << line;
    }
    out << "\n";
    const std::pair<const char*, double> rows[] = {{"mean", moments.mean},
                                                   {"variance", moments.variance},
                                                   {"skewness", moments.skewness},
                                                   {"excess_kurtosis", moments.excess_kurtosis}};
    for (const auto& [name, value] : rows) {
      std::snprintf(line, sizeof line, "%-16s %.17g\n", name, value);
      out << line;
    }
  }
  std::cout << out.str();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contaminated beta-binomial regression for bounded counts"};
  app.require_subcommand(1);

  FitOptions fit_opts;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a regression model to a CSV file");
  fit_cmd->add_option("input", fit_opts.input, "CSV file")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--pi", fit_opts.pi, "Formula for pi, e.g. \"y ~ x + z\"");
  fit_cmd->add_option("--sigma", fit_opts.sigma, "Formula for sigma, e.g. \"~ age\"");
  fit_cmd->add_option("--delta", fit_opts.delta, "Formula for delta");
  fit_cmd->add_option("--eta", fit_opts.eta, "Formula for eta");
  fit_cmd->add_option("--response", fit_opts.response, "Response column (overrides the --pi left-hand side)");
  fit_cmd->add_option("--trials", fit_opts.trials_column, "Column holding the number of trials");
  fit_cmd->add_option("--m", fit_opts.trials_constant, "Number of trials shared by all rows");
  fit_cmd->add_option("--delimiter", fit_opts.delimiter, "Field delimiter")->capture_default_str();
  fit_cmd->add_flag("--no-header", fit_opts.no_header, "Input has no header row (columns V1, V2, ...)");
  fit_cmd->add_option("--family", fit_opts.family, "binom, bb or cbb")->capture_default_str();
  fit_cmd->add_flag("--compare", fit_opts.compare, "Also fit the nested models and compare them");
  fit_cmd->add_option("--optimizer", fit_opts.optimizer, "bfgs or nelder-mead")->capture_default_str();
  fit_cmd->add_option("--epsilon", fit_opts.epsilon, "Log-likelihood convergence threshold")->capture_default_str();
  fit_cmd->add_option("--max-iter", fit_opts.max_iter, "Maximum iterations")->capture_default_str();
  fit_cmd->add_option("--restarts", fit_opts.restarts, "Extra randomly perturbed starts")->capture_default_str();
  fit_cmd->add_option("--seed", fit_opts.seed, "Seed for restarts")->capture_default_str();
  fit_cmd->add_option("-o,--output", fit_opts.output, "Output file (default: standard output)");
  fit_cmd->add_option("--format", fit_opts.format, "json or table")->capture_default_str();

  SimulateOptions sim_opts;
  auto* sim_cmd = app.add_subcommand("simulate", "Run the contamination sensitivity study");
  sim_cmd->add_option("--n", sim_opts.n, "Rows per dataset")->capture_default_str();
  sim_cmd->add_option("--m", sim_opts.m, "Trials per row")->capture_default_str();
  sim_cmd->add_option("--beta", sim_opts.beta, "True coefficients (intercept first)")->delimiter(',')->capture_default_str();
  sim_cmd->add_option("--fraction", sim_opts.fractions, "Contamination fractions")->delimiter(',')->capture_default_str();
  sim_cmd->add_option("--replications", sim_opts.replications, "Datasets per fraction")->capture_default_str();
  sim_cmd->add_option("--seed", sim_opts.seed, "Base seed")->capture_default_str();
  sim_cmd->add_option("--threads", sim_opts.threads, "Worker threads (0 = all cores)")->capture_default_str();
  sim_cmd->add_option("--epsilon", sim_opts.epsilon, "EM convergence threshold")->capture_default_str();
  sim_cmd->add_option("--max-iter", sim_opts.max_iter, "Maximum EM iterations")->capture_default_str();
  sim_cmd->add_option("-o,--output", sim_opts.output, "Output file (default: standard output)");
  sim_cmd->add_option("--format", sim_opts.format, "json or table")->capture_default_str();

  DistOptions dist_opts;
  auto* dist_cmd = app.add_subcommand("dist", "Print a probability mass function and its moments");
  dist_cmd->add_option("--family", dist_opts.family, "binom, bb or cbb")->capture_default_str();
  dist_cmd->add_option("--m", dist_opts.m, "Number of trials")->capture_default_str();
  dist_cmd->add_option("--pi", dist_opts.pi, "Mean parameter")->capture_default_str();
  dist_cmd->add_option("--sigma", dist_opts.sigma, "Dispersion")->capture_default_str();
  dist_cmd->add_option("--delta", dist_opts.delta, "Contamination proportion")->capture_default_str();
  dist_cmd->add_option("--eta", dist_opts.eta, "Degree of contamination")->capture_default_str();
  dist_cmd->add_option("--format", dist_opts.format, "json or table")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (*fit_cmd) return cmd_fit(fit_opts);
    if (*sim_cmd) return cmd_simulate(sim_opts);
    if (*dist_cmd) return cmd_dist(dist_opts);
  } catch (const std::exception& e) {
    std::cerr << "cbbreg: " << e.what() << "\n";
    return kInputError;
  }
  return kInputError;
}
