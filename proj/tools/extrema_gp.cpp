#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "extrema_gp/extrema_gp.hpp"

namespace fs = std::filesystem;
using namespace extrema_gp;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitValidation = 4;

struct EbFlags {
  int starts = EBConfig{}.starts;
  std::vector<double> lambda_bounds;
  std::vector<double> h_bounds;
  std::vector<double> sigma2_bounds;

  void add(CLI::App* cmd) {
    cmd->add_option("--eb-starts", starts, "Empirical Bayes multi-start count")->check(CLI::PositiveNumber);
    cmd->add_option("--eb-lambda-bounds", lambda_bounds, "lambda search range LO HI")->expected(2);
    cmd->add_option("--eb-h-bounds", h_bounds, "bandwidth search range LO HI")->expected(2);
    cmd->add_option("--eb-sigma2-bounds", sigma2_bounds, "noise variance search range LO HI")->expected(2);
  }

  EBConfig config(std::uint64_t seed) const {
    EBConfig cfg;
    cfg.starts = starts;
    cfg.seed = seed;
    auto set = [](LogBounds& b, const std::vector<double>& v, const char* name) {
      if (v.empty()) return;
      if (!(v[0] > 0.0 && v[1] > v[0])) throw InvalidInput(std::string(name) + " bounds must satisfy 0 < LO < HI");
      b = {std::log(v[0]), std::log(v[1])};
    };
    set(cfg.log_lambda, lambda_bounds, "lambda");
    set(cfg.log_h, h_bounds, "h");
    set(cfg.log_sigma2, sigma2_bounds, "sigma2");
    cfg.validate();
    return cfg;
  }
};

PriorSpec parse_prior(const std::string& text) {
  const std::string prefix = "beta:";
  if (text.rfind(prefix, 0) != 0) throw InvalidInput("prior must look like beta:a,b, got '" + text + "'");
  const std::string rest = text.substr(prefix.size());
  const auto comma = rest.find(',');
  if (comma == std::string::npos) throw InvalidInput("prior must look like beta:a,b, got '" + text + "'");
  try {
    std::size_t ua = 0, ub = 0;
    const std::string as = rest.substr(0, comma), bs = rest.substr(comma + 1);
    const double a = std::stod(as, &ua), b = std::stod(bs, &ub);
    if (ua != as.size() || ub != bs.size()) throw std::invalid_argument("trailing characters");
    return PriorSpec(a, b);
  } catch (const InvalidInput&) {
    throw;
  } catch (const std::exception&) {
    throw InvalidInput("prior must look like beta:a,b, got '" + text + "'");
  }
}

/// UTC timestamp for the manifest: --timestamp uses the wall clock,
/// SOURCE_DATE_EPOCH pins it; otherwise none is recorded.
std::optional<std::string> manifest_time(bool wall_clock) {
  std::time_t when = 0;
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) {
    when = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
  } else if (wall_clock) {
    when = std::time(nullptr);
  } else {
    return std::nullopt;
  }
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&when));
  return std::string(buf);
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write '" + path.string() + "'");
  out << content;
  spdlog::info("wrote {}", path.string());
}

template <class Fn>
void write_stream(const fs::path& path, Fn&& fn) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write '" + path.string() + "'");
  fn(out);
  spdlog::info("wrote {}", path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InvalidInput("cannot create output directory '" + dir.string() + "': " + ec.message());
}

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("extrema_gp");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("EXTREMA_GP_LOG")) spdlog::set_level(spdlog::level::from_str(env));
}

// ---------------------------------------------------------------- fit

struct FitArgs {
  std::string input;
  std::string prior = "beta:1,1";
  std::size_t grid = kDefaultGridSize;
  double alpha_hpd = 0.05;
  double alpha_ci = 0.05;
  std::uint64_t seed = 0;
  std::optional<double> lambda, h, sigma2;
  bool rescale = false;
  bool allow_duplicates = false;
  bool emit_svg = false;
  bool timestamp = false;
  std::string out_dir = ".";
  EbFlags eb;
};

int cmd_fit(const FitArgs& a) {
  XYData xy = read_xy_csv(a.input);
  RunManifest manifest;
  manifest.command = "fit";
  manifest.input = a.input;
  if (a.rescale) {
    const auto [offset, scale] = rescale_unit(xy.x);
    manifest.rescaled = true;
    manifest.rescale_offset = offset;
    manifest.rescale_scale = scale;
    spdlog::info("rescaled x: offset {}, scale {}", offset, scale);
  } else {
    for (std::size_t i = 0; i < xy.x.size(); ++i) {
      if (!(xy.x[i] >= 0.0 && xy.x[i] <= 1.0)) {
        throw InvalidInput("row " + std::to_string(i + 1) + ": x = " + fmt_double(xy.x[i]) +
                           " outside [0, 1]; pass --rescale to map x onto [0, 1]");
      }
    }
  }
  Dataset data(std::move(xy.x), std::move(xy.y), a.allow_duplicates ? DuplicatePolicy::Allow : DuplicatePolicy::Reject);
  const PriorSpec prior = parse_prior(a.prior);

  Hyperparams hyper;
  const int fixed = static_cast<int>(a.lambda.has_value()) + a.h.has_value() + a.sigma2.has_value();
  if (fixed == 3) {
    hyper = {*a.lambda, *a.h, *a.sigma2};
    hyper.validate();
  } else if (fixed != 0) {
    throw InvalidInput("--lambda, --bandwidth and --sigma2 must be given together (or none, for empirical Bayes)");
  } else {
    const EBConfig cfg = a.eb.config(a.seed);
    const EBResult eb = select_hyperparams(data, cfg);
    hyper = eb.hyper;
    manifest.eb_starts = cfg.starts;
    spdlog::info("empirical Bayes: lambda {} h {} sigma2 {} (log marginal {})", hyper.lambda, hyper.h, hyper.sigma2,
                 eb.log_marginal);
  }
  manifest.hyper = hyper;
  manifest.prior = prior.to_string();
  manifest.grid_size = a.grid;
  manifest.alpha_hpd = a.alpha_hpd;
  manifest.alpha_ci = a.alpha_ci;
  manifest.seed = a.seed;
  manifest.created = manifest_time(a.timestamp);

  const GPModel model = fit(std::move(data), hyper);
  if (model.jitter() > 0.0) spdlog::warn("Gram factorization needed jitter {}", model.jitter());
  const PosteriorGrid grid = compute_posterior(model, prior, a.grid);
  SummaryOptions opt;
  opt.alpha_hpd = a.alpha_hpd;
  opt.alpha_ci = a.alpha_ci;
  const ExtremaReport report = summarize(model, grid, opt);

  const json mj = manifest.to_json();
  json ej = extrema_to_json(report, mj);
  if (manifest.rescaled) {
    auto back = [&](double t) { return manifest.rescale_offset + manifest.rescale_scale * t; };
    json orig = json::array();
    for (const auto& e : report.estimates) {
      orig.push_back({{"t_hat", back(e.t_hat)},
                      {"ci_lo", e.ci ? json(back(e.ci->lo)) : json(nullptr)},
                      {"ci_hi", e.ci ? json(back(e.ci->hi)) : json(nullptr)}});
    }
    ej["estimates_original_units"] = orig;
  }
  const fs::path dir(a.out_dir);
  ensure_dir(dir);
  write_stream(dir / "posterior.csv", [&](std::ostream& os) { write_posterior_csv(os, grid, mj); });
  write_file(dir / "extrema.json", ej.dump(2) + "\n");
  if (a.emit_svg) write_file(dir / "posterior.svg", posterior_svg(grid, report));

  std::cout << "m_hat " << report.m_hat << "\n";
  for (const auto& e : report.estimates) {
    std::cout << to_string(e.kind) << " t_hat " << fmt_double(e.t_hat);
    if (e.ci) std::cout << " ci [" << fmt_double(e.ci->lo) << ", " << fmt_double(e.ci->hi) << "]";
    if (e.boundary_flag) std::cout << " boundary";
    std::cout << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------- simulate

struct SimArgs {
  std::string preset = "table1";
  std::optional<std::size_t> n, replicates;
  std::optional<double> sigma, alpha_hpd, alpha_ci, mode_threshold;
  std::optional<std::string> prior;
  std::optional<std::size_t> grid;
  std::uint64_t seed = 1;
  std::size_t workers = default_workers();
  bool emit_data = false;
  bool timestamp = false;
  std::string out_dir = ".";
  EbFlags eb;
};

int cmd_simulate(const SimArgs& a) {
  SimConfig cfg = preset(a.preset);
  if (a.n) cfg.n = *a.n;
  if (a.replicates) cfg.replicates = *a.replicates;
  if (a.sigma) cfg.sigma = *a.sigma;
  if (a.alpha_hpd) cfg.alpha_hpd = *a.alpha_hpd;
  if (a.alpha_ci) cfg.alpha_ci = *a.alpha_ci;
  if (a.mode_threshold) cfg.mode_threshold = *a.mode_threshold;
  if (a.prior) cfg.prior = parse_prior(*a.prior);
  if (a.grid) cfg.grid_size = *a.grid;
  cfg.seed = a.seed;
  cfg.eb = a.eb.config(0);
  cfg.validate();

  RunManifest manifest;
  manifest.command = "simulate";
  manifest.input = "preset:" + a.preset;
  manifest.prior = cfg.prior.to_string();
  manifest.grid_size = cfg.grid_size;
  manifest.alpha_hpd = cfg.alpha_hpd;
  manifest.alpha_ci = cfg.alpha_ci;
  manifest.seed = cfg.seed;
  manifest.eb_starts = cfg.eb.starts;
  manifest.created = manifest_time(a.timestamp);
  const json mj = manifest.to_json();

  const fs::path dir(a.out_dir);
  ensure_dir(dir);
  if (a.emit_data) {
    ensure_dir(dir / "data");
    for (std::size_t i = 0; i < cfg.replicates; ++i) {
      char name[40];
      std::snprintf(name, sizeof name, "replicate_%04zu.csv", i);
      json dm = mj;
      dm["replicate"] = i;
      write_stream(dir / "data" / name, [&](std::ostream& os) { write_xy_csv(os, generate_dataset(cfg, i), dm); });
    }
  }
  spdlog::info("running {} replicates at n = {} on {} workers", cfg.replicates, cfg.n, a.workers);
  const SimulationReport rep = run_replications(cfg, a.workers);

  write_file(dir / "report.json", report_to_json(rep, mj).dump(2) + "\n");
  write_stream(dir / "table1.csv", [&](std::ostream& os) { write_table1_csv(os, rep, mj); });
  write_stream(dir / "table2.csv", [&](std::ostream& os) { write_table2_csv(os, rep, mj); });
  write_stream(dir / "table3.csv", [&](std::ostream& os) { write_table3_csv(os, rep, mj); });
  write_file(dir / "runtime.json", json({{"total_seconds", rep.runtime.total_seconds},
                                         {"mean_replicate_seconds", rep.runtime.mean_replicate_seconds},
                                         {"max_replicate_seconds", rep.runtime.max_replicate_seconds},
                                         {"workers", rep.runtime.workers}})
                                           .dump(2) +
                                       "\n");

  std::cout << "replicates " << rep.replicates << " failures " << rep.failures.size() << "\nm_hat";
  for (const auto& [m, c] : rep.m_hat_histogram) std::cout << " " << m << ":" << c;
  std::cout << "\nrmse_x100";
  for (const auto& v : rep.rmse_x100) std::cout << " " << (v ? fmt_double(*v) : "NA");
  std::cout << "\n";
  for (const auto& f : rep.failures) spdlog::warn("replicate {} failed: {}", f.index, f.reason);
  return 0;
}

// ---------------------------------------------------------------- validate

struct ValidateArgs {
  std::size_t n = 30;
  std::size_t datasets = 5;
  std::size_t points = 50;
  std::uint64_t seed = 1;
  double lambda = 1e-3;
  double h = 0.1;
  double sigma2 = 0.01;
  bool corrupt_kernel = false;
};

int cmd_validate(const ValidateArgs& a) {
  if (a.n > validation::kMaxValidationN) {
    throw InvalidInput("validate: n = " + std::to_string(a.n) + " exceeds " +
                       std::to_string(validation::kMaxValidationN) +
                       " (the naive oracle refactorizes an n x n matrix for every t)");
  }
  if (a.n < 2 || a.datasets < 1 || a.points < 2) throw InvalidInput("validate: need n >= 2, datasets >= 1, points >= 2");
  const Hyperparams hyper{a.lambda, a.h, a.sigma2};
  hyper.validate();
  const KernelSpec spec(a.h, KernelFamily::SquaredExponential,
                        a.corrupt_kernel ? KernelFault::FlipFirstDerivative : KernelFault::None);
  const CounterRng trng(a.seed, 0xfeed);

  double worst_spread = 0.0, worst_spread_t = 0.0, worst_fd = 0.0;
  std::size_t worst_set = 0;
  validation::FdCheck worst_check;
  for (std::size_t d = 0; d < a.datasets; ++d) {
    const Dataset data = validation::random_doppler_dataset(a.n, std::sqrt(a.sigma2), a.seed, d);
    std::vector<double> ts(a.points);
    for (std::size_t i = 0; i < a.points; ++i) ts[i] = 0.01 + 0.98 * trng.uniform(d * a.points + i);
    const auto sp = validation::prop1_spread(data, hyper, spec, ts);
    const auto checks = validation::fd_battery(fit(data, hyper, spec), ts, 2);
    const auto& w = validation::worst(checks);
    std::cout << "dataset " << d << ": log-likelihood spread " << sp.spread << ", worst finite-difference rel error "
              << w.rel_error << " (" << w.quantity << ")\n";
    if (sp.spread > worst_spread) {
      worst_spread = sp.spread;
      worst_spread_t = sp.worst_t;
      worst_set = d;
    }
    if (w.rel_error > worst_fd) {
      worst_fd = w.rel_error;
      worst_check = w;
    }
  }
  std::cout << "max log-likelihood spread " << worst_spread << " (tolerance " << validation::kProp1Tolerance << ")\n"
            << "max finite-difference rel error " << worst_fd << " (tolerance " << validation::kFdTolerance << ")\n";
  bool ok = true;
  if (!(worst_spread < validation::kProp1Tolerance)) {
    ok = false;
    std::cerr << "breach: closed-form vs naive spread " << worst_spread << " on dataset " << worst_set
              << ", worst t = " << worst_spread_t << "\n";
  }
  if (!(worst_fd < validation::kFdTolerance)) {
    ok = false;
    std::cerr << "breach: " << worst_check.quantity << " at t = " << worst_check.t << ": analytic "
              << worst_check.analytic << " vs finite difference " << worst_check.finite_difference << "\n";
  }
  return ok ? 0 : kExitValidation;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Local extrema inference with a derivative-constrained Gaussian process"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  FitArgs fa;
  auto* fit_cmd = app.add_subcommand("fit", "Posterior of extremum locations for an x,y CSV");
  fit_cmd->add_option("--input", fa.input, "CSV with header x,y")->required();
  fit_cmd->add_option("--prior", fa.prior, "Prior on t, beta:a,b");
  fit_cmd->add_option("--grid", fa.grid, "Posterior grid cells")->check(CLI::Range(101, 10000000));
  fit_cmd->add_option("--alpha-hpd", fa.alpha_hpd, "HPD region level alpha")->check(CLI::Range(0.0, 1.0));
  fit_cmd->add_option("--alpha-ci", fa.alpha_ci, "Confidence interval level alpha")->check(CLI::Range(0.0, 1.0));
  fit_cmd->add_option("--seed", fa.seed, "Seed for empirical Bayes start placement");
  fit_cmd->add_option("--lambda", fa.lambda, "Fixed regularization (skips empirical Bayes)");
  fit_cmd->add_option("--bandwidth", fa.h, "Fixed bandwidth h");
  fit_cmd->add_option("--sigma2", fa.sigma2, "Fixed noise variance");
  fit_cmd->add_flag("--rescale", fa.rescale, "Min-max scale x onto [0, 1]");
  fit_cmd->add_flag("--allow-duplicates", fa.allow_duplicates, "Accept repeated x values");
  fit_cmd->add_flag("--emit-svg", fa.emit_svg, "Also write posterior.svg");
  fit_cmd->add_flag("--timestamp", fa.timestamp, "Record the wall-clock time in the manifest");
  fit_cmd->add_option("--out-dir", fa.out_dir, "Output directory");
  fa.eb.add(fit_cmd);

  SimArgs sa;
  auto* sim_cmd = app.add_subcommand("simulate", "Seeded Doppler replications");
  sim_cmd->add_option("--preset", sa.preset, "table1, table3, supp-sigma02 or supp-alpha-sweep")
      ->check(CLI::IsMember(preset_names()));
  sim_cmd->add_option("--n", sa.n, "Sample size per replicate");
  sim_cmd->add_option("--sigma", sa.sigma, "Noise standard deviation");
  sim_cmd->add_option("--replicates", sa.replicates, "Number of replicates");
  sim_cmd->add_option("--seed", sa.seed, "Master seed");
  sim_cmd->add_option("--prior", sa.prior, "Prior on t, beta:a,b");
  sim_cmd->add_option("--grid", sa.grid, "Posterior grid cells")->check(CLI::Range(101, 10000000));
  sim_cmd->add_option("--alpha-hpd", sa.alpha_hpd, "HPD region level alpha")->check(CLI::Range(0.0, 1.0));
  sim_cmd->add_option("--alpha-ci", sa.alpha_ci, "Confidence interval level alpha")->check(CLI::Range(0.0, 1.0));
  sim_cmd->add_option("--mode-threshold", sa.mode_threshold, "Relative density threshold for mode counting");
  sim_cmd->add_option("--workers", sa.workers, "Parallel replicate workers")->check(CLI::PositiveNumber);
  sim_cmd->add_flag("--emit-data", sa.emit_data, "Write each replicate's data as x,y CSV");
  sim_cmd->add_flag("--timestamp", sa.timestamp, "Record the wall-clock time in the manifest");
  sim_cmd->add_option("--out-dir", sa.out_dir, "Output directory");
  sa.eb.add(sim_cmd);

  ValidateArgs va;
  auto* val_cmd = app.add_subcommand("validate", "Closed-form vs naive likelihood and finite-difference checks");
  val_cmd->add_option("--n", va.n, "Observations per dataset (at most 60)");
  val_cmd->add_option("--datasets", va.datasets, "Number of seeded datasets");
  val_cmd->add_option("--points", va.points, "t values per dataset");
  val_cmd->add_option("--seed", va.seed, "Seed");
  val_cmd->add_option("--lambda", va.lambda, "Regularization");
  val_cmd->add_option("--bandwidth", va.h, "Bandwidth h");
  val_cmd->add_option("--sigma2", va.sigma2, "Noise variance");
  val_cmd->add_flag("--corrupt-kernel", va.corrupt_kernel, "Flip the sign of K_10 (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (*fit_cmd) return cmd_fit(fa);
    if (*sim_cmd) return cmd_simulate(sa);
    if (*val_cmd) return cmd_validate(va);
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitInput;
}
