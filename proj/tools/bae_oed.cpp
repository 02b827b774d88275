// bae_oed: command-line driver for ensemble generation, error statistics,
// sensor placement, baselines, posteriors and MCMC validation.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "baeoed/baeoed.hpp"

#ifndef BAEOED_VERSION
#define BAEOED_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace baeoed;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitFormat = 3;
constexpr int kExitNumerical = 4;
constexpr int kExitSubprocess = 5;

std::string sha256_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot hash " + p.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

std::string num(double v) { return detail::format_double(v); }

/// One subcommand: options land in a string map keyed by config key, so
/// explicitly given flags can be layered over the config file.
class Command {
 public:
  Command(CLI::App& parent, const std::string& name, const std::string& help)
      : app_(parent.add_subcommand(name, help)) {}

  CLI::Option* option(const std::string& flag, const std::string& key, const std::string& help) {
    static const std::set<std::string> numeric = {
        "q",     "seed",   "timeout",  "max_parallel", "rows_per_call", "sensors", "time_steps",
        "noise_fraction", "noise_sigma", "marginal", "k", "n_random", "data_seeds", "n_steps",
        "n_burn", "beta",  "thin"};
    auto* opt = app_->add_option(flag, values_[key], help);
    if (numeric.count(key) != 0) opt->check(CLI::Number);
    options_.emplace_back(key, opt);
    return opt;
  }

  void flag(const std::string& flag, const std::string& key, const std::string& help) {
    flags_.emplace_back(key, app_->add_flag(flag, help));
  }

  void settings() {
    app_->add_option("--set", sets_, "Problem or prior setting key=value (repeatable)");
  }

  Config given() const {
    Config c;
    for (const auto& [key, opt] : options_)
      if (opt->count() > 0) c.set(key, values_.at(key));
    for (const auto& [key, opt] : flags_)
      if (opt->count() > 0) c.set(key, "true");
    for (const auto& kv : sets_) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw InvalidArgument("--set expects key=value, got " + kv);
      c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return c;
  }

  CLI::App* app() const { return app_; }

 private:
  CLI::App* app_;
  std::map<std::string, std::string> values_;
  std::vector<std::pair<std::string, CLI::Option*>> options_;
  std::vector<std::pair<std::string, CLI::Option*>> flags_;
  std::vector<std::string> sets_;
};

struct Run {
  std::string name;
  Config cfg;
  std::vector<std::string> argv;
  bool dry_run = false;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  json seeds = json::object();
  json notes = json::object();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  std::string require(const std::string& key) const {
    const auto v = cfg.get(key, "");
    if (v.empty()) throw InvalidArgument("missing required option --" + dashed(key));
    return v;
  }
  bool enabled(const std::string& key) const {
    const auto v = cfg.get(key, "false");
    return v == "true" || v == "1" || v == "yes";
  }
  static std::string dashed(std::string key) {
    for (auto& ch : key)
      if (ch == '_') ch = '-';
    return key;
  }

  void write_manifest(const fs::path& path) const {
    json m;
    std::string line;
    for (const auto& a : argv) line += (line.empty() ? "" : " ") + a;
    m["command_line"] = line;
    m["subcommand"] = name;
    m["config"] = json::object();
    for (const auto& [k, v] : cfg.entries()) m["config"][k] = v;
    m["seeds"] = seeds;
    m["library_version"] = BAEOED_VERSION;
    m["inputs"] = json::array();
    for (const auto& p : inputs) m["inputs"].push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    m["outputs"] = json::array();
    for (const auto& p : outputs) m["outputs"].push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    m["notes"] = notes;
    m["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ofstream os(path);
    if (!os) throw IoError("cannot write manifest " + path.string());
    os << m.dump(2) << '\n';
  }
};

void print_plan(const Run& run, const json& plan) {
  json out = plan;
  out["subcommand"] = run.name;
  out["config"] = json::object();
  for (const auto& [k, v] : run.cfg.entries()) out["config"][k] = v;
  std::cout << out.dump(2) << '\n';
}

fs::path output_dir(const Run& run) {
  const fs::path dir = run.require("out");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  return dir;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os || !(os << text) || !os.flush()) throw IoError("cannot write " + p.string());
}

Matrix load_matrix_file(const fs::path& p) {
  std::ifstream probe(p, std::ios::binary);
  if (!probe) throw IoError("cannot open " + p.string());
  std::array<char, 4> magic{};
  probe.read(magic.data(), 4);
  if (probe.gcount() == 4 && magic == kBaemMagic) return load_baem_matrix(p).values;
  return detail::read_csv(p);
}

// ---------------------------------------------------------------------------
// Shared pieces: problems, noise, surrogates, error models, kernels.

/// The files behind an ensemble argument: one BAEM file or a CSV pair.
std::vector<fs::path> ensemble_files(const fs::path& p) {
  if (fs::is_regular_file(p) && p.extension() != ".csv") return {p};
  const auto stem = detail::csv_stem(p).string();
  return {stem + ".params.csv", stem + ".data.csv"};
}

/// CSV ensembles carry no layout; --time-steps reshapes them.
Ensemble load_ensemble_for(Run& run, const fs::path& p) {
  Ensemble e = load_ensemble(p);
  for (const auto& f : ensemble_files(p)) run.inputs.push_back(f);
  if (run.cfg.has("time_steps") && e.meta.provenance.rfind("csv:", 0) == 0) {
    const auto n_t = run.cfg.get_int("time_steps", 1);
    if (n_t < 1 || e.data_dim() % n_t != 0) throw DimensionMismatch("--time-steps does not divide n_d");
    e.meta.time_steps = static_cast<std::uint32_t>(n_t);
    e.meta.sensors = static_cast<std::uint32_t>(e.data_dim() / n_t);
  }
  return e;
}

TestProblem problem_from(const Run& run) { return make_problem(run.require("problem"), run.cfg); }

GaussianDensity noise_for(const Run& run, const Ensemble& e) {
  if (run.cfg.has("noise_sigma")) {
    const double sigma = run.cfg.get_double("noise_sigma", 0.0);
    if (!(sigma > 0.0)) throw InvalidArgument("--noise-sigma must be positive");
    return GaussianDensity(Vector::Zero(e.data_dim()), Matrix::Identity(e.data_dim(), e.data_dim()) * sigma * sigma);
  }
  return relative_noise(e, run.cfg.get_double("noise_fraction", 0.01));
}

LinearSurrogate surrogate_for(Run& run, const Ensemble& e) {
  const std::string spec = run.cfg.get("surrogate", "zero");
  if (spec == "zero") return LinearSurrogate::zero(e.data_dim(), e.param_dim());
  if (spec == "fd") {
    const auto problem = problem_from(run);
    require_dims(problem.n_v == e.param_dim() && problem.data_dim() == e.data_dim(),
                 "--problem does not match the ensemble dimensions");
    const auto prior = build_priors(problem, prior_hyper_from(run.cfg));
    return finite_difference_surrogate(problem, prior.mean());
  }
  if (spec.rfind("matrix:", 0) == 0) {
    const fs::path file = spec.substr(7);
    run.inputs.push_back(file);
    return LinearSurrogate::explicit_matrix(load_matrix_file(file), "matrix:" + file.filename().string());
  }
  throw InvalidArgument("--surrogate must be zero, fd or matrix:<file>, got " + spec);
}

TotalErrorModel model_from_ensemble(Run& run, const Ensemble& e) {
  StatsOptions opts;
  opts.enhanced = run.enabled("enhanced");
  const std::string source = run.cfg.get("stats_source", "auto");
  std::optional<GaussianDensity> prior;
  if (source == "sample") {
    opts.source = StatsSource::sample;
  } else if (source == "prior") {
    opts.source = StatsSource::analytic_prior;
  } else if (source != "auto") {
    throw InvalidArgument("--stats-source must be auto, sample or prior");
  }
  if (resolve_source(opts, e) == StatsSource::analytic_prior) {
    const auto problem = problem_from(run);
    prior = build_priors(problem, prior_hyper_from(run.cfg));
  }
  auto t = estimate_stats(e, surrogate_for(run, e), noise_for(run, e), opts, prior ? &*prior : nullptr);
  run.notes["stats_source"] = to_string(t.stats_source);
  run.notes["enhanced"] = t.enhanced;
  run.notes["surrogate"] = t.surrogate.provenance;
  std::cerr << "statistics: " << to_string(t.stats_source) << (t.enhanced ? " (enhanced)" : "") << ", surrogate "
            << t.surrogate.provenance << '\n';
  return t;
}

struct KernelInputs {
  TotalErrorModel model;
  Eigen::Index sensors = 0;
  Eigen::Index time_steps = 1;
};

KernelInputs kernel_inputs(Run& run) {
  KernelInputs k;
  if (run.cfg.has("stats")) {
    const fs::path p = run.cfg.get("stats", "");
    run.inputs.push_back(p);
    k.model = load_stats(p);
    k.time_steps = run.cfg.get_int("time_steps", 1);
    if (k.time_steps < 1 || k.model.data_dim() % k.time_steps != 0)
      throw DimensionMismatch("--time-steps does not divide n_d of the statistics file");
    k.sensors = k.model.data_dim() / k.time_steps;
    run.notes["stats_source"] = to_string(k.model.stats_source);
    return k;
  }
  const Ensemble e = load_ensemble_for(run, run.require("ensemble"));
  k.model = model_from_ensemble(run, e);
  k.sensors = e.meta.sensors;
  k.time_steps = e.meta.time_steps;
  return k;
}

ObjectiveKernel kernel_for(const Run& run, const KernelInputs& in) {
  const auto n_primary = run.cfg.get_int("marginal", 0);
  if (n_primary <= 0) return build_kernel(in.model, in.sensors, in.time_steps);
  if (n_primary > in.model.param_dim()) throw InvalidArgument("--marginal exceeds the parameter dimension");
  return build_kernel(in.model, in.sensors, in.time_steps, KernelMode::marginal,
                      BlockSplit{n_primary, in.model.param_dim() - n_primary});
}

std::pair<Eigen::Index, Eigen::Index> parse_k_range(const std::string& text) {
  const auto dots = text.find("..");
  try {
    if (dots == std::string::npos) {
      const auto k = std::stoll(text);
      return {k, k};
    }
    return {std::stoll(text.substr(0, dots)), std::stoll(text.substr(dots + 2))};
  } catch (const std::exception&) {
    throw InvalidArgument("--k-range must look like 1..20, got " + text);
  }
}

/// Designs file: either a design.csv written by `design` (one design), or
/// one design per line given as whitespace- or comma-separated sensor indices.
std::vector<std::vector<Eigen::Index>> read_designs(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open designs file " + p.string());
  std::vector<std::vector<Eigen::Index>> out;
  std::string line;
  bool design_csv = false;
  std::vector<Eigen::Index> from_csv;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("step,sensor", 0) == 0) {
      design_csv = true;
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<Eigen::Index> cells;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    while (fields >> cell) {
      try {
        std::size_t pos = 0;
        const auto v = std::stoll(cell, &pos);
        if (pos != cell.size()) throw std::invalid_argument(cell);
        cells.push_back(v);
      } catch (const std::exception&) {
        if (design_csv) break;  // trailing float columns
        throw FormatError("bad sensor index '" + cell + "' in " + p.string());
      }
      if (design_csv && cells.size() == 2) break;
    }
    if (design_csv) {
      if (cells.size() < 2) throw FormatError("malformed design.csv row in " + p.string());
      from_csv.push_back(cells[1]);
    } else {
      out.push_back(cells);
    }
  }
  if (design_csv) out.push_back(from_csv);
  if (out.empty()) throw FormatError(p.string() + " lists no designs");
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_sample(Run& run) {
  const fs::path out = run.require("out");
  const auto q = run.cfg.get_int("q", kDefaultEnsembleSize);
  const auto seed = static_cast<std::uint64_t>(run.cfg.get_int("seed", 0));
  if (q < 2) throw InvalidArgument("--q must be at least 2");
  run.seeds["seed"] = seed;
  Ensemble e;
  if (run.cfg.has("black_box")) {
    BlackBoxSpec spec;
    spec.executable = run.cfg.get("black_box", "");
    spec.working_directory = run.cfg.get("working_dir", ".");
    spec.timeout_seconds = run.cfg.get_double("timeout", 3600.0);
    spec.max_parallel = static_cast<int>(run.cfg.get_int("max_parallel", 1));
    spec.rows_per_call = run.cfg.get_int("rows_per_call", 1);
    spec.sensors = static_cast<std::uint32_t>(run.cfg.get_int("sensors", 0));
    spec.time_steps = static_cast<std::uint32_t>(run.cfg.get_int("time_steps", 0));
    check_black_box(spec);
    const fs::path params = run.require("params");
    if (run.dry_run) {
      print_plan(run, {{"forward_solves", "rows of " + params.string()}});
      return 0;
    }
    run.inputs.push_back(params);
    e = run_black_box(spec, load_matrix_file(params), seed);
  } else {
    const auto problem = problem_from(run);
    if (run.dry_run) {
      print_plan(run, {{"forward_solves", q}, {"n_v", problem.n_v}, {"n_d", problem.data_dim()}});
      return 0;
    }
    const auto prior = build_priors(problem, prior_hyper_from(run.cfg));
    e = synthesize_ensemble(problem, prior, q, seed);
  }
  const std::string format = run.cfg.get("format", "baem");
  if (format == "csv") {
    save_ensemble(e, out, EnsembleFormat::csv);
    const auto stem = detail::csv_stem(out).string();
    run.outputs = {stem + ".params.csv", stem + ".data.csv"};
  } else if (format == "baem") {
    save_ensemble(e, out, EnsembleFormat::baem);
    run.outputs = {out};
  } else {
    throw InvalidArgument("--format must be baem or csv");
  }
  run.write_manifest(out.string() + ".manifest.json");
  std::cout << "wrote " << e.samples() << " samples (n_v=" << e.param_dim() << ", n_d=" << e.data_dim() << ") to "
            << out.string() << '\n';
  return 0;
}

int cmd_stats(Run& run) {
  const fs::path out = run.require("out");
  const fs::path in = run.require("ensemble");
  if (run.dry_run) {
    print_plan(run, {{"forward_solves", run.cfg.get("surrogate", "zero") == "fd" ? "2 * n_v" : "0"}});
    return 0;
  }
  const auto t = model_from_ensemble(run, load_ensemble_for(run, in));
  save_stats(t, out);
  run.outputs = {out};
  run.write_manifest(out.string() + ".manifest.json");
  return 0;
}

int cmd_design(Run& run) {
  const auto k = run.cfg.get_int("k", 20);
  if (run.dry_run) {
    print_plan(run, {{"forward_solves", 0}, {"k", k}});
    return 0;
  }
  const fs::path dir = output_dir(run);
  const auto inputs = kernel_inputs(run);
  const auto kernel = kernel_for(run, inputs);
  const auto trace = greedy_design(kernel, k);
  std::string csv = "step,sensor,criterion,posterior_trace\r\n";
  for (std::size_t i = 0; i < trace.chosen.size(); ++i)
    csv += std::to_string(i + 1) + "," + std::to_string(trace.chosen[i]) + "," + num(trace.criterion_path[i]) + "," +
           num(trace.posterior_trace_path[i]) + "\r\n";
  write_text(dir / "design.csv", csv);
  run.outputs = {dir / "design.csv"};
  run.notes["prior_trace"] = kernel.prior_trace;
  run.write_manifest(dir / "manifest.json");
  std::cout << "chose " << trace.chosen.size() << " sensors; posterior trace " << trace.posterior_trace_path.back()
            << " (prior " << kernel.prior_trace << ")\n";
  return 0;
}

int cmd_baseline(Run& run) {
  const auto [k_lo, k_hi] = parse_k_range(run.cfg.get("k_range", "1..20"));
  const auto n_random = run.cfg.get_int("n_random", static_cast<long long>(kDefaultRandomDesigns));
  const auto seed = static_cast<std::uint64_t>(run.cfg.get_int("seed", 0));
  if (k_lo < 1 || k_hi < k_lo) throw InvalidArgument("--k-range must satisfy 1 <= lo <= hi");
  if (n_random < 1) throw InvalidArgument("--n-random must be positive");
  if (run.dry_run) {
    print_plan(run, {{"forward_solves", 0}, {"k_range", {k_lo, k_hi}}, {"n_random", n_random}});
    return 0;
  }
  run.seeds["seed"] = seed;
  const fs::path dir = output_dir(run);
  const auto inputs = kernel_inputs(run);
  const auto kernel = kernel_for(run, inputs);
  const auto greedy = greedy_design(kernel, k_hi);
  std::string csv = "k,greedy,min,q25,median,q75,max\r\n";
  for (Eigen::Index k = k_lo; k <= k_hi; ++k) {
    const auto designs = random_designs(kernel.sensors, k, static_cast<std::size_t>(n_random),
                                        derive_seed(seed, static_cast<std::uint64_t>(k)), kernel.time_steps);
    const auto q = evaluate_designs(kernel, designs).criterion_summary;
    csv += std::to_string(k) + "," + num(greedy.criterion_path[static_cast<std::size_t>(k - 1)]) + "," + num(q.min) +
           "," + num(q.q25) + "," + num(q.median) + "," + num(q.q75) + "," + num(q.max) + "\r\n";
  }
  write_text(dir / "baseline.csv", csv);
  run.outputs = {dir / "baseline.csv"};
  run.write_manifest(dir / "manifest.json");
  return 0;
}

int cmd_posterior(Run& run) {
  if (run.dry_run) {
    print_plan(run, {{"forward_solves", 0}});
    return 0;
  }
  const fs::path dir = output_dir(run);
  const auto inputs = kernel_inputs(run);
  const fs::path design_file = run.require("design");
  const fs::path data_file = run.require("data");
  run.inputs.push_back(design_file);
  run.inputs.push_back(data_file);
  const auto designs = read_designs(design_file);
  const DesignVector d = DesignVector::from_indices(inputs.sensors, inputs.time_steps, designs.front());
  const Matrix data = load_matrix_file(data_file);
  if (data.rows() != 1 || data.cols() != d.data_dim())
    throw DimensionMismatch("--data must hold one row of s * n_t = " + std::to_string(d.data_dim()) + " values");
  const auto post = bae_posterior(inputs.model, d, apply_design(d, Vector(data.row(0).transpose())));
  std::string csv = "index,mean,variance\r\n";
  for (Eigen::Index i = 0; i < post.dim(); ++i)
    csv += std::to_string(i) + "," + num(post.mean()[i]) + "," + num(post.cov()(i, i)) + "\r\n";
  write_text(dir / "posterior.csv", csv);
  run.outputs = {dir / "posterior.csv"};
  run.notes["posterior_trace"] = post.cov().trace();
  run.write_manifest(dir / "manifest.json");
  std::cout << "posterior trace " << post.cov().trace() << '\n';
  return 0;
}

int cmd_validate(Run& run) {
  PcnConfig cfg;
  cfg.beta = run.cfg.get_double("beta", cfg.beta);
  cfg.n_steps = run.cfg.get_int("n_steps", cfg.n_steps);
  cfg.n_burn = run.cfg.get_int("n_burn", cfg.n_burn);
  cfg.thin = run.cfg.get_int("thin", cfg.thin);
  cfg.seed = static_cast<std::uint64_t>(run.cfg.get_int("seed", 0));
  cfg.check();
  const auto n_seeds = run.cfg.get_int("data_seeds", 10);
  if (n_seeds < 1) throw InvalidArgument("--data-seeds must be positive");
  const fs::path designs_file = run.require("designs");
  const auto problem = problem_from(run);
  const auto chosen = read_designs(designs_file);
  if (run.dry_run) {
    print_plan(run, {{"forward_solves", static_cast<long long>(estimate_forward_solves(cfg, chosen.size(), static_cast<std::size_t>(n_seeds)))},
                     {"designs", chosen.size()},
                     {"data_seeds", n_seeds}});
    return 0;
  }
  const fs::path dir = output_dir(run);
  run.inputs.push_back(designs_file);
  const auto prior = build_priors(problem, prior_hyper_from(run.cfg));
  std::vector<DesignVector> designs;
  for (const auto& idx : chosen) designs.push_back(DesignVector::from_indices(problem.sensors, problem.time_steps, idx));
  std::vector<std::uint64_t> seeds;
  for (long long i = 0; i < n_seeds; ++i) seeds.push_back(derive_seed(cfg.seed ^ 0xda7aULL, static_cast<std::uint64_t>(i)));
  // Noise: absolute sigma, or relative to a pilot prior-predictive ensemble.
  GaussianDensity noise;
  if (run.cfg.has("noise_sigma")) {
    const double sigma = run.cfg.get_double("noise_sigma", 0.0);
    if (!(sigma > 0.0)) throw InvalidArgument("--noise-sigma must be positive");
    const auto n = problem.data_dim();
    noise = GaussianDensity(Vector::Zero(n), Matrix::Identity(n, n) * sigma * sigma);
  } else {
    const auto pilot = synthesize_ensemble(problem, prior, run.cfg.get_int("noise_pilot", 200), derive_seed(cfg.seed, 7));
    noise = relative_noise(pilot, run.cfg.get_double("noise_fraction", 0.01));
  }
  const bool dump = run.cfg.has("dump_chains");
  cfg.keep_samples = dump;
  run.seeds["seed"] = cfg.seed;
  run.seeds["data_seeds"] = seeds;
  const auto result = compare_designs_mcmc(problem, prior, noise, designs, seeds, cfg);
  std::string csv = "design,data_seed,posterior_trace,acceptance_rate\r\n";
  for (const auto& c : result.cells)
    csv += std::to_string(c.design_index) + "," + std::to_string(c.data_seed) + "," + num(c.trace) + "," +
           num(c.acceptance_rate) + "\r\n";
  std::string summary = "design,k,mean_posterior_trace\r\n";
  for (std::size_t i = 0; i < designs.size(); ++i)
    summary += std::to_string(i) + "," + std::to_string(designs[i].count()) + "," + num(result.mean_trace[i]) + "\r\n";
  write_text(dir / "validate.csv", csv);
  write_text(dir / "validate_summary.csv", summary);
  run.outputs = {dir / "validate.csv", dir / "validate_summary.csv"};
  if (dump) {
    const fs::path chains = run.cfg.get("dump_chains", "");
    fs::create_directories(chains);
    for (const auto& c : result.cells) {
      const auto p = chains / ("chain_" + std::to_string(c.design_index) + "_" + std::to_string(c.data_seed) + ".baem");
      save_baem_matrix({c.samples, false, 0, 0}, p);
      run.outputs.push_back(p);
    }
  }
  run.write_manifest(dir / "manifest.json");
  return 0;
}

void add_model_options(Command& c) {
  c.option("--ensemble", "ensemble", "Ensemble file (BAEM, or CSV pair)");
  c.option("--surrogate", "surrogate", "zero | fd | matrix:<file> (default zero)");
  c.flag("--enhanced", "enhanced", "Use the enhanced error model (drops the cross-covariance)");
  c.option("--stats-source", "stats_source", "auto | sample | prior (default auto)");
  c.option("--problem", "problem", "Built-in problem (needed for fd surrogates and prior statistics)");
  c.option("--noise-fraction", "noise_fraction", "Noise std as a fraction of the data spread (default 0.01)");
  c.option("--noise-sigma", "noise_sigma", "Absolute noise standard deviation");
  c.settings();
}

void add_kernel_options(Command& c) {
  add_model_options(c);
  c.option("--stats", "stats", "Precomputed statistics file (BAES)");
  c.option("--time-steps", "time_steps", "Time steps when reading --stats or a CSV ensemble (default 1)");
  c.option("--marginal", "marginal", "Primary block size; switches to the marginal criterion");
}

int exit_code_for(const Error& e) {
  switch (e.error_class()) {
    case ErrorClass::usage: return kExitUsage;
    case ErrorClass::input_format: return kExitFormat;
    case ErrorClass::numerical: return kExitNumerical;
    case ErrorClass::subprocess: return kExitSubprocess;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sensor placement under approximation error"};
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 0;
  std::string config_file;
  bool dry_run = false;
  app.add_option("--threads", threads, "Worker cap (overrides BAE_OED_THREADS)");
  app.add_option("--config", config_file, "key=value settings file; flags win over it");
  app.add_flag("--dry-run", dry_run, "Print the plan without executing");

  std::map<std::string, std::unique_ptr<Command>> cmds;
  auto make = [&](const std::string& name, const std::string& help) -> Command& {
    cmds[name] = std::make_unique<Command>(app, name, help);
    return *cmds[name];
  };

  auto& sample = make("sample", "Generate a paired ensemble from a built-in problem or an external model");
  sample.option("--problem", "problem", "Built-in problem: linear | exp | darcy");
  sample.option("--q", "q", "Number of samples (default 10000)");
  sample.option("--seed", "seed", "Sampling seed (default 0)");
  sample.option("--out", "out", "Output ensemble path");
  sample.option("--format", "format", "baem | csv (default baem)");
  sample.option("--black-box", "black_box", "External model executable");
  sample.option("--params", "params", "Parameter matrix for --black-box (BAEM or CSV)");
  sample.option("--working-dir", "working_dir", "Working directory for the external model");
  sample.option("--timeout", "timeout", "Per-invocation timeout in seconds");
  sample.option("--max-parallel", "max_parallel", "Concurrent model invocations");
  sample.option("--rows-per-call", "rows_per_call", "Parameter rows per invocation");
  sample.option("--sensors", "sensors", "Sensor count of the external model output");
  sample.option("--time-steps", "time_steps", "Time steps of the external model output");
  sample.settings();

  auto& stats = make("stats", "Estimate approximation-error statistics");
  add_model_options(stats);
  stats.option("--out", "out", "Output statistics file (BAES)");

  auto& design = make("design", "Greedy sensor placement");
  add_kernel_options(design);
  design.option("--k", "k", "Number of sensors (default 20)");
  design.option("--out", "out", "Output directory");

  auto& baseline = make("baseline", "Compare greedy designs with random designs");
  add_kernel_options(baseline);
  baseline.option("--k-range", "k_range", "Range lo..hi (default 1..20)");
  baseline.option("--n-random", "n_random", "Random designs per k (default 100)");
  baseline.option("--seed", "seed", "Seed for random designs (default 0)");
  baseline.option("--out", "out", "Output directory");

  auto& posterior = make("posterior", "Posterior for one design and data vector");
  add_kernel_options(posterior);
  posterior.option("--design", "design", "design.csv or a designs file (first design used)");
  posterior.option("--data", "data", "One row of s * n_t data values (CSV or BAEM)");
  posterior.option("--out", "out", "Output directory");

  auto& validate = make("validate", "Validate designs with pCN MCMC on the accurate model");
  validate.option("--problem", "problem", "Built-in problem");
  validate.option("--designs", "designs", "Designs file: one design per line, or a design.csv");
  validate.option("--data-seeds", "data_seeds", "Number of synthetic data sets (default 10)");
  validate.option("--n-steps", "n_steps", "Chain length (default 100000)");
  validate.option("--n-burn", "n_burn", "Burn-in (default 10000)");
  validate.option("--beta", "beta", "pCN step size (default 0.2)");
  validate.option("--thin", "thin", "Thinning (default 10)");
  validate.option("--seed", "seed", "Master seed (default 0)");
  validate.option("--noise-sigma", "noise_sigma", "Absolute noise standard deviation");
  validate.option("--noise-fraction", "noise_fraction", "Noise relative to a pilot ensemble (default 0.01)");
  validate.option("--dump-chains", "dump_chains", "Directory for raw chains (BAEM)");
  validate.option("--out", "out", "Output directory");
  validate.settings();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (threads > 0) set_thread_limit(threads);
    Run run;
    run.argv.assign(argv, argv + argc);
    run.dry_run = dry_run;
    for (const auto& [name, cmd] : cmds) {
      if (!cmd->app()->parsed()) continue;
      run.name = name;
      const Config file = config_file.empty() ? Config{} : Config::load(config_file);
      if (!config_file.empty()) run.inputs.push_back(config_file);
      run.cfg = file.merged(cmd->given());
    }
    if (run.name == "sample") return cmd_sample(run);
    if (run.name == "stats") return cmd_stats(run);
    if (run.name == "design") return cmd_design(run);
    if (run.name == "baseline") return cmd_baseline(run);
    if (run.name == "posterior") return cmd_posterior(run);
    if (run.name == "validate") return cmd_validate(run);
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (const auto* sub = dynamic_cast<const SubprocessFailure*>(&e); sub && !sub->captured_stderr().empty())
      std::cerr << "model stderr:\n" << sub->captured_stderr();
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
