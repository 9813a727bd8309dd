// Batch front end: reads a JSON config, runs one command, prints one JSON
// record per line and caches records by config hash.
#include "sfl/sfl.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct ConfigError : sfl::Error {
  using sfl::Error::Error;
};

struct Flags {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool no_cache = false;
  std::size_t threads = 0;
  bool verbose = false;
  // command options
  std::string target = "psi";
  std::string variable = "p";
  std::size_t level = 1;
  bool check_fd = false;
  double step = 0.0;
  std::string frame = "complete";
  std::vector<double> grid;
  bool ground_state = false;
  bool oracle = false;
  std::size_t oracle_outer = 0;
};

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

const json& block(const json& cfg, const char* name) {
  if (!cfg.contains(name) || !cfg.at(name).is_object()) throw ConfigError(std::string("config needs a '") + name + "' block");
  return cfg.at(name);
}

sfl::Matrix matrix_from(const json& j, const fs::path& base, const char* inline_key, const char* file_key) {
  if (j.contains(inline_key)) return sfl::ConfigurationSets::from_rows(j.at(inline_key).get<std::vector<std::vector<double>>>(), inline_key);
  if (j.contains(file_key)) {
    fs::path p = j.at(file_key).get<std::string>();
    if (p.is_relative()) p = base / p;
    return sfl::load_matrix_text(p.string());
  }
  throw ConfigError(std::string("sets block needs '") + inline_key + "' or '" + file_key + "'");
}

sfl::ModelSpec model_from(const json& cfg, std::uint64_t seed) {
  const auto& m = block(cfg, "model");
  sfl::ModelSpec spec;
  spec.family = sfl::parse_family(m.at("family").get<std::string>());
  spec.n = m.at("n").get<std::size_t>();
  spec.m = m.at("m").get<std::size_t>();
  spec.sphere_samples = get_or<std::size_t>(m, "sphere_samples", spec.sphere_samples);
  spec.seed = get_or<std::uint64_t>(m, "seed", seed);
  spec.hypercube_cap = get_or<std::size_t>(m, "cap", spec.hypercube_cap);
  return spec;
}

sfl::ConfigurationSets sets_from(const json& cfg, const fs::path& base, std::uint64_t seed) {
  if (cfg.contains("sets")) {
    const auto& s = cfg.at("sets");
    return sfl::ConfigurationSets::build(matrix_from(s, base, "x", "x_file"), matrix_from(s, base, "y", "y_file"));
  }
  if (cfg.contains("model")) return sfl::generate_sets(model_from(cfg, seed));
  throw ConfigError("config needs a 'sets' or 'model' block");
}

sfl::LiftingSchedule schedule_from(const json& cfg) {
  const auto& s = block(cfg, "schedule");
  auto sch = sfl::LiftingSchedule::make(s.at("m").get<std::vector<double>>(), s.at("p").get<std::vector<double>>(),
                                        s.at("q").get<std::vector<double>>());
  if (s.contains("r") && s.at("r").get<std::size_t>() != sch.r)
    throw sfl::ScheduleError("schedule.r does not match the vector lengths (expected r + 2 entries)");
  return sch;
}

sfl::EvalSettings settings_from(const json& cfg, std::uint64_t seed, std::size_t threads) {
  const auto& s = block(cfg, "settings");
  sfl::EvalSettings st;
  st.t = get_or<double>(s, "t", st.t);
  st.beta = get_or<double>(s, "beta", st.beta);
  st.s = get_or<double>(s, "s", st.s);
  st.samples = s.at("samples").get<std::vector<std::size_t>>();
  st.mode = sfl::parse_mode(get_or<std::string>(s, "mode", "monte-carlo"));
  st.max_leaf_evaluations = get_or<double>(s, "max_leaf_evaluations", st.max_leaf_evaluations);
  st.seed = seed;
  st.threads = threads;
  return st;
}

sfl::SolverOptions solver_from(const json& cfg, bool verbose) {
  sfl::SolverOptions o;
  if (cfg.contains("solver")) {
    const auto& s = cfg.at("solver");
    o.tol = get_or<double>(s, "tol", o.tol);
    o.max_iter = get_or<std::size_t>(s, "max_iter", o.max_iter);
    o.damping = get_or<double>(s, "damping", o.damping);
    o.random_starts = get_or<std::size_t>(s, "starts", o.random_starts);
    o.m_lower = get_or<double>(s, "m_lower", o.m_lower);
  }
  if (verbose) o.trace = [](const std::string& line) { std::cerr << line << "\n"; };
  return o;
}

json estimate_json(const sfl::Estimate& e) {
  return {{"value", e.value}, {"std_error", e.std_error}, {"n_outer", e.n_outer}};
}

json schedule_json(const sfl::LiftingSchedule& s) { return {{"r", s.r}, {"m", s.m}, {"p", s.p}, {"q", s.q}}; }

json point_json(const sfl::StationaryPoint& pt) {
  json j = {{"t", pt.t},
            {"schedule", schedule_json(pt.schedule)},
            {"iterations", pt.iterations},
            {"converged", pt.converged},
            {"start", pt.start},
            {"max_residual", pt.max_residual()}};
  json res = json::object();
  for (std::size_t i = 0; i < pt.names.size(); ++i)
    res[pt.names[i]] = {{"value", pt.residuals[i]}, {"std_error", pt.residual_se[i]}};
  j["residuals"] = res;
  return j;
}

struct Outcome {
  json value = nullptr;
  json std_error = nullptr;
  json n_outer = nullptr;
  bool passed = true;
  json details = json::object();
};

void set_estimate(Outcome& o, const sfl::Estimate& e) {
  o.value = e.value;
  o.std_error = e.std_error;
  o.n_outer = e.n_outer;
}

std::string csv_number(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

Outcome run_command(const Flags& f, const json& cfg, const fs::path& base, std::uint64_t seed, const fs::path& out_dir,
                    const std::string& hash) {
  Outcome o;
  const std::string& c = f.command;
  if (c == "validate") {
    const auto rep = sfl::validate(schedule_from(cfg));
    o.passed = rep.ok();
    o.details["violations"] = rep.violations;
    return o;
  }
  if (c == "coeffs") {
    const auto sch = schedule_from(cfg);
    sfl::require_valid(sch);
    const auto d = sfl::derived_coefficients(sch);
    // level-indexed 1..r+1 on output
    o.details["a"] = std::vector<double>(d.a.begin() + 1, d.a.end());
    o.details["b"] = std::vector<double>(d.b.begin() + 1, d.b.end());
    o.details["c"] = std::vector<double>(d.c.begin() + 1, d.c.end());
    return o;
  }
  if (c == "model") {
    if (f.ground_state == f.oracle) throw ConfigError("model needs exactly one of --ground-state or --oracle");
    const auto spec = model_from(cfg, seed);
    o.details["family"] = sfl::to_string(spec.family);
    if (f.oracle) {
      std::size_t outer = f.oracle_outer;
      if (outer == 0) outer = settings_from(cfg, seed, f.threads).outer();
      set_estimate(o, sfl::brute_force_oracle(spec, outer, seed, f.threads));
      return o;
    }
    const auto st = settings_from(cfg, seed, f.threads);
    std::vector<double> betas;
    if (cfg.contains("ladder")) betas = cfg.at("ladder").get<std::vector<double>>();
    const auto pr = sfl::ground_state_proxy(spec, schedule_from(cfg), st, betas);
    set_estimate(o, pr.value);
    json lad = json::array();
    for (std::size_t i = 0; i < pr.betas.size(); ++i)
      lad.push_back({{"beta", pr.betas[i]}, {"value", pr.ladder[i].value}, {"std_error", pr.ladder[i].std_error}});
    o.details["ladder"] = lad;
    return o;
  }

  const auto sets = sets_from(cfg, base, seed);
  const auto sch = schedule_from(cfg);
  auto st = settings_from(cfg, seed, f.threads);

  if (c == "eval") {
    const auto target = sfl::parse_target(f.target);
    sfl::Estimate e;
    if (target == sfl::Target::Psi) e = sfl::eval_psi(sets, sch, st);
    else if (target == sfl::Target::Psi1) e = sfl::eval_psi1(sets, sch, st);
    else e = sfl::eval_psi_s(sets, sch, st);
    set_estimate(o, e);
    o.passed = std::isfinite(e.value);
    return o;
  }
  if (c == "grad") {
    sfl::DerivativeRequest rq;
    rq.target = sfl::parse_target(f.target);
    rq.variable = sfl::parse_variable(f.variable);
    rq.k1 = f.level;
    rq.step = f.step;
    if (!f.check_fd) {
      set_estimate(o, sfl::analytic_derivative(rq, sets, sch, st));
      return o;
    }
    const auto chk = sfl::check_derivative(rq, sets, sch, st);
    set_estimate(o, chk.analytic);
    o.passed = chk.passed;
    o.details["fd"] = estimate_json(chk.fd);
    o.details["fd"]["one_sided"] = chk.fd.one_sided;
    o.details["difference"] = estimate_json(chk.difference);
    return o;
  }
  if (c == "tderiv") {
    sfl::require_valid(sch);
    const auto tree = sfl::run_tree(sets, sch, st, sfl::basic_request(sets));
    const auto terms = sfl::dpsi_dt_terms(tree, sets, sch, st);
    set_estimate(o, sfl::jackknife_mean(terms.total));
    o.details["phi_sum"] = estimate_json(sfl::jackknife_mean(terms.phi_sum));
    o.details["phi01"] = estimate_json(sfl::jackknife_mean(terms.phi01));
    o.details["phi02"] = estimate_json(sfl::jackknife_mean(terms.phi02));
    return o;
  }
  const auto opt = solver_from(cfg, f.verbose);
  if (c == "stationarize") {
    sfl::StationaryPoint pt;
    if (f.frame == "complete") pt = sfl::solve_complete_frame(sets, st, st.t, sch, opt);
    else if (f.frame == "modulo-m") pt = sfl::solve_modulo_m(sets, st, st.t, sch, opt);
    else throw ConfigError("--frame must be complete or modulo-m");
    auto at = st;
    at.t = pt.t;
    set_estimate(o, sfl::eval_psi1(sets, pt.schedule, at));
    o.passed = pt.converged;
    o.details["point"] = point_json(pt);
    o.details["frame"] = f.frame;
    return o;
  }
  if (c == "path-scan") {
    std::vector<double> grid = f.grid;
    if (grid.empty() && cfg.contains("path")) grid = get_or<std::vector<double>>(cfg.at("path"), "grid", {});
    if (grid.empty()) grid = {0.0, 0.25, 0.5, 0.75, 1.0};
    const auto scan = sfl::path_scan(sets, st, grid, sch, opt);
    o.value = scan.max_deviation;
    o.std_error = scan.max_deviation_se;
    o.n_outer = st.outer();
    o.passed = scan.all_converged();
    json pts = json::array();
    for (std::size_t i = 0; i < scan.t.size(); ++i) {
      auto p = point_json(scan.points[i]);
      p["psi1"] = estimate_json(scan.psi1[i]);
      p["warm_start"] = scan.warm_start[i];
      p["concentration"] = scan.concentration[i];
      p["jump"] = scan.jump[i];
      p["jump_flag"] = static_cast<bool>(scan.jump_flag[i]);
      pts.push_back(p);
    }
    o.details["points"] = pts;
    fs::create_directories(out_dir);
    const fs::path csv = out_dir / ("path_scan_" + hash.substr(0, 16) + ".csv");
    std::ofstream os(csv);
    os << "t,psi1,psi1_se";
    for (const auto& n : scan.points.front().names) os << ",res_" << n;
    os << "\n";
    for (std::size_t i = 0; i < scan.t.size(); ++i) {
      os << csv_number(scan.t[i]) << "," << csv_number(scan.psi1[i].value) << "," << csv_number(scan.psi1[i].std_error);
      for (double r : scan.points[i].residuals) os << "," << csv_number(r);
      os << "\n";
    }
    o.details["csv"] = csv.string();
    return o;
  }
  if (c == "identity-check") {
    const auto rep = sfl::sfl_identity_check(sets, st, sch, opt);
    set_estimate(o, rep.difference);
    o.passed = rep.at_one.converged && rep.at_zero.converged &&
               std::abs(rep.difference.value) <= 3.0 * rep.difference.std_error;
    o.details["left"] = estimate_json(rep.left);
    o.details["right"] = estimate_json(rep.right);
    o.details["at_one"] = point_json(rep.at_one);
    o.details["at_zero"] = point_json(rep.at_zero);
    return o;
  }
  throw ConfigError("unknown command '" + c + "'");
}

json command_options(const Flags& f) {
  const auto& c = f.command;
  json j = json::object();
  if (c == "eval") j["target"] = f.target;
  if (c == "grad") j = {{"target", f.target}, {"var", f.variable}, {"level", f.level}, {"check_fd", f.check_fd}, {"step", f.step}};
  if (c == "stationarize") j["frame"] = f.frame;
  if (c == "path-scan") j["grid"] = f.grid;
  if (c == "model") j = {{"ground_state", f.ground_state}, {"oracle", f.oracle}, {"outer", f.oracle_outer}};
  return j;
}

std::string error_type(const std::exception& e) {
  if (dynamic_cast<const sfl::ScheduleError*>(&e)) return "schedule";
  if (dynamic_cast<const sfl::BudgetError*>(&e)) return "budget";
  if (dynamic_cast<const sfl::DimensionError*>(&e)) return "dimension";
  if (dynamic_cast<const sfl::InfeasiblePerturbation*>(&e)) return "infeasible-perturbation";
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const json::exception*>(&e)) return "config";
  if (dynamic_cast<const sfl::ArgumentError*>(&e)) return "argument";
  return "internal";
}

void emit(const std::string& line, const std::string& out) {
  std::cout << line << "\n";
  if (!out.empty()) {
    std::ofstream os(out, std::ios::app);
    os << line << "\n";
  }
}

int run(const Flags& f) {
  std::optional<std::uint64_t> seed = f.seed;
  try {
    std::ifstream in(f.config_path);
    if (!in) throw ConfigError("cannot open config '" + f.config_path + "'");
    json cfg;
    try {
      cfg = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!cfg.is_object()) throw ConfigError("config must be a JSON object");
    if (!cfg.contains("seed")) throw ConfigError("config must set 'seed'");
    if (!seed) seed = cfg.at("seed").get<std::uint64_t>();
    cfg["seed"] = *seed;

    const fs::path base = fs::absolute(f.config_path).parent_path();
    fs::path out_dir = base;
    if (cfg.contains("output")) {
      fs::path d = get_or<std::string>(cfg.at("output"), "dir", ".");
      out_dir = d.is_relative() ? base / d : d;
    }
    // Threads, output paths and verbosity do not change results, so they
    // stay out of the hash.
    json canon = {{"command", f.command}, {"options", command_options(f)}, {"config", cfg}};
    canon["config"].erase("output");
    const std::string hash = sha256_hex(canon.dump());
    const fs::path cache_file = out_dir / "cache" / (hash + ".json");

    if (!f.no_cache && fs::exists(cache_file)) {
      std::ifstream cin(cache_file);
      std::string line;
      std::getline(cin, line);
      try {
        const json rec = json::parse(line);
        if (rec.at("config_hash").get<std::string>() != hash) throw ConfigError("hash mismatch");
        if (f.verbose) std::cerr << "cache hit " << cache_file.string() << "\n";
        emit(line, f.out);
        return rec.at("passed").get<bool>() ? 0 : 1;
      } catch (const std::exception& e) {
        std::cerr << "warning: ignoring corrupt cache record " << cache_file.string() << " (" << e.what() << ")\n";
      }
    }

    const auto t0 = std::chrono::steady_clock::now();
    const Outcome o = run_command(f, cfg, base, *seed, out_dir, hash);
    const double runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    json rec = {{"command", f.command},
                {"config_hash", hash},
                {"seed", *seed},
                {"inputs", canon},
                {"value", o.value},
                {"std_error", o.std_error},
                {"n_outer", o.n_outer},
                {"runtime_s", runtime},
                {"passed", o.passed},
                {"details", o.details}};
    const std::string line = rec.dump();
    fs::create_directories(cache_file.parent_path());
    std::ofstream(cache_file) << line << "\n";
    emit(line, f.out);
    return o.passed ? 0 : 1;
  } catch (const std::exception& e) {
    json rec = {{"command", f.command},
                {"seed", seed ? json(*seed) : json(nullptr)},
                {"passed", false},
                {"error", {{"type", error_type(e)}, {"message", e.what()}}}};
    emit(rec.dump(), f.out);
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sfl: lifted free-energy estimators and stationarity solver"};
  app.require_subcommand(1);
  Flags f;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config_path, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", f.out, "append the result record to this file");
    sub->add_flag("--no-cache", f.no_cache, "recompute and overwrite the cached record");
    sub->add_option("--threads", f.threads, "worker threads (0 = all cores)");
    sub->add_flag("--verbose", f.verbose, "progress on stderr");
  };
  auto* validate = app.add_subcommand("validate", "check a lifting schedule");
  auto* coeffs = app.add_subcommand("coeffs", "derived coefficients a, b, c");
  auto* eval = app.add_subcommand("eval", "psi, psi1 or psiS at the configured t");
  eval->add_option("--target", f.target, "psi | psi1 | psiS");
  auto* grad = app.add_subcommand("grad", "analytic derivative in p or q");
  grad->add_option("--target", f.target, "psi | psi1");
  grad->add_option("--var", f.variable, "p | q");
  grad->add_option("--level", f.level, "level k1 in 1..r");
  grad->add_option("--step", f.step, "finite-difference step (0 = default)");
  grad->add_flag("--check-fd", f.check_fd, "compare with a common-random-number finite difference");
  auto* tderiv = app.add_subcommand("tderiv", "d psi / d t with its phi terms");
  auto* stat = app.add_subcommand("stationarize", "solve the stationarity equations at the configured t");
  stat->add_option("--frame", f.frame, "complete | modulo-m");
  auto* scan = app.add_subcommand("path-scan", "stationary points over a t grid");
  scan->add_option("--grid", f.grid, "t values")->delimiter(',');
  auto* ident = app.add_subcommand("identity-check", "t = 1 against t = 0 with the level-sum correction");
  auto* model = app.add_subcommand("model", "ground-state proxy or brute-force oracle");
  model->add_flag("--ground-state", f.ground_state, "extrapolated proxy");
  model->add_flag("--oracle", f.oracle, "Monte Carlo over G of the exact optimization");
  model->add_option("--outer", f.oracle_outer, "oracle outer draws (default: settings.samples outer count)");
  for (auto* s : {validate, coeffs, eval, grad, tderiv, stat, scan, ident, model}) add_common(s);

  CLI11_PARSE(app, argc, argv);
  f.command = app.get_subcommands().front()->get_name();
  if (app.get_subcommands().front()->count("--seed") > 0) f.seed = seed;
  return run(f);
}
