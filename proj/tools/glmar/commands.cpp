#include "commands.hpp"

#include "runtime.hpp"

#include "glmar/errors.hpp"
#include "glmar/io.hpp"
#include "glmar/metrics.hpp"
#include "glmar/simulate.hpp"
#include "glmar/summary.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>

namespace glmar::cli {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Json to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.begin(), v.end()); }

Json scenario_json(const SimScenario& s) {
  Json j;
  j["name"] = s.name;
  j["K"] = s.K;
  j["P"] = s.P;
  j["alpha"] = to_json(s.alpha);
  j["beta"] = to_json(s.beta);
  if (s.lambda.fixed) j["lambda"] = {{"fixed", s.lambda.value}};
  else j["lambda"] = {{"gamma_shape", s.lambda.shape}, {"gamma_scale", s.lambda.scale}};
  j["design"] = fs::absolute(s.design_path).string();
  j["mask"] = fs::absolute(s.mask_path).string();
  j["J"] = s.J;
  j["seed"] = s.seed;
  return j;
}

Json hyper_json(const HyperPriors& h) {
  return {{"q1", h.q1}, {"q2", h.q2}, {"r1", h.r1}, {"r2", h.r2}, {"u1", h.u1}, {"u2", h.u2}};
}

Json inputs_of(const fs::path& dir) {
  if (fs::exists(dir / "manifest.json")) return {{"manifest", hash_file(dir / "manifest.json")}};
  return hash_tree(dir);
}

std::vector<fs::path> replicate_dirs(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) throw DataError(dir.string() + ": not a directory");
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && e.path().filename().string().rfind("rep_", 0) == 0) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------- simulate

}  // namespace

void cmd_simulate(const SimulateOptions& opt) {
  const auto t0 = Clock::now();
  if (opt.preset.empty() == opt.scenario_file.empty())
    throw std::invalid_argument("simulate needs exactly one of --preset or --scenario");
  SimScenario sc = opt.scenario_file.empty() ? preset(opt.preset, parse_scale(opt.scale)) : read_scenario(opt.scenario_file);
  if (opt.seed) sc.seed = *opt.seed;
  if (opt.reps) sc.J = *opt.reps;
  sc.validate();

  prepare_output(opt.out, opt.force);
  const Mask mask = read_mask(sc.mask_path);
  const Design design = read_design_csv(sc.design_path);
  if (design.X.cols() != sc.K)
    throw DataError(sc.design_path.string() + ": design has " + std::to_string(design.X.cols()) +
                    " columns, scenario needs K = " + std::to_string(sc.K));
  const auto kernel = build_kernel(mask, mask.dimensionality());
  const GroundTruth truth = draw_truth(sc, kernel);
  const Truth table{truth.W, truth.A, truth.lambda};
  const double t_truth = seconds_since(t0);

  write_scenario(opt.out / "scenario.txt", sc);
  write_mask(opt.out / "mask.txt", mask);
  write_truth_csv(opt.out / "truth.csv", table);

  std::vector<std::string> warnings;
  std::mutex warn_mutex;
  parallel_for(sc.J, opt.workers, [&](int j) {
    const auto rep = generate_replicate(truth, design.X, design.names, sc.P, j);
    const auto dir = opt.out / rep_dir_name(j);
    write_bundle(dir, rep.data, mask, !opt.csv_series);
    write_truth_csv(dir / "truth.csv", table);
    if (!rep.explosive_voxels.empty()) {
      std::lock_guard lock(warn_mutex);
      warnings.push_back(rep_dir_name(j) + ": " + std::to_string(rep.explosive_voxels.size()) +
                         " voxels with non-stationary AR draws (burn-in start)");
    }
  });
  std::sort(warnings.begin(), warnings.end());
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';

  Json config;
  config["preset"] = opt.preset;
  config["scale"] = opt.preset.empty() ? "" : opt.scale;
  config["scenario"] = scenario_json(sc);
  config["series_format"] = opt.csv_series ? "csv" : "f64";
  Json inputs;
  inputs["design"] = hash_file(sc.design_path);
  inputs["mask"] = hash_file(sc.mask_path);
  write_json(opt.out / "timing.json", {{"truth", t_truth}, {"replicates", seconds_since(t0) - t_truth}});
  write_manifest(opt.out, "simulate", config, inputs, warnings);
  std::cout << "wrote " << sc.J << " replicate(s) of " << sc.name << " (N = " << mask.voxel_count() << ") to "
            << opt.out.string() << '\n';
}

// --------------------------------------------------------------------- fit

namespace {

void write_w_cov(const fs::path& path, const std::vector<Eigen::MatrixXd>& cov) {
  std::ofstream out(path);
  out << "voxel,row,col,value\n";
  for (std::size_t n = 0; n < cov.size(); ++n)
    for (Eigen::Index r = 0; r < cov[n].rows(); ++r)
      for (Eigen::Index c = 0; c < cov[n].cols(); ++c)
        out << n << ',' << r + 1 << ',' << c + 1 << ',' << format_double(cov[n](r, c)) << '\n';
}

std::vector<Eigen::MatrixXd> read_w_cov(const fs::path& path, int N, int K) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open");
  std::vector<Eigen::MatrixXd> out(static_cast<std::size_t>(N), Eigen::MatrixXd::Zero(K, K));
  std::string line;
  std::getline(in, line);
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string f[4];
    for (auto& s : f) std::getline(ls, s, ',');
    try {
      const int n = std::stoi(f[0]), r = std::stoi(f[1]) - 1, c = std::stoi(f[2]) - 1;
      if (n < 0 || n >= N || r < 0 || r >= K || c < 0 || c >= K) throw std::out_of_range("index");
      out[static_cast<std::size_t>(n)](r, c) = std::stod(f[3]);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed covariance row");
    }
  }
  return out;
}

Json hmc_json(const HmcConfig& c, bool save_draws) {
  return {{"delta0", c.delta0},       {"L", c.L},
          {"n_iter", c.n_iter},       {"n_burn", c.n_burn},
          {"target_accept", c.target_accept}, {"kappa", c.kappa},
          {"adapt_window", c.adapt_window},   {"thin", c.thin},
          {"seed", c.seed},           {"jitter", c.jitter},
          {"mass_rounds", c.mass_rounds},     {"pilot_iter", c.pilot_iter},
          {"pilot_burn", c.pilot_burn},       {"log_scale", c.log_scale},
          {"save_draws", save_draws}};
}

Json vb_json(const VBConfig& c) {
  return {{"max_iter", c.max_iter}, {"tol", c.tol}, {"colored", c.colored}, {"seed", c.seed}};
}

struct FitOutcome {
  std::vector<std::string> warnings;
};

FitOutcome fit_bundle(const fs::path& data_dir, const fs::path& out, const FitOptions& opt, std::uint64_t seed,
                      int vb_workers) {
  const auto t0 = Clock::now();
  const Bundle b = read_bundle(data_dir);
  const auto kernel = build_kernel(b.mask, b.mask.dimensionality());
  fs::create_directories(out);
  FitOutcome res;
  Json timing;
  Json run;

  if (opt.backend == "hmc") {
    HmcConfig cfg = opt.hmc;
    cfg.seed = seed;
    cfg.keep_draws = opt.save_draws;
    const Layout lay{b.data.N(), b.data.K(), b.data.P};
    cfg.trace_coords = default_trace_coords(lay, seed);
    const auto fit = run_hmc(b.data, kernel, opt.hyper, cfg);
    const auto t_sum = Clock::now();
    fit.summary.write_csv(out / "summary.csv");
    write_traces(out / "traces", fit.run.store, lay);
    if (opt.save_draws) write_draws(out / "draws.f64", fit.run.store);
    {
      std::ofstream m(out / "mass.csv");
      m << "coord,mass\n";
      for (Eigen::Index i = 0; i < fit.run.mass.size(); ++i) m << i << ',' << format_double(fit.run.mass[i]) << '\n';
    }
    run["accept_rate"] = fit.run.accept_rate;
    run["step_size"] = fit.run.delta;
    run["seed"] = seed;
    run["warnings"] = fit.run.warnings;
    res.warnings = fit.run.warnings;
    timing = {{"precompute", fit.seconds_precompute}, {"sampling", fit.seconds_sampling},
              {"summarization", seconds_since(t_sum)}};
  } else if (opt.backend == "vb") {
    VBConfig cfg = opt.vb;
    cfg.seed = seed;
    cfg.workers = vb_workers;
    const auto fit = run_vb(b.data, kernel, opt.hyper, cfg);
    const auto t_sum = Clock::now();
    fit.summary.write_csv(out / "summary.csv");
    {
      std::ofstream fe(out / "free_energy.csv");
      fe << "iteration,free_energy\n";
      for (std::size_t i = 0; i < fit.q.free_energy_trace.size(); ++i)
        fe << i << ',' << format_double(fit.q.free_energy_trace[i]) << '\n';
    }
    write_w_cov(out / "w_cov.csv", fit.q.W_cov);
    run["iterations"] = fit.iterations;
    run["converged"] = fit.converged;
    run["final_rel_change"] = fit.final_rel_change;
    run["warnings"] = fit.warnings;
    res.warnings = fit.warnings;
    timing = {{"precompute", fit.seconds_precompute}, {"ascent", fit.seconds_ascent},
              {"summarization", seconds_since(t_sum)}};
  } else if (opt.backend == "ols") {
    const auto state = ols_init(b.data, kernel);
    PosteriorSummary s;
    s.method = "OLS";
    s.layout = state.layout();
    s.mean = state.flatten();
    s.variance = Eigen::VectorXd::Constant(s.mean.size(), std::numeric_limits<double>::quiet_NaN());
    s.bmse = s.variance;
    s.write_csv(out / "summary.csv");
    timing = {{"estimation", seconds_since(t0)}};
  } else {
    throw std::invalid_argument("unknown backend '" + opt.backend + "' (expected hmc, vb or ols)");
  }
  if (!run.is_null()) write_json(out / "run.json", run);
  timing["total"] = seconds_since(t0);
  write_json(out / "timing.json", timing);
  return res;
}

}  // namespace

void cmd_fit(const FitOptions& opt) {
  if (opt.backend != "hmc" && opt.backend != "vb" && opt.backend != "ols")
    throw std::invalid_argument("unknown backend '" + opt.backend + "' (expected hmc, vb or ols)");
  opt.hyper.validate();
  if (opt.backend == "hmc") opt.hmc.validate(1);
  prepare_output(opt.out, opt.force);

  std::vector<std::string> warnings;
  if (fs::exists(opt.data / "meta.txt")) {
    warnings = fit_bundle(opt.data, opt.out, opt, opt.hmc.seed, opt.workers).warnings;
  } else {
    const auto reps = replicate_dirs(opt.data);
    if (reps.empty()) throw DataError(opt.data.string() + ": neither a bundle (meta.txt) nor a scenario (rep_*)");
    std::vector<std::vector<std::string>> per(reps.size());
    parallel_for(static_cast<int>(reps.size()), opt.workers, [&](int j) {
      const auto name = reps[static_cast<std::size_t>(j)].filename();
      per[static_cast<std::size_t>(j)] =
          fit_bundle(reps[static_cast<std::size_t>(j)], opt.out / name, opt, derive_seed(opt.hmc.seed, j), 1).warnings;
      for (auto& w : per[static_cast<std::size_t>(j)]) w = name.string() + ": " + w;
    });
    for (const auto& p : per) warnings.insert(warnings.end(), p.begin(), p.end());
  }
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';

  Json config;
  config["data"] = fs::absolute(opt.data).string();
  config["backend"] = opt.backend;
  config["hyperpriors"] = hyper_json(opt.hyper);
  if (opt.backend == "hmc") config["hmc"] = hmc_json(opt.hmc, opt.save_draws);
  if (opt.backend == "vb") config["vb"] = vb_json(opt.vb);
  write_manifest(opt.out, "fit", config, inputs_of(opt.data), warnings);
  std::cout << "fit (" << opt.backend << ") written to " << opt.out.string() << '\n';
}

// ------------------------------------------------------------------ report

namespace {

struct MethodFits {
  std::string name;
  fs::path dir;
  std::vector<fs::path> reps;  // replicate directories (or the fit dir itself)
  ReplicateSet set;
};

MethodFits load_method(const std::string& spec, const Mask& mask, const Truth& truth) {
  const auto eq = spec.find('=');
  const fs::path dir = eq == std::string::npos ? fs::path(spec) : fs::path(spec.substr(eq + 1));
  std::string name = eq == std::string::npos ? dir.filename().string() : spec.substr(0, eq);
  if (name.empty()) name = dir.parent_path().filename().string();
  MethodFits m{name, dir, replicate_dirs(dir), ReplicateSet{name, mask, truth, {}}};
  if (m.reps.empty() && fs::exists(m.dir / "summary.csv")) m.reps.push_back(m.dir);
  if (m.reps.empty()) throw DataError(m.dir.string() + ": no summaries found");
  for (const auto& r : m.reps) m.set.reps.push_back(read_summary(r / "summary.csv"));
  try {
    m.set.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(m.dir.string() + ": " + e.what());
  }
  return m;
}

Contrast parse_contrast(const ReportOptions& opt, int K) {
  Contrast c;
  if (opt.contrast == "fame" || opt.contrast == "face") {
    c = named_contrast(opt.contrast);
  } else {
    std::vector<double> xs;
    std::stringstream ss(opt.contrast);
    std::string item;
    while (std::getline(ss, item, ',')) xs.push_back(std::stod(item));
    c.c = Eigen::Map<Eigen::VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
  }
  const std::string& g = opt.gamma_e;
  if (g.rfind("top", 0) == 0 && g.size() > 6 && g.substr(g.size() - 3) == "pct") {
    c.rule = EffectRule::TopQuantile;
    c.gamma_e = std::stod(g.substr(3, g.size() - 6)) / 100.0;
  } else if (g.rfind("mean+", 0) == 0 && g.size() > 8 && g.substr(g.size() - 3) == "pct") {
    c.rule = EffectRule::AboveGlobalMean;
    c.gamma_e = std::stod(g.substr(5, g.size() - 8));
  } else {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(g, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != g.size() || g.empty())
      throw std::invalid_argument("--gamma-e must be topQpct, mean+Xpct or a number, got '" + g + "'");
    c.rule = EffectRule::Fixed;
    c.gamma_e = v;
  }
  if (opt.gamma_p) c.gamma_p = *opt.gamma_p;
  c.validate(K);
  return c;
}

void write_map(const fs::path& stem, const Mask& mask, const Eigen::VectorXd& v, double lo, double hi) {
  write_grid_csv(stem.string() + ".csv", mask, v);
  if (mask.dimensionality() == 2) write_pgm(stem.string() + ".pgm", mask, v, lo, hi);
}

Eigen::VectorXd row_of(const Truth& t, const BlockRef& r) {
  return r.block == Block::W ? Eigen::VectorXd(t.W.row(r.row).transpose()) : Eigen::VectorXd(t.A.row(r.row).transpose());
}

}  // namespace

void cmd_report(const ReportOptions& opt) {
  const auto t0 = Clock::now();
  if (opt.fits.empty()) throw std::invalid_argument("report needs at least one --fit");
  const Mask mask = read_mask(opt.scenario / "mask.txt");
  const Truth truth = read_truth_csv(opt.scenario / "truth.csv");
  std::vector<MethodFits> methods;
  for (const auto& f : opt.fits) methods.push_back(load_method(f, mask, truth));
  for (const auto& m : methods)
    if (m.set.reps.size() != methods.front().set.reps.size())
      throw DataError("replicate counts differ: " + methods.front().name + " has " +
                      std::to_string(methods.front().set.reps.size()) + ", " + m.name + " has " +
                      std::to_string(m.set.reps.size()));
  prepare_output(opt.out, opt.force);
  const auto t_load = Clock::now();

  const MoranWeights weights(mask);
  std::vector<std::vector<BlockStats>> stats(methods.size());
  parallel_for(static_cast<int>(methods.size()), opt.workers,
               [&](int i) { stats[static_cast<std::size_t>(i)] = summary_stats(methods[static_cast<std::size_t>(i)].set, weights); });
  std::vector<std::string> names;
  for (const auto& m : methods) names.push_back(m.name);
  const auto true_moran = truth_moran(truth, weights);
  write_table_csv(opt.out / "table.csv", true_moran, stats, names);
  write_table_json(opt.out / "table.json", true_moran, stats, names);

  const Layout lay = methods.front().set.layout();
  fs::create_directories(opt.out / "maps");
  for (const auto& ref : coefficient_blocks(lay)) {
    const Eigen::VectorXd t = row_of(truth, ref);
    const double lo = t.minCoeff(), hi = t.maxCoeff();
    write_map(opt.out / "maps" / ("truth_" + ref.label()), mask, t, lo, hi);
    for (const auto& m : methods)
      write_map(opt.out / "maps" / (m.name + "_mean_" + ref.label()), mask,
                m.set.reps.front().mean_row(ref.block, ref.row), lo, hi);
  }

  Json summary_lines = Json::array();
  if (!opt.compare.empty()) {
    if (opt.compare.size() != 2) throw std::invalid_argument("--compare takes two method names");
    auto find = [&](const std::string& n) -> const MethodFits& {
      for (const auto& m : methods)
        if (m.name == n) return m;
      throw std::invalid_argument("--compare: no fit named '" + n + "'");
    };
    const auto& ref = find(opt.compare[0]);
    const auto& other = find(opt.compare[1]);
    const auto cmp = compare_report(other.set, ref.set, weights);
    const std::string tag = other.name + "_vs_" + ref.name;
    write_comparison_json(opt.out / ("comparison_" + tag + ".json"), cmp);
    for (std::size_t k = 0; k < cmp.log_variance_ratio.size(); ++k) {
      const auto& v = cmp.log_variance_ratio[k];
      const double r = std::max(v.cwiseAbs().maxCoeff(), 1e-12);
      write_map(opt.out / "maps" / ("logvar_" + tag + "_W" + std::to_string(k + 1)), mask, v, -r, r);
    }
    std::ostringstream line;
    line << "AMSE ratio " << other.name << "/" << ref.name << ": mean over W and A = " << cmp.mean_ratio_all
         << ", over W = " << cmp.mean_ratio_w;
    std::cout << line.str() << '\n';
    summary_lines.push_back(line.str());
  }

  std::vector<std::string> report_warnings;
  if (opt.ppm) {
    const Contrast contrast = parse_contrast(opt, lay.K);
    const Eigen::VectorXd true_effect = contrast_mean(truth.W, contrast.c);
    const double true_threshold = effect_threshold(contrast, true_effect);
    std::vector<bool> truth_active(static_cast<std::size_t>(lay.N));
    for (int n = 0; n < lay.N; ++n) truth_active[static_cast<std::size_t>(n)] = true_effect[n] > true_threshold;
    Eigen::VectorXd truth_map(lay.N);
    for (int n = 0; n < lay.N; ++n) truth_map[n] = truth_active[static_cast<std::size_t>(n)];
    write_map(opt.out / "maps" / "truth_active", mask, truth_map, 0.0, 1.0);

    for (const auto& m : methods) {
      const auto has_posterior = [](const fs::path& d) { return fs::exists(d / "draws.f64") || fs::exists(d / "w_cov.csv"); };
      if (std::none_of(m.reps.begin(), m.reps.end(), has_posterior)) {
        report_warnings.push_back(m.name + ": no draws.f64 or w_cov.csv, PPM skipped");
        std::cerr << "warning: " << report_warnings.back() << '\n';
        continue;
      }
      const auto thresholds = default_thresholds();
      std::vector<std::vector<CurvePoint>> curves(m.reps.size());
      std::vector<PPM> maps(m.reps.size());
      parallel_for(static_cast<int>(m.reps.size()), opt.workers, [&](int j) {
        const auto& dir = m.reps[static_cast<std::size_t>(j)];
        const auto& s = m.set.reps[static_cast<std::size_t>(j)];
        Eigen::MatrixXd W(lay.K, lay.N);
        for (int k = 0; k < lay.K; ++k) W.row(k) = s.mean_row(Block::W, k).transpose();
        const Eigen::VectorXd point = contrast_mean(W, contrast.c);
        PPM p;
        if (fs::exists(dir / "draws.f64")) {
          p = ppm_from_draws(contrast_draws(read_draws(dir / "draws.f64"), lay, contrast.c), point, contrast);
        } else if (fs::exists(dir / "w_cov.csv")) {
          p = ppm_gaussian(point, contrast_variance(read_w_cov(dir / "w_cov.csv", lay.N, lay.K), contrast.c), contrast);
        } else {
          throw DataError(dir.string() + ": PPM needs draws.f64 (fit --save-draws) or w_cov.csv");
        }
        curves[static_cast<std::size_t>(j)] = sensitivity_curve(p.probability, truth_active, thresholds);
        maps[static_cast<std::size_t>(j)] = std::move(p);
      });
      std::vector<CurvePoint> mean_curve;
      for (std::size_t t = 0; t < thresholds.size(); ++t) {
        double acc = 0.0;
        for (const auto& c : curves) acc += c[t].sensitivity;
        mean_curve.push_back({thresholds[t], acc / static_cast<double>(curves.size())});
      }
      write_curve_csv(opt.out / ("sensitivity_" + m.name + ".csv"), mean_curve);
      write_map(opt.out / "maps" / ("ppm_" + m.name), mask, maps.front().probability, 0.0, 1.0);
      double at_gp = 0.0;
      for (const auto& p : maps) {
        long hit = 0;
        for (int n = 0; n < lay.N; ++n) hit += truth_active[static_cast<std::size_t>(n)] && p.active[static_cast<std::size_t>(n)];
        at_gp += static_cast<double>(hit) / static_cast<double>(std::count(truth_active.begin(), truth_active.end(), true));
      }
      at_gp /= static_cast<double>(maps.size());
      std::ostringstream line;
      line << "sensitivity " << m.name << " at gamma_p = " << contrast.gamma_p << ": " << at_gp;
      std::cout << line.str() << '\n';
      summary_lines.push_back(line.str());
    }
  }
  write_json(opt.out / "summary.json", {{"lines", summary_lines}});

  Json config;
  config["scenario"] = fs::absolute(opt.scenario).string();
  config["fits"] = opt.fits;
  config["compare"] = opt.compare;
  config["ppm"] = opt.ppm;
  if (opt.ppm) {
    config["contrast"] = opt.contrast;
    config["gamma_e"] = opt.gamma_e;
    if (opt.gamma_p) config["gamma_p"] = *opt.gamma_p;
  }
  Json inputs;
  inputs["scenario"] = inputs_of(opt.scenario);
  for (const auto& m : methods) inputs[m.name] = inputs_of(m.dir);
  write_json(opt.out / "timing.json", {{"load", std::chrono::duration<double>(t_load - t0).count()},
                                       {"metrics", seconds_since(t_load)}});
  write_manifest(opt.out, "report", config, inputs, report_warnings);
  std::cout << "report written to " << opt.out.string() << '\n';
}

}  // namespace glmar::cli
