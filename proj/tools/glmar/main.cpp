#include "commands.hpp"
#include "runtime.hpp"

#include "glmar/errors.hpp"

#include "CLI11.hpp"

#include <iostream>

using namespace glmar;
using namespace glmar::cli;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial GLM-AR posterior inference: simulation, HMC and VB fitting, reports"};
  app.set_config("--config", "", "key=value configuration file; flags win");
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  int workers = default_workers();
  app.add_option("--workers", workers, "Worker threads (default GLMAR_WORKERS or core count)")->check(CLI::PositiveNumber);

  SimulateOptions sim;
  auto* s = app.add_subcommand("simulate", "Simulate replicate datasets from a preset or scenario file");
  s->add_option("--preset", sim.preset, "study1, study2 or study3");
  s->add_option("--scale", sim.scale, "desk (20x20, J=20) or full (brain mask, J=100)");
  s->add_option("--scenario", sim.scenario_file, "Custom scenario key=value file")->check(CLI::ExistingFile);
  s->add_option("--seed", sim.seed, "Override the scenario seed");
  s->add_option("--reps", sim.reps, "Override the replicate count J");
  s->add_option("--out", sim.out, "Output directory")->required();
  s->add_flag("--force", sim.force, "Overwrite an earlier output directory");
  s->add_flag("--csv-series", sim.csv_series, "Write series.csv instead of series.f64");

  FitOptions fit;
  std::vector<double> hyper;
  auto* f = app.add_subcommand("fit", "Fit a bundle or every replicate of a scenario");
  f->add_option("--data", fit.data, "Bundle directory or scenario directory")->required()->check(CLI::ExistingDirectory);
  f->add_option("--backend", fit.backend, "hmc, vb or ols")->check(CLI::IsMember({"hmc", "vb", "ols"}));
  f->add_option("--out", fit.out, "Output directory")->required();
  f->add_flag("--force", fit.force, "Overwrite an earlier output directory");
  f->add_option("--hyper", hyper, "q1,q2,r1,r2,u1,u2 Gamma(shape, scale) hyperpriors")->delimiter(',')->expected(6);
  f->add_option("--iters", fit.hmc.n_iter, "HMC iterations including burn-in");
  f->add_option("--burn", fit.hmc.n_burn, "HMC burn-in iterations");
  f->add_option("--leapfrog", fit.hmc.L, "Leapfrog steps per trajectory");
  f->add_option("--delta0", fit.hmc.delta0, "Initial step size");
  f->add_option("--target-accept", fit.hmc.target_accept, "Adaptation target");
  f->add_option("--kappa", fit.hmc.kappa, "Adaptation gain");
  f->add_option("--window", fit.hmc.adapt_window, "Adaptation window");
  f->add_option("--jitter", fit.hmc.jitter, "Relative step-size jitter");
  f->add_option("--thin", fit.hmc.thin, "Keep every thin-th draw");
  f->add_option("--mass-rounds", fit.hmc.mass_rounds, "Pilot rounds of mass tuning");
  f->add_option("--pilot-iter", fit.hmc.pilot_iter, "Iterations per pilot round");
  f->add_option("--pilot-burn", fit.hmc.pilot_burn, "Burn-in per pilot round");
  f->add_flag("--log-scale", fit.hmc.log_scale, "Sample precisions on the log scale");
  f->add_flag("--save-draws", fit.save_draws, "Write draws.f64 (needed for draw-based PPMs)");
  f->add_option("--seed", fit.hmc.seed, "HMC seed (replicate seeds derive from it)");
  f->add_option("--tol", fit.vb.tol, "VB relative free-energy tolerance");
  f->add_option("--max-iter", fit.vb.max_iter, "VB sweep budget");
  f->add_flag("--colored", fit.vb.colored, "VB: colour-class updates");

  ReportOptions rep;
  auto* r = app.add_subcommand("report", "Summary tables, maps, comparisons and PPMs");
  r->add_option("--scenario", rep.scenario, "Scenario directory (mask.txt, truth.csv)")->required()->check(CLI::ExistingDirectory);
  r->add_option("--fit", rep.fits, "NAME=DIR of a fit (repeatable; first is the table reference)")->required();
  r->add_option("--out", rep.out, "Output directory")->required();
  r->add_flag("--force", rep.force, "Overwrite an earlier output directory");
  r->add_option("--compare", rep.compare, "REF OTHER: report AMSE_OTHER / AMSE_REF")->expected(2);
  r->add_flag("--ppm", rep.ppm, "Posterior probability maps and sensitivity curves");
  r->add_option("--contrast", rep.contrast, "fame, face or comma-separated weights");
  r->add_option("--gamma-p", rep.gamma_p, "Probability threshold");
  r->add_option("--gamma-e", rep.gamma_e, "Effect threshold: topQpct, mean+Xpct or a number");

  CheckOptions chk;
  std::string criteria;
  auto* c = app.add_subcommand("check", "Run the oracle and invariant self-test suite");
  c->add_flag("--all", chk.all, "Include the long simulation studies");
  c->add_option("--criteria", chk.criteria, "Comma-separated criterion numbers")->delimiter(',');
  c->add_option("--work-dir", chk.work_dir, "Scratch directory for the determinism check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*s) {
      sim.workers = workers;
      cmd_simulate(sim);
    } else if (*f) {
      fit.workers = workers;
      if (!hyper.empty()) fit.hyper = {hyper[0], hyper[1], hyper[2], hyper[3], hyper[4], hyper[5]};
      cmd_fit(fit);
    } else if (*r) {
      rep.workers = workers;
      cmd_report(rep);
    } else if (*c) {
      chk.self = argv[0];
      return cmd_check(chk) ? kOk : kNumerical;
    }
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
