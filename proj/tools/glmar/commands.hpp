#pragma once

#include "glmar/hmc.hpp"
#include "glmar/model.hpp"
#include "glmar/vb.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace glmar::cli {

struct SimulateOptions {
  std::string preset;
  std::string scale = "desk";
  std::filesystem::path scenario_file;
  std::optional<std::uint64_t> seed;
  std::optional<int> reps;
  std::filesystem::path out;
  bool force = false;
  bool csv_series = false;
  int workers = 1;
};

struct FitOptions {
  std::filesystem::path data;
  std::string backend = "hmc";
  std::filesystem::path out;
  bool force = false;
  int workers = 1;
  HmcConfig hmc;
  bool save_draws = false;
  VBConfig vb;
  HyperPriors hyper;
};

struct ReportOptions {
  std::filesystem::path scenario;
  std::vector<std::string> fits;  // NAME=DIR or DIR
  std::filesystem::path out;
  bool force = false;
  int workers = 1;
  std::vector<std::string> compare;  // reference first: "hmc vb" reports vb / hmc
  bool ppm = false;
  std::string contrast = "fame";
  std::optional<double> gamma_p;
  std::string gamma_e = "top10pct";
};

struct CheckOptions {
  bool all = false;
  std::vector<int> criteria;
  std::filesystem::path work_dir;
  std::filesystem::path self;
};

void cmd_simulate(const SimulateOptions& opt);
void cmd_fit(const FitOptions& opt);
void cmd_report(const ReportOptions& opt);
/// Returns true when every selected check passed.
bool cmd_check(const CheckOptions& opt);

}  // namespace glmar::cli
