#include "commands.hpp"

#include "acceptance/criteria.hpp"

#include <iostream>

namespace glmar::cli {

bool cmd_check(const CheckOptions& opt) {
  std::vector<int> ids = opt.criteria;
  if (ids.empty()) ids = opt.all ? accept::all_criteria() : accept::quick_criteria();
  accept::Options o;
  std::error_code ec;
  o.cli = std::filesystem::canonical("/proc/self/exe", ec);
  if (ec) o.cli = opt.self;
  o.work_dir = opt.work_dir.empty() ? std::filesystem::temp_directory_path() / "glmar_check" : opt.work_dir;
  o.log = &std::cerr;
  bool ok = true;
  for (int id : ids) {
    const auto r = accept::run_criterion(id, o);
    std::cout << accept::format_result(r) << std::endl;
    ok = ok && r.pass;
  }
  return ok;
}

}  // namespace glmar::cli
