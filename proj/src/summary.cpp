#include "glmar/summary.hpp"

#include "glmar/errors.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

namespace glmar {

bool PosteriorSummary::has_variance() const {
  return variance.size() == mean.size() && variance.size() > 0 && !variance.array().isNaN().any();
}

namespace {

Eigen::VectorXd extract_row(const Layout& lay, const Eigen::VectorXd& v, Block block, int row) {
  Eigen::VectorXd out(lay.N);
  for (int n = 0; n < lay.N; ++n) {
    const std::size_t i = block == Block::W ? lay.w(row, n) : lay.a(row, n);
    out[n] = v[static_cast<Eigen::Index>(i)];
  }
  return out;
}

double parse_field(const std::string& field, const std::string& where) {
  if (field.empty() || field == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (field == "inf") return std::numeric_limits<double>::infinity();
  if (field == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw DataError(where + ": cannot parse number '" + field + "'");
  return v;
}

}  // namespace

Eigen::VectorXd PosteriorSummary::mean_row(Block block, int row) const {
  return extract_row(layout, mean, block, row);
}

Eigen::VectorXd PosteriorSummary::variance_row(Block block, int row) const {
  return extract_row(layout, variance, block, row);
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

void PosteriorSummary::write_csv(std::ostream& out) const {
  out << "# method=" << method << " N=" << layout.N << " K=" << layout.K << " P=" << layout.P << "\n";
  out << "coord,block,row,voxel,mean,variance,bmse\n";
  for (std::size_t i = 0; i < layout.dim(); ++i) {
    const auto c = layout.decode(i);
    const auto at = static_cast<Eigen::Index>(i);
    const double var = variance.size() ? variance[at] : std::numeric_limits<double>::quiet_NaN();
    const double err = bmse.size() ? bmse[at] : std::numeric_limits<double>::quiet_NaN();
    out << i << ',' << block_name(c.block) << ',' << c.row << ',' << c.voxel << ','
        << format_double(mean[at]) << ',' << format_double(var) << ',' << format_double(err) << '\n';
  }
}

void PosteriorSummary::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_csv(out);
}

PosteriorSummary read_summary(std::istream& in, const std::string& source_name) {
  PosteriorSummary s;
  std::string line;
  int lineno = 0;
  auto where = [&] { return source_name + ":" + std::to_string(lineno); };

  if (!std::getline(in, line)) throw DataError(source_name + ": empty summary file");
  ++lineno;
  {
    if (line.rfind("# ", 0) != 0) throw DataError(where() + ": expected '# method=... N=... K=... P=...' header");
    std::istringstream hs(line.substr(2));
    std::string tok;
    bool seen[4] = {false, false, false, false};
    while (hs >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw DataError(where() + ": malformed header token '" + tok + "'");
      const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
      try {
        if (key == "method") { s.method = val; seen[0] = true; }
        else if (key == "N") { s.layout.N = std::stoi(val); seen[1] = true; }
        else if (key == "K") { s.layout.K = std::stoi(val); seen[2] = true; }
        else if (key == "P") { s.layout.P = std::stoi(val); seen[3] = true; }
      } catch (const std::exception&) {
        throw DataError(where() + ": bad value in header token '" + tok + "'");
      }
    }
    for (bool b : seen)
      if (!b) throw DataError(where() + ": header must define method, N, K and P");
  }
  if (!std::getline(in, line) || line != "coord,block,row,voxel,mean,variance,bmse")
    throw DataError(source_name + ":2: expected column header coord,block,row,voxel,mean,variance,bmse");
  ++lineno;

  const auto R = static_cast<Eigen::Index>(s.layout.dim());
  s.mean.resize(R);
  s.variance.resize(R);
  s.bmse.resize(R);
  Eigen::Index count = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() != 7) throw DataError(where() + ": expected 7 fields, found " + std::to_string(fields.size()));
    if (count >= R) throw DataError(where() + ": more rows than N, K, P allow");
    if (fields[0] != std::to_string(count)) throw DataError(where() + ": coordinates out of order");
    s.mean[count] = parse_field(fields[4], where());
    s.variance[count] = parse_field(fields[5], where());
    s.bmse[count] = parse_field(fields[6], where());
    ++count;
  }
  if (count != R)
    throw DataError(source_name + ": expected " + std::to_string(R) + " rows, found " + std::to_string(count));
  return s;
}

PosteriorSummary read_summary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_summary(in, path.string());
}

}  // namespace glmar
