#include "glmar/io.hpp"

#include "glmar/errors.hpp"
#include "glmar/summary.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace glmar {

namespace fs = std::filesystem;

namespace {

std::string at(const fs::path& p, int line) { return p.string() + ":" + std::to_string(line); }

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_number(std::string s, const std::string& where) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  if (b == std::string::npos) throw DataError(where + ": empty field");
  s = s.substr(b, e - b + 1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError(where + ": cannot parse number '" + s + "'");
  return v;
}

std::ifstream open_in(const fs::path& p, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(p, mode);
  if (!in) throw DataError("cannot open " + p.string());
  return in;
}

std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(p, mode);
  if (!out) throw DataError("cannot write " + p.string());
  return out;
}

// Numeric CSV rows (no header).
std::vector<std::vector<double>> read_numeric_rows(std::istream& in, const fs::path& path, int first_line) {
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = first_line;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    int col = 0;
    for (const auto& f : split(line, ',')) {
      ++col;
      row.push_back(parse_number(f, at(path, lineno) + " column " + std::to_string(col)));
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw DataError(at(path, lineno) + ": expected " + std::to_string(rows.front().size()) + " fields, found " +
                      std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> read_key_values(const fs::path& path) {
  auto in = open_in(path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(at(path, lineno) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto i = s.find_first_not_of(" \t");
      const auto j = s.find_last_not_of(" \t");
      return i == std::string::npos ? std::string() : s.substr(i, j - i + 1);
    };
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    if (out.back().first.empty()) throw DataError(at(path, lineno) + ": empty key");
  }
  return out;
}

Design read_design_csv(const fs::path& path) {
  auto in = open_in(path);
  Design d;
  std::string header;
  if (!std::getline(in, header)) throw DataError(path.string() + ": empty design file");
  d.names = split(header, ',');
  for (const auto& n : d.names) {
    if (n.empty()) throw DataError(at(path, 1) + ": empty regressor name");
    double probe = 0.0;
    if (std::from_chars(n.data(), n.data() + n.size(), probe).ec == std::errc())
      throw DataError(at(path, 1) + ": header row missing (found number '" + n + "')");
  }
  const auto rows = read_numeric_rows(in, path, 1);
  if (rows.empty()) throw DataError(path.string() + ": no data rows");
  if (rows.front().size() != d.names.size())
    throw DataError(at(path, 2) + ": " + std::to_string(rows.front().size()) + " fields but " +
                    std::to_string(d.names.size()) + " regressor names");
  d.X.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d.names.size()));
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t k = 0; k < rows[t].size(); ++k) d.X(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = rows[t][k];
  return d;
}

void write_design_csv(const fs::path& path, const Design& design) {
  auto out = open_out(path);
  for (std::size_t k = 0; k < design.names.size(); ++k) out << (k ? "," : "") << design.names[k];
  out << '\n';
  for (Eigen::Index t = 0; t < design.X.rows(); ++t) {
    for (Eigen::Index k = 0; k < design.X.cols(); ++k) out << (k ? "," : "") << format_double(design.X(t, k));
    out << '\n';
  }
}

Bundle read_bundle(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError(dir.string() + ": not a bundle directory");
  std::map<std::string, int> meta;
  const fs::path meta_path = dir / "meta.txt";
  for (const auto& [k, v] : read_key_values(meta_path)) {
    if (k == "T" || k == "N" || k == "K" || k == "P") {
      int value = 0;
      const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), value);
      if (ec != std::errc() || ptr != v.data() + v.size() || value < 0)
        throw DataError(meta_path.string() + ": bad value for " + k + ": '" + v + "'");
      meta[k] = value;
    }
  }
  for (const char* k : {"T", "N", "K", "P"})
    if (!meta.count(k)) throw DataError(meta_path.string() + ": missing key " + k);
  const int T = meta["T"], N = meta["N"], K = meta["K"], P = meta["P"];

  Mask mask = read_mask(dir / "mask.txt");
  if (static_cast<int>(mask.voxel_count()) != N)
    throw DataError((dir / "mask.txt").string() + ": mask has " + std::to_string(mask.voxel_count()) +
                    " voxels but meta.txt says N=" + std::to_string(N));

  const Design design = read_design_csv(dir / "design.csv");
  if (design.X.rows() != T || design.X.cols() != K)
    throw DataError((dir / "design.csv").string() + ": design is " + std::to_string(design.X.rows()) + "x" +
                    std::to_string(design.X.cols()) + ", meta.txt says T=" + std::to_string(T) + ", K=" + std::to_string(K));

  Dataset data;
  data.P = P;
  data.Xfull = design.X;
  data.regressor_names = design.names;
  data.Y.resize(T, N);
  const fs::path bin = dir / "series.f64", csv = dir / "series.csv";
  if (fs::exists(bin)) {
    const auto expected = static_cast<std::uintmax_t>(T) * static_cast<std::uintmax_t>(N) * sizeof(double);
    if (fs::file_size(bin) != expected)
      throw DataError(bin.string() + ": size " + std::to_string(fs::file_size(bin)) + " bytes, expected " +
                      std::to_string(expected) + " for T=" + std::to_string(T) + ", N=" + std::to_string(N));
    auto in = open_in(bin, std::ios::binary);
    std::vector<double> buf(static_cast<std::size_t>(T) * static_cast<std::size_t>(N));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected));
    if constexpr (std::endian::native == std::endian::big) {
      for (auto& v : buf) {
        std::uint64_t u;
        std::memcpy(&u, &v, 8);
        u = __builtin_bswap64(u);
        std::memcpy(&v, &u, 8);
      }
    }
    for (int t = 0; t < T; ++t)
      for (int n = 0; n < N; ++n) data.Y(t, n) = buf[static_cast<std::size_t>(t) * N + n];
  } else if (fs::exists(csv)) {
    auto in = open_in(csv);
    const auto rows = read_numeric_rows(in, csv, 0);
    if (static_cast<int>(rows.size()) != T || (T > 0 && static_cast<int>(rows.front().size()) != N))
      throw DataError(csv.string() + ": expected " + std::to_string(T) + " rows of " + std::to_string(N) + " values");
    for (int t = 0; t < T; ++t)
      for (int n = 0; n < N; ++n) data.Y(t, n) = rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(n)];
  } else {
    throw DataError(dir.string() + ": neither series.f64 nor series.csv present");
  }
  data.validate();
  return {std::move(data), std::move(mask)};
}

void write_bundle(const fs::path& dir, const Dataset& data, const Mask& mask, bool binary_series) {
  fs::create_directories(dir);
  Design design{data.regressor_names, data.Xfull};
  if (design.names.empty())
    for (int k = 0; k < data.K(); ++k) design.names.push_back("x" + std::to_string(k + 1));
  write_design_csv(dir / "design.csv", design);
  write_mask(dir / "mask.txt", mask);
  {
    auto out = open_out(dir / "meta.txt");
    out << "T=" << data.T() << "\nN=" << data.N() << "\nK=" << data.K() << "\nP=" << data.P << '\n';
  }
  if (binary_series) {
    std::vector<double> buf(static_cast<std::size_t>(data.T()) * static_cast<std::size_t>(data.N()));
    for (int t = 0; t < data.T(); ++t)
      for (int n = 0; n < data.N(); ++n) buf[static_cast<std::size_t>(t) * data.N() + n] = data.Y(t, n);
    if constexpr (std::endian::native == std::endian::big) {
      for (auto& v : buf) {
        std::uint64_t u;
        std::memcpy(&u, &v, 8);
        u = __builtin_bswap64(u);
        std::memcpy(&v, &u, 8);
      }
    }
    auto out = open_out(dir / "series.f64", std::ios::binary);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(double)));
    fs::remove(dir / "series.csv");
  } else {
    auto out = open_out(dir / "series.csv");
    for (int t = 0; t < data.T(); ++t) {
      for (int n = 0; n < data.N(); ++n) out << (n ? "," : "") << format_double(data.Y(t, n));
      out << '\n';
    }
    fs::remove(dir / "series.f64");
  }
}

void write_truth_csv(const fs::path& path, const Truth& truth) {
  auto out = open_out(path);
  out << "voxel,parameter,value\n";
  const Eigen::Index N = truth.lambda.size();
  for (Eigen::Index n = 0; n < N; ++n) {
    for (Eigen::Index k = 0; k < truth.W.rows(); ++k) out << n << ",w" << k + 1 << ',' << format_double(truth.W(k, n)) << '\n';
    for (Eigen::Index p = 0; p < truth.A.rows(); ++p) out << n << ",a" << p + 1 << ',' << format_double(truth.A(p, n)) << '\n';
    out << n << ",lambda," << format_double(truth.lambda[n]) << '\n';
  }
}

Truth read_truth_csv(const fs::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line) || line != "voxel,parameter,value")
    throw DataError(at(path, 1) + ": expected header voxel,parameter,value");
  struct Entry {
    long voxel;
    char kind;
    int index;
    double value;
  };
  std::vector<Entry> entries;
  long max_voxel = -1;
  int max_k = 0, max_p = 0;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 3) throw DataError(at(path, lineno) + ": expected 3 fields");
    Entry e{static_cast<long>(parse_number(f[0], at(path, lineno))), 0, 0, parse_number(f[2], at(path, lineno))};
    if (f[1] == "lambda") {
      e.kind = 'l';
    } else if ((f[1][0] == 'w' || f[1][0] == 'a') && f[1].size() > 1) {
      e.kind = f[1][0];
      e.index = static_cast<int>(parse_number(f[1].substr(1), at(path, lineno))) - 1;
      if (e.index < 0) throw DataError(at(path, lineno) + ": bad parameter '" + f[1] + "'");
      (e.kind == 'w' ? max_k : max_p) = std::max(e.kind == 'w' ? max_k : max_p, e.index + 1);
    } else {
      throw DataError(at(path, lineno) + ": unknown parameter '" + f[1] + "'");
    }
    if (e.voxel < 0) throw DataError(at(path, lineno) + ": negative voxel index");
    max_voxel = std::max(max_voxel, e.voxel);
    entries.push_back(e);
  }
  Truth t;
  const auto N = static_cast<Eigen::Index>(max_voxel + 1);
  t.W = Eigen::MatrixXd::Constant(max_k, N, std::numeric_limits<double>::quiet_NaN());
  t.A = Eigen::MatrixXd::Constant(max_p, N, std::numeric_limits<double>::quiet_NaN());
  t.lambda = Eigen::VectorXd::Constant(N, std::numeric_limits<double>::quiet_NaN());
  for (const auto& e : entries) {
    if (e.kind == 'w') t.W(e.index, e.voxel) = e.value;
    else if (e.kind == 'a') t.A(e.index, e.voxel) = e.value;
    else t.lambda[e.voxel] = e.value;
  }
  if (t.W.array().isNaN().any() || t.A.array().isNaN().any() || t.lambda.array().isNaN().any())
    throw DataError(path.string() + ": incomplete truth table");
  return t;
}

}  // namespace glmar
