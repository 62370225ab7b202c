#include "glmar/lattice.hpp"

#include "glmar/errors.hpp"
#include "glmar/numeric.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

namespace glmar {

namespace {

std::array<int, 3> padded_dims(const std::vector<int>& dims) {
  std::array<int, 3> d{1, 1, 1};
  for (std::size_t i = 0; i < dims.size(); ++i) d[i] = dims[i];
  return d;
}

}  // namespace

Mask::Mask(std::vector<int> dims, std::vector<bool> inside)
    : dims_(std::move(dims)), inside_(std::move(inside)) {
  if (dims_.size() != 2 && dims_.size() != 3) {
    throw std::invalid_argument("mask must be 2-D or 3-D");
  }
  std::size_t cells = 1;
  for (int d : dims_) {
    if (d < 1) throw std::invalid_argument("mask extents must be positive");
    cells *= static_cast<std::size_t>(d);
  }
  if (inside_.size() != cells) {
    throw std::invalid_argument("mask cell count " + std::to_string(inside_.size()) +
                                " does not match extents (" + std::to_string(cells) + ")");
  }
  cell_to_voxel_.assign(cells, -1);
  for (std::size_t c = 0; c < cells; ++c) {
    if (inside_[c]) {
      cell_to_voxel_[c] = static_cast<long>(voxel_to_cell_.size());
      voxel_to_cell_.push_back(c);
    }
  }
}

Mask Mask::full(std::vector<int> dims) {
  std::size_t cells = 1;
  for (int d : dims) cells *= static_cast<std::size_t>(std::max(d, 0));
  return Mask(std::move(dims), std::vector<bool>(cells, true));
}

long Mask::voxel_at(const std::array<int, 3>& coord) const {
  const auto d = padded_dims(dims_);
  for (int axis = 0; axis < 3; ++axis) {
    if (coord[axis] < 0 || coord[axis] >= d[axis]) return -1;
  }
  const std::size_t cell =
      (static_cast<std::size_t>(coord[0]) * d[1] + coord[1]) * d[2] + coord[2];
  return cell_to_voxel_[cell];
}

std::array<int, 3> Mask::coord(std::size_t voxel) const {
  const auto d = padded_dims(dims_);
  std::size_t cell = voxel_to_cell_.at(voxel);
  std::array<int, 3> c{};
  c[2] = static_cast<int>(cell % d[2]);
  cell /= d[2];
  c[1] = static_cast<int>(cell % d[1]);
  c[0] = static_cast<int>(cell / d[1]);
  return c;
}

std::array<double, 3> Mask::centroid(std::size_t voxel) const {
  const auto c = coord(voxel);
  return {static_cast<double>(c[0]), static_cast<double>(c[1]), static_cast<double>(c[2])};
}

Mask parse_mask(std::istream& in, const std::string& source_name) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<int> dims;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag != "dims:") {
      throw DataError(source_name + ":" + std::to_string(line_no) +
                      ": expected header 'dims: d1 d2 [d3]'");
    }
    int d = 0;
    while (ss >> d) dims.push_back(d);
    break;
  }
  if (dims.size() != 2 && dims.size() != 3) {
    throw DataError(source_name + ":" + std::to_string(line_no) +
                    ": mask header must list 2 or 3 extents");
  }
  std::size_t cells = 1;
  for (int d : dims) {
    if (d < 1) throw DataError(source_name + ": non-positive mask extent");
    cells *= static_cast<std::size_t>(d);
  }
  const std::size_t row_len = static_cast<std::size_t>(dims.back());
  std::vector<bool> inside;
  inside.reserve(cells);
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    std::size_t count = 0;
    std::string tok;
    while (ss >> tok) {
      if (tok != "0" && tok != "1") {
        throw DataError(source_name + ":" + std::to_string(line_no) + ": invalid mask value '" +
                        tok + "'");
      }
      inside.push_back(tok == "1");
      ++count;
    }
    if (count != row_len) {
      throw DataError(source_name + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(row_len) + " values, found " + std::to_string(count));
    }
    if (inside.size() > cells) {
      throw DataError(source_name + ":" + std::to_string(line_no) + ": too many mask rows");
    }
  }
  if (inside.size() != cells) {
    throw DataError(source_name + ": mask has " + std::to_string(inside.size()) +
                    " cells, header implies " + std::to_string(cells));
  }
  return Mask(std::move(dims), std::move(inside));
}

Mask read_mask(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open mask file " + path.string());
  return parse_mask(in, path.string());
}

void write_mask(std::ostream& out, const Mask& mask) {
  out << "dims:";
  for (int d : mask.dims()) out << ' ' << d;
  out << '\n';
  const std::size_t row_len = static_cast<std::size_t>(mask.dims().back());
  for (std::size_t c = 0; c < mask.cell_count(); ++c) {
    out << (mask.inside_cell(c) ? '1' : '0');
    out << ((c + 1) % row_len == 0 ? '\n' : ' ');
  }
}

void write_mask(const std::filesystem::path& path, const Mask& mask) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write mask file " + path.string());
  write_mask(out, mask);
}

SpatialKernel build_kernel(const Mask& mask, int dimensionality) {
  if (dimensionality != 2 && dimensionality != 3) {
    throw std::invalid_argument("kernel dimensionality must be 2 or 3");
  }
  if (dimensionality != mask.dimensionality()) {
    throw std::invalid_argument("kernel dimensionality " + std::to_string(dimensionality) +
                                " does not match a " + std::to_string(mask.dimensionality()) +
                                "-D mask");
  }
  const std::size_t n_vox = mask.voxel_count();
  if (n_vox == 0) throw std::invalid_argument("mask contains no voxels");

  SpatialKernel kernel;
  kernel.deg = dimensionality == 2 ? 4 : 6;

  // Neighbour lists in ascending voxel order, self included.
  std::vector<std::vector<std::pair<std::size_t, double>>> rows(n_vox);
  for (std::size_t v = 0; v < n_vox; ++v) {
    const auto c = mask.coord(v);
    auto& row = rows[v];
    row.emplace_back(v, static_cast<double>(kernel.deg));
    for (int axis = 0; axis < dimensionality; ++axis) {
      for (int step : {-1, 1}) {
        auto nb = c;
        nb[axis] += step;
        const long u = mask.voxel_at(nb);
        if (u >= 0) row.emplace_back(static_cast<std::size_t>(u), -1.0);
      }
    }
    std::sort(row.begin(), row.end());
  }

  std::vector<Eigen::Triplet<double>> s_trip;
  for (std::size_t i = 0; i < n_vox; ++i) {
    for (const auto& [j, val] : rows[i]) s_trip.emplace_back(i, j, val);
  }
  kernel.S.resize(n_vox, n_vox);
  kernel.S.setFromTriplets(s_trip.begin(), s_trip.end());
  kernel.S.makeCompressed();

  // S is symmetric, so (S^T S)_ij = sum_k S_ki S_kj = sum_k S_ik S_kj. All
  // entries are small integers, so the accumulation is exact.
  std::vector<Eigen::Triplet<double>> sts_trip;
  for (std::size_t i = 0; i < n_vox; ++i) {
    std::map<std::size_t, double> acc;
    for (const auto& [k, s_ik] : rows[i]) {
      for (const auto& [j, s_kj] : rows[k]) acc[j] += s_ik * s_kj;
    }
    for (const auto& [j, val] : acc) {
      if (val != 0.0) sts_trip.emplace_back(i, j, val);
    }
  }
  kernel.StS.resize(n_vox, n_vox);
  kernel.StS.setFromTriplets(sts_trip.begin(), sts_trip.end());
  kernel.StS.makeCompressed();
  kernel.StS_diag = kernel.StS.diagonal();
  return kernel;
}

double quad_form(const SpatialKernel& kernel, std::span<const double> v) {
  if (v.size() != kernel.size()) {
    throw std::invalid_argument("quad_form: vector length " + std::to_string(v.size()) +
                                " != kernel size " + std::to_string(kernel.size()));
  }
  const auto& m = kernel.StS;
  std::vector<double> terms(v.size());
  for (Eigen::Index i = 0; i < m.outerSize(); ++i) {
    double row = 0.0;
    for (SparseRowMatrix::InnerIterator it(m, i); it; ++it) row += it.value() * v[it.col()];
    terms[i] = v[i] * row;
  }
  return pairwise_sum(terms);
}

std::vector<std::pair<std::size_t, double>> precision_row(const SpatialKernel& kernel,
                                                          std::size_t n) {
  if (n >= kernel.size()) {
    throw std::out_of_range("precision_row: voxel " + std::to_string(n) + " out of range");
  }
  std::vector<std::pair<std::size_t, double>> row;
  for (SparseRowMatrix::InnerIterator it(kernel.StS, static_cast<Eigen::Index>(n)); it; ++it) {
    row.emplace_back(static_cast<std::size_t>(it.col()), it.value());
  }
  return row;
}

void export_kernel_csv(std::ostream& out, const SparseRowMatrix& matrix) {
  out << "row,col,value\n";
  for (Eigen::Index i = 0; i < matrix.outerSize(); ++i) {
    for (SparseRowMatrix::InnerIterator it(matrix, i); it; ++it) {
      out << it.row() << ',' << it.col() << ',' << it.value() << '\n';
    }
  }
}

}  // namespace glmar
