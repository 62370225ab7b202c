#pragma once

#include <Eigen/Sparse>

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

namespace glmar {

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Voxel mask on a 2-D or 3-D grid.
///
/// Inside cells are numbered 0..N-1 in row-major scan order (last axis
/// fastest). Centroids are the integer grid coordinates of each voxel.
class Mask {
 public:
  Mask(std::vector<int> dims, std::vector<bool> inside);

  static Mask full(std::vector<int> dims);

  const std::vector<int>& dims() const { return dims_; }
  int dimensionality() const { return static_cast<int>(dims_.size()); }
  std::size_t voxel_count() const { return voxel_to_cell_.size(); }
  std::size_t cell_count() const { return inside_.size(); }
  bool inside_cell(std::size_t cell) const { return inside_[cell]; }

  /// Voxel index of a grid cell, or -1 if the cell lies outside the mask.
  long voxel_at_cell(std::size_t cell) const { return cell_to_voxel_[cell]; }
  /// Voxel index at a grid coordinate, or -1 when outside the grid or mask.
  long voxel_at(const std::array<int, 3>& coord) const;

  std::size_t cell_of(std::size_t voxel) const { return voxel_to_cell_[voxel]; }
  std::array<int, 3> coord(std::size_t voxel) const;
  std::array<double, 3> centroid(std::size_t voxel) const;

  bool operator==(const Mask& other) const {
    return dims_ == other.dims_ && inside_ == other.inside_;
  }

 private:
  std::vector<int> dims_;
  std::vector<bool> inside_;
  std::vector<long> cell_to_voxel_;
  std::vector<std::size_t> voxel_to_cell_;
};

/// Reads the plain-text grid format: a header line `dims: d1 d2 [d3]`
/// followed by 0/1 rows along the last axis (blank lines are ignored).
Mask parse_mask(std::istream& in, const std::string& source_name = "<stream>");
Mask read_mask(const std::filesystem::path& path);
void write_mask(std::ostream& out, const Mask& mask);
void write_mask(const std::filesystem::path& path, const Mask& mask);

/// Fixed-diagonal Laplacian S and its Gram matrix StS = S^T S.
struct SpatialKernel {
  SparseRowMatrix S;
  SparseRowMatrix StS;
  int deg = 0;
  Eigen::VectorXd StS_diag;

  std::size_t size() const { return static_cast<std::size_t>(S.rows()); }
};

/// deg = 4 in 2-D and 6 in 3-D independent of the actual neighbour count;
/// off-diagonals are -1 between axis-adjacent inside voxels.
SpatialKernel build_kernel(const Mask& mask, int dimensionality);

/// v^T (S^T S) v by sparse traversal.
double quad_form(const SpatialKernel& kernel, std::span<const double> v);

/// Row n of S^T S as (column, value) pairs in ascending column order.
std::vector<std::pair<std::size_t, double>> precision_row(const SpatialKernel& kernel,
                                                          std::size_t n);

/// Coordinate-list CSV dump `row,col,value` (debugging aid).
void export_kernel_csv(std::ostream& out, const SparseRowMatrix& matrix);

}  // namespace glmar
