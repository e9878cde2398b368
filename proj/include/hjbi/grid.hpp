#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hjbi/dense.hpp"

namespace hjbi {

/// Periodic uniform grid of the unit torus [0,1)^n. Node i along axis d sits at i/sizes[d].
/// Flat node indices are row-major (the last axis varies fastest).
class Grid {
 public:
  Grid() = default;
  explicit Grid(std::vector<int> sizes);
  static Grid uniform(Eigen::Index n, int points_per_axis) {
    return Grid(std::vector<int>(static_cast<std::size_t>(n), points_per_axis));
  }

  Eigen::Index dimension() const { return static_cast<Eigen::Index>(sizes_.size()); }
  const std::vector<int>& sizes() const { return sizes_; }
  double spacing(Eigen::Index axis) const { return 1.0 / sizes_[static_cast<std::size_t>(axis)]; }
  /// Smallest spacing over the axes.
  double min_spacing() const;
  std::size_t node_count() const { return count_; }

  std::vector<int> multi_index(std::size_t flat) const;
  std::size_t flat_index(const std::vector<int>& index) const;  // wraps periodically
  VectorXd coordinates(std::size_t flat) const;
  /// Flat index of the node displaced by `offset` (in nodes), wrapped on the torus.
  std::size_t shifted(std::size_t flat, const std::vector<int>& offset) const;

  bool operator==(const Grid& other) const { return sizes_ == other.sizes_; }

 private:
  std::vector<int> sizes_;
  std::size_t count_ = 0;
};

/// Nodal values on a grid.
struct GridFunction {
  Grid grid;
  VectorXd values;

  GridFunction() = default;
  GridFunction(Grid g, VectorXd v);
  static GridFunction zero(const Grid& g) { return GridFunction(g, VectorXd::Zero(static_cast<Eigen::Index>(g.node_count()))); }

  template <typename Fn>
  static GridFunction sample(const Grid& g, Fn&& fn) {
    VectorXd v(static_cast<Eigen::Index>(g.node_count()));
    for (std::size_t i = 0; i < g.node_count(); ++i) v(static_cast<Eigen::Index>(i)) = fn(g.coordinates(i));
    return GridFunction(g, std::move(v));
  }

  double sup_norm() const { return values.size() ? values.cwiseAbs().maxCoeff() : 0.0; }
  bool all_finite() const { return values.allFinite(); }
};

/// CSV with header `x1,...,xn,value`, one node per row in flat order.
void write_csv(const GridFunction& u, const std::filesystem::path& path);
GridFunction read_csv(const std::filesystem::path& path);

/// Binary layout (little-endian):
///   char[4] magic "HJBG" | uint32 version (1) | uint32 n | uint32 sizes[n] | double values[N] (row-major)
void write_binary(const GridFunction& u, const std::filesystem::path& path);
GridFunction read_binary(const std::filesystem::path& path);

}  // namespace hjbi
