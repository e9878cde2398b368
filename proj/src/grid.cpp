#include "hjbi/grid.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "hjbi/error.hpp"

namespace hjbi {

Grid::Grid(std::vector<int> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.empty()) throw ConfigError("grid: dimension must be positive");
  count_ = 1;
  for (int s : sizes_) {
    if (s < 4) throw ConfigError("grid: at least 4 points per axis are required, got " + std::to_string(s));
    count_ *= static_cast<std::size_t>(s);
  }
}

double Grid::min_spacing() const {
  int largest = 0;
  for (int s : sizes_) largest = std::max(largest, s);
  return 1.0 / largest;
}

std::vector<int> Grid::multi_index(std::size_t flat) const {
  std::vector<int> index(sizes_.size());
  for (std::size_t d = sizes_.size(); d-- > 0;) {
    const auto s = static_cast<std::size_t>(sizes_[d]);
    index[d] = static_cast<int>(flat % s);
    flat /= s;
  }
  return index;
}

std::size_t Grid::flat_index(const std::vector<int>& index) const {
  std::size_t flat = 0;
  for (std::size_t d = 0; d < sizes_.size(); ++d) {
    const int s = sizes_[d];
    flat = flat * static_cast<std::size_t>(s) + static_cast<std::size_t>(((index[d] % s) + s) % s);
  }
  return flat;
}

VectorXd Grid::coordinates(std::size_t flat) const {
  VectorXd x(dimension());
  for (std::size_t d = sizes_.size(); d-- > 0;) {
    const auto s = static_cast<std::size_t>(sizes_[d]);
    x(static_cast<Eigen::Index>(d)) = static_cast<double>(flat % s) / static_cast<double>(s);
    flat /= s;
  }
  return x;
}

std::size_t Grid::shifted(std::size_t flat, const std::vector<int>& offset) const {
  std::vector<int> index = multi_index(flat);
  for (std::size_t d = 0; d < index.size(); ++d) index[d] += offset[d];
  return flat_index(index);
}

GridFunction::GridFunction(Grid g, VectorXd v) : grid(std::move(g)), values(std::move(v)) {
  if (static_cast<std::size_t>(values.size()) != grid.node_count())
    throw ConfigError("grid function: " + std::to_string(values.size()) + " values for " +
                      std::to_string(grid.node_count()) + " nodes");
}

void write_csv(const GridFunction& u, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  const Eigen::Index n = u.grid.dimension();
  for (Eigen::Index d = 0; d < n; ++d) out << "x" << d + 1 << ",";
  out << "value\n";
  char buf[64];
  for (std::size_t i = 0; i < u.grid.node_count(); ++i) {
    const VectorXd x = u.grid.coordinates(i);
    for (Eigen::Index d = 0; d < n; ++d) {
      std::snprintf(buf, sizeof buf, "%.17g,", x(d));
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g\n", u.values(static_cast<Eigen::Index>(i)));
    out << buf;
  }
}

GridFunction read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::string header;
  std::getline(in, header);
  const auto columns = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',')) + 1;
  if (columns < 2) throw ConfigError("grid csv: malformed header in " + path.string());
  const std::size_t n = columns - 1;
  std::vector<std::vector<double>> coords(n);
  std::vector<double> values;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    for (std::size_t c = 0; c < columns; ++c) {
      if (!std::getline(ss, cell, ',')) throw ConfigError("grid csv: short row in " + path.string());
      const double v = std::stod(cell);
      if (c < n) coords[c].push_back(v);
      else values.push_back(v);
    }
  }
  // Sizes are recovered from the number of distinct coordinates per axis.
  std::vector<int> sizes(n);
  for (std::size_t d = 0; d < n; ++d) {
    std::vector<double> axis = coords[d];
    std::sort(axis.begin(), axis.end());
    axis.erase(std::unique(axis.begin(), axis.end()), axis.end());
    sizes[d] = static_cast<int>(axis.size());
  }
  Grid grid(sizes);
  return GridFunction(grid, Eigen::Map<const VectorXd>(values.data(), static_cast<Eigen::Index>(values.size())));
}

namespace {

static_assert(std::endian::native == std::endian::little, "binary grid layout assumes a little-endian host");

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ConfigError("grid binary: truncated file");
  return v;
}

}  // namespace

void write_binary(const GridFunction& u, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write("HJBG", 4);
  put<std::uint32_t>(out, 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(u.grid.dimension()));
  for (int s : u.grid.sizes()) put<std::uint32_t>(out, static_cast<std::uint32_t>(s));
  out.write(reinterpret_cast<const char*>(u.values.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(u.values.size())));
}

GridFunction read_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "HJBG", 4) != 0) throw ConfigError("grid binary: bad magic in " + path.string());
  if (get<std::uint32_t>(in) != 1) throw ConfigError("grid binary: unsupported version");
  const auto n = get<std::uint32_t>(in);
  std::vector<int> sizes(n);
  for (auto& s : sizes) s = static_cast<int>(get<std::uint32_t>(in));
  Grid grid(sizes);
  VectorXd values(static_cast<Eigen::Index>(grid.node_count()));
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(sizeof(double) * grid.node_count()));
  if (!in) throw ConfigError("grid binary: truncated values");
  return GridFunction(grid, std::move(values));
}

}  // namespace hjbi
