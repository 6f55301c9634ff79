#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mycobow/error.hpp"

namespace mycobow {

using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct Grid {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  bool operator==(const Grid&) const = default;
};

/// N x D local descriptors of one patch (or scan region).
struct DescriptorSet {
  FloatMatrix descriptors;
  std::optional<Grid> grid;
  std::string source_id;

  std::size_t count() const { return static_cast<std::size_t>(descriptors.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(descriptors.cols()); }
};

/// Payload and grid equality, bit-for-bit on the float values.
inline bool same_payload(const DescriptorSet& a, const DescriptorSet& b) {
  if (a.descriptors.rows() != b.descriptors.rows() || a.descriptors.cols() != b.descriptors.cols()) return false;
  if (a.grid != b.grid) return false;
  return std::memcmp(a.descriptors.data(), b.descriptors.data(),
                     sizeof(float) * static_cast<std::size_t>(a.descriptors.size())) == 0;
}

inline void validate(const DescriptorSet& set) {
  if (set.descriptors.rows() < 1 || set.descriptors.cols() < 1) {
    throw data_error("descriptor set '" + set.source_id + "' must have N >= 1 and D >= 1");
  }
  if (set.grid && static_cast<std::uint64_t>(set.grid->rows) * set.grid->cols !=
                      static_cast<std::uint64_t>(set.descriptors.rows())) {
    throw data_error("descriptor set '" + set.source_id + "': grid rows*cols != N");
  }
  if (!set.descriptors.allFinite()) {
    throw data_error("descriptor set '" + set.source_id + "' contains non-finite values");
  }
}

// .dfb layout, little-endian:
//   "DFB1" | version u32 (=1) | D u32 | N u32 | grid rows u32 | grid cols u32 | N*D float32 row-major
inline constexpr std::array<char, 4> kDfbMagic = {'D', 'F', 'B', '1'};
inline constexpr std::uint32_t kDfbVersion = 1;
inline constexpr std::size_t kDfbHeaderBytes = 24;

namespace detail {

inline void put_u32(unsigned char* out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
}

inline std::uint32_t get_u32(const unsigned char* in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[i]) << (8 * i);
  return v;
}

}  // namespace detail

/// Serialize in the .dfb layout. Validation happens before any byte is
/// written. Returns the number of bytes written.
inline std::size_t write_descriptors(const DescriptorSet& set, std::ostream& out) {
  validate(set);
  const auto n = static_cast<std::uint32_t>(set.descriptors.rows());
  const auto d = static_cast<std::uint32_t>(set.descriptors.cols());
  std::array<unsigned char, kDfbHeaderBytes> header{};
  std::memcpy(header.data(), kDfbMagic.data(), 4);
  detail::put_u32(header.data() + 4, kDfbVersion);
  detail::put_u32(header.data() + 8, d);
  detail::put_u32(header.data() + 12, n);
  detail::put_u32(header.data() + 16, set.grid ? set.grid->rows : 0);
  detail::put_u32(header.data() + 20, set.grid ? set.grid->cols : 0);

  std::vector<unsigned char> payload(static_cast<std::size_t>(n) * d * 4);
  const float* src = set.descriptors.data();
  for (std::size_t i = 0; i < static_cast<std::size_t>(n) * d; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, src + i, 4);
    detail::put_u32(payload.data() + 4 * i, bits);
  }
  out.write(reinterpret_cast<const char*>(header.data()), header.size());
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw data_error("write failure for descriptor set '" + set.source_id + "'");
  return header.size() + payload.size();
}

inline DescriptorSet read_descriptors(std::istream& in, std::string source_id = {}) {
  std::array<unsigned char, kDfbHeaderBytes> header{};
  in.read(reinterpret_cast<char*>(header.data()), header.size());
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got < 4 || std::memcmp(header.data(), kDfbMagic.data(), 4) != 0) {
    throw data_error("'" + source_id + "': bad magic, expected DFB1");
  }
  if (got < kDfbHeaderBytes) throw data_error("'" + source_id + "': truncated header");
  const auto version = detail::get_u32(header.data() + 4);
  if (version != kDfbVersion) {
    throw data_error("'" + source_id + "': unsupported format version " + std::to_string(version));
  }
  const auto d = detail::get_u32(header.data() + 8);
  const auto n = detail::get_u32(header.data() + 12);
  const auto grid_rows = detail::get_u32(header.data() + 16);
  const auto grid_cols = detail::get_u32(header.data() + 20);
  if (n < 1 || d < 1) throw data_error("'" + source_id + "': N and D must be >= 1");

  DescriptorSet set;
  set.source_id = std::move(source_id);
  if (grid_rows != 0 || grid_cols != 0) {
    if (static_cast<std::uint64_t>(grid_rows) * grid_cols != n) {
      throw data_error("'" + set.source_id + "': grid " + std::to_string(grid_rows) + "x" +
                       std::to_string(grid_cols) + " inconsistent with N=" + std::to_string(n));
    }
    set.grid = Grid{grid_rows, grid_cols};
  }
  const std::size_t count = static_cast<std::size_t>(n) * d;
  std::vector<unsigned char> payload(count * 4);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (static_cast<std::size_t>(in.gcount()) != payload.size()) {
    throw data_error("'" + set.source_id + "': truncated payload, header declares " + std::to_string(n) + "x" +
                     std::to_string(d) + " values");
  }
  set.descriptors.resize(n, d);
  float* dst = set.descriptors.data();
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t bits = detail::get_u32(payload.data() + 4 * i);
    std::memcpy(dst + i, &bits, 4);
  }
  return set;
}

inline std::size_t write_descriptors_file(const DescriptorSet& set, const std::filesystem::path& path) {
  validate(set);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot open '" + path.string() + "' for writing");
  return write_descriptors(set, out);
}

/// The source id of a file-backed set is the file stem.
inline DescriptorSet read_descriptors_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open descriptor file '" + path.string() + "'");
  try {
    return read_descriptors(in, path.stem().string());
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

/// Row matrix of double-precision features (FVs, pooled descriptors) stored as
/// a gridless .dfb.
inline std::size_t write_feature_matrix(const Matrix& m, const std::filesystem::path& path) {
  DescriptorSet set;
  set.descriptors = m.cast<float>();
  set.source_id = path.stem().string();
  return write_descriptors_file(set, path);
}

}  // namespace mycobow
