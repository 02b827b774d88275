#ifndef BAEOED_ENSEMBLE_HPP
#define BAEOED_ENSEMBLE_HPP

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "baeoed/error.hpp"
#include "baeoed/gaussian.hpp"

namespace baeoed {

struct EnsembleMeta {
  std::uint32_t sensors = 0;     // s
  std::uint32_t time_steps = 1;  // n_t
  std::uint64_t seed = 0;
  std::string provenance;
};

/// Paired parameter samples (q x n_v) and accurate-model outputs (q x n_d).
/// Data columns follow the time-major layout t * s + j.
struct Ensemble {
  Matrix params;
  Matrix accurate_data;
  EnsembleMeta meta;

  Eigen::Index samples() const { return params.rows(); }
  Eigen::Index param_dim() const { return params.cols(); }
  Eigen::Index data_dim() const { return accurate_data.cols(); }
};

namespace detail {

inline void check_finite(const Matrix& m, const std::string& what) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (!std::isfinite(m(i, j)))
        throw NonFiniteValue(what + " row " + std::to_string(i) + " col " + std::to_string(j));
}

}  // namespace detail

/// Throws on any violated ensemble invariant.
inline void validate(const Ensemble& e) {
  require_dims(e.params.rows() == e.accurate_data.rows(),
               "params has " + std::to_string(e.params.rows()) + " rows but data has " +
                   std::to_string(e.accurate_data.rows()));
  if (e.params.rows() < 2) throw InsufficientSamples("an ensemble needs at least 2 samples");
  require_dims(static_cast<Eigen::Index>(e.meta.sensors) * e.meta.time_steps == e.data_dim(),
               "data dimension " + std::to_string(e.data_dim()) + " != s * n_t = " +
                   std::to_string(e.meta.sensors) + " * " + std::to_string(e.meta.time_steps));
  detail::check_finite(e.params, "params");
  detail::check_finite(e.accurate_data, "accurate_data");
}

// ---------------------------------------------------------------------------
// BAEM binary container

inline constexpr std::array<char, 4> kBaemMagic = {'B', 'A', 'E', 'M'};
inline constexpr std::uint32_t kBaemVersion = 1;

namespace detail {

template <typename T>
void put_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& is, const std::string& what) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T)))
    throw DimensionMismatch("truncated file while reading " + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline void put_matrix(std::ostream& os, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put_le<double>(os, m(i, j));
}

inline Matrix get_matrix(std::istream& is, std::uint64_t rows, std::uint64_t cols,
                         const std::string& what) {
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = get_le<double>(is, what);
      if (!std::isfinite(v))
        throw NonFiniteValue(what + " row " + std::to_string(i) + " col " + std::to_string(j));
      m(i, j) = v;
    }
  return m;
}

struct BaemHeader {
  std::uint64_t q = 0, n_v = 0, n_d = 0;
  std::uint32_t s = 0, n_t = 0;
};

inline void write_header(std::ostream& os, const BaemHeader& h) {
  os.write(kBaemMagic.data(), 4);
  put_le<std::uint32_t>(os, kBaemVersion);
  put_le<std::uint64_t>(os, h.q);
  put_le<std::uint64_t>(os, h.n_v);
  put_le<std::uint64_t>(os, h.n_d);
  put_le<std::uint32_t>(os, h.s);
  put_le<std::uint32_t>(os, h.n_t);
}

inline BaemHeader read_header(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kBaemMagic) throw FormatError("bad BAEM magic");
  const auto version = get_le<std::uint32_t>(is, "version");
  if (version != kBaemVersion)
    throw FormatError("unsupported BAEM version " + std::to_string(version));
  BaemHeader h;
  h.q = get_le<std::uint64_t>(is, "q");
  h.n_v = get_le<std::uint64_t>(is, "n_v");
  h.n_d = get_le<std::uint64_t>(is, "n_d");
  h.s = get_le<std::uint32_t>(is, "s");
  h.n_t = get_le<std::uint32_t>(is, "n_t");
  constexpr std::uint64_t kMaxEntries = std::uint64_t{1} << 34;
  if (h.q > kMaxEntries || h.n_v > kMaxEntries || h.n_d > kMaxEntries ||
      (h.q != 0 && (h.n_v + h.n_d) > kMaxEntries / h.q))
    throw FormatError("implausible BAEM shape");
  return h;
}

inline void expect_eof(std::istream& is, const std::string& path) {
  if (is.peek() != std::char_traits<char>::eof())
    throw DimensionMismatch(path + ": trailing bytes after declared payload");
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return is;
}

}  // namespace detail

inline void save_ensemble_baem(const Ensemble& e, const std::filesystem::path& path) {
  auto os = detail::open_out(path);
  detail::write_header(os, {static_cast<std::uint64_t>(e.samples()),
                            static_cast<std::uint64_t>(e.param_dim()),
                            static_cast<std::uint64_t>(e.data_dim()), e.meta.sensors,
                            e.meta.time_steps});
  detail::put_matrix(os, e.params);
  detail::put_matrix(os, e.accurate_data);
  if (!os.flush()) throw IoError("write failed: " + path.string());
}

inline Ensemble load_ensemble_baem(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  const auto h = detail::read_header(is);
  Ensemble e;
  e.params = detail::get_matrix(is, h.q, h.n_v, "params");
  e.accurate_data = detail::get_matrix(is, h.q, h.n_d, "accurate_data");
  detail::expect_eof(is, path.string());
  e.meta.sensors = h.s;
  e.meta.time_steps = h.n_t;
  e.meta.provenance = "baem:" + path.filename().string();
  validate(e);
  return e;
}

/// Single-matrix BAEM file used by the subprocess protocol. An input file
/// carries the params payload (n_d = 0); an output file mirrors it with the
/// data payload only (n_v = 0).
struct BaemMatrix {
  Matrix values;
  bool is_data = false;
  std::uint32_t sensors = 0;
  std::uint32_t time_steps = 0;
};

inline void save_baem_matrix(const BaemMatrix& m, const std::filesystem::path& path) {
  auto os = detail::open_out(path);
  detail::BaemHeader h;
  h.q = static_cast<std::uint64_t>(m.values.rows());
  (m.is_data ? h.n_d : h.n_v) = static_cast<std::uint64_t>(m.values.cols());
  h.s = m.sensors;
  h.n_t = m.time_steps;
  detail::write_header(os, h);
  detail::put_matrix(os, m.values);
  if (!os.flush()) throw IoError("write failed: " + path.string());
}

inline BaemMatrix load_baem_matrix(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  const auto h = detail::read_header(is);
  if (h.n_v != 0 && h.n_d != 0)
    throw FormatError(path.string() + ": matrix file must have exactly one payload");
  BaemMatrix m;
  m.is_data = h.n_d != 0;
  m.values = detail::get_matrix(is, h.q, m.is_data ? h.n_d : h.n_v, "matrix");
  detail::expect_eof(is, path.string());
  m.sensors = h.s;
  m.time_steps = h.n_t;
  return m;
}

// ---------------------------------------------------------------------------
// CSV pair: <stem>.params.csv and <stem>.data.csv, no header row.

namespace detail {

inline std::string format_double(double v) {
  std::array<char, 32> buf;
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline void write_csv(const Matrix& m, const std::filesystem::path& path) {
  auto os = open_out(path);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) os << ',';
      os << format_double(m(i, j));
    }
    os << "\r\n";
  }
  if (!os.flush()) throw IoError("write failed: " + path.string());
}

inline Matrix read_csv(const std::filesystem::path& path) {
  auto is = open_in(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      ++line_no;
      continue;
    }
    std::vector<double> row;
    std::size_t col = 0, start = 0;
    while (true) {
      const std::size_t end = line.find(',', start);
      std::string cell = line.substr(start, end == std::string::npos ? std::string::npos : end - start);
      if (cell.size() >= 2 && cell.front() == '"' && cell.back() == '"') cell = cell.substr(1, cell.size() - 2);
      const auto first = cell.find_first_not_of(" \t");
      const auto last = cell.find_last_not_of(" \t");
      cell = first == std::string::npos ? "" : cell.substr(first, last - first + 1);
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      const std::string where = path.filename().string() + " row " + std::to_string(line_no) +
                                " col " + std::to_string(col);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
        throw FormatError("unparseable cell '" + cell + "' at " + where);
      if (!std::isfinite(v)) throw NonFiniteValue(where);
      row.push_back(v);
      ++col;
      if (end == std::string::npos) break;
      start = end + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw DimensionMismatch(path.filename().string() + " row " + std::to_string(line_no) +
                              " has " + std::to_string(row.size()) + " cells, expected " +
                              std::to_string(rows.front().size()));
    rows.push_back(std::move(row));
    ++line_no;
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()),
           rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
  return m;
}

inline std::filesystem::path csv_stem(const std::filesystem::path& path) {
  std::string s = path.string();
  for (const std::string suffix : {".params.csv", ".data.csv", ".csv"}) {
    if (s.size() > suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0)
      return s.substr(0, s.size() - suffix.size());
  }
  return path;
}

}  // namespace detail

inline void save_ensemble_csv(const Ensemble& e, const std::filesystem::path& path) {
  const auto stem = detail::csv_stem(path).string();
  detail::write_csv(e.params, stem + ".params.csv");
  detail::write_csv(e.accurate_data, stem + ".data.csv");
}

/// CSV carries no meta; sensors/time_steps default to (n_d, 1).
inline Ensemble load_ensemble_csv(const std::filesystem::path& path, std::uint32_t sensors = 0,
                                  std::uint32_t time_steps = 0) {
  const auto stem = detail::csv_stem(path).string();
  Ensemble e;
  e.params = detail::read_csv(stem + ".params.csv");
  e.accurate_data = detail::read_csv(stem + ".data.csv");
  if (sensors == 0 && time_steps == 0) {
    e.meta.sensors = static_cast<std::uint32_t>(e.data_dim());
    e.meta.time_steps = 1;
  } else {
    e.meta.sensors = sensors;
    e.meta.time_steps = time_steps == 0 ? 1 : time_steps;
  }
  e.meta.provenance = "csv:" + std::filesystem::path(stem).filename().string();
  validate(e);
  return e;
}

enum class EnsembleFormat { baem, csv };

/// Dispatches on content: BAEM magic, otherwise a CSV pair sharing the stem.
inline Ensemble load_ensemble(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (probe) {
    std::array<char, 4> magic{};
    probe.read(magic.data(), 4);
    if (probe.gcount() == 4 && magic == kBaemMagic) return load_ensemble_baem(path);
  }
  const auto stem = detail::csv_stem(path).string();
  if (std::filesystem::exists(stem + ".params.csv")) return load_ensemble_csv(path);
  if (!probe) throw IoError("cannot open " + path.string());
  throw FormatError(path.string() + " is neither a BAEM file nor a CSV pair");
}

inline void save_ensemble(const Ensemble& e, const std::filesystem::path& path,
                          EnsembleFormat format = EnsembleFormat::baem) {
  validate(e);
  if (format == EnsembleFormat::baem)
    save_ensemble_baem(e, path);
  else
    save_ensemble_csv(e, path);
}

}  // namespace baeoed

#endif  // BAEOED_ENSEMBLE_HPP
