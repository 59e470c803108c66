#pragma once

// Row-major sample matrix with per-column domains. Categorical cells are
// validated against their cardinality (at most 256 categories, so every
// categorical value fits a byte in the raw file format).

#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pcem/circuit.hpp"
#include "pcem/error.hpp"

namespace pcem {

inline constexpr std::uint32_t kMaxCardinality = 256;

class Dataset {
 public:
  explicit Dataset(std::vector<VarDomain> domains) : domains_(std::move(domains)) {
    if (domains_.empty()) throw std::invalid_argument("dataset needs at least one column");
    for (const VarDomain& d : domains_)
      if (!d.continuous() && d.cardinality > kMaxCardinality)
        throw std::invalid_argument("categorical cardinality exceeds " +
                                    std::to_string(kMaxCardinality));
  }

  std::size_t rows() const { return cells_.size() / domains_.size(); }
  std::size_t cols() const { return domains_.size(); }
  const std::vector<VarDomain>& domains() const { return domains_; }

  double at(std::size_t r, std::size_t c) const { return cells_[r * domains_.size() + c]; }
  std::span<const double> row(std::size_t r) const {
    return {cells_.data() + r * domains_.size(), domains_.size()};
  }

  /// Validates every cell against its column domain; (row, col) on failure.
  void append_row(std::span<const double> row) {
    if (row.size() != domains_.size())
      throw std::invalid_argument("row has " + std::to_string(row.size()) + " cells, expected " +
                                  std::to_string(domains_.size()));
    const std::size_t r = rows();
    for (std::size_t c = 0; c < row.size(); ++c) check_cell(row[c], r, c);
    cells_.insert(cells_.end(), row.begin(), row.end());
  }

  Dataset slice(std::size_t begin, std::size_t end) const {
    Dataset out(domains_);
    for (std::size_t r = begin; r < end; ++r) out.append_row(row(r));
    return out;
  }

 private:
  void check_cell(double v, std::size_t r, std::size_t c) const {
    const VarDomain& d = domains_[c];
    if (d.continuous()) {
      if (!std::isfinite(v))
        throw std::invalid_argument("non-finite value at (row " + std::to_string(r) + ", col " +
                                    std::to_string(c) + ")");
      return;
    }
    if (!(v >= 0.0) || v != std::floor(v) || v >= d.cardinality)
      throw std::invalid_argument("cell value " + format_cell(v) + " outside cardinality " +
                                  std::to_string(d.cardinality) + " at (row " + std::to_string(r) +
                                  ", col " + std::to_string(c) + ")");
  }
  static std::string format_cell(double v) {
    return v == std::floor(v) && std::isfinite(v) ? std::to_string(static_cast<long long>(v))
                                                  : detail::format_double(v);
  }

  std::vector<VarDomain> domains_;
  std::vector<double> cells_;
};

/// Column count and per-column domains must agree with the circuit.
inline void check_compatible(const Circuit& c, const Dataset& d) {
  if (d.cols() != c.num_vars())
    throw std::invalid_argument("dataset has " + std::to_string(d.cols()) +
                                " columns, circuit has " + std::to_string(c.num_vars()) +
                                " variables");
  for (std::size_t v = 0; v < d.cols(); ++v)
    if (!(d.domains()[v] == c.var(static_cast<VarId>(v))))
      throw std::invalid_argument("domain mismatch at variable " + std::to_string(v));
}

// ---------------------------------------------------------------------------
// CSV format: a `card:` header naming each column's cardinality (or `cont`),
// then one comma-separated row per line. `#` starts a comment.

inline Dataset parse_csv(std::string_view text) {
  std::vector<VarDomain> domains;
  bool saw_header = false;
  Dataset* data = nullptr;
  std::optional<Dataset> storage;

  std::size_t line_no = 0, pos = 0;
  std::vector<double> row;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.remove_suffix(1);
    while (!line.empty() && line.front() == ' ') line.remove_prefix(1);
    if (line.empty()) continue;

    if (!saw_header) {
      if (!line.starts_with("card:")) throw ParseError(line_no, "expected 'card:' header");
      std::string_view spec = line.substr(5);
      std::size_t p = 0;
      while (p <= spec.size()) {
        std::size_t comma = spec.find(',', p);
        std::string_view tok =
            spec.substr(p, comma == std::string_view::npos ? spec.size() - p : comma - p);
        p = comma == std::string_view::npos ? spec.size() + 1 : comma + 1;
        if (tok == "cont") {
          domains.push_back(VarDomain::cont());
        } else {
          std::uint64_t card = 0;
          if (!detail::parse_uint(tok, card) || card == 0 || card > kMaxCardinality)
            throw ParseError(line_no, "bad cardinality '" + std::string(tok) + "'");
          domains.push_back(VarDomain::categorical(static_cast<std::uint32_t>(card)));
        }
      }
      storage.emplace(domains);
      data = &*storage;
      saw_header = true;
      continue;
    }

    row.clear();
    std::size_t p = 0;
    while (p <= line.size()) {
      std::size_t comma = line.find(',', p);
      std::string_view tok =
          line.substr(p, comma == std::string_view::npos ? line.size() - p : comma - p);
      p = comma == std::string_view::npos ? line.size() + 1 : comma + 1;
      double v = 0;
      if (!detail::parse_double(tok, v))
        throw ParseError(line_no, "bad cell '" + std::string(tok) + "'");
      row.push_back(v);
    }
    try {
      data->append_row(row);
    } catch (const std::invalid_argument& e) {
      throw ParseError(line_no, e.what());
    }
  }
  if (!saw_header) throw ParseError(0, "empty dataset file");
  return std::move(*storage);
}

inline std::string dataset_to_csv(const Dataset& d) {
  std::string out = "card:";
  for (std::size_t c = 0; c < d.cols(); ++c) {
    if (c) out += ',';
    out += d.domains()[c].continuous() ? "cont" : std::to_string(d.domains()[c].cardinality);
  }
  out += '\n';
  for (std::size_t r = 0; r < d.rows(); ++r) {
    for (std::size_t c = 0; c < d.cols(); ++c) {
      if (c) out += ',';
      double v = d.at(r, c);
      out += d.domains()[c].continuous() ? detail::format_double(v)
                                         : std::to_string(static_cast<long long>(v));
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Raw byte format: 16-byte header `PCD1` + rows + cols + cardinality (all
// little-endian uint32), then rows*cols cells of one byte each.

inline Dataset parse_raw(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "PCD1", 4) != 0)
    throw ParseError(0, "missing PCD1 header");
  auto read_u32 = [&](std::size_t off) {
    std::uint32_t v = 0;
    std::memcpy(&v, bytes.data() + off, 4);
    return v;
  };
  const std::uint32_t rows = read_u32(4), cols = read_u32(8), card = read_u32(12);
  if (cols == 0 || card == 0 || card > kMaxCardinality)
    throw ParseError(0, "bad raw header (cols=" + std::to_string(cols) +
                            ", cardinality=" + std::to_string(card) + ")");
  if (bytes.size() != 16 + static_cast<std::size_t>(rows) * cols)
    throw ParseError(0, "raw payload size does not match header");
  Dataset out(std::vector<VarDomain>(cols, VarDomain::categorical(card)));
  std::vector<double> row(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) row[c] = bytes[16 + r * cols + c];
    try {
      out.append_row(row);
    } catch (const std::invalid_argument& e) {
      throw ParseError(0, e.what());
    }
  }
  return out;
}

inline std::vector<std::uint8_t> dataset_to_raw(const Dataset& d) {
  std::uint32_t card = 0;
  for (const VarDomain& dom : d.domains()) {
    if (dom.continuous()) throw std::invalid_argument("raw format is categorical-only");
    card = std::max(card, dom.cardinality);
  }
  std::vector<std::uint8_t> out(16 + d.rows() * d.cols());
  std::memcpy(out.data(), "PCD1", 4);
  const std::uint32_t rows = static_cast<std::uint32_t>(d.rows());
  const std::uint32_t cols = static_cast<std::uint32_t>(d.cols());
  std::memcpy(out.data() + 4, &rows, 4);
  std::memcpy(out.data() + 8, &cols, 4);
  std::memcpy(out.data() + 12, &card, 4);
  for (std::size_t r = 0; r < d.rows(); ++r)
    for (std::size_t c = 0; c < d.cols(); ++c)
      out[16 + r * d.cols() + c] = static_cast<std::uint8_t>(d.at(r, c));
  return out;
}

enum class DataFormat { Csv, Raw };

inline DataFormat sniff_format(const std::filesystem::path& path) {
  return path.extension() == ".pcd" || path.extension() == ".raw" ? DataFormat::Raw
                                                                  : DataFormat::Csv;
}

inline Dataset load_dataset(const std::filesystem::path& path, DataFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  std::string content = ss.str();
  if (format == DataFormat::Csv) return parse_csv(content);
  return parse_raw({reinterpret_cast<const std::uint8_t*>(content.data()), content.size()});
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  return load_dataset(path, sniff_format(path));
}

}  // namespace pcem
