#pragma once

// Feature files.
//
// Binary (.gcdf), little-endian:
//   "GCDF" | u16 version=1 | u64 n_points | u32 dim | n_points*dim f32 (row-major)
//   | optional label block: u8 flag, and if flag==1, n_points i64 labels (-1 = none)
//
// CSV:
//   dim=<D>
//   x_0,...,x_{D-1}[,label=<id|none>]     one line per point
//
// Label sidecar CSV: index,label,is_labelled   (label may be "none")
// Assignments CSV:   index,cluster

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gcd/common.hpp"

namespace gcd {

struct FeatureFile {
  FeatureMatrix features;
  std::optional<std::vector<Label>> labels;  // kNoLabel marks unlabelled points
};

inline constexpr std::uint16_t kBinaryVersion = 1;

namespace detail {

inline void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int b = 0; b < bytes; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

inline std::uint64_t get_le(std::string_view in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int b = 0; b < bytes; ++b) v |= std::uint64_t(static_cast<unsigned char>(in[at + b])) << (8 * b);
  return v;
}

[[noreturn]] inline void format_error(std::string_view source, const std::string& what) {
  throw Error(ErrorKind::format, std::string(source) + ": " + what);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::format, path + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::format, path + ": cannot open file for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::format, path + ": write failed");
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto p = s.find(sep, start);
    out.push_back(trim(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start)));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

template <class T>
std::optional<T> parse_number(std::string_view s) {
  T v{};
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

// Shortest representation that reads back to the same double.
inline std::string format_double(double x) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), ptr);
}

// Calls fn(line_no, line) for each line; line numbers start at 1.
template <class Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0, start = 0;
  while (start < text.size()) {
    auto p = text.find('\n', start);
    if (p == std::string_view::npos) p = text.size();
    fn(++line_no, trim(text.substr(start, p - start)));
    start = p + 1;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Binary

/// Values are stored as f32; doubles are rounded on write.
inline std::string encode_binary(const FeatureMatrix& f, const std::optional<std::vector<Label>>& labels) {
  if (labels && labels->size() != f.n_points()) {
    throw Error(ErrorKind::invalid_input, "label count does not match number of points");
  }
  std::string out = "GCDF";
  detail::put_le(out, kBinaryVersion, 2);
  detail::put_le(out, f.n_points(), 8);
  detail::put_le(out, f.dim(), 4);
  out.reserve(out.size() + f.values().size() * 4 + 1 + (labels ? labels->size() * 8 : 0));
  for (double x : f.values()) {
    const float v = static_cast<float>(x);
    if (!std::isfinite(v)) throw Error(ErrorKind::format, "value " + std::to_string(x) + " overflows f32");
    detail::put_le(out, std::bit_cast<std::uint32_t>(v), 4);
  }
  if (labels) {
    out.push_back('\x01');
    for (Label l : *labels) detail::put_le(out, static_cast<std::uint64_t>(l), 8);
  } else {
    out.push_back('\x00');
  }
  return out;
}

inline FeatureFile decode_binary(std::string_view in, std::string_view source = "<memory>") {
  constexpr std::size_t kHeader = 4 + 2 + 8 + 4;
  if (in.size() < 4 || in.substr(0, 4) != "GCDF") detail::format_error(source, "bad magic at byte 0");
  if (in.size() < kHeader) {
    detail::format_error(source, "truncated header: " + std::to_string(in.size()) + " of " +
                                     std::to_string(kHeader) + " bytes");
  }
  const auto version = detail::get_le(in, 4, 2);
  if (version != kBinaryVersion) {
    detail::format_error(source, "unsupported version " + std::to_string(version) + " at byte 4");
  }
  const std::uint64_t n = detail::get_le(in, 6, 8);
  const std::uint64_t d = detail::get_le(in, 14, 4);
  if (n == 0 || d == 0) detail::format_error(source, "empty shape at byte 6");
  const std::uint64_t count = n * d;
  if (count / d != n || count > (in.size() - kHeader) / 4) {
    const std::size_t have = (in.size() - kHeader) / 4;
    detail::format_error(source, "truncated payload at byte " + std::to_string(kHeader + have * 4) +
                                     ": header declares " + std::to_string(n) + "x" + std::to_string(d) +
                                     " values, found " + std::to_string(have));
  }
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = kHeader + 4 * i;
    const float v = std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(in, at, 4)));
    if (!std::isfinite(v)) detail::format_error(source, "non-finite value at byte " + std::to_string(at));
    values[i] = v;
  }
  std::size_t at = kHeader + 4 * count;
  std::optional<std::vector<Label>> labels;
  if (at < in.size()) {
    const auto flag = static_cast<unsigned char>(in[at]);
    if (flag > 1) detail::format_error(source, "bad label flag at byte " + std::to_string(at));
    ++at;
    if (flag == 1) {
      if ((in.size() - at) / 8 < n) {
        detail::format_error(source, "truncated label block at byte " + std::to_string(at));
      }
      labels.emplace(n);
      for (std::size_t i = 0; i < n; ++i, at += 8) {
        const auto l = static_cast<Label>(detail::get_le(in, at, 8));
        if (l < kNoLabel) detail::format_error(source, "invalid label at byte " + std::to_string(at));
        (*labels)[i] = l;
      }
    }
    if (at != in.size()) detail::format_error(source, "trailing bytes at byte " + std::to_string(at));
  }
  return {FeatureMatrix(n, d, std::move(values)), std::move(labels)};
}

// ---------------------------------------------------------------------------
// CSV

inline std::string encode_csv(const FeatureMatrix& f, const std::optional<std::vector<Label>>& labels) {
  if (labels && labels->size() != f.n_points()) {
    throw Error(ErrorKind::invalid_input, "label count does not match number of points");
  }
  std::string out = "dim=" + std::to_string(f.dim()) + "\n";
  for (std::size_t i = 0; i < f.n_points(); ++i) {
    const auto r = f.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (j) out += ',';
      out += detail::format_double(r[j]);
    }
    if (labels) {
      const Label l = (*labels)[i];
      out += l == kNoLabel ? ",label=none" : ",label=" + std::to_string(l);
    }
    out += '\n';
  }
  return out;
}

inline FeatureFile decode_csv(std::string_view text, std::string_view source = "<memory>") {
  std::optional<std::size_t> dim;
  std::vector<double> values;
  std::vector<Label> labels;
  bool any_label = false;
  std::size_t rows = 0;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const std::string where = "line " + std::to_string(line_no);
    if (line.empty()) return;
    if (!dim) {
      if (line.substr(0, 4) != "dim=") detail::format_error(source, where + ": expected header dim=<D>");
      const auto d = detail::parse_number<std::size_t>(line.substr(4));
      if (!d || *d == 0) detail::format_error(source, where + ": bad dimension in header");
      dim = *d;
      return;
    }
    auto fields = detail::split(line, ',');
    std::optional<Label> label;
    bool has_label_field = false;
    if (!fields.empty() && fields.back().substr(0, 6) == "label=") {
      has_label_field = true;
      const auto v = fields.back().substr(6);
      if (v != "none") {
        const auto l = detail::parse_number<Label>(v);
        if (!l || *l < 0) detail::format_error(source, where + ": bad label field");
        label = *l;
      }
      fields.pop_back();
    }
    if (fields.size() != *dim) {
      detail::format_error(source, where + ": row length " + std::to_string(fields.size()) +
                                       " does not match dim=" + std::to_string(*dim));
    }
    for (std::size_t j = 0; j < fields.size(); ++j) {
      const auto v = detail::parse_number<double>(fields[j]);
      if (!v) detail::format_error(source, where + ", field " + std::to_string(j + 1) + ": not a number");
      if (!std::isfinite(*v)) {
        detail::format_error(source, where + ", field " + std::to_string(j + 1) + ": non-finite value");
      }
      values.push_back(*v);
    }
    any_label = any_label || has_label_field;
    labels.push_back(label.value_or(kNoLabel));
    ++rows;
  });
  if (!dim) detail::format_error(source, "missing header dim=<D>");
  if (rows == 0) detail::format_error(source, "no data rows");
  std::optional<std::vector<Label>> out_labels;
  if (any_label) out_labels = std::move(labels);
  return {FeatureMatrix(rows, *dim, std::move(values)), std::move(out_labels)};
}

// ---------------------------------------------------------------------------
// Files. Loading sniffs the magic bytes; saving picks CSV for a ".csv" path.

inline FeatureFile load_features(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() >= 4 && bytes.compare(0, 4, "GCDF") == 0) return decode_binary(bytes, path);
  return decode_csv(bytes, path);
}

inline void save_features(const std::string& path, const FeatureMatrix& f,
                          const std::optional<std::vector<Label>>& labels = std::nullopt) {
  const bool csv = path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0;
  detail::write_file(path, csv ? encode_csv(f, labels) : encode_binary(f, labels));
}

// ---------------------------------------------------------------------------
// Sidecars

struct LabelRecord {
  std::optional<Label> label;
  bool is_labelled = false;
};

inline std::string encode_label_sidecar(std::span<const LabelRecord> records) {
  std::string out = "index,label,is_labelled\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    out += std::to_string(i) + ',' + (records[i].label ? std::to_string(*records[i].label) : "none") + ',' +
           (records[i].is_labelled ? "1" : "0") + '\n';
  }
  return out;
}

inline std::vector<LabelRecord> decode_label_sidecar(std::string_view text, std::string_view source = "<memory>") {
  std::vector<LabelRecord> out;
  bool header = false;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const std::string where = "line " + std::to_string(line_no);
    if (line.empty()) return;
    if (!header) {
      if (line != "index,label,is_labelled") {
        detail::format_error(source, where + ": expected header index,label,is_labelled");
      }
      header = true;
      return;
    }
    const auto f = detail::split(line, ',');
    if (f.size() != 3) detail::format_error(source, where + ": expected 3 fields");
    const auto idx = detail::parse_number<std::size_t>(f[0]);
    if (!idx || *idx != out.size()) detail::format_error(source, where + ": indices must be 0,1,2,...");
    LabelRecord r;
    if (f[1] != "none") {
      const auto l = detail::parse_number<Label>(f[1]);
      if (!l || *l < 0) detail::format_error(source, where + ": bad label");
      r.label = *l;
    }
    if (f[2] != "0" && f[2] != "1") detail::format_error(source, where + ": is_labelled must be 0 or 1");
    r.is_labelled = f[2] == "1";
    if (r.is_labelled && !r.label) detail::format_error(source, where + ": labelled point without a label");
    out.push_back(r);
  });
  if (!header) detail::format_error(source, "missing header");
  return out;
}

inline std::string encode_assignments(std::span<const std::size_t> clusters) {
  std::string out = "index,cluster\n";
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    out += std::to_string(i) + ',' + std::to_string(clusters[i]) + '\n';
  }
  return out;
}

inline std::vector<std::size_t> decode_assignments(std::string_view text, std::string_view source = "<memory>") {
  std::vector<std::size_t> out;
  bool header = false;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const std::string where = "line " + std::to_string(line_no);
    if (line.empty()) return;
    if (!header) {
      if (line != "index,cluster") detail::format_error(source, where + ": expected header index,cluster");
      header = true;
      return;
    }
    const auto f = detail::split(line, ',');
    if (f.size() != 2) detail::format_error(source, where + ": expected 2 fields");
    const auto idx = detail::parse_number<std::size_t>(f[0]);
    const auto c = detail::parse_number<std::size_t>(f[1]);
    if (!idx || *idx != out.size() || !c) detail::format_error(source, where + ": bad index or cluster id");
    out.push_back(*c);
  });
  if (!header) detail::format_error(source, "missing header");
  return out;
}

}  // namespace gcd
