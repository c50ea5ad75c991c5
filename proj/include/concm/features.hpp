#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "concm/error.hpp"
#include "concm/io.hpp"
#include "concm/matrix.hpp"

namespace concm {

/// Labeled feature vectors, stored row-major.
class FeatureSet {
 public:
  FeatureSet() = default;
  explicit FeatureSet(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }

  void add(int label, std::string class_name, std::span<const double> x) {
    require(x.size() == dim_, ErrorKind::SchemaError,
            "feature length " + std::to_string(x.size()) + " != dim " + std::to_string(dim_));
    require(label >= 0, ErrorKind::SchemaError, "negative label");
    require(all_finite(x), ErrorKind::InvalidInput, "non-finite feature for " + class_name);
    labels_.push_back(label);
    names_.push_back(std::move(class_name));
    values_.insert(values_.end(), x.begin(), x.end());
  }

  int label(std::size_t i) const { return labels_[i]; }
  const std::string& class_name(std::size_t i) const { return names_[i]; }
  std::span<const double> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  const std::vector<int>& labels() const noexcept { return labels_; }

  Matrix matrix() const { return Matrix(size(), dim_, values_); }

  Matrix rows(std::span<const std::size_t> idx) const {
    Matrix m(idx.size(), dim_);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto src = row(idx[k]);
      std::copy(src.begin(), src.end(), m.row(k).begin());
    }
    return m;
  }

  /// label -> sample indices, ascending by label.
  std::map<int, std::vector<std::size_t>> indices_by_label() const {
    std::map<int, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < size(); ++i) out[labels_[i]].push_back(i);
    return out;
  }

  /// Class names ordered by label. Requires a consistent label<->name map.
  std::vector<std::string> class_names_by_label() const {
    std::map<int, std::string> m;
    for (std::size_t i = 0; i < size(); ++i) {
      auto [it, inserted] = m.emplace(labels_[i], names_[i]);
      require(inserted || it->second == names_[i], ErrorKind::SchemaError,
              "label " + std::to_string(labels_[i]) + " used for both '" + it->second +
                  "' and '" + names_[i] + "'");
    }
    std::vector<std::string> out;
    for (auto& [l, n] : m) out.push_back(n);
    return out;
  }

  std::size_t num_classes() const { return indices_by_label().size(); }

 private:
  std::size_t dim_ = 0;
  std::vector<int> labels_;
  std::vector<std::string> names_;
  std::vector<double> values_;
};

/// Labels must be 0..L-1 without gaps and map one-to-one onto class names.
inline void validate_labels(const FeatureSet& fs, const std::string& what) {
  const auto names = fs.class_names_by_label();
  const auto by_label = fs.indices_by_label();
  int expect = 0;
  for (auto& [l, idx] : by_label) {
    require(l == expect, ErrorKind::SchemaError,
            what + ": labels not contiguous from 0 (missing " + std::to_string(expect) + ")");
    ++expect;
  }
  std::map<std::string, int> seen;
  for (std::size_t l = 0; l < names.size(); ++l) {
    auto [it, inserted] = seen.emplace(names[l], static_cast<int>(l));
    require(inserted, ErrorKind::SchemaError, what + ": class '" + names[l] + "' has two labels");
  }
}

inline FeatureSet parse_features(std::string_view content, const std::string& what = "features") {
  const auto lines = io::split_lines(content, what);
  require(!lines.empty(), ErrorKind::ParseError, what + ": empty file");
  const auto header = io::split_fields(lines[0]);
  require(header.size() >= 3 && header[0].text == "label" && header[1].text == "class_name",
          ErrorKind::ParseError, what + ": header must start with label,class_name,f0");
  const std::size_t dim = header.size() - 2;
  for (std::size_t j = 0; j < dim; ++j)
    require(header[j + 2].text == "f" + std::to_string(j), ErrorKind::ParseError,
            what + ": bad header column '" + std::string(header[j + 2].text) +
                "' at byte offset " + std::to_string(header[j + 2].offset));
  FeatureSet fs(dim);
  Vector x(dim);
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto& line = lines[li];
    if (line.text.empty()) continue;
    const auto fields = io::split_fields(line);
    require(fields.size() == dim + 2, ErrorKind::SchemaError,
            what + ": line " + std::to_string(line.number) + " has " +
                std::to_string(fields.size() - std::min<std::size_t>(fields.size(), 2)) +
                " features, expected " + std::to_string(dim) + " (byte offset " +
                std::to_string(line.offset) + ")");
    const long long label = io::parse_int(fields[0], what);
    require(label >= 0, ErrorKind::ParseError,
            what + ": negative label at byte offset " + std::to_string(fields[0].offset));
    require(!fields[1].text.empty(), ErrorKind::ParseError,
            what + ": empty class name at byte offset " + std::to_string(fields[1].offset));
    for (std::size_t j = 0; j < dim; ++j) {
      x[j] = io::parse_double(fields[j + 2], what);
      require(std::isfinite(x[j]), ErrorKind::ParseError,
              what + ": non-finite value at byte offset " + std::to_string(fields[j + 2].offset));
    }
    fs.add(static_cast<int>(label), std::string(fields[1].text), x);
  }
  validate_labels(fs, what);
  return fs;
}

inline FeatureSet load_features(const std::filesystem::path& path) {
  return parse_features(io::read_file(path), path.string());
}

inline std::string format_features(const FeatureSet& fs) {
  std::string out = "label,class_name";
  for (std::size_t j = 0; j < fs.dim(); ++j) out += ",f" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < fs.size(); ++i) {
    out += std::to_string(fs.label(i));
    out += ',';
    out += fs.class_name(i);
    for (double v : fs.row(i)) {
      out += ',';
      out += io::format_double(v);
    }
    out += '\n';
  }
  return out;
}

inline void save_features(const FeatureSet& fs, const std::filesystem::path& path) {
  io::write_file(path, format_features(fs));
}

}  // namespace concm
