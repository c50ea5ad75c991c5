#pragma once

// Semantic knowledge: the attribute pool extracted from base classes, its
// word embeddings and visual prototypes, and class-attribute associations.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "concm/error.hpp"
#include "concm/features.hpp"
#include "concm/io.hpp"
#include "concm/matrix.hpp"

namespace concm {

/// class name -> candidate attribute names (list order preserved, duplicates dropped).
class AttributeTable {
 public:
  void set(const std::string& class_name, std::vector<std::string> attrs) {
    std::vector<std::string> dedup;
    std::set<std::string> seen;
    for (auto& a : attrs)
      if (seen.insert(a).second) dedup.push_back(std::move(a));
    classes_[class_name] = std::move(dedup);
  }

  bool contains(const std::string& class_name) const { return classes_.count(class_name) > 0; }

  const std::vector<std::string>& attributes_of(const std::string& class_name) const {
    auto it = classes_.find(class_name);
    if (it == classes_.end()) fail(ErrorKind::UnknownClass, "no attribute entry for '" + class_name + "'");
    return it->second;
  }

  std::size_t size() const noexcept { return classes_.size(); }
  const std::map<std::string, std::vector<std::string>>& entries() const noexcept { return classes_; }

 private:
  std::map<std::string, std::vector<std::string>> classes_;
};

inline AttributeTable parse_attribute_table(std::string_view content,
                                            const std::string& what = "attribute table") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(content);
  } catch (const nlohmann::json::parse_error& e) {
    auto [line, col] = io::line_col(content, e.byte > 0 ? e.byte - 1 : 0);
    fail(ErrorKind::ParseError, what + ": line " + std::to_string(line) + " column " +
                                    std::to_string(col) + " (byte offset " + std::to_string(e.byte) +
                                    "): " + e.what());
  }
  require(j.is_object() && j.contains("classes") && j["classes"].is_object(), ErrorKind::ParseError,
          what + ": expected {\"classes\": {...}}");
  AttributeTable table;
  for (auto& [name, attrs] : j["classes"].items()) {
    require(attrs.is_array(), ErrorKind::ParseError, what + ": entry for '" + name + "' is not a list");
    std::vector<std::string> list;
    for (auto& a : attrs) {
      require(a.is_string(), ErrorKind::ParseError,
              what + ": non-string attribute in entry for '" + name + "'");
      list.push_back(a.get<std::string>());
    }
    table.set(name, std::move(list));
  }
  return table;
}

inline AttributeTable load_attribute_table(const std::filesystem::path& path) {
  return parse_attribute_table(io::read_file(path), path.string());
}

inline std::string format_attribute_table(const AttributeTable& table) {
  nlohmann::json j;
  j["classes"] = nlohmann::json::object();
  for (auto& [name, attrs] : table.entries()) j["classes"][name] = attrs;
  return j.dump(2) + "\n";
}

/// name -> semantic vector, all of one dimension.
class SemanticEmbeddings {
 public:
  SemanticEmbeddings() = default;
  explicit SemanticEmbeddings(std::size_t dim) : dim_(dim) {}

  void set(const std::string& name, Vector v) {
    require(v.size() == dim_, ErrorKind::SchemaError,
            "embedding for '" + name + "' has dim " + std::to_string(v.size()) + ", expected " +
                std::to_string(dim_));
    if (!vectors_.count(name)) order_.push_back(name);
    vectors_[name] = std::move(v);
  }

  const Vector& at(const std::string& name) const {
    auto it = vectors_.find(name);
    if (it == vectors_.end()) fail(ErrorKind::MissingEmbedding, name);
    return it->second;
  }

  bool contains(const std::string& name) const { return vectors_.count(name) > 0; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return vectors_.size(); }
  const std::vector<std::string>& names() const noexcept { return order_; }

 private:
  std::size_t dim_ = 0;
  std::map<std::string, Vector> vectors_;
  std::vector<std::string> order_;
};

inline SemanticEmbeddings parse_semantic(std::string_view content,
                                         const std::string& what = "semantic embeddings") {
  const auto lines = io::split_lines(content, what);
  require(!lines.empty(), ErrorKind::ParseError, what + ": empty file");
  const auto header = io::split_fields(lines[0]);
  require(header.size() >= 2 && header[0].text == "name", ErrorKind::ParseError,
          what + ": header must be name,s0,...");
  const std::size_t dim = header.size() - 1;
  for (std::size_t j = 0; j < dim; ++j)
    require(header[j + 1].text == "s" + std::to_string(j), ErrorKind::ParseError,
            what + ": bad header column at byte offset " + std::to_string(header[j + 1].offset));
  SemanticEmbeddings emb(dim);
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].text.empty()) continue;
    const auto fields = io::split_fields(lines[li]);
    require(fields.size() == dim + 1, ErrorKind::SchemaError,
            what + ": line " + std::to_string(lines[li].number) + " has wrong field count");
    Vector v(dim);
    for (std::size_t j = 0; j < dim; ++j) v[j] = io::parse_double(fields[j + 1], what);
    emb.set(std::string(fields[0].text), std::move(v));
  }
  return emb;
}

inline SemanticEmbeddings load_semantic(const std::filesystem::path& path) {
  return parse_semantic(io::read_file(path), path.string());
}

inline std::string format_semantic(const SemanticEmbeddings& emb) {
  std::string out = "name";
  for (std::size_t j = 0; j < emb.dim(); ++j) out += ",s" + std::to_string(j);
  out += '\n';
  for (const auto& name : emb.names()) {
    out += name;
    for (double v : emb.at(name)) out += "," + io::format_double(v);
    out += '\n';
  }
  return out;
}

struct AttributePool {
  std::vector<std::string> names;
  Matrix semantic;  // N_a x d_s
  Matrix visual;    // N_a x d_f

  std::size_t size() const noexcept { return names.size(); }
};

/// Binary N_a x C association; columns follow class_ids.
struct AssociationMatrix {
  Matrix r;
  std::vector<int> class_ids;
  std::vector<bool> uncovered;  // per class: no pooled attribute

  std::size_t count(std::size_t k) const {
    std::size_t c = 0;
    for (std::size_t a = 0; a < r.rows(); ++a) c += r(a, k) != 0.0;
    return c;
  }
};

struct SemanticKnowledge {
  AttributePool pool;
  std::vector<std::string> class_names;
  Matrix class_semantic;  // C x d_s
  AssociationMatrix assoc;
};

/// Union of the base classes' attributes, in class order then list order.
inline std::vector<std::string> pool_attribute_names(const std::vector<std::string>& base_classes,
                                                     const AttributeTable& table) {
  std::vector<std::string> names;
  std::set<std::string> seen;
  for (const auto& c : base_classes)
    for (const auto& a : table.attributes_of(c))
      if (seen.insert(a).second) names.push_back(a);
  return names;
}

/// Mean of all base samples whose class has the attribute (pooled over
/// samples, not averaged over class means).
inline Matrix attribute_visual_prototypes(const FeatureSet& base, const AttributeTable& table,
                                          const std::vector<std::string>& attribute_names) {
  std::map<std::string, std::size_t> index;
  for (std::size_t a = 0; a < attribute_names.size(); ++a) index[attribute_names[a]] = a;
  Matrix sums(attribute_names.size(), base.dim());
  std::vector<std::size_t> counts(attribute_names.size(), 0);
  const auto class_names = base.class_names_by_label();
  std::vector<std::vector<std::size_t>> attrs_of_label(class_names.size());
  for (std::size_t l = 0; l < class_names.size(); ++l)
    for (const auto& a : table.attributes_of(class_names[l])) {
      auto it = index.find(a);
      if (it != index.end()) attrs_of_label[l].push_back(it->second);
    }
  for (std::size_t i = 0; i < base.size(); ++i) {
    const auto x = base.row(i);
    for (std::size_t a : attrs_of_label[static_cast<std::size_t>(base.label(i))]) {
      auto dst = sums.row(a);
      for (std::size_t j = 0; j < x.size(); ++j) dst[j] += x[j];
      ++counts[a];
    }
  }
  for (std::size_t a = 0; a < attribute_names.size(); ++a) {
    require(counts[a] > 0, ErrorKind::EmptyAttribute,
            "attribute '" + attribute_names[a] + "' has no supporting base samples");
    for (double& v : sums.row(a)) v /= static_cast<double>(counts[a]);
  }
  return sums;
}

inline AttributePool build_attribute_pool(const FeatureSet& base, const AttributeTable& table,
                                          const SemanticEmbeddings& semantic) {
  AttributePool pool;
  pool.names = pool_attribute_names(base.class_names_by_label(), table);
  require(!pool.names.empty(), ErrorKind::InvalidInput, "base classes define no attributes");
  pool.visual = attribute_visual_prototypes(base, table, pool.names);
  pool.semantic = Matrix(pool.names.size(), semantic.dim());
  for (std::size_t a = 0; a < pool.names.size(); ++a) {
    const Vector& s = semantic.at(pool.names[a]);
    std::copy(s.begin(), s.end(), pool.semantic.row(a).begin());
  }
  return pool;
}

inline AssociationMatrix associate(const AttributePool& pool,
                                   const std::vector<std::string>& class_names,
                                   const std::vector<int>& class_ids, const AttributeTable& table) {
  require(class_names.size() == class_ids.size(), ErrorKind::ShapeError, "associate: ids/names");
  std::map<std::string, std::size_t> index;
  for (std::size_t a = 0; a < pool.size(); ++a) index[pool.names[a]] = a;
  AssociationMatrix m{Matrix(pool.size(), class_names.size()), class_ids, {}};
  for (std::size_t k = 0; k < class_names.size(); ++k) {
    for (const auto& a : table.attributes_of(class_names[k])) {
      auto it = index.find(a);
      if (it != index.end()) m.r(it->second, k) = 1.0;
    }
    m.uncovered.push_back(m.count(k) == 0);
  }
  return m;
}

/// Knowledge for one session's classes against a frozen pool.
inline SemanticKnowledge build_knowledge(const AttributePool& pool,
                                         const std::vector<std::string>& class_names,
                                         const std::vector<int>& class_ids,
                                         const SemanticEmbeddings& semantic,
                                         const AttributeTable& table) {
  require(semantic.dim() == pool.semantic.cols(), ErrorKind::SchemaError,
          "semantic dimension differs from pool");
  SemanticKnowledge k;
  k.pool = pool;
  k.class_names = class_names;
  k.class_semantic = Matrix(class_names.size(), semantic.dim());
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    const Vector& s = semantic.at(class_names[c]);
    std::copy(s.begin(), s.end(), k.class_semantic.row(c).begin());
  }
  k.assoc = associate(pool, class_names, class_ids, table);
  return k;
}

/// Base-session knowledge: builds the pool from the base features, then
/// associates the base classes (labels 0..N0-1) with it.
inline SemanticKnowledge build_knowledge(const FeatureSet& base, const SemanticEmbeddings& semantic,
                                         const AttributeTable& table) {
  AttributePool pool = build_attribute_pool(base, table, semantic);
  const auto names = base.class_names_by_label();
  std::vector<int> ids(names.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  return build_knowledge(pool, names, ids, semantic, table);
}

}  // namespace concm
