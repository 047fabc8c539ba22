#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cometa/error.hpp"

namespace cometa::data {

/// Dictionary encoder assigning dense indices in first-seen order.
class Vocabulary {
 public:
  std::size_t encode(const std::string& raw) {
    auto [it, inserted] = index_.try_emplace(raw, values_.size());
    if (inserted) values_.push_back(raw);
    return it->second;
  }

  std::optional<std::size_t> find(const std::string& raw) const {
    auto it = index_.find(raw);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& decode(std::size_t index) const {
    if (index >= values_.size()) {
      throw IndexError("vocabulary index " + std::to_string(index) + " out of range (size " +
                       std::to_string(values_.size()) + ")");
    }
    return values_[index];
  }

  std::size_t size() const { return values_.size(); }
  const std::vector<std::string>& values() const { return values_; }

  bool operator==(const Vocabulary& o) const { return values_ == o.values_; }

 private:
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> values_;
};

/// A categorical attribute of users or items. Entities may carry several
/// values (e.g. genres) or none.
struct AttributeField {
  std::string name;
  Vocabulary vocab;
  std::vector<std::vector<std::size_t>> values;  // per entity

  bool operator==(const AttributeField&) const = default;
};

struct Interaction {
  std::size_t user = 0;
  std::size_t item = 0;
  std::uint8_t label = 0;
  std::int64_t timestamp = 0;

  bool operator==(const Interaction&) const = default;
};

/// Labelled (user, item) records with per-entity attribute tables. User and
/// item ids are dense indices into `users` / `items`.
struct InteractionLog {
  Vocabulary users;
  Vocabulary items;
  std::vector<AttributeField> user_fields;
  std::vector<AttributeField> item_fields;
  std::vector<Interaction> records;

  bool operator==(const InteractionLog&) const = default;

  /// Checks that every record and attribute table references known entities.
  void validate() const {
    for (const auto& f : user_fields) check_field(f, users.size(), "user");
    for (const auto& f : item_fields) check_field(f, items.size(), "item");
    for (std::size_t r = 0; r < records.size(); ++r) {
      const Interaction& rec = records[r];
      if (rec.user >= users.size() || rec.item >= items.size()) {
        throw DataError("record " + std::to_string(r) + " references an unknown entity");
      }
      if (rec.label > 1) throw DataError("record " + std::to_string(r) + " has a non-binary label");
    }
  }

 private:
  static void check_field(const AttributeField& f, std::size_t entities, const char* kind) {
    if (f.values.size() != entities) {
      throw DataError(std::string(kind) + " field '" + f.name + "' covers " +
                      std::to_string(f.values.size()) + " of " + std::to_string(entities) +
                      " entities");
    }
    for (const auto& vs : f.values)
      for (std::size_t v : vs)
        if (v >= f.vocab.size()) throw DataError("field '" + f.name + "' value out of vocabulary");
  }
};

namespace detail {

inline std::vector<std::string_view> split_on(std::string_view line, std::string_view sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + sep.size();
  }
}

inline std::string_view trim_cr(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

inline std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return in;
}

[[noreturn]] inline void malformed(const std::string& path, std::size_t line_no, const std::string& why) {
  throw DataError(path + ":" + std::to_string(line_no) + ": " + why);
}

inline void add_value(AttributeField& field, std::size_t entity, const std::string& raw) {
  if (field.values.size() <= entity) field.values.resize(entity + 1);
  field.values[entity].push_back(field.vocab.encode(raw));
}

}  // namespace detail

/// Ratings of at least this value become positive labels.
inline constexpr int kPositiveRating = 4;

/// Decade bucket ("1990s") from a MovieLens title ending in "(YYYY)".
inline std::string decade_of_title(std::string_view title) {
  while (!title.empty() && title.back() == ' ') title.remove_suffix(1);
  if (title.size() >= 6 && title.back() == ')' && title[title.size() - 6] == '(') {
    int year = 0;
    if (detail::parse_number(title.substr(title.size() - 5, 4), year)) {
      return std::to_string(year / 10 * 10) + "s";
    }
  }
  return "unknown";
}

/// MovieLens-1M (`::`-separated ratings.dat / users.dat / movies.dat).
/// User fields: gender, age, occupation. Item fields: genre (multi-valued),
/// decade. Titles and zip codes are dropped.
inline InteractionLog load_movielens(const std::string& ratings_path, const std::string& users_path,
                                     const std::string& movies_path) {
  InteractionLog log;
  log.user_fields = {{"gender", {}, {}}, {"age", {}, {}}, {"occupation", {}, {}}};
  log.item_fields = {{"genre", {}, {}}, {"decade", {}, {}}};

  {
    auto in = detail::open_or_throw(users_path);
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
      const std::string_view l = detail::trim_cr(line);
      if (l.empty()) continue;
      const auto f = detail::split_on(l, "::");
      if (f.size() != 5) detail::malformed(users_path, no, "expected 5 fields");
      const std::string id(f[0]);
      if (log.users.find(id)) detail::malformed(users_path, no, "duplicate user " + id);
      const std::size_t u = log.users.encode(id);
      detail::add_value(log.user_fields[0], u, std::string(f[1]));
      detail::add_value(log.user_fields[1], u, std::string(f[2]));
      detail::add_value(log.user_fields[2], u, std::string(f[3]));
    }
  }
  {
    auto in = detail::open_or_throw(movies_path);
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
      const std::string_view l = detail::trim_cr(line);
      if (l.empty()) continue;
      const std::size_t first = l.find("::");
      const std::size_t last = l.rfind("::");
      if (first == std::string_view::npos || first == last) {
        detail::malformed(movies_path, no, "expected MovieID::Title::Genres");
      }
      const std::string id(l.substr(0, first));
      if (log.items.find(id)) detail::malformed(movies_path, no, "duplicate movie " + id);
      const std::size_t i = log.items.encode(id);
      const std::string_view title = l.substr(first + 2, last - first - 2);
      log.item_fields[0].values.resize(i + 1);
      for (std::string_view g : detail::split_on(l.substr(last + 2), "|")) {
        if (!g.empty()) detail::add_value(log.item_fields[0], i, std::string(g));
      }
      detail::add_value(log.item_fields[1], i, decade_of_title(title));
    }
  }
  {
    auto in = detail::open_or_throw(ratings_path);
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
      const std::string_view l = detail::trim_cr(line);
      if (l.empty()) continue;
      const auto f = detail::split_on(l, "::");
      if (f.size() != 4) detail::malformed(ratings_path, no, "expected 4 fields");
      int rating = 0;
      std::int64_t ts = 0;
      if (!detail::parse_number(f[2], rating)) detail::malformed(ratings_path, no, "bad rating");
      if (!detail::parse_number(f[3], ts)) detail::malformed(ratings_path, no, "bad timestamp");
      const auto u = log.users.find(std::string(f[0]));
      const auto i = log.items.find(std::string(f[1]));
      if (!u) detail::malformed(ratings_path, no, "unknown user " + std::string(f[0]));
      if (!i) detail::malformed(ratings_path, no, "unknown movie " + std::string(f[1]));
      log.records.push_back({*u, *i, static_cast<std::uint8_t>(rating >= kPositiveRating ? 1 : 0), ts});
    }
  }
  for (auto& f : log.user_fields) f.values.resize(log.users.size());
  for (auto& f : log.item_fields) f.values.resize(log.items.size());
  log.validate();
  return log;
}

/// Column roles for a generic headed CSV file. Attribute cells may hold
/// several values joined by `multi_value_separator`. Quoted fields are not supported.
struct CsvSchema {
  std::string user_id;
  std::string item_id;
  std::string label;
  std::optional<std::string> timestamp;
  std::vector<std::string> user_attrs;
  std::vector<std::string> item_attrs;
  char delimiter = ',';
  char multi_value_separator = '|';
};

/// Loads a headed CSV. Entity attributes are taken from the first row that
/// mentions the entity; missing timestamps fall back to row order.
inline InteractionLog load_csv(const std::string& path, const CsvSchema& schema) {
  auto in = detail::open_or_throw(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": missing header row");
  const std::string delim(1, schema.delimiter);
  const auto header = detail::split_on(detail::trim_cr(line), delim);
  std::unordered_map<std::string, std::size_t> column;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!column.emplace(std::string(header[c]), c).second) {
      throw DataError(path + ": duplicate header column '" + std::string(header[c]) + "'");
    }
  }
  auto col = [&](const std::string& name) {
    auto it = column.find(name);
    if (it == column.end()) throw DataError(path + ": unknown column '" + name + "'");
    return it->second;
  };
  const std::size_t c_user = col(schema.user_id), c_item = col(schema.item_id), c_label = col(schema.label);
  const std::optional<std::size_t> c_ts =
      schema.timestamp ? std::optional<std::size_t>(col(*schema.timestamp)) : std::nullopt;
  std::vector<std::size_t> c_uattr, c_iattr;
  InteractionLog log;
  for (const auto& a : schema.user_attrs) {
    c_uattr.push_back(col(a));
    log.user_fields.push_back({a, {}, {}});
  }
  for (const auto& a : schema.item_attrs) {
    c_iattr.push_back(col(a));
    log.item_fields.push_back({a, {}, {}});
  }

  auto fill = [&](std::vector<AttributeField>& fields, const std::vector<std::size_t>& cols,
                  const std::vector<std::string_view>& cells, std::size_t entity) {
    for (std::size_t k = 0; k < fields.size(); ++k) {
      fields[k].values.resize(std::max(fields[k].values.size(), entity + 1));
      const std::string_view cell = cells[cols[k]];
      if (cell.empty()) continue;
      for (std::string_view v : detail::split_on(cell, std::string_view(&schema.multi_value_separator, 1))) {
        if (!v.empty()) detail::add_value(fields[k], entity, std::string(v));
      }
    }
  };

  std::int64_t row = 0;
  for (std::size_t no = 2; std::getline(in, line); ++no) {
    const std::string_view l = detail::trim_cr(line);
    if (l.empty()) continue;
    const auto cells = detail::split_on(l, delim);
    if (cells.size() != header.size()) {
      detail::malformed(path, no, "expected " + std::to_string(header.size()) + " columns, got " +
                                      std::to_string(cells.size()));
    }
    const std::string_view label = cells[c_label];
    if (label != "0" && label != "1") {
      detail::malformed(path, no, "non-binary label '" + std::string(label) + "'");
    }
    std::int64_t ts = row;
    if (c_ts && !detail::parse_number(cells[*c_ts], ts)) detail::malformed(path, no, "bad timestamp");
    ++row;

    const std::size_t users_before = log.users.size(), items_before = log.items.size();
    const std::size_t u = log.users.encode(std::string(cells[c_user]));
    const std::size_t i = log.items.encode(std::string(cells[c_item]));
    if (u == users_before) fill(log.user_fields, c_uattr, cells, u);
    if (i == items_before) fill(log.item_fields, c_iattr, cells, i);
    log.records.push_back({u, i, static_cast<std::uint8_t>(label == "1" ? 1 : 0), ts});
  }
  for (auto& f : log.user_fields) f.values.resize(log.users.size());
  for (auto& f : log.item_fields) f.values.resize(log.items.size());
  log.validate();
  return log;
}

}  // namespace cometa::data
