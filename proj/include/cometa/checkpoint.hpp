#pragma once

// Binary container for model tensors.
//
//   magic    8 bytes  "CMTACKPT"
//   version  u32
//   count    u32      number of sections
//   section  tag[4], u32 label length, label bytes, u64 text length, text bytes,
//            u32 tensor count, then per tensor:
//            u32 name length, name bytes, u64 rows, u64 cols, rows*cols f64
//
// Integers and doubles are written in host byte order; files are meant to be
// read back on the machine that wrote them.

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cometa/error.hpp"
#include "cometa/model.hpp"
#include "cometa/seg.hpp"
#include "cometa/tensor.hpp"

namespace cometa::io {

inline constexpr std::string_view kMagic = "CMTACKPT";
inline constexpr std::uint32_t kVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Section {
  std::string tag;    // exactly four characters
  std::string label;  // distinguishes sections sharing a tag
  std::string text;   // free-form metadata, JSON by convention
  std::vector<NamedTensor> tensors;
};

struct Container {
  std::vector<Section> sections;

  const Section* find(std::string_view tag, std::string_view label = {}) const {
    for (const Section& s : sections)
      if (s.tag == tag && s.label == label) return &s;
    return nullptr;
  }
  const Section& at(std::string_view tag, std::string_view label = {}) const {
    if (const Section* s = find(tag, label)) return *s;
    throw DataError("checkpoint has no section " + std::string(tag) + " '" + std::string(label) + "'");
  }
};

namespace detail {

template <typename T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void put_string32(std::string& out, std::string_view s) {
  put(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)).data(), sizeof(T));
    return v;
  }
  std::string string32() { return std::string(take(get<std::uint32_t>())); }
  std::string string64() { return std::string(take(get<std::uint64_t>())); }
  std::string_view take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
    const std::string_view out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize(const Container& c) {
  std::string out(kMagic);
  detail::put(out, kVersion);
  detail::put(out, static_cast<std::uint32_t>(c.sections.size()));
  for (const Section& s : c.sections) {
    if (s.tag.size() != 4) throw Error("section tag must be four characters: '" + s.tag + "'");
    out.append(s.tag);
    detail::put_string32(out, s.label);
    detail::put(out, static_cast<std::uint64_t>(s.text.size()));
    out.append(s.text);
    detail::put(out, static_cast<std::uint32_t>(s.tensors.size()));
    for (const NamedTensor& t : s.tensors) {
      detail::put_string32(out, t.name);
      detail::put(out, static_cast<std::uint64_t>(t.value.rows()));
      detail::put(out, static_cast<std::uint64_t>(t.value.cols()));
      out.append(reinterpret_cast<const char*>(t.value.data()), t.value.size() * sizeof(double));
    }
  }
  return out;
}

inline Container parse(std::string_view bytes) {
  detail::Reader in(bytes);
  if (in.take(kMagic.size()) != kMagic) throw DataError("not a checkpoint file (bad magic)");
  const auto version = in.get<std::uint32_t>();
  if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  Container c;
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    Section s;
    s.tag = std::string(in.take(4));
    s.label = in.string32();
    s.text = in.string64();
    const auto n = in.get<std::uint32_t>();
    for (std::uint32_t t = 0; t < n; ++t) {
      NamedTensor nt;
      nt.name = in.string32();
      const auto rows = in.get<std::uint64_t>();
      const auto cols = in.get<std::uint64_t>();
      if (cols != 0 && rows > (bytes.size() / sizeof(double)) / cols) throw DataError("checkpoint tensor too large");
      const std::string_view raw = in.take(rows * cols * sizeof(double));
      std::vector<double> values(rows * cols);
      std::memcpy(values.data(), raw.data(), raw.size());
      nt.value = Tensor(rows, cols, std::move(values));
      s.tensors.push_back(std::move(nt));
    }
    c.sections.push_back(std::move(s));
  }
  if (!in.done()) throw DataError("trailing bytes after checkpoint sections");
  return c;
}

inline void save(const std::filesystem::path& path, const Container& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  const std::string bytes = serialize(c);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

inline Container load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse(bytes);
}

inline Section model_section(const model::ModelParams& p) {
  Section s{"MODL", "", nlohmann::json(p.schema).dump(), {}};
  const auto names = p.names();
  const auto tensors = p.tensors();
  for (std::size_t k = 0; k < names.size(); ++k) s.tensors.push_back({names[k], *tensors[k]});
  return s;
}

inline model::ModelParams model_from(const Section& s) {
  if (s.tag != "MODL") throw DataError("section " + s.tag + " does not hold a model");
  model::ModelParams p;
  p.schema = nlohmann::json::parse(s.text).get<model::FeatureSchema>();
  p.schema.validate();
  p.user_attr.resize(p.schema.user_fields.size());
  p.item_attr.resize(p.schema.item_fields.size());
  p.hidden_w.resize(p.schema.hidden.size());
  p.hidden_b.resize(p.schema.hidden.size());
  const auto names = p.names();
  const auto slots = p.tensors();
  if (s.tensors.size() != names.size()) throw DataError("model section has the wrong number of tensors");
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (s.tensors[k].name != names[k]) {
      throw DataError("model tensor " + std::to_string(k) + " is '" + s.tensors[k].name + "', expected '" +
                      names[k] + "'");
    }
    *slots[k] = s.tensors[k].value;
  }
  const model::ModelParams fresh = model::ModelParams::init(p.schema, 0);
  const auto expected = fresh.tensors();
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (slots[k]->shape() != expected[k]->shape()) {
      throw DataError("model tensor '" + names[k] + "' has shape " + slots[k]->shape().str() + ", schema implies " +
                      expected[k]->shape().str());
    }
  }
  return p;
}

/// One trained shift generator; `meta` goes into the section text.
inline Section seg_section(const std::string& label, const seg::SegParams& p, const nlohmann::json& meta) {
  Section s{"SEGP", label, meta.dump(), {}};
  const auto names = p.names();
  const auto tensors = p.tensors();
  for (std::size_t k = 0; k < names.size(); ++k) s.tensors.push_back({names[k], *tensors[k]});
  return s;
}

inline seg::SegParams seg_from(const Section& s) {
  if (s.tag != "SEGP") throw DataError("section " + s.tag + " does not hold a shift generator");
  if (s.tensors.size() < 4 || s.tensors.size() % 2 != 0) throw DataError("generator section has a malformed tensor list");
  seg::SegParams p;
  p.w_u = s.tensors[0].value;
  p.w_f = s.tensors[1].value;
  for (std::size_t k = 2; k < s.tensors.size(); k += 2) {
    p.gen_w.push_back(s.tensors[k].value);
    p.gen_b.push_back(s.tensors[k + 1].value);
  }
  const auto names = p.names();
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (s.tensors[k].name != names[k]) {
      throw DataError("generator tensor " + std::to_string(k) + " is '" + s.tensors[k].name + "', expected '" +
                      names[k] + "'");
    }
  }
  const std::size_t d = p.w_u.cols();
  std::size_t in = 2 * d;
  bool ok = p.w_u.rows() == d && p.w_f.cols() == d && d > 0 && p.w_f.rows() % d == 0;
  for (std::size_t k = 0; ok && k < p.gen_w.size(); ++k) {
    ok = p.gen_w[k].rows() == in && p.gen_b[k].rows() == 1 && p.gen_b[k].cols() == p.gen_w[k].cols();
    in = p.gen_w[k].cols();
  }
  if (!ok || in != d) throw DataError("generator tensors have inconsistent shapes");
  return p;
}

}  // namespace cometa::io
