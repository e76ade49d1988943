#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "iil/error.hpp"
#include "iil/ii_layer.hpp"
#include "iil/network.hpp"
#include "iil/tensor.hpp"
#include "json.hpp"

namespace iil {

// Checkpoint container, all integers little-endian (see docs/checkpoint_format.md):
//
//   "IILCKPT1"            8 bytes
//   version               u32 (= 1)
//   metadata length       u64, then that many bytes of UTF-8 JSON
//   tensor count          u32
//   per tensor: name length u32, name bytes, rank u32, rank x u64 extents,
//               product(extents) x f64 (IEEE-754 binary64, little-endian)

inline constexpr char kCheckpointMagic[8] = {'I', 'I', 'L', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensors {
  nlohmann::json metadata;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

namespace detail {

inline void put_le(std::ostream& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

class LeReader {
 public:
  LeReader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  std::uint64_t get(int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
      const int c = in_.get();
      if (c == EOF) throw FormatError(path_ + ": truncated checkpoint at byte offset " + std::to_string(offset_));
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
      ++offset_;
    }
    return v;
  }

  std::string bytes(std::size_t n) {
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw FormatError(path_ + ": truncated checkpoint at byte offset " + std::to_string(offset_));
    offset_ += n;
    return s;
  }

  [[nodiscard]] std::size_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::string path_;
  std::size_t offset_ = 0;
};

}  // namespace detail

inline void write_container(const std::string& path, const NamedTensors& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, 8);
  detail::put_le(out, kCheckpointVersion, 4);
  const std::string meta = contents.metadata.dump();
  detail::put_le(out, meta.size(), 8);
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  detail::put_le(out, contents.tensors.size(), 4);
  for (const auto& [name, t] : contents.tensors) {
    detail::put_le(out, name.size(), 4);
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_le(out, t.rank(), 4);
    for (std::size_t d : t.shape()) detail::put_le(out, d, 8);
    for (double v : t.data()) detail::put_le(out, std::bit_cast<std::uint64_t>(v), 8);
  }
}

inline NamedTensors read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  detail::LeReader r(in, path);
  if (r.bytes(8) != std::string(kCheckpointMagic, 8)) throw FormatError(path + ": bad checkpoint magic at byte offset 0");
  if (const auto v = r.get(4); v != kCheckpointVersion)
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(v));
  NamedTensors out;
  const auto meta_len = r.get(8);
  try {
    out.metadata = nlohmann::json::parse(r.bytes(meta_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path + ": bad metadata JSON: " + e.what());
  }
  const auto count = r.get(4);
  for (std::uint64_t t = 0; t < count; ++t) {
    std::string name = r.bytes(r.get(4));
    const auto rank = r.get(4);
    if (rank > Tensor::kMaxRank) throw FormatError(path + ": tensor rank above 5 at byte offset " + std::to_string(r.offset()));
    Shape shape;
    for (std::uint64_t a = 0; a < rank; ++a) shape.push_back(r.get(8));
    std::vector<double> data(shape_product(shape));
    for (double& v : data) v = std::bit_cast<double>(r.get(8));
    out.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

/// Serializes all layer tensors plus the topology; `extra` lands under metadata["config"].
inline void save_model(const std::string& path, Model& model, const nlohmann::json& extra = {}) {
  NamedTensors c;
  c.metadata = {{"format", "iil-model"},
                {"head", model.head == HeadKind::Pooled ? "pooled" : "invariant"},
                {"orientations", model.backbone.lift.num_orientations},
                {"num_classes", model.num_classes},
                {"num_gconv", model.backbone.gconvs.size()},
                {"normalize_head", model.normalize_head},
                {"config", extra}};
  if (model.head == HeadKind::Invariant) {
    model.sync_exponents();
    c.metadata["ii_state"] = ii_state_to_json(model.ii);
  }
  const auto names = model.parameter_names();
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) c.tensors.emplace_back(names[i], *params[i]);
  if (model.normalize_head) {
    c.tensors.emplace_back("head.mean", model.head_stats.mean);
    c.tensors.emplace_back("head.inv_std", model.head_stats.inv_std);
  }
  write_container(path, c);
}

inline Model load_model(const std::string& path) {
  NamedTensors c = read_container(path);
  const auto& meta = c.metadata;
  if (meta.value("format", "") != "iil-model") throw FormatError(path + ": not a model checkpoint");
  std::map<std::string, Tensor> by_name;
  for (auto& [n, t] : c.tensors) by_name.emplace(n, std::move(t));
  auto get = [&](const std::string& n) {
    auto it = by_name.find(n);
    if (it == by_name.end()) throw FormatError(path + ": missing tensor " + n);
    return it->second;
  };
  Model m;
  m.head = meta.at("head").get<std::string>() == "pooled" ? HeadKind::Pooled : HeadKind::Invariant;
  m.num_classes = meta.at("num_classes").get<int>();
  m.backbone.lift = {get("lift.kernels"), get("lift.bias"), meta.at("orientations").get<int>(), 1};
  const auto ng = meta.at("num_gconv").get<std::size_t>();
  for (std::size_t i = 0; i < ng; ++i)
    m.backbone.gconvs.push_back({get("gconv" + std::to_string(i) + ".kernels"), get("gconv" + std::to_string(i) + ".bias"), 1});
  m.dense = {get("dense.weights"), get("dense.bias")};
  m.normalize_head = meta.value("normalize_head", false);
  if (m.normalize_head) m.head_stats = {get("head.mean"), get("head.inv_std")};
  if (m.head == HeadKind::Invariant) {
    m.ii = ii_state_from_json(meta.at("ii_state"));
    m.exponents = get("ii.exponents");
    m.sync_exponents();
  }
  return m;
}

}  // namespace iil
