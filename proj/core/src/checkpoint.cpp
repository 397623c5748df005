#include "dcat/checkpoint.hpp"

#include <cstring>

#include "dcat/binio.hpp"
#include "dcat/errors.hpp"

namespace dcat::ad {

namespace {
constexpr char kMagic[8] = {'D', 'C', 'A', 'T', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;
}  // namespace

void write_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
  BinWriter w(path);
  w.bytes(kMagic, 8);
  w.u32(kVersion);
  w.u64(entries.size());
  for (const auto& e : entries) {
    w.str(e.name);
    w.u32(static_cast<uint32_t>(e.tensor.rank()));
    for (int d : e.tensor.shape()) w.i64(d);
    w.f64_array(e.tensor.data(), static_cast<size_t>(e.tensor.numel()));
  }
  if (!w.good()) throw UsageError("short write: " + path);
}

std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  BinReader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw UsageError("not a checkpoint file: " + path);
  const uint32_t version = r.u32();
  if (version != kVersion) {
    throw UsageError("unsupported checkpoint version " + std::to_string(version));
  }
  const uint64_t count = r.u64();
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.str();
    const uint32_t rank = r.u32();
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(r.i64());
    const int64_t n = shape_numel(shape);
    std::vector<double> data(static_cast<size_t>(n));
    for (auto& v : data) v = r.f64();
    e.tensor = Tensor(std::move(shape), std::move(data));
    entries.push_back(std::move(e));
  }
  return entries;
}

void save_params(const std::string& path, const ParamStore& params,
                 const std::vector<CheckpointEntry>& extra) {
  std::vector<CheckpointEntry> entries;
  entries.reserve(params.size() + extra.size());
  for (int i = 0; i < params.size(); ++i) {
    entries.push_back({params.name(i), params.value(i)});
  }
  for (const auto& e : extra) entries.push_back(e);
  write_checkpoint(path, entries);
}

std::vector<CheckpointEntry> load_params(const std::string& path, ParamStore& params) {
  std::vector<CheckpointEntry> rest;
  std::vector<bool> loaded(static_cast<size_t>(params.size()), false);
  for (auto& e : read_checkpoint(path)) {
    if (params.has(e.name)) {
      const int idx = params.index(e.name);
      Tensor& dst = params.value(idx);
      if (!dst.same_shape(e.tensor)) {
        throw UsageError("checkpoint shape mismatch for " + e.name + ": file " +
                         e.tensor.shape_str() + " vs store " + dst.shape_str());
      }
      dst = std::move(e.tensor);
      loaded[static_cast<size_t>(idx)] = true;
    } else {
      rest.push_back(std::move(e));
    }
  }
  for (int i = 0; i < params.size(); ++i) {
    if (!loaded[static_cast<size_t>(i)]) {
      throw UsageError("checkpoint " + path + " is missing parameter " + params.name(i));
    }
  }
  return rest;
}

}  // namespace dcat::ad
