#pragma once

#include <string>
#include <vector>

#include "dcat/autodiff.hpp"
#include "dcat/tensor.hpp"

namespace dcat::ad {

// Parameter checkpoint container: named fp64 tensors, little-endian, with a
// format-version header. Layout (all little-endian):
//   magic   8 bytes  "DCATCKPT"
//   version u32      currently 1
//   count   u64      number of entries
//   entry   repeated: name(u32 len + bytes), rank u32, dims i64[rank],
//           payload f64[numel]
struct CheckpointEntry {
  std::string name;
  Tensor tensor;
};

void write_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::string& path);

// Saves all parameters plus optional extra entries (metadata, optimizer
// state). Extra names must not collide with parameter names.
void save_params(const std::string& path, const ParamStore& params,
                 const std::vector<CheckpointEntry>& extra = {});

// Loads parameter values by name into an existing store (shape-checked).
// Entries absent from the store are returned (metadata and the like).
std::vector<CheckpointEntry> load_params(const std::string& path, ParamStore& params);

}  // namespace dcat::ad
