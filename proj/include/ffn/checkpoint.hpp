#pragma once

// Checkpoint container: one file holding a JSON metadata record and a list
// of named float32 arrays.
//
//   bytes 0..7    magic "FFNCKPT1"
//   bytes 8..15   little-endian uint64 header length L
//   next L bytes  JSON header {"metadata": {...}, "arrays": [{name, shape,
//                 trainable, branch}, ...]}
//   remainder     raw little-endian float32 payloads, in header order
//
// Array names: block{i}.shared.W, block{i}.branch{b}.phi,
// block{i}.branch{b}.{gamma,beta,mu,var}, classifier.W, classifier.b.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace ffn {

struct ArrayRecord {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
  bool trainable = true;
  int branch = -1;  // -1: shared across branches
};

struct Checkpoint {
  nlohmann::json metadata;
  std::vector<ArrayRecord> arrays;

  const ArrayRecord* find(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a over the serialized bytes; used to compare runs for determinism.
std::string checkpoint_digest(const std::filesystem::path& path);

}  // namespace ffn
