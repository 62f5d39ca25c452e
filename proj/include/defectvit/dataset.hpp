#pragma once

// On-disk dataset: <root>/<split>/images/<id>.png plus
// <root>/<split>/annotations.json.

#include <filesystem>
#include <string>
#include <vector>

#include "defectvit/synth.hpp"

namespace defectvit {

struct DatasetSplit {
  std::vector<std::string> classes;  // background excluded
  std::vector<SampleRecord> records;
};

// Sample ids of the form "<index>_<seed>" carry the generator seed; any
// other id loads with seed 0.
std::uint64_t seed_from_id(const std::string& id);

// Writes images and annotations.json for one split. Every box class must
// index `classes`.
void write_split(const std::filesystem::path& root, const std::string& split, const std::vector<std::string>& classes,
                 const std::vector<SampleRecord>& records);

// A missing split directory or annotations file gives an empty split.
// Throws ParseError (path and field) on malformed JSON and ValidationError
// on classes outside the class list, boxes outside the image, or a size
// mismatch with the PNG. When `expected_classes` is non-empty the file's
// class list must equal it.
DatasetSplit load_split(const std::filesystem::path& root, const std::string& split,
                        const std::vector<std::string>& expected_classes = {});

// Splits present under root (directories holding annotations.json).
std::vector<std::string> available_splits(const std::filesystem::path& root);

}  // namespace defectvit
