#pragma once

#include <string>

#include "pivae/dataset.hpp"

namespace pivae {

// JSON-lines dataset file: one record per function draw,
//   {"id": int, "locations": [[f64; D]], "values": [f64],
//    "channels": {"integral": [f64]}}
// with the channels member present only when the dataset carries the
// integral. Doubles are written in round-trippable form so a write/read
// cycle is lossless.
void write_dataset_jsonl(const PriorDataset& dataset, const std::string& path);

// Strict reader: unknown keys, ragged records, or inconsistent dimensions
// raise IoError naming the offending line.
PriorDataset read_dataset_jsonl(const std::string& path);

}  // namespace pivae
