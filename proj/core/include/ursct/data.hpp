#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ursct/rng.hpp"
#include "ursct/tensor.hpp"

namespace ursct {

// One raw image plus its optional ground-truth reference, both [3,H,W] in [0,1].
struct ImagePair {
    Tensor<float> raw;
    std::optional<Tensor<float>> reference;
    std::string id;  // filename stem
};

struct DatasetEntry {
    std::string raw_path;
    std::optional<std::string> ref_path;
    std::string id;
};

// Stable, lexicographically ordered list of raw/reference path pairs plus the
// target resolution everything is resized to.
struct DatasetIndex {
    std::vector<DatasetEntry> entries;
    std::int64_t target_h = 0;
    std::int64_t target_w = 0;
};

// Bilinear resize with the half-pixel center convention; same-size resize is
// an exact copy.
Tensor<float> resize_bilinear(const Tensor<float>& image, std::int64_t h, std::int64_t w);

// Mirrors the image along the width axis (in-place on a copy).
Tensor<float> hflip(const Tensor<float>& image);

// Scans raw_dir (and ref_dir when given) for *.png/*.jpg/*.jpeg, pairing files
// by identical stem. With require_reference, any raw stem lacking a reference
// is an error; otherwise such entries are kept reference-less.
DatasetIndex scan_paired_dataset(const std::string& raw_dir,
                                 const std::optional<std::string>& ref_dir, std::int64_t h,
                                 std::int64_t w, bool require_reference);

// Loads and resizes one entry of the index.
ImagePair load_pair(const DatasetEntry& entry, std::int64_t h, std::int64_t w);

// Loads and resizes every entry, preserving index order.
std::vector<ImagePair> load_all(const DatasetIndex& index);

// A stacked minibatch; reference is defined only when every member pair has one.
struct Batch {
    Tensor<float> raw;        // [B,3,H,W]
    Tensor<float> reference;  // [B,3,H,W] or undefined
    std::vector<std::string> ids;
};

// Splits the pairs into batches of batch_size (final partial batch kept).
// shuffle=true permutes the order with a Fisher-Yates driven by `seed`;
// shuffle=false keeps the incoming (lexicographic) order.
std::vector<Batch> make_batches(const std::vector<ImagePair>& pairs, std::int64_t batch_size,
                                bool shuffle, std::uint64_t seed);

}  // namespace ursct
