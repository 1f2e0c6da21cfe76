#include "ursct/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>

#include "ursct/errors.hpp"
#include "ursct/image_io.hpp"

namespace fs = std::filesystem;

namespace ursct {

Tensor<float> resize_bilinear(const Tensor<float>& image, std::int64_t h, std::int64_t w) {
    if (image.ndim() != 3) {
        throw DimensionError("resize_bilinear expects [C,H,W], got " + shape_str(image.shape()));
    }
    if (h <= 0 || w <= 0) throw DimensionError("resize_bilinear: target dims must be positive");
    const std::int64_t c = image.dim(0), sh = image.dim(1), sw = image.dim(2);
    if (sh == h && sw == w) return image.clone();

    auto out = Tensor<float>::zeros({c, h, w});
    float* dst = out.mutable_data().data();
    const float* src = image.data().data();
    const double sy = static_cast<double>(sh) / static_cast<double>(h);
    const double sx = static_cast<double>(sw) / static_cast<double>(w);
    for (std::int64_t y = 0; y < h; ++y) {
        double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
        fy = std::max(0.0, std::min(fy, static_cast<double>(sh - 1)));
        const auto y0 = static_cast<std::int64_t>(fy);
        const std::int64_t y1 = std::min(y0 + 1, sh - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::int64_t x = 0; x < w; ++x) {
            double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            fx = std::max(0.0, std::min(fx, static_cast<double>(sw - 1)));
            const auto x0 = static_cast<std::int64_t>(fx);
            const std::int64_t x1 = std::min(x0 + 1, sw - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const float* p = src + ch * sh * sw;
                const double top = (1 - wx) * p[y0 * sw + x0] + wx * p[y0 * sw + x1];
                const double bot = (1 - wx) * p[y1 * sw + x0] + wx * p[y1 * sw + x1];
                dst[(ch * h + y) * w + x] = static_cast<float>((1 - wy) * top + wy * bot);
            }
        }
    }
    return out;
}

Tensor<float> hflip(const Tensor<float>& image) {
    if (image.ndim() != 3) {
        throw DimensionError("hflip expects [C,H,W], got " + shape_str(image.shape()));
    }
    auto out = image.clone();
    float* d = out.mutable_data().data();
    const std::int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t y = 0; y < h; ++y) {
            float* row = d + (ch * h + y) * w;
            std::reverse(row, row + w);
        }
    }
    return out;
}

namespace {

bool image_ext(const fs::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return e == ".png" || e == ".jpg" || e == ".jpeg";
}

// stem -> path, lexicographic by stem; duplicate stems are a data error.
std::map<std::string, std::string> scan_dir(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: '" + dir + "'");
    std::map<std::string, std::string> by_stem;
    std::vector<std::string> dups;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file() || !image_ext(e.path())) continue;
        auto stem = e.path().stem().string();
        if (!by_stem.emplace(stem, e.path().string()).second) dups.push_back(stem);
    }
    if (!dups.empty()) {
        std::sort(dups.begin(), dups.end());
        std::string list;
        for (const auto& d : dups) list += (list.empty() ? "" : ", ") + d;
        throw DataError("duplicate image stems in '" + dir + "': " + list);
    }
    return by_stem;
}

}  // namespace

DatasetIndex scan_paired_dataset(const std::string& raw_dir,
                                 const std::optional<std::string>& ref_dir, std::int64_t h,
                                 std::int64_t w, bool require_reference) {
    auto raws = scan_dir(raw_dir);
    if (raws.empty()) throw DataError("no images found in '" + raw_dir + "'");

    std::map<std::string, std::string> refs;
    if (ref_dir) refs = scan_dir(*ref_dir);
    if (require_reference && !ref_dir) {
        throw DataError("reference directory required but not given");
    }

    DatasetIndex index;
    index.target_h = h;
    index.target_w = w;
    std::vector<std::string> missing;
    for (const auto& [stem, path] : raws) {
        DatasetEntry entry{path, std::nullopt, stem};
        auto it = refs.find(stem);
        if (it != refs.end()) {
            entry.ref_path = it->second;
        } else if (require_reference) {
            missing.push_back(stem);
        }
        index.entries.push_back(std::move(entry));
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw DataError("raw images without a reference: " + list);
    }
    return index;
}

ImagePair load_pair(const DatasetEntry& entry, std::int64_t h, std::int64_t w) {
    ImagePair pair;
    pair.id = entry.id;
    pair.raw = resize_bilinear(load_image(entry.raw_path), h, w);
    if (entry.ref_path) pair.reference = resize_bilinear(load_image(*entry.ref_path), h, w);
    return pair;
}

std::vector<ImagePair> load_all(const DatasetIndex& index) {
    std::vector<ImagePair> pairs;
    pairs.reserve(index.entries.size());
    for (const auto& e : index.entries) pairs.push_back(load_pair(e, index.target_h, index.target_w));
    return pairs;
}

std::vector<Batch> make_batches(const std::vector<ImagePair>& pairs, std::int64_t batch_size,
                                bool shuffle, std::uint64_t seed) {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (pairs.empty()) return {};
    const std::int64_t h = pairs[0].raw.dim(1), w = pairs[0].raw.dim(2);

    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    if (shuffle) {
        Rng rng(seed);
        rng.shuffle(order);
    }

    bool all_refs = true;
    for (const auto& p : pairs) all_refs = all_refs && p.reference.has_value();

    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
        const auto n = std::min(static_cast<std::size_t>(batch_size), order.size() - start);
        const auto b = static_cast<std::int64_t>(n);
        Batch batch;
        batch.raw = Tensor<float>::zeros({b, 3, h, w});
        if (all_refs) batch.reference = Tensor<float>::zeros({b, 3, h, w});
        const std::int64_t stride = 3 * h * w;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& p = pairs[order[start + i]];
            if (p.raw.dim(1) != h || p.raw.dim(2) != w) {
                throw DimensionError("make_batches: mixed image sizes in dataset");
            }
            const float* rs = p.raw.data().data();
            std::copy(rs, rs + stride,
                      batch.raw.mutable_data().data() + static_cast<std::int64_t>(i) * stride);
            if (all_refs) {
                const float* fs = p.reference->data().data();
                std::copy(fs, fs + stride,
                          batch.reference.mutable_data().data() +
                              static_cast<std::int64_t>(i) * stride);
            }
            batch.ids.push_back(p.id);
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

}  // namespace ursct
