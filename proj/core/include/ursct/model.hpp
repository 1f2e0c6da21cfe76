#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ursct/ops.hpp"
#include "ursct/rng.hpp"

namespace ursct {

// How Q, K, V are produced inside windowed attention:
//   origin     — single linear layer C -> 3C (plain Swin block)
//   conv_type1 — 1x1 conv C -> 3C followed by a 3x3 depthwise conv (default)
//   conv_type2 — linear C -> 3C plus a parallel 3x3 depthwise branch on V
//                added to the attention output before the final projection
enum class Variant { origin, conv_type1, conv_type2 };

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

struct ModelConfig {
    std::int64_t image_h = 256;
    std::int64_t image_w = 256;
    std::int64_t patch_size = 2;
    std::int64_t embed_dim = 32;
    std::int64_t window = 8;
    std::int64_t layer_depth = 8;  // blocks per stage; consecutive (plain, shifted) pairs
    std::int64_t heads = 8;
    std::int64_t mlp_ratio = 4;
    double skip_drop_ratio = 0.1;
    // Attention logit divisor. Defaults to sqrt(stage channels); a constant
    // (e.g. 8) may be forced via config.
    std::optional<double> attn_scale;
    Variant variant = Variant::conv_type1;
    // Shifted blocks normally mask cross-region attention everywhere; this
    // switch restricts masking to decoder stages.
    bool mask_decoder_only = false;

    // Throws ConfigError when the architecture constraints are violated.
    void validate() const;
};

// --- window machinery, exposed for direct testing ----------------------------

// [B,h,w,C] -> [B*N, T*T, C] with N = (h/T)*(w/T); row-major tiles.
template <typename T>
Tensor<T> window_partition(const Tensor<T>& z, std::int64_t win);

// Exact inverse of window_partition.
template <typename T>
Tensor<T> window_merge(const Tensor<T>& y, std::int64_t batch, std::int64_t h, std::int64_t w,
                       std::int64_t win);

// Region labels on the post-shift grid: 3x3 bands of row/column origin.
std::vector<int> shift_region_ids(std::int64_t h, std::int64_t w, std::int64_t win,
                                  std::int64_t shift);

// Additive attention mask [N, T*T, T*T]: 0 within a pre-shift region,
// -1e4 across regions. s == 0 gives an all-zero mask.
template <typename T>
Tensor<T> build_attn_mask(std::int64_t h, std::int64_t w, std::int64_t win, std::int64_t shift);

// Flat lookup indices, length T^4: index(i,j) = (drow+T-1)*(2T-1) + (dcol+T-1)
// with drow/dcol the coordinate difference of tokens i and j inside a window.
std::vector<std::int64_t> relative_bias_index(std::int64_t win);

// table [(2T-1)^2, U] -> bias [U, T*T, T*T], differentiable through the table.
template <typename T>
Tensor<T> relative_position_bias(const Tensor<T>& table, std::int64_t win);

// Scaled dot-product attention over windows. q,k,v: [Nw, U, T*T, cu];
// bias: [U, T*T, T*T]; mask (optional): [N, T*T, T*T] with Nw = B*N.
// Returns head-merged [Nw, T*T, U*cu]; the output projection lives outside.
template <typename T>
Tensor<T> window_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           const Tensor<T>& bias, const std::optional<Tensor<T>>& mask,
                           T scale);

// --- the network --------------------------------------------------------------

template <typename T>
class URSCTModel {
public:
    URSCTModel(const ModelConfig& cfg, Rng& init_rng);

    const ModelConfig& config() const { return cfg_; }

    // Training forward keeps the output unclamped and draws skip-path dropout
    // from `rng`; inference clamps to [0,1] and needs no RNG.
    Tensor<T> forward(const Tensor<T>& image, bool training = false, Rng* rng = nullptr) const;

    // Stable, construction-ordered parameter registry.
    const std::vector<std::pair<std::string, Tensor<T>>>& params() const { return params_; }
    Tensor<T>& param(const std::string& name);
    const Tensor<T>& param(const std::string& name) const;
    std::int64_t num_scalars() const;

    void zero_grads();

    // One RSCT block: LN -> (shift) -> windows -> attention -> merge ->
    // (unshift) -> residual, then LN -> MLP -> residual. z is [B,h,w,c] and
    // prefix names the block's parameter group (e.g. "enc0.b1").
    Tensor<T> run_block(const std::string& prefix, const Tensor<T>& z, std::int64_t c,
                        bool shifted, bool masked) const;
    Tensor<T> run_stage(const std::string& prefix, Tensor<T> z, std::int64_t c, bool masked) const;

private:
    Tensor<T> add_param(const std::string& name, Tensor<T> t);
    Tensor<T> make_weight(const std::string& name, Shape shape);
    Tensor<T> make_zeros(const std::string& name, Shape shape);
    Tensor<T> make_ones(const std::string& name, Shape shape);
    void build_block_params(const std::string& prefix, std::int64_t c);
    Tensor<T> linear(const Tensor<T>& x, const std::string& wname,
                     const std::optional<std::string>& bname) const;
    Tensor<T> downsample(const Tensor<T>& z, const std::string& wname) const;
    Tensor<T> upsample(const Tensor<T>& z, const std::string& wname, bool final_stage) const;
    Tensor<T> skip_fuse(const Tensor<T>& dec, const Tensor<T>& enc, const std::string& prefix,
                        bool training, Rng* rng) const;
    const Tensor<T>& mask_for(std::int64_t h, std::int64_t w) const;

    ModelConfig cfg_;
    Rng* init_rng_ = nullptr;  // only valid during construction
    std::vector<std::pair<std::string, Tensor<T>>> params_;
    std::map<std::string, std::size_t> index_;
    mutable std::map<std::pair<std::int64_t, std::int64_t>, Tensor<T>> mask_cache_;
};

}  // namespace ursct
