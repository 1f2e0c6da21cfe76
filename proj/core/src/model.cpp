#include "ursct/model.hpp"

#include <cmath>

namespace ursct {

Variant variant_from_string(const std::string& s) {
    if (s == "origin") return Variant::origin;
    if (s == "conv_type1") return Variant::conv_type1;
    if (s == "conv_type2") return Variant::conv_type2;
    throw ConfigError("unknown attention variant '" + s +
                      "' (expected origin|conv_type1|conv_type2)");
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::origin: return "origin";
        case Variant::conv_type1: return "conv_type1";
        case Variant::conv_type2: return "conv_type2";
    }
    return "?";
}

void ModelConfig::validate() const {
    if (patch_size < 1 || embed_dim < 1 || window < 1 || heads < 1 || mlp_ratio < 1) {
        throw ConfigError("model: patch_size/embed_dim/window/heads/mlp_ratio must be positive");
    }
    if (layer_depth < 2 || layer_depth % 2 != 0) {
        throw ConfigError("model: layer_depth must be a positive even number, got " +
                          std::to_string(layer_depth));
    }
    if (embed_dim % heads != 0) {
        throw ConfigError("model: embed_dim " + std::to_string(embed_dim) +
                          " not divisible by heads " + std::to_string(heads));
    }
    const std::int64_t unit = 8 * patch_size * window;
    for (auto [name, v] : {std::pair{"image_h", image_h}, std::pair{"image_w", image_w}}) {
        if (v < unit || v % unit != 0) {
            throw ConfigError(std::string("model: ") + name + " = " + std::to_string(v) +
                              " must be a positive multiple of 8*patch_size*window = " +
                              std::to_string(unit));
        }
    }
    if (skip_drop_ratio < 0.0 || skip_drop_ratio > 1.0) {
        throw ConfigError("model: skip_drop_ratio must lie in [0,1]");
    }
    if (attn_scale && *attn_scale <= 0.0) throw ConfigError("model: attn_scale must be positive");
}

// --- window machinery ----------------------------------------------------------

template <typename T>
Tensor<T> window_partition(const Tensor<T>& z, std::int64_t win) {
    if (z.ndim() != 4) throw DimensionError("window_partition: expected [B,h,w,C]");
    const std::int64_t B = z.dim(0), h = z.dim(1), w = z.dim(2), C = z.dim(3);
    if (win < 1 || h % win != 0 || w % win != 0) {
        throw DimensionError("window_partition: spatial dims " + std::to_string(h) + "x" +
                             std::to_string(w) + " not divisible by window " + std::to_string(win));
    }
    auto r = reshape(z, {B, h / win, win, w / win, win, C});
    auto p = permute(r, {0, 1, 3, 2, 4, 5});
    return reshape(p, {B * (h / win) * (w / win), win * win, C});
}

template <typename T>
Tensor<T> window_merge(const Tensor<T>& y, std::int64_t batch, std::int64_t h, std::int64_t w,
                       std::int64_t win) {
    if (y.ndim() != 3 || y.dim(1) != win * win) {
        throw DimensionError("window_merge: expected [Nw, T*T, C] windows");
    }
    const std::int64_t n = (h / win) * (w / win);
    if (h % win != 0 || w % win != 0 || y.dim(0) != batch * n) {
        throw DimensionError("window_merge: window count " + std::to_string(y.dim(0)) +
                             " inconsistent with " + std::to_string(h) + "x" + std::to_string(w));
    }
    const std::int64_t C = y.dim(2);
    auto r = reshape(y, {batch, h / win, w / win, win, win, C});
    auto p = permute(r, {0, 1, 3, 2, 4, 5});
    return reshape(p, {batch, h, w, C});
}

std::vector<int> shift_region_ids(std::int64_t h, std::int64_t w, std::int64_t win,
                                  std::int64_t shift) {
    // After rolling by -s the map splits into 3 row bands x 3 column bands of
    // distinct pre-shift origin: [0, n-T), [n-T, n-s), [n-s, n).
    auto band = [&](std::int64_t x, std::int64_t n) {
        if (x < n - win) return 0;
        if (x < n - shift) return 1;
        return 2;
    };
    std::vector<int> ids(static_cast<std::size_t>(h * w));
    for (std::int64_t r = 0; r < h; ++r) {
        for (std::int64_t c = 0; c < w; ++c) {
            ids[static_cast<std::size_t>(r * w + c)] = 3 * band(r, h) + band(c, w);
        }
    }
    return ids;
}

template <typename T>
Tensor<T> build_attn_mask(std::int64_t h, std::int64_t w, std::int64_t win, std::int64_t shift) {
    if (h % win != 0 || w % win != 0) throw DimensionError("build_attn_mask: dims not divisible by window");
    const std::int64_t n = (h / win) * (w / win);
    const std::int64_t t2 = win * win;
    auto mask = Tensor<T>::zeros({n, t2, t2});
    if (shift == 0) return mask;
    const auto ids = shift_region_ids(h, w, win, shift);
    // Region id of every token, grouped per window in partition order.
    std::vector<int> wid(static_cast<std::size_t>(n * t2));
    const std::int64_t wcols = w / win;
    for (std::int64_t r = 0; r < h; ++r) {
        for (std::int64_t c = 0; c < w; ++c) {
            const std::int64_t widx = (r / win) * wcols + (c / win);
            const std::int64_t tok = (r % win) * win + (c % win);
            wid[static_cast<std::size_t>(widx * t2 + tok)] = ids[static_cast<std::size_t>(r * w + c)];
        }
    }
    auto* m = mask.payload()->values.data();
    for (std::int64_t wi = 0; wi < n; ++wi) {
        const int* base = wid.data() + wi * t2;
        for (std::int64_t i = 0; i < t2; ++i) {
            for (std::int64_t j = 0; j < t2; ++j) {
                if (base[i] != base[j]) m[(wi * t2 + i) * t2 + j] = T(-1e4);
            }
        }
    }
    return mask;
}

std::vector<std::int64_t> relative_bias_index(std::int64_t win) {
    const std::int64_t t2 = win * win;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(t2 * t2));
    for (std::int64_t i = 0; i < t2; ++i) {
        for (std::int64_t j = 0; j < t2; ++j) {
            const std::int64_t dr = i / win - j / win + win - 1;
            const std::int64_t dc = i % win - j % win + win - 1;
            idx[static_cast<std::size_t>(i * t2 + j)] = dr * (2 * win - 1) + dc;
        }
    }
    return idx;
}

template <typename T>
Tensor<T> relative_position_bias(const Tensor<T>& table, std::int64_t win) {
    const std::int64_t t2 = win * win;
    if (table.ndim() != 2 || table.dim(0) != (2 * win - 1) * (2 * win - 1)) {
        throw DimensionError("relative_position_bias: table must be [(2T-1)^2, U]");
    }
    const std::int64_t U = table.dim(1);
    auto g = gather_rows(table, relative_bias_index(win));  // [T^4, U]
    auto r = reshape(g, {t2, t2, U});
    return permute(r, {2, 0, 1});
}

template <typename T>
Tensor<T> window_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           const Tensor<T>& bias, const std::optional<Tensor<T>>& mask, T scale) {
    if (q.ndim() != 4 || k.ndim() != 4 || v.ndim() != 4) {
        throw DimensionError("window_attention: q,k,v must be [Nw,U,T*T,cu]");
    }
    const std::int64_t nw = q.dim(0), U = q.dim(1), t2 = q.dim(2), cu = q.dim(3);
    if (scale <= T(0)) throw ConfigError("window_attention: scale must be positive");
    auto kt = permute(k, {0, 1, 3, 2});
    auto logits = ursct::scale(matmul(q, kt), T(1) / scale);  // [Nw,U,T2,T2]
    logits = add(logits, bias);
    if (mask) {
        const std::int64_t n = mask->dim(0);
        if (n < 1 || nw % n != 0) {
            throw DimensionError("window_attention: mask window count does not divide batch windows");
        }
        const std::int64_t B = nw / n;
        auto l5 = reshape(logits, {B, n, U, t2, t2});
        auto m4 = reshape(*mask, {n, std::int64_t{1}, t2, t2});
        logits = reshape(add(l5, m4), {nw, U, t2, t2});
    }
    auto a = softmax(logits, -1);
    auto o = matmul(a, v);                       // [Nw,U,T2,cu]
    auto merged = permute(o, {0, 2, 1, 3});      // [Nw,T2,U,cu]
    return reshape(merged, {nw, t2, U * cu});
}

// --- parameter construction -----------------------------------------------------

template <typename T>
Tensor<T> URSCTModel<T>::add_param(const std::string& name, Tensor<T> t) {
    if (index_.count(name)) throw Error("duplicate parameter name " + name);
    t.set_requires_grad(true);
    index_[name] = params_.size();
    params_.emplace_back(name, t);
    return t;
}

template <typename T>
Tensor<T> URSCTModel<T>::make_weight(const std::string& name, Shape shape) {
    return add_param(name, Tensor<T>::trunc_normal(std::move(shape), *init_rng_, T(0.02)));
}

template <typename T>
Tensor<T> URSCTModel<T>::make_zeros(const std::string& name, Shape shape) {
    return add_param(name, Tensor<T>::zeros(std::move(shape)));
}

template <typename T>
Tensor<T> URSCTModel<T>::make_ones(const std::string& name, Shape shape) {
    return add_param(name, Tensor<T>::ones(std::move(shape)));
}

template <typename T>
void URSCTModel<T>::build_block_params(const std::string& prefix, std::int64_t c) {
    const std::int64_t t = cfg_.window;
    const std::int64_t u = cfg_.heads;
    const std::int64_t rc = cfg_.mlp_ratio * c;
    make_ones(prefix + ".ln1.g", {c});
    make_zeros(prefix + ".ln1.b", {c});
    switch (cfg_.variant) {
        case Variant::origin:
            make_weight(prefix + ".qkv.w", {c, 3 * c});
            make_zeros(prefix + ".qkv.b", {3 * c});
            break;
        case Variant::conv_type1:
            make_weight(prefix + ".qkv.cw", {3 * c, c, 1, 1});
            make_zeros(prefix + ".qkv.cb", {3 * c});
            make_weight(prefix + ".qkv.dw", {3 * c, 1, 3, 3});
            make_zeros(prefix + ".qkv.db", {3 * c});
            break;
        case Variant::conv_type2:
            make_weight(prefix + ".qkv.w", {c, 3 * c});
            make_zeros(prefix + ".qkv.b", {3 * c});
            make_weight(prefix + ".qkv.dw", {c, 1, 3, 3});
            make_zeros(prefix + ".qkv.db", {c});
            break;
    }
    make_weight(prefix + ".bias_table", {(2 * t - 1) * (2 * t - 1), u});
    make_weight(prefix + ".proj.w", {c, c});
    make_zeros(prefix + ".proj.b", {c});
    make_ones(prefix + ".ln2.g", {c});
    make_zeros(prefix + ".ln2.b", {c});
    make_weight(prefix + ".mlp.w1", {c, rc});
    make_zeros(prefix + ".mlp.b1", {rc});
    make_weight(prefix + ".mlp.w2", {rc, c});
    make_zeros(prefix + ".mlp.b2", {c});
}

template <typename T>
URSCTModel<T>::URSCTModel(const ModelConfig& cfg, Rng& init_rng) : cfg_(cfg) {
    cfg_.validate();
    init_rng_ = &init_rng;
    const std::int64_t C = cfg_.embed_dim;
    const std::int64_t P = cfg_.patch_size;
    auto stage = [&](const std::string& prefix, std::int64_t c) {
        for (std::int64_t b = 0; b < cfg_.layer_depth; ++b) {
            build_block_params(prefix + ".b" + std::to_string(b), c);
        }
    };
    make_weight("embed.w", {C, 3, P, P});
    make_zeros("embed.b", {C});
    stage("enc0", C);
    make_weight("down0.w", {4 * C, 2 * C});
    stage("enc1", 2 * C);
    make_weight("down1.w", {8 * C, 4 * C});
    stage("enc2", 4 * C);
    make_weight("down2.w", {16 * C, 8 * C});
    stage("bot", 8 * C);
    make_weight("up3.w", {8 * C, 16 * C});
    make_weight("skip2.w", {8 * C, 4 * C});
    make_zeros("skip2.b", {4 * C});
    stage("dec2", 4 * C);
    make_weight("up2.w", {4 * C, 8 * C});
    make_weight("skip1.w", {4 * C, 2 * C});
    make_zeros("skip1.b", {2 * C});
    stage("dec1", 2 * C);
    make_weight("up1.w", {2 * C, 4 * C});
    make_weight("skip0.w", {2 * C, C});
    make_zeros("skip0.b", {C});
    stage("dec0", C);
    make_weight("up0.w", {C, P * P * C});  // final expansion rebuilds pixel resolution at C channels
    make_weight("head.w", {3, C, 3, 3});
    make_zeros("head.b", {3});
    init_rng_ = nullptr;
}

template <typename T>
Tensor<T>& URSCTModel<T>::param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter " + name);
    return params_[it->second].second;
}

template <typename T>
const Tensor<T>& URSCTModel<T>::param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter " + name);
    return params_[it->second].second;
}

template <typename T>
std::int64_t URSCTModel<T>::num_scalars() const {
    std::int64_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
}

template <typename T>
void URSCTModel<T>::zero_grads() {
    for (auto& [_, t] : params_) t.zero_grad();
}

// --- forward pieces ---------------------------------------------------------------

template <typename T>
Tensor<T> URSCTModel<T>::linear(const Tensor<T>& x, const std::string& wname,
                                const std::optional<std::string>& bname) const {
    auto y = matmul(x, param(wname));
    if (bname) y = add(y, param(*bname));
    return y;
}

template <typename T>
Tensor<T> URSCTModel<T>::downsample(const Tensor<T>& z, const std::string& wname) const {
    const std::int64_t B = z.dim(0), h = z.dim(1), w = z.dim(2), c = z.dim(3);
    if (h % 2 != 0 || w % 2 != 0) throw DimensionError("downsample: spatial dims must be even");
    auto r = reshape(z, {B, h / 2, 2, w / 2, 2, c});
    auto p = permute(r, {0, 1, 3, 2, 4, 5});
    auto merged = reshape(p, {B, h / 2, w / 2, 4 * c});
    return matmul(merged, param(wname));
}

template <typename T>
Tensor<T> URSCTModel<T>::upsample(const Tensor<T>& z, const std::string& wname,
                                  bool final_stage) const {
    const std::int64_t B = z.dim(0), h = z.dim(1), w = z.dim(2);
    // Inner stages double the grid; the last one undoes the patch embedding.
    const std::int64_t f = final_stage ? cfg_.patch_size : 2;
    auto t = matmul(z, param(wname));
    const std::int64_t e = t.dim(3);
    if (e % (f * f) != 0) {
        throw DimensionError("upsample: expanded channels must split into the pixel grid");
    }
    auto r = reshape(t, {B, h, w, f, f, e / (f * f)});
    auto p = permute(r, {0, 1, 3, 2, 4, 5});
    return reshape(p, {B, f * h, f * w, e / (f * f)});
}

template <typename T>
Tensor<T> URSCTModel<T>::skip_fuse(const Tensor<T>& dec, const Tensor<T>& enc,
                                   const std::string& prefix, bool training, Rng* rng) const {
    if (dec.shape() != enc.shape()) {
        throw DimensionError("skip_fuse: decoder " + shape_str(dec.shape()) + " vs encoder " +
                             shape_str(enc.shape()));
    }
    Tensor<T> enc2 = enc;
    const double p = cfg_.skip_drop_ratio;
    if (training && p > 0.0) {
        if (p >= 1.0) {
            enc2 = ursct::scale(enc, T(0));
        } else {
            auto m = Tensor<T>::zeros(enc.shape());
            auto* mv = m.payload()->values.data();
            const T keep_scale = T(1.0 / (1.0 - p));
            for (std::int64_t i = 0; i < m.numel(); ++i) {
                mv[i] = rng->uniform() < p ? T(0) : keep_scale;
            }
            enc2 = mul(enc, m);
        }
    }
    auto cat = concat(dec, enc2, -1);
    return linear(cat, prefix + ".w", prefix + ".b");
}

template <typename T>
const Tensor<T>& URSCTModel<T>::mask_for(std::int64_t h, std::int64_t w) const {
    auto key = std::make_pair(h, w);
    auto it = mask_cache_.find(key);
    if (it == mask_cache_.end()) {
        it = mask_cache_.emplace(key, build_attn_mask<T>(h, w, cfg_.window, cfg_.window / 2)).first;
    }
    return it->second;
}

template <typename T>
Tensor<T> URSCTModel<T>::run_block(const std::string& prefix, const Tensor<T>& z, std::int64_t c,
                                   bool shifted, bool masked) const {
    const std::int64_t B = z.dim(0), h = z.dim(1), w = z.dim(2);
    const std::int64_t t = cfg_.window, U = cfg_.heads, t2 = t * t, cu = c / U;
    const std::int64_t s = t / 2;

    auto y = layer_norm(z, param(prefix + ".ln1.g"), param(prefix + ".ln1.b"), T(1e-5));
    if (shifted && s > 0) y = roll2(y, -s, -s, 1, 2);
    auto win = window_partition(y, t);  // [Nw, T2, c]
    const std::int64_t nw = win.dim(0);

    auto split_heads = [&](const Tensor<T>& tok) {
        auto r = reshape(tok, {nw, t2, U, cu});
        return permute(r, {0, 2, 1, 3});  // [Nw, U, T2, cu]
    };

    Tensor<T> q, k, v, vtok;
    switch (cfg_.variant) {
        case Variant::origin:
        case Variant::conv_type2: {
            auto qkv = linear(win, prefix + ".qkv.w", prefix + ".qkv.b");  // [Nw,T2,3c]
            q = split_heads(slice(qkv, -1, 0, c));
            k = split_heads(slice(qkv, -1, c, c));
            vtok = slice(qkv, -1, 2 * c, c);
            v = split_heads(vtok);
            break;
        }
        case Variant::conv_type1: {
            auto spat = permute(reshape(win, {nw, t, t, c}), {0, 3, 1, 2});  // [Nw,c,T,T]
            auto t1 = conv2d(spat, param(prefix + ".qkv.cw"),
                             std::optional<Tensor<T>>(param(prefix + ".qkv.cb")), 1, 0, 1);
            auto t2m = conv2d(t1, param(prefix + ".qkv.dw"),
                              std::optional<Tensor<T>>(param(prefix + ".qkv.db")), 1, 1,
                              static_cast<int>(3 * c));
            auto tok = reshape(permute(t2m, {0, 2, 3, 1}), {nw, t2, 3 * c});
            q = split_heads(slice(tok, -1, 0, c));
            k = split_heads(slice(tok, -1, c, c));
            v = split_heads(slice(tok, -1, 2 * c, c));
            break;
        }
    }

    const T scale_v = static_cast<T>(cfg_.attn_scale ? *cfg_.attn_scale
                                                     : std::sqrt(static_cast<double>(c)));
    auto bias = relative_position_bias(param(prefix + ".bias_table"), t);
    std::optional<Tensor<T>> mask;
    if (shifted && masked && s > 0) mask = mask_for(h, w);
    auto att = window_attention(q, k, v, bias, mask, scale_v);  // [Nw,T2,c]

    if (cfg_.variant == Variant::conv_type2) {
        auto vs = permute(reshape(vtok, {nw, t, t, c}), {0, 3, 1, 2});
        auto d = conv2d(vs, param(prefix + ".qkv.dw"),
                        std::optional<Tensor<T>>(param(prefix + ".qkv.db")), 1, 1,
                        static_cast<int>(c));
        att = add(att, reshape(permute(d, {0, 2, 3, 1}), {nw, t2, c}));
    }

    auto proj = linear(att, prefix + ".proj.w", prefix + ".proj.b");
    auto merged = window_merge(proj, B, h, w, t);
    if (shifted && s > 0) merged = roll2(merged, s, s, 1, 2);
    auto z1 = add(z, merged);

    auto y2 = layer_norm(z1, param(prefix + ".ln2.g"), param(prefix + ".ln2.b"), T(1e-5));
    auto hmid = gelu(linear(y2, prefix + ".mlp.w1", prefix + ".mlp.b1"));
    auto mlp = linear(hmid, prefix + ".mlp.w2", prefix + ".mlp.b2");
    return add(z1, mlp);
}

template <typename T>
Tensor<T> URSCTModel<T>::run_stage(const std::string& prefix, Tensor<T> z, std::int64_t c,
                                   bool masked) const {
    for (std::int64_t b = 0; b < cfg_.layer_depth; ++b) {
        z = run_block(prefix + ".b" + std::to_string(b), z, c, b % 2 == 1, masked);
    }
    return z;
}

template <typename T>
Tensor<T> URSCTModel<T>::forward(const Tensor<T>& image, bool training, Rng* rng) const {
    if (image.ndim() != 4 || image.dim(1) != 3) {
        throw DimensionError("forward: expected [B,3,H,W], got " + shape_str(image.shape()));
    }
    if (image.dim(2) != cfg_.image_h || image.dim(3) != cfg_.image_w) {
        throw ConfigError("forward: input " + std::to_string(image.dim(2)) + "x" +
                          std::to_string(image.dim(3)) + " does not match configured " +
                          std::to_string(cfg_.image_h) + "x" + std::to_string(cfg_.image_w));
    }
    if (training && cfg_.skip_drop_ratio > 0.0 && rng == nullptr) {
        throw ConfigError("forward: training mode needs an RNG for skip-path dropout");
    }
    const std::int64_t C = cfg_.embed_dim;
    const bool enc_masked = !cfg_.mask_decoder_only;

    auto x = conv2d(image, param("embed.w"), std::optional<Tensor<T>>(param("embed.b")),
                    static_cast<int>(cfg_.patch_size), 0, 1);
    x = permute(x, {0, 2, 3, 1});  // [B,h,w,C]

    auto e0 = run_stage("enc0", x, C, enc_masked);
    auto e1 = run_stage("enc1", downsample(e0, "down0.w"), 2 * C, enc_masked);
    auto e2 = run_stage("enc2", downsample(e1, "down1.w"), 4 * C, enc_masked);
    auto b = run_stage("bot", downsample(e2, "down2.w"), 8 * C, enc_masked);

    auto u = upsample(b, "up3.w", false);
    u = run_stage("dec2", skip_fuse(u, e2, "skip2", training, rng), 4 * C, true);
    u = upsample(u, "up2.w", false);
    u = run_stage("dec1", skip_fuse(u, e1, "skip1", training, rng), 2 * C, true);
    u = upsample(u, "up1.w", false);
    u = run_stage("dec0", skip_fuse(u, e0, "skip0", training, rng), C, true);
    u = upsample(u, "up0.w", true);  // to full H x W, keeping C channels

    auto nchw = permute(u, {0, 3, 1, 2});
    auto out = conv2d(nchw, param("head.w"), std::optional<Tensor<T>>(param("head.b")), 1, 1, 1);
    if (!training) out = clamp(out, std::optional<T>(T(0)), std::optional<T>(T(1)));
    return out;
}

// --- instantiations ------------------------------------------------------------

#define URSCT_INSTANTIATE_MODEL(T)                                                               \
    template Tensor<T> window_partition<T>(const Tensor<T>&, std::int64_t);                      \
    template Tensor<T> window_merge<T>(const Tensor<T>&, std::int64_t, std::int64_t,             \
                                       std::int64_t, std::int64_t);                              \
    template Tensor<T> build_attn_mask<T>(std::int64_t, std::int64_t, std::int64_t,              \
                                          std::int64_t);                                         \
    template Tensor<T> relative_position_bias<T>(const Tensor<T>&, std::int64_t);                \
    template Tensor<T> window_attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                           const Tensor<T>&, const std::optional<Tensor<T>>&,    \
                                           T);                                                   \
    template class URSCTModel<T>;

URSCT_INSTANTIATE_MODEL(float)
URSCT_INSTANTIATE_MODEL(double)

#undef URSCT_INSTANTIATE_MODEL

}  // namespace ursct
