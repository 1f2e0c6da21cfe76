#include "ursct/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "ursct/errors.hpp"

namespace ursct {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::int64_t get_i64(const ConfigMap& map, const std::string& key, std::int64_t fallback) {
    auto it = map.find(key);
    if (it == map.end()) return fallback;
    try {
        std::size_t pos = 0;
        const auto v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' needs an integer, got '" + it->second + "'");
    }
}

std::uint64_t get_u64(const ConfigMap& map, const std::string& key, std::uint64_t fallback) {
    auto it = map.find(key);
    if (it == map.end()) return fallback;
    try {
        std::size_t pos = 0;
        const auto v = std::stoull(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' needs a non-negative integer, got '" + it->second + "'");
    }
}

double get_f64(const ConfigMap& map, const std::string& key, double fallback) {
    auto it = map.find(key);
    if (it == map.end()) return fallback;
    try {
        std::size_t pos = 0;
        const auto v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' needs a number, got '" + it->second + "'");
    }
}

bool get_bool(const ConfigMap& map, const std::string& key, bool fallback) {
    auto it = map.find(key);
    if (it == map.end()) return fallback;
    const auto& v = it->second;
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("key '" + key + "' needs true|false, got '" + v + "'");
}

std::string get_str(const ConfigMap& map, const std::string& key, const std::string& fallback) {
    auto it = map.find(key);
    return it == map.end() ? fallback : it->second;
}

std::string fmt_f64(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "seed",
        "model.image_h", "model.image_w", "model.patch_size", "model.embed_dim",
        "model.window_size", "model.layer_depth", "model.heads", "model.mlp_ratio",
        "model.skip_drop_ratio", "model.attn_scale", "model.variant", "model.mask_decoder_only",
        "loss.w1", "loss.w2", "loss.w3", "loss.epsilon", "loss.msssim_levels",
        "loss.gradient_op", "loss.use_gradient", "loss.use_msssim",
        "train.batch_size", "train.epochs", "train.warmup_epochs", "train.checkpoint_every",
        "train.lr0", "train.min_lr", "train.beta1", "train.beta2", "train.adam_eps",
        "train.schedule", "train.lr_step", "train.hflip",
        "data.raw_dir", "data.ref_dir", "data.out_dir",
    };
    return keys;
}

void check_known(const ConfigMap& map) {
    for (const auto& [key, _] : map) {
        if (!known_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
    }
}

}  // namespace

ConfigMap parse_config_text(const std::string& text, const std::string& origin) {
    ConfigMap map;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        const auto key = trim(stripped.substr(0, eq));
        const auto value = trim(stripped.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        }
        map[key] = value;
    }
    return map;
}

ConfigMap parse_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config '" + path + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config_text(text.str(), path);
}

void apply_overrides(ConfigMap& map, const std::vector<std::string>& sets) {
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("--set expects key=value, got '" + s + "'");
        }
        map[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
    }
}

void apply_seed_env(ConfigMap& map) {
    if (map.count("seed")) return;
    if (const char* env = std::getenv("URSCT_SEED")) map["seed"] = env;
}

ModelConfig make_model_config(const ConfigMap& map) {
    ModelConfig model;
    model.image_h = get_i64(map, "model.image_h", model.image_h);
    model.image_w = get_i64(map, "model.image_w", model.image_w);
    model.patch_size = get_i64(map, "model.patch_size", model.patch_size);
    model.embed_dim = get_i64(map, "model.embed_dim", model.embed_dim);
    model.window = get_i64(map, "model.window_size", model.window);
    model.layer_depth = get_i64(map, "model.layer_depth", model.layer_depth);
    model.heads = get_i64(map, "model.heads", model.heads);
    model.mlp_ratio = get_i64(map, "model.mlp_ratio", model.mlp_ratio);
    model.skip_drop_ratio = get_f64(map, "model.skip_drop_ratio", model.skip_drop_ratio);
    const auto scale = get_str(map, "model.attn_scale", "auto");
    if (scale == "auto") {
        model.attn_scale.reset();
    } else {
        ConfigMap one{{"model.attn_scale", scale}};
        model.attn_scale = get_f64(one, "model.attn_scale", 0.0);
    }
    model.variant = variant_from_string(get_str(map, "model.variant", to_string(model.variant)));
    model.mask_decoder_only = get_bool(map, "model.mask_decoder_only", model.mask_decoder_only);
    return model;
}

LossConfig make_loss_config(const ConfigMap& map) {
    LossConfig loss;
    loss.weights.w1 = get_f64(map, "loss.w1", loss.weights.w1);
    loss.weights.w2 = get_f64(map, "loss.w2", loss.weights.w2);
    loss.weights.w3 = get_f64(map, "loss.w3", loss.weights.w3);
    loss.weights.epsilon = get_f64(map, "loss.epsilon", loss.weights.epsilon);
    loss.msssim_levels = static_cast<int>(get_i64(map, "loss.msssim_levels", loss.msssim_levels));
    loss.gradient_op =
        gradient_op_from_string(get_str(map, "loss.gradient_op", to_string(loss.gradient_op)));
    loss.use_gradient = get_bool(map, "loss.use_gradient", loss.use_gradient);
    loss.use_msssim = get_bool(map, "loss.use_msssim", loss.use_msssim);
    return loss;
}

TrainConfig make_train_config(const ConfigMap& map) {
    check_known(map);
    TrainConfig cfg;
    cfg.model = make_model_config(map);
    cfg.loss = make_loss_config(map);
    cfg.adam.lr0 = get_f64(map, "train.lr0", cfg.adam.lr0);
    cfg.adam.min_lr = get_f64(map, "train.min_lr", cfg.adam.min_lr);
    cfg.adam.beta1 = get_f64(map, "train.beta1", cfg.adam.beta1);
    cfg.adam.beta2 = get_f64(map, "train.beta2", cfg.adam.beta2);
    cfg.adam.eps = get_f64(map, "train.adam_eps", cfg.adam.eps);
    cfg.batch_size = get_i64(map, "train.batch_size", cfg.batch_size);
    cfg.epochs = get_i64(map, "train.epochs", cfg.epochs);
    cfg.warmup_epochs = get_i64(map, "train.warmup_epochs", cfg.warmup_epochs);
    cfg.checkpoint_every = get_i64(map, "train.checkpoint_every", cfg.checkpoint_every);
    cfg.seed = get_u64(map, "seed", cfg.seed);
    cfg.schedule = schedule_from_string(get_str(map, "train.schedule", to_string(cfg.schedule)));
    cfg.lr_step = lr_step_from_string(get_str(map, "train.lr_step", to_string(cfg.lr_step)));
    cfg.hflip = get_bool(map, "train.hflip", cfg.hflip);
    cfg.raw_dir = get_str(map, "data.raw_dir", "");
    cfg.ref_dir = get_str(map, "data.ref_dir", "");
    cfg.out_dir = get_str(map, "data.out_dir", "");
    return cfg;
}

ConfigMap snapshot_config(const TrainConfig& cfg) {
    ConfigMap map;
    map["seed"] = std::to_string(cfg.seed);
    map["model.image_h"] = std::to_string(cfg.model.image_h);
    map["model.image_w"] = std::to_string(cfg.model.image_w);
    map["model.patch_size"] = std::to_string(cfg.model.patch_size);
    map["model.embed_dim"] = std::to_string(cfg.model.embed_dim);
    map["model.window_size"] = std::to_string(cfg.model.window);
    map["model.layer_depth"] = std::to_string(cfg.model.layer_depth);
    map["model.heads"] = std::to_string(cfg.model.heads);
    map["model.mlp_ratio"] = std::to_string(cfg.model.mlp_ratio);
    map["model.skip_drop_ratio"] = fmt_f64(cfg.model.skip_drop_ratio);
    map["model.attn_scale"] = cfg.model.attn_scale ? fmt_f64(*cfg.model.attn_scale) : "auto";
    map["model.variant"] = to_string(cfg.model.variant);
    map["model.mask_decoder_only"] = cfg.model.mask_decoder_only ? "true" : "false";
    map["loss.w1"] = fmt_f64(cfg.loss.weights.w1);
    map["loss.w2"] = fmt_f64(cfg.loss.weights.w2);
    map["loss.w3"] = fmt_f64(cfg.loss.weights.w3);
    map["loss.epsilon"] = fmt_f64(cfg.loss.weights.epsilon);
    map["loss.msssim_levels"] = std::to_string(cfg.loss.msssim_levels);
    map["loss.gradient_op"] = to_string(cfg.loss.gradient_op);
    map["loss.use_gradient"] = cfg.loss.use_gradient ? "true" : "false";
    map["loss.use_msssim"] = cfg.loss.use_msssim ? "true" : "false";
    map["train.batch_size"] = std::to_string(cfg.batch_size);
    map["train.epochs"] = std::to_string(cfg.epochs);
    map["train.warmup_epochs"] = std::to_string(cfg.warmup_epochs);
    map["train.checkpoint_every"] = std::to_string(cfg.checkpoint_every);
    map["train.lr0"] = fmt_f64(cfg.adam.lr0);
    map["train.min_lr"] = fmt_f64(cfg.adam.min_lr);
    map["train.beta1"] = fmt_f64(cfg.adam.beta1);
    map["train.beta2"] = fmt_f64(cfg.adam.beta2);
    map["train.adam_eps"] = fmt_f64(cfg.adam.eps);
    map["train.schedule"] = to_string(cfg.schedule);
    map["train.lr_step"] = to_string(cfg.lr_step);
    map["train.hflip"] = cfg.hflip ? "true" : "false";
    return map;
}

ConfigMap effective_config(const TrainConfig& cfg) {
    auto map = snapshot_config(cfg);
    map["data.raw_dir"] = cfg.raw_dir;
    map["data.ref_dir"] = cfg.ref_dir;
    map["data.out_dir"] = cfg.out_dir;
    return map;
}

std::string render_config(const ConfigMap& map) {
    std::string out;
    for (const auto& [k, v] : map) out += k + " = " + v + "\n";
    return out;
}

}  // namespace ursct
