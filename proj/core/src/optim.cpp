#include "ursct/optim.hpp"

#include <cmath>
#include <numbers>

#include "ursct/errors.hpp"

namespace ursct {

double lr_schedule(double e, double epochs, double warmup, double lr0, double min_lr) {
    if (e < warmup) return lr0 * e / warmup;
    if (e == warmup || epochs <= warmup) return lr0;  // exact lr0 at the boundary
    const double frac = (e - warmup) / (epochs - warmup);
    return min_lr + 0.5 * (lr0 - min_lr) * (1.0 + std::cos(std::numbers::pi * frac));
}

template <typename T>
Adam<T>::Adam(std::vector<std::pair<std::string, Tensor<T>>> params, AdamConfig cfg) : cfg_(cfg) {
    slots_.reserve(params.size());
    for (auto& [name, p] : params) {
        const auto n = static_cast<std::size_t>(p.numel());
        slots_.push_back(Slot{name, std::move(p), std::vector<T>(n, T(0)), std::vector<T>(n, T(0))});
    }
}

template <typename T>
void Adam<T>::step(double lr) {
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (auto& slot : slots_) {
        auto payload = slot.param.payload();
        if (payload->grad.empty()) {
            throw Error("parameter '" + slot.name + "' received no gradient");
        }
        auto& values = payload->values;
        auto& grad = payload->grad;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = static_cast<double>(grad[i]);
            if (!std::isfinite(g)) {
                throw NumericError("non-finite gradient in parameter '" + slot.name + "'");
            }
            const double m = b1 * static_cast<double>(slot.m[i]) + (1.0 - b1) * g;
            const double v = b2 * static_cast<double>(slot.v[i]) + (1.0 - b2) * g * g;
            slot.m[i] = static_cast<T>(m);
            slot.v[i] = static_cast<T>(v);
            const double mhat = static_cast<double>(slot.m[i]) / c1;
            const double vhat = static_cast<double>(slot.v[i]) / c2;
            values[i] = static_cast<T>(static_cast<double>(values[i]) -
                                       lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
    }
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Adam<T>::moment_tensors() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    out.reserve(2 * slots_.size());
    for (const auto& slot : slots_) {
        out.emplace_back(slot.name + ".m", Tensor<T>::from(slot.param.shape(), slot.m));
        out.emplace_back(slot.name + ".v", Tensor<T>::from(slot.param.shape(), slot.v));
    }
    return out;
}

template <typename T>
void Adam<T>::load_moments(const std::vector<std::pair<std::string, Tensor<T>>>& moments) {
    for (const auto& [name, tensor] : moments) {
        bool found = false;
        for (auto& slot : slots_) {
            std::vector<T>* dst = nullptr;
            if (name == slot.name + ".m") dst = &slot.m;
            if (name == slot.name + ".v") dst = &slot.v;
            if (!dst) continue;
            if (tensor.numel() != slot.param.numel()) {
                throw FormatError("moment '" + name + "' has wrong size");
            }
            dst->assign(tensor.data().begin(), tensor.data().end());
            found = true;
            break;
        }
        if (!found) throw FormatError("moment '" + name + "' matches no parameter");
    }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace ursct
