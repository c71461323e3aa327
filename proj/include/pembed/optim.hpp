#pragma once

// Decoupled weight-decay adaptive optimizer (AdamW shape, decay 0) applied to
// the masked tensors only, plus the warmup learning-rate schedule.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pembed/config.hpp"
#include "pembed/system.hpp"
#include "pembed/tensor.hpp"

namespace pembed {

// Linear ramp 0 -> lr over ceil(warmup * total) steps, then constant (or cosine
// decay to zero when configured).
inline double lr_at(long step, const RunConfig& cfg) {
    if (step < 0 || step > cfg.total_steps) {
        throw contract_error("lr_at: step " + std::to_string(step) + " outside [0, " +
                             std::to_string(cfg.total_steps) + "]");
    }
    const long warm = static_cast<long>(std::ceil(cfg.warmup_ratio * cfg.total_steps));
    if (warm > 0 && step < warm) return cfg.lr * static_cast<double>(step) / static_cast<double>(warm);
    if (cfg.lr_schedule == "cosine") {
        const long span = cfg.total_steps - warm;
        if (span <= 0) return cfg.lr;
        const double t = static_cast<double>(step - warm) / static_cast<double>(span);
        return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
    }
    return cfg.lr;
}

template <typename S>
class AdamW {
public:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    // One update from accumulated gradients (divided by accum count); tensors
    // whose slot never received a gradient are untouched.
    void step(SystemT<S>& sys, double lr, int accum_count) {
        sys.for_each_tensor([&](const std::string& name, TensorT<S>& t) {
            if (!t.slot || !t.slot->allocated) return;
            auto& st = states_[name];
            if (st.m.empty()) {
                st.m.assign(t.numel(), 0.0);
                st.v.assign(t.numel(), 0.0);
            }
            if (t.slot->grad.size() != t.numel()) {
                throw contract_error("optimizer: gradient size mismatch for " + name);
            }
            ++st.t;
            const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(st.t));
            const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(st.t));
            auto& data = *t.data;
            for (std::size_t i = 0; i < data.size(); ++i) {
                const double g = static_cast<double>(t.slot->grad[i]) / accum_count;
                st.m[i] = kBeta1 * st.m[i] + (1.0 - kBeta1) * g;
                st.v[i] = kBeta2 * st.v[i] + (1.0 - kBeta2) * g * g;
                const double mh = st.m[i] / bc1;
                const double vh = st.v[i] / bc2;
                data[i] = static_cast<S>(static_cast<double>(data[i]) - lr * mh / (std::sqrt(vh) + kEps));
            }
        });
    }

private:
    struct State {
        std::vector<double> m, v;
        long t = 0;
    };
    std::map<std::string, State> states_;
};

}  // namespace pembed
