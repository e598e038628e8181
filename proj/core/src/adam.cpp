#include "cbt/adam.hpp"

#include <cmath>

#include "cbt/error.hpp"

namespace cbt {

AdamState AdamState::init(const AdamConfig& cfg, const ParameterVector& params) {
    if (cfg.lr <= 0.0 || cfg.eps <= 0.0) throw ConfigError("adam: lr and eps must be positive");
    if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0) {
        throw ConfigError("adam: betas must lie in [0, 1)");
    }
    AdamState st;
    st.cfg = cfg;
    st.m = params.zeros_like();
    st.v = params.zeros_like();
    return st;
}

void adam_step(AdamState& state, ParameterVector& params, const ParameterVector& grads) {
    params.check_same_layout(grads, "adam_step grads");
    params.check_same_layout(state.m, "adam_step state");
    grads.check_finite("adam_step gradient");

    state.step_count += 1;
    const double b1 = state.cfg.beta1;
    const double b2 = state.cfg.beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));

    for (int e = 0; e < params.entry_count(); ++e) {
        Tensor& p = params.tensor(e);
        Tensor& m = state.m.tensor(e);
        Tensor& v = state.v.tensor(e);
        const Tensor& g = grads.tensor(e);
        for (std::int64_t i = 0; i < p.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = m[i] / corr1;
            const double vhat = v[i] / corr2;
            p[i] -= state.cfg.lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
        }
    }
    params.check_finite("adam_step parameters");
}

}  // namespace cbt
