#pragma once

// Cross-model alignment: the projection mapping prompt states into the
// embedding model's space, and the transfer adapter composed after it when
// porting to a new backbone. Bare matrices, no bias terms.

#include <cmath>
#include <string>

#include "pembed/errors.hpp"
#include "pembed/rng.hpp"
#include "pembed/tensor.hpp"

namespace pembed {

// W_proj [d_e x d_p], scaled-normal init
template <typename S>
TensorT<S> init_w_proj(int d_e, int d_p, std::uint64_t seed) {
    if (d_e < 1 || d_p < 1) throw config_error("w_proj: dims must be >= 1");
    TensorT<S> w(d_e, d_p);
    Rng rng(seed);
    const double std = 1.0 / std::sqrt(static_cast<double>(d_p));
    for (auto& v : *w.data) v = static_cast<S>(rng.normal() * std);
    return w;
}

// W_adp [d_e' x d_e], truncated/zero-padded identity so transfer starts near
// the identity map when the dimensions are close.
template <typename S>
TensorT<S> init_w_adp(int d_e_prime, int d_e) {
    if (d_e_prime < 1 || d_e < 1) throw config_error("w_adp: dims must be >= 1");
    TensorT<S> w(d_e_prime, d_e);
    for (int i = 0; i < d_e_prime && i < d_e; ++i) w.at(i, i) = S(1);
    return w;
}

// Rowwise p~ = W_proj * p, i.e. P~ = P * W_proj^T.
template <typename S>
TensorT<S> project(const TensorT<S>& w_proj, const TensorT<S>& prompt_states) {
    if (prompt_states.cols != w_proj.cols) {
        throw dim_error("project: prompts " + prompt_states.shape_str() + " vs W_proj " +
                        w_proj.shape_str());
    }
    return matmul(prompt_states, transpose(w_proj));
}

// Rowwise p~' = W_adp * W_proj * p.
template <typename S>
TensorT<S> adapt(const TensorT<S>& w_adp, const TensorT<S>& w_proj, const TensorT<S>& prompt_states) {
    if (w_adp.cols != w_proj.rows) {
        throw dim_error("adapt: W_adp " + w_adp.shape_str() + " vs W_proj " + w_proj.shape_str());
    }
    return matmul(project(w_proj, prompt_states), transpose(w_adp));
}

}  // namespace pembed
